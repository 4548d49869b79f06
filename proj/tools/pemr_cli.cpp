#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pemr/error.hpp"
#include "pemr/eval.hpp"
#include "pemr/matrix_io.hpp"
#include "pemr/synth.hpp"
#include "pemr/trainer.hpp"
#include "pemr/wav.hpp"

using namespace pemr;
namespace fs = std::filesystem;

namespace {

trainer::Trainer open_checkpoint(const std::string& path) {
  return trainer::trainer_from_checkpoint(trainer::load_checkpoint(path));
}

struct LabeledSet {
  std::vector<dsp::Waveform> clips;
  std::vector<synth::LabeledFile> rows;
};

LabeledSet read_labeled(const std::string& dir) {
  LabeledSet set;
  set.rows = synth::read_labels(dir);
  if (set.rows.empty()) throw IoError(dir + "/labels.csv lists no clips");
  for (const auto& r : set.rows) set.clips.push_back(dsp::read_wav(r.path));
  return set;
}

// Multi-hot tags when any row lists several labels, one-hot classes otherwise.
eval::ProbeTargets targets_for(const std::vector<synth::LabeledFile>& rows, std::span<const std::size_t> idx,
                               bool multi_label, std::size_t outputs) {
  if (multi_label) {
    Tensor y = Tensor::matrix(idx.size(), outputs);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int l : rows[idx[i]].labels) y.at(i, static_cast<std::size_t>(l)) = 1.0;
    return eval::ProbeTargets::from_tags(std::move(y));
  }
  std::vector<int> classes;
  for (std::size_t i : idx) classes.push_back(rows[i].labels.front());
  return eval::ProbeTargets::from_classes(classes, outputs);
}

struct ProbeResult {
  eval::TagMetrics metrics;
  double accuracy = -1.0;  // multi-class only
  std::size_t train = 0, test = 0;
};

ProbeResult run_probe(trainer::Trainer& t, const LabeledSet& data, const eval::ProbeConfig& pc, double fraction) {
  std::vector<std::size_t> train, test;
  bool multi_label = false;
  std::size_t outputs = 0;
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    const auto& r = data.rows[i];
    if (r.split == "train") {
      train.push_back(i);
    } else if (r.split == "test") {
      test.push_back(i);
    }
    multi_label = multi_label || r.labels.size() > 1;
    for (int l : r.labels) {
      if (l < 0) throw ConfigError("negative label in labels.csv");
      outputs = std::max(outputs, static_cast<std::size_t>(l) + 1);
    }
  }
  if (train.empty() || test.empty()) throw ConfigError("labels.csv needs rows in both the train and test splits");
  const auto keep = eval::label_fraction_subsample(train.size(), fraction, pc.seed);
  std::vector<std::size_t> subset;
  for (std::size_t k : keep) subset.push_back(train[k]);

  const auto& spec = t.config().spectrogram;
  const Tensor features = eval::embed_clips(t.model().encoder, spec, data.clips);
  const Tensor x_train = eval::take_rows(features, subset), x_test = eval::take_rows(features, test);
  const auto y_train = targets_for(data.rows, subset, multi_label, outputs);
  const auto y_test = targets_for(data.rows, test, multi_label, outputs);
  const auto probe = eval::train_probe(x_train, y_train, pc);
  ProbeResult res;
  res.metrics = eval::evaluate_probe(probe, x_test, y_test);
  if (!multi_label) res.accuracy = eval::accuracy(probe, x_test, y_test);
  res.train = subset.size();
  res.test = test.size();
  return res;
}

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad ratio '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("no ratios given");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised music representations with attention-guided positive and negative masks"};
  app.require_subcommand(1);

  // spectrogram
  auto* spec_cmd = app.add_subcommand("spectrogram", "Log-mel frames of a WAV file as a matrix file");
  std::string spec_in, spec_out, spec_config;
  spec_cmd->add_option("in", spec_in, "Input mono 16-bit WAV")->required();
  spec_cmd->add_option("out", spec_out, "Output matrix file [L, n_mels]")->required();
  spec_cmd->add_option("--config", spec_config, "Config whose spectrogram settings to use");

  // config
  auto* config_cmd = app.add_subcommand("config", "Print a complete default config");
  bool config_toy = false;
  config_cmd->add_flag("--toy", config_toy, "Small model used by the tests");

  // pretrain
  auto* pre_cmd = app.add_subcommand("pretrain", "Self-supervised pre-training over a WAV directory");
  std::string pre_config, pre_data, pre_out, pre_resume, pre_dump;
  std::optional<std::uint64_t> pre_seed, pre_max_steps;
  std::optional<double> pre_ratio;
  pre_cmd->add_option("--config", pre_config, "key=value config file (see `pemr config`)")->required();
  pre_cmd->add_option("--data", pre_data, "Directory of *.wav clips")->required();
  pre_cmd->add_option("--out", pre_out, "Directory for loss.csv and checkpoints")->required();
  pre_cmd->add_option("--seed", pre_seed, "Override the config seed");
  pre_cmd->add_option("--mask-ratio", pre_ratio, "Fraction of frames dropped from the positive view");
  pre_cmd->add_option("--resume", pre_resume, "Checkpoint to continue from");
  pre_cmd->add_option("--max-steps", pre_max_steps, "Stop after this global step");
  pre_cmd->add_option("--dump-masks", pre_dump, "Directory for per-step [B, 2, L] score/mask matrices");

  // embed
  auto* embed_cmd = app.add_subcommand("embed", "512-d representations of WAV files");
  std::vector<std::string> embed_args;
  embed_cmd->add_option("args", embed_args, "<checkpoint> <in.wav ...> <out>")->required()->expected(3, -1);

  // probe
  auto* probe_cmd = app.add_subcommand("probe", "Linear (or MLP) probe on frozen representations");
  std::string probe_ckpt, probe_data;
  bool probe_mlp = false;
  double probe_fraction = 1.0;
  eval::ProbeConfig probe_cfg;
  probe_cmd->add_option("--checkpoint", probe_ckpt)->required();
  probe_cmd->add_option("--data", probe_data, "Directory with labels.csv (file,label,split)")->required();
  probe_cmd->add_flag("--mlp", probe_mlp, "One hidden ReLU layer instead of a linear probe");
  probe_cmd->add_option("--label-fraction", probe_fraction, "Fraction of training labels used")
      ->check(CLI::Range(0.0, 1.0));
  probe_cmd->add_option("--epochs", probe_cfg.epochs);
  probe_cmd->add_option("--seed", probe_cfg.seed);

  // retrieve
  auto* ret_cmd = app.add_subcommand("retrieve", "Cover retrieval: MAP, Precision@10, MR1");
  std::string ret_ckpt, ret_queries, ret_refs;
  bool ret_cosine = false;
  ret_cmd->add_option("--checkpoint", ret_ckpt)->required();
  ret_cmd->add_option("--queries", ret_queries, "Directory with labels.csv giving clique ids")->required();
  ret_cmd->add_option("--refs", ret_refs, "Directory with labels.csv giving clique ids")->required();
  ret_cmd->add_flag("--cosine", ret_cosine, "Cosine similarity instead of dot product");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Pre-train and probe once per mask ratio");
  std::string sweep_config, sweep_data, sweep_out, sweep_ratios = "0.01,0.1,0.3,0.5";
  sweep_cmd->add_option("--config", sweep_config)->required();
  sweep_cmd->add_option("--data", sweep_data, "Directory with labels.csv (file,label,split)")->required();
  sweep_cmd->add_option("--out", sweep_out, "CSV file for the sweep rows")->required();
  sweep_cmd->add_option("--ratios", sweep_ratios, "Comma-separated mask ratios");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic labelled dataset");
  synth_cmd->require_subcommand(1);
  auto* genre_cmd = synth_cmd->add_subcommand("genre", "Two-genre tone clips, split into train and test");
  auto* cover_cmd = synth_cmd->add_subcommand("covers", "Cover cliques: shared melody, varied tempo and key");
  std::string synth_out;
  std::size_t n_train = 200, n_test = 200, cliques = 20, versions = 4, clip_len = 8192;
  std::uint64_t synth_seed = 0;
  for (auto* c : {genre_cmd, cover_cmd}) {
    c->add_option("--out", synth_out)->required();
    c->add_option("--seed", synth_seed);
    c->add_option("--clip-len", clip_len, "Samples per clip at 16 kHz");
  }
  genre_cmd->add_option("--train", n_train);
  genre_cmd->add_option("--test", n_test);
  cover_cmd->add_option("--cliques", cliques);
  cover_cmd->add_option("--versions", versions);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*spec_cmd) {
      const auto cfg = spec_config.empty() ? trainer::TrainConfig{} : trainer::load_config(spec_config);
      const auto w = dsp::read_wav(spec_in);
      auto sc = cfg.spectrogram;
      if (w.sample_rate != sc.sample_rate) {
        throw ConfigError(spec_in + " is sampled at " + std::to_string(w.sample_rate) + " Hz, config expects " +
                          std::to_string(sc.sample_rate));
      }
      const auto f = dsp::log_mel(w, sc);
      save_matrix(spec_out, f.frames());
      std::cout << "L=" << f.length() << " D=" << f.bins() << " hop=" << sc.hop << " n_fft=" << sc.n_fft
                << " n_mels=" << sc.n_mels << " sample_rate=" << sc.sample_rate << "\n";
    } else if (*config_cmd) {
      std::cout << trainer::to_text(config_toy ? trainer::TrainConfig::toy() : trainer::TrainConfig::desk());
    } else if (*pre_cmd) {
      auto cfg = trainer::load_config(pre_config);
      if (pre_seed) cfg.seed = *pre_seed;
      if (pre_ratio) cfg.mask_ratio = *pre_ratio;
      trainer::PretrainOptions opts;
      opts.out_dir = pre_out;
      if (!pre_resume.empty()) opts.resume_from = fs::path(pre_resume);
      opts.max_steps = pre_max_steps;
      opts.log = &std::cout;
      if (!pre_dump.empty()) {
        fs::create_directories(pre_dump);
        opts.on_step = [&](const trainer::StepStats& st) {
          if (st.masks.empty()) return;  // no-mask mode has nothing to dump
          const std::size_t B = st.masks.size(), L = st.frames;
          Tensor t(Shape{B, 2, L});
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t l = 0; l < L; ++l) {
              t[(b * 2) * L + l] = st.scores[b].s[l];
              t[(b * 2 + 1) * L + l] = st.masks[b].keep[l] ? 1.0 : 0.0;
            }
          save_matrix(fs::path(pre_dump) / ("masks-" + std::to_string(st.step) + ".bin"), t);
        };
      }
      trainer::pretrain(cfg, fs::path(pre_data), opts);
    } else if (*embed_cmd) {
      auto t = open_checkpoint(embed_args.front());
      std::vector<dsp::Waveform> clips;
      for (std::size_t i = 1; i + 1 < embed_args.size(); ++i) clips.push_back(dsp::read_wav(embed_args[i]));
      const Tensor z = eval::embed_clips(t.model().encoder, t.config().spectrogram, clips);
      save_matrix(embed_args.back(), z);
      std::cout << "wrote " << z.rows() << " x " << z.cols() << " to " << embed_args.back() << "\n";
    } else if (*probe_cmd) {
      auto t = open_checkpoint(probe_ckpt);
      probe_cfg.mlp = probe_mlp;
      const auto data = read_labeled(probe_data);
      const auto res = run_probe(t, data, probe_cfg, probe_fraction);
      std::printf("train clips %zu, test clips %zu, tags used %zu\n", res.train, res.test, res.metrics.tags_used);
      std::printf("ROC-AUC %.4f\nPR-AUC %.4f\n", res.metrics.roc_auc, res.metrics.pr_auc);
      if (res.accuracy >= 0) std::printf("accuracy %.4f\n", res.accuracy);
    } else if (*ret_cmd) {
      auto t = open_checkpoint(ret_ckpt);
      const auto q = read_labeled(ret_queries), r = read_labeled(ret_refs);
      const auto& spec = t.config().spectrogram;
      eval::RetrievalSet rs;
      rs.queries = eval::embed_clips(t.model().encoder, spec, q.clips);
      rs.references = eval::embed_clips(t.model().encoder, spec, r.clips);
      // A file that appears on both sides is its own id, so it is never retrieved for itself.
      for (const auto& row : q.rows) {
        rs.query_clique.push_back(row.labels.front());
        rs.query_ids.push_back(fs::weakly_canonical(row.path).string());
      }
      for (const auto& row : r.rows) {
        rs.reference_clique.push_back(row.labels.front());
        rs.reference_ids.push_back(fs::weakly_canonical(row.path).string());
      }
      const auto m = eval::retrieval_eval(rs, ret_cosine ? eval::Similarity::kCosine : eval::Similarity::kDot);
      std::printf("MAP %.4f\nPrecision@10 %.4f\nMR1 %.4f\n", m.map, m.precision_at_10, m.mr1);
    } else if (*sweep_cmd) {
      const auto base = trainer::load_config(sweep_config);
      const auto data = read_labeled(sweep_data);
      const auto ratios = parse_ratios(sweep_ratios);
      const auto rows = eval::ratio_sweep(
          base, ratios,
          [&](const trainer::TrainConfig& c, const trainer::PretrainOptions& o) {
            return trainer::pretrain(c, data.clips, o);
          },
          [&](trainer::Trainer& t) { return run_probe(t, data, eval::ProbeConfig{}, 1.0).metrics.roc_auc; });
      std::ofstream out(sweep_out);
      if (!out) throw IoError("cannot write " + sweep_out);
      eval::write_sweep_csv(out, rows);
      eval::write_sweep_csv(std::cout, rows);
    } else if (*genre_cmd) {
      synth::ToneConfig tc;
      tc.clip_len = clip_len;
      auto train = synth::genre_dataset(n_train, tc, synth_seed);
      const auto test = synth::genre_dataset(n_test, tc, synth_seed + 0x9e3779b97f4a7c15ULL);
      std::vector<std::string> split(n_train, "train");
      split.resize(n_train + n_test, "test");
      train.clips.insert(train.clips.end(), test.clips.begin(), test.clips.end());
      train.labels.insert(train.labels.end(), test.labels.begin(), test.labels.end());
      synth::write_dataset(synth_out, train, split);
      std::cout << "wrote " << n_train << " train and " << n_test << " test clips to " << synth_out << "\n";
    } else if (*cover_cmd) {
      synth::ToneConfig tc;
      tc.clip_len = clip_len;
      const auto data = synth::cover_dataset(cliques, versions, tc, synth_seed);
      synth::write_dataset(synth_out, data, std::vector<std::string>(data.clips.size(), "test"));
      std::cout << "wrote " << cliques << " cliques x " << versions << " versions to " << synth_out << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
