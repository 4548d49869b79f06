#include "pemr/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "pemr/error.hpp"
#include "pemr/objectives.hpp"
#include "pemr/wav.hpp"

namespace pemr::trainer {

std::string_view to_string(MaskMode m) {
  switch (m) {
    case MaskMode::kPositiveNegative: return "posneg";
    case MaskMode::kPositiveOnly: return "pos";
    case MaskMode::kNone: return "none";
  }
  return "posneg";
}

MaskMode parse_mask_mode(std::string_view s) {
  if (s == "posneg") return MaskMode::kPositiveNegative;
  if (s == "pos") return MaskMode::kPositiveOnly;
  if (s == "none") return MaskMode::kNone;
  throw ConfigError("unknown mask_mode '" + std::string(s) + "' (expected posneg, pos or none)");
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 for batch cross-correlation");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  spectrogram.validate();
  augmentation.validate();
  transformer.validate();
  encoder.validate();
  if (transformer.model_dim != spectrogram.n_mels) {
    throw ConfigError("transformer dim " + std::to_string(transformer.model_dim) + " must equal n_mels " +
                      std::to_string(spectrogram.n_mels));
  }
  const std::size_t L = frames_per_segment();
  if (L < 2) throw ConfigError("seg_len yields fewer than 2 frames");
  if (L < encoder.min_length()) {
    throw ConfigError("seg_len yields " + std::to_string(L) + " frames; the encoder needs at least " +
                      std::to_string(encoder.min_length()));
  }
  if (spectrogram.n_mels < encoder.min_bins()) {
    throw ConfigError("n_mels " + std::to_string(spectrogram.n_mels) + " below encoder minimum " +
                      std::to_string(encoder.min_bins()));
  }
}

std::size_t TrainConfig::frames_per_segment() const {
  return dsp::frame_count(seg_len, spectrogram.n_fft, spectrogram.hop);
}

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.seg_len = 4096;
  c.spectrogram.n_mels = 32;
  c.transformer.model_dim = 32;
  c.encoder.channels = {16, 32, 32, 16};
  c.epochs = 20;
  c.lr = 1e-3;
  return c;
}

// ---------------------------------------------------------------------------
// key=value config

namespace {

std::string fmt_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string& key, const std::string&)> set;
};

template <typename M>
Field size_field(M member) {
  return {[member](const TrainConfig& c) { return std::to_string(member(const_cast<TrainConfig&>(c))); },
          [member](TrainConfig& c, const std::string& k, const std::string& v) {
            member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_uint(k, v));
          }};
}

template <typename M>
Field double_field(M member) {
  return {[member](const TrainConfig& c) { return fmt_double(member(const_cast<TrainConfig&>(c))); },
          [member](TrainConfig& c, const std::string& k, const std::string& v) { member(c) = parse_double(k, v); }};
}

template <typename M>
Field int_field(M member) {
  return {[member](const TrainConfig& c) { return std::to_string(member(const_cast<TrainConfig&>(c))); },
          [member](TrainConfig& c, const std::string& k, const std::string& v) { member(c) = parse_int(k, v); }};
}

#define PEMR_REF(expr) [](TrainConfig& c) -> auto& { return c.expr; }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.emplace_back("batch_size", size_field(PEMR_REF(batch_size)));
    t.emplace_back("epochs", size_field(PEMR_REF(epochs)));
    t.emplace_back("lr", double_field(PEMR_REF(lr)));
    t.emplace_back("weight_decay", double_field(PEMR_REF(weight_decay)));
    t.emplace_back("mask_ratio", double_field(PEMR_REF(mask_ratio)));
    t.emplace_back("lambda", double_field(PEMR_REF(lambda)));
    t.emplace_back("seg_len", size_field(PEMR_REF(seg_len)));
    t.emplace_back("seed", size_field(PEMR_REF(seed)));
    t.emplace_back("checkpoint_every", size_field(PEMR_REF(checkpoint_every)));
    t.emplace_back("mask_mode", Field{[](const TrainConfig& c) { return std::string(to_string(c.mask_mode)); },
                                      [](TrainConfig& c, const std::string&, const std::string& v) {
                                        c.mask_mode = parse_mask_mode(v);
                                      }});
    t.emplace_back("sample_rate", int_field(PEMR_REF(spectrogram.sample_rate)));
    t.emplace_back("n_fft", size_field(PEMR_REF(spectrogram.n_fft)));
    t.emplace_back("hop", size_field(PEMR_REF(spectrogram.hop)));
    t.emplace_back("n_mels", size_field(PEMR_REF(spectrogram.n_mels)));
    t.emplace_back("log_eps", double_field(PEMR_REF(spectrogram.log_eps)));
    t.emplace_back("window", Field{[](const TrainConfig& c) {
                                     return std::string(c.spectrogram.window == dsp::Window::kHann ? "hann"
                                                                                                   : "rectangular");
                                   },
                                   [](TrainConfig& c, const std::string& k, const std::string& v) {
                                     if (v == "hann") c.spectrogram.window = dsp::Window::kHann;
                                     else if (v == "rectangular") c.spectrogram.window = dsp::Window::kRectangular;
                                     else throw ConfigError("config key '" + k + "': unknown window '" + v + "'");
                                   }});
    t.emplace_back("aug.p_polarity", double_field(PEMR_REF(augmentation.p_polarity)));
    t.emplace_back("aug.p_noise", double_field(PEMR_REF(augmentation.p_noise)));
    t.emplace_back("aug.noise_snr_min_db", double_field(PEMR_REF(augmentation.noise_snr_min_db)));
    t.emplace_back("aug.noise_snr_max_db", double_field(PEMR_REF(augmentation.noise_snr_max_db)));
    t.emplace_back("aug.p_gain", double_field(PEMR_REF(augmentation.p_gain)));
    t.emplace_back("aug.gain_min_db", double_field(PEMR_REF(augmentation.gain_min_db)));
    t.emplace_back("aug.gain_max_db", double_field(PEMR_REF(augmentation.gain_max_db)));
    t.emplace_back("aug.p_filter", double_field(PEMR_REF(augmentation.p_filter)));
    t.emplace_back("aug.lowpass_min_hz", double_field(PEMR_REF(augmentation.lowpass_min_hz)));
    t.emplace_back("aug.lowpass_max_hz", double_field(PEMR_REF(augmentation.lowpass_max_hz)));
    t.emplace_back("aug.highpass_min_hz", double_field(PEMR_REF(augmentation.highpass_min_hz)));
    t.emplace_back("aug.highpass_max_hz", double_field(PEMR_REF(augmentation.highpass_max_hz)));
    t.emplace_back("aug.p_delay", double_field(PEMR_REF(augmentation.p_delay)));
    t.emplace_back("aug.delay_min_ms", int_field(PEMR_REF(augmentation.delay_min_ms)));
    t.emplace_back("aug.delay_max_ms", int_field(PEMR_REF(augmentation.delay_max_ms)));
    t.emplace_back("aug.delay_attenuation", double_field(PEMR_REF(augmentation.delay_attenuation)));
    t.emplace_back("aug.p_pitch", double_field(PEMR_REF(augmentation.p_pitch)));
    t.emplace_back("aug.pitch_min_semitones", int_field(PEMR_REF(augmentation.pitch_min_semitones)));
    t.emplace_back("aug.pitch_max_semitones", int_field(PEMR_REF(augmentation.pitch_max_semitones)));
    t.emplace_back("transformer.layers", size_field(PEMR_REF(transformer.n_layers)));
    t.emplace_back("transformer.heads", size_field(PEMR_REF(transformer.n_heads)));
    t.emplace_back("transformer.dim", size_field(PEMR_REF(transformer.model_dim)));
    t.emplace_back("transformer.ffn_hidden", size_field(PEMR_REF(transformer.ffn_hidden)));
    t.emplace_back("transformer.select_prob", double_field(PEMR_REF(transformer.select_prob)));
    t.emplace_back("transformer.mask_token_prob", double_field(PEMR_REF(transformer.mask_token_prob)));
    t.emplace_back("transformer.random_frame_prob", double_field(PEMR_REF(transformer.random_frame_prob)));
    t.emplace_back("encoder.channels",
                   Field{[](const TrainConfig& c) {
                           std::string s;
                           for (std::size_t i = 0; i < repr::kConvBlocks; ++i)
                             s += (i ? "," : "") + std::to_string(c.encoder.channels[i]);
                           return s;
                         },
                         [](TrainConfig& c, const std::string& k, const std::string& v) {
                           const auto parts = split(v, ',');
                           if (parts.size() != repr::kConvBlocks) {
                             throw ConfigError("config key '" + k + "' needs exactly 4 comma-separated widths");
                           }
                           for (std::size_t i = 0; i < parts.size(); ++i) {
                             c.encoder.channels[i] = parse_uint(k, trim(parts[i]));
                           }
                         }});
    t.emplace_back("encoder.pools",
                   Field{[](const TrainConfig& c) {
                           std::string s;
                           for (std::size_t i = 0; i < repr::kConvBlocks; ++i) {
                             s += (i ? "," : "") + std::to_string(c.encoder.pools[i].first) + "x" +
                                  std::to_string(c.encoder.pools[i].second);
                           }
                           return s;
                         },
                         [](TrainConfig& c, const std::string& k, const std::string& v) {
                           const auto parts = split(v, ',');
                           if (parts.size() != repr::kConvBlocks) {
                             throw ConfigError("config key '" + k + "' needs exactly 4 comma-separated TxF windows");
                           }
                           for (std::size_t i = 0; i < parts.size(); ++i) {
                             const auto tf = split(trim(parts[i]), 'x');
                             if (tf.size() != 2) throw ConfigError("config key '" + k + "': bad window '" + parts[i] + "'");
                             c.encoder.pools[i] = {parse_uint(k, tf[0]), parse_uint(k, tf[1])};
                           }
                         }});
    t.emplace_back("encoder.kernel", size_field(PEMR_REF(encoder.kernel)));
    t.emplace_back("encoder.bn_momentum", double_field(PEMR_REF(encoder.bn_momentum)));
    t.emplace_back("encoder.bn_eps", double_field(PEMR_REF(encoder.bn_eps)));
    return t;
  }();
  return table;
}

#undef PEMR_REF

}  // namespace

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(cfg, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + "=" + field.get(cfg) + "\n";
  return out;
}

TrainConfig parse_config(std::string_view text, TrainConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Model and training step

namespace {

attention::PredictingModule build_transformer(const TrainConfig& cfg) {
  Rng rng = Rng::derive(cfg.seed, {0x7472616e73ULL});
  return attention::PredictingModule(cfg.transformer, rng);
}
repr::FcnEncoder build_encoder(const TrainConfig& cfg) {
  Rng rng = Rng::derive(cfg.seed, {0x656e636fULL});
  return repr::FcnEncoder(cfg.encoder, cfg.spectrogram.n_mels, rng);
}
repr::ProjectionHead build_projection(const TrainConfig& cfg) {
  Rng rng = Rng::derive(cfg.seed, {0x70726f6aULL});
  return repr::ProjectionHead(rng);
}

}  // namespace

Model::Model(const TrainConfig& cfg)
    : transformer(build_transformer(cfg)), encoder(build_encoder(cfg)), projection(build_projection(cfg)) {
  all_.append(transformer.parameters());
  all_.append(encoder.parameters());
  all_.append(projection.parameters());
}

Tensor Model::represent(std::span<const dsp::FrameMatrix> frames) { return encoder.encode_eval(frames); }

Trainer::Trainer(TrainConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      model_(cfg_),
      adam_(ad::AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay}) {}

void Trainer::restore(std::uint64_t step, const ad::Adam& state) {
  step_ = step;
  adam_ = state;
}

void Trainer::build_views(std::span<const dsp::Waveform> batch, ForwardPass& fp,
                          const std::function<void(const ad::Var&)>& on_pred) {
  if (batch.size() < 2) throw ConfigError("train_step needs a batch of at least 2 waveforms");
  const bool use_transformer = cfg_.mask_mode != MaskMode::kNone;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Rng rng = Rng::derive(cfg_.seed, {step_, b});
    auto [seg1, seg2] = dsp::sample_two_segments(batch[b], cfg_.seg_len, rng);
    const auto aug1 = dsp::augment(seg1, cfg_.augmentation, rng);
    const auto aug2 = dsp::augment(seg2, cfg_.augmentation, rng);
    fp.branch1.push_back(dsp::log_mel(aug1, cfg_.spectrogram));
    fp.branch2.push_back(dsp::log_mel(aug2, cfg_.spectrogram));
    const auto& f1 = fp.branch1.back();
    const auto& f2 = fp.branch2.back();
    if (!use_transformer) {
      fp.positive.push_back(f2);
      continue;
    }
    const auto m1 = attention::random_mask(f1, cfg_.transformer, rng);
    const auto m2 = attention::random_mask(f2, cfg_.transformer, rng);
    const auto e1 = model_.transformer.encode(model_.transformer.embed(m1));
    const auto e2 = model_.transformer.encode(model_.transformer.embed(m2));
    on_pred(objectives::pred_loss(f1.frames(), model_.transformer.predict_masked(e1.output), m1.record.positions));
    on_pred(objectives::pred_loss(f2.frames(), model_.transformer.predict_masked(e2.output), m2.record.positions));
    // Scores are plain values: the discrete mask stops the contrastive gradient.
    const auto scores = maskgen::frame_scores(e1.last.cls_query, e2.last.cls_query, e2.last.frame_keys);
    auto mask = maskgen::positive_mask(scores, cfg_.mask_ratio);
    fp.positive.push_back(maskgen::apply_mask(f2, mask));
    if (cfg_.mask_mode == MaskMode::kPositiveNegative) {
      fp.negative.push_back(maskgen::apply_mask(f2, maskgen::negative_mask(mask)));
    }
    fp.masks.push_back(std::move(mask));
    fp.scores.push_back(scores);
  }
}

namespace {

ad::Var scalar(double v) { return ad::Var::constant(Tensor(Shape{}, v)); }

StepStats stats_of(const ForwardPass& fp) {
  StepStats st;
  st.loss = {fp.l_pred.item(), fp.l_pos.item(), fp.l_neg.item(), fp.total.item()};
  st.frames = fp.branch2.front().length();
  st.scores = fp.scores;
  st.masks = fp.masks;
  if (fp.masks.empty()) return st;
  // Count the zero rows actually present in each positive view.
  for (const auto& f : fp.positive) {
    std::size_t zero_rows = 0;
    for (std::size_t l = 0; l < f.length(); ++l) {
      const auto row = f.frame(l);
      zero_rows += std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; }) ? 1 : 0;
    }
    st.dropped.push_back(zero_rows);
  }
  return st;
}

}  // namespace

ForwardPass Trainer::forward(std::span<const dsp::Waveform> batch) {
  ForwardPass fp;
  std::vector<ad::Var> pred_terms;
  build_views(batch, fp, [&](const ad::Var& t) { pred_terms.push_back(t); });
  const std::size_t B = batch.size();

  if (pred_terms.empty()) {
    fp.l_pred = scalar(0.0);
  } else {
    ad::Var acc = pred_terms[0];
    for (std::size_t i = 1; i < pred_terms.size(); ++i) acc = ad::add(acc, pred_terms[i]);
    fp.l_pred = ad::scale(acc, 1.0 / static_cast<double>(B));
  }

  auto& enc = model_.encoder;
  auto& proj = model_.projection;
  // Only the unmasked branch feeds the running batch-norm statistics used at
  // evaluation time.
  ad::Var z1 = proj.project(enc.encode(ad::Var::constant(repr::stack_frames(fp.branch1)), true, true));
  ad::Var zp = proj.project(enc.encode(ad::Var::constant(repr::stack_frames(fp.positive)), true, false));
  auto u = objectives::cross_correlation(z1, zp);
  fp.zero_variance_features += u.zero_variance_features;
  fp.l_pos = objectives::l_pos(u.matrix, cfg_.lambda);
  if (cfg_.mask_mode == MaskMode::kPositiveNegative) {
    ad::Var zn = proj.project(enc.encode(ad::Var::constant(repr::stack_frames(fp.negative)), true, false));
    auto v = objectives::cross_correlation(z1, zn);
    fp.zero_variance_features += v.zero_variance_features;
    fp.l_neg = objectives::l_neg(v.matrix, cfg_.lambda);
  } else {
    fp.l_neg = scalar(0.0);
  }
  fp.total = objectives::total_loss(fp.l_pred, fp.l_pos, fp.l_neg);
  return fp;
}

StepStats Trainer::accumulate_gradients(std::span<const dsp::Waveform> batch) {
  ForwardPass fp;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double pred_sum = 0.0;
  bool any_pred = false;
  build_views(batch, fp, [&](const ad::Var& t) {
    ad::backward(ad::scale(t, inv_b));
    pred_sum = any_pred ? pred_sum + t.item() : t.item();
    any_pred = true;
  });
  fp.l_pred = scalar(any_pred ? pred_sum * inv_b : 0.0);

  // Encoder outputs first as plain values, then each pass again with its
  // graph, seeded with the loss gradient at that output.
  auto& enc = model_.encoder;
  auto& proj = model_.projection;
  auto pass = [&](const std::vector<dsp::FrameMatrix>& frames, bool update_stats) {
    return proj.project(enc.encode(ad::Var::constant(repr::stack_frames(frames)), true, update_stats));
  };
  const bool neg = cfg_.mask_mode == MaskMode::kPositiveNegative;
  ad::Var z1 = ad::Var::leaf(pass(fp.branch1, true).value());
  ad::Var zp = ad::Var::leaf(pass(fp.positive, false).value());
  ad::Var zn = neg ? ad::Var::leaf(pass(fp.negative, false).value()) : ad::Var();

  auto u = objectives::cross_correlation(z1, zp);
  fp.zero_variance_features += u.zero_variance_features;
  fp.l_pos = objectives::l_pos(u.matrix, cfg_.lambda);
  fp.l_neg = scalar(0.0);
  if (neg) {
    auto v = objectives::cross_correlation(z1, zn);
    fp.zero_variance_features += v.zero_variance_features;
    fp.l_neg = objectives::l_neg(v.matrix, cfg_.lambda);
  }
  ad::backward(ad::add(fp.l_pos, fp.l_neg));
  fp.total = objectives::total_loss(fp.l_pred, fp.l_pos, fp.l_neg);

  auto pull = [&](const std::vector<dsp::FrameMatrix>& frames, const ad::Var& z) {
    ad::backward(ad::sum(ad::mul(pass(frames, false), ad::Var::constant(z.grad()))));
  };
  pull(fp.branch1, z1);
  pull(fp.positive, zp);
  if (neg) pull(fp.negative, zn);
  return stats_of(fp);
}

StepStats Trainer::train_step(std::span<const dsp::Waveform> batch) {
  model_.zero_grad();
  StepStats st = accumulate_gradients(batch);
  adam_.step(model_.parameters());
  st.step = ++step_;
  return st;
}

// ---------------------------------------------------------------------------
// Pre-training loop

std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch_size) { return dataset_size / batch_size; }

std::vector<dsp::Waveform> load_dataset(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("dataset directory " + dir.string() + " is not readable");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
  }
  if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());
  std::vector<dsp::Waveform> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(dsp::read_wav(f));
  return out;
}

std::string loss_csv_row(const StepStats& s) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g", static_cast<unsigned long long>(s.step),
                s.loss.l_pred, s.loss.l_pos, s.loss.l_neg, s.loss.total);
  return buf;
}

namespace {

// Keeps the header and rows with step <= keep_through.
void truncate_loss_csv(const std::filesystem::path& path, std::uint64_t keep_through) {
  std::vector<std::string> kept;
  {
    std::ifstream in(path);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        continue;
      }
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) <= keep_through) kept.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  out << kLossCsvHeader << "\n";
  for (const auto& l : kept) out << l << "\n";
}

}  // namespace

Trainer pretrain(const TrainConfig& cfg, std::span<const dsp::Waveform> dataset, const PretrainOptions& opts) {
  cfg.validate();
  if (dataset.size() < cfg.batch_size) {
    throw ConfigError("dataset has " + std::to_string(dataset.size()) + " waveforms, fewer than batch size " +
                      std::to_string(cfg.batch_size));
  }
  Trainer trainer(cfg);
  if (opts.resume_from) {
    const auto ckpt = load_checkpoint(*opts.resume_from);
    const auto saved = parse_config(ckpt.config_text);
    if (to_text(saved) != to_text(cfg)) {
      throw ConfigError("checkpoint " + opts.resume_from->string() + " was written with a different config");
    }
    apply_checkpoint(trainer, ckpt);
  }

  const bool write_files = !opts.out_dir.empty();
  std::ofstream csv;
  if (write_files) {
    std::filesystem::create_directories(opts.out_dir);
    const auto csv_path = opts.out_dir / "loss.csv";
    if (opts.resume_from && std::filesystem::exists(csv_path)) {
      truncate_loss_csv(csv_path, trainer.step());
      csv.open(csv_path, std::ios::app);
    } else {
      csv.open(csv_path, std::ios::trunc);
      csv << kLossCsvHeader << "\n";
    }
    if (!csv) throw IoError("cannot write " + csv_path.string());
  }

  const std::size_t per_epoch = steps_per_epoch(dataset.size(), cfg.batch_size);
  const std::uint64_t total_steps = static_cast<std::uint64_t>(per_epoch) * cfg.epochs;
  const std::uint64_t last = opts.max_steps ? std::min(*opts.max_steps, total_steps) : total_steps;
  const std::size_t ckpt_every = cfg.checkpoint_every ? cfg.checkpoint_every : per_epoch;

  std::vector<dsp::Waveform> batch;
  std::vector<std::size_t> order;
  std::uint64_t order_epoch = ~0ULL;
  while (trainer.step() < last) {
    const std::uint64_t epoch = trainer.step() / per_epoch;
    const std::size_t pos = trainer.step() % per_epoch;
    if (epoch != order_epoch) {
      order.resize(dataset.size());
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle_rng = Rng::derive(cfg.seed, {0x7368756666ULL, epoch});
      std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
      order_epoch = epoch;
    }
    batch.clear();
    for (std::size_t i = 0; i < cfg.batch_size; ++i) batch.push_back(dataset[order[pos * cfg.batch_size + i]]);
    const auto st = trainer.train_step(batch);
    if (write_files) csv << loss_csv_row(st) << "\n" << std::flush;
    if (opts.log) *opts.log << "step " << st.step << "/" << last << " " << loss_csv_row(st) << "\n";
    if (opts.on_step) opts.on_step(st);
    if (write_files && (st.step % ckpt_every == 0 || st.step == last)) {
      save_checkpoint(opts.out_dir / ("checkpoint-" + std::to_string(st.step) + ".bin"), trainer);
    }
  }
  return trainer;
}

Trainer pretrain(const TrainConfig& cfg, const std::filesystem::path& data_dir, const PretrainOptions& opts) {
  const auto dataset = load_dataset(data_dir);
  if (dataset.empty()) throw IoError("dataset directory " + data_dir.string() + " contains no .wav files");
  return pretrain(cfg, dataset, opts);
}

}  // namespace pemr::trainer
