#include "pemr/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pemr/error.hpp"
#include "pemr/wav.hpp"

namespace pemr::synth {

dsp::AugmentationConfig default_nuisance() {
  dsp::AugmentationConfig a;
  a.p_polarity = 0.0;
  a.p_filter = 0.7;
  a.p_delay = 0.7;
  a.p_pitch = 0.7;
  return a;
}

namespace {

struct Timbre {
  std::vector<double> amps;
  double attack_s = 0.01;
  double decay_per_s = 0.0;  // exponential decay rate after the attack
};

Timbre genre_timbre(int genre, const ToneConfig& cfg, Rng& rng) {
  Timbre t;
  t.amps.resize(cfg.harmonics);
  for (std::size_t k = 1; k <= cfg.harmonics; ++k) {
    double a = 0.0;
    if (genre == 0) {
      a = (k % 2 == 1) ? 1.0 / static_cast<double>(k) : 0.0;  // hollow, odd partials
    } else {
      a = 1.0 / (1.0 + std::pow(static_cast<double>(k) - 4.0, 2) / 4.0);  // bright formant near k = 4
    }
    t.amps[k - 1] = a * (1.0 + cfg.template_jitter * rng.uniform(-1.0, 1.0));
  }
  if (genre == 0 || !cfg.genre_envelopes) {
    t.attack_s = 0.03;
    t.decay_per_s = 2.0;
  } else {
    t.attack_s = 0.003;
    t.decay_per_s = 18.0;
  }
  return t;
}

void render_note(std::vector<double>& out, std::size_t start, std::size_t len, double f0, double gain,
                 const Timbre& t, int sample_rate) {
  const double sr = static_cast<double>(sample_rate);
  for (std::size_t k = 0; k < t.amps.size(); ++k) {
    const double f = f0 * static_cast<double>(k + 1);
    if (f >= 0.45 * sr || t.amps[k] == 0.0) continue;
    const double w = 2.0 * std::numbers::pi * f / sr;
    for (std::size_t n = 0; n < len && start + n < out.size(); ++n) {
      const double time = static_cast<double>(n) / sr;
      const double env = std::min(1.0, time / t.attack_s) * std::exp(-t.decay_per_s * time);
      out[start + n] += gain * t.amps[k] * env * std::sin(w * static_cast<double>(n));
    }
  }
}

void finish(std::vector<double>& x, const ToneConfig& cfg, Rng& rng) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0) {
    for (double& v : x) v *= 0.5 / peak;
  }
  dsp::apply_gain_db(x, rng.uniform(cfg.gain_min_db, cfg.gain_max_db));
  x = dsp::augment(dsp::Waveform(std::move(x), cfg.sample_rate), cfg.nuisance, rng).samples;
  double power = 0.0;
  for (double v : x) power += v * v;
  const double rms = std::sqrt(power / static_cast<double>(x.size()));
  const auto block = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.noise_block_s * cfg.sample_rate));
  for (std::size_t start = 0; start < x.size(); start += block) {
    const double sd = rms / std::pow(10.0, rng.uniform(cfg.snr_min_db, cfg.snr_max_db) / 20.0);
    for (std::size_t n = start; n < std::min(x.size(), start + block); ++n) x[n] += rng.normal(0.0, sd);
  }
}

struct Note {
  double semitone;
  double dur_s;
  double gain = 1.0;
};

std::vector<Note> random_melody(std::size_t n, const ToneConfig& cfg, Rng& rng) {
  std::vector<Note> melody(n);
  for (auto& note : melody) {
    note.semitone = static_cast<double>(rng.uniform_int(0, 12) + 12 * rng.uniform_int(-cfg.octave_spread, cfg.octave_spread));
    note.dur_s = rng.uniform(cfg.note_min_s, cfg.note_max_s);
    note.gain = std::pow(10.0, rng.uniform(cfg.note_gain_min_db, 0.0) / 20.0);
  }
  return melody;
}

void render_melody(std::vector<double>& x, const std::vector<Note>& melody, double base_hz, double tempo,
                   const Timbre& t, int sample_rate) {
  std::size_t pos = 0;
  for (std::size_t i = 0; pos < x.size(); i = (i + 1) % melody.size()) {
    const auto len = static_cast<std::size_t>(melody[i].dur_s / tempo * sample_rate);
    render_note(x, pos, len, base_hz * std::pow(2.0, melody[i].semitone / 12.0), melody[i].gain, t, sample_rate);
    pos += std::max<std::size_t>(len, 1);
  }
}

}  // namespace

dsp::Waveform genre_clip(int genre, const ToneConfig& cfg, Rng& rng) {
  if (genre != 0 && genre != 1) throw ConfigError("genre must be 0 or 1");
  const Timbre t = genre_timbre(genre, cfg, rng);
  const std::vector<Note> melody = random_melody(8, cfg, rng);
  const double base = std::exp(rng.uniform(std::log(cfg.f0_min_hz), std::log(cfg.f0_max_hz)));
  std::vector<double> x(cfg.clip_len, 0.0);
  render_melody(x, melody, base, 1.0, t, cfg.sample_rate);
  finish(x, cfg, rng);
  return dsp::Waveform(std::move(x), cfg.sample_rate);
}

LabeledClips genre_dataset(std::size_t n, const ToneConfig& cfg, std::uint64_t seed) {
  LabeledClips out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::derive(seed, {0x67656e7265ULL, i});
    const int g = static_cast<int>(i % 2);
    out.clips.push_back(genre_clip(g, cfg, rng));
    out.labels.push_back(g);
  }
  return out;
}

LabeledClips cover_dataset(std::size_t cliques, std::size_t versions, const ToneConfig& cfg, std::uint64_t seed) {
  LabeledClips out;
  for (std::size_t c = 0; c < cliques; ++c) {
    Rng song = Rng::derive(seed, {0x736f6e67ULL, c});
    Timbre t = genre_timbre(static_cast<int>(song.uniform_int(0, 1)), cfg, song);
    const std::vector<Note> melody = random_melody(6, cfg, song);
    const double base = std::exp(song.uniform(std::log(cfg.f0_min_hz), std::log(cfg.f0_max_hz)));
    for (std::size_t v = 0; v < versions; ++v) {
      Rng rng = Rng::derive(seed, {0x636f766572ULL, c, v});
      const double tempo = rng.uniform(0.85, 1.15);
      const double shift = std::pow(2.0, static_cast<double>(rng.uniform_int(-2, 2)) / 12.0);
      std::vector<double> x(cfg.clip_len, 0.0);
      render_melody(x, melody, base * shift, tempo, t, cfg.sample_rate);
      finish(x, cfg, rng);
      out.clips.emplace_back(std::move(x), cfg.sample_rate);
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const LabeledClips& data, const std::vector<std::string>& split) {
  if (!split.empty() && split.size() != data.clips.size()) throw ShapeError("split list must match clip count");
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "labels.csv");
  if (!csv) throw IoError("cannot write " + (dir / "labels.csv").string());
  csv << "file,label,split\n";
  for (std::size_t i = 0; i < data.clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%04zu.wav", i);
    dsp::write_wav(dir / name, data.clips[i]);
    csv << name << "," << data.labels[i] << "," << (split.empty() ? "train" : split[i]) << "\n";
  }
}

std::vector<LabeledFile> read_labels(const std::filesystem::path& dir) {
  const auto path = dir / "labels.csv";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("file,label", 0) != 0) throw FormatError(path.string() + ": header must start with file,label");
  std::vector<LabeledFile> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string file, label, split;
    std::getline(ss, file, ',');
    std::getline(ss, label, ',');
    std::getline(ss, split, ',');
    if (file.empty() || label.empty()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected file,label[,split]");
    }
    LabeledFile row{dir / file, {}, split.empty() ? "train" : split};
    std::stringstream ls(label);
    std::string tok;
    while (std::getline(ls, tok, '|')) {
      try {
        row.labels.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad label '" + tok + "'");
      }
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace pemr::synth
