#include "pemr/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <unsupported/Eigen/FFT>

#include "pemr/error.hpp"

namespace pemr::dsp {

namespace {

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ConfigError(std::string("augmentation probability ") + name + " must lie in [0, 1]");
  }
}

template <typename T>
void check_range(T lo, T hi, const char* name) {
  if (!(lo <= hi)) throw ConfigError(std::string("augmentation range ") + name + " has lower > upper");
}

double rms(const std::vector<double>& x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return x.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(x.size()));
}

// Integral of a unit-peak triangle (left, centre, right) over [x0, x1].
double triangle_integral(double left, double centre, double right, double x0, double x1) {
  double total = 0.0;
  {
    const double a = std::max(x0, left), b = std::min(x1, centre);
    if (b > a && centre > left) {
      // integral of (f - left) / (centre - left)
      total += ((b - left) * (b - left) - (a - left) * (a - left)) / (2.0 * (centre - left));
    }
  }
  {
    const double a = std::max(x0, centre), b = std::min(x1, right);
    if (b > a && right > centre) {
      total += ((right - a) * (right - a) - (right - b) * (right - b)) / (2.0 * (right - centre));
    }
  }
  return total;
}

}  // namespace

Waveform::Waveform(std::vector<double> s, int rate) : samples(std::move(s)), sample_rate(rate) {
  if (samples.empty()) throw InsufficientAudioError("waveform has no samples");
  if (sample_rate <= 0) throw ConfigError("sample rate must be positive");
}

FrameMatrix::FrameMatrix(Tensor frames) : frames_(std::move(frames)) {
  if (frames_.rank() != 2 || frames_.rows() < 1 || frames_.cols() < 1) {
    throw ShapeError("frame matrix must be L x D with L, D >= 1, got " + shape_string(frames_.shape()));
  }
  for (double v : frames_.values()) {
    if (!std::isfinite(v)) throw DivergenceError("frame matrix contains a non-finite entry");
  }
}

void SpectrogramConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  if (n_fft < 2) throw ConfigError("n_fft must be at least 2");
  if (hop < 1) throw ConfigError("hop must be at least 1");
  if (n_mels < 1) throw ConfigError("n_mels must be at least 1");
  if (!(log_eps > 0.0)) throw ConfigError("log_eps must be positive");
}

void AugmentationConfig::validate() const {
  check_probability(p_polarity, "polarity");
  check_probability(p_noise, "noise");
  check_probability(p_gain, "gain");
  check_probability(p_filter, "filter");
  check_probability(p_delay, "delay");
  check_probability(p_pitch, "pitch");
  check_range(noise_snr_min_db, noise_snr_max_db, "noise snr");
  check_range(gain_min_db, gain_max_db, "gain");
  check_range(lowpass_min_hz, lowpass_max_hz, "low-pass cutoff");
  check_range(highpass_min_hz, highpass_max_hz, "high-pass cutoff");
  check_range(delay_min_ms, delay_max_ms, "delay");
  check_range(pitch_min_semitones, pitch_max_semitones, "pitch");
  if (lowpass_min_hz <= 0.0 || highpass_min_hz <= 0.0) throw ConfigError("filter cutoffs must be positive");
  if (delay_min_ms < 0) throw ConfigError("delay must be non-negative");
}

AugmentationConfig AugmentationConfig::none() {
  AugmentationConfig cfg;
  cfg.p_polarity = cfg.p_noise = cfg.p_gain = cfg.p_filter = cfg.p_delay = cfg.p_pitch = 0.0;
  return cfg;
}

std::size_t frame_count(std::size_t n_samples, std::size_t n_fft, std::size_t hop) {
  if (n_samples < n_fft) return 0;
  return 1 + (n_samples - n_fft) / hop;
}

std::pair<Waveform, Waveform> sample_two_segments(const Waveform& w, std::size_t seg_len, Rng& rng) {
  if (seg_len == 0) throw ConfigError("segment length must be positive");
  if (w.size() < seg_len) {
    throw InsufficientAudioError("waveform has " + std::to_string(w.size()) +
                                 " samples, segment needs " + std::to_string(seg_len));
  }
  const auto max_offset = static_cast<std::int64_t>(w.size() - seg_len);
  auto cut = [&](std::int64_t off) {
    auto first = w.samples.begin() + off;
    return Waveform(std::vector<double>(first, first + static_cast<std::ptrdiff_t>(seg_len)), w.sample_rate);
  };
  const auto a = rng.uniform_int(0, max_offset);
  const auto b = rng.uniform_int(0, max_offset);
  return {cut(a), cut(b)};
}

void invert_polarity(std::vector<double>& x) {
  for (double& v : x) v = -v;
}

void apply_gain_db(std::vector<double>& x, double gain_db) {
  const double g = std::pow(10.0, gain_db / 20.0);
  for (double& v : x) v *= g;
}

void add_noise_snr(std::vector<double>& x, double snr_db, Rng& rng) {
  const double noise_rms = rms(x) / std::pow(10.0, snr_db / 20.0);
  for (double& v : x) v += rng.normal(0.0, 1.0) * noise_rms;
}

void first_order_lowpass(std::vector<double>& x, double cutoff_hz, int sample_rate) {
  const double dt = 1.0 / sample_rate;
  const double rc = 1.0 / (2.0 * std::numbers::pi * cutoff_hz);
  const double alpha = dt / (rc + dt);
  double y = 0.0;
  for (double& v : x) {
    y += alpha * (v - y);
    v = y;
  }
}

void first_order_highpass(std::vector<double>& x, double cutoff_hz, int sample_rate) {
  const double dt = 1.0 / sample_rate;
  const double rc = 1.0 / (2.0 * std::numbers::pi * cutoff_hz);
  const double beta = rc / (rc + dt);
  double y = 0.0, prev_x = 0.0;
  for (double& v : x) {
    y = beta * (y + v - prev_x);
    prev_x = v;
    v = y;
  }
}

void add_delay(std::vector<double>& x, std::size_t delay_samples, double attenuation) {
  const std::vector<double> dry = x;
  for (std::size_t i = delay_samples; i < x.size(); ++i) x[i] += attenuation * dry[i - delay_samples];
  const double rescale = 1.0 / (1.0 + std::abs(attenuation));
  for (double& v : x) v *= rescale;
}

void pitch_shift(std::vector<double>& x, int semitones) {
  if (semitones == 0 || x.empty()) return;
  const double factor = std::pow(2.0, semitones / 12.0);
  const std::vector<double> src = x;
  const std::size_t n = src.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = static_cast<double>(i) * factor;
    const auto i0 = static_cast<std::size_t>(pos);
    if (i0 + 1 < n) {
      const double frac = pos - static_cast<double>(i0);
      x[i] = (1.0 - frac) * src[i0] + frac * src[i0 + 1];
    } else if (i0 + 1 == n && pos == static_cast<double>(i0)) {
      x[i] = src[i0];
    } else {
      x[i] = 0.0;  // tail padding after a shift up
    }
  }
}

Waveform augment(const Waveform& w, const AugmentationConfig& cfg, Rng& rng) {
  cfg.validate();
  Waveform out = w;
  auto& x = out.samples;
  if (rng.bernoulli(cfg.p_polarity)) invert_polarity(x);
  if (rng.bernoulli(cfg.p_noise)) add_noise_snr(x, rng.uniform(cfg.noise_snr_min_db, cfg.noise_snr_max_db), rng);
  if (rng.bernoulli(cfg.p_gain)) apply_gain_db(x, rng.uniform(cfg.gain_min_db, cfg.gain_max_db));
  if (rng.bernoulli(cfg.p_filter)) {
    if (rng.bernoulli(0.5)) {
      first_order_lowpass(x, rng.uniform(cfg.lowpass_min_hz, cfg.lowpass_max_hz), w.sample_rate);
    } else {
      first_order_highpass(x, rng.uniform(cfg.highpass_min_hz, cfg.highpass_max_hz), w.sample_rate);
    }
  }
  if (rng.bernoulli(cfg.p_delay)) {
    const auto ms = rng.uniform_int(cfg.delay_min_ms, cfg.delay_max_ms);
    const auto samples = static_cast<std::size_t>(std::lround(static_cast<double>(ms) * w.sample_rate / 1000.0));
    add_delay(x, samples, cfg.delay_attenuation);
  }
  if (rng.bernoulli(cfg.p_pitch)) {
    pitch_shift(x, static_cast<int>(rng.uniform_int(cfg.pitch_min_semitones, cfg.pitch_max_semitones)));
  }
  return out;
}

std::vector<double> make_window(Window kind, std::size_t n) {
  std::vector<double> win(n, 1.0);
  if (kind == Window::kHann) {
    // periodic Hann
    for (std::size_t i = 0; i < n; ++i) {
      win[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    }
  }
  return win;
}

Spectrum stft(const Waveform& w, std::size_t n_fft, std::size_t hop, Window window) {
  if (n_fft < 2 || hop < 1) throw ConfigError("stft needs n_fft >= 2 and hop >= 1");
  if (w.size() < n_fft) {
    throw InsufficientAudioError("waveform has " + std::to_string(w.size()) +
                                 " samples, shorter than one " + std::to_string(n_fft) + "-point window");
  }
  Spectrum spec;
  spec.frames = frame_count(w.size(), n_fft, hop);
  spec.bins = n_fft / 2 + 1;
  spec.values.resize(spec.frames * spec.bins);

  const auto win = make_window(window, n_fft);
  Eigen::FFT<double> fft;
  std::vector<double> buf(n_fft);
  std::vector<std::complex<double>> out;
  for (std::size_t l = 0; l < spec.frames; ++l) {
    const double* src = w.samples.data() + l * hop;
    for (std::size_t i = 0; i < n_fft; ++i) buf[i] = src[i] * win[i];
    fft.fwd(out, buf);
    std::copy_n(out.begin(), spec.bins, spec.values.begin() + static_cast<std::ptrdiff_t>(l * spec.bins));
  }
  return spec;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangles are placed at mel-uniform corner frequencies; each weight is the
// mean of the triangle over the frequency interval a bin covers, so narrow
// low-frequency filters still land on at least one bin.
FilterBank mel_filterbank(std::size_t n_mels, std::size_t n_fft, int sample_rate) {
  if (n_mels < 1) throw ConfigError("n_mels must be at least 1");
  if (n_fft < 2) throw ConfigError("n_fft must be at least 2");
  if (sample_rate <= 0) throw ConfigError("sample rate must be positive");
  const std::size_t n_bins = n_fft / 2 + 1;
  if (n_mels > n_bins) {
    throw DegenerateError("degenerate filterbank: " + std::to_string(n_mels) + " mel bands exceed the " +
                      std::to_string(n_bins) + " distinct bins of a " + std::to_string(n_fft) + "-point FFT");
  }
  const double nyquist = sample_rate / 2.0;
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(n_fft);
  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> corners(n_mels + 2);
  for (std::size_t i = 0; i < corners.size(); ++i) {
    corners[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }

  FilterBank bank{Tensor::matrix(n_mels, n_bins)};
  for (std::size_t m = 0; m < n_mels; ++m) {
    bool any = false;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double v =
          triangle_integral(corners[m], corners[m + 1], corners[m + 2], f - bin_hz / 2, f + bin_hz / 2) / bin_hz;
      bank.weights.at(m, k) = v;
      any = any || v > 0.0;
    }
    if (!any) throw DegenerateError("degenerate filterbank: band " + std::to_string(m) + " has no bin support");
  }
  return bank;
}

Tensor mel_energies(const Waveform& w, const SpectrogramConfig& cfg) {
  cfg.validate();
  if (w.sample_rate != cfg.sample_rate) {
    throw ConfigError("waveform sample rate " + std::to_string(w.sample_rate) + " does not match configured " +
                      std::to_string(cfg.sample_rate));
  }
  const auto spec = stft(w, cfg.n_fft, cfg.hop, cfg.window);
  const auto bank = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate);
  Tensor out = Tensor::matrix(spec.frames, cfg.n_mels);
  std::vector<double> power(spec.bins);
  for (std::size_t l = 0; l < spec.frames; ++l) {
    for (std::size_t k = 0; k < spec.bins; ++k) power[k] = std::norm(spec.at(l, k));
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      const auto wrow = bank.weights.row(m);
      double acc = 0.0;
      for (std::size_t k = 0; k < spec.bins; ++k) acc += wrow[k] * power[k];
      out.at(l, m) = acc;
    }
  }
  return out;
}

FrameMatrix log_mel(const Waveform& w, const SpectrogramConfig& cfg) {
  Tensor e = mel_energies(w, cfg);
  for (double& v : e.values()) v = std::log(v + cfg.log_eps);
  return FrameMatrix(std::move(e));
}

}  // namespace pemr::dsp
