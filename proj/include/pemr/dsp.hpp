#pragma once

#include <complex>
#include <cstddef>
#include <utility>
#include <vector>

#include "pemr/rng.hpp"
#include "pemr/tensor.hpp"

namespace pemr::dsp {

/// Mono audio samples with their sample rate.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  Waveform() = default;
  Waveform(std::vector<double> s, int rate);
  std::size_t size() const { return samples.size(); }
};

/// L x D matrix of log-magnitude frames; row l is one time slice.
class FrameMatrix {
 public:
  FrameMatrix() = default;
  explicit FrameMatrix(Tensor frames);

  std::size_t length() const { return frames_.rows(); }
  std::size_t bins() const { return frames_.cols(); }
  const Tensor& frames() const { return frames_; }
  Tensor& frames() { return frames_; }
  std::span<const double> frame(std::size_t l) const { return frames_.row(l); }

 private:
  Tensor frames_;
};

/// n_mels x n_bins triangular mel weights.
struct FilterBank {
  Tensor weights;
  std::size_t n_mels() const { return weights.rows(); }
  std::size_t n_bins() const { return weights.cols(); }
};

enum class Window { kHann, kRectangular };

struct SpectrogramConfig {
  int sample_rate = 16000;
  std::size_t n_fft = 256;
  std::size_t hop = 128;
  std::size_t n_mels = 128;
  double log_eps = 1e-6;
  Window window = Window::kHann;

  void validate() const;
};

/// Complex STFT: frames x bins, row-major.
struct Spectrum {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::complex<double>> values;

  std::complex<double> at(std::size_t l, std::size_t k) const { return values[l * bins + k]; }
};

struct AugmentationConfig {
  double p_polarity = 0.5;

  double p_noise = 0.3;
  double noise_snr_min_db = 20.0;
  double noise_snr_max_db = 40.0;

  double p_gain = 0.5;
  double gain_min_db = -6.0;
  double gain_max_db = 0.0;

  double p_filter = 0.3;
  double lowpass_min_hz = 2200.0;
  double lowpass_max_hz = 4000.0;
  double highpass_min_hz = 200.0;
  double highpass_max_hz = 1200.0;

  double p_delay = 0.3;
  int delay_min_ms = 200;
  int delay_max_ms = 500;
  double delay_attenuation = 0.5;

  double p_pitch = 0.3;
  int pitch_min_semitones = -5;
  int pitch_max_semitones = 5;

  void validate() const;
  /// Every probability set to zero.
  static AugmentationConfig none();
};

std::size_t frame_count(std::size_t n_samples, std::size_t n_fft, std::size_t hop);

std::pair<Waveform, Waveform> sample_two_segments(const Waveform& w, std::size_t seg_len, Rng& rng);

/// Applies polarity, noise, gain, filter, delay, pitch shift in that order,
/// each with its own probability. Output length equals input length.
Waveform augment(const Waveform& w, const AugmentationConfig& cfg, Rng& rng);

// Individual transforms, exposed for testing and reuse.
void invert_polarity(std::vector<double>& x);
void apply_gain_db(std::vector<double>& x, double gain_db);
void add_noise_snr(std::vector<double>& x, double snr_db, Rng& rng);
void first_order_lowpass(std::vector<double>& x, double cutoff_hz, int sample_rate);
void first_order_highpass(std::vector<double>& x, double cutoff_hz, int sample_rate);
void add_delay(std::vector<double>& x, std::size_t delay_samples, double attenuation);
void pitch_shift(std::vector<double>& x, int semitones);

std::vector<double> make_window(Window kind, std::size_t n);

Spectrum stft(const Waveform& w, std::size_t n_fft, std::size_t hop, Window window);

FilterBank mel_filterbank(std::size_t n_mels, std::size_t n_fft, int sample_rate);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Power spectrum mapped through the mel bank: frames x n_mels, no log.
Tensor mel_energies(const Waveform& w, const SpectrogramConfig& cfg);

/// log(mel energy + eps), frames x n_mels.
FrameMatrix log_mel(const Waveform& w, const SpectrogramConfig& cfg);

}  // namespace pemr::dsp
