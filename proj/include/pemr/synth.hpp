#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pemr/dsp.hpp"
#include "pemr/rng.hpp"

// Synthetic audio for desk-scale experiments.
namespace pemr::synth {

/// Filter, delay and pitch nuisances at probability 0.7 each, plus the
/// default noise and gain draws. Polarity is left out.
dsp::AugmentationConfig default_nuisance();

struct ToneConfig {
  int sample_rate = 16000;
  std::size_t clip_len = 8192;
  double f0_min_hz = 110.0;
  double f0_max_hz = 660.0;
  double note_min_s = 0.06;
  double note_max_s = 0.25;
  std::size_t harmonics = 10;
  double gain_min_db = -20.0;
  double gain_max_db = 0.0;
  double snr_min_db = 0.0;
  double snr_max_db = 30.0;
  double template_jitter = 0.6;  // relative per-clip perturbation of harmonic amplitudes
  // Within-clip nuisance: every note gets its own level and octave offset,
  // and the noise floor changes every noise_block_s seconds.
  double note_gain_min_db = -24.0;
  int octave_spread = 1;
  double noise_block_s = 0.1;
  // When true, genre 1 also gets a percussive envelope. Off by default so
  // that only the harmonic templates differ.
  bool genre_envelopes = false;
  // Clip-level transforms drawn from the augmentation family, applied after
  // rendering.
  dsp::AugmentationConfig nuisance = default_nuisance();
};

/// Genre g has its own harmonic template and envelope; pitch, loudness and
/// noise level vary from note to note and carry no label information.
dsp::Waveform genre_clip(int genre, const ToneConfig& cfg, Rng& rng);

struct LabeledClips {
  std::vector<dsp::Waveform> clips;
  std::vector<int> labels;
};

/// n clips alternating between genres 0 and 1.
LabeledClips genre_dataset(std::size_t n, const ToneConfig& cfg, std::uint64_t seed);

/// Every clique shares a melody and timbre; versions differ in tempo
/// (+-15%), transposition (+-2 semitones), gain and noise.
LabeledClips cover_dataset(std::size_t cliques, std::size_t versions, const ToneConfig& cfg, std::uint64_t seed);

/// Writes clip_NNNN.wav files plus labels.csv (file,label,split).
void write_dataset(const std::filesystem::path& dir, const LabeledClips& data, const std::vector<std::string>& split);

struct LabeledFile {
  std::filesystem::path path;
  std::vector<int> labels;  // one entry for single-class rows; several for "a|b" tag lists
  std::string split;
};

/// Reads labels.csv in dir (header file,label[,split]).
std::vector<LabeledFile> read_labels(const std::filesystem::path& dir);

}  // namespace pemr::synth
