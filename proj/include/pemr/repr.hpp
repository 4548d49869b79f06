#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "pemr/autodiff.hpp"
#include "pemr/dsp.hpp"
#include "pemr/optim.hpp"
#include "pemr/rng.hpp"

namespace pemr::repr {

using ad::Var;

inline constexpr std::size_t kConvBlocks = 4;
inline constexpr std::size_t kRepresentationDim = 512;
inline constexpr std::size_t kProjectionDim = 256;

struct EncoderConfig {
  std::array<std::size_t, kConvBlocks> channels{64, 128, 128, 64};
  // (time, frequency) pooling window per block
  std::array<std::pair<std::size_t, std::size_t>, kConvBlocks> pools{{{2, 2}, {2, 2}, {2, 2}, {2, 2}}};
  std::size_t kernel = 3;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  void validate() const;
  std::size_t min_length() const;
  std::size_t min_bins() const;
};

/// Stacks B frame matrices of equal shape into a [B, 1, L, D] tensor.
Tensor stack_frames(std::span<const dsp::FrameMatrix> batch);

/// Four conv(3x3) -> batch norm -> ReLU -> max-pool blocks, a global max over
/// the remaining time-frequency grid, and a linear map to 512 dimensions.
class FcnEncoder {
 public:
  FcnEncoder(const EncoderConfig& cfg, std::size_t n_bins, Rng& init_rng);

  /// batch: [B, 1, L, D] -> [B, 512]. In training mode, running batch-norm
  /// statistics are only updated when update_stats is set. Pre-normalisation
  /// conv outputs are appended to conv_trace when given.
  Var encode(const Var& batch, bool training, bool update_stats = true, std::vector<Var>* conv_trace = nullptr);
  Tensor encode_eval(std::span<const dsp::FrameMatrix> batch);

  const EncoderConfig& config() const { return cfg_; }
  std::size_t bins() const { return n_bins_; }
  ad::ParameterStore& parameters() { return params_; }
  const ad::ParameterStore& parameters() const { return params_; }
  std::vector<ad::BatchNormState>& bn_states() { return bn_; }
  const std::vector<ad::BatchNormState>& bn_states() const { return bn_; }

 private:
  EncoderConfig cfg_;
  std::size_t n_bins_;
  ad::ParameterStore params_;
  std::vector<Var> conv_w_, conv_b_, bn_gain_, bn_bias_;
  std::vector<ad::BatchNormState> bn_;
  Var out_w_, out_b_;
};

/// linear(512 -> 512) -> ReLU -> linear(512 -> 256).
class ProjectionHead {
 public:
  explicit ProjectionHead(Rng& init_rng);

  Var project(const Var& representations) const;

  ad::ParameterStore& parameters() { return params_; }
  const ad::ParameterStore& parameters() const { return params_; }

 private:
  ad::ParameterStore params_;
  Var w1_, b1_, w2_, b2_;
};

}  // namespace pemr::repr
