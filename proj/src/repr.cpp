#include "pemr/repr.hpp"

#include <string>

#include "pemr/error.hpp"

namespace pemr::repr {

void EncoderConfig::validate() const {
  for (auto c : channels)
    if (c == 0) throw ConfigError("encoder channel widths must be positive");
  for (auto [t, f] : pools)
    if (t == 0 || f == 0) throw ConfigError("encoder pooling windows must be positive");
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("encoder kernel must be odd and positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0) || !(bn_eps > 0.0)) {
    throw ConfigError("batch-norm momentum must be in (0, 1] and eps positive");
  }
}

std::size_t EncoderConfig::min_length() const {
  std::size_t n = 1;
  for (auto [t, f] : pools) n *= t;
  return n;
}

std::size_t EncoderConfig::min_bins() const {
  std::size_t n = 1;
  for (auto [t, f] : pools) n *= f;
  return n;
}

Tensor stack_frames(std::span<const dsp::FrameMatrix> batch) {
  if (batch.empty()) throw ShapeError("stack_frames: empty batch");
  const std::size_t L = batch[0].length(), D = batch[0].bins();
  Tensor out(Shape{batch.size(), 1, L, D});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].length() != L || batch[b].bins() != D) {
      throw ShapeError("stack_frames: example " + std::to_string(b) + " is " + std::to_string(batch[b].length()) +
                       "x" + std::to_string(batch[b].bins()) + ", expected " + std::to_string(L) + "x" +
                       std::to_string(D));
    }
    std::copy_n(batch[b].frames().data(), L * D, out.data() + b * L * D);
  }
  return out;
}

FcnEncoder::FcnEncoder(const EncoderConfig& cfg, std::size_t n_bins, Rng& rng) : cfg_(cfg), n_bins_(n_bins) {
  cfg_.validate();
  if (n_bins < cfg_.min_bins()) {
    throw ConfigError("encoder: " + std::to_string(n_bins) + " mel bins cannot pass the pooling pyramid (minimum " +
                      std::to_string(cfg_.min_bins()) + ")");
  }
  const std::size_t k = cfg_.kernel;
  std::size_t in_ch = 1;
  for (std::size_t i = 0; i < kConvBlocks; ++i) {
    const std::string p = "encoder.block" + std::to_string(i) + ".";
    const std::size_t out_ch = cfg_.channels[i];
    // He-uniform suits the ReLU that follows each block
    const double limit = std::sqrt(6.0 / static_cast<double>(in_ch * k * k));
    Tensor w(Shape{out_ch, in_ch, k, k});
    for (double& v : w.values()) v = rng.uniform(-limit, limit);
    conv_w_.push_back(params_.add(p + "conv.w", std::move(w)));
    conv_b_.push_back(params_.add_constant(p + "conv.b", {out_ch}, 0.0));
    bn_gain_.push_back(params_.add_constant(p + "bn.gain", {out_ch}, 1.0));
    bn_bias_.push_back(params_.add_constant(p + "bn.bias", {out_ch}, 0.0));
    bn_.push_back({Tensor(Shape{out_ch}, 0.0), Tensor(Shape{out_ch}, 1.0), cfg_.bn_momentum, cfg_.bn_eps});
    in_ch = out_ch;
  }
  out_w_ = params_.add_glorot("encoder.out.w", {in_ch, kRepresentationDim}, in_ch, kRepresentationDim, rng);
  out_b_ = params_.add_constant("encoder.out.b", {kRepresentationDim}, 0.0);
}

Var FcnEncoder::encode(const Var& batch, bool training, bool update_stats, std::vector<Var>* conv_trace) {
  const Shape& s = batch.shape();
  if (s.size() != 4 || s[1] != 1) throw ShapeError("fcn_encode: expected [B, 1, L, D], got " + shape_string(s));
  if (s[3] != n_bins_) {
    throw ShapeError("fcn_encode: input has " + std::to_string(s[3]) + " bins, encoder expects " +
                     std::to_string(n_bins_));
  }
  if (s[2] < cfg_.min_length()) {
    throw InsufficientAudioError("fcn_encode: " + std::to_string(s[2]) + " frames is too short; minimum L is " +
                                 std::to_string(cfg_.min_length()));
  }
  Var x = batch;
  for (std::size_t i = 0; i < kConvBlocks; ++i) {
    Var c = ad::conv2d(x, conv_w_[i], conv_b_[i], 1, cfg_.kernel / 2);
    if (conv_trace) conv_trace->push_back(c);
    x = ad::relu(ad::batch_norm(c, bn_gain_[i], bn_bias_[i], bn_[i], training, update_stats));
    x = ad::maxpool2d(x, cfg_.pools[i].first, cfg_.pools[i].second);
  }
  return ad::add_row_bias(ad::matmul(ad::global_max_pool(x), out_w_), out_b_);
}

Tensor FcnEncoder::encode_eval(std::span<const dsp::FrameMatrix> batch) {
  return encode(Var::constant(stack_frames(batch)), false).value();
}

ProjectionHead::ProjectionHead(Rng& rng) {
  w1_ = params_.add_glorot("projection.w1", {kRepresentationDim, kRepresentationDim}, kRepresentationDim,
                           kRepresentationDim, rng);
  b1_ = params_.add_constant("projection.b1", {kRepresentationDim}, 0.0);
  w2_ = params_.add_glorot("projection.w2", {kRepresentationDim, kProjectionDim}, kRepresentationDim,
                           kProjectionDim, rng);
  b2_ = params_.add_constant("projection.b2", {kProjectionDim}, 0.0);
}

Var ProjectionHead::project(const Var& reps) const {
  if (reps.value().rank() != 2 || reps.shape()[1] != kRepresentationDim) {
    throw ShapeError("project: expected [B, 512] representations, got " + shape_string(reps.shape()));
  }
  return ad::add_row_bias(ad::matmul(ad::relu(ad::add_row_bias(ad::matmul(reps, w1_), b1_)), w2_), b2_);
}

}  // namespace pemr::repr
