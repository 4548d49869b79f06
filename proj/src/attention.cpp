#include "pemr/attention.hpp"

#include <cmath>
#include <string>

#include "pemr/error.hpp"

namespace pemr::attention {

void TransformerConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || model_dim < 1) {
    throw ConfigError("transformer needs at least one layer, head, model dim and hidden unit");
  }
  if (!(select_prob > 0.0 && select_prob <= 1.0)) throw ConfigError("mask selection probability must be in (0, 1]");
  if (mask_token_prob < 0.0 || random_frame_prob < 0.0 || mask_token_prob + random_frame_prob > 1.0) {
    throw ConfigError("mask action probabilities must be non-negative and sum to at most 1");
  }
}

Tensor sinusoidal_positions(std::size_t n_positions, std::size_t dim) {
  Tensor pe = Tensor::matrix(n_positions, dim);
  for (std::size_t pos = 0; pos < n_positions; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double pair = static_cast<double>(i - i % 2);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, pair / static_cast<double>(dim));
      pe.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

AttentionOutput multi_head_attention(const Var& x, const LayerWeights& w) {
  const std::size_t heads = w.wq.size();
  if (heads == 0 || w.wk.size() != heads || w.wv.size() != heads) {
    throw ShapeError("multi_head_attention: inconsistent head count");
  }
  const double d = static_cast<double>(x.shape().at(1));
  const double inv_sqrt_d = 1.0 / std::sqrt(d);
  AttentionOutput out;
  std::vector<Var> head_outputs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var q = ad::matmul(x, w.wq[h]);
    Var k = ad::matmul(x, w.wk[h]);
    Var v = ad::matmul(x, w.wv[h]);
    Var a = ad::softmax(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_d), 1);
    out.weights.push_back(a.value());
    head_outputs.push_back(ad::matmul(a, v));
    out.queries.push_back(q);
    out.keys.push_back(k);
  }
  out.output = ad::matmul(heads == 1 ? head_outputs[0] : ad::concat(head_outputs, 1), w.wo);
  return out;
}

Var ffn(const Var& y, const LayerWeights& w) {
  return ad::add_row_bias(ad::matmul(ad::relu(ad::add_row_bias(ad::matmul(y, w.w1), w.b1)), w.w2), w.b2);
}

EncodeResult encode(const Var& tokens, const std::vector<LayerWeights>& layers) {
  if (tokens.value().rank() != 2 || tokens.shape()[0] < 2) {
    throw ShapeError("encode: expected [(L+1), D] tokens with L >= 1, got " + shape_string(tokens.shape()));
  }
  EncodeResult res;
  Var x = tokens;
  for (std::size_t n = 0; n < layers.size(); ++n) {
    const auto& w = layers[n];
    auto att = multi_head_attention(x, w);
    Var z = ad::layer_norm(ad::add(x, att.output), w.ln1_gain, w.ln1_bias);
    x = ad::layer_norm(ad::add(z, ffn(z, w)), w.ln2_gain, w.ln2_bias);
    if (n + 1 == layers.size()) {
      const std::size_t rows = tokens.shape()[0], dim = tokens.shape()[1];
      for (std::size_t h = 0; h < att.queries.size(); ++h) {
        const Tensor& q = att.queries[h].value();
        const Tensor& k = att.keys[h].value();
        res.last.cls_query.emplace_back(Shape{dim}, std::vector<double>(q.data(), q.data() + dim));
        res.last.frame_keys.emplace_back(Shape{rows - 1, dim},
                                         std::vector<double>(k.data() + dim, k.data() + rows * dim));
      }
    }
    res.attention.push_back(std::move(att.weights));
  }
  res.output = x;
  return res;
}

MaskedFrames random_mask(const dsp::FrameMatrix& frames, const TransformerConfig& cfg, Rng& rng) {
  const std::size_t L = frames.length(), D = frames.bins();
  MaskRecord rec;
  for (std::size_t i = 0; i < L; ++i)
    if (rng.bernoulli(cfg.select_prob)) rec.positions.push_back(i);
  if (rec.positions.empty()) rec.positions.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(L) - 1)));

  Tensor disturbed = frames.frames();
  rec.originals = Tensor::matrix(rec.positions.size(), D);
  for (std::size_t r = 0; r < rec.positions.size(); ++r) {
    const std::size_t pos = rec.positions[r];
    std::copy_n(frames.frames().data() + pos * D, D, rec.originals.data() + r * D);
    const double u = rng.uniform();
    MaskAction action = MaskAction::kKeep;
    std::size_t source = pos;
    if (u < cfg.mask_token_prob) {
      action = MaskAction::kMaskToken;
    } else if (u < cfg.mask_token_prob + cfg.random_frame_prob && L > 1) {
      action = MaskAction::kRandomFrame;
      // uniform over the other L-1 frames
      source = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(L) - 2));
      if (source >= pos) ++source;
    }
    rec.actions.push_back(action);
    rec.sources.push_back(source);
    if (action == MaskAction::kMaskToken) {
      std::fill_n(disturbed.data() + pos * D, D, 0.0);
    } else if (action == MaskAction::kRandomFrame) {
      std::copy_n(frames.frames().data() + source * D, D, disturbed.data() + pos * D);
    }
  }
  return {dsp::FrameMatrix(std::move(disturbed)), std::move(rec)};
}

PredictingModule::PredictingModule(const TransformerConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t D = cfg_.model_dim, F = cfg_.hidden(), H = cfg_.n_heads;
  auto small_normal = [&](std::size_t n) {
    Tensor t(Shape{n});
    for (double& v : t.values()) v = rng.normal(0.0, 0.02);
    return t;
  };
  cls_ = params_.add("transformer.cls", small_normal(D));
  mask_embedding_ = params_.add("transformer.mask_embedding", small_normal(D));
  for (std::size_t n = 0; n < cfg_.n_layers; ++n) {
    const std::string p = "transformer.layer" + std::to_string(n) + ".";
    LayerWeights w;
    for (std::size_t h = 0; h < H; ++h) {
      const std::string hp = p + "head" + std::to_string(h) + ".";
      w.wq.push_back(params_.add_glorot(hp + "wq", {D, D}, D, D, rng));
      w.wk.push_back(params_.add_glorot(hp + "wk", {D, D}, D, D, rng));
      w.wv.push_back(params_.add_glorot(hp + "wv", {D, D}, D, D, rng));
    }
    w.wo = params_.add_glorot(p + "wo", {H * D, D}, H * D, D, rng);
    w.w1 = params_.add_glorot(p + "ffn.w1", {D, F}, D, F, rng);
    w.b1 = params_.add_constant(p + "ffn.b1", {F}, 0.0);
    w.w2 = params_.add_glorot(p + "ffn.w2", {F, D}, F, D, rng);
    w.b2 = params_.add_constant(p + "ffn.b2", {D}, 0.0);
    w.ln1_gain = params_.add_constant(p + "ln1.gain", {D}, 1.0);
    w.ln1_bias = params_.add_constant(p + "ln1.bias", {D}, 0.0);
    w.ln2_gain = params_.add_constant(p + "ln2.gain", {D}, 1.0);
    w.ln2_bias = params_.add_constant(p + "ln2.bias", {D}, 0.0);
    layers_.push_back(std::move(w));
  }
  head_w1_ = params_.add_glorot("predict.w1", {D, D}, D, D, rng);
  head_b1_ = params_.add_constant("predict.b1", {D}, 0.0);
  head_w2_ = params_.add_glorot("predict.w2", {D, D}, D, D, rng);
  head_b2_ = params_.add_constant("predict.b2", {D}, 0.0);
}

Var PredictingModule::embed_impl(const Tensor& frames, const std::vector<std::size_t>& mask_rows) const {
  const std::size_t L = frames.rows(), D = frames.cols();
  if (D != cfg_.model_dim) {
    throw ShapeError("predicting module: frames have " + std::to_string(D) + " bins, model dim is " +
                     std::to_string(cfg_.model_dim));
  }
  Var body = Var::constant(frames);
  if (!mask_rows.empty()) {
    Tensor indicator = Tensor::matrix(L, 1);
    for (auto r : mask_rows) indicator.at(r, 0) = 1.0;
    body = ad::add(body, ad::matmul(Var::constant(std::move(indicator)), ad::reshape(mask_embedding_, {1, D})));
  }
  Var tokens = ad::concat({ad::reshape(cls_, {1, D}), body}, 0);
  return ad::add(tokens, Var::constant(sinusoidal_positions(L + 1, D)));
}

Var PredictingModule::embed(const MaskedFrames& masked) const {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < masked.record.positions.size(); ++r) {
    if (masked.record.actions[r] == MaskAction::kMaskToken) rows.push_back(masked.record.positions[r]);
  }
  return embed_impl(masked.disturbed.frames(), rows);
}

Var PredictingModule::embed(const dsp::FrameMatrix& frames) const { return embed_impl(frames.frames(), {}); }

Var PredictingModule::predict_masked(const Var& encoded) const {
  const std::size_t rows = encoded.shape().at(0);
  Var frames = ad::slice(encoded, 0, 1, rows);
  Var hidden = ad::relu(ad::add_row_bias(ad::matmul(frames, head_w1_), head_b1_));
  return ad::add_row_bias(ad::matmul(hidden, head_w2_), head_b2_);
}

}  // namespace pemr::attention
