#pragma once

#include <cstddef>
#include <vector>

#include "pemr/autodiff.hpp"
#include "pemr/dsp.hpp"
#include "pemr/optim.hpp"
#include "pemr/rng.hpp"

namespace pemr::attention {

using ad::Var;

struct TransformerConfig {
  std::size_t n_layers = 3;
  std::size_t n_heads = 3;
  std::size_t model_dim = 128;
  std::size_t ffn_hidden = 0;  // 0: same as model_dim
  // Frame masking for the reconstruction task.
  double select_prob = 0.15;
  double mask_token_prob = 0.8;
  double random_frame_prob = 0.1;

  std::size_t hidden() const { return ffn_hidden == 0 ? model_dim : ffn_hidden; }
  void validate() const;
};

/// Weights of one encoder layer. Every head projects with full D x D
/// matrices; the concatenated heads are H*D wide.
struct LayerWeights {
  std::vector<Var> wq, wk, wv;  // per head, [D, D]
  Var wo;                       // [H*D, D]
  Var w1, b1, w2, b2;           // [D, F], [F], [F, D], [D]
  Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

/// Row 0..L positions (position 0 belongs to [CLS]); even dims use sin, odd cos.
Tensor sinusoidal_positions(std::size_t n_positions, std::size_t dim);

struct AttentionOutput {
  Var output;                    // [(L+1), D], after the concat projection
  std::vector<Var> queries;      // per head [(L+1), D]
  std::vector<Var> keys;         // per head [(L+1), D]
  std::vector<Tensor> weights;   // per head [(L+1), (L+1)] softmax rows
};

AttentionOutput multi_head_attention(const Var& x, const LayerWeights& w);

/// ReLU(Y W1 + b1) W2 + b2, row-wise.
Var ffn(const Var& y, const LayerWeights& w);

/// Last-layer values consumed by the mask generator.
struct LastLayerCache {
  std::vector<Tensor> cls_query;   // per head, length D
  std::vector<Tensor> frame_keys;  // per head, [L, D]
};

struct EncodeResult {
  Var output;  // P, [(L+1), D]
  LastLayerCache last;
  std::vector<std::vector<Tensor>> attention;  // [layer][head]
};

/// Stack of post-norm layers: Z = LN(X + MHA(X)), X' = LN(Z + FFN(Z)).
EncodeResult encode(const Var& tokens, const std::vector<LayerWeights>& layers);

enum class MaskAction { kMaskToken, kRandomFrame, kKeep };

/// Frame positions chosen for reconstruction. Positions index frames
/// 0..L-1 of F, i.e. token rows 1..L; the [CLS] row is never selected.
struct MaskRecord {
  std::vector<std::size_t> positions;
  std::vector<MaskAction> actions;
  std::vector<std::size_t> sources;  // donor frame for kRandomFrame, else the position itself
  Tensor originals;                  // [|I|, D]
};

struct MaskedFrames {
  dsp::FrameMatrix disturbed;  // kMaskToken rows are zero here; the model injects its embedding
  MaskRecord record;
};

MaskedFrames random_mask(const dsp::FrameMatrix& frames, const TransformerConfig& cfg, Rng& rng);

/// The transformer with [CLS] and mask embeddings plus the reconstruction head.
class PredictingModule {
 public:
  PredictingModule(const TransformerConfig& cfg, Rng& init_rng);

  const TransformerConfig& config() const { return cfg_; }
  ad::ParameterStore& parameters() { return params_; }
  const ad::ParameterStore& parameters() const { return params_; }
  const std::vector<LayerWeights>& layers() const { return layers_; }

  /// Tokens X = (c, x_1..x_L) + positions, with mask-token rows replaced by
  /// the learned mask embedding.
  Var embed(const MaskedFrames& masked) const;
  /// Tokens for an undisturbed frame sequence.
  Var embed(const dsp::FrameMatrix& frames) const;

  EncodeResult encode(const Var& tokens) const { return attention::encode(tokens, layers_); }

  /// Position-wise head over rows 1..L of P: [L, D].
  Var predict_masked(const Var& encoded) const;

 private:
  Var embed_impl(const Tensor& frames, const std::vector<std::size_t>& mask_rows) const;

  TransformerConfig cfg_;
  ad::ParameterStore params_;
  Var cls_, mask_embedding_;
  std::vector<LayerWeights> layers_;
  Var head_w1_, head_b1_, head_w2_, head_b2_;
};

}  // namespace pemr::attention
