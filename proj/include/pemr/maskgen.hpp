#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pemr/dsp.hpp"
#include "pemr/tensor.hpp"

namespace pemr::maskgen {

/// Per-frame importance of branch-2 frames, summed over heads (sums to H).
struct FrameScores {
  std::vector<double> s;
  std::size_t heads = 0;
  std::size_t length() const { return s.size(); }
};

/// Row-level keep/drop decision for an L-frame sequence.
struct MaskMatrix {
  std::vector<bool> keep;
  double ratio = 0.0;
  double threshold = 0.0;

  std::size_t length() const { return keep.size(); }
  std::size_t dropped() const;
};

/// s = 1/2 sum_h [softmax(q1_h . K_h^T / sqrt(D)) + softmax(q2_h . K_h^T / sqrt(D))].
/// Queries are the last-layer [CLS] queries of each branch (length D per
/// head); keys are branch-2 frame keys, one [L, D] matrix per head.
FrameScores frame_scores(std::span<const Tensor> cls_query_branch1, std::span<const Tensor> cls_query_branch2,
                         std::span<const Tensor> keys_branch2);

/// Number of frames a ratio drops: round(r * L) clamped to [1, L - 1].
std::size_t drop_count(std::size_t length, double ratio);

/// Drops the drop_count(L, r) lowest-scoring frames; ties drop the lower
/// index first. threshold is the (k+1)-th smallest score.
MaskMatrix positive_mask(const FrameScores& scores, double ratio);

MaskMatrix negative_mask(const MaskMatrix& mask);

/// Dropped rows become zero vectors; kept rows are copied.
dsp::FrameMatrix apply_mask(const dsp::FrameMatrix& frames, const MaskMatrix& mask);

}  // namespace pemr::maskgen
