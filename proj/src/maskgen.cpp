#include "pemr/maskgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pemr/error.hpp"

namespace pemr::maskgen {

namespace {

std::vector<double> softmax(const std::vector<double>& x) {
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (out[i] = std::exp(x[i] - mx));
  for (double& v : out) v /= z;
  return out;
}

std::vector<double> logits(const Tensor& query, const Tensor& keys, double inv_sqrt_d) {
  const std::size_t L = keys.rows(), D = keys.cols();
  std::vector<double> out(L);
  for (std::size_t l = 0; l < L; ++l) {
    double acc = 0.0;
    for (std::size_t j = 0; j < D; ++j) acc += query[j] * keys.at(l, j);
    out[l] = acc * inv_sqrt_d;
  }
  return out;
}

}  // namespace

std::size_t MaskMatrix::dropped() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), false));
}

FrameScores frame_scores(std::span<const Tensor> q1, std::span<const Tensor> q2, std::span<const Tensor> keys) {
  const std::size_t H = keys.size();
  if (H == 0 || q1.size() != H || q2.size() != H) {
    throw ShapeError("frame_scores: head counts differ (" + std::to_string(q1.size()) + ", " +
                     std::to_string(q2.size()) + ", " + std::to_string(H) + ")");
  }
  const std::size_t L = keys[0].rows(), D = keys[0].cols();
  for (std::size_t h = 0; h < H; ++h) {
    if (keys[h].rank() != 2 || keys[h].rows() != L || keys[h].cols() != D || q1[h].size() != D ||
        q2[h].size() != D) {
      throw ShapeError("frame_scores: head " + std::to_string(h) + " has query/key dims inconsistent with [" +
                       std::to_string(L) + ", " + std::to_string(D) + "] keys");
    }
  }
  if (L == 0) throw ShapeError("frame_scores: no frames");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));
  FrameScores out{std::vector<double>(L, 0.0), H};
  for (std::size_t h = 0; h < H; ++h) {
    const auto a = softmax(logits(q1[h], keys[h], inv_sqrt_d));
    const auto b = softmax(logits(q2[h], keys[h], inv_sqrt_d));
    for (std::size_t l = 0; l < L; ++l) out.s[l] += 0.5 * (a[l] + b[l]);
  }
  return out;
}

std::size_t drop_count(std::size_t length, double ratio) {
  if (length < 2) throw ShapeError("mask needs at least 2 frames to form positive and negative views");
  const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(length)));
  return std::clamp<std::size_t>(k, 1, length - 1);
}

MaskMatrix positive_mask(const FrameScores& scores, double ratio) {
  const std::size_t L = scores.length();
  if (L < 2) {
    throw DegenerateError("positive_mask: degenerate sequence of " + std::to_string(L) +
                     " frame(s); need at least 2 for non-empty positive and negative views");
  }
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in (0, 1)");
  const std::size_t k = drop_count(L, ratio);
  std::vector<std::size_t> order(L);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores.s[a] < scores.s[b]; });
  MaskMatrix m{std::vector<bool>(L, true), ratio, scores.s[order[k]]};
  for (std::size_t i = 0; i < k; ++i) m.keep[order[i]] = false;
  return m;
}

MaskMatrix negative_mask(const MaskMatrix& mask) {
  MaskMatrix out = mask;
  out.keep.flip();
  return out;
}

dsp::FrameMatrix apply_mask(const dsp::FrameMatrix& frames, const MaskMatrix& mask) {
  if (frames.length() != mask.length()) {
    throw ShapeError("apply_mask: " + std::to_string(frames.length()) + " frames vs mask of length " +
                     std::to_string(mask.length()));
  }
  Tensor out = frames.frames();
  const std::size_t D = frames.bins();
  for (std::size_t l = 0; l < mask.length(); ++l) {
    if (!mask.keep[l]) std::fill_n(out.data() + l * D, D, 0.0);
  }
  return dsp::FrameMatrix(std::move(out));
}

}  // namespace pemr::maskgen
