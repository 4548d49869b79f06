#include <algorithm>
#include <numeric>

#include "pemr/error.hpp"
#include "pemr/eval.hpp"

namespace pemr::eval {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels, const char* what) {
  if (scores.size() != labels.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(scores.size()) + " scores but " +
                     std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw ConfigError(std::string(what) + ": labels must be 0 or 1");
  }
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels, "roc_auc");
  const std::size_t n = scores.size();
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("roc_auc: needs both positive and negative labels");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with mid-ranks for tied groups.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum += mid;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1) / 2) / (p * static_cast<double>(neg));
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels, "pr_auc");
  const std::size_t n = scores.size();
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (pos == 0) throw UndefinedMetricError("pr_auc: needs at least one positive label");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t gained = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      gained += static_cast<std::size_t>(labels[order[j]]);
      ++j;
    }
    tp += gained;
    if (gained) {
      ap += (static_cast<double>(gained) / static_cast<double>(pos)) *
            (static_cast<double>(tp) / static_cast<double>(j));
    }
    i = j;
  }
  return ap;
}

TagMetrics macro_metrics(const Tensor& scores, const Tensor& labels) {
  if (scores.rank() != 2 || !scores.same_shape(labels)) {
    throw ShapeError("macro_metrics: scores " + shape_string(scores.shape()) + " vs labels " +
                     shape_string(labels.shape()));
  }
  TagMetrics out;
  const std::size_t n = scores.rows();
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t t = 0; t < scores.cols(); ++t) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = scores.at(i, t);
      y[i] = labels.at(i, t) > 0.5 ? 1 : 0;
      pos += static_cast<std::size_t>(y[i]);
    }
    if (pos == 0 || pos == n) continue;
    out.roc_auc += roc_auc(s, y);
    out.pr_auc += pr_auc(s, y);
    ++out.tags_used;
  }
  if (out.tags_used == 0) throw UndefinedMetricError("macro_metrics: no tag has both positives and negatives");
  out.roc_auc /= static_cast<double>(out.tags_used);
  out.pr_auc /= static_cast<double>(out.tags_used);
  return out;
}

}  // namespace pemr::eval
