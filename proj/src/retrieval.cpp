#include <algorithm>
#include <cmath>
#include <numeric>

#include "pemr/error.hpp"
#include "pemr/eval.hpp"

namespace pemr::eval {

namespace {

bool is_self(const RetrievalSet& rs, std::size_t q, std::size_t r) {
  return !rs.query_ids.empty() && rs.query_ids[q] == rs.reference_ids[r];
}

}  // namespace

void RetrievalSet::validate() const {
  if (references.empty() || references.rank() != 2 || references.rows() == 0) {
    throw ConfigError("retrieval set has no references");
  }
  if (queries.rank() != 2 || queries.rows() == 0) throw ConfigError("retrieval set has no queries");
  if (queries.cols() != references.cols()) {
    throw ShapeError("query width " + std::to_string(queries.cols()) + " != reference width " +
                     std::to_string(references.cols()));
  }
  if (query_clique.size() != queries.rows() || reference_clique.size() != references.rows()) {
    throw ShapeError("clique ids must match the number of queries and references");
  }
  if ((!query_ids.empty() || !reference_ids.empty()) &&
      (query_ids.size() != queries.rows() || reference_ids.size() != references.rows())) {
    throw ShapeError("item ids must be given for every query and every reference");
  }
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    bool found = false;
    for (std::size_t r = 0; r < references.rows() && !found; ++r) {
      found = reference_clique[r] == query_clique[q] && !is_self(*this, q, r);
    }
    if (!found) {
      throw ConfigError("query " + std::to_string(q) + " (clique " + std::to_string(query_clique[q]) +
                        ") has no other member among the references");
    }
  }
}

std::vector<std::size_t> rank_references(const RetrievalSet& rs, std::size_t q, Similarity sim) {
  const std::size_t R = rs.references.rows();
  const auto qv = rs.queries.row(q);
  double qn = 1.0;
  if (sim == Similarity::kCosine) {
    qn = std::sqrt(std::inner_product(qv.begin(), qv.end(), qv.begin(), 0.0));
  }
  std::vector<double> score(R);
  std::vector<std::size_t> order;
  for (std::size_t r = 0; r < R; ++r) {
    if (is_self(rs, q, r)) continue;
    const auto rv = rs.references.row(r);
    double s = std::inner_product(qv.begin(), qv.end(), rv.begin(), 0.0);
    if (sim == Similarity::kCosine) {
      const double rn = std::sqrt(std::inner_product(rv.begin(), rv.end(), rv.begin(), 0.0));
      s = (qn > 0 && rn > 0) ? s / (qn * rn) : 0.0;
    }
    score[r] = s;
    order.push_back(r);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  return order;
}

RetrievalMetrics retrieval_eval(const RetrievalSet& rs, Similarity sim) {
  rs.validate();
  RetrievalMetrics out;
  const std::size_t Q = rs.queries.rows();
  for (std::size_t q = 0; q < Q; ++q) {
    const auto order = rank_references(rs, q, sim);
    std::size_t hits = 0, first = 0, top10 = 0;
    double ap = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (rs.reference_clique[order[i]] != rs.query_clique[q]) continue;
      ++hits;
      if (!first) first = i + 1;
      if (i < 10) ++top10;
      ap += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    out.map += ap / static_cast<double>(hits);
    out.precision_at_10 += static_cast<double>(top10) / 10.0;
    out.mr1 += static_cast<double>(first);
  }
  out.map /= static_cast<double>(Q);
  out.precision_at_10 /= static_cast<double>(Q);
  out.mr1 /= static_cast<double>(Q);
  return out;
}

}  // namespace pemr::eval
