#pragma once

#include <cstddef>
#include <span>

#include "pemr/autodiff.hpp"
#include "pemr/tensor.hpp"

namespace pemr::objectives {

using ad::Var;

struct LossConfig {
  double lambda = 0.005;
  void validate() const;
};

/// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
double smooth_l1(double x);

/// Sum over masked frame rows i and bins j of smooth_l1(X_ij - P_ij).
/// `masked` holds frame (row) indices into X and P.
Var pred_loss(const Tensor& original, const Var& prediction, std::span<const std::size_t> masked);

struct CrossCorrelation {
  Var matrix;                           // [D_p, D_p]
  std::size_t zero_variance_features = 0;  // columns standardised to zero
};

/// Columns of a and b standardised over the batch, then U = a^T b / B.
CrossCorrelation cross_correlation(const Var& a, const Var& b);

/// sum_i (1 - U_ii)^2 + lambda * sum_{i != j} U_ij^2
Var l_pos(const Var& u, double lambda);
/// lambda * sum_i V_ii^2
Var l_neg(const Var& v, double lambda);

/// Unweighted sum; throws DivergenceError naming the first non-finite term.
Var total_loss(const Var& pred, const Var& pos, const Var& neg);

// Value-level conveniences over the same graph code.
double l_pos(const Tensor& u, double lambda);
double l_neg(const Tensor& v, double lambda);
Tensor cross_correlation(const Tensor& a, const Tensor& b);

}  // namespace pemr::objectives
