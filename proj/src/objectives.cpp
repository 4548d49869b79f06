#include "pemr/objectives.hpp"

#include <cmath>
#include <string>

#include "pemr/error.hpp"

namespace pemr::objectives {

namespace {

Var identity_like(const Var& m, const char* op) {
  const Shape& s = m.shape();
  if (s.size() != 2 || s[0] != s[1]) {
    throw ShapeError(std::string(op) + ": expected a square matrix, got " + shape_string(s));
  }
  Tensor eye = Tensor::matrix(s[0], s[0]);
  for (std::size_t i = 0; i < s[0]; ++i) eye.at(i, i) = 1.0;
  return Var::constant(std::move(eye));
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

Var pred_loss(const Tensor& original, const Var& prediction, std::span<const std::size_t> masked) {
  if (masked.empty()) throw ConfigError("pred_loss: no masked frames");
  if (original.shape() != prediction.shape()) {
    throw ShapeError("pred_loss: original " + shape_string(original.shape()) + " vs prediction " +
                     shape_string(prediction.shape()));
  }
  Var diff = ad::sub(Var::constant(original), prediction);
  return ad::sum(ad::smooth_l1(ad::select_rows(diff, masked)));
}

CrossCorrelation cross_correlation(const Var& a, const Var& b) {
  if (a.shape() != b.shape() || a.value().rank() != 2) {
    throw ShapeError("cross_correlation: batches must share a [B, D] shape, got " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  const std::size_t batch = a.shape()[0];
  if (batch < 2) throw DegenerateError("cross_correlation: degenerate batch of size " + std::to_string(batch));
  Var an = ad::standardize_columns(a);
  Var bn = ad::standardize_columns(b);
  CrossCorrelation out;
  for (const Var* z : {&an, &bn}) {
    const std::size_t d = z->shape()[1];
    for (std::size_t j = 0; j < d; ++j) {
      bool zero = true;
      for (std::size_t i = 0; i < batch && zero; ++i) zero = z->value()[i * d + j] == 0.0;
      out.zero_variance_features += zero ? 1 : 0;
    }
  }
  out.matrix = ad::scale(ad::matmul(ad::transpose(an), bn), 1.0 / static_cast<double>(batch));
  return out;
}

Var l_pos(const Var& u, double lambda) {
  Var eye = identity_like(u, "l_pos");
  Var diag = ad::mul(u, eye);
  Var on = ad::sum(ad::square(ad::sub(eye, diag)));
  Var off = ad::sum(ad::square(ad::sub(u, diag)));
  return ad::add(on, ad::scale(off, lambda));
}

Var l_neg(const Var& v, double lambda) {
  Var eye = identity_like(v, "l_neg");
  return ad::scale(ad::sum(ad::square(ad::mul(v, eye))), lambda);
}

Var total_loss(const Var& pred, const Var& pos, const Var& neg) {
  const std::pair<const char*, const Var*> parts[] = {{"l_pred", &pred}, {"l_pos", &pos}, {"l_neg", &neg}};
  for (auto [name, v] : parts) {
    if (!std::isfinite(v->item())) {
      throw DivergenceError(std::string("non-finite loss component ") + name + " = " + std::to_string(v->item()));
    }
  }
  return ad::add(ad::add(pred, pos), neg);
}

double l_pos(const Tensor& u, double lambda) { return l_pos(Var::constant(u), lambda).item(); }
double l_neg(const Tensor& v, double lambda) { return l_neg(Var::constant(v), lambda).item(); }
Tensor cross_correlation(const Tensor& a, const Tensor& b) {
  return cross_correlation(Var::constant(a), Var::constant(b)).matrix.value();
}

}  // namespace pemr::objectives
