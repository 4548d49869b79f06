#include "pemr/optim.hpp"

#include <cmath>

#include "pemr/error.hpp"

namespace pemr::ad {

Var ParameterStore::add(std::string name, Tensor init, bool trainable) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Var v = Var::leaf(std::move(init), trainable);
  params_.push_back({std::move(name), v, trainable});
  return v;
}

Var ParameterStore::add_glorot(std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return add(std::move(name), std::move(t));
}

Var ParameterStore::add_constant(std::string name, Shape shape, double value) {
  return add(std::move(name), Tensor(std::move(shape), value));
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParameterStore::count_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

void ParameterStore::append(const ParameterStore& other) {
  for (const auto& p : other.params_) {
    if (find(p.name)) throw ConfigError("duplicate parameter name '" + p.name + "'");
    params_.push_back(p);
  }
}

void Adam::restore(std::uint64_t t, std::vector<Tensor> m, std::vector<Tensor> v) {
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

void Adam::step(std::vector<Parameter>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.var.value().shape(), 0.0);
      v_.emplace_back(p.var.value().shape(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ConfigError("optimizer state does not match the parameter list");
  for (const auto& p : params) {
    if (!p.trainable) continue;
    for (double g : p.var.grad().values()) {
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    Tensor& w = p.var.mutable_value();
    const Tensor& g = p.var.grad();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      w[k] -= cfg_.lr * cfg_.weight_decay * w[k];
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace pemr::ad
