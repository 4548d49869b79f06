#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pemr/autodiff.hpp"
#include "pemr/rng.hpp"

namespace pemr::ad {

struct Parameter {
  std::string name;
  Var var;
  bool trainable = true;
};

/// Owns the named parameters of a model. Names are unique.
class ParameterStore {
 public:
  Var add(std::string name, Tensor init, bool trainable = true);
  /// Glorot-uniform initialised weight of the given shape.
  Var add_glorot(std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
  Var add_constant(std::string name, Shape shape, double value);

  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params() { return params_; }
  const Parameter* find(const std::string& name) const;
  std::size_t count_values() const;

  void zero_grad();
  void append(const ParameterStore& other);

 private:
  std::vector<Parameter> params_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

/// Adam with bias correction and decoupled weight decay
/// (value <- value - lr * wd * value, then the Adam update).
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One update over every trainable parameter. Throws DivergenceError before
  /// touching anything if a gradient is non-finite.
  void step(std::vector<Parameter>& params);

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return t_; }

  // Moment state, index-aligned with the parameter list; exposed for checkpoints.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void restore(std::uint64_t t, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace pemr::ad
