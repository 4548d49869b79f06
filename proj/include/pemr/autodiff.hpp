#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pemr/tensor.hpp"

// Minimal reverse-mode differentiation over dense double tensors.
//
// Every operation allocates a fresh node; nothing is mutated in place during
// the forward pass. Leaves created with requires_grad accumulate gradients
// across backward() calls until zero_grad(). Interior gradients exist only
// while backward() runs.
namespace pemr::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until first touched by backward
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  const char* op = "leaf";

  Tensor& grad_ref();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// Leaf that does not participate in differentiation.
  static Var constant(Tensor value);
  /// Trainable leaf.
  static Var leaf(Tensor value, bool requires_grad = true);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad_ref(); }
  Tensor& mutable_grad() { return node_->grad_ref(); }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  double item() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

// Elementwise (identical shapes).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& x);
Var square(const Var& x);
Var smooth_l1(const Var& x);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

/// 2-D [m,k] x [k,n].
Var matmul(const Var& a, const Var& b);
/// 2-D transpose.
Var transpose(const Var& x);
/// x [m,n] plus bias [n] broadcast over rows.
Var add_row_bias(const Var& x, const Var& bias);

Var softmax(const Var& x, std::size_t axis);

Var sum(const Var& x);
Var mean(const Var& x);

Var reshape(const Var& x, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Picks entries along axis 0 (repeats allowed).
Var select_rows(const Var& x, std::span<const std::size_t> rows);

/// x [N,C,H,W], w [O,C,kh,kw], b [O] -> [N,O,H',W'].
Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t padding);
/// Non-overlapping max pooling (stride = kernel, floor mode).
Var maxpool2d(const Var& x, std::size_t kh, std::size_t kw);
/// [N,C,H,W] -> [N,C], max over H and W.
Var global_max_pool(const Var& x);

/// Row-wise normalisation of a 2-D input with learned gain and bias [D].
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalisation of [N,C,H,W]. Training mode normalises with
/// batch statistics and (unless update_running is false) updates the running
/// estimates; evaluation mode uses
/// the running estimates.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training,
               bool update_running = true);

/// Column standardisation over the batch axis of [B,D] (population variance).
/// Columns whose standard deviation is below eps become all-zero and pass no
/// gradient.
Var standardize_columns(const Var& x, double eps = 1e-9);

/// Cuts the graph: same value, no gradient path.
Var detach(const Var& x);

/// Reverse pass from a single-element loss.
void backward(const Var& loss);

}  // namespace pemr::ad
