#pragma once

// Minimal tape-free reverse-mode autodiff. Every op returns a Var owning its
// value plus a closure that pushes the output gradient into its inputs.
// Graphs are released when the last Var referencing them goes away.

#include <functional>
#include <memory>
#include <vector>

#include "afcv/core/tensor.hpp"

namespace afcv::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-initialized on first access.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  /// In-place access for optimizers and weight loading. Never use on graph
  /// intermediates.
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  Scalar item() const { return node_->value[0]; }

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Creates an op result. `backward` runs only if some input requires grad
/// and grad mode is enabled; otherwise inputs are not retained.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Accumulates d(root)/d(leaf) into every reachable leaf. `root` must be a scalar.
void backward(const Var& root);

bool grad_enabled();

/// Disables graph construction in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace afcv::ag
