#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mda/tensor.hpp"

namespace mda::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One value on the tape. `backward_fn` reads `grad` and accumulates into
/// the parents that require a gradient.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Gradient accumulated by the last backward pass; zeros if none reached it.
  Tensor grad() const;
  void zero_grad() { node_->grad = Tensor(); }

  double item() const { return node_->value[0]; }

  const NodePtr& node() const { return node_; }
  explicit Var(NodePtr n) : node_(std::move(n)) {}

 private:
  NodePtr node_;
};

/// Gradients are recorded only while enabled (thread-local flag).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds the result node of an op. When no parent requires a gradient, or
/// recording is disabled, the result is a plain constant.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Reverse pass from a scalar root, seeding d(root)/d(root) = `seed`.
void backward(const Var& root, double seed = 1.0);

}  // namespace mda::ag
