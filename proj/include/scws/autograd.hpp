#pragma once

#include <array>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "scws/ops.hpp"
#include "scws/tensor.hpp"

// Tape-free reverse-mode differentiation: every Var keeps its parents and a
// backward closure; `backward` walks the graph in reverse topological order.
namespace scws::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor& g);
  bool has_grad() const { return !grad.empty(); }
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const NodePtr& node() const { return node_; }
  explicit operator bool() const { return node_ != nullptr; }

 private:
  NodePtr node_;
};

/// A value that never receives a gradient.
Var constant(Tensor value);
/// A differentiable leaf; gradients accumulate into it across backward calls.
Var leaf(Tensor value);

Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride, int padding);
/// Convolution without bias.
Var conv2d(const Var& input, const Var& weight, int stride, int padding);
Var batch_norm(const Var& input, const Var& gamma, const Var& beta, ops::BatchNormStats& stats, ops::Mode mode,
               double eps, double momentum, bool update_stats = true);
Var relu(const Var& input);
Var sigmoid(const Var& input);
Var softplus(const Var& input);
Var resize_bilinear(const Var& input, std::size_t out_h, std::size_t out_w);
Var global_avg_pool(const Var& input);
Var add(const Var& a, const Var& b);
Var weighted_fuse(const std::array<Var, 3>& features, const std::array<Var, 3>& weights, double eps);
Var sum(const Var& input);

/// Wraps an externally computed scalar f(inputs) with known partials df/dinput.
Var scalar_function(const std::vector<Var>& inputs, double value, std::vector<Tensor> partials);

/// Seeds each (output, d loss / d output) pair and propagates to every ancestor.
void backward(const std::vector<std::pair<Var, Tensor>>& seeds);
/// Scalar root, seeded with 1.
void backward(const Var& root);

}  // namespace scws::ag
