#include "scws/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace scws::ag {

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) {
    grad = g;
  } else {
    grad += g;
  }
}

namespace {

bool any_requires_grad(std::initializer_list<const Var*> vars) {
  for (const Var* v : vars) {
    if (*v && v->requires_grad()) return true;
  }
  return false;
}

Var make(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& p : parents) {
    if (p && p->requires_grad) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void push(const NodePtr& p, const Tensor& g) {
  if (p && p->requires_grad) p->accumulate(g);
}

}  // namespace

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var leaf(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride, int padding) {
  static const Tensor kNoBias;
  const Tensor& b = bias ? bias.value() : kNoBias;
  Tensor out = ops::conv2d(input.value(), weight.value(), b, stride, padding);
  const bool has_bias = static_cast<bool>(bias);
  return make(std::move(out), {input.node(), weight.node(), has_bias ? bias.node() : nullptr},
              [stride, padding, has_bias](Node& self) {
                const auto& in = self.parents[0];
                const auto& w = self.parents[1];
                auto g = ops::conv2d_backward(in->value, w->value, has_bias, stride, padding, self.grad,
                                              in->requires_grad);
                push(in, g.input);
                push(w, g.weight);
                if (has_bias) push(self.parents[2], g.bias);
              });
}

Var conv2d(const Var& input, const Var& weight, int stride, int padding) {
  return conv2d(input, weight, Var(), stride, padding);
}

Var batch_norm(const Var& input, const Var& gamma, const Var& beta, ops::BatchNormStats& stats, ops::Mode mode,
               double eps, double momentum, bool update_stats) {
  auto cache = std::make_shared<ops::BatchNormCache>();
  const bool track = any_requires_grad({&input, &gamma, &beta});
  Tensor out = ops::batch_norm(input.value(), gamma.value(), beta.value(), stats, mode, eps, momentum,
                               track ? cache.get() : nullptr, update_stats);
  return make(std::move(out), {input.node(), gamma.node(), beta.node()}, [cache](Node& self) {
    auto g = ops::batch_norm_backward(*cache, self.parents[1]->value, self.grad);
    push(self.parents[0], g.input);
    push(self.parents[1], g.gamma);
    push(self.parents[2], g.beta);
  });
}

Var relu(const Var& input) {
  return make(ops::relu(input.value()), {input.node()}, [](Node& self) {
    push(self.parents[0], ops::relu_backward(self.parents[0]->value, self.grad));
  });
}

Var sigmoid(const Var& input) {
  return make(ops::sigmoid(input.value()), {input.node()}, [](Node& self) {
    push(self.parents[0], ops::sigmoid_backward(self.value, self.grad));
  });
}

Var softplus(const Var& input) {
  return make(ops::softplus(input.value()), {input.node()}, [](Node& self) {
    push(self.parents[0], ops::softplus_backward(self.parents[0]->value, self.grad));
  });
}

Var resize_bilinear(const Var& input, std::size_t out_h, std::size_t out_w) {
  const std::size_t in_h = input.value().dim(2), in_w = input.value().dim(3);
  return make(ops::resize_bilinear(input.value(), out_h, out_w), {input.node()}, [in_h, in_w](Node& self) {
    push(self.parents[0], ops::resize_bilinear_backward(self.grad, in_h, in_w));
  });
}

Var global_avg_pool(const Var& input) {
  const std::size_t in_h = input.value().dim(2), in_w = input.value().dim(3);
  return make(ops::global_avg_pool(input.value()), {input.node()}, [in_h, in_w](Node& self) {
    push(self.parents[0], ops::global_avg_pool_backward(self.grad, in_h, in_w));
  });
}

Var add(const Var& a, const Var& b) {
  return make(ops::add(a.value(), b.value()), {a.node(), b.node()}, [](Node& self) {
    push(self.parents[0], self.grad);
    push(self.parents[1], self.grad);
  });
}

Var weighted_fuse(const std::array<Var, 3>& features, const std::array<Var, 3>& weights, double eps) {
  const std::array<const Tensor*, 3> f{&features[0].value(), &features[1].value(), &features[2].value()};
  const std::array<const Tensor*, 3> w{&weights[0].value(), &weights[1].value(), &weights[2].value()};
  return make(ops::weighted_fuse(f, w, eps),
              {features[0].node(), features[1].node(), features[2].node(), weights[0].node(), weights[1].node(),
               weights[2].node()},
              [eps](Node& self) {
                const auto& p = self.parents;
                const std::array<const Tensor*, 3> fv{&p[0]->value, &p[1]->value, &p[2]->value};
                const std::array<const Tensor*, 3> wv{&p[3]->value, &p[4]->value, &p[5]->value};
                auto g = ops::weighted_fuse_backward(fv, wv, eps, self.grad);
                for (std::size_t b = 0; b < 3; ++b) {
                  push(p[b], g.features[b]);
                  push(p[3 + b], g.weights[b]);
                }
              });
}

Var sum(const Var& input) {
  return make(Tensor({1}, input.value().sum()), {input.node()}, [](Node& self) {
    const auto& in = self.parents[0];
    push(in, Tensor(in->value.shape(), self.grad[0]));
  });
}

Var scalar_function(const std::vector<Var>& inputs, double value, std::vector<Tensor> partials) {
  if (partials.size() != inputs.size()) {
    throw std::invalid_argument("scalar_function: one partial per input required");
  }
  std::vector<NodePtr> parents;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!partials[i].same_shape(inputs[i].value())) {
      throw ShapeError("scalar_function: partial " + std::to_string(i) + " has shape " +
                       to_string(partials[i].shape()) + ", input has " + to_string(inputs[i].shape()));
    }
    parents.push_back(inputs[i].node());
  }
  return make(Tensor({1}, value), std::move(parents), [partials = std::move(partials)](Node& self) {
    for (std::size_t i = 0; i < partials.size(); ++i) {
      Tensor g = partials[i];
      g *= self.grad[0];
      push(self.parents[i], g);
    }
  });
}

void backward(const std::vector<std::pair<Var, Tensor>>& seeds) {
  // Iterative post-order DFS gives a topological order without recursion depth limits.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  for (const auto& [var, seed] : seeds) {
    Node* root = var.node().get();
    if (!root->requires_grad) continue;
    if (!seed.same_shape(root->value)) {
      throw ShapeError("backward: seed shape " + to_string(seed.shape()) + " does not match output " +
                       to_string(root->value.shape()));
    }
    root->accumulate(seed);
    if (!visited.insert(root).second) continue;
    stack.emplace_back(root, 0);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* parent = node->parents[next++].get();
        if (parent && parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->has_grad()) node->backward(*node);
  }
}

void backward(const Var& root) {
  if (root.value().numel() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + to_string(root.shape()));
  }
  backward({{root, Tensor(root.shape(), 1.0)}});
}

}  // namespace scws::ag
