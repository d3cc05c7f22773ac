#pragma once

// Minimal reverse-mode differentiation over Tensors. A forward computation
// builds a DAG of Nodes; `gradients()` walks it once in reverse topological
// order. Nodes whose inputs are all constants carry no backward closure, so
// constant sub-graphs (images, frozen architecture choices) cost nothing on
// the way back.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "autoreg/tensor.hpp"

namespace autoreg::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor& g);
  void accumulate(Tensor&& g);
  bool input_needs_grad(std::size_t i) const { return inputs[i]->requires_grad; }
  const Tensor& input(std::size_t i) const { return inputs[i]->value; }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool valid() const noexcept { return static_cast<bool>(node_); }
  double item() const { return node_->value.item(); }
  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor t);
Var parameter(Tensor t);

/// Creates an interior node. `backward` is dropped when no input requires a
/// gradient.
Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// d(output)/d(wrt[i]) for a scalar output. Leaves that the output does not
/// depend on get zero tensors.
std::vector<Tensor> gradients(const Var& output, std::span<const Var> wrt);

// --- elementwise and structural -------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Tensor times a scalar Var (shape {1}).
Var mul_scalar(const Var& a, const Var& s);
Var element(const Var& v, std::size_t i);
Var sum_scalars(std::span<const Var> xs);
Var leaky_relu(const Var& x, double slope);
Var concat_channels(const Var& a, const Var& b);

// --- relaxation ------------------------------------------------------------
/// softmax of row `row` of a [rows, n] logit tensor; result shape {n}.
Var softmax_row(const Var& logits, int row);
/// sum_i weights[i] * ys[i]
Var weighted_sum(std::span<const Var> ys, const Var& weights);

// --- grid ops ---------------------------------------------------------------
Var conv(const Var& x, const Var& weight, const Var& bias, int dilation);
Var depthwise_conv(const Var& x, const Var& weight, int dilation);
Var subsample2(const Var& x);
/// Linear resize by factor; values multiplied by `value_scale` afterwards.
Var resize(const Var& x, double factor, double value_scale);
Var warp(const Var& src, const Var& disp);
Var sample(const Var& src, const Var& coords);

}  // namespace autoreg::ad
