#include "autoreg/autodiff.hpp"

#include <cmath>
#include <unordered_set>

#include "autoreg/error.hpp"
#include "autoreg/kernels.hpp"

namespace autoreg::ad {

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) grad = g;
  else grad += g;
}

void Node::accumulate(Tensor&& g) {
  if (grad.empty()) grad = std::move(g);
  else grad += g;
}

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return Var(std::move(n));
}

Var parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const Var& v : inputs) {
    require(v.valid(), "autodiff: null input");
    n->requires_grad = n->requires_grad || v.requires_grad();
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (const Var& v : inputs) n->inputs.push_back(v.node());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

std::vector<Tensor> gradients(const Var& output, std::span<const Var> wrt) {
  require(output.valid() && output.value().size() == 1, "gradients: output must be a scalar");
  std::vector<Node*> order;
  if (output.requires_grad()) {
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{output.node().get(), 0}};
    seen.insert(output.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    for (Node* n : order) n->grad = Tensor();
    output.node()->grad = Tensor(output.value().shape(), 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->grad.empty() || !n->backward) continue;
      n->backward(*n);
      if (!n->inputs.empty()) n->grad = Tensor();
    }
  }
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Var& v : wrt) {
    if (v.node()->grad.empty()) out.emplace_back(v.value().shape(), 0.0);
    else out.push_back(std::move(v.node()->grad));
    v.node()->grad = Tensor();
  }
  for (Node* n : order) n->grad = Tensor();
  return out;
}

// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "add: shape mismatch " +
                                               shape_string(a.value().shape()) + " vs " +
                                               shape_string(b.value().shape()));
  return make_node(a.value() + b.value(), {a, b}, [](Node& self) {
    if (self.input_needs_grad(0)) self.inputs[0]->accumulate(self.grad);
    if (self.input_needs_grad(1)) self.inputs[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "sub: shape mismatch");
  return make_node(a.value() - b.value(), {a, b}, [](Node& self) {
    if (self.input_needs_grad(0)) self.inputs[0]->accumulate(self.grad);
    if (self.input_needs_grad(1)) self.inputs[1]->accumulate(self.grad * -1.0);
  });
}

Var scale(const Var& a, double s) {
  return make_node(a.value() * s, {a}, [s](Node& self) { self.inputs[0]->accumulate(self.grad * s); });
}

Var mul_scalar(const Var& a, const Var& s) {
  require(s.value().size() == 1, "mul_scalar: second operand must be a scalar");
  const double sv = s.item();
  return make_node(a.value() * sv, {a, s}, [sv](Node& self) {
    if (self.input_needs_grad(0)) self.inputs[0]->accumulate(self.grad * sv);
    if (self.input_needs_grad(1)) self.inputs[1]->accumulate(Tensor::scalar(dot(self.grad, self.input(0))));
  });
}

Var element(const Var& v, std::size_t i) {
  require(i < v.value().size(), "element: index out of range");
  return make_node(Tensor::scalar(v.value()[i]), {v}, [i](Node& self) {
    Tensor g(self.input(0).shape(), 0.0);
    g[i] = self.grad[0];
    self.inputs[0]->accumulate(std::move(g));
  });
}

Var sum_scalars(std::span<const Var> xs) {
  double s = 0.0;
  std::vector<Var> in(xs.begin(), xs.end());
  for (const Var& x : in) s += x.item();
  return make_node(Tensor::scalar(s), std::move(in), [](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i)
      if (self.input_needs_grad(i)) self.inputs[i]->accumulate(self.grad);
  });
}

Var leaky_relu(const Var& x, double slope) {
  Tensor out = x.value();
  for (double& v : out.values())
    if (v < 0.0) v *= slope;
  return make_node(std::move(out), {x}, [slope](Node& self) {
    Tensor g = self.grad;
    const Tensor& in = self.input(0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] < 0.0) g[i] *= slope;
    self.inputs[0]->accumulate(std::move(g));
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const auto da = grid_dims(a.value()), db = grid_dims(b.value());
  require(da == db, "concat_channels: grid mismatch " + shape_string(a.value().shape()) + " vs " +
                        shape_string(b.value().shape()));
  const int ca = a.value().dim(0), cb = b.value().dim(0);
  Tensor out = make_grid(ca + cb, da);
  std::copy(a.value().storage().begin(), a.value().storage().end(), out.storage().begin());
  std::copy(b.value().storage().begin(), b.value().storage().end(),
            out.storage().begin() + static_cast<std::ptrdiff_t>(a.value().size()));
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const std::size_t na = self.input(0).size();
    if (self.input_needs_grad(0)) {
      Tensor g(self.input(0).shape(), 0.0);
      std::copy(self.grad.storage().begin(), self.grad.storage().begin() + static_cast<std::ptrdiff_t>(na),
                g.storage().begin());
      self.inputs[0]->accumulate(std::move(g));
    }
    if (self.input_needs_grad(1)) {
      Tensor g(self.input(1).shape(), 0.0);
      std::copy(self.grad.storage().begin() + static_cast<std::ptrdiff_t>(na), self.grad.storage().end(),
                g.storage().begin());
      self.inputs[1]->accumulate(std::move(g));
    }
  });
}

Var softmax_row(const Var& logits, int row) {
  const Tensor& L = logits.value();
  require(L.rank() == 2 && row >= 0 && row < L.dim(0), "softmax_row: bad row");
  const int n = L.dim(1);
  const double* r = L.data() + static_cast<std::size_t>(row) * n;
  double mx = r[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, r[i]);
  Tensor w({n}, 0.0);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += (w[i] = std::exp(r[i] - mx));
  for (int i = 0; i < n; ++i) w[i] /= z;
  return make_node(w, {logits}, [row, n](Node& self) {
    const Tensor& w = self.value;
    double inner = 0.0;
    for (int i = 0; i < n; ++i) inner += self.grad[i] * w[i];
    Tensor g(self.input(0).shape(), 0.0);
    for (int i = 0; i < n; ++i)
      g[static_cast<std::size_t>(row) * n + i] = w[i] * (self.grad[i] - inner);
    self.inputs[0]->accumulate(std::move(g));
  });
}

Var weighted_sum(std::span<const Var> ys, const Var& weights) {
  require(!ys.empty() && weights.value().size() == ys.size(), "weighted_sum: weight count mismatch");
  Tensor out(ys[0].value().shape(), 0.0);
  for (std::size_t i = 0; i < ys.size(); ++i) out.axpy(weights.value()[i], ys[i].value());
  std::vector<Var> in(ys.begin(), ys.end());
  in.push_back(weights);
  return make_node(std::move(out), std::move(in), [](Node& self) {
    const std::size_t k = self.inputs.size() - 1;
    const Tensor& w = self.input(k);
    for (std::size_t i = 0; i < k; ++i)
      if (self.input_needs_grad(i)) self.inputs[i]->accumulate(self.grad * w[i]);
    if (self.input_needs_grad(k)) {
      Tensor gw(w.shape(), 0.0);
      for (std::size_t i = 0; i < k; ++i) gw[i] = dot(self.grad, self.input(i));
      self.inputs[k]->accumulate(std::move(gw));
    }
  });
}

Var conv(const Var& x, const Var& weight, const Var& bias, int dilation) {
  static const Tensor no_bias;
  Tensor out = kernels::conv(x.value(), weight.value(), bias.valid() ? bias.value() : no_bias, dilation);
  std::vector<Var> in{x, weight};
  if (bias.valid()) in.push_back(bias);
  return make_node(std::move(out), std::move(in), [dilation](Node& self) {
    Tensor gi, gw, gb;
    const bool has_bias = self.inputs.size() == 3;
    kernels::conv_backward(self.input(0), self.input(1), dilation, self.grad,
                           self.input_needs_grad(0) ? &gi : nullptr,
                           self.input_needs_grad(1) ? &gw : nullptr,
                           has_bias && self.input_needs_grad(2) ? &gb : nullptr);
    if (!gi.empty()) self.inputs[0]->accumulate(std::move(gi));
    if (!gw.empty()) self.inputs[1]->accumulate(std::move(gw));
    if (!gb.empty()) self.inputs[2]->accumulate(std::move(gb));
  });
}

Var depthwise_conv(const Var& x, const Var& weight, int dilation) {
  return make_node(kernels::depthwise_conv(x.value(), weight.value(), dilation), {x, weight},
                   [dilation](Node& self) {
                     Tensor gi, gw;
                     kernels::depthwise_conv_backward(self.input(0), self.input(1), dilation, self.grad,
                                                      self.input_needs_grad(0) ? &gi : nullptr,
                                                      self.input_needs_grad(1) ? &gw : nullptr);
                     if (!gi.empty()) self.inputs[0]->accumulate(std::move(gi));
                     if (!gw.empty()) self.inputs[1]->accumulate(std::move(gw));
                   });
}

Var subsample2(const Var& x) {
  return make_node(kernels::subsample2(x.value()), {x}, [](Node& self) {
    self.inputs[0]->accumulate(kernels::subsample2_backward(self.grad, grid_dims(self.input(0))));
  });
}

Var resize(const Var& x, double factor, double value_scale) {
  Tensor out = kernels::resize(x.value(), factor);
  if (value_scale != 1.0) out *= value_scale;
  return make_node(std::move(out), {x}, [factor, value_scale](Node& self) {
    Tensor g = kernels::resize_backward(self.grad, grid_dims(self.input(0)), factor);
    if (value_scale != 1.0) g *= value_scale;
    self.inputs[0]->accumulate(std::move(g));
  });
}

Var warp(const Var& src, const Var& disp) {
  return make_node(kernels::warp(src.value(), disp.value()), {src, disp}, [](Node& self) {
    Tensor gs, gd;
    kernels::warp_backward(self.input(0), self.input(1), self.grad,
                           self.input_needs_grad(0) ? &gs : nullptr,
                           self.input_needs_grad(1) ? &gd : nullptr);
    if (!gs.empty()) self.inputs[0]->accumulate(std::move(gs));
    if (!gd.empty()) self.inputs[1]->accumulate(std::move(gd));
  });
}

Var sample(const Var& src, const Var& coords) {
  return make_node(kernels::sample(src.value(), coords.value()), {src, coords}, [](Node& self) {
    Tensor gs, gc;
    kernels::sample_backward(self.input(0), self.input(1), self.grad,
                             self.input_needs_grad(0) ? &gs : nullptr,
                             self.input_needs_grad(1) ? &gc : nullptr);
    if (!gs.empty()) self.inputs[0]->accumulate(std::move(gs));
    if (!gc.empty()) self.inputs[1]->accumulate(std::move(gc));
  });
}

}  // namespace autoreg::ad
