#include "autoreg/params.hpp"

#include <cmath>

#include "autoreg/error.hpp"

namespace autoreg {

std::size_t ParamSet::add(std::string name, Tensor value, bool trainable) {
  require(!index_.count(name), "ParamSet: duplicate name " + name);
  index_.emplace(name, tensors_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  trainable_.push_back(trainable);
  return tensors_.size() - 1;
}

long ParamSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : static_cast<long>(it->second);
}

void ParamSet::axpy(double s, const std::vector<Tensor>& other) {
  require(other.size() == tensors_.size(), "ParamSet::axpy: size mismatch");
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (trainable_[i]) tensors_[i].axpy(s, other[i]);
}

double ParamSet::max_abs(const std::vector<Tensor>& grads) const {
  double m = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (trainable_[i]) m = std::max(m, autoreg::max_abs(grads[i]));
  return m;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

bool ParamSet::all_finite() const {
  for (const auto& t : tensors_)
    if (!autoreg::all_finite(t)) return false;
  return true;
}

std::uint64_t ParamSet::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : tensors_) h = hash_bytes(t, h);
  return h;
}

bool ParamSet::same_layout(const ParamSet& o) const {
  if (names_ != o.names_) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].shape() != o.tensors_[i].shape()) return false;
  return true;
}

void Adam::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, State& state,
                const std::vector<bool>& mask) const {
  require(params.size() == grads.size(), "Adam: gradient count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.shape(), 0.0);
      state.v.emplace_back(p.shape(), 0.0);
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    auto& p = params[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1 * m[j] + (1 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1 - beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

void TensorOptimizer::step(Tensor& x, const Tensor& grad) {
  if (!adaptive) {
    x.axpy(-adam.lr, grad);
    return;
  }
  std::vector<Tensor> p{std::move(x)};
  adam.step(p, {grad}, state);
  x = std::move(p[0]);
}

}  // namespace autoreg
