#pragma once

// Named parameter tensors and the optimisers that update them.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "autoreg/tensor.hpp"

namespace autoreg {

/// Ordered collection of named tensors. Order is fixed at construction and is
/// the order used for gradients, optimiser state and serialization.
class ParamSet {
 public:
  /// Returns the index of the new entry. Names must be unique.
  std::size_t add(std::string name, Tensor value, bool trainable = true);

  std::size_t size() const noexcept { return tensors_.size(); }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  bool trainable(std::size_t i) const { return trainable_[i]; }
  /// -1 when absent.
  long find(const std::string& name) const;

  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
  std::vector<Tensor>& tensors() noexcept { return tensors_; }

  /// this += s * other for trainable entries.
  void axpy(double s, const std::vector<Tensor>& other);
  /// Largest absolute entry over trainable tensors.
  double max_abs(const std::vector<Tensor>& grads) const;
  std::size_t scalar_count() const;
  bool all_finite() const;
  std::uint64_t hash() const;
  bool same_layout(const ParamSet& o) const;

  bool operator==(const ParamSet& o) const {
    return names_ == o.names_ && tensors_ == o.tensors_ && trainable_ == o.trainable_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::vector<bool> trainable_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Adaptive-moment optimiser with bias correction.
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  struct State {
    std::vector<Tensor> m, v;
    long step = 0;
    bool operator==(const State&) const = default;
  };

  /// Updates params[i] for which mask is empty or mask[i] is true.
  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, State& state,
            const std::vector<bool>& mask = {}) const;
};

/// Plain or adaptive-moment descent on a single tensor.
struct TensorOptimizer {
  bool adaptive = false;
  Adam adam;
  Adam::State state;

  void step(Tensor& x, const Tensor& grad);
};

}  // namespace autoreg
