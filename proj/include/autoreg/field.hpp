#pragma once

#include <cstdint>
#include <vector>

#include "autoreg/tensor.hpp"

namespace autoreg {

/// Single-channel intensity grid (2D or 3D), unit voxel spacing.
class ScalarField {
 public:
  ScalarField() = default;
  explicit ScalarField(std::vector<int> dims, double fill = 0.0);
  /// Takes a [1, spatial...] tensor.
  explicit ScalarField(Tensor t);

  int ndim() const { return static_cast<int>(dims_.size()); }
  const std::vector<int>& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return t_.size(); }

  const Tensor& tensor() const noexcept { return t_; }
  Tensor& tensor() noexcept { return t_; }
  double* data() noexcept { return t_.data(); }
  const double* data() const noexcept { return t_.data(); }
  double& operator[](std::size_t i) noexcept { return t_[i]; }
  double operator[](std::size_t i) const noexcept { return t_[i]; }

  bool operator==(const ScalarField&) const = default;

 private:
  std::vector<int> dims_;
  Tensor t_;
};

/// Per-voxel displacement (or velocity) in voxel units. channels == ndim;
/// component c moves along spatial axis c. Zero is the identity map.
class VectorField {
 public:
  VectorField() = default;
  explicit VectorField(std::vector<int> dims, double fill = 0.0);
  /// Takes a [ndim, spatial...] tensor; rejects channels != ndim.
  explicit VectorField(Tensor t);

  int ndim() const { return static_cast<int>(dims_.size()); }
  const std::vector<int>& dims() const noexcept { return dims_; }
  std::size_t voxels() const noexcept { return shape_size(dims_); }

  const Tensor& tensor() const noexcept { return t_; }
  Tensor& tensor() noexcept { return t_; }
  double* component(int c) noexcept { return t_.data() + c * voxels(); }
  const double* component(int c) const noexcept { return t_.data() + c * voxels(); }

  bool operator==(const VectorField&) const = default;

 private:
  std::vector<int> dims_;
  Tensor t_;
};

/// Integer anatomical labels in [0, num_labels).
class LabelField {
 public:
  LabelField() = default;
  LabelField(std::vector<int> dims, int num_labels, std::int32_t fill = 0);
  LabelField(std::vector<int> dims, int num_labels, std::vector<std::int32_t> values);

  int ndim() const { return static_cast<int>(dims_.size()); }
  const std::vector<int>& dims() const noexcept { return dims_; }
  int num_labels() const noexcept { return num_labels_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::int32_t& operator[](std::size_t i) noexcept { return data_[i]; }
  std::int32_t operator[](std::size_t i) const noexcept { return data_[i]; }
  const std::vector<std::int32_t>& values() const noexcept { return data_; }

  /// Throws ContractError if any value is outside [0, num_labels).
  void validate() const;
  /// [num_labels, spatial...] indicator tensor.
  Tensor one_hot() const;

  bool operator==(const LabelField&) const = default;

 private:
  std::vector<int> dims_;
  int num_labels_ = 1;
  std::vector<std::int32_t> data_;
};

/// Absolute voxel positions of the identity map on `dims`.
VectorField identity_grid(const std::vector<int>& dims);

}  // namespace autoreg
