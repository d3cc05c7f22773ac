#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace autoreg {

/// Dense row-major array of doubles with an arbitrary shape.
///
/// Grids are stored as [channels, d0, d1(, d2)]: channel slowest, last spatial
/// axis fastest. Scalars are shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, v); }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double item() const;
  void fill(double v);
  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  Tensor& operator+=(const Tensor& o);
  Tensor& operator-=(const Tensor& o);
  Tensor& operator*=(double s);
  /// this += s * o
  void axpy(double s, const Tensor& o);

  bool operator==(const Tensor& o) const = default;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

/// FNV-1a over the raw bytes of the values and shape. Used for bitwise
/// reproducibility checks.
std::uint64_t hash_bytes(const Tensor& t, std::uint64_t seed = 1469598103934665603ULL);

// ---------------------------------------------------------------------------
// Grid view helpers for tensors laid out as [C, spatial...].

/// Spatial extent padded to three axes (z, y, x); 2D grids get z = 1.
struct Dims3 {
  int nz = 1, ny = 1, nx = 1;
  std::size_t count() const noexcept {
    return static_cast<std::size_t>(nz) * ny * nx;
  }
};

int grid_ndim(const Tensor& t);
int grid_channels(const Tensor& t);
std::vector<int> grid_dims(const Tensor& t);
Dims3 dims3(const Tensor& t);
Dims3 dims3(const std::vector<int>& spatial);
std::size_t voxel_count(const Tensor& t);

/// Allocates a [channels, spatial...] tensor.
Tensor make_grid(int channels, const std::vector<int>& spatial, double fill = 0.0);

}  // namespace autoreg
