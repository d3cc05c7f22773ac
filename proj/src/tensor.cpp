#include "autoreg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "autoreg/error.hpp"

namespace autoreg {

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    require(d >= 0, "negative extent in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  require(data_.size() == shape_size(shape_),
          "value count does not match shape " + shape_string(shape_));
}

double Tensor::item() const {
  require(data_.size() == 1, "item() on non-scalar tensor " + shape_string(shape_));
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& o) {
  require(same_shape(o), "shape mismatch in += : " + shape_string(shape_) + " vs " +
                             shape_string(o.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
  require(same_shape(o), "shape mismatch in -= : " + shape_string(shape_) + " vs " +
                             shape_string(o.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void Tensor::axpy(double s, const Tensor& o) {
  require(same_shape(o), "shape mismatch in axpy");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.size() == b.size(), "max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double dot(const Tensor& a, const Tensor& b) {
  require(a.size() == b.size(), "dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](double v) { return std::isfinite(v); });
}

std::uint64_t hash_bytes(const Tensor& t, std::uint64_t h) {
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (int d : t.shape()) mix(&d, sizeof d);
  mix(t.data(), t.size() * sizeof(double));
  return h;
}

int grid_ndim(const Tensor& t) {
  require(t.rank() == 3 || t.rank() == 4,
          "expected a [C, spatial...] grid with 2 or 3 spatial axes, got " +
              shape_string(t.shape()));
  return static_cast<int>(t.rank()) - 1;
}

int grid_channels(const Tensor& t) {
  grid_ndim(t);
  return t.dim(0);
}

std::vector<int> grid_dims(const Tensor& t) {
  grid_ndim(t);
  return {t.shape().begin() + 1, t.shape().end()};
}

Dims3 dims3(const std::vector<int>& s) {
  require(s.size() == 2 || s.size() == 3, "grid must be 2D or 3D");
  if (s.size() == 2) return {1, s[0], s[1]};
  return {s[0], s[1], s[2]};
}

Dims3 dims3(const Tensor& t) { return dims3(grid_dims(t)); }

std::size_t voxel_count(const Tensor& t) { return dims3(t).count(); }

Tensor make_grid(int channels, const std::vector<int>& spatial, double fill) {
  std::vector<int> shape{channels};
  shape.insert(shape.end(), spatial.begin(), spatial.end());
  return Tensor(std::move(shape), fill);
}

}  // namespace autoreg
