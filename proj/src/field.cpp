#include "autoreg/field.hpp"

#include <string>

#include "autoreg/error.hpp"

namespace autoreg {

namespace {

void check_dims(const std::vector<int>& dims) {
  require(dims.size() == 2 || dims.size() == 3, "fields must be 2D or 3D");
  for (int d : dims) require(d > 0, "field extents must be positive: " + shape_string(dims));
}

}  // namespace

ScalarField::ScalarField(std::vector<int> dims, double fill) : dims_(std::move(dims)) {
  check_dims(dims_);
  t_ = make_grid(1, dims_, fill);
}

ScalarField::ScalarField(Tensor t) {
  require(grid_channels(t) == 1, "ScalarField needs exactly one channel, got shape " +
                                     shape_string(t.shape()));
  dims_ = grid_dims(t);
  check_dims(dims_);
  t_ = std::move(t);
}

VectorField::VectorField(std::vector<int> dims, double fill) : dims_(std::move(dims)) {
  check_dims(dims_);
  t_ = make_grid(static_cast<int>(dims_.size()), dims_, fill);
}

VectorField::VectorField(Tensor t) {
  const int nd = grid_ndim(t);
  require(grid_channels(t) == nd, "VectorField needs channels == ndim, got shape " +
                                      shape_string(t.shape()));
  dims_ = grid_dims(t);
  check_dims(dims_);
  t_ = std::move(t);
}

LabelField::LabelField(std::vector<int> dims, int num_labels, std::int32_t fill)
    : dims_(std::move(dims)), num_labels_(num_labels), data_(shape_size(dims_), fill) {
  check_dims(dims_);
  require(num_labels >= 1, "num_labels must be >= 1");
}

LabelField::LabelField(std::vector<int> dims, int num_labels, std::vector<std::int32_t> values)
    : dims_(std::move(dims)), num_labels_(num_labels), data_(std::move(values)) {
  check_dims(dims_);
  require(num_labels >= 1, "num_labels must be >= 1");
  require(data_.size() == shape_size(dims_), "label count does not match dims");
  validate();
}

void LabelField::validate() const {
  for (std::int32_t v : data_) {
    if (v < 0 || v >= num_labels_) {
      throw ContractError("label value " + std::to_string(v) + " outside [0, " +
                          std::to_string(num_labels_) + ")");
    }
  }
}

Tensor LabelField::one_hot() const {
  Tensor out = make_grid(num_labels_, dims_, 0.0);
  const std::size_t n = data_.size();
  for (std::size_t i = 0; i < n; ++i) out[static_cast<std::size_t>(data_[i]) * n + i] = 1.0;
  return out;
}

VectorField identity_grid(const std::vector<int>& dims) {
  VectorField g(dims);
  const Dims3 d = dims3(dims);
  const int nd = static_cast<int>(dims.size());
  std::size_t i = 0;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x, ++i) {
        if (nd == 3) {
          g.component(0)[i] = z;
          g.component(1)[i] = y;
          g.component(2)[i] = x;
        } else {
          g.component(0)[i] = y;
          g.component(1)[i] = x;
        }
      }
  return g;
}

}  // namespace autoreg
