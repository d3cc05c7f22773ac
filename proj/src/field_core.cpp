#include "autoreg/field_core.hpp"

#include <array>
#include <cmath>

#include "autoreg/error.hpp"
#include "autoreg/kernels.hpp"

namespace autoreg {

namespace {

void check_same_grid(const std::vector<int>& a, const std::vector<int>& b, const char* what) {
  require(a == b, std::string(what) + ": grid mismatch " + shape_string(a) + " vs " +
                      shape_string(b));
}

}  // namespace

ScalarField sample_linear(const ScalarField& field, const VectorField& coords) {
  require(field.ndim() == coords.ndim(), "sample_linear: field is " +
                                             std::to_string(field.ndim()) + "D but coords have " +
                                             std::to_string(coords.ndim()) + " channels");
  return ScalarField(kernels::sample(field.tensor(), coords.tensor()));
}

VectorField sample_linear(const VectorField& field, const VectorField& coords) {
  require(field.ndim() == coords.ndim(), "sample_linear: dimensionality mismatch");
  return VectorField(kernels::sample(field.tensor(), coords.tensor()));
}

ScalarField warp(const ScalarField& image, const VectorField& disp) {
  check_same_grid(image.dims(), disp.dims(), "warp");
  return ScalarField(kernels::warp(image.tensor(), disp.tensor()));
}

VectorField warp(const VectorField& field, const VectorField& disp) {
  check_same_grid(field.dims(), disp.dims(), "warp");
  return VectorField(kernels::warp(field.tensor(), disp.tensor()));
}

LabelField warp_labels(const LabelField& labels, const VectorField& disp) {
  check_same_grid(labels.dims(), disp.dims(), "warp_labels");
  Tensor src = make_grid(1, labels.dims());
  for (std::size_t i = 0; i < labels.size(); ++i) src[i] = labels[i];
  const Tensor out = kernels::warp_nearest(src, disp.tensor());
  std::vector<std::int32_t> v(out.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<std::int32_t>(out[i]);
  return LabelField(labels.dims(), labels.num_labels(), std::move(v));
}

VectorField compose(const VectorField& outer, const VectorField& inner) {
  check_same_grid(outer.dims(), inner.dims(), "compose");
  Tensor t = kernels::warp(outer.tensor(), inner.tensor());
  t += inner.tensor();
  return VectorField(std::move(t));
}

VectorField integrate_svf(const VectorField& velocity, int squaring_steps) {
  require(squaring_steps >= 1, "integrate_svf: squaring_steps must be >= 1");
  Tensor u = velocity.tensor() * std::ldexp(1.0, -squaring_steps);
  for (int k = 0; k < squaring_steps; ++k) {
    Tensor next = kernels::warp(u, u);
    next += u;
    u = std::move(next);
  }
  return VectorField(std::move(u));
}

ScalarField resize_field(const ScalarField& field, ResizeFactor factor) {
  return ScalarField(kernels::resize(field.tensor(), factor_value(factor)));
}

VectorField resize_field(const VectorField& field, ResizeFactor factor) {
  const double f = factor_value(factor);
  return VectorField(kernels::resize(field.tensor(), f) * f);
}

ScalarField jacobian_determinant(const VectorField& disp) {
  const int nd = disp.ndim();
  const auto& dims = disp.dims();
  for (int d : dims) require(d >= 2, "jacobian_determinant needs at least 2 voxels per axis");
  std::array<std::size_t, 3> stride{};
  stride[nd - 1] = 1;
  for (int a = nd - 2; a >= 0; --a) stride[a] = stride[a + 1] * dims[a + 1];
  const std::size_t n = disp.voxels();
  ScalarField det(dims);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<std::array<double, 3>, 3> J{};
    for (int a = 0; a < nd; ++a) {
      const int pos = static_cast<int>((i / stride[a]) % dims[a]);
      std::size_t lo = i, hi = i;
      double h = 2.0;
      if (pos == 0) {
        hi = i + stride[a];
        h = 1.0;
      } else if (pos == dims[a] - 1) {
        lo = i - stride[a];
        h = 1.0;
      } else {
        lo = i - stride[a];
        hi = i + stride[a];
      }
      for (int c = 0; c < nd; ++c) {
        const double* u = disp.component(c);
        J[c][a] = (u[hi] - u[lo]) / h + (c == a ? 1.0 : 0.0);
      }
    }
    if (nd == 2) {
      det[i] = J[0][0] * J[1][1] - J[0][1] * J[1][0];
    } else {
      det[i] = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
               J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
               J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
    }
  }
  return det;
}

std::size_t count_folds(const VectorField& disp) {
  const ScalarField det = jacobian_determinant(disp);
  std::size_t folds = 0;
  for (std::size_t i = 0; i < det.size(); ++i)
    if (det[i] <= 0.0) ++folds;
  return folds;
}

namespace ad {

Var compose(const Var& outer, const Var& inner) {
  require(outer.value().shape() == inner.value().shape(), "compose: shape mismatch");
  return add(inner, warp(outer, inner));
}

Var integrate_svf(const Var& velocity, int squaring_steps) {
  require(squaring_steps >= 1, "integrate_svf: squaring_steps must be >= 1");
  Var u = scale(velocity, std::ldexp(1.0, -squaring_steps));
  for (int k = 0; k < squaring_steps; ++k) u = compose(u, u);
  return u;
}

Var resize_field(const Var& field, ResizeFactor factor, bool is_vector) {
  const double f = factor_value(factor);
  return resize(field, f, is_vector ? f : 1.0);
}

}  // namespace ad

}  // namespace autoreg
