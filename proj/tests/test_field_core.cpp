#include <cmath>

#include "ad_util.hpp"
#include "autoreg/error.hpp"
#include "autoreg/field_core.hpp"
#include "autoreg/kernels.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace autoreg;
using testutil::interior;
using testutil::euler_flow;
using testutil::max_interior;
using testutil::voxel_coords;

namespace {

ScalarField ramp(const std::vector<int>& dims) {
  ScalarField f(dims);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto p = voxel_coords(i, dims);
    double v = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) v += (a + 1.0) * p[a];
    f[i] = v;
  }
  return f;
}

ScalarField blob(const std::vector<int>& dims, double sigma) {
  ScalarField f(dims);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto p = voxel_coords(i, dims);
    double r2 = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) {
      const double c = (dims[a] - 1) / 2.0;
      r2 += (p[a] - c) * (p[a] - c);
    }
    f[i] = std::exp(-r2 / (2 * sigma * sigma));
  }
  return f;
}

VectorField constant_field(const std::vector<int>& dims, std::vector<double> v) {
  VectorField f(dims);
  for (int c = 0; c < f.ndim(); ++c)
    for (std::size_t i = 0; i < f.voxels(); ++i) f.component(c)[i] = v[c];
  return f;
}

// u_0 = -2 (x0 - c) on a 5x3 patch: central differences put det = -1 on the
// middle 3x3 voxels only.
VectorField folded_patch(int n, int c) {
  VectorField f({n, n});
  for (int x0 = c - 2; x0 <= c + 2; ++x0)
    for (int x1 = c - 1; x1 <= c + 1; ++x1) f.component(0)[x0 * n + x1] = -2.0 * (x0 - c);
  return f;
}

}  // namespace

TEST_CASE("sample_linear reproduces the identity grid exactly") {
  const auto img = testutil::random_image({8, 8}, 1);
  CHECK(sample_linear(img, identity_grid({8, 8})) == img);
  const auto img3 = testutil::random_image({5, 6, 7}, 2);
  CHECK(sample_linear(img3, identity_grid({5, 6, 7})) == img3);
}

TEST_CASE("sample_linear with an integer shift moves interior rows by one voxel") {
  const auto img = testutil::random_image({8, 8}, 3);
  auto coords = identity_grid({8, 8});
  for (std::size_t i = 0; i < coords.voxels(); ++i) coords.component(0)[i] += 1.0;
  const auto out = sample_linear(img, coords);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 8; ++x) CHECK(out[y * 8 + x] == img[(y + 1) * 8 + x]);
}

TEST_CASE("sample_linear matches the explicit corner-weight oracle") {
  const auto img = testutil::random_image({8, 8}, 4);
  VectorField coords(testutil::random_tensor({2, 8, 8}, 5, 0.0, 7.0));
  const auto out = sample_linear(img, coords);
  double err = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double want = testutil::interp_oracle(img.tensor(), 0, {coords.component(0)[i], coords.component(1)[i]});
    err = std::max(err, std::abs(out[i] - want));
  }
  CHECK(err < 1e-6);
}

TEST_CASE("sample_linear clamps out-of-domain coordinates to the border") {
  const auto img = testutil::random_image({4, 4}, 6);
  const VectorField coords(Tensor({2, 1, 2}, {-3.0, 9.0, -0.5, 9.0}));
  const auto out = sample_linear(img, coords);
  CHECK(out[0] == img[0]);
  CHECK(out[1] == img[15]);
}

TEST_CASE("sample_linear rejects a dimensionality mismatch") {
  const auto img = testutil::random_image({4, 4, 4}, 7);
  CHECK_THROWS_AS(sample_linear(img, identity_grid({4, 4})), ContractError);
}

TEST_CASE("warp with zero displacement is bit-exact") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto img = testutil::random_image({9, 7}, seed);
    CHECK(warp(img, VectorField({9, 7})) == img);
    const auto img3 = testutil::random_image({4, 5, 6}, seed + 100);
    CHECK(warp(img3, VectorField({4, 5, 6})) == img3);
  }
}

TEST_CASE("warp by a constant translation shifts a ramp") {
  const auto img = ramp({16, 16});
  const auto out = warp(img, constant_field({16, 16}, {2.0, 0.0}));
  for (int y = 0; y < 14; ++y)
    for (int x = 0; x < 16; ++x) CHECK(out[y * 16 + x] == doctest::Approx(img[(y + 2) * 16 + x]));
}

TEST_CASE("warp matches a brute-force per-voxel oracle in 3D") {
  const std::vector<int> dims{16, 16, 16};
  const auto img = testutil::random_image(dims, 8);
  const auto u = testutil::smooth_field(dims, 9, 3.0);
  const auto out = warp(img, u);
  double err = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto p = voxel_coords(i, dims);
    for (int c = 0; c < 3; ++c) p[c] += u.component(c)[i];
    err = std::max(err, std::abs(out[i] - testutil::interp_oracle(img.tensor(), 0, p)));
  }
  CHECK(err < 1e-6);
}

TEST_CASE("warp rejects mismatched grids") {
  CHECK_THROWS_AS(warp(ScalarField({8, 8}), VectorField({8, 6})), ContractError);
}

TEST_CASE("compose identities and the translation group") {
  const std::vector<int> dims{12, 12};
  const auto outer = testutil::smooth_field(dims, 10, 2.0);
  CHECK(compose(outer, VectorField(dims)) == outer);

  const auto t = compose(constant_field(dims, {1.5, -0.5}), constant_field(dims, {0.25, 2.0}));
  for (std::size_t i = 0; i < t.voxels(); ++i) {
    if (!interior(i, dims, 3)) continue;
    CHECK(t.component(0)[i] == doctest::Approx(1.75));
    CHECK(t.component(1)[i] == doctest::Approx(1.5));
  }
  CHECK_THROWS_AS(compose(VectorField({4, 4}), VectorField({4, 5})), ContractError);
}

TEST_CASE("compose agrees with warping twice") {
  // linear interpolation of the intermediate image costs about |I''|/8, so
  // the image has to vary slowly for the 1e-3 bound to be about compose
  const std::vector<int> dims{96, 96};
  const auto img = blob(dims, 24.0);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto outer = testutil::smooth_field(dims, 20 + seed, 1.5);
    const auto inner = testutil::smooth_field(dims, 40 + seed, 1.5);
    const auto once = warp(img, compose(outer, inner));
    const auto twice = warp(warp(img, outer), inner);
    double err = 0.0;
    for (std::size_t i = 0; i < once.size(); ++i)
      if (interior(i, dims, 4)) err = std::max(err, std::abs(once[i] - twice[i]));
    CHECK(err < 1e-3);
  }
}

TEST_CASE("integrate_svf of zero and of a constant velocity") {
  const std::vector<int> dims{10, 10};
  CHECK(integrate_svf(VectorField(dims), 7) == VectorField(dims));
  const auto u = integrate_svf(constant_field(dims, {1.25, -2.5}), 7);
  for (std::size_t i = 0; i < u.voxels(); ++i) {
    if (!interior(i, dims, 3)) continue;
    CHECK(u.component(0)[i] == 1.25);
    CHECK(u.component(1)[i] == -2.5);
  }
  CHECK_THROWS_AS(integrate_svf(VectorField(dims), 0), ContractError);
}

TEST_CASE("integrate_svf agrees with a 1024-step Euler flow") {
  const std::vector<int> dims{24, 24};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto v = testutil::smooth_field(dims, 60 + seed, 2.0);
    const auto ss = integrate_svf(v, 7);
    const auto euler = euler_flow(v, 1024);
    CHECK(max_interior(ss, euler, 4) < 1e-2);
  }
}

TEST_CASE("integrate_svf of -v undoes integrate_svf of v") {
  const std::vector<int> dims{24, 24};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto v = testutil::smooth_field(dims, 80 + seed, 2.0);
    VectorField neg(v.tensor() * -1.0);
    const auto residual = compose(integrate_svf(v, 7), integrate_svf(neg, 7));
    CHECK(max_interior(residual, VectorField(dims), 4) < 5e-2);
  }
}

TEST_CASE("resize_field preserves constants and rescales displacements") {
  ScalarField c({6, 8}, 3.5);
  const auto up = resize_field(c, ResizeFactor::Double);
  CHECK(up.dims() == std::vector<int>{12, 16});
  for (std::size_t i = 0; i < up.size(); ++i) CHECK(up[i] == 3.5);
  const auto down = resize_field(c, ResizeFactor::Half);
  CHECK(down.dims() == std::vector<int>{3, 4});
  for (std::size_t i = 0; i < down.size(); ++i) CHECK(down[i] == 3.5);

  const auto d = resize_field(constant_field({4, 4}, {2.0, 0.0}), ResizeFactor::Double);
  for (std::size_t i = 0; i < d.voxels(); ++i) {
    CHECK(d.component(0)[i] == 4.0);
    CHECK(d.component(1)[i] == 0.0);
  }
}

TEST_CASE("resize_field half then double stays close on a smooth field") {
  const auto f = blob({32, 32}, 6.0);
  const auto rt = resize_field(resize_field(f, ResizeFactor::Half), ResizeFactor::Double);
  double lo = f[0], hi = f[0], err = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    lo = std::min(lo, f[i]);
    hi = std::max(hi, f[i]);
    err = std::max(err, std::abs(rt[i] - f[i]));
  }
  CHECK(err < 0.05 * (hi - lo));
}

TEST_CASE("resize_field by one half requires even extents") {
  CHECK_THROWS_AS(resize_field(ScalarField({7, 8}), ResizeFactor::Half), ContractError);
}

TEST_CASE("jacobian_determinant on identity and on a folded patch") {
  const auto det0 = jacobian_determinant(VectorField({6, 6, 6}));
  for (std::size_t i = 0; i < det0.size(); ++i) CHECK(det0[i] == 1.0);

  const int n = 11, c = 5;
  const auto det = jacobian_determinant(folded_patch(n, c));
  for (int x0 = c - 1; x0 <= c + 1; ++x0)
    for (int x1 = c - 1; x1 <= c + 1; ++x1) CHECK(det[x0 * n + x1] == -1.0);
}

TEST_CASE("jacobian_determinant matches an explicit matrix oracle") {
  for (const auto& dims : {std::vector<int>{9, 7}, std::vector<int>{6, 7, 5}}) {
    const auto u = testutil::smooth_field(dims, 33, 1.0, 3, 2.0);
    const auto det = jacobian_determinant(u);
    const int nd = static_cast<int>(dims.size());
    double err = 0.0;
    for (std::size_t i = 0; i < u.voxels(); ++i) {
      const auto p = voxel_coords(i, dims);
      double J[3][3] = {};
      for (int a = 0; a < nd; ++a) {
        auto lo = p, hi = p;
        double h;
        if (p[a] == 0) {
          hi[a] += 1;
          h = 1;
        } else if (p[a] == dims[a] - 1) {
          lo[a] -= 1;
          h = 1;
        } else {
          lo[a] -= 1;
          hi[a] += 1;
          h = 2;
        }
        for (int comp = 0; comp < nd; ++comp)
          J[comp][a] = (testutil::interp_oracle(u.tensor(), comp, hi) -
                        testutil::interp_oracle(u.tensor(), comp, lo)) / h + (comp == a);
      }
      const double want = nd == 2 ? J[0][0] * J[1][1] - J[0][1] * J[1][0]
                                  : J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                                        J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                                        J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
      err = std::max(err, std::abs(det[i] - want));
    }
    CHECK(err < 1e-6);
  }
}

TEST_CASE("count_folds") {
  CHECK(count_folds(VectorField({8, 8})) == 0);
  CHECK(count_folds(folded_patch(11, 5)) == 9);
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    CHECK(count_folds(testutil::smooth_field({16, 16, 16}, seed, 0.2)) == 0);
}

TEST_CASE("smooth velocities with gradient below 0.4 integrate to fold-free maps") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    // amplitude 2 with at most one cycle across 32 voxels keeps |grad| < 0.4
    const auto v = testutil::smooth_field({32, 32}, 200 + seed, 2.0, 3, 1.0);
    REQUIRE(max_abs(jacobian_determinant(v).tensor()) < 3.0);
    CHECK(count_folds(integrate_svf(v, 7)) == 0);
  }
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    const auto v = testutil::smooth_field({16, 16, 16}, 300 + seed, 1.0, 3, 1.0);
    CHECK(count_folds(integrate_svf(v, 7)) == 0);
  }
}

TEST_CASE("warp gradients match central differences") {
  for (const auto& dims : {std::vector<int>{8, 8}, std::vector<int>{8, 8, 8}}) {
    const int nd = static_cast<int>(dims.size());
    const Tensor img = testutil::random_tensor(make_grid(1, dims).shape(), 1);
    const Tensor disp = testutil::random_tensor(make_grid(nd, dims).shape(), 2, -1.5, 1.5);
    const Tensor w = testutil::random_tensor(make_grid(1, dims).shape(), 3);
    auto objective = [&](const Tensor& i, const Tensor& d) {
      return dot(kernels::warp(i, d), w);
    };
    const auto iv = ad::parameter(img), dv = ad::parameter(disp);
    const auto loss = testutil::project(ad::warp(iv, dv), w);
    const ad::Var wrt[] = {iv, dv};
    const auto g = ad::gradients(loss, wrt);
    CHECK(testutil::fd_relative_error([&](const Tensor& x) { return objective(x, disp); }, img, g[0]) < 1e-4);
    CHECK(testutil::fd_relative_error([&](const Tensor& x) { return objective(img, x); }, disp, g[1]) < 1e-4);
    CHECK(testutil::fd_directional_error([&](const Tensor& x) { return objective(img, x); }, disp, g[1]) < 1e-4);
  }
}

TEST_CASE("integrate_svf gradients match central differences") {
  for (const auto& dims : {std::vector<int>{8, 8}, std::vector<int>{8, 8, 8}}) {
    const int nd = static_cast<int>(dims.size());
    const Tensor v = testutil::smooth_field(dims, 5, 1.5, 3, 1.0).tensor();
    const Tensor w = testutil::random_tensor(make_grid(nd, dims).shape(), 6);
    auto objective = [&](const Tensor& x) {
      return dot(integrate_svf(VectorField(x), 7).tensor(), w);
    };
    const auto vv = ad::parameter(v);
    const auto loss = testutil::project(ad::integrate_svf(vv, 7), w);
    const ad::Var wrt[] = {vv};
    const auto g = ad::gradients(loss, wrt);
    CHECK(testutil::fd_relative_error(objective, v, g[0]) < 1e-4);
    CHECK(testutil::fd_directional_error(objective, v, g[0]) < 1e-4);
  }
}

TEST_CASE("resize gradients are the exact adjoint") {
  const Tensor x = testutil::random_tensor({2, 8, 6}, 9);
  const Tensor wd = testutil::random_tensor({2, 16, 12}, 10);
  const Tensor wh = testutil::random_tensor({2, 4, 3}, 11);
  for (auto [factor, w] : {std::pair{ResizeFactor::Double, wd}, std::pair{ResizeFactor::Half, wh}}) {
    const auto xv = ad::parameter(x);
    const auto loss = testutil::project(ad::resize_field(xv, factor, true), w);
    const ad::Var wrt[] = {xv};
    const auto g = ad::gradients(loss, wrt);
    auto f = [&](const Tensor& t) { return dot(resize_field(VectorField(t), factor).tensor(), w); };
    CHECK(testutil::fd_relative_error(f, x, g[0]) < 1e-6);
  }
}
