#pragma once

// Shared helpers for the unit and acceptance suites: seeded random fields and
// finite-difference gradient checks. Nothing here calls into the code under
// test except through the callables handed in.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "autoreg/field.hpp"
#include "autoreg/tensor.hpp"

namespace testutil {

using autoreg::Tensor;

inline Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape), 0.0);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline autoreg::ScalarField random_image(std::vector<int> dims, std::uint64_t seed, double lo = 0.0,
                                         double hi = 1.0) {
  return autoreg::ScalarField(random_tensor(autoreg::make_grid(1, dims).shape(), seed, lo, hi));
}

/// Smooth field built from a few random sinusoids per component; `amplitude`
/// bounds |u_c| and the spatial frequency bounds the gradient.
inline autoreg::VectorField smooth_field(const std::vector<int>& dims, std::uint64_t seed,
                                         double amplitude, int waves = 3, double max_cycles = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int nd = static_cast<int>(dims.size());
  autoreg::VectorField f(dims);
  const std::size_t n = f.voxels();
  for (int c = 0; c < nd; ++c) {
    struct Wave {
      double amp, phase;
      std::vector<double> freq;
    };
    std::vector<Wave> ws;
    double total = 0.0;
    for (int w = 0; w < waves; ++w) {
      Wave wv{u(rng), 2 * std::numbers::pi * u(rng), {}};
      for (int a = 0; a < nd; ++a) wv.freq.push_back(max_cycles * (2 * u(rng) - 1));
      total += wv.amp;
      ws.push_back(wv);
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t rem = i;
      std::vector<double> pos(nd);
      for (int a = nd - 1; a >= 0; --a) {
        pos[a] = static_cast<double>(rem % dims[a]);
        rem /= dims[a];
      }
      double v = 0.0;
      for (const auto& wv : ws) {
        double arg = wv.phase;
        for (int a = 0; a < nd; ++a) arg += 2 * std::numbers::pi * wv.freq[a] * pos[a] / dims[a];
        v += wv.amp * std::sin(arg);
      }
      f.component(c)[i] = amplitude * v / total;
    }
  }
  return f;
}

/// Relative L2 error between analytic gradient entries and central
/// differences of `f` over a sample of `max_entries` coordinates.
inline double fd_relative_error(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                const Tensor& analytic, double h = 1e-6, std::size_t max_entries = 40,
                                std::uint64_t seed = 7) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  if (idx.size() > max_entries) idx.resize(max_entries);
  double num = 0.0, den = 0.0;
  for (std::size_t i : idx) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (f(xp) - f(xm)) / (2 * h);
    num += (fd - analytic[i]) * (fd - analytic[i]);
    den += fd * fd;
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

/// Same check along `directions` random unit directions over all entries.
inline double fd_directional_error(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                   const Tensor& analytic, double h = 1e-6, int directions = 4,
                                   std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  double num = 0.0, den = 0.0;
  for (int d = 0; d < directions; ++d) {
    Tensor dir(x.shape(), 0.0);
    double norm = 0.0;
    for (double& v : dir.values()) {
      v = n01(rng);
      norm += v * v;
    }
    dir *= 1.0 / std::sqrt(norm);
    Tensor xp = x, xm = x;
    xp.axpy(h, dir);
    xm.axpy(-h, dir);
    const double fd = (f(xp) - f(xm)) / (2 * h);
    const double an = autoreg::dot(analytic, dir);
    num += (fd - an) * (fd - an);
    den += fd * fd;
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

/// Multilinear interpolation oracle written from explicit corner weights,
/// border replicated. `pos` are absolute voxel coordinates (axis order).
inline double interp_oracle(const Tensor& t, int channel, const std::vector<double>& pos) {
  const auto dims = autoreg::grid_dims(t);
  const int nd = static_cast<int>(dims.size());
  std::vector<int> lo(nd), hi(nd);
  std::vector<double> frac(nd);
  for (int a = 0; a < nd; ++a) {
    const double p = std::clamp(pos[a], 0.0, static_cast<double>(dims[a] - 1));
    lo[a] = static_cast<int>(std::floor(p));
    hi[a] = std::min(lo[a] + 1, dims[a] - 1);
    frac[a] = p - lo[a];
  }
  auto at = [&](const std::vector<int>& q) {
    std::size_t off = 0;
    for (int a = 0; a < nd; ++a) off = off * dims[a] + q[a];
    return t[channel * autoreg::voxel_count(t) + off];
  };
  double v = 0.0;
  for (int corner = 0; corner < (1 << nd); ++corner) {
    std::vector<int> q(nd);
    double w = 1.0;
    for (int a = 0; a < nd; ++a) {
      const bool up = (corner >> a) & 1;
      q[a] = up ? hi[a] : lo[a];
      w *= up ? frac[a] : 1.0 - frac[a];
    }
    v += w * at(q);
  }
  return v;
}

/// Axis coordinates of flat voxel index i.
inline std::vector<double> voxel_coords(std::size_t i, const std::vector<int>& dims) {
  std::vector<double> pos(dims.size());
  for (int a = static_cast<int>(dims.size()) - 1; a >= 0; --a) {
    pos[a] = static_cast<double>(i % dims[a]);
    i /= dims[a];
  }
  return pos;
}

/// True when voxel i is at least `margin` voxels from every border.
inline bool interior(std::size_t i, const std::vector<int>& dims, int margin) {
  const auto p = voxel_coords(i, dims);
  for (std::size_t a = 0; a < dims.size(); ++a)
    if (p[a] < margin || p[a] > dims[a] - 1 - margin) return false;
  return true;
}

// Forward-Euler flow of the linearly interpolated stationary velocity.
inline autoreg::VectorField euler_flow(const autoreg::VectorField& v, int steps) {
  const auto& dims = v.dims();
  const int nd = v.ndim();
  autoreg::VectorField u(dims);
  const double dt = 1.0 / steps;
  for (std::size_t i = 0; i < u.voxels(); ++i) {
    auto p = voxel_coords(i, dims);
    const auto start = p;
    for (int s = 0; s < steps; ++s) {
      std::vector<double> vel(nd);
      for (int c = 0; c < nd; ++c) vel[c] = interp_oracle(v.tensor(), c, p);
      for (int c = 0; c < nd; ++c) p[c] += dt * vel[c];
    }
    for (int c = 0; c < nd; ++c) u.component(c)[i] = p[c] - start[c];
  }
  return u;
}

inline double max_interior(const autoreg::VectorField& a, const autoreg::VectorField& b, int margin) {
  double m = 0.0;
  for (int c = 0; c < a.ndim(); ++c)
    for (std::size_t i = 0; i < a.voxels(); ++i)
      if (interior(i, a.dims(), margin))
        m = std::max(m, std::abs(a.component(c)[i] - b.component(c)[i]));
  return m;
}

}  // namespace testutil
