#include "autoreg/kernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "autoreg/error.hpp"

namespace autoreg::kernels {

namespace {

using Index = std::ptrdiff_t;

struct AxisInterp {
  int i0, i1;
  double w;
};

inline AxisInterp axis_interp(double p, int n) {
  if (!(p > -1.0)) p = -1.0;  // also catches NaN
  if (p > n) p = n;
  const double f = std::floor(p);
  const int i = static_cast<int>(f);
  return {std::clamp(i, 0, n - 1), std::clamp(i + 1, 0, n - 1), p - f};
}

template <int ND>
struct Stencil {
  static constexpr int K = 1 << ND;
  std::array<std::size_t, K> off;
  std::array<double, K> w;
  std::array<std::array<double, K>, ND> dw;
};

template <int ND>
inline Stencil<ND> make_stencil(const double* p, const int* n) {
  Stencil<ND> s;
  std::array<AxisInterp, ND> a;
  std::array<std::size_t, ND> stride;
  for (int ax = 0; ax < ND; ++ax) a[ax] = axis_interp(p[ax], n[ax]);
  stride[ND - 1] = 1;
  for (int ax = ND - 2; ax >= 0; --ax) stride[ax] = stride[ax + 1] * n[ax + 1];
  for (int k = 0; k < Stencil<ND>::K; ++k) {
    std::size_t off = 0;
    std::array<double, ND> f;
    for (int ax = 0; ax < ND; ++ax) {
      const int bit = (k >> (ND - 1 - ax)) & 1;
      off += static_cast<std::size_t>(bit ? a[ax].i1 : a[ax].i0) * stride[ax];
      f[ax] = bit ? a[ax].w : 1.0 - a[ax].w;
    }
    s.off[k] = off;
    double w = 1.0;
    for (int ax = 0; ax < ND; ++ax) w *= f[ax];
    s.w[k] = w;
    for (int ax = 0; ax < ND; ++ax) {
      const int bit = (k >> (ND - 1 - ax)) & 1;
      double d = bit ? 1.0 : -1.0;
      for (int o = 0; o < ND; ++o)
        if (o != ax) d *= f[o];
      s.dw[ax][k] = d;
    }
  }
  return s;
}

// Position of voxel i of `d` along each spatial axis.
template <int ND>
inline std::array<double, ND> voxel_position(std::size_t i, const Dims3& d) {
  const Index x = static_cast<Index>(i % d.nx);
  const Index y = static_cast<Index>((i / d.nx) % d.ny);
  if constexpr (ND == 3) {
    const Index z = static_cast<Index>(i / (static_cast<std::size_t>(d.nx) * d.ny));
    return {static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)};
  } else {
    return {static_cast<double>(y), static_cast<double>(x)};
  }
}

template <int ND>
std::array<int, ND> extents(const Dims3& d) {
  if constexpr (ND == 3) return {d.nz, d.ny, d.nx};
  else return {d.ny, d.nx};
}

template <int ND, bool Relative>
Tensor sample_impl(const Tensor& src, const Tensor& coords) {
  const Dims3 ds = dims3(src);
  const Dims3 dout = dims3(coords);
  const int channels = src.dim(0);
  const std::size_t ns = ds.count();
  const std::size_t no = dout.count();
  const auto n = extents<ND>(ds);
  Tensor out = make_grid(channels, grid_dims(coords));
  const double* cd = coords.data();
  const double* sd = src.data();
  double* od = out.data();
#pragma omp parallel for schedule(static)
  for (Index ii = 0; ii < static_cast<Index>(no); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    std::array<double, ND> p;
    if constexpr (Relative) p = voxel_position<ND>(i, dout);
    else p.fill(0.0);
    for (int ax = 0; ax < ND; ++ax) p[ax] += cd[ax * no + i];
    const auto st = make_stencil<ND>(p.data(), n.data());
    for (int c = 0; c < channels; ++c) {
      const double* s = sd + c * ns;
      double v = 0.0;
      for (int k = 0; k < Stencil<ND>::K; ++k) v += st.w[k] * s[st.off[k]];
      od[c * no + i] = v;
    }
  }
  return out;
}

template <int ND, bool Relative>
void sample_backward_impl(const Tensor& src, const Tensor& coords, const Tensor& g,
                          Tensor* grad_src, Tensor* grad_coords) {
  const Dims3 ds = dims3(src);
  const Dims3 dout = dims3(coords);
  const int channels = src.dim(0);
  const std::size_t ns = ds.count();
  const std::size_t no = dout.count();
  const auto n = extents<ND>(ds);
  const double* cd = coords.data();
  const double* sd = src.data();
  const double* gd = g.data();
  auto stencil_at = [&](std::size_t i) {
    std::array<double, ND> p;
    if constexpr (Relative) p = voxel_position<ND>(i, dout);
    else p.fill(0.0);
    for (int ax = 0; ax < ND; ++ax) p[ax] += cd[ax * no + i];
    return make_stencil<ND>(p.data(), n.data());
  };
  if (grad_src) {
    *grad_src = Tensor(src.shape(), 0.0);
    double* gs = grad_src->data();
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
      double* dst = gs + c * ns;
      const double* gc = gd + c * no;
      for (std::size_t i = 0; i < no; ++i) {
        const double gi = gc[i];
        if (gi == 0.0) continue;
        const auto st = stencil_at(i);
        for (int k = 0; k < Stencil<ND>::K; ++k) dst[st.off[k]] += st.w[k] * gi;
      }
    }
  }
  if (grad_coords) {
    *grad_coords = Tensor(coords.shape(), 0.0);
    double* gcd = grad_coords->data();
#pragma omp parallel for schedule(static)
    for (Index ii = 0; ii < static_cast<Index>(no); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      const auto st = stencil_at(i);
      std::array<double, ND> acc{};
      for (int c = 0; c < channels; ++c) {
        const double gi = gd[c * no + i];
        if (gi == 0.0) continue;
        const double* s = sd + c * ns;
        for (int ax = 0; ax < ND; ++ax) {
          double d = 0.0;
          for (int k = 0; k < Stencil<ND>::K; ++k) d += st.dw[ax][k] * s[st.off[k]];
          acc[ax] += gi * d;
        }
      }
      for (int ax = 0; ax < ND; ++ax) gcd[ax * no + i] = acc[ax];
    }
  }
}

void check_coords(const Tensor& src, const Tensor& coords, const char* what) {
  const int nd = grid_ndim(src);
  require(grid_ndim(coords) == nd && coords.dim(0) == nd,
          std::string(what) + ": coordinate field must have ndim channels on a grid of the "
                              "same dimensionality (src " +
              shape_string(src.shape()) + ", coords " + shape_string(coords.shape()) + ")");
  require(src.size() > 0, std::string(what) + ": empty source field");
}

// Dot product with four independent accumulators (fixed association order).
inline double dot_row(const double* a, const double* b, Index n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  Index x = 0;
  for (; x + 4 <= n; x += 4) {
    s0 += a[x] * b[x];
    s1 += a[x + 1] * b[x + 1];
    s2 += a[x + 2] * b[x + 2];
    s3 += a[x + 3] * b[x + 3];
  }
  for (; x < n; ++x) s0 += a[x] * b[x];
  return (s0 + s1) + (s2 + s3);
}

struct Tap {
  int oz, oy, ox;
};

struct ConvGeometry {
  Dims3 d;
  std::vector<Tap> taps;
};

ConvGeometry conv_geometry(const Tensor& in, const Tensor& weight, int first_kernel_axis,
                           int dilation) {
  const int nd = grid_ndim(in);
  require(static_cast<int>(weight.rank()) == first_kernel_axis + nd,
          "convolution kernel rank does not match grid dimensionality");
  const int k = weight.dim(first_kernel_axis);
  for (int a = 0; a < nd; ++a)
    require(weight.dim(first_kernel_axis + a) == k, "convolution kernels must be cubic");
  require(k % 2 == 1, "convolution kernels must have odd extent");
  require(dilation >= 1, "dilation must be >= 1");
  ConvGeometry g{dims3(in), {}};
  const int kz = nd == 3 ? k : 1;
  const int r = k / 2;
  for (int tz = 0; tz < kz; ++tz)
    for (int ty = 0; ty < k; ++ty)
      for (int tx = 0; tx < k; ++tx)
        g.taps.push_back({nd == 3 ? (tz - r) * dilation : 0, (ty - r) * dilation,
                          (tx - r) * dilation});
  return g;
}

// Calls fn(out_row_offset, in_row_offset, x_begin, x_end) for every output row
// that tap t touches; both offsets point at x = 0 of their rows.
template <typename Fn>
inline void for_each_row(const Dims3& d, const Tap& t, Fn&& fn) {
  const int z0 = std::max(0, -t.oz), z1 = std::min(d.nz, d.nz - t.oz);
  const int y0 = std::max(0, -t.oy), y1 = std::min(d.ny, d.ny - t.oy);
  const int x0 = std::max(0, -t.ox), x1 = std::min(d.nx, d.nx - t.ox);
  if (x0 >= x1) return;
  for (int z = z0; z < z1; ++z)
    for (int y = y0; y < y1; ++y) {
      const Index o = (static_cast<Index>(z) * d.ny + y) * d.nx;
      const Index s = (static_cast<Index>(z + t.oz) * d.ny + (y + t.oy)) * d.nx + t.ox;
      fn(o, s, x0, x1);
    }
}

}  // namespace

Tensor sample(const Tensor& src, const Tensor& coords) {
  check_coords(src, coords, "sample");
  return grid_ndim(src) == 3 ? sample_impl<3, false>(src, coords)
                             : sample_impl<2, false>(src, coords);
}

void sample_backward(const Tensor& src, const Tensor& coords, const Tensor& grad_out,
                     Tensor* grad_src, Tensor* grad_coords) {
  if (grid_ndim(src) == 3) sample_backward_impl<3, false>(src, coords, grad_out, grad_src, grad_coords);
  else sample_backward_impl<2, false>(src, coords, grad_out, grad_src, grad_coords);
}

Tensor warp(const Tensor& src, const Tensor& disp) {
  check_coords(src, disp, "warp");
  require(grid_dims(src) == grid_dims(disp),
          "warp: displacement grid " + shape_string(disp.shape()) +
              " does not match image grid " + shape_string(src.shape()));
  return grid_ndim(src) == 3 ? sample_impl<3, true>(src, disp) : sample_impl<2, true>(src, disp);
}

void warp_backward(const Tensor& src, const Tensor& disp, const Tensor& grad_out,
                   Tensor* grad_src, Tensor* grad_disp) {
  if (grid_ndim(src) == 3) sample_backward_impl<3, true>(src, disp, grad_out, grad_src, grad_disp);
  else sample_backward_impl<2, true>(src, disp, grad_out, grad_src, grad_disp);
}

Tensor warp_nearest(const Tensor& src, const Tensor& disp) {
  check_coords(src, disp, "warp_nearest");
  require(grid_dims(src) == grid_dims(disp), "warp_nearest: grid mismatch");
  const Dims3 d = dims3(src);
  const int nd = grid_ndim(src);
  const std::size_t n = d.count();
  Tensor out(src.shape(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int x = static_cast<int>(i % d.nx);
    const int y = static_cast<int>((i / d.nx) % d.ny);
    const int z = static_cast<int>(i / (static_cast<std::size_t>(d.nx) * d.ny));
    auto near = [](double p, int hi) {
      const double r = std::nearbyint(std::clamp(p, 0.0, static_cast<double>(hi - 1)));
      return static_cast<int>(r);
    };
    int sz = 0, sy, sx;
    if (nd == 3) {
      sz = near(z + disp[i], d.nz);
      sy = near(y + disp[n + i], d.ny);
      sx = near(x + disp[2 * n + i], d.nx);
    } else {
      sy = near(y + disp[i], d.ny);
      sx = near(x + disp[n + i], d.nx);
    }
    const std::size_t j = (static_cast<std::size_t>(sz) * d.ny + sy) * d.nx + sx;
    for (int c = 0; c < src.dim(0); ++c) out[c * n + i] = src[c * n + j];
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct AxisView {
  std::size_t outer, n, inner;
};

AxisView axis_view(const std::vector<int>& shape, std::size_t axis) {
  AxisView v{1, static_cast<std::size_t>(shape[axis]), 1};
  for (std::size_t a = 0; a < axis; ++a) v.outer *= shape[a];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) v.inner *= shape[a];
  return v;
}

int resized_extent(int n, double factor) {
  if (factor == 0.5) {
    require(n % 2 == 0, "resize by 1/2 needs even extents, got " + std::to_string(n));
    return n / 2;
  }
  require(factor == 2.0, "resize factor must be 0.5 or 2");
  return 2 * n;
}

Tensor resize_axis(const Tensor& in, std::size_t axis, double factor) {
  std::vector<int> shape = in.shape();
  const AxisView v = axis_view(shape, axis);
  const int m = resized_extent(shape[axis], factor);
  shape[axis] = m;
  Tensor out(shape, 0.0);
  for (int o = 0; o < m; ++o) {
    const auto a = axis_interp((o + 0.5) / factor - 0.5, static_cast<int>(v.n));
    for (std::size_t q = 0; q < v.outer; ++q) {
      const double* s0 = in.data() + (q * v.n + a.i0) * v.inner;
      const double* s1 = in.data() + (q * v.n + a.i1) * v.inner;
      double* dst = out.data() + (q * m + o) * v.inner;
      for (std::size_t r = 0; r < v.inner; ++r) dst[r] = (1.0 - a.w) * s0[r] + a.w * s1[r];
    }
  }
  return out;
}

Tensor resize_axis_backward(const Tensor& g, std::size_t axis, int n_in, double factor) {
  std::vector<int> shape = g.shape();
  const int m = shape[axis];
  shape[axis] = n_in;
  const AxisView v = axis_view(shape, axis);
  Tensor out(shape, 0.0);
  for (int o = 0; o < m; ++o) {
    const auto a = axis_interp((o + 0.5) / factor - 0.5, n_in);
    for (std::size_t q = 0; q < v.outer; ++q) {
      const double* src = g.data() + (q * m + o) * v.inner;
      double* d0 = out.data() + (q * v.n + a.i0) * v.inner;
      double* d1 = out.data() + (q * v.n + a.i1) * v.inner;
      for (std::size_t r = 0; r < v.inner; ++r) {
        d0[r] += (1.0 - a.w) * src[r];
        d1[r] += a.w * src[r];
      }
    }
  }
  return out;
}

}  // namespace

Tensor resize(const Tensor& src, double factor) {
  const int nd = grid_ndim(src);
  Tensor cur = src;
  for (int a = 1; a <= nd; ++a) cur = resize_axis(cur, a, factor);
  return cur;
}

Tensor resize_backward(const Tensor& grad_out, const std::vector<int>& in_spatial,
                       double factor) {
  const int nd = grid_ndim(grad_out);
  require(static_cast<int>(in_spatial.size()) == nd, "resize_backward: rank mismatch");
  Tensor cur = grad_out;
  for (int a = nd; a >= 1; --a) cur = resize_axis_backward(cur, a, in_spatial[a - 1], factor);
  return cur;
}

Tensor subsample2(const Tensor& in) {
  const std::vector<int> dims = grid_dims(in);
  for (int d : dims) require(d % 2 == 0, "stride-2 downsampling needs even extents, got " +
                                              shape_string(in.shape()));
  std::vector<int> half;
  for (int d : dims) half.push_back(d / 2);
  Tensor out = make_grid(in.dim(0), half);
  const Dims3 di = dims3(dims), dh = dims3(half);
  const int zstep = dims.size() == 3 ? 2 : 1;
  for (int c = 0; c < in.dim(0); ++c)
    for (int z = 0; z < dh.nz; ++z)
      for (int y = 0; y < dh.ny; ++y) {
        const double* s = in.data() + c * di.count() +
                          (static_cast<std::size_t>(z * zstep) * di.ny + 2 * y) * di.nx;
        double* o = out.data() + c * dh.count() + (static_cast<std::size_t>(z) * dh.ny + y) * dh.nx;
        for (int x = 0; x < dh.nx; ++x) o[x] = s[2 * x];
      }
  return out;
}

Tensor subsample2_backward(const Tensor& g, const std::vector<int>& in_spatial) {
  Tensor out = make_grid(g.dim(0), in_spatial);
  const Dims3 di = dims3(in_spatial), dh = dims3(g);
  const int zstep = in_spatial.size() == 3 ? 2 : 1;
  for (int c = 0; c < g.dim(0); ++c)
    for (int z = 0; z < dh.nz; ++z)
      for (int y = 0; y < dh.ny; ++y) {
        double* s = out.data() + c * di.count() +
                    (static_cast<std::size_t>(z * zstep) * di.ny + 2 * y) * di.nx;
        const double* o = g.data() + c * dh.count() + (static_cast<std::size_t>(z) * dh.ny + y) * dh.nx;
        for (int x = 0; x < dh.nx; ++x) s[2 * x] = o[x];
      }
  return out;
}

// ---------------------------------------------------------------------------

Tensor conv(const Tensor& in, const Tensor& weight, const Tensor& bias, int dilation) {
  const int ci_n = grid_channels(in);
  require(weight.rank() >= 2 && weight.dim(1) == ci_n,
          "conv: kernel expects " + std::to_string(weight.rank() >= 2 ? weight.dim(1) : -1) +
              " input channels, got " + std::to_string(ci_n));
  const auto geo = conv_geometry(in, weight, 2, dilation);
  const int co_n = weight.dim(0);
  require(bias.empty() || (bias.rank() == 1 && bias.dim(0) == co_n), "conv: bias shape mismatch");
  const std::size_t n = geo.d.count();
  const std::size_t nt = geo.taps.size();
  Tensor out = make_grid(co_n, grid_dims(in));
#pragma omp parallel for schedule(static)
  for (int co = 0; co < co_n; ++co) {
    double* o = out.data() + co * n;
    std::fill(o, o + n, bias.empty() ? 0.0 : bias[co]);
    for (int ci = 0; ci < ci_n; ++ci) {
      const double* src = in.data() + ci * n;
      const double* w = weight.data() + (static_cast<std::size_t>(co) * ci_n + ci) * nt;
      for (std::size_t t = 0; t < nt; ++t) {
        const double wv = w[t];
        for_each_row(geo.d, geo.taps[t], [&](Index oo, Index so, int x0, int x1) {
          double* dst = o + oo;
          const double* s = src + so;
          for (int x = x0; x < x1; ++x) dst[x] += wv * s[x];
        });
      }
    }
  }
  return out;
}

void conv_backward(const Tensor& in, const Tensor& weight, int dilation, const Tensor& g,
                   Tensor* grad_in, Tensor* grad_weight, Tensor* grad_bias) {
  const auto geo = conv_geometry(in, weight, 2, dilation);
  const int ci_n = in.dim(0), co_n = weight.dim(0);
  const std::size_t n = geo.d.count();
  const std::size_t nt = geo.taps.size();
  if (grad_in) {
    *grad_in = Tensor(in.shape(), 0.0);
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < ci_n; ++ci) {
      double* gi = grad_in->data() + ci * n;
      for (int co = 0; co < co_n; ++co) {
        const double* go = g.data() + co * n;
        const double* w = weight.data() + (static_cast<std::size_t>(co) * ci_n + ci) * nt;
        for (std::size_t t = 0; t < nt; ++t) {
          const double wv = w[t];
          for_each_row(geo.d, geo.taps[t], [&](Index oo, Index so, int x0, int x1) {
            double* dst = gi + so;
            const double* s = go + oo;
            for (int x = x0; x < x1; ++x) dst[x] += wv * s[x];
          });
        }
      }
    }
  }
  if (grad_weight) {
    *grad_weight = Tensor(weight.shape(), 0.0);
#pragma omp parallel for schedule(static)
    for (int pair = 0; pair < co_n * ci_n; ++pair) {
      const int co = pair / ci_n, ci = pair % ci_n;
      const double* go = g.data() + co * n;
      const double* src = in.data() + ci * n;
      double* gw = grad_weight->data() + static_cast<std::size_t>(pair) * nt;
      for (std::size_t t = 0; t < nt; ++t) {
        double acc = 0.0;
        for_each_row(geo.d, geo.taps[t], [&](Index oo, Index so, int x0, int x1) {
          acc += dot_row(go + oo + x0, src + so + x0, x1 - x0);
        });
        gw[t] = acc;
      }
    }
  }
  if (grad_bias) {
    *grad_bias = Tensor({co_n}, 0.0);
    for (int co = 0; co < co_n; ++co) {
      const double* go = g.data() + co * n;
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += go[i];
      (*grad_bias)[co] = s;
    }
  }
}

Tensor depthwise_conv(const Tensor& in, const Tensor& weight, int dilation) {
  const int c_n = grid_channels(in);
  require(weight.rank() >= 1 && weight.dim(0) == c_n, "depthwise_conv: channel mismatch");
  const auto geo = conv_geometry(in, weight, 1, dilation);
  const std::size_t n = geo.d.count();
  const std::size_t nt = geo.taps.size();
  Tensor out(in.shape(), 0.0);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < c_n; ++c) {
    double* o = out.data() + c * n;
    const double* src = in.data() + c * n;
    const double* w = weight.data() + static_cast<std::size_t>(c) * nt;
    for (std::size_t t = 0; t < nt; ++t) {
      const double wv = w[t];
      for_each_row(geo.d, geo.taps[t], [&](Index oo, Index so, int x0, int x1) {
        for (int x = x0; x < x1; ++x) o[oo + x] += wv * src[so + x];
      });
    }
  }
  return out;
}

void depthwise_conv_backward(const Tensor& in, const Tensor& weight, int dilation,
                             const Tensor& g, Tensor* grad_in, Tensor* grad_weight) {
  const auto geo = conv_geometry(in, weight, 1, dilation);
  const int c_n = in.dim(0);
  const std::size_t n = geo.d.count();
  const std::size_t nt = geo.taps.size();
  if (grad_in) *grad_in = Tensor(in.shape(), 0.0);
  if (grad_weight) *grad_weight = Tensor(weight.shape(), 0.0);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < c_n; ++c) {
    const double* go = g.data() + c * n;
    const double* src = in.data() + c * n;
    const double* w = weight.data() + static_cast<std::size_t>(c) * nt;
    for (std::size_t t = 0; t < nt; ++t) {
      if (grad_in) {
        double* gi = grad_in->data() + c * n;
        const double wv = w[t];
        for_each_row(geo.d, geo.taps[t], [&](Index oo, Index so, int x0, int x1) {
          for (int x = x0; x < x1; ++x) gi[so + x] += wv * go[oo + x];
        });
      }
      if (grad_weight) {
        double acc = 0.0;
        for_each_row(geo.d, geo.taps[t], [&](Index oo, Index so, int x0, int x1) {
          acc += dot_row(go + oo + x0, src + so + x0, x1 - x0);
        });
        (*grad_weight)[static_cast<std::size_t>(c) * nt + t] = acc;
      }
    }
  }
}

}  // namespace autoreg::kernels
