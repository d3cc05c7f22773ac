#include "autoreg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "autoreg/error.hpp"

namespace autoreg {

void LossHyper::project() {
  lambda1 = std::clamp(lambda1, 0.0, 1.0);
  lambda2 = std::max(lambda2, 0.0);
  lambda3 = std::max(lambda3, 0.0);
  lambda4 = std::max(lambda4, 0.0);
}

bool LossHyper::feasible() const {
  return lambda1 >= 0.0 && lambda1 <= 1.0 && lambda2 >= 0.0 && lambda3 >= 0.0 && lambda4 >= 0.0;
}

Tensor LossHyper::to_tensor() const { return Tensor({4}, {lambda1, lambda2, lambda3, lambda4}); }

LossHyper LossHyper::from_tensor(const Tensor& t) {
  require(t.size() == 4, "LossHyper needs exactly four values");
  return {t[0], t[1], t[2], t[3]};
}

namespace {

// ---------------------------------------------------------------------------
// Cropped box sums.

// Sum over [i - r, i + r] clipped to the line, along one axis of a
// single-channel grid.
void box_axis(std::vector<double>& v, const Dims3& d, int axis, int r) {
  const int n = axis == 0 ? d.nz : axis == 1 ? d.ny : d.nx;
  if (n == 1) return;
  const std::size_t stride = axis == 0 ? static_cast<std::size_t>(d.ny) * d.nx
                             : axis == 1 ? static_cast<std::size_t>(d.nx)
                                         : 1;
  const std::size_t lines = d.count() / n;
  std::vector<double> prefix(n + 1);
  for (std::size_t line = 0; line < lines; ++line) {
    // Decompose the line index into a base offset with the axis coordinate 0.
    std::size_t base;
    if (axis == 2) base = line * d.nx;
    else if (axis == 1) base = (line / d.nx) * static_cast<std::size_t>(d.ny) * d.nx + line % d.nx;
    else base = line;
    prefix[0] = 0.0;
    for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + v[base + i * stride];
    for (int i = 0; i < n; ++i) {
      const int lo = std::max(0, i - r), hi = std::min(n - 1, i + r);
      v[base + i * stride] = prefix[hi + 1] - prefix[lo];
    }
  }
}

std::vector<double> box_sum(const double* src, const Dims3& d, int r) {
  std::vector<double> v(src, src + d.count());
  for (int axis = 0; axis < 3; ++axis) box_axis(v, d, axis, r);
  return v;
}

std::vector<double> box_count(const Dims3& d, int r) {
  std::vector<double> ones(d.count(), 1.0);
  return box_sum(ones.data(), d, r);
}

struct LnccState {
  std::vector<double> sa, sb, saa, sbb, sab, n;
  double loss = 0.0;
};

LnccState lncc_forward(const Tensor& a, const Tensor& b, int window, double delta) {
  require(a.shape() == b.shape(), "lncc_loss: shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  require(grid_channels(a) == 1, "lncc_loss: single-channel images expected");
  require(window >= 3 && window % 2 == 1, "lncc_loss: window must be odd and >= 3");
  const Dims3 d = dims3(a);
  const std::size_t N = d.count();
  const int r = window / 2;
  std::vector<double> aa(N), bb(N), ab(N);
  for (std::size_t i = 0; i < N; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  LnccState s;
  s.sa = box_sum(a.data(), d, r);
  s.sb = box_sum(b.data(), d, r);
  s.saa = box_sum(aa.data(), d, r);
  s.sbb = box_sum(bb.data(), d, r);
  s.sab = box_sum(ab.data(), d, r);
  s.n = box_count(d, r);
  double acc = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double cross = s.sab[i] - s.sa[i] * s.sb[i] / s.n[i];
    const double va = s.saa[i] - s.sa[i] * s.sa[i] / s.n[i];
    const double vb = s.sbb[i] - s.sb[i] * s.sb[i] / s.n[i];
    acc += cross * cross / (va * vb + delta);
  }
  s.loss = -acc / static_cast<double>(N);
  return s;
}

void lncc_backward(const Tensor& a, const Tensor& b, int window, double delta,
                   const LnccState& s, double g, Tensor* ga, Tensor* gb) {
  const Dims3 d = dims3(a);
  const std::size_t N = d.count();
  const int r = window / 2;
  const double gc = -g / static_cast<double>(N);
  std::vector<double> gsa(N), gsb(N), gsaa(N), gsbb(N), gsab(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double n = s.n[i];
    const double cross = s.sab[i] - s.sa[i] * s.sb[i] / n;
    const double va = s.saa[i] - s.sa[i] * s.sa[i] / n;
    const double vb = s.sbb[i] - s.sb[i] * s.sb[i] / n;
    const double D = va * vb + delta;
    gsab[i] = gc * 2.0 * cross / D;
    gsaa[i] = -gc * cross * cross * vb / (D * D);
    gsbb[i] = -gc * cross * cross * va / (D * D);
    gsa[i] = -gsab[i] * s.sb[i] / n - 2.0 * gsaa[i] * s.sa[i] / n;
    gsb[i] = -gsab[i] * s.sa[i] / n - 2.0 * gsbb[i] * s.sb[i] / n;
  }
  const auto bsab = box_sum(gsab.data(), d, r);
  if (ga) {
    const auto bsa = box_sum(gsa.data(), d, r);
    const auto bsaa = box_sum(gsaa.data(), d, r);
    *ga = Tensor(a.shape(), 0.0);
    for (std::size_t i = 0; i < N; ++i) (*ga)[i] = bsa[i] + 2.0 * a[i] * bsaa[i] + b[i] * bsab[i];
  }
  if (gb) {
    const auto bsb = box_sum(gsb.data(), d, r);
    const auto bsbb = box_sum(gsbb.data(), d, r);
    *gb = Tensor(b.shape(), 0.0);
    for (std::size_t i = 0; i < N; ++i) (*gb)[i] = bsb[i] + 2.0 * b[i] * bsbb[i] + a[i] * bsab[i];
  }
}

// ---------------------------------------------------------------------------
// MIND.

struct MindGeometry {
  int nd;
  Dims3 d;
  std::vector<std::array<int, 3>> patch;  // patch offsets (z, y, x)
  std::vector<double> gauss;              // normalised Gaussian weights
  std::vector<std::array<int, 3>> shifts; // 2*nd neighbour offsets
};

MindGeometry mind_geometry(const Tensor& img, double sigma) {
  MindGeometry g;
  g.nd = grid_ndim(img);
  require(grid_channels(img) == 1, "mind: single-channel images expected");
  g.d = dims3(img);
  const int zr = g.nd == 3 ? 1 : 0;
  double total = 0.0;
  for (int z = -zr; z <= zr; ++z)
    for (int y = -1; y <= 1; ++y)
      for (int x = -1; x <= 1; ++x) {
        g.patch.push_back({z, y, x});
        const double w = std::exp(-static_cast<double>(z * z + y * y + x * x) / (2.0 * sigma * sigma));
        g.gauss.push_back(w);
        total += w;
      }
  for (double& w : g.gauss) w /= total;
  for (int a = 0; a < g.nd; ++a) {
    for (int s : {-1, 1}) {
      std::array<int, 3> off{0, 0, 0};
      off[a + (3 - g.nd)] = s;
      g.shifts.push_back(off);
    }
  }
  return g;
}

inline std::size_t clamped_index(const Dims3& d, int z, int y, int x) {
  z = std::clamp(z, 0, d.nz - 1);
  y = std::clamp(y, 0, d.ny - 1);
  x = std::clamp(x, 0, d.nx - 1);
  return (static_cast<std::size_t>(z) * d.ny + y) * d.nx + x;
}

// Patch distances D[r * N + i].
std::vector<double> mind_distances(const Tensor& img, const MindGeometry& g) {
  const std::size_t N = g.d.count();
  const std::size_t R = g.shifts.size();
  std::vector<double> D(R * N, 0.0);
  std::size_t i = 0;
  for (int z = 0; z < g.d.nz; ++z)
    for (int y = 0; y < g.d.ny; ++y)
      for (int x = 0; x < g.d.nx; ++x, ++i)
        for (std::size_t r = 0; r < R; ++r) {
          const auto& s = g.shifts[r];
          double acc = 0.0;
          for (std::size_t p = 0; p < g.patch.size(); ++p) {
            const auto& q = g.patch[p];
            const double diff = img[clamped_index(g.d, z + q[0], y + q[1], x + q[2])] -
                                img[clamped_index(g.d, z + q[0] + s[0], y + q[1] + s[1], x + q[2] + s[2])];
            acc += g.gauss[p] * diff * diff;
          }
          D[r * N + i] = acc;
        }
  return D;
}

struct MindState {
  std::vector<double> D;
  Tensor desc;  // [R, spatial]
};

MindState mind_forward(const Tensor& img, const MindGeometry& g, double delta) {
  MindState s;
  s.D = mind_distances(img, g);
  const std::size_t N = g.d.count();
  const std::size_t R = g.shifts.size();
  std::vector<int> shape = img.shape();
  shape[0] = static_cast<int>(R);
  s.desc = Tensor(shape, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    double mean = 0.0, mn = s.D[i];
    for (std::size_t r = 0; r < R; ++r) {
      mean += s.D[r * N + i];
      mn = std::min(mn, s.D[r * N + i]);
    }
    const double V = mean / static_cast<double>(R) + delta;
    for (std::size_t r = 0; r < R; ++r) s.desc[r * N + i] = std::exp(-(s.D[r * N + i] - mn) / V);
  }
  return s;
}

// Accumulates d(loss)/d(img) given d(loss)/d(desc).
void mind_backward(const Tensor& img, const MindGeometry& g, double delta, const MindState& s,
                   const std::vector<double>& gdesc, Tensor& gimg) {
  const std::size_t N = g.d.count();
  const std::size_t R = g.shifts.size();
  std::vector<double> gD(R * N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    double mean = 0.0;
    std::size_t m = 0;
    for (std::size_t r = 0; r < R; ++r) {
      mean += s.D[r * N + i];
      if (s.D[r * N + i] < s.D[m * N + i]) m = r;
    }
    const double V = mean / static_cast<double>(R) + delta;
    const double Dm = s.D[m * N + i];
    double sum_gd = 0.0, sum_gdd = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      const double gd = gdesc[r * N + i] * s.desc[r * N + i];
      sum_gd += gd;
      sum_gdd += gd * (s.D[r * N + i] - Dm);
    }
    for (std::size_t r = 0; r < R; ++r) {
      double v = -gdesc[r * N + i] * s.desc[r * N + i] / V + sum_gdd / (static_cast<double>(R) * V * V);
      if (r == m) v += sum_gd / V;
      gD[r * N + i] = v;
    }
  }
  std::size_t i = 0;
  for (int z = 0; z < g.d.nz; ++z)
    for (int y = 0; y < g.d.ny; ++y)
      for (int x = 0; x < g.d.nx; ++x, ++i)
        for (std::size_t r = 0; r < R; ++r) {
          const double gv = gD[r * N + i];
          if (gv == 0.0) continue;
          const auto& sh = g.shifts[r];
          for (std::size_t p = 0; p < g.patch.size(); ++p) {
            const auto& q = g.patch[p];
            const std::size_t i0 = clamped_index(g.d, z + q[0], y + q[1], x + q[2]);
            const std::size_t i1 = clamped_index(g.d, z + q[0] + sh[0], y + q[1] + sh[1], x + q[2] + sh[2]);
            const double c = 2.0 * g.gauss[p] * (img[i0] - img[i1]) * gv;
            gimg[i0] += c;
            gimg[i1] -= c;
          }
        }
}

// ---------------------------------------------------------------------------

double diffusion_value(const Tensor& u) {
  const int nd = grid_ndim(u);
  const auto dims = grid_dims(u);
  for (int dd : dims) require(dd >= 2, "diffusion_loss needs at least 2 voxels per axis");
  const std::size_t N = voxel_count(u);
  std::array<std::size_t, 3> stride{};
  stride[nd - 1] = 1;
  for (int a = nd - 2; a >= 0; --a) stride[a] = stride[a + 1] * dims[a + 1];
  double total = 0.0;
  for (int a = 0; a < nd; ++a) {
    const double count = static_cast<double>(N / dims[a] * (dims[a] - 1));
    for (int c = 0; c < u.dim(0); ++c) {
      const double* v = u.data() + c * N;
      double s = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        if ((i / stride[a]) % dims[a] == static_cast<std::size_t>(dims[a] - 1)) continue;
        const double diff = v[i + stride[a]] - v[i];
        s += diff * diff;
      }
      total += s / count;
    }
  }
  return total;
}

Tensor diffusion_grad(const Tensor& u, double g) {
  const int nd = grid_ndim(u);
  const auto dims = grid_dims(u);
  const std::size_t N = voxel_count(u);
  std::array<std::size_t, 3> stride{};
  stride[nd - 1] = 1;
  for (int a = nd - 2; a >= 0; --a) stride[a] = stride[a + 1] * dims[a + 1];
  Tensor out(u.shape(), 0.0);
  for (int a = 0; a < nd; ++a) {
    const double count = static_cast<double>(N / dims[a] * (dims[a] - 1));
    for (int c = 0; c < u.dim(0); ++c) {
      const double* v = u.data() + c * N;
      double* o = out.data() + c * N;
      for (std::size_t i = 0; i < N; ++i) {
        if ((i / stride[a]) % dims[a] == static_cast<std::size_t>(dims[a] - 1)) continue;
        const double k = 2.0 * g * (v[i + stride[a]] - v[i]) / count;
        o[i + stride[a]] += k;
        o[i] -= k;
      }
    }
  }
  return out;
}

struct DiceSums {
  std::vector<double> inter, sum;
};

DiceSums dice_sums(const Tensor& p, const Tensor& q, double delta) {
  require(p.shape() == q.shape(), "soft_dice_loss: label count or grid mismatch " +
                                      shape_string(p.shape()) + " vs " + shape_string(q.shape()));
  const int L = grid_channels(p);
  const std::size_t N = voxel_count(p);
  DiceSums s{std::vector<double>(L), std::vector<double>(L)};
  for (int l = 0; l < L; ++l) {
    double inter = 0, sp = 0, sq = 0;
    for (std::size_t i = 0; i < N; ++i) {
      inter += p[l * N + i] * q[l * N + i];
      sp += p[l * N + i];
      sq += q[l * N + i];
    }
    s.inter[l] = inter;
    s.sum[l] = sp + sq + delta;
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

double lncc_loss(const ScalarField& a, const ScalarField& b, int window, double delta) {
  return lncc_forward(a.tensor(), b.tensor(), window, delta).loss;
}

Tensor mind_descriptor(const ScalarField& image, double sigma, double delta) {
  const auto g = mind_geometry(image.tensor(), sigma);
  return mind_forward(image.tensor(), g, delta).desc;
}

double mind_loss(const ScalarField& a, const ScalarField& b, double sigma, double delta) {
  require(a.dims() == b.dims(), "mind_loss: shape mismatch");
  const Tensor da = mind_descriptor(a, sigma, delta);
  const Tensor db = mind_descriptor(b, sigma, delta);
  double s = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) s += std::abs(da[i] - db[i]);
  return s / static_cast<double>(da.size());
}

double diffusion_loss(const VectorField& field) { return diffusion_value(field.tensor()); }

double sim_loss(const ScalarField& warped, const ScalarField& target, double lambda1, int window,
                const LossConstants& k) {
  require(lambda1 >= 0.0 && lambda1 <= 1.0, "sim_loss: lambda1 must lie in [0,1]");
  return lambda1 * lncc_loss(warped, target, window, k.delta) +
         (1.0 - lambda1) * mind_loss(warped, target, k.mind_sigma, k.delta);
}

LossBreakdown combine_reg_terms(double sim_full, double sim_half, double sim_quarter,
                                double smooth, const LossHyper& lam) {
  LossBreakdown b{sim_full, sim_half, sim_quarter, smooth, 0.0};
  b.total = sim_full + lam.lambda2 * smooth + lam.lambda3 * sim_half + lam.lambda4 * sim_quarter;
  return b;
}

LossBreakdown reg_loss(std::span<const ScalePair> scales, std::span<const VectorField> velocities,
                       const LossHyper& lam, const LossConstants& k) {
  require(scales.size() == 3, "reg_loss: full, half and quarter scales are required");
  for (std::size_t s = 1; s < 3; ++s) {
    const auto& prev = scales[s - 1].target.dims();
    const auto& cur = scales[s].target.dims();
    require(prev.size() == cur.size(), "reg_loss: inconsistent dimensionality");
    for (std::size_t a = 0; a < cur.size(); ++a)
      require(prev[a] == 2 * cur[a], "reg_loss: scales must halve the grid");
  }
  double sims[3];
  for (int s = 0; s < 3; ++s)
    sims[s] = sim_loss(scales[s].warped, scales[s].target, lam.lambda1, k.ncc_window[s], k);
  double smooth = 0.0;
  for (const auto& v : velocities) smooth += diffusion_loss(v);
  return combine_reg_terms(sims[0], sims[1], sims[2], smooth, lam);
}

double soft_dice_loss(const Tensor& warped_onehot, const Tensor& target_onehot, double delta) {
  const auto s = dice_sums(warped_onehot, target_onehot, delta);
  double mean = 0.0;
  for (std::size_t l = 0; l < s.inter.size(); ++l) mean += 2.0 * s.inter[l] / s.sum[l];
  return 1.0 - mean / static_cast<double>(s.inter.size());
}

DiceScores dice_score(const LabelField& pred, const LabelField& truth) {
  require(pred.dims() == truth.dims(), "dice_score: shape mismatch");
  require(pred.num_labels() == truth.num_labels(), "dice_score: label universe mismatch");
  const int L = truth.num_labels();
  std::vector<double> inter(L, 0.0), a(L, 0.0), b(L, 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    a[pred[i]] += 1.0;
    b[truth[i]] += 1.0;
    if (pred[i] == truth[i]) inter[truth[i]] += 1.0;
  }
  DiceScores out;
  double total = 0.0;
  int counted = 0;
  for (int l = 1; l < L; ++l) {
    if (a[l] + b[l] == 0.0) {
      out.per_label.emplace_back(std::nullopt);
      continue;
    }
    const double dsc = 2.0 * inter[l] / (a[l] + b[l]);
    out.per_label.emplace_back(dsc);
    total += dsc;
    ++counted;
  }
  out.mean = counted ? total / counted : 1.0;
  return out;
}

double global_ncc(const ScalarField& a, const ScalarField& b) {
  require(a.dims() == b.dims(), "global_ncc: shape mismatch");
  const std::size_t n = a.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  const double den = std::sqrt(saa * sbb);
  return den > 0.0 ? sab / den : 0.0;
}

// ---------------------------------------------------------------------------

namespace ad {

Var lncc_loss(const Var& a, const Var& b, int window, double delta) {
  auto state = std::make_shared<LnccState>(lncc_forward(a.value(), b.value(), window, delta));
  const double loss = state->loss;
  return make_node(Tensor::scalar(loss), {a, b}, [state, window, delta](Node& self) {
    Tensor ga, gb;
    lncc_backward(self.input(0), self.input(1), window, delta, *state, self.grad[0],
                  self.input_needs_grad(0) ? &ga : nullptr, self.input_needs_grad(1) ? &gb : nullptr);
    if (!ga.empty()) self.inputs[0]->accumulate(std::move(ga));
    if (!gb.empty()) self.inputs[1]->accumulate(std::move(gb));
  });
}

Var mind_loss(const Var& a, const Var& b, double sigma, double delta) {
  require(a.value().shape() == b.value().shape(), "mind_loss: shape mismatch " +
                                                      shape_string(a.value().shape()) + " vs " +
                                                      shape_string(b.value().shape()));
  auto geo = std::make_shared<MindGeometry>(mind_geometry(a.value(), sigma));
  auto sa = std::make_shared<MindState>(mind_forward(a.value(), *geo, delta));
  auto sb = std::make_shared<MindState>(mind_forward(b.value(), *geo, delta));
  const std::size_t M = sa->desc.size();
  double s = 0.0;
  for (std::size_t i = 0; i < M; ++i) s += std::abs(sa->desc[i] - sb->desc[i]);
  return make_node(Tensor::scalar(s / static_cast<double>(M)), {a, b},
                   [geo, sa, sb, delta, M](Node& self) {
                     const double g = self.grad[0] / static_cast<double>(M);
                     std::vector<double> gd(M);
                     for (std::size_t i = 0; i < M; ++i) {
                       const double diff = sa->desc[i] - sb->desc[i];
                       gd[i] = diff > 0.0 ? g : diff < 0.0 ? -g : 0.0;
                     }
                     if (self.input_needs_grad(0)) {
                       Tensor ga(self.input(0).shape(), 0.0);
                       mind_backward(self.input(0), *geo, delta, *sa, gd, ga);
                       self.inputs[0]->accumulate(std::move(ga));
                     }
                     if (self.input_needs_grad(1)) {
                       for (double& v : gd) v = -v;
                       Tensor gb(self.input(1).shape(), 0.0);
                       mind_backward(self.input(1), *geo, delta, *sb, gd, gb);
                       self.inputs[1]->accumulate(std::move(gb));
                     }
                   });
}

Var diffusion_loss(const Var& field) {
  return make_node(Tensor::scalar(diffusion_value(field.value())), {field}, [](Node& self) {
    self.inputs[0]->accumulate(diffusion_grad(self.input(0), self.grad[0]));
  });
}

Var sim_loss(const Var& warped, const Var& target, const Var& lambda1, int window,
             const LossConstants& k) {
  const Var ncc = lncc_loss(warped, target, window, k.delta);
  const Var mind = mind_loss(warped, target, k.mind_sigma, k.delta);
  const Var one_minus = sub(constant(Tensor::scalar(1.0)), lambda1);
  const Var terms[] = {mul_scalar(ncc, lambda1), mul_scalar(mind, one_minus)};
  return sum_scalars(terms);
}

Var soft_dice_loss(const Var& warped_onehot, const Var& target_onehot, double delta) {
  const auto s = std::make_shared<DiceSums>(dice_sums(warped_onehot.value(), target_onehot.value(), delta));
  const int L = static_cast<int>(s->inter.size());
  double mean = 0.0;
  for (int l = 0; l < L; ++l) mean += 2.0 * s->inter[l] / s->sum[l];
  return make_node(Tensor::scalar(1.0 - mean / L), {warped_onehot, target_onehot}, [s, L](Node& self) {
    const std::size_t N = voxel_count(self.input(0));
    const double g = self.grad[0];
    for (int side = 0; side < 2; ++side) {
      if (!self.input_needs_grad(side)) continue;
      const Tensor& other = self.input(1 - side);
      Tensor out(self.input(side).shape(), 0.0);
      for (int l = 0; l < L; ++l) {
        const double S = s->sum[l], I = s->inter[l];
        for (std::size_t i = 0; i < N; ++i)
          out[l * N + i] = -g / L * (2.0 * other[l * N + i] / S - 2.0 * I / (S * S));
      }
      self.inputs[side]->accumulate(std::move(out));
    }
  });
}

RegLossGraph reg_loss(std::span<const ScaleVars> scales, std::span<const Var> velocities,
                      const Var& lambda, const LossConstants& k) {
  require(scales.size() == 3, "reg_loss: full, half and quarter scales are required");
  require(lambda.value().size() == 4, "reg_loss: lambda must have four entries");
  const Var l1 = element(lambda, 0);
  std::array<Var, 3> sims;
  for (int s = 0; s < 3; ++s) sims[s] = sim_loss(scales[s].warped, scales[s].target, l1, k.ncc_window[s], k);
  std::vector<Var> smooth_terms;
  for (const Var& v : velocities) smooth_terms.push_back(diffusion_loss(v));
  const Var smooth = smooth_terms.empty() ? constant(Tensor::scalar(0.0)) : sum_scalars(smooth_terms);
  const Var terms[] = {sims[0], mul_scalar(smooth, element(lambda, 1)),
                       mul_scalar(sims[1], element(lambda, 2)), mul_scalar(sims[2], element(lambda, 3))};
  RegLossGraph out;
  out.total = sum_scalars(terms);
  out.breakdown = {sims[0].item(), sims[1].item(), sims[2].item(), smooth.item(), out.total.item()};
  return out;
}

}  // namespace ad

}  // namespace autoreg
