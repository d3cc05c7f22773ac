#include "autoreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "autoreg/error.hpp"
#include "autoreg/field_core.hpp"
#include "autoreg/kernels.hpp"

namespace autoreg {

void SynthSpec::validate() const {
  if (ndim != 2 && ndim != 3) throw ConfigError("synth: ndim must be 2 or 3");
  if (static_cast<int>(shape.size()) != ndim) throw ConfigError("synth: shape rank differs from ndim");
  for (int d : shape)
    if (d < 8 || d % 4 != 0) throw ConfigError("synth: every extent must be a multiple of 4 and at least 8");
  if (num_labels < 1) throw ConfigError("synth: num_labels must be >= 1");
  if (num_train < 1 || num_val < 1 || num_test < 1) throw ConfigError("synth: every split needs at least one pair");
  if (amplitude < 0 || sigma <= 0 || noise < 0 || blur < 0) throw ConfigError("synth: negative amplitude/sigma/noise");
  if (remap_power <= 0) throw ConfigError("synth: remap_power must be positive");
  if (max_retries < 1) throw ConfigError("synth: max_retries must be >= 1");
}

bool Dataset::all_labeled() const {
  return std::all_of(pairs.begin(), pairs.end(), [](const RegPair& p) { return p.has_labels(); });
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 over the three words
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

Tensor gaussian_blur(const Tensor& t, double sigma) {
  if (sigma <= 0) return t;
  const Dims3 d = dims3(t);
  const int nd = grid_ndim(t);
  const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(2 * r + 1);
  double s = 0;
  for (int i = -r; i <= r; ++i) s += (k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (double& v : k) v /= s;
  Tensor out = t;
  const int C = t.dim(0);
  const std::array<int, 3> ext{d.nz, d.ny, d.nx};
  const std::array<std::size_t, 3> stride{static_cast<std::size_t>(d.ny) * d.nx, static_cast<std::size_t>(d.nx), 1};
  for (int axis = 3 - nd; axis < 3; ++axis) {
    Tensor src = out;
    const int n = ext[axis];
    for (int c = 0; c < C; ++c) {
      const double* in = src.data() + c * d.count();
      double* o = out.data() + c * d.count();
      for (std::size_t i = 0; i < d.count(); ++i) {
        const int p = static_cast<int>((i / stride[axis]) % n);
        double acc = 0;
        for (int j = -r; j <= r; ++j) {
          const int q = std::clamp(p + j, 0, n - 1);
          acc += k[j + r] * in[i + (static_cast<std::ptrdiff_t>(q) - p) * static_cast<std::ptrdiff_t>(stride[axis])];
        }
        o[i] = acc;
      }
    }
  }
  return out;
}

namespace {

// Blurred white noise. Generated on a grid padded by the kernel radius and
// cropped, so border voxels have the same statistics as interior ones.
Tensor smooth_noise(const std::vector<int>& dims, int channels, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  const int pad = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<int> big = dims;
  for (int& d : big) d += 2 * pad;
  Tensor noise = make_grid(channels, big);
  for (double& v : noise.values()) v = n01(rng);
  noise = gaussian_blur(noise, sigma);
  const Dims3 bd = dims3(big), sd = dims3(dims);
  const int nd = static_cast<int>(dims.size());
  const int pz = nd == 3 ? pad : 0;
  Tensor out = make_grid(channels, dims);
  for (int c = 0; c < channels; ++c)
    for (int z = 0; z < sd.nz; ++z)
      for (int y = 0; y < sd.ny; ++y)
        for (int x = 0; x < sd.nx; ++x)
          out[((static_cast<std::size_t>(c) * sd.nz + z) * sd.ny + y) * sd.nx + x] =
              noise[((static_cast<std::size_t>(c) * bd.nz + z + pz) * bd.ny + y + pad) * bd.nx + x + pad];
  return out;
}

}  // namespace

SynthBase synth_base(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01;
  const auto& dims = spec.shape;
  const int nd = spec.ndim;
  const std::size_t N = shape_size(dims);

  // perturbed radial profile; higher = deeper inside
  const double min_extent = *std::min_element(dims.begin(), dims.end());
  const Tensor wobble = smooth_noise(dims, 1, min_extent / 8.0, rng);
  const double wmax = std::max(max_abs(wobble), 1e-12);
  // one blob per 16-voxel cell, centres jittered
  std::vector<int> per_axis(nd);
  int blobs = 1;
  for (int a = 0; a < nd; ++a) blobs *= (per_axis[a] = std::max(1, dims[a] / 16));
  std::vector<std::vector<double>> centres(blobs, std::vector<double>(nd));
  for (int b = 0; b < blobs; ++b)
    for (int a = 0, rem = b; a < nd; rem /= per_axis[a], ++a) {
      const double cell = static_cast<double>(dims[a]) / per_axis[a];
      centres[b][a] = cell * (rem % per_axis[a] + 0.5 + (u01(rng) - 0.5) / 4.0);
    }
  std::vector<double> profile(N);
  for (std::size_t i = 0; i < N; ++i) {
    std::size_t rem = i;
    std::vector<double> p(nd);
    for (int a = nd - 1; a >= 0; --a) {
      p[a] = static_cast<double>(rem % dims[a]);
      rem /= dims[a];
    }
    double best = -1e300;
    for (const auto& c : centres) {
      double r2 = 0;
      for (int a = 0; a < nd; ++a) {
        const double q = (p[a] - c[a]) / (static_cast<double>(dims[a]) / per_axis[a] / 2.0);
        r2 += q * q;
      }
      best = std::max(best, -r2);
    }
    profile[i] = best + 0.3 * wobble[i] / wmax;
  }

  // equal-volume bins by rank
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return profile[a] < profile[b]; });
  const int L = spec.num_labels;
  std::vector<std::int32_t> lab(N);
  for (std::size_t r = 0; r < N; ++r) lab[order[r]] = static_cast<std::int32_t>(r * L / N);
  LabelField labels(dims, L, std::move(lab));

  std::vector<double> level(L);
  for (int l = 0; l < L; ++l) level[l] = L == 1 ? 0.5 : 0.1 + 0.8 * l / (L - 1);
  std::shuffle(level.begin(), level.end(), rng);
  Tensor img = make_grid(1, dims);
  for (std::size_t i = 0; i < N; ++i) img[i] = level[labels[i]];
  img = gaussian_blur(img, spec.blur);
  for (double& v : img.values()) v += spec.noise * n01(rng);
  return {ScalarField(std::move(img)), std::move(labels)};
}

VectorField synth_velocity(const SynthSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor v = smooth_noise(spec.shape, spec.ndim, spec.sigma, rng);
  const std::size_t N = voxel_count(v);
  double vmax = 0;
  for (std::size_t i = 0; i < N; ++i) {
    double m = 0;
    for (int c = 0; c < spec.ndim; ++c) m += v[c * N + i] * v[c * N + i];
    vmax = std::max(vmax, std::sqrt(m));
  }
  v *= vmax > 0 ? spec.amplitude / vmax : 0.0;
  return VectorField(std::move(v));
}

RegPair synth_pair(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto base = synth_base(spec, derive_seed(seed, 1));
  VectorField phi;
  bool ok = false;
  for (int attempt = 0; attempt < spec.max_retries && !ok; ++attempt) {
    phi = integrate_svf(synth_velocity(spec, derive_seed(seed, 2, attempt)));
    ok = count_folds(phi) == 0;
  }
  if (!ok) throw DataError("synth: could not draw a fold-free deformation within max_retries; lower amplitude or raise sigma");
  RegPair p;
  p.source = base.image;
  Tensor t = kernels::warp(base.image.tensor(), phi.tensor());
  if (spec.multimodal)
    for (double& v : t.values()) v = 1.0 - std::pow(std::clamp(v, 0.0, 1.0), spec.remap_power);
  std::mt19937_64 rng(derive_seed(seed, 3));
  std::normal_distribution<double> n01;
  for (double& v : t.values()) v += spec.noise * n01(rng);
  p.target = ScalarField(std::move(t));
  p.source_labels = base.labels;
  p.target_labels = warp_labels(base.labels, phi);
  p.ground_truth = std::move(phi);
  return p;
}

SynthDataset synth_dataset(const SynthSpec& spec) {
  spec.validate();
  SynthDataset out;
  const std::array<std::pair<Dataset*, int>, 3> splits{{{&out.train, spec.num_train},
                                                          {&out.val, spec.num_val},
                                                          {&out.test, spec.num_test}}};
  const char* names[] = {"train", "val", "test"};
  for (int s = 0; s < 3; ++s) {
    Dataset& d = *splits[s].first;
    d.name = names[s];
    for (int i = 0; i < splits[s].second; ++i) {
      auto p = synth_pair(spec, derive_seed(spec.seed, s + 1, i));
      p.id = d.name + "_" + std::to_string(i);
      d.pairs.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace autoreg
