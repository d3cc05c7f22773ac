#include <cmath>

#include "ad_util.hpp"
#include "autoreg/error.hpp"
#include "autoreg/search_space.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace autoreg;

namespace {

double leaky(double x) { return x > 0 ? x : 0.2 * x; }

// Direct 2D correlation with zero padding; weight [Co, Ci, k, k].
Tensor conv2d_oracle(const Tensor& in, const Tensor& w, const Tensor& b, int dil) {
  const int ci = in.dim(0), ny = in.dim(1), nx = in.dim(2);
  const int co = w.dim(0), k = w.dim(2), r = k / 2;
  Tensor out({co, ny, nx}, 0.0);
  for (int o = 0; o < co; ++o)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        double acc = b.empty() ? 0.0 : b[o];
        for (int i = 0; i < ci; ++i)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int yy = y + (ky - r) * dil, xx = x + (kx - r) * dil;
              if (yy < 0 || yy >= ny || xx < 0 || xx >= nx) continue;
              acc += w[((o * ci + i) * k + ky) * k + kx] * in[(i * ny + yy) * nx + xx];
            }
        out[(o * ny + y) * nx + x] = acc;
      }
  return out;
}

Tensor depthwise2d_oracle(const Tensor& in, const Tensor& w, int dil) {
  const int c = in.dim(0), k = w.dim(1);
  Tensor out(in.shape(), 0.0);
  for (int ch = 0; ch < c; ++ch) {
    Tensor one({1, in.dim(1), in.dim(2)}, std::vector<double>(in.data() + ch * in.dim(1) * in.dim(2),
                                                              in.data() + (ch + 1) * in.dim(1) * in.dim(2)));
    Tensor wk({1, 1, k, k}, std::vector<double>(w.data() + ch * k * k, w.data() + (ch + 1) * k * k));
    const auto o = conv2d_oracle(one, wk, Tensor(), dil);
    std::copy(o.storage().begin(), o.storage().end(), out.storage().begin() + ch * o.size());
  }
  return out;
}

Tensor leaky_all(Tensor t) {
  for (double& v : t.values()) v = leaky(v);
  return t;
}

struct Fixture {
  NetworkConfig cfg;
  Network net;
  ParamSet w;
  explicit Fixture(int ndim = 2, int channels = 4, std::uint64_t seed = 3)
      : cfg{ndim, channels}, net(cfg), w(net.init_weights(seed)) {}

  void randomize_heads(double scale, std::uint64_t seed) {
    for (int s = 0; s < 2; ++s) {
      auto& h = w[net.head_weight(s)];
      h = testutil::random_tensor(h.shape(), seed + s, -scale, scale);
    }
  }
};

Tensor image(const std::vector<int>& dims, std::uint64_t seed) {
  return testutil::random_image(dims, seed).tensor();
}

double rel_diff(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b) / std::max(max_abs(b), 1e-300); }

}  // namespace

TEST_CASE("op catalog") {
  CHECK(full_catalog().size() == 8);
  CHECK(op_spec(OpKind::DIL7).kernel == 7);
  CHECK(op_spec(OpKind::DIL7).dilation == 2);
  CHECK(op_spec(OpKind::SEP5).separable);
  CHECK_FALSE(op_spec(OpKind::CONV5).separable);
  CHECK(op_from_name("SEP3") == OpKind::SEP3);
  CHECK(std::string(op_name(OpKind::CONV1)) == "CONV1");
  CHECK_THROWS_AS(op_from_name("CONV9"), ConfigError);
}

TEST_CASE("apply_op examples") {
  const Tensor x = testutil::random_tensor({3, 8, 8}, 1);
  SUBCASE("identity CONV1") {
    Tensor w({3, 3, 1, 1}, 0.0);
    for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
    const auto y = apply_op(OpKind::CONV1, ad::constant(x), {ad::constant(w), {}, ad::constant(Tensor({3}, 0.0))});
    CHECK(y.value() == leaky_all(x));
  }
  SUBCASE("CONV3 on a constant input") {
    Tensor w({2, 3, 3, 3}, 0.0);
    w = testutil::random_tensor(w.shape(), 2);
    double s = 0.0;
    for (int i = 0; i < 27; ++i) s += w[i];
    const auto y = apply_op(OpKind::CONV3, ad::constant(Tensor({3, 8, 8}, 1.5)),
                            {ad::constant(w), {}, ad::constant(Tensor({2}, 0.0))});
    for (int yy = 1; yy < 7; ++yy)
      for (int xx = 1; xx < 7; ++xx) CHECK(y.value()[yy * 8 + xx] == doctest::Approx(leaky(1.5 * s)));
  }
  SUBCASE("SEP3 equals depthwise then mixing") {
    const Tensor dw = testutil::random_tensor({3, 3, 3}, 3);
    const Tensor pw = testutil::random_tensor({5, 3, 1, 1}, 4);
    const Tensor b = testutil::random_tensor({5}, 5);
    const auto y = apply_op(OpKind::SEP3, ad::constant(x), {ad::constant(pw), ad::constant(dw), ad::constant(b)});
    const auto want = leaky_all(conv2d_oracle(depthwise2d_oracle(x, dw, 1), pw, b, 1));
    CHECK(max_abs_diff(y.value(), want) < 1e-6);
  }
  SUBCASE("DIL5 against the direct oracle") {
    const Tensor w = testutil::random_tensor({2, 3, 5, 5}, 6);
    const Tensor b = testutil::random_tensor({2}, 7);
    const auto y = apply_op(OpKind::DIL5, ad::constant(x), {ad::constant(w), {}, ad::constant(b)});
    CHECK(max_abs_diff(y.value(), leaky_all(conv2d_oracle(x, w, b, 2))) < 1e-9);
  }
  SUBCASE("channel mismatch") {
    const Tensor w({2, 4, 3, 3}, 0.0);
    CHECK_THROWS_AS(apply_op(OpKind::CONV3, ad::constant(x), {ad::constant(w), {}, {}}), ContractError);
  }
}

TEST_CASE("mixed_op examples") {
  Fixture f(2, 4);
  const auto wv = bind_weights(f.w, false);
  const auto x = ad::constant(testutil::random_tensor({4, 8, 8}, 11));
  std::vector<OpVars> ops;
  std::vector<Tensor> single;
  for (int o = 0; o < 8; ++o) {
    ops.push_back(op_vars(f.net, wv, CellKind::Deform, 1, 1, o));
    single.push_back(apply_op(f.net.op(o), x, ops.back()).value());
  }
  SUBCASE("uniform logits average the ops") {
    const auto y = mixed_op(f.net, x, ad::constant(Tensor({6, 8}, 0.0)), 4, ops);
    Tensor avg(single[0].shape(), 0.0);
    for (const auto& s : single) avg.axpy(1.0 / 8, s);
    CHECK(max_abs_diff(y.value(), avg) < 1e-12);
  }
  SUBCASE("saturated logit selects one op") {
    for (int o = 0; o < 8; ++o) {
      Tensor L({6, 8}, 0.0);
      L[2 * 8 + o] = 20.0;
      const auto y = mixed_op(f.net, x, ad::constant(L), 2, ops);
      CHECK(rel_diff(y.value(), single[o]) < 1e-3);
    }
  }
  SUBCASE("random logits match the weighted-sum oracle and are shift invariant") {
    Tensor L = testutil::random_tensor({6, 8}, 12, -2.0, 2.0);
    const auto y = mixed_op(f.net, x, ad::constant(L), 3, ops);
    double z = 0.0;
    for (int o = 0; o < 8; ++o) z += std::exp(L[24 + o]);
    Tensor want(single[0].shape(), 0.0);
    for (int o = 0; o < 8; ++o) want.axpy(std::exp(L[24 + o]) / z, single[o]);
    CHECK(max_abs_diff(y.value(), want) < 1e-6);
    for (int o = 0; o < 8; ++o) L[24 + o] += 3.7;
    CHECK(max_abs_diff(mixed_op(f.net, x, ad::constant(L), 3, ops).value(), y.value()) < 1e-6);
  }
}

TEST_CASE("feature cell shape contract and discrete oracle") {
  Fixture f(2, 4);
  const auto wv = bind_weights(f.w, false);
  const auto x = ad::constant(image({16, 16}, 1));
  const auto A = ArchParams::zeros(8);
  const auto y = feature_cell_forward(f.net, x, wv, CellKind::FeatureSource, 0, FamilyArch::relaxed(A.alpha_f, false));
  CHECK(y.value().shape() == std::vector<int>{4, 8, 8});

  Tensor L({6, 8}, 0.0);
  const std::array<int, 6> pick{5, 3, 7, 1, 4, 2};
  for (int r = 0; r < 6; ++r) L[r * 8 + pick[r]] = 40.0;
  for (int scale : {0, 1}) {
    const auto in = scale == 0 ? x : ad::constant(testutil::random_tensor({4, 16, 16}, 9));
    const auto relaxed = feature_cell_forward(f.net, in, wv, CellKind::FeatureTarget, scale, FamilyArch::relaxed(L, false));
    // plain three-layer network
    Tensor h = in.value();
    for (int e = 0; e < 3; ++e) {
      const int o = pick[arch_row(scale, e)];
      const auto v = op_vars(f.net, wv, CellKind::FeatureTarget, scale, e, o);
      const OpSpec spec = op_spec(f.net.op(o));
      h = spec.separable ? conv2d_oracle(depthwise2d_oracle(h, v.depthwise.value(), spec.dilation), v.weight.value(),
                                         v.bias.value(), 1)
                         : conv2d_oracle(h, v.weight.value(), v.bias.value(), spec.dilation);
      h = leaky_all(h);
    }
    Tensor sub({4, 8, 8}, 0.0);
    for (int c = 0; c < 4; ++c)
      for (int yy = 0; yy < 8; ++yy)
        for (int xx = 0; xx < 8; ++xx) sub[(c * 8 + yy) * 8 + xx] = h[(c * 16 + 2 * yy) * 16 + 2 * xx];
    CHECK(max_abs_diff(relaxed.value(), sub) < 1e-5);
    const auto discrete = feature_cell_forward(f.net, in, wv, CellKind::FeatureTarget, scale, FamilyArch::fixed(argmax_rows(L)));
    CHECK(max_abs_diff(discrete.value(), sub) < 1e-9);
  }
  CHECK_THROWS_AS(feature_cell_forward(f.net, ad::constant(image({15, 16}, 1)), wv, CellKind::FeatureSource, 0,
                                       FamilyArch::relaxed(A.alpha_f, false)),
                  ContractError);
}

TEST_CASE("feature cell with zero kernels is a bias cascade") {
  Fixture f(2, 4);
  for (std::size_t i = 0; i < f.w.size(); ++i) {
    if (f.w.name(i).ends_with(".b")) f.w[i] = testutil::random_tensor(f.w[i].shape(), i, -1.0, 1.0);
    else f.w[i].fill(0.0);
  }
  const auto wv = bind_weights(f.w, false);
  const auto y = feature_cell_forward(f.net, ad::constant(image({16, 16}, 2)), wv, CellKind::FeatureSource, 0,
                                      FamilyArch::relaxed(ArchParams::zeros(8).alpha_f, false));
  for (int c = 0; c < 4; ++c)
    for (int i = 1; i < 64; ++i) CHECK(y.value()[c * 64 + i] == y.value()[c * 64]);
}

TEST_CASE("deformation cell examples") {
  Fixture f(2, 4);
  const auto A = ArchParams::zeros(8);
  const auto fs = ad::constant(testutil::random_tensor({4, 4, 4}, 1));
  const auto ft = ad::constant(testutil::random_tensor({4, 4, 4}, 2));
  {
    const auto wv = bind_weights(f.w, false);
    const auto v = deformation_cell_forward(f.net, fs, ft, wv, 0, FamilyArch::relaxed(A.alpha_d, false));
    CHECK(v.value().shape() == std::vector<int>{2, 8, 8});
    CHECK(max_abs(v.value()) == 0.0);
  }
  f.randomize_heads(0.5, 4);
  const auto wv = bind_weights(f.w, false);
  Tensor L({6, 8}, 0.0);
  const std::array<int, 6> pick{0, 4, 6, 3, 1, 7};
  for (int r = 0; r < 6; ++r) L[r * 8 + pick[r]] = 40.0;
  const auto fine = deformation_cell_forward(f.net, fs, ft, wv, 1, FamilyArch::relaxed(L, false));
  CHECK(fine.value().shape() == std::vector<int>{2, 4, 4});
  Tensor h({8, 4, 4}, 0.0);
  std::copy(fs.value().storage().begin(), fs.value().storage().end(), h.storage().begin());
  std::copy(ft.value().storage().begin(), ft.value().storage().end(), h.storage().begin() + 64);
  for (int e = 0; e < 3; ++e) {
    const int o = pick[arch_row(1, e)];
    const auto v = op_vars(f.net, wv, CellKind::Deform, 1, e, o);
    const OpSpec spec = op_spec(f.net.op(o));
    h = leaky_all(spec.separable ? conv2d_oracle(depthwise2d_oracle(h, v.depthwise.value(), spec.dilation),
                                                 v.weight.value(), v.bias.value(), 1)
                                 : conv2d_oracle(h, v.weight.value(), v.bias.value(), spec.dilation));
  }
  const auto want = conv2d_oracle(h, f.w[f.net.head_weight(1)], f.w[f.net.head_bias(1)], 1);
  CHECK(max_abs_diff(fine.value(), want) < 1e-5);
  CHECK_THROWS_AS(deformation_cell_forward(f.net, fs, ad::constant(Tensor({4, 4, 2})), wv, 1,
                                           FamilyArch::relaxed(L, false)),
                  ContractError);
}

TEST_CASE("backbone with a zero velocity head is the identity") {
  for (int nd : {2, 3}) {
    Fixture f(nd, 4);
    const std::vector<int> dims(nd, nd == 2 ? 16 : 8);
    const auto wv = bind_weights(f.w, false);
    const auto A = ArchParams::zeros(8);
    const auto out = backbone_forward(f.net, ad::constant(image(dims, 1)), ad::constant(image(dims, 2)), wv,
                                      FamilyArch::relaxed(A.alpha_f, false), FamilyArch::relaxed(A.alpha_d, false));
    CHECK(max_abs(out.phi_full.value()) == 0.0);
    CHECK(max_abs(out.phi_half.value()) == 0.0);
    CHECK(max_abs(out.phi_quarter.value()) == 0.0);
    for (int s = 0; s < 3; ++s) CHECK(out.warped[s].value() == out.source[s].value());
    CHECK(out.phi_full.value().shape() == make_grid(nd, dims).shape());
    CHECK(grid_dims(out.v_coarse.value())[0] == dims[0] / 2);
    CHECK(grid_dims(out.v_fine.value())[0] == dims[0] / 2);
    CHECK(grid_dims(out.phi_quarter.value())[0] == dims[0] / 4);
  }
}

TEST_CASE("self-registration at initialisation reaches the similarity floor") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Fixture f(2, 4, seed);
    // the 1e-5 guard is absolute, so give the quarter-scale windows some contrast
    const auto s = ad::constant(testutil::random_image({16, 16}, 10 + seed, 0.0, 10.0).tensor());
    const auto A = ArchParams::zeros(8);
    const auto out = backbone_forward(f.net, s, s, bind_weights(f.w, false), FamilyArch::relaxed(A.alpha_f, false),
                                      FamilyArch::relaxed(A.alpha_d, false));
    const auto loss = registration_loss(out, ad::constant(LossHyper{1.0, 1.0, 1.0, 1.0}.to_tensor()), LossConstants{});
    CHECK(loss.breakdown.sim_full == doctest::Approx(-1.0).epsilon(1e-3));
    CHECK(loss.breakdown.sim_half == doctest::Approx(-1.0).epsilon(1e-3));
    CHECK(loss.breakdown.sim_quarter == doctest::Approx(-1.0).epsilon(1e-3));
  }
}

TEST_CASE("backbone is deterministic and checks its shape contract") {
  Fixture f(2, 4);
  f.randomize_heads(0.3, 8);
  const auto A = ArchParams{testutil::random_tensor({6, 8}, 1), testutil::random_tensor({6, 8}, 2)};
  auto run = [&] {
    return backbone_forward(f.net, ad::constant(image({16, 16}, 1)), ad::constant(image({16, 16}, 2)),
                            bind_weights(f.w, false), FamilyArch::relaxed(A.alpha_f, false),
                            FamilyArch::relaxed(A.alpha_d, false));
  };
  const auto a = run(), b = run();
  CHECK(max_abs(a.phi_full.value()) > 0.0);
  CHECK(a.phi_full.value() == b.phi_full.value());
  CHECK(a.warped[0].value() == b.warped[0].value());
  CHECK_THROWS_AS(backbone_forward(f.net, ad::constant(image({18, 16}, 1)), ad::constant(image({18, 16}, 2)),
                                   bind_weights(f.w, false), FamilyArch::relaxed(A.alpha_f, false),
                                   FamilyArch::relaxed(A.alpha_d, false)),
                  ContractError);
}

TEST_CASE("relaxed backbone with saturated logits matches the discrete network") {
  Fixture f(2, 4);
  f.randomize_heads(0.3, 5);
  ArchParams A{testutil::random_tensor({6, 8}, 3), testutil::random_tensor({6, 8}, 4)};
  for (Tensor* L : {&A.alpha_f, &A.alpha_d}) {
    const auto best = argmax_rows(*L);
    for (int r = 0; r < 6; ++r) (*L)[r * 8 + best[r]] += 20.0;
  }
  const auto wv = bind_weights(f.w, false);
  const auto s = ad::constant(image({16, 16}, 1)), t = ad::constant(image({16, 16}, 2));
  const auto relaxed = backbone_forward(f.net, s, t, wv, FamilyArch::relaxed(A.alpha_f, false),
                                        FamilyArch::relaxed(A.alpha_d, false));
  const auto arch = derive_architecture(A, f.cfg.catalog);
  const auto discrete = backbone_forward(f.net, s, t, wv, FamilyArch::fixed(arch.feature), FamilyArch::fixed(arch.deform));
  CHECK(rel_diff(relaxed.phi_full.value(), discrete.phi_full.value()) < 1e-3);
  CHECK(rel_diff(relaxed.warped[0].value(), discrete.warped[0].value()) < 1e-3);
}

TEST_CASE("derive_architecture") {
  ArchParams A = ArchParams::zeros(8);
  A.alpha_f[0 * 8 + 3] = 5.0;
  const auto d = derive_architecture(A, full_catalog());
  CHECK(d.feature_op(0) == OpKind::SEP3);
  CHECK(d.feature_op(1) == OpKind::CONV1);
  CHECK(d.deform_op(5) == OpKind::CONV1);

  ArchParams R{testutil::random_tensor({6, 8}, 1), testutil::random_tensor({6, 8}, 2)};
  ArchParams S = R;
  for (int r = 0; r < 6; ++r)
    for (int o = 0; o < 8; ++o) {
      S.alpha_f[r * 8 + o] += 3.7 * (r + 1);
      S.alpha_d[r * 8 + o] -= 3.7;
    }
  CHECK(derive_architecture(R, full_catalog()) == derive_architecture(S, full_catalog()));
  Tensor bad({6, 8}, 0.0);
  bad[3] = std::nan("");
  CHECK_THROWS_AS(argmax_rows(bad), ContractError);
}

TEST_CASE("heatmap export lists every weight") {
  ArchParams A = ArchParams::zeros(8);
  A.alpha_d[5 * 8 + 7] = 1.0;
  const auto csv = arch_heatmap_csv(A, full_catalog());
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 6 * 8);
  CHECK(csv.find("D,1,2,DIL7,") != std::string::npos);
  CHECK(csv.starts_with("family,scale,edge,op,weight,argmax\n"));
}

TEST_CASE("parameter layout") {
  NetworkConfig cfg{2, 4};
  cfg.catalog = {OpKind::CONV1, OpKind::CONV3};
  cfg.frozen = {true, false};
  Network net(cfg);
  const auto w = net.init_weights(1);
  const auto& s = net.slots(CellKind::FeatureSource, 0, 0, 0);
  CHECK_FALSE(w.trainable(s.weight));
  CHECK(max_abs(w[s.weight]) == 0.0);
  const auto& live = net.slots(CellKind::FeatureSource, 0, 0, 1);
  CHECK(w.trainable(live.weight));
  CHECK(max_abs(w[live.weight]) > 0.0);
  CHECK(w[live.weight].shape() == std::vector<int>{4, 1, 3, 3});
  CHECK(net.init_weights(1) == w);
  CHECK_FALSE(net.init_weights(2) == w);
  CHECK(w.same_layout(net.empty_weights()));
}

TEST_CASE("backbone gradients match central differences") {
  for (int nd : {2, 3}) {
    Fixture f(nd, 3, 21);
    f.randomize_heads(0.3, 22);
    const std::vector<int> dims(nd, nd == 2 ? 16 : 8);
    const Tensor s = image(dims, 31), t = image(dims, 32);
    const ArchParams A{testutil::random_tensor({6, 8}, 5), testutil::random_tensor({6, 8}, 6)};
    const LossHyper lam{0.6, 1.0, 0.3, 0.2};

    auto value = [&](const ParamSet& w, const ArchParams& a) {
      const auto out = backbone_forward(f.net, ad::constant(s), ad::constant(t), bind_weights(w, false),
                                        FamilyArch::relaxed(a.alpha_f, false), FamilyArch::relaxed(a.alpha_d, false));
      return registration_loss(out, ad::constant(lam.to_tensor()), LossConstants{}).total.item();
    };
    const auto wv = bind_weights(f.w, true);
    const auto af = ad::parameter(A.alpha_f), adl = ad::parameter(A.alpha_d);
    const auto out = backbone_forward(f.net, ad::constant(s), ad::constant(t), wv, FamilyArch::relaxed(af),
                                      FamilyArch::relaxed(adl));
    const auto loss = registration_loss(out, ad::constant(lam.to_tensor()), LossConstants{}).total;
    std::vector<ad::Var> wrt = wv;
    wrt.push_back(af);
    wrt.push_back(adl);
    const auto g = ad::gradients(loss, wrt);
    const std::size_t n = f.w.size();
    // entries are ~1e-7 against an O(1) loss, so a 1e-6 step drowns in roundoff
    const double h = 1e-4;

    CHECK(testutil::fd_relative_error([&](const Tensor& x) { return value(f.w, {x, A.alpha_d}); }, A.alpha_f, g[n], h, 12) < 1e-3);
    CHECK(testutil::fd_relative_error([&](const Tensor& x) { return value(f.w, {A.alpha_f, x}); }, A.alpha_d, g[n + 1], h, 12) < 1e-3);
    for (const long idx : {f.net.slots(CellKind::FeatureSource, 0, 0, 2).weight,
                           f.net.slots(CellKind::FeatureTarget, 1, 2, 3).depthwise,
                           f.net.slots(CellKind::Deform, 1, 1, 5).weight, f.net.head_weight(1)}) {
      auto objective = [&](const Tensor& x) {
        ParamSet w = f.w;
        w[idx] = x;
        return value(w, A);
      };
      CHECK(testutil::fd_relative_error(objective, f.w[idx], g[idx], h, 8) < 1e-3);
    }
  }
}
