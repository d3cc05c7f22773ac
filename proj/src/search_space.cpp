#include "autoreg/search_space.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "autoreg/error.hpp"
#include "autoreg/field_core.hpp"

namespace autoreg {

namespace {

constexpr std::array<OpSpec, 8> kSpecs{{{1, 1, false},
                                        {3, 1, false},
                                        {5, 1, false},
                                        {3, 1, true},
                                        {5, 1, true},
                                        {3, 2, false},
                                        {5, 2, false},
                                        {7, 2, false}}};
constexpr std::array<const char*, 8> kNames{"CONV1", "CONV3", "CONV5", "SEP3",
                                            "SEP5",  "DIL3",  "DIL5",  "DIL7"};

const char* cell_prefix(CellKind c) {
  switch (c) {
    case CellKind::FeatureSource: return "feat.src";
    case CellKind::FeatureTarget: return "feat.tgt";
    case CellKind::Deform: return "deform";
  }
  return "";
}

std::vector<int> kernel_shape(int co, int ci, int k, int nd) {
  std::vector<int> s{co, ci};
  for (int a = 0; a < nd; ++a) s.push_back(k);
  return s;
}

int ipow(int b, int e) {
  int r = 1;
  while (e-- > 0) r *= b;
  return r;
}

}  // namespace

OpSpec op_spec(OpKind k) { return kSpecs.at(static_cast<int>(k)); }
const char* op_name(OpKind k) { return kNames.at(static_cast<int>(k)); }

OpKind op_from_name(const std::string& name) {
  for (int i = 0; i < 8; ++i)
    if (name == kNames[i]) return static_cast<OpKind>(i);
  throw ConfigError("unknown op kind '" + name + "'");
}

std::vector<OpKind> full_catalog() {
  std::vector<OpKind> c;
  for (int i = 0; i < 8; ++i) c.push_back(static_cast<OpKind>(i));
  return c;
}

Network::Network(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  require(cfg_.ndim == 2 || cfg_.ndim == 3, "Network: ndim must be 2 or 3");
  require(cfg_.channels >= 1, "Network: channels must be positive");
  require(!cfg_.catalog.empty(), "Network: empty op catalog");
  require(cfg_.frozen.empty() || cfg_.frozen.size() == cfg_.catalog.size(),
          "Network: frozen mask must match the catalog");
  const int nd = cfg_.ndim;
  const int n_ops = num_ops();
  slots_.assign(3 * kScales * kEdges * n_ops, OpSlots{});
  auto push = [&](std::string name, std::vector<int> shape, bool trainable, int fan_in) {
    layout_.push_back({std::move(name), std::move(shape), trainable, fan_in});
    return static_cast<long>(layout_.size() - 1);
  };
  for (CellKind cell : {CellKind::FeatureSource, CellKind::FeatureTarget, CellKind::Deform}) {
    for (int s = 0; s < kScales; ++s) {
      for (int e = 0; e < kEdges; ++e) {
        const auto [ci, co] = edge_channels(cell, s, e);
        for (int o = 0; o < n_ops; ++o) {
          const OpSpec spec = op_spec(cfg_.catalog[o]);
          const bool live = !op_frozen(o);
          std::ostringstream base;
          base << cell_prefix(cell) << ".s" << s << ".e" << e << "." << o << "_" << op_name(cfg_.catalog[o]);
          OpSlots& sl = slots_[slot_index(cell, s, e, o)];
          const int taps = ipow(spec.kernel, nd);
          if (spec.separable) {
            auto dw = kernel_shape(ci, 1, spec.kernel, nd);
            dw.erase(dw.begin() + 1);
            sl.depthwise = push(base.str() + ".dw", std::move(dw), live, live ? taps : 0);
            sl.weight = push(base.str() + ".pw", kernel_shape(co, ci, 1, nd), live, live ? ci : 0);
          } else {
            sl.weight = push(base.str() + ".w", kernel_shape(co, ci, spec.kernel, nd), live, live ? ci * taps : 0);
          }
          sl.bias = push(base.str() + ".b", {co}, live, 0);
        }
      }
    }
  }
  for (int s = 0; s < kScales; ++s) {
    head_w_[s] = push("deform.s" + std::to_string(s) + ".head.w", kernel_shape(nd, cfg_.channels, 1, nd), true, 0);
    head_b_[s] = push("deform.s" + std::to_string(s) + ".head.b", {nd}, true, 0);
  }
}

std::size_t Network::slot_index(CellKind cell, int scale, int edge, int op) const {
  return ((static_cast<std::size_t>(cell) * kScales + scale) * kEdges + edge) * num_ops() + op;
}

const OpSlots& Network::slots(CellKind cell, int scale, int edge, int op) const {
  return slots_.at(slot_index(cell, scale, edge, op));
}

std::pair<int, int> Network::edge_channels(CellKind cell, int scale, int edge) const {
  const int c = cfg_.channels;
  if (edge > 0) return {c, c};
  if (cell == CellKind::Deform) return {2 * c, c};
  return {scale == 0 ? 1 : c, c};
}

ParamSet Network::empty_weights() const {
  ParamSet p;
  for (const auto& e : layout_) p.add(e.name, Tensor(e.shape, 0.0), e.trainable);
  return p;
}

ParamSet Network::init_weights(std::uint64_t seed) const {
  ParamSet p;
  std::mt19937_64 rng(seed);
  const double gain = 1.0 + cfg_.leaky_slope * cfg_.leaky_slope;
  for (const auto& e : layout_) {
    Tensor t(e.shape, 0.0);
    if (e.fan_in > 0) {
      const double bound = std::sqrt(6.0 / (gain * e.fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : t.values()) v = u(rng);
    }
    p.add(e.name, std::move(t), e.trainable);
  }
  return p;
}

std::vector<bool> Network::trainable_mask() const {
  std::vector<bool> m;
  for (const auto& e : layout_) m.push_back(e.trainable);
  return m;
}

ArchParams ArchParams::zeros(int num_ops) {
  return {Tensor({kRows, num_ops}, 0.0), Tensor({kRows, num_ops}, 0.0)};
}

std::array<int, kRows> argmax_rows(const Tensor& logits) {
  require(logits.rank() == 2 && logits.dim(0) == kRows, "argmax_rows: expected [6, ops] logits");
  require(all_finite(logits), "argmax_rows: non-finite logits");
  const int n = logits.dim(1);
  std::array<int, kRows> out{};
  for (int r = 0; r < kRows; ++r) {
    int best = 0;
    for (int o = 1; o < n; ++o)
      if (logits[r * n + o] > logits[r * n + best]) best = o;
    out[r] = best;
  }
  return out;
}

DerivedArch derive_architecture(const ArchParams& alpha, const std::vector<OpKind>& catalog) {
  require(alpha.alpha_f.dim(1) == static_cast<int>(catalog.size()) &&
              alpha.alpha_d.dim(1) == static_cast<int>(catalog.size()),
          "derive_architecture: logits do not match the catalog");
  return {catalog, argmax_rows(alpha.alpha_f), argmax_rows(alpha.alpha_d)};
}

FamilyArch FamilyArch::relaxed(const Tensor& logits, bool requires_grad) {
  return {requires_grad ? ad::parameter(logits) : ad::constant(logits), {}};
}

FamilyArch FamilyArch::relaxed(ad::Var logits) { return {std::move(logits), {}}; }

FamilyArch FamilyArch::fixed(const std::array<int, kRows>& rows) {
  return {{}, std::vector<int>(rows.begin(), rows.end())};
}

std::vector<ad::Var> bind_weights(const ParamSet& w, bool requires_grad) {
  std::vector<ad::Var> out;
  out.reserve(w.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    out.push_back(requires_grad && w.trainable(i) ? ad::parameter(w[i]) : ad::constant(w[i]));
  return out;
}

OpVars op_vars(const Network& net, const std::vector<ad::Var>& w, CellKind cell, int scale, int edge,
               int op) {
  const OpSlots& s = net.slots(cell, scale, edge, op);
  OpVars v;
  if (s.weight >= 0) v.weight = w.at(s.weight);
  if (s.depthwise >= 0) v.depthwise = w.at(s.depthwise);
  if (s.bias >= 0) v.bias = w.at(s.bias);
  return v;
}

ad::Var apply_op(OpKind kind, const ad::Var& input, const OpVars& weights, double slope) {
  const OpSpec spec = op_spec(kind);
  const int ci = input.value().dim(0);
  if (spec.separable) {
    require(weights.depthwise.valid() && weights.depthwise.value().dim(0) == ci,
            std::string("apply_op: channel mismatch for ") + op_name(kind));
    const auto d = ad::depthwise_conv(input, weights.depthwise, spec.dilation);
    return ad::leaky_relu(ad::conv(d, weights.weight, weights.bias, 1), slope);
  }
  require(weights.weight.valid() && weights.weight.value().dim(1) == ci,
          std::string("apply_op: channel mismatch for ") + op_name(kind));
  require(weights.weight.value().dim(2) == spec.kernel, "apply_op: kernel size does not match op kind");
  return ad::leaky_relu(ad::conv(input, weights.weight, weights.bias, spec.dilation), slope);
}

ad::Var mixed_op(const Network& net, const ad::Var& input, const ad::Var& logits, int row,
                 const std::vector<OpVars>& ops) {
  require(static_cast<int>(ops.size()) == net.num_ops(), "mixed_op: one weight set per op expected");
  std::vector<ad::Var> ys;
  ys.reserve(ops.size());
  for (int o = 0; o < net.num_ops(); ++o) ys.push_back(apply_op(net.op(o), input, ops[o], net.config().leaky_slope));
  return ad::weighted_sum(ys, ad::softmax_row(logits, row));
}

namespace {

ad::Var run_edges(const Network& net, ad::Var x, const std::vector<ad::Var>& w, CellKind cell, int scale,
                  const FamilyArch& arch) {
  for (int e = 0; e < kEdges; ++e) {
    const int row = arch_row(scale, e);
    if (arch.discrete()) {
      const int o = arch.choice.at(row);
      x = apply_op(net.op(o), x, op_vars(net, w, cell, scale, e, o), net.config().leaky_slope);
    } else {
      std::vector<OpVars> ops;
      for (int o = 0; o < net.num_ops(); ++o) ops.push_back(op_vars(net, w, cell, scale, e, o));
      x = mixed_op(net, x, arch.logits, row, ops);
    }
  }
  return x;
}

}  // namespace

ad::Var feature_cell_forward(const Network& net, const ad::Var& input, const std::vector<ad::Var>& w,
                             CellKind stream, int scale, const FamilyArch& arch) {
  require(stream != CellKind::Deform, "feature_cell_forward: not a feature stream");
  for (int d : grid_dims(input.value()))
    require(d % 2 == 0, "feature_cell_forward: spatial extents must be even, got " +
                            shape_string(input.value().shape()));
  return ad::subsample2(run_edges(net, input, w, stream, scale, arch));
}

ad::Var deformation_cell_forward(const Network& net, const ad::Var& source_features,
                                 const ad::Var& target_features, const std::vector<ad::Var>& w,
                                 int scale, const FamilyArch& arch) {
  require(source_features.value().shape() == target_features.value().shape(),
          "deformation_cell_forward: feature shapes differ");
  auto x = run_edges(net, ad::concat_channels(source_features, target_features), w, CellKind::Deform, scale, arch);
  auto v = ad::conv(x, w.at(net.head_weight(scale)), w.at(net.head_bias(scale)), 1);
  if (scale == 0) v = ad::resize_field(v, ResizeFactor::Double, true);
  return v;
}

BackboneOutput backbone_forward(const Network& net, const ad::Var& source, const ad::Var& target,
                                const std::vector<ad::Var>& w, const FamilyArch& feature,
                                const FamilyArch& deform) {
  require(source.value().shape() == target.value().shape(), "backbone_forward: source and target shapes differ");
  require(grid_channels(source.value()) == 1, "backbone_forward: single-channel images expected");
  require(grid_ndim(source.value()) == net.config().ndim, "backbone_forward: dimensionality differs from network");
  for (int d : grid_dims(source.value()))
    require(d % 4 == 0 && d >= 4, "backbone_forward: every extent must be divisible by 4, got " +
                                      shape_string(source.value().shape()));
  BackboneOutput out;
  out.source[0] = source;
  out.target[0] = target;
  for (int s = 1; s < 3; ++s) {
    out.source[s] = ad::resize_field(out.source[s - 1], ResizeFactor::Half, false);
    out.target[s] = ad::resize_field(out.target[s - 1], ResizeFactor::Half, false);
  }
  const auto fs1 = feature_cell_forward(net, source, w, CellKind::FeatureSource, 0, feature);
  const auto fs2 = feature_cell_forward(net, fs1, w, CellKind::FeatureSource, 1, feature);
  const auto ft1 = feature_cell_forward(net, target, w, CellKind::FeatureTarget, 0, feature);
  const auto ft2 = feature_cell_forward(net, ft1, w, CellKind::FeatureTarget, 1, feature);

  const int K = net.config().squaring_steps;
  out.v_coarse = deformation_cell_forward(net, fs2, ft2, w, 0, deform);
  const auto phi_c = ad::integrate_svf(out.v_coarse, K);
  const auto fs1_warped = ad::warp(fs1, phi_c);
  out.v_fine = deformation_cell_forward(net, fs1_warped, ft1, w, 1, deform);
  out.phi_half = ad::compose(phi_c, ad::integrate_svf(out.v_fine, K));
  out.phi_full = ad::resize_field(out.phi_half, ResizeFactor::Double, true);
  out.phi_quarter = ad::resize_field(phi_c, ResizeFactor::Half, true);
  out.warped[0] = ad::warp(out.source[0], out.phi_full);
  out.warped[1] = ad::warp(out.source[1], out.phi_half);
  out.warped[2] = ad::warp(out.source[2], out.phi_quarter);
  return out;
}

ad::RegLossGraph registration_loss(const BackboneOutput& out, const ad::Var& lambda, const LossConstants& k) {
  std::array<ad::ScaleVars, 3> scales;
  for (int s = 0; s < 3; ++s) scales[s] = {out.warped[s], out.target[s]};
  const std::array<ad::Var, 2> vel{out.v_coarse, out.v_fine};
  return ad::reg_loss(scales, vel, lambda, k);
}

std::string arch_heatmap_csv(const ArchParams& alpha, const std::vector<OpKind>& catalog) {
  std::ostringstream os;
  os.precision(17);
  os << "family,scale,edge,op,weight,argmax\n";
  const int n = static_cast<int>(catalog.size());
  for (int f = 0; f < 2; ++f) {
    const Tensor& L = f == 0 ? alpha.alpha_f : alpha.alpha_d;
    const auto best = argmax_rows(L);
    for (int r = 0; r < kRows; ++r) {
      const auto w = ad::softmax_row(ad::constant(L), r).value();
      for (int o = 0; o < n; ++o)
        os << (f == 0 ? "F" : "D") << ',' << r / kEdges << ',' << r % kEdges << ',' << op_name(catalog[o]) << ','
           << w[o] << ',' << (best[r] == o ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

}  // namespace autoreg
