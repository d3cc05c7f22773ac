#include "autoreg/objectives.hpp"

#include <cmath>

#include "autoreg/error.hpp"

namespace autoreg {

Evaluation Objective::operator()(const ParamSet& w, const Tensor& theta, bool want_w, bool want_theta) const {
  Evaluation e = fn(w, theta, want_w, want_theta);
  if (!std::isfinite(e.value)) throw NumericalError(name, name + ": loss is not finite");
  if (want_w)
    for (std::size_t i = 0; i < e.dw.size(); ++i)
      if (!all_finite(e.dw[i]))
        throw NumericalError(name, name + ": non-finite gradient for weight " + w.name(i));
  if (want_theta && !all_finite(e.dtheta))
    throw NumericalError(name, name + ": non-finite gradient for the hyper/architecture parameters");
  return e;
}

ad::Var image_var(const ScalarField& f) { return ad::constant(f.tensor()); }

namespace {

FamilyArch family(const ModelSetup& m, bool feature_family, const ad::Var& theta) {
  const ThetaRole mine = feature_family ? ThetaRole::AlphaF : ThetaRole::AlphaD;
  if (m.role == mine) return FamilyArch::relaxed(theta);
  const auto& fixed = feature_family ? m.feature : m.deform;
  if (fixed) return FamilyArch::fixed(feature_family ? fixed->feature : fixed->deform);
  const Tensor& logits = feature_family ? m.alpha.alpha_f : m.alpha.alpha_d;
  // no logits given: uniform mixture
  if (logits.empty()) return FamilyArch::relaxed(Tensor({kRows, m.net->num_ops()}, 0.0), false);
  return FamilyArch::relaxed(logits, false);
}

ad::Var theta_var(const ModelSetup& m, const Tensor& theta, bool want_theta) {
  if (m.role == ThetaRole::None) return {};
  return want_theta ? ad::parameter(theta) : ad::constant(theta);
}

void check_terms(const LossBreakdown& b, const std::string& where) {
  const std::pair<const char*, double> terms[] = {
      {"sim_full", b.sim_full}, {"sim_half", b.sim_half}, {"sim_quarter", b.sim_quarter}, {"smooth", b.smooth}};
  for (const auto& [n, v] : terms)
    if (!std::isfinite(v)) throw NumericalError(n, where + ": loss term " + n + " is not finite");
}

Evaluation collect(const ad::Var& total, const std::vector<ad::Var>& wv, const ad::Var& th, bool want_w,
                   bool want_theta) {
  Evaluation e;
  e.value = total.item();
  if (!want_w && !want_theta) return e;
  std::vector<ad::Var> wrt;
  if (want_w) wrt = wv;
  if (want_theta) wrt.push_back(th);
  auto g = ad::gradients(total, wrt);
  if (want_theta) {
    e.dtheta = std::move(g.back());
    g.pop_back();
  }
  if (want_w) e.dw = std::move(g);
  return e;
}

ad::Var squared_norm(const ad::Var& x) {
  return ad::make_node(Tensor::scalar(dot(x.value(), x.value())), {x}, [](ad::Node& n) {
    if (!n.input_needs_grad(0)) return;
    n.inputs[0]->accumulate(n.input(0) * (2.0 * n.grad[0]));
  });
}

}  // namespace

BackboneOutput run_backbone(const ModelSetup& m, const RegPair& pair, const std::vector<ad::Var>& w,
                            const ad::Var& theta) {
  require(m.net != nullptr, "objective: no network");
  return backbone_forward(*m.net, image_var(pair.source), image_var(pair.target), w, family(m, true, theta),
                          family(m, false, theta));
}

Objective registration_objective(const ModelSetup& m, const RegPair& pair) {
  Objective o;
  o.name = "L_reg(" + pair.id + ")";
  o.fn = [m, &pair, name = o.name](const ParamSet& w, const Tensor& theta, bool want_w, bool want_theta) {
    const auto wv = bind_weights(w, want_w);
    const ad::Var th = theta_var(m, theta, want_theta);
    const auto out = run_backbone(m, pair, wv, th);
    const ad::Var lam = m.role == ThetaRole::Lambda ? th : ad::constant(m.lambda);
    const auto loss = registration_loss(out, lam, m.constants);
    check_terms(loss.breakdown, name);
    return collect(loss.total, wv, th, want_w, want_theta && m.role != ThetaRole::None);
  };
  return o;
}

Objective segmentation_objective(const ModelSetup& m, const RegPair& pair, double l2) {
  if (!pair.has_labels()) throw DataError("pair " + pair.id + " has no labels; the segmentation objective needs them");
  Objective o;
  o.name = "L_seg(" + pair.id + ")";
  o.fn = [m, &pair, l2, name = o.name](const ParamSet& w, const Tensor& theta, bool want_w, bool want_theta) {
    const auto wv = bind_weights(w, want_w);
    const ad::Var th = theta_var(m, theta, want_theta);
    const auto out = run_backbone(m, pair, wv, th);
    const auto warped = ad::warp(ad::constant(pair.source_labels->one_hot()), out.phi_full);
    ad::Var total = ad::soft_dice_loss(warped, ad::constant(pair.target_labels->one_hot()), m.constants.delta);
    if (!std::isfinite(total.item())) throw NumericalError("soft_dice", name + ": soft Dice is not finite");
    if (m.role == ThetaRole::Lambda && l2 > 0) {
      total = ad::add(total, ad::scale(squared_norm(th), l2));
    }
    return collect(total, wv, th, want_w, want_theta && m.role != ThetaRole::None);
  };
  return o;
}

}  // namespace autoreg
