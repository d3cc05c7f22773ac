#pragma once

// Scalar objectives over (weights, theta) and the registration instances used
// by the search and by training.

#include <functional>
#include <string>

#include "autoreg/params.hpp"
#include "autoreg/search_space.hpp"
#include "autoreg/synth.hpp"

namespace autoreg {

struct Evaluation {
  double value = 0.0;
  std::vector<Tensor> dw;  // per weight tensor; zeros for frozen entries
  Tensor dtheta;
};

/// Value of an objective and, on request, its gradients. Implementations throw
/// NumericalError naming the loss term when a value is not finite.
struct Objective {
  std::string name;
  std::function<Evaluation(const ParamSet& w, const Tensor& theta, bool want_w, bool want_theta)> fn;

  /// Also checks every requested gradient for NaN/Inf.
  Evaluation operator()(const ParamSet& w, const Tensor& theta, bool want_w, bool want_theta) const;
};

/// What theta stands for in a registration objective.
enum class ThetaRole { None, AlphaF, AlphaD, Lambda };

/// Fixed parts of the model around theta: the family that theta does not
/// describe is either relaxed over constant logits or discrete.
struct ModelSetup {
  const Network* net = nullptr;
  ThetaRole role = ThetaRole::None;
  ArchParams alpha;                     // used by relaxed families
  std::optional<DerivedArch> feature;   // discrete feature cells when set
  std::optional<DerivedArch> deform;    // discrete deformation cells when set
  Tensor lambda = LossHyper{}.to_tensor();
  LossConstants constants;
};

BackboneOutput run_backbone(const ModelSetup& m, const RegPair& pair, const std::vector<ad::Var>& w,
                            const ad::Var& theta);

/// Multi-scale registration loss on one pair. The pair is held by reference.
Objective registration_objective(const ModelSetup& m, const RegPair& pair);

/// Soft Dice between the source labels warped (linearly, as one-hot maps) by
/// the full-resolution field and the target labels, plus l2 * |lambda|^2 when
/// theta is lambda. DataError without labels.
Objective segmentation_objective(const ModelSetup& m, const RegPair& pair, double l2 = 1e-3);

/// Source/target images as graph constants.
ad::Var image_var(const ScalarField& f);

}  // namespace autoreg
