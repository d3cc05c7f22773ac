#pragma once

// Similarity, regularity and overlap objectives. Each differentiable loss has a
// plain value form and a graph form in autoreg::ad.

#include <array>
#include <optional>
#include <vector>

#include "autoreg/autodiff.hpp"
#include "autoreg/field.hpp"

namespace autoreg {

/// Numerical constants shared by the losses.
struct LossConstants {
  std::array<int, 3> ncc_window{9, 5, 3};  // full, half, quarter resolution
  double delta = 1e-5;
  double mind_sigma = 0.5;
  bool operator==(const LossConstants&) const = default;
};

/// Loss trade-off weights. lambda1 mixes NCC against MIND; lambda2..4 weight
/// smoothness and the half/quarter resolution similarities.
struct LossHyper {
  double lambda1 = 0.5;
  double lambda2 = 1.0;
  double lambda3 = 0.1;
  double lambda4 = 0.1;

  /// Clamp lambda1 to [0,1] and the rest to >= 0.
  void project();
  bool feasible() const;
  Tensor to_tensor() const;
  static LossHyper from_tensor(const Tensor& t);
  bool operator==(const LossHyper&) const = default;
};

struct LossBreakdown {
  double sim_full = 0, sim_half = 0, sim_quarter = 0, smooth = 0, total = 0;
};

/// Squared local correlation loss, -mean CC^2 over window^d cubes cropped at
/// the border. In [-1, 0].
double lncc_loss(const ScalarField& a, const ScalarField& b, int window, double delta = 1e-5);

/// Per-voxel MIND descriptor over the 2*ndim axis neighbours, max-normalised.
/// Returns a [2*ndim, spatial...] tensor; component 2a is the -1 offset
/// along axis a, 2a+1 the +1 offset.
Tensor mind_descriptor(const ScalarField& image, double sigma = 0.5, double delta = 1e-5);

/// Mean absolute difference of MIND descriptors.
double mind_loss(const ScalarField& a, const ScalarField& b, double sigma = 0.5,
                 double delta = 1e-5);

/// Sum over axes and components of the mean squared forward difference.
double diffusion_loss(const VectorField& field);

/// lambda1 * lncc + (1 - lambda1) * mind.
double sim_loss(const ScalarField& warped, const ScalarField& target, double lambda1, int window,
                const LossConstants& k = {});

struct ScalePair {
  ScalarField warped;
  ScalarField target;
};

/// Multi-scale registration loss; `scales` holds full, half and quarter pairs.
LossBreakdown reg_loss(std::span<const ScalePair> scales, std::span<const VectorField> velocities,
                       const LossHyper& lam, const LossConstants& k = {});

/// Combines component values into the total.
LossBreakdown combine_reg_terms(double sim_full, double sim_half, double sim_quarter,
                                double smooth, const LossHyper& lam);

/// 1 - mean over channels of 2 sum(pq) / (sum p + sum q + delta).
double soft_dice_loss(const Tensor& warped_onehot, const Tensor& target_onehot,
                      double delta = 1e-5);

struct DiceScores {
  /// Index l - 1 holds label l; nullopt when the label is absent from both.
  std::vector<std::optional<double>> per_label;
  double mean = 0.0;
};

/// Hard Dice over foreground labels (label 0 excluded).
DiceScores dice_score(const LabelField& pred, const LabelField& truth);

/// Global (whole-image) signed normalized cross-correlation.
double global_ncc(const ScalarField& a, const ScalarField& b);

namespace ad {

Var lncc_loss(const Var& a, const Var& b, int window, double delta);
Var mind_loss(const Var& a, const Var& b, double sigma, double delta);
Var diffusion_loss(const Var& field);
/// `lambda1` is a scalar Var.
Var sim_loss(const Var& warped, const Var& target, const Var& lambda1, int window,
             const LossConstants& k);
Var soft_dice_loss(const Var& warped_onehot, const Var& target_onehot, double delta);

struct RegLossGraph {
  Var total;
  LossBreakdown breakdown;
};

struct ScaleVars {
  Var warped;
  Var target;
};

/// `lambda` is the 4-vector Var (lambda1..lambda4).
RegLossGraph reg_loss(std::span<const ScaleVars> scales, std::span<const Var> velocities,
                      const Var& lambda, const LossConstants& k);

}  // namespace ad

}  // namespace autoreg
