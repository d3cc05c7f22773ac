#pragma once

// Geometric substrate: interpolation, warping, composition, stationary
// velocity field exponentiation, resampling and Jacobian analysis.
//
// Conventions: multilinear interpolation with border replication; displacements
// are in voxels of the grid they live on; phi(x) = x + u(x).

#include <cstddef>

#include "autoreg/autodiff.hpp"
#include "autoreg/field.hpp"

namespace autoreg {

enum class ResizeFactor { Half, Double };

inline double factor_value(ResizeFactor f) { return f == ResizeFactor::Half ? 0.5 : 2.0; }

/// Default number of squaring steps for integrate_svf.
inline constexpr int kDefaultSquaringSteps = 7;

ScalarField sample_linear(const ScalarField& field, const VectorField& coords);
VectorField sample_linear(const VectorField& field, const VectorField& coords);

/// out(x) = image(x + u(x)).
ScalarField warp(const ScalarField& image, const VectorField& disp);
VectorField warp(const VectorField& field, const VectorField& disp);

/// Nearest-neighbour label warp (hard labels for scoring).
LabelField warp_labels(const LabelField& labels, const VectorField& disp);

/// Displacement of "apply outer, then inner" in the sense that
/// warp(I, compose(outer, inner)) == warp(warp(I, outer), inner):
/// u(x) = inner(x) + outer(x + inner(x)).
VectorField compose(const VectorField& outer, const VectorField& inner);

/// Scaling and squaring: u = v / 2^K, then u <- compose(u, u) K times.
VectorField integrate_svf(const VectorField& velocity, int squaring_steps = kDefaultSquaringSteps);

ScalarField resize_field(const ScalarField& field, ResizeFactor factor);
/// Also multiplies vector components by the factor.
VectorField resize_field(const VectorField& field, ResizeFactor factor);

/// det(I + du/dx) per voxel; central differences inside, one-sided at borders.
ScalarField jacobian_determinant(const VectorField& disp);

/// Voxels with a non-positive Jacobian determinant.
std::size_t count_folds(const VectorField& disp);

namespace ad {

Var compose(const Var& outer, const Var& inner);
Var integrate_svf(const Var& velocity, int squaring_steps);
Var resize_field(const Var& field, ResizeFactor factor, bool is_vector);

}  // namespace ad

}  // namespace autoreg
