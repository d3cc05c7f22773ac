#pragma once

// Raw grid kernels and their adjoints. Every function here works on
// [C, spatial...] tensors and is a pure function of its inputs; parallel loops
// assign each output element to exactly one thread so results do not depend
// on the thread count.

#include "autoreg/tensor.hpp"

namespace autoreg::kernels {

/// Multilinear interpolation of `src` at absolute positions `coords`
/// ([ndim, out_spatial...]), border-replicating outside the domain.
Tensor sample(const Tensor& src, const Tensor& coords);
void sample_backward(const Tensor& src, const Tensor& coords, const Tensor& grad_out,
                     Tensor* grad_src, Tensor* grad_coords);

/// out(x) = src(x + disp(x)); `disp` shares src's grid.
Tensor warp(const Tensor& src, const Tensor& disp);
void warp_backward(const Tensor& src, const Tensor& disp, const Tensor& grad_out,
                   Tensor* grad_src, Tensor* grad_disp);

/// Nearest-neighbour variant of warp for integer-valued data.
Tensor warp_nearest(const Tensor& src, const Tensor& disp);

/// Separable linear resampling by `factor` (0.5 or 2) with the half-voxel
/// centre convention: output index o reads input position (o + .5) / f - .5.
/// Values are not rescaled.
Tensor resize(const Tensor& src, double factor);
Tensor resize_backward(const Tensor& grad_out, const std::vector<int>& in_spatial,
                       double factor);

/// out(i) = in(2 i) on every axis.
Tensor subsample2(const Tensor& in);
Tensor subsample2_backward(const Tensor& grad_out, const std::vector<int>& in_spatial);

/// Dense convolution with zero ("same") padding, stride 1.
/// weight: [Co, Ci, k, k(, k)], bias: [Co] or empty.
Tensor conv(const Tensor& in, const Tensor& weight, const Tensor& bias, int dilation);
void conv_backward(const Tensor& in, const Tensor& weight, int dilation,
                   const Tensor& grad_out, Tensor* grad_in, Tensor* grad_weight,
                   Tensor* grad_bias);

/// Per-channel convolution, weight: [C, k, k(, k)], no bias.
Tensor depthwise_conv(const Tensor& in, const Tensor& weight, int dilation);
void depthwise_conv_backward(const Tensor& in, const Tensor& weight, int dilation,
                             const Tensor& grad_out, Tensor* grad_in,
                             Tensor* grad_weight);

}  // namespace autoreg::kernels
