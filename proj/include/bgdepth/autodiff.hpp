#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "bgdepth/tensor.hpp"

namespace bgdepth {

// Differentiable ops over Tensor. All ops are pure value functions; when a
// Tape is active and an input requires gradients, the op records its adjoint.
// Convolution shapes follow the (batch, channels, spatial...) convention:
// rank 5 = (N,C,D,H,W), rank 4 = (N,C,H,W).
//
// Output extents must come out as exact positive integers: (E + 2p - k)/s + 1
// for convolution, (E - 1)s - 2p + k for the transpose. Anything else is a
// shape error, not an implicit floor.

// w: (F, C, k, k, k), b: (F)
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int pad = 0);
// w: (F, C, k, k)
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int pad = 0);

// Adjoint of the corresponding convolution. Weight layout (C_in, C_out,
// k, ...): conv3d with weight w maps C->F, conv_transpose3d with the same
// w maps F->C, and <conv3d(x;w), y> == <x, conv_transpose3d(y;w)>.
Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 2, int pad = 1);
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 2, int pad = 1);

// Non-overlapping max pooling, window = stride = kernel. Spatial extents
// must be divisible by kernel. Gradient goes to the first-in-scan-order
// maximum of each window.
Tensor maxpool3d(const Tensor& x, int kernel = 2);
Tensor maxpool2d(const Tensor& x, int kernel = 2);

// Per-channel batch normalization over all non-channel axes (channel axis 1).
// Training mode normalizes with biased batch statistics and, when
// update_running is set, folds them into running_mean/var with the given
// momentum (unbiased variance, matching the usual convention). Eval mode
// normalizes with the running statistics.
struct BatchNormOpts {
    bool training = true;
    bool update_running = true;
    double eps = 1e-5;
    double momentum = 0.1;
};
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 Tensor running_mean, Tensor running_var, const BatchNormOpts& opts);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor sum(const Tensor& x);  // scalar, shape {1}

Tensor concat(std::span<const Tensor> xs, int axis);
Tensor concat(std::initializer_list<Tensor> xs, int axis);
// Contiguous slab [start, start+length) along axis.
Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t length);

// Mean squared error 1/n * sum((pred - target)^2). With a mask, the sum and
// n run over mask != 0 only (n must be positive). Gradients flow to pred;
// target and mask are treated as constants.
Tensor mse(const Tensor& pred, const Tensor& target, const Tensor* mask = nullptr);

// Fixed trilinear read of a (1, C, nb, ny, nx) grid tensor at precomputed
// pixel coordinates; the plan fixes the interpolation weights, so gradients
// flow to the grid values only. Produces (1, C, height, width).
struct SlicePlan {
    int channels = 0;
    int width = 0;
    int height = 0;
    int nx = 0, ny = 0, nb = 0;
    // 8 corner (flat grid offset within one channel, weight) pairs per
    // (channel, pixel), pixel-major within channel.
    std::vector<std::int64_t> corner_index;
    std::vector<double> corner_weight;
};
Tensor slice_grid(const Tensor& grid, const SlicePlan& plan);

// Per-pixel weighted sum over the channel axis of a (1, C, H, W) tensor;
// weights.size() must equal C. Produces (1, 1, H, W).
Tensor channel_weighted_sum(const Tensor& x, std::span<const double> weights);

// Central-difference gradient verification at step eps. Runs f once under a
// tape for analytic gradients, then perturbs every element of every input.
// Returns the maximum relative error, with the relative scale floored at
// 1e-3 so near-zero gradients are compared absolutely.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double eps = 1e-5);

double relative_error(double a, double b);

}  // namespace bgdepth
