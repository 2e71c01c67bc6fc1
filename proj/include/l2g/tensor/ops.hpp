#pragma once

#include <optional>
#include <span>

#include "l2g/tensor/tape.hpp"

namespace l2g {

/// y = x W + b for x [B,I], W [I,O], b [O].
Var affine(Var x, Var weight, Var bias);
/// y = x W without bias.
Var matmul(Var x, Var weight);

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Output spatial extent of a convolution along one axis.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, Conv2dGeometry geometry);

/// Cross-correlation of x [B,C,H,W] with kernel [O,C,kh,kw] plus optional bias [O].
Var conv2d(Var x, Var kernel, std::optional<Var> bias, Conv2dGeometry geometry);

Var relu(Var x);
/// Non-overlapping window max over x [B,C,H,W]; window must divide H and W.
/// Ties route gradient to the lowest linear index in the window.
Var max_pool2d(Var x, std::size_t window);
/// [B, ...] -> [B, prod(...)].
Var flatten(Var x);

Var add(Var a, Var b);
Var scale(Var a, double factor);
/// Scalar sum of all elements.
Var sum(Var a);

/// Softmax of a 1-D vector.
Var softmax(Var logits);
/// Scalar <v, weights> with constant weights.
Var dot(Var v, std::span<const double> weights);
/// sum_c weights[c] * branches[c]; weights is 1-D with one entry per branch.
Var mix(Var weights, std::span<const Var> branches);

/// sum_i w_i (theta_i - anchor_i)^2, with w = 1 when `weights` is null.
Var weighted_sq_distance(Var theta, const Tensor& anchor, const Tensor* weights);

/// Mean over the batch of -log softmax(logits)[label], stabilized by max-subtraction.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

/// Argmax per row of a [B,C] tensor, ties to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace l2g
