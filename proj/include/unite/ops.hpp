#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "unite/random.hpp"
#include "unite/tensor.hpp"

// Differentiable operations on Tensor. Binary elementwise ops broadcast with
// NumPy rules. Every op rejects non-finite results with NumericError.
namespace unite::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

/// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Columns [begin, end) of a 2-D tensor.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
/// Joins 2-D tensors with equal row counts side by side.
Tensor concat_cols(std::span<const Tensor> parts);
/// Stacks equal-shape tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);
/// Sub-tensor at `index` of the leading axis.
Tensor select(const Tensor& a, std::size_t index);
/// out[i] = a[i, index[i]] for a 2-D tensor.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);

/// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gain + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& a);
/// max(x, 0); the subgradient at 0 is 0.
Tensor relu(const Tensor& a);

/// Euclidean norm of all elements, as a scalar. Gradient at the origin is 0.
Tensor l2_norm(const Tensor& a);
/// Euclidean norm along `axis` (the axis is removed).
Tensor l2_norm(const Tensor& a, std::size_t axis);

/// Inverted dropout. Identity when `training` is false or rate is 0.
Tensor dropout(const Tensor& a, double rate, bool training, std::mt19937_64& rng);

/// Average-pools each frame's square token grid.
/// [frames, side*side, dim] -> [frames * grid*grid, dim]; side must be a
/// multiple of grid.
Tensor pool_token_grid(const Tensor& x, std::size_t grid);

}  // namespace unite::ops
