// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <cstddef>
#include <optional>
#include <type_traits>
#include <vector>

#include "evkit/diff/tape.hpp"

namespace evkit::diff {

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

// Elementwise, same-shape operands.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
/// scale * a + shift
template <typename T> Var<T> affine(Var<T> a, T scale, T shift = T{0});
template <typename T> Var<T> scale(Var<T> a, T s) { return affine(a, s); }

template <typename T> Var<T> selu(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);
/// Square root with the gradient at 0 taken as 0. Input must be >= 0.
template <typename T> Var<T> sqrt(Var<T> a);

/// [m x k] @ [k x n]
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// [m x n] @ [n] -> [m]
template <typename T> Var<T> matvec(Var<T> a, Var<T> x);
template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> reshape(Var<T> a, Shape shape);
/// Sub-tensor at index i of axis 0.
template <typename T> Var<T> select(Var<T> a, std::size_t i);
/// Concatenation along axis 0; trailing dims must agree.
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts);

/// Sum of all elements -> scalar.
template <typename T> Var<T> sum(Var<T> a);
/// Mean over one axis; the axis is removed from the shape.
template <typename T> Var<T> mean(Var<T> a, std::size_t axis);

/// Stable softmax over the last axis.
template <typename T> Var<T> softmax(Var<T> a);
template <typename T> Var<T> log_softmax(Var<T> a);
/// x / max(||x||, 1e-12) over the last axis.
template <typename T> Var<T> l2_normalize(Var<T> a);

/// out[i] = a[i, index[i]] for a of shape [n x c].
template <typename T>
Var<T> pick(Var<T> a, const std::vector<std::size_t>& index);
/// mask[i] ? b[i] : a[i], same-shape operands.
template <typename T>
Var<T> blend(Var<T> a, Var<T> b, const std::vector<bool>& mask);

/// out[i, j] = ||x_i - y_j||^2 for x [n x d], y [m x d].
template <typename T> Var<T> pairwise_sq_dist(Var<T> x, Var<T> y);
/// out[i] = ||x_i - y_i||^2 for same-shape [n x d].
template <typename T> Var<T> rowwise_sq_dist(Var<T> x, Var<T> y);

enum class Reduce { kMin, kMax };
/// Per-row min or max over the columns where mask[i * m + j] holds. Every
/// row needs at least one selected entry. Ties resolve to the first index.
template <typename T>
Var<T> masked_row_reduce(Var<T> a, const std::vector<bool>& mask, Reduce op);

/// Dilated 1-D cross-correlation along the last axis.
/// input: [c_in x l] or [c_in x l x b] (b independent sequences sharing the
/// kernels, batch axis innermost); kernels: [c_out x c_in x k]; bias: [c_out]
/// or none.
/// l_out = l + 2 * padding - dilation * (k - 1).
template <typename T>
Var<T> conv1d_dilated(Var<T> input, Var<T> kernels, std::optional<std::type_identity_t<Var<T>>> bias,
                      std::size_t dilation, std::size_t padding);

/// 2-D cross-correlation. input [c_in x h x w]; kernels [c_out x c_in x k x k].
/// h_out = (h + 2 * padding - k) / stride + 1.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernels, std::optional<std::type_identity_t<Var<T>>> bias,
              std::size_t stride, std::size_t padding);

/// GRU parameters, gates stacked along axis 0 in (reset, update, candidate)
/// order: w_ih [3 x h x d], w_hh [3 x h x h], b_ih [3 x h], b_hh [3 x h].
template <typename T>
struct GruParams {
  Var<T> w_ih, w_hh, b_ih, b_hh;
};

/// Runs the recurrence over inputs [t x d] and returns the final state [h]:
///   r = sig(W_ir x + b_ir + W_hr h + b_hr)
///   z = sig(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
template <typename T>
Var<T> gru_forward(Var<T> inputs, const GruParams<T>& params, Var<T> h0);

}  // namespace evkit::diff
