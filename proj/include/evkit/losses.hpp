// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "evkit/diff/ops.hpp"

namespace evkit {

enum class LossKind { kContrastive, kLiteral, kAam };

/// "ge2e-contrastive", "ge2e-literal" or "aam".
LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);

struct AamConfig {
  double s = 30.0;  // hypersphere radius
  double m = 0.2;   // angular margin, radians
};

/// Additive angular margin softmax. embeddings [N x D], class_weights
/// [n x D]; both are L2-normalized along rows before the cosines are taken.
/// Returns the mean over the N rows of
///   -log(e^{s cos(t_y + m)} / (e^{s cos(t_y + m)} + sum_{j != y} e^{s cos t_j})).
template <typename T>
diff::Var<T> aam_loss(diff::Var<T> embeddings, const std::vector<std::size_t>& labels,
                      diff::Var<T> class_weights, const AamConfig& cfg);

/// Leave-one-out speaker centroids: row i is the mean of the other rows of
/// `x` that share label i. Every label needs at least two rows.
template <typename T>
diff::Var<T> loo_centroids(diff::Var<T> x, const std::vector<std::size_t>& labels);

/// Sum over i of alpha_i d(x_i, y_i)^2 + (1 - alpha_i) max_j d(x_i, y_j)^2 with
/// j ranging over rows whose label differs from label i, d Euclidean.
template <typename T>
diff::Var<T> ge2e_literal(diff::Var<T> x, diff::Var<T> y, const std::vector<std::size_t>& labels,
                          const std::vector<double>& alpha);

/// Sum over i of alpha_i d(x_i, y_i)^2 + (1 - alpha_i) max(0, margin - d_imp)^2
/// where d_imp is the distance from x_i to the nearest impostor reference.
template <typename T>
diff::Var<T> ge2e_contrastive(diff::Var<T> x, diff::Var<T> y, const std::vector<std::size_t>& labels,
                              const std::vector<double>& alpha, double margin = 1.0);

}  // namespace evkit
