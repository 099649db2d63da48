// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include "evkit/losses.hpp"

#include <cmath>
#include <numbers>

#include "evkit/error.hpp"

namespace evkit {

using diff::Shape;
using diff::Tensor;
using diff::Var;

LossKind parse_loss_kind(const std::string& name) {
  if (name == "ge2e-contrastive") return LossKind::kContrastive;
  if (name == "ge2e-literal") return LossKind::kLiteral;
  if (name == "aam") return LossKind::kAam;
  throw InvalidArgument("unknown loss '" + name +
                        "' (expected ge2e-contrastive, ge2e-literal or aam)");
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kContrastive: return "ge2e-contrastive";
    case LossKind::kLiteral: return "ge2e-literal";
    case LossKind::kAam: return "aam";
  }
  return "";
}

namespace {

template <typename T>
void require_matrix(Var<T> v, const char* what) {
  if (v.shape().size() != 2) {
    throw InvalidArgument(std::string(what) + " must be a matrix, got " + diff::shape_str(v.shape()));
  }
}

// mask[i * n + j]: label j differs from label i
std::vector<bool> impostor_mask(const std::vector<std::size_t>& labels) {
  const std::size_t n = labels.size();
  std::vector<bool> mask(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      mask[i * n + j] = labels[j] != labels[i];
      any = any || mask[i * n + j];
    }
    if (!any) throw InvalidArgument("GE2E batch has a single identity; no impostor for row " +
                                    std::to_string(i));
  }
  return mask;
}

template <typename T>
void check_ge2e_inputs(Var<T> x, Var<T> y, const std::vector<std::size_t>& labels,
                       const std::vector<double>& alpha) {
  require_matrix(x, "GE2E embeddings");
  if (x.shape() != y.shape()) {
    throw InvalidArgument("GE2E references " + diff::shape_str(y.shape()) + " vs embeddings " +
                          diff::shape_str(x.shape()));
  }
  const std::size_t n = x.shape()[0];
  if (n < 2) throw InvalidArgument("GE2E batch needs at least 2 rows");
  if (labels.size() != n || alpha.size() != n) {
    throw InvalidArgument("GE2E labels/alpha length must equal the batch size");
  }
  for (const double a : alpha)
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("GE2E alpha must lie in [0, 1]");
}

// Sum of alpha_i * genuine_i + (1 - alpha_i) * impostor_i.
template <typename T>
Var<T> weighted_sum(Var<T> genuine, Var<T> impostor, const std::vector<double>& alpha) {
  const std::size_t n = alpha.size();
  Tensor<T> a({n}), b({n});
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = static_cast<T>(alpha[i]);
    b[i] = static_cast<T>(1.0 - alpha[i]);
  }
  auto& tape = *genuine.tape;
  return diff::sum(diff::add(diff::mul(genuine, tape.constant(std::move(a))),
                             diff::mul(impostor, tape.constant(std::move(b)))));
}

}  // namespace

template <typename T>
Var<T> aam_loss(Var<T> embeddings, const std::vector<std::size_t>& labels, Var<T> class_weights,
                const AamConfig& cfg) {
  require_matrix(embeddings, "AAM embeddings");
  require_matrix(class_weights, "AAM class weights");
  if (!(cfg.s > 0.0)) throw InvalidArgument("AAM radius s must be positive");
  if (!(cfg.m >= 0.0 && cfg.m < std::numbers::pi / 2)) {
    throw InvalidArgument("AAM margin m must lie in [0, pi/2)");
  }
  const std::size_t n_rows = embeddings.shape()[0], n_cls = class_weights.shape()[0];
  if (labels.size() != n_rows) throw InvalidArgument("AAM labels length mismatch");
  for (const std::size_t l : labels) {
    if (l >= n_cls) {
      throw InvalidArgument("AAM label " + std::to_string(l) + " out of range [0, " +
                            std::to_string(n_cls) + ")");
    }
  }
  auto& tape = *embeddings.tape;
  const Var<T> cosine = diff::matmul(diff::l2_normalize(embeddings),
                                     diff::transpose(diff::l2_normalize(class_weights)));
  // cos(t + m) = cos t cos m - sin t sin m, sin t = sqrt(max(0, 1 - cos^2 t))
  const Var<T> ones = tape.constant(Tensor<T>(cosine.shape(), std::vector<T>(cosine.size(), T{1})));
  const Var<T> sine = diff::sqrt(diff::relu(diff::sub(ones, diff::mul(cosine, cosine))));
  const Var<T> shifted = diff::sub(diff::scale(cosine, static_cast<T>(std::cos(cfg.m))),
                                   diff::scale(sine, static_cast<T>(std::sin(cfg.m))));
  std::vector<bool> target(cosine.size(), false);
  for (std::size_t i = 0; i < n_rows; ++i) target[i * n_cls + labels[i]] = true;
  const Var<T> logits = diff::scale(diff::blend(cosine, shifted, target), static_cast<T>(cfg.s));
  const Var<T> picked = diff::pick(diff::log_softmax(logits), labels);
  return diff::scale(diff::sum(picked), static_cast<T>(-1.0 / static_cast<double>(n_rows)));
}

template <typename T>
Var<T> loo_centroids(Var<T> x, const std::vector<std::size_t>& labels) {
  require_matrix(x, "embeddings");
  const std::size_t n = x.shape()[0];
  if (labels.size() != n) throw InvalidArgument("labels length mismatch");
  Tensor<T> avg({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t others = 0;
    for (std::size_t j = 0; j < n; ++j) others += (j != i && labels[j] == labels[i]);
    if (others == 0) {
      throw InvalidArgument("leave-one-out centroid needs at least 2 rows per label (row " +
                            std::to_string(i) + ")");
    }
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && labels[j] == labels[i]) avg[i * n + j] = T{1} / static_cast<T>(others);
  }
  return diff::matmul(x.tape->constant(std::move(avg)), x);
}

template <typename T>
Var<T> ge2e_literal(Var<T> x, Var<T> y, const std::vector<std::size_t>& labels,
                    const std::vector<double>& alpha) {
  check_ge2e_inputs(x, y, labels, alpha);
  const auto mask = impostor_mask(labels);
  const Var<T> genuine = diff::rowwise_sq_dist(x, y);
  const Var<T> impostor =
      diff::masked_row_reduce(diff::pairwise_sq_dist(x, y), mask, diff::Reduce::kMax);
  return weighted_sum(genuine, impostor, alpha);
}

template <typename T>
Var<T> ge2e_contrastive(Var<T> x, Var<T> y, const std::vector<std::size_t>& labels,
                        const std::vector<double>& alpha, double margin) {
  check_ge2e_inputs(x, y, labels, alpha);
  if (!(margin > 0.0)) throw InvalidArgument("GE2E margin must be positive");
  const auto mask = impostor_mask(labels);
  const Var<T> genuine = diff::rowwise_sq_dist(x, y);
  const Var<T> nearest = diff::sqrt(
      diff::masked_row_reduce(diff::pairwise_sq_dist(x, y), mask, diff::Reduce::kMin));
  const Var<T> hinge = diff::relu(diff::affine(nearest, T{-1}, static_cast<T>(margin)));
  return weighted_sum(genuine, diff::mul(hinge, hinge), alpha);
}

#define EVKIT_INSTANTIATE_LOSSES(T)                                                        \
  template Var<T> aam_loss(Var<T>, const std::vector<std::size_t>&, Var<T>,                \
                           const AamConfig&);                                              \
  template Var<T> loo_centroids(Var<T>, const std::vector<std::size_t>&);                  \
  template Var<T> ge2e_literal(Var<T>, Var<T>, const std::vector<std::size_t>&,            \
                               const std::vector<double>&);                                \
  template Var<T> ge2e_contrastive(Var<T>, Var<T>, const std::vector<std::size_t>&,        \
                                   const std::vector<double>&, double);

EVKIT_INSTANTIATE_LOSSES(float)
EVKIT_INSTANTIATE_LOSSES(double)

}  // namespace evkit
