// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "evkit/diff/tape.hpp"

namespace evkit::diff {

/// Scalar-valued computation over a list of parameter leaves.
using CheckedFn =
    std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

/// How piecewise ops behave in the shifted evaluations. kLive evaluates the
/// function as is; kFrozen replays the branches taken at the unshifted point,
/// so a kink inside the difference stencil cannot corrupt the estimate. Both
/// have the same derivative at points off the kinks.
enum class Branches { kLive, kFrozen };

/// Relative error |a - n| / max(1e-12, |a| + |n|).
double relative_error(double analytic, double numeric);

/// Compares the tape gradient of `f` with central differences
/// (f(p + eps) - f(p - eps)) / (2 eps), one coordinate at a time.
/// With `max_coords_per_param`, a seeded random subset of coordinates of each
/// parameter is checked instead of all of them.
GradCheckResult grad_check(const CheckedFn& f, std::vector<Tensor<double>> params,
                           double eps = 1e-5,
                           std::optional<std::size_t> max_coords_per_param = std::nullopt,
                           std::uint64_t seed = 0, Branches branches = Branches::kLive);

/// Directional variant for large parameter sets: compares g . v with the
/// central difference of f along v, where v is a random unit direction over
/// the parameters whose index is in `active` (all when empty).
double directional_grad_check(const CheckedFn& f,
                              const std::vector<Tensor<double>>& params,
                              std::uint64_t seed, double eps = 1e-5,
                              const std::vector<std::size_t>& active = {},
                              Branches branches = Branches::kLive);

}  // namespace evkit::diff
