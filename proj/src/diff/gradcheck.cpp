// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include "evkit/diff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace evkit::diff {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(1e-12, std::abs(analytic) + std::abs(numeric));
}

namespace {

double evaluate(const CheckedFn& f, const std::vector<Tensor<double>>& params, BranchLog* log) {
  Tape<double> tape;
  if (log) {
    log->replay = true;
    log->cursor = 0;
    tape.set_branch_log(log);
  }
  std::vector<Var<double>> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.constant(p));
  const Var<double> out = f(tape, vars);
  if (out.size() != 1) throw InvalidArgument("grad_check: function must be scalar");
  return out.value()[0];
}

std::vector<Tensor<double>> analytic_gradients(const CheckedFn& f,
                                               const std::vector<Tensor<double>>& params,
                                               BranchLog* log) {
  Tape<double> tape;
  tape.set_branch_log(log);
  std::vector<Var<double>> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.parameter(p));
  const Var<double> out = f(tape, vars);
  tape.backward(out);
  std::vector<Tensor<double>> grads;
  grads.reserve(vars.size());
  for (const auto& v : vars) grads.push_back(tape.gradient(v));
  return grads;
}

}  // namespace

GradCheckResult grad_check(const CheckedFn& f, std::vector<Tensor<double>> params,
                           double eps, std::optional<std::size_t> max_coords_per_param,
                           std::uint64_t seed, Branches branches) {
  BranchLog frozen;
  BranchLog* log = branches == Branches::kFrozen ? &frozen : nullptr;
  const auto grads = analytic_gradients(f, params, log);
  std::mt19937_64 rng(seed);
  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<std::size_t> coords(params[p].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords_per_param && coords.size() > *max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(*max_coords_per_param);
    }
    for (const std::size_t i : coords) {
      const double saved = params[p][i];
      params[p][i] = saved + eps;
      const double up = evaluate(f, params, log);
      params[p][i] = saved - eps;
      const double down = evaluate(f, params, log);
      params[p][i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(grads[p][i], numeric);
      ++result.coords_checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p;
        result.worst_index = i;
      }
    }
  }
  return result;
}

double directional_grad_check(const CheckedFn& f, const std::vector<Tensor<double>>& params,
                              std::uint64_t seed, double eps,
                              const std::vector<std::size_t>& active, Branches branches) {
  std::vector<bool> on(params.size(), active.empty());
  for (const std::size_t i : active) on.at(i) = true;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Tensor<double>> dir;
  double norm2 = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double> d(params[p].shape);
    if (on[p])
      for (auto& v : d.data) {
        v = normal(rng);
        norm2 += v * v;
      }
    dir.push_back(std::move(d));
  }
  const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-300));

  BranchLog frozen;
  BranchLog* log = branches == Branches::kFrozen ? &frozen : nullptr;
  const auto grads = analytic_gradients(f, params, log);
  double analytic = 0.0;
  auto shifted_up = params, shifted_down = params;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double v = dir[p][i] * inv;
      analytic += grads[p][i] * v;
      shifted_up[p][i] += eps * v;
      shifted_down[p][i] -= eps * v;
    }
  const double numeric =
      (evaluate(f, shifted_up, log) - evaluate(f, shifted_down, log)) / (2.0 * eps);
  return relative_error(analytic, numeric);
}

}  // namespace evkit::diff
