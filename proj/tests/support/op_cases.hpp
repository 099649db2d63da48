// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "evkit/diff/gradcheck.hpp"
#include "evkit/diff/ops.hpp"

namespace test {

using evkit::diff::Shape;
using evkit::diff::Tape;
using evkit::diff::Tensor;
using evkit::diff::Var;

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Weighted sum with fixed random weights turns any tensor output into a
// generic scalar, so every output coordinate contributes to the check.
inline Var<double> probe(Tape<double>& t, Var<double> out, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  auto w = t.constant(random_tensor(out.shape(), rng));
  return sum(mul(out, w));
}

using OpFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  OpFn op;
  double lo = -1.0;
  double hi = 1.0;
};

/// One gradient check of `c` on inputs drawn from `seed`.
inline evkit::diff::GradCheckResult check_op_case(const OpCase& c, int seed) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed) * 7919 + 17);
  std::vector<Tensor<double>> params;
  for (const auto& s : c.shapes) params.push_back(random_tensor(s, rng, c.lo, c.hi));
  return evkit::diff::grad_check(
      [&](Tape<double>& t, const std::vector<Var<double>>& p) {
        return probe(t, c.op(t, p), static_cast<std::uint64_t>(seed));
      },
      params);
}

/// Every differentiable op with small random inputs and a value range that
/// keeps it away from kinks.
inline std::vector<OpCase> op_cases() {
  using namespace evkit::diff;
  using P = const std::vector<Var<double>>&;
  std::vector<OpCase> cases;
  auto c = [&cases](std::string name, std::vector<Shape> shapes, OpFn op, double lo = -1.0,
                    double hi = 1.0) {
    cases.push_back({std::move(name), std::move(shapes), std::move(op), lo, hi});
  };
c("add", {{3, 4}, {3, 4}}, [](Tape<double>&, P p) { return add(p[0], p[1]); });
  c("sub", {{3, 4}, {3, 4}}, [](Tape<double>&, P p) { return sub(p[0], p[1]); });
  c("mul", {{3, 4}, {3, 4}}, [](Tape<double>&, P p) { return mul(p[0], p[1]); });
  c("affine", {{5}}, [](Tape<double>&, P p) { return affine(p[0], -1.5, 0.25); });
  c("selu", {{12}}, [](Tape<double>&, P p) { return selu(p[0]); }, -3, 3);
  c("sigmoid", {{12}}, [](Tape<double>&, P p) { return sigmoid(p[0]); }, -4, 4);
  c("tanh", {{12}}, [](Tape<double>&, P p) { return tanh(p[0]); }, -3, 3);
  c("relu", {{12}}, [](Tape<double>&, P p) { return relu(p[0]); });
  c("sqrt", {{6}}, [](Tape<double>&, P p) { return sqrt(p[0]); }, 0.1, 3.0);
  c("matmul", {{3, 4}, {4, 2}}, [](Tape<double>&, P p) { return matmul(p[0], p[1]); });
  c("matvec", {{3, 4}, {4}}, [](Tape<double>&, P p) { return matvec(p[0], p[1]); });
  c("transpose", {{3, 5}}, [](Tape<double>&, P p) { return transpose(p[0]); });
  c("reshape", {{3, 4}}, [](Tape<double>&, P p) { return reshape(p[0], {2, 6}); });
  c("select", {{3, 2, 2}}, [](Tape<double>&, P p) { return select(p[0], 1); });
  c("concat", {{2, 3}, {1, 3}},
           [](Tape<double>&, P p) { return concat<double>({p[0], p[1], p[0]}); });
  c("sum", {{4, 2}}, [](Tape<double>&, P p) { return sum(p[0]); });
  c("mean0", {{4, 3, 2}}, [](Tape<double>&, P p) { return mean(p[0], 0); });
  c("mean1", {{4, 3, 2}}, [](Tape<double>&, P p) { return mean(p[0], 1); });
  c("mean2", {{4, 3, 2}}, [](Tape<double>&, P p) { return mean(p[0], 2); });
  c("softmax", {{3, 5}}, [](Tape<double>&, P p) { return softmax(p[0]); }, -3, 3);
  c("log_softmax", {{3, 5}}, [](Tape<double>&, P p) { return log_softmax(p[0]); }, -3,
           3);
  c("l2_normalize", {{3, 6}}, [](Tape<double>&, P p) { return l2_normalize(p[0]); });
  c("pick", {{3, 4}}, [](Tape<double>&, P p) { return pick(p[0], {1, 0, 3}); });
  c("blend", {{2, 3}, {2, 3}}, [](Tape<double>&, P p) {
    return blend(p[0], p[1], {true, false, false, true, true, false});
  });
  c("pairwise_sq_dist", {{3, 4}, {5, 4}},
           [](Tape<double>&, P p) { return pairwise_sq_dist(p[0], p[1]); });
  c("rowwise_sq_dist", {{3, 4}, {3, 4}},
           [](Tape<double>&, P p) { return rowwise_sq_dist(p[0], p[1]); });
  c("masked_min", {{3, 4}}, [](Tape<double>&, P p) {
    return masked_row_reduce(
        p[0], {true, false, true, true, false, true, true, false, true, true, true, true},
        Reduce::kMin);
  });
  c("masked_max", {{3, 4}}, [](Tape<double>&, P p) {
    return masked_row_reduce(
        p[0], {true, false, true, true, false, true, true, false, true, true, true, true},
        Reduce::kMax);
  });
  c("conv1d_dilated", {{2, 11}, {3, 2, 3}, {3}}, [](Tape<double>&, P p) {
    return conv1d_dilated(p[0], p[1], p[2], 2, 2);
  });
  c("conv1d_dilated_batched", {{2, 9, 3}, {2, 2, 5}, {2}}, [](Tape<double>&, P p) {
    return conv1d_dilated(p[0], p[1], p[2], 3, 6);
  });
  c("conv2d", {{2, 7, 6}, {3, 2, 3, 3}, {3}}, [](Tape<double>&, P p) {
    return conv2d(p[0], p[1], p[2], 2, 1);
  });
  c("gru_forward", {{4, 3}, {3, 5, 3}, {3, 5, 5}, {3, 5}, {3, 5}, {5}},
           [](Tape<double>&, P p) {
             return gru_forward(p[0], GruParams<double>{p[1], p[2], p[3], p[4]}, p[5]);
           });
  return cases;
}

}  // namespace test
