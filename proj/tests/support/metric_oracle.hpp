// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <set>
#include <vector>

namespace test {

// Reference metrics by direct counting over every candidate threshold.
struct MetricOracle {
  double eer, min_dcf, tmr1, tmr10, auc;
};

inline MetricOracle brute_force(const std::vector<double>& g, const std::vector<double>& im,
                                double c_miss, double c_fm, double p) {
  std::set<double> cand(g.begin(), g.end());
  cand.insert(im.begin(), im.end());
  std::vector<double> thr(cand.begin(), cand.end());
  thr.push_back(std::numeric_limits<double>::infinity());
  std::vector<double> fmr, fnmr;
  for (const double t : thr) {
    double fa = 0, fr = 0;
    for (const double s : im) fa += s >= t;
    for (const double s : g) fr += s < t;
    fmr.push_back(fa / static_cast<double>(im.size()));
    fnmr.push_back(fr / static_cast<double>(g.size()));
  }
  MetricOracle o{};
  // first threshold where FNMR catches up with FMR, interpolated from the previous one
  for (std::size_t k = 0; k < thr.size(); ++k) {
    if (fnmr[k] < fmr[k]) continue;
    if (k == 0 || fnmr[k] == fmr[k]) {
      o.eer = fmr[k];
    } else {
      const double d0 = fmr[k - 1] - fnmr[k - 1];  // > 0
      const double d1 = fnmr[k] - fmr[k];          // > 0
      o.eer = fmr[k - 1] + (fmr[k] - fmr[k - 1]) * d0 / (d0 + d1);
    }
    break;
  }
  o.min_dcf = INFINITY;
  for (std::size_t k = 0; k < thr.size(); ++k) {
    o.min_dcf = std::min(o.min_dcf, c_miss * fnmr[k] * p + c_fm * fmr[k] * (1 - p));
    if (fmr[k] <= 0.01) o.tmr1 = std::max(o.tmr1, 1 - fnmr[k]);
    if (fmr[k] <= 0.10) o.tmr10 = std::max(o.tmr10, 1 - fnmr[k]);
  }
  double wins = 0;
  for (const double a : g)
    for (const double b : im) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  o.auc = wins / (static_cast<double>(g.size()) * static_cast<double>(im.size()));
  return o;
}

// Random table with ties: scores quantized to a per-table grid.
inline void random_scores(std::mt19937_64& rng, std::vector<double>& g, std::vector<double>& im,
                          std::size_t max_each) {
  std::uniform_int_distribution<std::size_t> count(1, max_each);
  std::uniform_real_distribution<double> shift(0.0, 1.0);
  std::uniform_int_distribution<int> levels(3, 2000);
  const int q = levels(rng);
  const double sep = shift(rng);
  std::normal_distribution<double> gen(sep, 0.4), imp(0.0, 0.4);
  auto quant = [q](double v) { return std::round(std::clamp(v, -1.0, 1.0) * q) / q; };
  g.resize(count(rng));
  im.resize(count(rng));
  for (auto& v : g) v = quant(gen(rng));
  for (auto& v : im) v = quant(imp(rng));
}

}  // namespace test
