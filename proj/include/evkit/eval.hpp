// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace evkit {

/// Cosine similarity of two equal-length vectors, computed on their
/// normalized forms and clamped to [-1, 1]. A zero vector scores 0 and sets
/// `*zero_vector` when given.
double score_pair(std::span<const float> a, std::span<const float> b, bool* zero_vector = nullptr);

/// Unit-L2 copy of `v`; a zero vector is returned unchanged.
std::vector<float> l2_normalized(std::span<const float> v);

/// Mean of the L2-normalized rows, re-normalized. Throws on an empty list.
std::vector<float> utterance_embedding(const std::vector<std::vector<float>>& frame_embeddings);

struct PairSample {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (i, j) with i < j
  std::size_t eligible = 0;  // pairs the sample was drawn from
  bool few_pairs = false;    // fewer than 100 pairs drawn
};

/// Uniform sample without replacement of round(fraction * eligible) unordered
/// pairs of distinct items, skipping pairs whose `groups` entries match (pass
/// an empty vector to allow all pairs). Deterministic per seed.
PairSample sample_pairs(std::size_t n_items, double fraction, std::uint64_t seed,
                        const std::vector<std::size_t>& groups = {});

struct ScoreRecord {
  std::string identity_a, identity_b;
  std::string emotion_a, emotion_b;
  double valence_a = 0, arousal_a = 0, dominance_a = 0;
  double valence_b = 0, arousal_b = 0, dominance_b = 0;
  std::string gender_a, gender_b;
  double score = 0;
  bool is_genuine = false;
};

struct ScoreTable {
  std::vector<ScoreRecord> records;
  double fraction = 1.0;
  std::uint64_t seed = 0;
};

struct MetricsReport {
  double eer = 0;
  double eer_threshold = 0;
  double min_dcf = 0;
  double min_dcf_threshold = 0;
  double tmr_fmr_1 = 0;
  double tmr_fmr_10 = 0;
  double d_prime = 0;
  double auc = 0;
  std::size_t n_genuine = 0;
  std::size_t n_impostor = 0;
  double p_target = 0.01;
  double c_miss = 10.0;
  double c_fm = 1.0;
};

/// Operating point for "accept when score >= threshold".
struct ErrorRates {
  double threshold;
  double fmr;
  double fnmr;
};

/// FMR and FNMR at every distinct score used as a threshold, ascending, then
/// the reject-all point (threshold +inf, FMR 0, FNMR 1).
std::vector<ErrorRates> error_rates(std::span<const double> genuine, std::span<const double> impostor);

MetricsReport compute_metrics(std::span<const double> genuine, std::span<const double> impostor,
                              double c_miss = 10.0, double c_fm = 1.0, double p_target = 0.01);
MetricsReport compute_metrics(const ScoreTable& t, double c_miss = 10.0, double c_fm = 1.0,
                              double p_target = 0.01);

/// Best true match rate over thresholds whose FMR does not exceed `max_fmr`.
double tmr_at_fmr(std::span<const ErrorRates> curve, double max_fmr);

struct DetPoint {
  double fmr;
  double fnmr;
};

/// Error rates at n_points thresholds evenly spaced over the score range, plus
/// the accept-all (1, 0) and reject-all (0, 1) endpoints; ordered by
/// increasing FMR.
std::vector<DetPoint> det_curve(const ScoreTable& t, std::size_t n_points);

struct ScoreHistograms {
  std::vector<double> edges;  // n_bins + 1 edges over [-1, 1]
  std::vector<double> genuine_density;
  std::vector<double> impostor_density;
};

ScoreHistograms score_distributions(const ScoreTable& t, std::size_t n_bins);

struct GridCell {
  std::string emotion_a, emotion_b;  // registry order, a <= b
  std::string category;              // "genuine" or "impostor"
  double mean_score = 0;
  std::size_t count = 0;
  double valence_mid = 0;
  double arousal_mid = 0;
};

/// Mean (valence, arousal) of each emotion over both sides of every record.
std::map<std::string, std::pair<double, double>> emotion_centroids(const ScoreTable& t);

/// Unordered emotion pair x {genuine, impostor} averages; only populated
/// cells are returned, in registry order with genuine before impostor.
std::vector<GridCell> emotion_grid(const ScoreTable& t,
                                   const std::map<std::string, std::pair<double, double>>& coords);

inline constexpr std::string_view kScoresHeader =
    "identity_a,identity_b,emotion_a,emotion_b,valence_a,arousal_a,dominance_a,valence_b,"
    "arousal_b,dominance_b,gender_a,gender_b,score,is_genuine";

void write_scores_csv(const std::filesystem::path& path, const ScoreTable& t);
ScoreTable read_scores_csv(const std::filesystem::path& path);
void write_metrics_json(const std::filesystem::path& path, const MetricsReport& m);
void write_det_csv(const std::filesystem::path& path, const std::vector<DetPoint>& det);
void write_histogram_csv(const std::filesystem::path& path, const ScoreHistograms& h);
void write_grid_csv(const std::filesystem::path& path, const std::vector<GridCell>& grid);

}  // namespace evkit
