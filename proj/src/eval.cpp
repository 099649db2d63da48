// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include "evkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "evkit/audio.hpp"
#include "evkit/csv.hpp"
#include "evkit/error.hpp"
#include "json.hpp"

namespace evkit {

double score_pair(std::span<const float> a, std::span<const float> b, bool* zero_vector) {
  if (a.size() != b.size()) {
    throw InvalidArgument("score_pair: length " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (zero_vector) *zero_vector = na == 0.0 || nb == 0.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  // sqrt(na) * sqrt(nb) rather than sqrt(na * nb) keeps the product symmetric
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<float> l2_normalized(std::span<const float> v) {
  double n = 0;
  for (const float x : v) n += static_cast<double>(x) * x;
  std::vector<float> out(v.begin(), v.end());
  if (n == 0.0) return out;
  const double inv = 1.0 / std::sqrt(n);
  for (auto& x : out) x = static_cast<float>(x * inv);
  return out;
}

std::vector<float> utterance_embedding(const std::vector<std::vector<float>>& frames) {
  if (frames.empty()) throw InvalidArgument("utterance_embedding: no frames");
  std::vector<double> acc(frames[0].size(), 0.0);
  for (const auto& f : frames) {
    if (f.size() != acc.size()) throw InvalidArgument("utterance_embedding: ragged embeddings");
    const auto u = l2_normalized(f);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += u[i];
  }
  std::vector<float> mean(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i)
    mean[i] = static_cast<float>(acc[i] / static_cast<double>(frames.size()));
  return l2_normalized(mean);
}

PairSample sample_pairs(std::size_t n_items, double fraction, std::uint64_t seed,
                        const std::vector<std::size_t>& groups) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("sample_pairs: fraction must lie in (0, 1]");
  }
  if (!groups.empty() && groups.size() != n_items) {
    throw InvalidArgument("sample_pairs: groups length mismatch");
  }
  auto eligible = [&](std::size_t i, std::size_t j) { return groups.empty() || groups[i] != groups[j]; };
  PairSample out;
  for (std::size_t i = 0; i < n_items; ++i)
    for (std::size_t j = i + 1; j < n_items; ++j) out.eligible += eligible(i, j);
  const auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(out.eligible)));
  out.pairs.reserve(want);
  // selection sampling: visit each eligible pair once, keep it with
  // probability (still needed) / (still unseen)
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::size_t seen = 0;
  for (std::size_t i = 0; i < n_items && out.pairs.size() < want; ++i)
    for (std::size_t j = i + 1; j < n_items && out.pairs.size() < want; ++j) {
      if (!eligible(i, j)) continue;
      const double need = static_cast<double>(want - out.pairs.size());
      const double left = static_cast<double>(out.eligible - seen);
      if (uni(rng) * left < need) out.pairs.emplace_back(i, j);
      ++seen;
    }
  out.few_pairs = out.pairs.size() < 100;
  return out;
}

std::vector<ErrorRates> error_rates(std::span<const double> genuine, std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty()) {
    throw InvalidArgument("score table needs at least one genuine and one impostor record");
  }
  std::vector<double> g(genuine.begin(), genuine.end()), im(impostor.begin(), impostor.end());
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());
  std::vector<double> thresholds;
  thresholds.reserve(g.size() + im.size());
  std::merge(g.begin(), g.end(), im.begin(), im.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double ng = static_cast<double>(g.size()), ni = static_cast<double>(im.size());
  std::vector<ErrorRates> out;
  out.reserve(thresholds.size() + 1);
  std::size_t gi = 0, ii = 0;  // scores strictly below the threshold
  for (const double t : thresholds) {
    while (gi < g.size() && g[gi] < t) ++gi;
    while (ii < im.size() && im[ii] < t) ++ii;
    out.push_back({t, static_cast<double>(im.size() - ii) / ni, static_cast<double>(gi) / ng});
  }
  out.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return out;
}

double tmr_at_fmr(std::span<const ErrorRates> curve, double max_fmr) {
  double best = 0.0;
  for (const auto& p : curve)
    if (p.fmr <= max_fmr) best = std::max(best, 1.0 - p.fnmr);
  return best;
}

MetricsReport compute_metrics(std::span<const double> genuine, std::span<const double> impostor,
                              double c_miss, double c_fm, double p_target) {
  if (!(p_target >= 0.0 && p_target <= 1.0)) throw InvalidArgument("p_target must lie in [0, 1]");
  const auto curve = error_rates(genuine, impostor);
  MetricsReport m;
  m.n_genuine = genuine.size();
  m.n_impostor = impostor.size();
  m.p_target = p_target;
  m.c_miss = c_miss;
  m.c_fm = c_fm;

  // FNMR - FMR rises from -1 at the lowest threshold to +1 at reject-all.
  for (std::size_t k = 0; k < curve.size(); ++k) {
    const double d = curve[k].fnmr - curve[k].fmr;
    if (d < 0.0) continue;
    if (d == 0.0 || k == 0) {
      m.eer = curve[k].fmr;
      m.eer_threshold = curve[k].threshold;
    } else {
      const auto& a = curve[k - 1];
      const auto& b = curve[k];
      const double da = a.fnmr - a.fmr;
      const double lambda = -da / (d - da);
      m.eer = a.fmr + lambda * (b.fmr - a.fmr);
      m.eer_threshold = std::isfinite(b.threshold) ? a.threshold + lambda * (b.threshold - a.threshold)
                                                   : a.threshold;
    }
    break;
  }

  m.min_dcf = std::numeric_limits<double>::infinity();
  for (const auto& p : curve) {
    const double dcf = c_miss * p.fnmr * p_target + c_fm * p.fmr * (1.0 - p_target);
    if (dcf < m.min_dcf) {
      m.min_dcf = dcf;
      m.min_dcf_threshold = p.threshold;
    }
  }
  m.tmr_fmr_1 = tmr_at_fmr(curve, 0.01);
  m.tmr_fmr_10 = tmr_at_fmr(curve, 0.10);

  auto moments = [](std::span<const double> v) {
    double mean = 0;
    for (const double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (const double x : v) var += (x - mean) * (x - mean);
    return std::pair{mean, var / static_cast<double>(v.size())};
  };
  const auto [mg, vg] = moments(genuine);
  const auto [mi, vi] = moments(impostor);
  const double pooled = std::sqrt(0.5 * (vg + vi));
  const double gap = std::abs(mg - mi);
  m.d_prime = pooled > 0.0 ? gap / pooled : (gap == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());

  // Mann-Whitney: for each genuine score count impostors below and equal
  std::vector<double> im(impostor.begin(), impostor.end());
  std::sort(im.begin(), im.end());
  double wins = 0;
  for (const double s : genuine) {
    const auto lo = std::lower_bound(im.begin(), im.end(), s);
    const auto hi = std::upper_bound(lo, im.end(), s);
    wins += static_cast<double>(lo - im.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  m.auc = wins / (static_cast<double>(genuine.size()) * static_cast<double>(impostor.size()));
  return m;
}

namespace {

void split_scores(const ScoreTable& t, std::vector<double>& g, std::vector<double>& im) {
  for (const auto& r : t.records) (r.is_genuine ? g : im).push_back(r.score);
}

}  // namespace

MetricsReport compute_metrics(const ScoreTable& t, double c_miss, double c_fm, double p_target) {
  std::vector<double> g, im;
  split_scores(t, g, im);
  return compute_metrics(g, im, c_miss, c_fm, p_target);
}

std::vector<DetPoint> det_curve(const ScoreTable& t, std::size_t n_points) {
  std::vector<double> g, im;
  split_scores(t, g, im);
  if (g.empty() || im.empty()) {
    throw InvalidArgument("score table needs at least one genuine and one impostor record");
  }
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());
  const double lo = std::min(g.front(), im.front()), hi = std::max(g.back(), im.back());
  auto at = [&](double thr) {
    const auto below = [thr](const std::vector<double>& v) {
      return static_cast<double>(std::lower_bound(v.begin(), v.end(), thr) - v.begin());
    };
    const double ni = static_cast<double>(im.size());
    return DetPoint{(ni - below(im)) / ni, below(g) / static_cast<double>(g.size())};
  };
  std::vector<DetPoint> out;
  out.push_back({0.0, 1.0});
  for (std::size_t k = n_points; k-- > 0;) {
    const double thr = n_points == 1 ? lo
                                     : lo + (hi - lo) * static_cast<double>(k) /
                                                static_cast<double>(n_points - 1);
    out.push_back(at(thr));
  }
  out.push_back({1.0, 0.0});
  return out;
}

ScoreHistograms score_distributions(const ScoreTable& t, std::size_t n_bins) {
  if (n_bins < 2) throw InvalidArgument("score_distributions: need at least 2 bins");
  ScoreHistograms h;
  const double width = 2.0 / static_cast<double>(n_bins);
  for (std::size_t i = 0; i <= n_bins; ++i) h.edges.push_back(-1.0 + width * static_cast<double>(i));
  h.edges.back() = 1.0;
  h.genuine_density.assign(n_bins, 0.0);
  h.impostor_density.assign(n_bins, 0.0);
  std::size_t ng = 0, ni = 0;
  for (const auto& r : t.records) {
    const double s = std::clamp(r.score, -1.0, 1.0);
    const auto bin = std::min(n_bins - 1, static_cast<std::size_t>((s + 1.0) / width));
    if (r.is_genuine) {
      h.genuine_density[bin] += 1;
      ++ng;
    } else {
      h.impostor_density[bin] += 1;
      ++ni;
    }
  }
  for (auto& v : h.genuine_density) v = ng ? v / (static_cast<double>(ng) * width) : 0.0;
  for (auto& v : h.impostor_density) v = ni ? v / (static_cast<double>(ni) * width) : 0.0;
  return h;
}

std::map<std::string, std::pair<double, double>> emotion_centroids(const ScoreTable& t) {
  std::map<std::string, std::array<double, 3>> acc;  // valence, arousal, count
  for (const auto& r : t.records) {
    auto& a = acc[r.emotion_a];
    a[0] += r.valence_a;
    a[1] += r.arousal_a;
    a[2] += 1;
    auto& b = acc[r.emotion_b];
    b[0] += r.valence_b;
    b[1] += r.arousal_b;
    b[2] += 1;
  }
  std::map<std::string, std::pair<double, double>> out;
  for (const auto& [e, a] : acc) out[e] = {a[0] / a[2], a[1] / a[2]};
  return out;
}

std::vector<GridCell> emotion_grid(const ScoreTable& t,
                                   const std::map<std::string, std::pair<double, double>>& coords) {
  // key: (emotion index low, emotion index high, impostor?)
  std::map<std::tuple<std::size_t, std::size_t, int>, std::pair<double, std::size_t>> cells;
  for (const auto& r : t.records) {
    const auto ia = emotion_index(r.emotion_a), ib = emotion_index(r.emotion_b);
    if (!ia) throw InvalidArgument("emotion_grid: unknown emotion '" + r.emotion_a + "'");
    if (!ib) throw InvalidArgument("emotion_grid: unknown emotion '" + r.emotion_b + "'");
    auto& c = cells[{std::min(*ia, *ib), std::max(*ia, *ib), r.is_genuine ? 0 : 1}];
    c.first += r.score;
    c.second += 1;
  }
  std::vector<GridCell> out;
  for (const auto& [key, acc] : cells) {
    const auto& [lo, hi, cat] = key;
    GridCell c;
    c.emotion_a = std::string(kEmotions[lo]);
    c.emotion_b = std::string(kEmotions[hi]);
    c.category = cat == 0 ? "genuine" : "impostor";
    c.mean_score = acc.first / static_cast<double>(acc.second);
    c.count = acc.second;
    const auto pa = coords.find(c.emotion_a), pb = coords.find(c.emotion_b);
    if (pa == coords.end() || pb == coords.end()) {
      throw InvalidArgument("emotion_grid: no coordinates for " + c.emotion_a + "/" + c.emotion_b);
    }
    c.valence_mid = 0.5 * (pa->second.first + pb->second.first);
    c.arousal_mid = 0.5 * (pa->second.second + pb->second.second);
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  if (!out) throw IoError("write failed: " + path.string());
}

std::string fmt(double v) { return csv::format_double(v); }

}  // namespace

void write_scores_csv(const std::filesystem::path& path, const ScoreTable& t) {
  auto out = open_out(path);
  out << kScoresHeader << '\n';
  for (const auto& r : t.records) {
    out << csv::field(r.identity_a) << ',' << csv::field(r.identity_b) << ','
        << csv::field(r.emotion_a) << ',' << csv::field(r.emotion_b) << ','
        << fmt(r.valence_a) << ',' << fmt(r.arousal_a) << ',' << fmt(r.dominance_a) << ','
        << fmt(r.valence_b) << ',' << fmt(r.arousal_b) << ',' << fmt(r.dominance_b) << ','
        << csv::field(r.gender_a) << ',' << csv::field(r.gender_b) << ',' << fmt(r.score) << ',' << (r.is_genuine ? 1 : 0)
        << '\n';
  }
  finish(out, path);
}

ScoreTable read_scores_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  ScoreTable out;
  const auto col = [&](const char* name) { return t.column(name); };
  const std::size_t ia = col("identity_a"), ib = col("identity_b"), ea = col("emotion_a"),
                    eb = col("emotion_b"), va = col("valence_a"), aa = col("arousal_a"),
                    da = col("dominance_a"), vb = col("valence_b"), ab = col("arousal_b"),
                    db = col("dominance_b"), ga = col("gender_a"), gb = col("gender_b"),
                    sc = col("score"), gen = col("is_genuine");
  for (const auto& r : t.rows) {
    ScoreRecord s{r[ia], r[ib], r[ea], r[eb],
                  csv::to_double(r[va], "valence_a"), csv::to_double(r[aa], "arousal_a"),
                  csv::to_double(r[da], "dominance_a"), csv::to_double(r[vb], "valence_b"),
                  csv::to_double(r[ab], "arousal_b"), csv::to_double(r[db], "dominance_b"),
                  r[ga], r[gb], csv::to_double(r[sc], "score"), r[gen] == "1"};
    if (s.is_genuine != (s.identity_a == s.identity_b)) {
      throw InvalidArgument(path.string() + ": is_genuine disagrees with the identities");
    }
    out.records.push_back(std::move(s));
  }
  return out;
}

void write_metrics_json(const std::filesystem::path& path, const MetricsReport& m) {
  nlohmann::ordered_json j;
  const auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(); };
  j["eer"] = num(m.eer);
  j["min_dcf"] = num(m.min_dcf);
  j["tmr_fmr_1"] = num(m.tmr_fmr_1);
  j["tmr_fmr_10"] = num(m.tmr_fmr_10);
  j["d_prime"] = num(m.d_prime);
  j["auc"] = num(m.auc);
  j["n_genuine"] = m.n_genuine;
  j["n_impostor"] = m.n_impostor;
  j["p_target"] = m.p_target;
  j["c_miss"] = m.c_miss;
  j["c_fm"] = m.c_fm;
  j["eer_threshold"] = num(m.eer_threshold);
  j["min_dcf_threshold"] = num(m.min_dcf_threshold);
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

void write_det_csv(const std::filesystem::path& path, const std::vector<DetPoint>& det) {
  auto out = open_out(path);
  out << "fmr,fnmr\n";
  for (const auto& p : det) out << fmt(p.fmr) << ',' << fmt(p.fnmr) << '\n';
  finish(out, path);
}

void write_histogram_csv(const std::filesystem::path& path, const ScoreHistograms& h) {
  auto out = open_out(path);
  out << "bin_left,bin_right,density_genuine,density_impostor\n";
  for (std::size_t i = 0; i < h.genuine_density.size(); ++i) {
    out << fmt(h.edges[i]) << ',' << fmt(h.edges[i + 1]) << ',' << fmt(h.genuine_density[i]) << ','
        << fmt(h.impostor_density[i]) << '\n';
  }
  finish(out, path);
}

void write_grid_csv(const std::filesystem::path& path, const std::vector<GridCell>& grid) {
  auto out = open_out(path);
  out << "emotion_a,emotion_b,category,mean_score,count,valence_mid,arousal_mid\n";
  for (const auto& c : grid) {
    out << csv::field(c.emotion_a) << ',' << csv::field(c.emotion_b) << ',' << csv::field(c.category) << ',' << fmt(c.mean_score) << ','
        << c.count << ',' << fmt(c.valence_mid) << ',' << fmt(c.arousal_mid) << '\n';
  }
  finish(out, path);
}

}  // namespace evkit
