// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "evkit/error.hpp"
#include "evkit/preprocess.hpp"
#include "evkit/synthgen.hpp"
#include "test_util.hpp"

using namespace evkit;
namespace fs = std::filesystem;

namespace {

// Pitch from the first autocorrelation peak within 90% of the largest one over
// 60-400 Hz lags, refined by a parabola through the peak and its neighbours.
double autocorr_pitch(const std::vector<float>& x) {
  const std::size_t lo = kSampleRate / 400, hi = kSampleRate / 60;
  std::vector<double> r(hi + 2, 0.0);
  double mean = 0;
  for (const float v : x) mean += v;
  mean /= static_cast<double>(x.size());
  for (std::size_t lag = lo - 1; lag <= hi + 1; ++lag)
    for (std::size_t i = 0; i + lag < x.size(); ++i) r[lag] += (x[i] - mean) * (x[i + lag] - mean);
  double top = r[lo];
  for (std::size_t lag = lo; lag <= hi; ++lag) top = std::max(top, r[lag]);
  std::size_t best = lo;
  while (r[best] < 0.9 * top) ++best;
  while (best < hi && r[best + 1] > r[best]) ++best;
  const double a = r[best - 1], b = r[best], c = r[best + 1];
  const double offset = 0.5 * (a - c) / (a - 2 * b + c);
  return kSampleRate / (static_cast<double>(best) + offset);
}

double rms(const std::vector<float>& x) {
  double s = 0;
  for (const float v : x) s += static_cast<double>(v) * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("speaker specs") {
  const SpeakerSpec a = make_speaker(5), b = make_speaker(5);
  CHECK(a.f0_base == b.f0_base);
  CHECK(a.formants == b.formants);
  CHECK(a.bandwidths == b.bandwidths);
  CHECK(a.spectral_tilt == b.spectral_tilt);

  std::set<double> f0s;
  for (std::uint64_t s = 0; s < 32; ++s) f0s.insert(make_speaker(s).f0_base);
  CHECK(f0s.size() == 32);

  for (std::uint64_t s = 0; s < 1000; ++s) {
    const SpeakerSpec sp = make_speaker(s);
    CHECK(sp.formants[0] < sp.formants[1]);
    CHECK(sp.formants[1] < sp.formants[2]);
    CHECK(sp.formants[2] < 8000.0);
    CHECK(sp.formants[0] > 0.0);
    CHECK(sp.f0_base >= 85.0);
    CHECK(sp.f0_base <= 255.0);
    CHECK(sp.spectral_tilt >= -12.0);
    CHECK(sp.spectral_tilt <= -3.0);
    CHECK(sp.gender() == (sp.f0_base < 165.0 ? "male" : "female"));
  }
}

TEST_CASE("emotion presets") {
  const auto& presets = emotion_presets();
  REQUIRE(presets.size() == kEmotions.size());
  for (std::size_t i = 0; i < presets.size(); ++i) {
    CHECK(presets[i].label == kEmotions[i]);
    CHECK_NOTHROW(presets[i].validate());
  }
  CHECK(emotion_preset("angry").label == "angry");
  CHECK_THROWS_AS(emotion_preset("bored"), InvalidArgument);

  EmotionSpec bad = presets[0];
  bad.jitter_pct = 11;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = presets[0];
  bad.f0_multiplier = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = presets[0];
  bad.valence = 5.5;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);

  test::TempDir tmp;
  write_emotion_presets(tmp.path() / "e.csv", presets);
  CHECK(slurp(tmp.path() / "e.csv").starts_with(std::string(kEmotionPresetHeader) + "\n"));
  const auto back = read_emotion_presets(tmp.path() / "e.csv");
  REQUIRE(back.size() == presets.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].label == presets[i].label);
    CHECK(back[i].f0_multiplier == presets[i].f0_multiplier);
    CHECK(back[i].arousal == presets[i].arousal);
  }
}

TEST_CASE("source pitch matches the requested fundamental") {
  for (const double f0 : {85.0, 110.0, 150.5, 200.0, 255.0}) {
    for (const double jitter : {0.0, 1.0}) {
      std::mt19937_64 rng(3);
      const auto src = sawtooth_source(f0, jitter, 16000, rng);
      CAPTURE(f0);
      CAPTURE(jitter);
      CHECK(std::abs(autocorr_pitch(src) - f0) < 2.0);
      for (const float v : src) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
      }
    }
  }
  const SpeakerSpec sp = make_speaker(11);
  const EmotionSpec& happy = emotion_preset("happy");
  std::mt19937_64 rng(4);
  const auto src = sawtooth_source(sp.f0_base * happy.f0_multiplier, 0.0, 16000, rng);
  CHECK(std::abs(autocorr_pitch(src) - sp.f0_base * happy.f0_multiplier) < 2.0);
}

TEST_CASE("synthesized audio") {
  const SpeakerSpec sp = make_speaker(1);
  const AudioSample s = synthesize(sp, emotion_preset("neutral"), 1.23456, 9);
  CHECK(s.waveform.size() == static_cast<std::size_t>(std::llround(1.23456 * 16000)));
  CHECK(s.emotion == "neutral");
  CHECK(s.gender == sp.gender());
  CHECK_NOTHROW(s.validate());
  double peak = 0;
  for (const float v : s.waveform) peak = std::max(peak, static_cast<double>(std::abs(v)));
  CHECK(peak == doctest::Approx(0.5).epsilon(0.1));

  EmotionSpec silent = emotion_preset("neutral");
  silent.energy_scale = 0;
  CHECK(rms(synthesize(sp, silent, 2.0, 9).waveform) < 0.02);

  const AudioSample again = synthesize(sp, emotion_preset("neutral"), 1.23456, 9);
  CHECK(again.waveform == s.waveform);
  CHECK(synthesize(sp, emotion_preset("neutral"), 1.23456, 10).waveform != s.waveform);
  CHECK_THROWS_AS(synthesize(sp, emotion_preset("neutral"), 0.05, 9), InvalidArgument);

  // louder emotions carry more energy over the same speaker
  CHECK(rms(synthesize(sp, emotion_preset("angry"), 2.0, 1).waveform) >
        rms(synthesize(sp, emotion_preset("sad"), 2.0, 1).waveform));
}

TEST_CASE("speaker-disjoint splits") {
  const auto s20 = assign_splits(20, 0);
  std::size_t train = 0, val = 0, test = 0;
  for (const auto& s : s20) {
    train += s == "train";
    val += s == "val";
    test += s == "test1";
  }
  CHECK(train == 14);
  CHECK(val == 3);
  CHECK(test == 3);
  CHECK(assign_splits(20, 0) == s20);
  const auto s3 = assign_splits(3, 1);
  CHECK(std::count(s3.begin(), s3.end(), "train") == 1);
  CHECK(assign_splits(2, 1) == std::vector<std::string>{"train", "train"});
}

TEST_CASE("default corpus shape") {
  test::TempDir tmp;
  CorpusConfig cfg;
  cfg.duration_s = 0.2;
  const CorpusResult r = generate_corpus(cfg, tmp.path());
  CHECK(r.manifest.rows.size() == 600);
  CHECK(r.files_written == 600);
  CHECK(fs::exists(tmp.path() / "manifest.csv"));
  CHECK(fs::exists(tmp.path() / "emotions.csv"));
  CHECK(fs::exists(tmp.path() / "speakers.csv"));

  const Manifest m = Manifest::read(r.manifest_path);
  CHECK(m.rows.size() == 600);
  CHECK_NOTHROW(m.validate());
  std::map<std::string, std::set<std::string>> split_speakers;
  std::map<std::string, std::string> speaker_split;
  for (const auto& row : m.rows) {
    split_speakers[row.split].insert(row.speaker_id);
    const auto [it, fresh] = speaker_split.emplace(row.speaker_id, row.split);
    CHECK(it->second == row.split);
    CHECK(fs::exists(m.resolve(row)));
  }
  CHECK(split_speakers["train"].size() == 14);
  for (const auto& spk : split_speakers["val"]) CHECK_FALSE(split_speakers["train"].contains(spk));
  for (const auto& spk : split_speakers["test1"]) {
    CHECK_FALSE(split_speakers["train"].contains(spk));
    CHECK_FALSE(split_speakers["val"].contains(spk));
  }
}

TEST_CASE("regeneration is bit-identical") {
  test::TempDir a, b;
  CorpusConfig cfg;
  cfg.n_speakers = 3;
  cfg.emotions = {emotion_preset("sad"), emotion_preset("happy")};
  cfg.utterances_per_cell = 2;
  cfg.duration_s = 1.0;
  cfg.seed = 4;
  const CorpusResult ra = generate_corpus(cfg, a.path());
  const CorpusResult rb = generate_corpus(cfg, b.path());
  REQUIRE(ra.manifest.rows.size() == 12);
  for (const auto& row : ra.manifest.rows)
    CHECK(slurp(a.path() / row.path) == slurp(b.path() / row.path));
  CHECK(slurp(a.path() / "manifest.csv") == slurp(b.path() / "manifest.csv"));
  CHECK(slurp(a.path() / "speakers.csv") == slurp(b.path() / "speakers.csv"));

  const CorpusResult again = generate_corpus(cfg, a.path());
  CHECK(again.files_written == 0);
  CHECK(again.files_unchanged == 12);

  // every file passes ingestion
  for (const auto& row : ra.manifest.rows) CHECK_NOTHROW(load_wav(a.path() / row.path, row).validate());
}

TEST_CASE("seed mixing") {
  CHECK(mix_seed(1, 2) == mix_seed(1, 2));
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(mix_seed(0, i));
  CHECK(seen.size() == 1000);
}
