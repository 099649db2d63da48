// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include "evkit/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "evkit/csv.hpp"
#include "evkit/error.hpp"
#include "evkit/keyvalue.hpp"

namespace evkit {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kSyllableRate = 4.0;      // Hz
constexpr double kEdgeSeconds = 0.1;       // noise-only lead-in and tail
constexpr double kNoiseFloor = 0.01;       // -40 dB re full scale
constexpr double kVoicedPeak = 0.5;

// Per-syllable gain: short attack and release around a flat top, then a gap.
double syllable_envelope(double phase) {
  constexpr double kAttack = 0.12, kRelease = 0.12, kGap = 0.12;
  if (phase < kAttack) return 0.5 - 0.5 * std::cos(std::numbers::pi * phase / kAttack);
  const double release_start = 1.0 - kGap - kRelease;
  if (phase < release_start) return 1.0;
  if (phase < 1.0 - kGap)
    return 0.5 + 0.5 * std::cos(std::numbers::pi * (phase - release_start) / kRelease);
  return 0.0;
}

// Two-pole digital resonator, unity gain at DC.
void resonate(std::vector<double>& x, double freq, double bw) {
  const double t = 1.0 / kSampleRate;
  const double c = -std::exp(-kTwoPi * bw * t);
  const double b = 2.0 * std::exp(-std::numbers::pi * bw * t) * std::cos(kTwoPi * freq * t);
  const double a = 1.0 - b - c;
  double y1 = 0.0, y2 = 0.0;
  for (double& v : x) {
    const double y = a * v + b * y1 + c * y2;
    y2 = y1;
    y1 = y;
    v = y;
  }
}

std::string fmt(double v) { return csv::format_double(v); }

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined state
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string SpeakerSpec::gender() const { return f0_base < 165.0 ? "male" : "female"; }

void EmotionSpec::validate() const {
  if (!emotion_index(label)) throw InvalidArgument("unknown emotion label '" + label + "'");
  if (!(f0_multiplier > 0 && energy_scale >= 0 && rate_multiplier > 0)) {
    throw InvalidArgument("emotion '" + label + "': multipliers must be positive");
  }
  if (!(jitter_pct >= 0 && jitter_pct <= 10)) {
    throw InvalidArgument("emotion '" + label + "': jitter_pct must lie in [0, 10]");
  }
  for (const double d : {valence, arousal, dominance})
    if (!(d >= 0 && d <= 5)) throw InvalidArgument("emotion '" + label + "': dimensions must lie in [0, 5]");
}

SpeakerSpec make_speaker(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x5EA4E8));
  auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  SpeakerSpec sp;
  sp.seed = seed;
  sp.f0_base = uni(85.0, 255.0);
  sp.formants = {uni(300.0, 850.0), uni(1000.0, 2300.0), uni(2400.0, 3400.0)};
  sp.bandwidths = {uni(60.0, 120.0), uni(80.0, 160.0), uni(100.0, 220.0)};
  sp.spectral_tilt = uni(-12.0, -3.0);
  return sp;
}

const std::vector<EmotionSpec>& emotion_presets() {
  // label, f0, energy, jitter, rate, valence, arousal, dominance
  static const std::vector<EmotionSpec> presets = {
      {"neutral", 1.00, 1.00, 1.0, 1.00, 3.0, 2.5, 2.5},
      {"happy", 1.25, 1.30, 1.5, 1.15, 4.3, 3.8, 3.2},
      {"angry", 1.15, 1.60, 3.0, 1.20, 1.2, 4.5, 4.3},
      {"sad", 0.85, 0.60, 2.0, 0.75, 1.3, 1.2, 1.5},
      {"fear", 1.35, 0.90, 5.0, 1.30, 1.5, 4.0, 1.3},
      {"disgust", 0.90, 1.10, 2.5, 0.90, 1.4, 2.8, 3.3},
      {"surprise", 1.40, 1.30, 2.0, 1.10, 3.6, 4.2, 2.8},
      {"contempt", 0.95, 0.90, 1.5, 0.85, 1.8, 2.2, 3.8},
      {"calm", 0.90, 0.70, 0.5, 0.80, 3.4, 1.0, 2.7},
      {"excited", 1.30, 1.50, 2.5, 1.35, 4.5, 4.7, 3.5},
  };
  return presets;
}

const EmotionSpec& emotion_preset(const std::string& label) {
  for (const auto& e : emotion_presets())
    if (e.label == label) return e;
  throw InvalidArgument("unknown emotion label '" + label + "'");
}

void write_emotion_presets(const std::filesystem::path& path, const std::vector<EmotionSpec>& presets) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << kEmotionPresetHeader << '\n';
  for (const auto& e : presets) {
    out << csv::field(e.label) << ',' << fmt(e.f0_multiplier) << ',' << fmt(e.energy_scale) << ','
        << fmt(e.jitter_pct) << ',' << fmt(e.rate_multiplier) << ',' << fmt(e.valence) << ','
        << fmt(e.arousal) << ',' << fmt(e.dominance) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<EmotionSpec> read_emotion_presets(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  std::vector<EmotionSpec> out;
  for (const auto& r : t.rows) {
    EmotionSpec e;
    e.label = r[t.column("label")];
    e.f0_multiplier = csv::to_double(r[t.column("f0_mult")], "f0_mult");
    e.energy_scale = csv::to_double(r[t.column("energy")], "energy");
    e.jitter_pct = csv::to_double(r[t.column("jitter")], "jitter");
    e.rate_multiplier = csv::to_double(r[t.column("rate")], "rate");
    e.valence = csv::to_double(r[t.column("valence")], "valence");
    e.arousal = csv::to_double(r[t.column("arousal")], "arousal");
    e.dominance = csv::to_double(r[t.column("dominance")], "dominance");
    e.validate();
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<float> sawtooth_source(double f0, double jitter_pct, std::size_t n, std::mt19937_64& rng) {
  if (!(f0 > 0 && f0 < kSampleRate / 2.0)) throw InvalidArgument("sawtooth_source: f0 out of range");
  std::normal_distribution<double> normal(0.0, 1.0);
  auto cycle_f0 = [&] {
    const double f = f0 * (1.0 + jitter_pct / 100.0 * normal(rng));
    return std::clamp(f, 0.5 * f0, 1.5 * f0);
  };
  std::vector<float> out(n);
  double phase = 0.0, f = cycle_f0();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(2.0 * phase - 1.0);
    phase += f / kSampleRate;
    if (phase >= 1.0) {
      phase -= 1.0;
      f = cycle_f0();
    }
  }
  return out;
}

AudioSample synthesize(const SpeakerSpec& sp, const EmotionSpec& em, double duration_s,
                       std::uint64_t seed) {
  if (!(duration_s >= 0.1)) throw InvalidArgument("synthesize: duration must be at least 0.1 s");
  em.validate();
  const auto n = static_cast<std::size_t>(std::llround(duration_s * kSampleRate));
  std::mt19937_64 rng(seed);

  // voiced region, leaving the noise-only edges when the duration allows
  const auto edge = static_cast<std::size_t>(kEdgeSeconds * kSampleRate);
  const std::size_t v0 = n > 3 * edge ? edge : 0, v1 = n > 3 * edge ? n - edge : n;

  const auto src = sawtooth_source(sp.f0_base * em.f0_multiplier, em.jitter_pct, v1 - v0, rng);
  std::vector<double> voiced(src.begin(), src.end());
  const double syllable_hz = kSyllableRate * em.rate_multiplier;
  for (std::size_t i = 0; i < voiced.size(); ++i) {
    const double t = static_cast<double>(i) / kSampleRate * syllable_hz;
    voiced[i] *= syllable_envelope(t - std::floor(t));
  }
  for (std::size_t k = 0; k < 3; ++k) resonate(voiced, sp.formants[k], sp.bandwidths[k]);
  // one-pole tilt; steeper negative tilt puts the pole closer to 1
  const double pole = 1.0 - std::pow(10.0, sp.spectral_tilt / 20.0);
  double prev = 0.0;
  for (double& v : voiced) {
    prev = (1.0 - pole) * v + pole * prev;
    v = prev;
  }
  double peak = 0.0;
  for (const double v : voiced) peak = std::max(peak, std::abs(v));
  const double gain = peak > 0.0 ? kVoicedPeak / peak * em.energy_scale : 0.0;

  AudioSample s;
  s.waveform.assign(n, 0.0f);
  std::normal_distribution<double> noise(0.0, kNoiseFloor);
  for (std::size_t i = 0; i < n; ++i) {
    double v = noise(rng);
    if (i >= v0 && i < v1) v += gain * voiced[i - v0];
    s.waveform[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  s.emotion = em.label;
  s.valence = em.valence;
  s.arousal = em.arousal;
  s.dominance = em.dominance;
  s.gender = sp.gender();
  return s;
}

std::vector<std::string> assign_splits(std::size_t n_speakers, std::uint64_t seed) {
  std::size_t n_val = 0, n_test = 0;
  if (n_speakers >= 3) {
    n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.15 * n_speakers)));
    n_test = n_val;
  }
  std::vector<std::size_t> order(n_speakers);
  for (std::size_t i = 0; i < n_speakers; ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(seed, 0x5B117));
  for (std::size_t i = n_speakers; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  std::vector<std::string> split(n_speakers, "train");
  for (std::size_t k = 0; k < n_val; ++k) split[order[k]] = "val";
  for (std::size_t k = n_val; k < n_val + n_test; ++k) split[order[k]] = "test1";
  return split;
}

namespace {

std::string speaker_name(std::size_t k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "spk%03zu", k);
  return buf;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes `contents` unless the file already holds exactly these bytes.
bool write_if_changed(const std::filesystem::path& p, const std::string& contents) {
  if (std::filesystem::exists(p) && read_bytes(p) == contents) return false;
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << contents;
  if (!out) throw IoError("write failed: " + p.string());
  return true;
}

}  // namespace

CorpusConfig parse_corpus_config(std::string_view text, const std::filesystem::path& base_dir) {
  CorpusConfig c;
  for (const auto& e : kv::parse(text)) {
    if (e.key == "n_speakers") c.n_speakers = kv::to_count(e);
    else if (e.key == "utterances_per_cell") c.utterances_per_cell = kv::to_count(e);
    else if (e.key == "duration_s") c.duration_s = kv::to_real(e);
    else if (e.key == "seed") c.seed = kv::to_count(e);
    else if (e.key == "emotions") {
      std::filesystem::path p(e.value);
      if (p.is_relative()) p = base_dir / p;
      c.emotions = read_emotion_presets(p);
    } else {
      kv::unknown_key(e);
    }
  }
  if (c.n_speakers < 1) throw InvalidArgument("config key 'n_speakers': must be >= 1");
  if (c.utterances_per_cell < 1) throw InvalidArgument("config key 'utterances_per_cell': must be >= 1");
  if (!(c.duration_s >= 0.1)) throw InvalidArgument("config key 'duration_s': must be >= 0.1");
  return c;
}

CorpusConfig read_corpus_config(const std::filesystem::path& path) {
  return parse_corpus_config(kv::read_text(path), path.parent_path());
}

CorpusResult generate_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.n_speakers < 1) throw InvalidArgument("corpus needs at least one speaker");
  if (cfg.emotions.empty()) throw InvalidArgument("corpus needs at least one emotion");
  if (cfg.utterances_per_cell < 1) throw InvalidArgument("utterances_per_cell must be >= 1");
  for (const auto& e : cfg.emotions) e.validate();

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "wav", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "wav").string() + ": " + ec.message());

  CorpusResult res;
  res.manifest.base_dir = out_dir;
  const auto splits = assign_splits(cfg.n_speakers, cfg.seed);
  std::ostringstream speakers_csv;
  speakers_csv << "speaker_id,f0_base,f1,f2,f3,b1,b2,b3,spectral_tilt,gender,split\n";

  const auto tmp = out_dir / "wav" / ".partial.wav";
  for (std::size_t k = 0; k < cfg.n_speakers; ++k) {
    const std::string spk = speaker_name(k);
    const SpeakerSpec sp = make_speaker(mix_seed(cfg.seed, k));
    speakers_csv << spk << ',' << fmt(sp.f0_base);
    for (const double f : sp.formants) speakers_csv << ',' << fmt(f);
    for (const double b : sp.bandwidths) speakers_csv << ',' << fmt(b);
    speakers_csv << ',' << fmt(sp.spectral_tilt) << ',' << sp.gender() << ',' << splits[k] << '\n';

    std::filesystem::create_directories(out_dir / "wav" / spk, ec);
    if (ec) throw IoError("cannot create directory for " + spk + ": " + ec.message());
    for (std::size_t e = 0; e < cfg.emotions.size(); ++e) {
      const auto& em = cfg.emotions[e];
      for (std::size_t u = 0; u < cfg.utterances_per_cell; ++u) {
        const std::uint64_t useed =
            mix_seed(mix_seed(mix_seed(cfg.seed, 1000 + k), 1000 + e), 1000 + u);
        const AudioSample s = synthesize(sp, em, cfg.duration_s, useed);
        const std::string rel = "wav/" + spk + "/" + em.label + "_" + std::to_string(u) + ".wav";
        write_wav(tmp, s.waveform);
        if (write_if_changed(out_dir / rel, read_bytes(tmp))) {
          ++res.files_written;
        } else {
          ++res.files_unchanged;
        }
        res.manifest.rows.push_back(
            {rel, spk, em.label, em.valence, em.arousal, em.dominance, sp.gender(), splits[k]});
      }
    }
  }
  std::filesystem::remove(tmp, ec);
  res.manifest.validate();
  res.manifest_path = out_dir / "manifest.csv";
  res.manifest.write(res.manifest_path);
  write_emotion_presets(out_dir / "emotions.csv", cfg.emotions);
  write_if_changed(out_dir / "speakers.csv", speakers_csv.str());
  return res;
}

}  // namespace evkit
