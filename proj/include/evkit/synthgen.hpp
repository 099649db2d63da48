// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "evkit/audio.hpp"
#include "evkit/manifest.hpp"

namespace evkit {

/// Identity parameters of a synthetic voice.
struct SpeakerSpec {
  double f0_base = 120.0;                 // Hz, [85, 255]
  std::array<double, 3> formants{};       // Hz, strictly increasing
  std::array<double, 3> bandwidths{};     // Hz
  double spectral_tilt = -6.0;            // dB/octave, [-12, -3]
  std::uint64_t seed = 0;

  /// "male" below 165 Hz, otherwise "female".
  std::string gender() const;
};

/// Prosodic modulation applied on top of a speaker. Never touches formants.
struct EmotionSpec {
  std::string label;
  double f0_multiplier = 1.0;
  double energy_scale = 1.0;
  double jitter_pct = 1.0;
  double rate_multiplier = 1.0;
  double valence = 2.5;
  double arousal = 2.5;
  double dominance = 2.5;

  void validate() const;
};

SpeakerSpec make_speaker(std::uint64_t seed);

/// The ten shipped presets, in registry order.
const std::vector<EmotionSpec>& emotion_presets();
const EmotionSpec& emotion_preset(const std::string& label);

inline constexpr std::string_view kEmotionPresetHeader =
    "label,f0_mult,energy,jitter,rate,valence,arousal,dominance";
void write_emotion_presets(const std::filesystem::path& path, const std::vector<EmotionSpec>& presets);
std::vector<EmotionSpec> read_emotion_presets(const std::filesystem::path& path);

/// Sawtooth in [-1, 1] whose period is redrawn each cycle as
/// f0 * (1 + jitter_pct / 100 * N(0, 1)).
std::vector<float> sawtooth_source(double f0, double jitter_pct, std::size_t n, std::mt19937_64& rng);

/// Source-filter utterance: jittered sawtooth at f0_base * f0_multiplier,
/// syllable envelope at 4 Hz * rate_multiplier, three cascaded formant
/// resonators, one-pole spectral tilt. The voiced part is peak-normalized to
/// 0.5 and multiplied by energy_scale; a -40 dB noise floor covers the whole
/// signal including 0.1 s of lead-in and tail. Length round(duration_s * 16000).
AudioSample synthesize(const SpeakerSpec& sp, const EmotionSpec& em, double duration_s,
                       std::uint64_t seed);

struct CorpusConfig {
  std::size_t n_speakers = 20;
  std::vector<EmotionSpec> emotions = emotion_presets();
  std::size_t utterances_per_cell = 3;
  double duration_s = 4.0;
  std::uint64_t seed = 0;
};

/// Flat key=value corpus description. Keys: n_speakers, utterances_per_cell,
/// duration_s, seed, emotions (preset CSV, relative paths resolve against
/// base_dir). Unknown keys raise InvalidArgument.
CorpusConfig parse_corpus_config(std::string_view text, const std::filesystem::path& base_dir = {});
CorpusConfig read_corpus_config(const std::filesystem::path& path);

struct CorpusResult {
  Manifest manifest;
  std::filesystem::path manifest_path;
  std::size_t files_written = 0;    // new or changed WAVs
  std::size_t files_unchanged = 0;  // already present with identical bytes
};

/// Speaker-disjoint split: about 70% train, 15% val, 15% test1, with at least
/// one val and one test1 speaker once there are three or more speakers.
std::vector<std::string> assign_splits(std::size_t n_speakers, std::uint64_t seed);

/// Writes wav/<speaker>/<emotion>_<k>.wav, manifest.csv, emotions.csv and
/// speakers.csv under out_dir.
CorpusResult generate_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir);

/// Stateless 64-bit mix of a seed with a stream index.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace evkit
