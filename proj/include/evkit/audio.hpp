// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evkit {

inline constexpr int kSampleRate = 16000;

/// The fixed discrete-emotion registry. Order defines the emotion index.
inline constexpr std::array<std::string_view, 10> kEmotions = {
    "neutral", "happy", "angry", "sad", "fear",
    "disgust", "surprise", "contempt", "calm", "excited"};

std::optional<std::size_t> emotion_index(std::string_view label);

struct ManifestRow;

/// Mono 16 kHz waveform in [-1, 1] with its labels.
struct AudioSample {
  std::vector<float> waveform;
  int sample_rate = kSampleRate;
  std::string speaker_id;
  std::string emotion = "neutral";
  double valence = 0.0;
  double arousal = 0.0;
  double dominance = 0.0;
  std::string gender;
  std::string source_path;

  double duration_s() const {
    return static_cast<double>(waveform.size()) / static_cast<double>(sample_rate);
  }

  /// Throws InvalidArgument naming the first broken invariant.
  void validate() const;
};

/// Reads a RIFF/WAVE PCM 16-bit mono 16 kHz file; samples are divided by
/// 32768.
AudioSample load_wav(const std::filesystem::path& path);
/// Same, with labels copied from a manifest row.
AudioSample load_wav(const std::filesystem::path& path, const ManifestRow& row);

/// Writes PCM 16-bit mono. Samples are clamped to [-1, 1] and rounded from
/// x * 32768.
void write_wav(const std::filesystem::path& path, std::span<const float> samples,
               int sample_rate = kSampleRate);

}  // namespace evkit
