// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "evkit/audio.hpp"

namespace evkit {

inline constexpr std::size_t kUnitLength = 320;   // 20 ms at 16 kHz
inline constexpr std::size_t kUnitStride = 160;   // 10 ms
inline constexpr std::size_t kFrameUnits = 200;
inline constexpr std::size_t kClipSamples = 32000;  // 2 s
inline constexpr std::size_t kPaddedClipSamples = kClipSamples + kUnitStride;
inline constexpr std::size_t kMinTailSamples = 16000;  // 1 s

// ---------------------------------------------------------------------------
// Voice activity

/// Frame-energy gate. A 20 ms frame (10 ms hop) is voiced when its RMS is at
/// least threshold * reference. The reference is `reference_rms` when set,
/// otherwise the median RMS over frames above `min_rms`. Voiced runs closer
/// than `merge_gap_ms` are merged.
struct VadConfig {
  double threshold = 0.5;
  double merge_gap_ms = 100.0;
  double min_rms = 1e-4;
  std::optional<double> reference_rms;
};

/// Half-open sample range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

/// RMS of each 320-sample frame at hop 160. A signal shorter than one frame
/// yields a single frame over the whole signal.
std::vector<double> frame_rms(std::span<const float> waveform);

/// Median of the frame RMS values above `min_rms`; 0 when there are none.
double median_active_rms(std::span<const double> rms, double min_rms);

std::vector<Span> detect_voice(const AudioSample& sample, const VadConfig& cfg = {});

/// Concatenation of the spans of `waveform`.
std::vector<float> gather_voiced(std::span<const float> waveform, std::span<const Span> spans);

// ---------------------------------------------------------------------------
// Segmentation and framing

struct Segmentation {
  std::vector<std::vector<float>> clips;  // each kClipSamples long
  bool dropped_tail = false;
};

/// Splits voiced audio into consecutive 2 s clips. A final remainder of at
/// least 1 s is zero-padded to 2 s; a shorter one is dropped.
Segmentation segment(std::span<const float> voiced);

/// Symmetric Hamming window 0.54 - 0.46 cos(2 pi n / (N - 1)).
std::vector<float> hamming_window(std::size_t n = kUnitLength);

/// 320 x 200 stack of Hamming-windowed speech units, stored column-major:
/// column u holds samples [160 u, 160 u + 320) of the clip padded with 160
/// zeros.
struct SpeechFrame {
  static constexpr std::size_t kRows = kUnitLength;
  static constexpr std::size_t kCols = kFrameUnits;

  std::vector<float> data = std::vector<float>(kRows * kCols, 0.0f);
  std::string source_path;
  std::size_t clip_index = 0;
  std::string speaker_id;

  float at(std::size_t row, std::size_t col) const { return data[col * kRows + row]; }
  std::span<const float> unit(std::size_t col) const {
    return std::span<const float>(data).subspan(col * kRows, kRows);
  }
};

/// Frames a 32000-sample clip; throws InvalidArgument on any other length.
SpeechFrame frame(std::span<const float> clip);

/// EVFR record: magic "EVFR", u32 rows = 320, u32 cols = 200, then 64000
/// little-endian f32 in column-major order.
void write_frame(const std::filesystem::path& path, const SpeechFrame& f);
SpeechFrame read_frame(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Frame index

inline constexpr std::string_view kFrameIndexHeader =
    "frame_path,speaker_id,emotion,clip_index,source_path,split,valence,arousal,dominance,gender";

/// One row of the frame sidecar. The first four columns are the fixed
/// contract; the rest carry the source row's metadata into training and
/// evaluation.
struct FrameRecord {
  std::string frame_path;
  std::string speaker_id;
  std::string emotion;
  std::size_t clip_index = 0;
  std::string source_path;
  std::string split;
  double valence = 0.0;
  double arousal = 0.0;
  double dominance = 0.0;
  std::string gender;
};

struct FrameIndex {
  std::vector<FrameRecord> rows;
  std::filesystem::path base_dir;

  static FrameIndex read(const std::filesystem::path& csv_path);
  void write(const std::filesystem::path& csv_path) const;
  std::filesystem::path resolve(const FrameRecord& r) const;
};

// ---------------------------------------------------------------------------
// Batches and triplets

/// Positions into Batch::frames.
struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
};

/// Speaker-balanced batch: `n_speakers` groups of `m_frames` consecutive
/// entries. `frames` are indices into the pool handed to sample_batch.
struct Batch {
  std::size_t n_speakers = 0;
  std::size_t m_frames = 0;
  std::vector<std::size_t> frames;
  std::vector<std::string> labels;  // speaker id per entry

  /// Every (anchor, positive, negative) with anchor and positive from the
  /// same speaker (distinct entries) and negative from another speaker.
  std::vector<Triplet> triplets() const;
};

/// Draws n_speakers distinct speakers from the train split of `pool`, then
/// m_frames distinct frames of each. Throws InvalidArgument naming a
/// deficient speaker when fewer than n_speakers have m_frames frames.
Batch sample_batch(const std::vector<FrameRecord>& pool, std::size_t n_speakers,
                   std::size_t m_frames, std::mt19937_64& rng);
Batch sample_batch(const std::vector<FrameRecord>& pool, std::size_t n_speakers,
                   std::size_t m_frames, std::uint64_t seed);

}  // namespace evkit
