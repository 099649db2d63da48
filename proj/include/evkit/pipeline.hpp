// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evkit/eval.hpp"
#include "evkit/manifest.hpp"
#include "evkit/model.hpp"
#include "evkit/preprocess.hpp"

namespace evkit {

// ---------------------------------------------------------------------------
// Corpus preprocessing

struct PreprocessSummary {
  FrameIndex index;
  std::filesystem::path index_path;
  std::size_t files = 0;
  std::size_t frames = 0;
  std::size_t dropped_clips = 0;  // sub-second remainders discarded
  double vad_reference_rms = 0;
};

/// Voice-gates, segments and frames every manifest row. The VAD reference is
/// the median active frame RMS over the whole corpus unless `vad` fixes one.
/// Writes frames/<speaker>/<stem>_<clip>.evfr and frames.csv under out_dir.
PreprocessSummary preprocess_corpus(const Manifest& manifest, const std::filesystem::path& out_dir,
                                    const VadConfig& vad = {});

// ---------------------------------------------------------------------------
// Embedding store

inline constexpr std::string_view kEmbeddingIndexHeader =
    "embedding_path,speaker_id,emotion,source,valence,arousal,dominance,gender,split,clip_index";

/// EVEC record: magic "EVEC", u32 dim = 256, then dim little-endian f32.
void write_embedding(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_embedding(const std::filesystem::path& path);

struct EmbeddingRecord {
  std::string embedding_path;
  std::string speaker_id;
  std::string emotion;
  std::string source;
  double valence = 0, arousal = 0, dominance = 0;
  std::string gender;
  std::string split;
  std::size_t clip_index = 0;
};

struct EmbeddingStore {
  std::vector<EmbeddingRecord> rows;
  std::filesystem::path base_dir;

  static EmbeddingStore read(const std::filesystem::path& csv_path);
  void write(const std::filesystem::path& csv_path) const;
  std::filesystem::path resolve(const EmbeddingRecord& r) const;
};

struct EmbedSummary {
  EmbeddingStore store;
  std::filesystem::path index_path;
  double ms_per_frame = 0;
};

/// E-Vector of every indexed frame, written as embeddings/<frame stem>.evec
/// plus embeddings.csv under out_dir.
EmbedSummary embed_frames(const ModelWeights& w, const FrameIndex& frames,
                          const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Evaluation

enum class Aggregation { kUtterance, kClip };
Aggregation parse_aggregation(const std::string& name);

struct EvalConfig {
  double fraction = 1.0;
  std::uint64_t seed = 0;
  double p_target = 0.01;
  double c_miss = 10.0;
  double c_fm = 1.0;
  Aggregation aggregation = Aggregation::kUtterance;
  std::vector<std::string> splits = {"val", "test1", "test2"};
  std::size_t det_points = 101;
  std::size_t histogram_bins = 40;
};

struct ScoredItem {
  std::string speaker_id, emotion, source, gender;
  double valence = 0, arousal = 0, dominance = 0;
  std::vector<float> embedding;
};

/// Embeddings of the selected splits, one item per utterance (frames of one
/// source averaged) or per clip.
std::vector<ScoredItem> gather_items(const EmbeddingStore& store, const EvalConfig& cfg);

/// Scores a uniform sample of item pairs. Pairs of clips from one utterance
/// are never scored.
ScoreTable score_items(const std::vector<ScoredItem>& items, const EvalConfig& cfg,
                       bool* few_pairs = nullptr);

struct EvalOutputs {
  ScoreTable table;
  MetricsReport metrics;
  std::vector<DetPoint> det;
  ScoreHistograms histograms;
  std::vector<GridCell> grid;
  bool few_pairs = false;
};

EvalOutputs evaluate(const EmbeddingStore& store, const EvalConfig& cfg);

/// metrics.json, scores.csv, det.csv, histogram.csv and emotion_grid.csv.
void write_eval_outputs(const EvalOutputs& out, const std::filesystem::path& dir);

}  // namespace evkit
