// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evkit/losses.hpp"
#include "evkit/model.hpp"
#include "evkit/preprocess.hpp"

namespace evkit {

struct TrainConfig {
  std::size_t n_speakers = 8;  // per batch
  std::size_t m_frames = 4;    // per speaker
  double learning_rate = 0.01;
  std::size_t max_steps = 105000;
  std::size_t plateau_window = 20000;
  double plateau_epsilon = 0.005;
  LossKind loss = LossKind::kContrastive;
  double alpha = 0.5;
  double margin = 1.0;
  double aam_s = 30.0;
  double aam_m = 0.2;
  std::size_t n_vsf = 10;
  std::uint64_t seed = 0;
  double momentum = 0.9;
  double grad_clip = 5.0;  // global L2 norm; 0 disables

  /// Throws InvalidArgument naming the offending key.
  void validate() const;
  /// key=value lines in a fixed key order.
  std::string to_text() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Parses flat key=value text; '#' starts a comment. Unknown keys, repeated
/// keys and malformed values are errors. Missing keys keep their defaults.
TrainConfig parse_train_config(const std::string& text);
TrainConfig read_train_config(const std::filesystem::path& path);

struct TrainHistory {
  std::vector<std::size_t> steps;
  std::vector<double> losses;
  std::vector<double> wall_seconds;
  std::vector<std::size_t> checkpoint_steps;  // steps whose weights were checkpointed
  std::string stop_reason;                    // "max_steps" or "plateau"

  /// CSV with header `step,loss`.
  void write_csv(const std::filesystem::path& path) const;
};

/// Moving average of width max(1, window / 10) over `losses`; true when the
/// best average inside the last `window` steps is not below the best average
/// before that window by at least a relative `epsilon`. False until more than
/// `window` losses exist.
bool plateau_stop(std::span<const double> losses, std::size_t window, double epsilon);

/// Learning rate for a 0-based step: halved after every quarter of max_steps.
double scheduled_lr(const TrainConfig& cfg, std::size_t step);

/// One SGD-with-momentum update: buffer = momentum * buffer + grad,
/// param -= lr * buffer.
void sgd_momentum_step(std::span<float> param, std::span<float> buffer, std::span<const float> grad,
                       double lr, double momentum);

/// Scales the gradients in place so that their global L2 norm is at most
/// `max_norm`; returns the norm before clipping.
double clip_global_norm(std::vector<std::vector<float>>& grads, double max_norm);

struct BatchResult {
  double loss = 0;
  std::vector<std::vector<float>> grads;        // per parameter group
  std::vector<float> class_weight_grad;         // AAM only
};

/// Loss of one batch and its gradient with respect to every parameter group.
/// `labels` index speakers; for AAM they index rows of `class_weights`.
BatchResult batch_gradients(const ModelWeights& w, const std::vector<const SpeechFrame*>& frames,
                            const std::vector<std::size_t>& labels, const TrainConfig& cfg,
                            const diff::Tensor<float>* class_weights = nullptr);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// EVCK file: magic, u32 version, u32-length config text, u32 group count,
/// then per group u32 name length, name, u32 rank, u32 dims, f32 data, and a
/// trailing CRC32 of everything before it. Little-endian.
void save_checkpoint(const std::filesystem::path& path, const ModelWeights& w, const TrainConfig& cfg);

struct Checkpoint {
  ModelWeights weights;
  TrainConfig config;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Also checks every group against the layout of `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_path;
  std::optional<std::filesystem::path> history_path;
  /// Called after every step with (step, loss).
  std::function<void(std::size_t, double)> on_step;
  /// Replaces the computed batch loss; test hook for stopping rules.
  std::function<double(std::size_t, double)> loss_override;
  /// Start from these weights instead of init_weights(cfg).
  std::optional<ModelWeights> initial;
};

struct TrainResult {
  ModelWeights final_weights;
  ModelWeights best_weights;
  TrainHistory history;
};

/// Trains on the train-split rows of `index`. On a non-finite loss the best
/// checkpoint so far stays on disk and NumericError is thrown.
TrainResult train(const TrainConfig& cfg, const FrameIndex& index, const TrainOptions& opts = {});

}  // namespace evkit
