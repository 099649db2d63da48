// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "evkit/diff/ops.hpp"
#include "evkit/preprocess.hpp"

namespace evkit {

inline constexpr std::size_t kFeatureDim = 40;
inline constexpr std::size_t kRefDim = 128;
inline constexpr std::size_t kHeads = 8;
inline constexpr std::size_t kHeadDim = kRefDim / kHeads;
inline constexpr std::size_t kEVectorDim = 2 * kRefDim;
inline constexpr std::size_t kExtractorLayers = 6;
inline constexpr std::size_t kRefConvLayers = 6;

struct ModelConfig {
  std::size_t n_vsf = 10;
  bool operator==(const ModelConfig&) const = default;
};

struct ParamGroup {
  std::string name;
  diff::Tensor<float> value;
};

/// Learnable tensors in the fixed order given by param_layout().
struct ModelWeights {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<ParamGroup> groups;

  const diff::Tensor<float>& get(std::string_view name) const;
  diff::Tensor<float>& get(std::string_view name);
  std::vector<diff::Tensor<float>> tensors() const;
};

/// Name and shape of every parameter group for `cfg`, in storage order.
std::vector<std::pair<std::string, diff::Shape>> param_layout(const ModelConfig& cfg);

/// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) for conv and projection weights,
/// N(0, 0.3) for the style tokens, zero biases. Throws if n_vsf < 1.
ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed);

std::size_t param_count(const ModelConfig& cfg);
std::size_t param_count(const ModelWeights& w);

/// Parameters bound to one tape, in param_layout() order. Forward passes are
/// written against this view so the same code serves float training and
/// double-precision gradient checks.
template <typename T>
class Net {
 public:
  Net(std::vector<diff::Var<T>> vars, std::size_t n_vsf);

  /// Binds `w` as trainable parameters or as constants.
  static Net bind(diff::Tape<T>& tape, const ModelWeights& w, bool trainable);

  diff::Var<T> extractor_weight(std::size_t layer) const { return vars_[2 * layer]; }
  diff::Var<T> extractor_bias(std::size_t layer) const { return vars_[2 * layer + 1]; }
  diff::Var<T> ref_weight(std::size_t layer) const { return vars_[12 + 2 * layer]; }
  diff::Var<T> ref_bias(std::size_t layer) const { return vars_[12 + 2 * layer + 1]; }
  diff::GruParams<T> gru() const { return {vars_[24], vars_[25], vars_[26], vars_[27]}; }
  diff::Var<T> tokens() const { return vars_[28]; }
  diff::Var<T> query() const { return vars_[29]; }
  diff::Var<T> key() const { return vars_[30]; }
  diff::Var<T> value() const { return vars_[31]; }

  const std::vector<diff::Var<T>>& vars() const { return vars_; }
  std::size_t n_vsf() const { return n_vsf_; }

 private:
  std::vector<diff::Var<T>> vars_;
  std::size_t n_vsf_;
};

/// frame: [320 x 200], one speech unit per column. Returns [40 x 200].
template <typename T>
diff::Var<T> features(diff::Var<T> frame, const Net<T>& net);

/// feature map [40 x 200] -> reference embedding [128].
template <typename T>
diff::Var<T> reference(diff::Var<T> fm, const Net<T>& net);

template <typename T>
struct StyleOut {
  diff::Var<T> style;    // [128]
  diff::Var<T> weights;  // [8 x n_vsf]
};

template <typename T>
StyleOut<T> style(diff::Var<T> ref, const Net<T>& net);

template <typename T>
struct EVectorOut {
  diff::Var<T> evector;  // [256] = reference ++ style
  diff::Var<T> reference;
  StyleOut<T> style;
};

template <typename T>
EVectorOut<T> evector(diff::Var<T> frame, const Net<T>& net);

/// Frame samples as a [320 x 200] tensor.
template <typename T>
diff::Tensor<T> frame_tensor(const SpeechFrame& f);

// Inference entry points on plain tensors.

diff::Tensor<float> extract_features(const SpeechFrame& frame, const ModelWeights& w);
diff::Tensor<float> encode_reference(const diff::Tensor<float>& fm, const ModelWeights& w);

struct StyleEmbedding {
  diff::Tensor<float> values;   // [128]
  diff::Tensor<float> weights;  // [8 x n_vsf]
};
StyleEmbedding style_attention(const diff::Tensor<float>& ref, const ModelWeights& w);

struct EVectorResult {
  diff::Tensor<float> values;  // [256]
  diff::Tensor<float> reference;
  StyleEmbedding style;
};
EVectorResult evector(const SpeechFrame& frame, const ModelWeights& w);

}  // namespace evkit
