// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include "evkit/model.hpp"

#include <array>
#include <cmath>
#include <random>

#include "evkit/error.hpp"

namespace evkit {

namespace {

using diff::Shape;
using diff::Tape;
using diff::Tensor;
using diff::Var;

constexpr std::array<std::size_t, kExtractorLayers + 1> kExtractorChannels = {1, 16, 16, 32,
                                                                              32, 40, 40};
constexpr std::array<std::size_t, kExtractorLayers> kDilations = {1, 2, 4, 8, 16, 32};
constexpr std::size_t kExtractorKernel = 5;
constexpr std::array<std::size_t, kRefConvLayers + 1> kRefChannels = {1, 32, 32, 64,
                                                                      64, 128, 128};
constexpr std::size_t kRefKernel = 3;
constexpr std::size_t kGroupCount = 32;
constexpr float kTokenStddev = 0.3f;

// Fan-in of a weight tensor, or 0 for tensors that are not uniform-initialized.
std::size_t fan_in(const std::string& name, const Shape& shape) {
  if (name.ends_with(".bias") || name.starts_with("gru.b_") || name == "vsf.tokens") return 0;
  if (name.starts_with("extractor.") || name.starts_with("reference.")) {
    std::size_t f = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) f *= shape[i];
    return f;
  }
  if (name.starts_with("gru.w_")) return shape[2];
  return shape[1];  // attention projections [heads x 128 x 16]
}

}  // namespace

std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> out;
  for (std::size_t l = 0; l < kExtractorLayers; ++l) {
    const std::string p = "extractor.conv" + std::to_string(l);
    out.push_back({p + ".weight",
                   {kExtractorChannels[l + 1], kExtractorChannels[l], kExtractorKernel}});
    out.push_back({p + ".bias", {kExtractorChannels[l + 1]}});
  }
  for (std::size_t l = 0; l < kRefConvLayers; ++l) {
    const std::string p = "reference.conv" + std::to_string(l);
    out.push_back({p + ".weight", {kRefChannels[l + 1], kRefChannels[l], kRefKernel, kRefKernel}});
    out.push_back({p + ".bias", {kRefChannels[l + 1]}});
  }
  out.push_back({"gru.w_ih", {3, kRefDim, kRefChannels.back()}});
  out.push_back({"gru.w_hh", {3, kRefDim, kRefDim}});
  out.push_back({"gru.b_ih", {3, kRefDim}});
  out.push_back({"gru.b_hh", {3, kRefDim}});
  out.push_back({"vsf.tokens", {cfg.n_vsf, kRefDim}});
  out.push_back({"attention.query", {kHeads, kRefDim, kHeadDim}});
  out.push_back({"attention.key", {kHeads, kRefDim, kHeadDim}});
  out.push_back({"attention.value", {kHeads, kRefDim, kHeadDim}});
  return out;
}

const Tensor<float>& ModelWeights::get(std::string_view name) const {
  for (const auto& g : groups)
    if (g.name == name) return g.value;
  throw InvalidArgument("no parameter group named '" + std::string(name) + "'");
}

Tensor<float>& ModelWeights::get(std::string_view name) {
  return const_cast<Tensor<float>&>(std::as_const(*this).get(name));
}

std::vector<Tensor<float>> ModelWeights::tensors() const {
  std::vector<Tensor<float>> out;
  out.reserve(groups.size());
  for (const auto& g : groups) out.push_back(g.value);
  return out;
}

ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.n_vsf < 1) throw InvalidArgument("n_vsf must be >= 1");
  ModelWeights w;
  w.config = cfg;
  w.seed = seed;
  std::mt19937_64 rng(seed);
  for (auto& [name, shape] : param_layout(cfg)) {
    Tensor<float> t(shape);
    if (name == "vsf.tokens") {
      std::normal_distribution<float> normal(0.0f, kTokenStddev);
      for (auto& v : t.data) v = normal(rng);
    } else if (const std::size_t f = fan_in(name, shape); f > 0) {
      const float bound = static_cast<float>(std::sqrt(1.0 / static_cast<double>(f)));
      std::uniform_real_distribution<float> uni(-bound, bound);
      for (auto& v : t.data) v = uni(rng);
    }
    w.groups.push_back({name, std::move(t)});
  }
  return w;
}

std::size_t param_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [name, shape] : param_layout(cfg)) n += diff::numel(shape);
  return n;
}

std::size_t param_count(const ModelWeights& w) {
  std::size_t n = 0;
  for (const auto& g : w.groups) n += g.value.size();
  return n;
}

template <typename T>
Net<T>::Net(std::vector<Var<T>> vars, std::size_t n_vsf) : vars_(std::move(vars)), n_vsf_(n_vsf) {
  if (vars_.size() != kGroupCount) {
    throw InvalidArgument("Net: expected " + std::to_string(kGroupCount) + " parameter groups, got " +
                          std::to_string(vars_.size()));
  }
  const auto layout = param_layout(ModelConfig{n_vsf});
  for (std::size_t i = 0; i < kGroupCount; ++i) {
    if (vars_[i].shape() != layout[i].second) {
      throw InvalidArgument("parameter " + layout[i].first + " has shape " +
                            diff::shape_str(vars_[i].shape()) + ", expected " +
                            diff::shape_str(layout[i].second));
    }
  }
}

template <typename T>
Net<T> Net<T>::bind(Tape<T>& tape, const ModelWeights& w, bool trainable) {
  std::vector<Var<T>> vars;
  vars.reserve(w.groups.size());
  for (const auto& g : w.groups) {
    Tensor<T> t = g.value.template cast<T>();
    vars.push_back(trainable ? tape.parameter(std::move(t)) : tape.constant(std::move(t)));
  }
  return Net<T>(std::move(vars), w.config.n_vsf);
}

template <typename T>
Var<T> features(Var<T> frame, const Net<T>& net) {
  if (frame.shape() != Shape{kUnitLength, kFrameUnits}) {
    throw InvalidArgument("features: frame must be [320 x 200], got " +
                          diff::shape_str(frame.shape()));
  }
  // Units are independent sequences of the batched convolution layout.
  Var<T> x = diff::reshape(frame, {1, kUnitLength, kFrameUnits});
  for (std::size_t l = 0; l < kExtractorLayers; ++l) {
    x = diff::conv1d_dilated(x, net.extractor_weight(l), net.extractor_bias(l), kDilations[l],
                             kDilations[l] * (kExtractorKernel - 1) / 2);
    x = diff::selu(x);
  }
  return diff::mean(x, 1);
}

template <typename T>
Var<T> reference(Var<T> fm, const Net<T>& net) {
  if (fm.shape() != Shape{kFeatureDim, kFrameUnits}) {
    throw InvalidArgument("reference: feature map must be [40 x 200], got " +
                          diff::shape_str(fm.shape()));
  }
  Var<T> x = diff::reshape(fm, {1, kFeatureDim, kFrameUnits});
  for (std::size_t l = 0; l < kRefConvLayers; ++l)
    x = diff::selu(diff::conv2d(x, net.ref_weight(l), net.ref_bias(l), 2, 1));
  // [128 x freq x time] -> sequence over time of 128-d vectors
  const Var<T> seq = diff::transpose(diff::mean(x, 1));
  Tape<T>& tape = *fm.tape;
  const Var<T> h0 = tape.constant(Tensor<T>({kRefDim}));
  return diff::gru_forward(seq, net.gru(), h0);
}

template <typename T>
StyleOut<T> style(Var<T> ref, const Net<T>& net) {
  if (ref.shape() != Shape{kRefDim}) {
    throw InvalidArgument("style: reference must be [128], got " + diff::shape_str(ref.shape()));
  }
  const T inv_sqrt_dim = T{1} / std::sqrt(static_cast<T>(kHeadDim));
  const Var<T> ref_row = diff::reshape(ref, {1, kRefDim});
  std::vector<Var<T>> heads, weights;
  for (std::size_t h = 0; h < kHeads; ++h) {
    const Var<T> q = diff::reshape(diff::matmul(ref_row, diff::select(net.query(), h)), {kHeadDim});
    const Var<T> k = diff::matmul(net.tokens(), diff::select(net.key(), h));    // [n x 16]
    const Var<T> v = diff::matmul(net.tokens(), diff::select(net.value(), h));  // [n x 16]
    const Var<T> alpha = diff::softmax(diff::scale(diff::matvec(k, q), inv_sqrt_dim));
    heads.push_back(diff::matvec(diff::transpose(v), alpha));
    weights.push_back(diff::reshape(alpha, {1, net.n_vsf()}));
  }
  return {diff::concat(heads), diff::concat(weights)};
}

template <typename T>
EVectorOut<T> evector(Var<T> frame, const Net<T>& net) {
  const Var<T> ref = reference(features(frame, net), net);
  StyleOut<T> s = style(ref, net);
  return {diff::concat(std::vector<Var<T>>{ref, s.style}), ref, s};
}

template <typename T>
Tensor<T> frame_tensor(const SpeechFrame& f) {
  Tensor<T> t({kUnitLength, kFrameUnits});
  for (std::size_t c = 0; c < kFrameUnits; ++c)
    for (std::size_t r = 0; r < kUnitLength; ++r)
      t[r * kFrameUnits + c] = static_cast<T>(f.data[c * kUnitLength + r]);
  return t;
}

#define EVKIT_INSTANTIATE_MODEL(T)                                  \
  template class Net<T>;                                            \
  template Var<T> features(Var<T>, const Net<T>&);                  \
  template Var<T> reference(Var<T>, const Net<T>&);                 \
  template StyleOut<T> style(Var<T>, const Net<T>&);                \
  template EVectorOut<T> evector(Var<T>, const Net<T>&);            \
  template Tensor<T> frame_tensor(const SpeechFrame&);

EVKIT_INSTANTIATE_MODEL(float)
EVKIT_INSTANTIATE_MODEL(double)

Tensor<float> extract_features(const SpeechFrame& frame, const ModelWeights& w) {
  Tape<float> tape;
  const auto net = Net<float>::bind(tape, w, false);
  return features(tape.constant(frame_tensor<float>(frame)), net).value();
}

Tensor<float> encode_reference(const Tensor<float>& fm, const ModelWeights& w) {
  Tape<float> tape;
  const auto net = Net<float>::bind(tape, w, false);
  return reference(tape.constant(fm), net).value();
}

StyleEmbedding style_attention(const Tensor<float>& ref, const ModelWeights& w) {
  Tape<float> tape;
  const auto net = Net<float>::bind(tape, w, false);
  const auto s = style(tape.constant(ref), net);
  return {s.style.value(), s.weights.value()};
}

EVectorResult evector(const SpeechFrame& frame, const ModelWeights& w) {
  Tape<float> tape;
  const auto net = Net<float>::bind(tape, w, false);
  const auto out = evector(tape.constant(frame_tensor<float>(frame)), net);
  return {out.evector.value(), out.reference.value(),
          {out.style.style.value(), out.style.weights.value()}};
}

}  // namespace evkit
