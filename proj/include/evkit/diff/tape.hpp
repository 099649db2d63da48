// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evkit/diff/tensor.hpp"

namespace evkit::diff {

template <typename T>
class Tape;

/// Branch choices of piecewise ops (the sign side of SELU and ReLU, the
/// winning entry of masked min/max), one record per op call in tape order.
/// A recording pass fills it; a replaying pass evaluates every piecewise op on
/// the recorded branch, which extends each piece smoothly past its kink.
struct BranchLog {
  std::vector<std::vector<std::uint32_t>> records;
  std::size_t cursor = 0;
  bool replay = false;

  /// Stores `choices` when recording; returns the next record when replaying.
  const std::vector<std::uint32_t>& visit(std::vector<std::uint32_t> choices, std::size_t expected);
};

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// tape is alive.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order of the graph, so backward walks the node list in
/// reverse and visits every reachable node exactly once.
///
/// A node requires a gradient iff one of its inputs does; nodes that do not
/// keep no backward closure, so a tape built only from constants is a plain
/// inference pass.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, {}, "constant"); }
  Var<T> parameter(Tensor<T> v) { return push(std::move(v), true, {}, "parameter"); }

  /// Appends an op result. `fn` is kept only if some input requires a
  /// gradient. Throws NumericError if the value holds NaN or Inf.
  Var<T> record(Tensor<T> v, std::initializer_list<Var<T>> inputs,
                const char* op, BackwardFn fn) {
    bool rg = false;
    for (const auto& in : inputs) rg = rg || nodes_[in.id].requires_grad;
    return push(std::move(v), rg, rg ? std::move(fn) : BackwardFn{}, op);
  }
  Var<T> record(Tensor<T> v, const std::vector<Var<T>>& inputs, const char* op,
                BackwardFn fn) {
    bool rg = false;
    for (const auto& in : inputs) rg = rg || nodes_[in.id].requires_grad;
    return push(std::move(v), rg, rg ? std::move(fn) : BackwardFn{}, op);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool requires_grad(Var<T> v) const { return requires_grad(v.id); }

  /// Gradient accumulator for node `id`, zero-initialized on first use.
  std::vector<T>& grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), T{0});
    return n.grad;
  }

  /// Gradient of the last backward target with respect to `v`; zeros if the
  /// node was never reached.
  Tensor<T> gradient(Var<T> v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor<T>(n.value.shape);
    return Tensor<T>(n.value.shape, n.grad);
  }

  void backward(Var<T> loss) {
    if (nodes_.at(loss.id).value.size() != 1) {
      throw InvalidArgument("backward needs a scalar loss, got shape " +
                            shape_str(nodes_[loss.id].value.shape));
    }
    const T one{1};
    backward(loss, std::span<const T>(&one, 1));
  }

  /// Backpropagates a given output cotangent. Equivalent to backward on the
  /// scalar dot(out, seed) with seed held constant.
  void backward(Var<T> out, std::span<const T> seed) {
    if (seed.size() != nodes_.at(out.id).value.size()) {
      throw InvalidArgument("backward seed length mismatch");
    }
    if (backward_done_) throw InvalidArgument("backward already ran on this tape");
    backward_done_ = true;
    auto& g = grad_buffer(out.id);
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
    for (std::size_t id = out.id + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (n.backward && !n.grad.empty()) {
        n.backward(*this, id);
        if (release_ && id != out.id) {
          n.grad = {};
          n.value.data = {};
        }
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

  /// When set, backward frees the value and gradient of every intermediate
  /// node once its closure has run. Leaves and the backward target are kept.
  void set_release_intermediates(bool on) { release_ = on; }

  /// Attaches a branch log (or detaches with nullptr); not owned.
  void set_branch_log(BranchLog* log) { branches_ = log; }
  BranchLog* branch_log() const { return branches_; }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> v, bool rg, BackwardFn fn, const char* op) {
    // x - x is NaN exactly when x is NaN or infinite
    T lanes[8] = {};
    const std::size_t n = v.data.size();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
      for (std::size_t j = 0; j < 8; ++j) lanes[j] += v.data[i + j] - v.data[i + j];
    for (; i < n; ++i) lanes[0] += v.data[i] - v.data[i];
    T probe{0};
    for (const T l : lanes) probe += l;
    if (probe != T{0}) throw NumericError(std::string("non-finite value produced by ") + op);
    nodes_.push_back(Node{std::move(v), {}, rg, std::move(fn)});
    return Var<T>{this, nodes_.size() - 1};
  }

  // deque: node references stay valid while new nodes are appended
  std::deque<Node> nodes_;
  bool backward_done_ = false;
  bool release_ = false;
  BranchLog* branches_ = nullptr;
};

inline const std::vector<std::uint32_t>& BranchLog::visit(std::vector<std::uint32_t> choices,
                                                          std::size_t expected) {
  if (!replay) {
    records.push_back(std::move(choices));
    return records.back();
  }
  if (cursor >= records.size() || records[cursor].size() != expected) {
    throw InvalidArgument("branch log replay does not match the recorded op sequence");
  }
  return records[cursor++];
}

}  // namespace evkit::diff
