// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include "evkit/diff/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace evkit::diff {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " +
                          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(Var<T> a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw InvalidArgument(std::string(op) + ": expected rank " +
                          std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

// Elementwise unary op; `deriv(x, y)` is dy/dx given input x and output y.
template <typename T, typename F, typename D>
Var<T> unary(Var<T> a, const char* name, F f, D deriv) {
  const auto& av = a.value();
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t aid = a.id;
  return a.tape->record(
      std::move(out), {a}, name, [aid, deriv](Tape<T>& t, std::size_t self) {
        if (!t.requires_grad(aid)) return;
        const auto& g = t.grad_buffer(self);
        auto& ga = t.grad_buffer(aid);
        const auto& x = t.value(aid).data;
        const auto& y = t.value(self).data;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
      });
}

// Adds `g` into the gradient of `id` when that node needs one.
template <typename T>
void accumulate(Tape<T>& t, std::size_t id, const std::vector<T>& g) {
  if (!t.requires_grad(id)) return;
  auto& dst = t.grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const auto& x = a.value().data;
  const auto& y = b.value().data;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  const std::size_t aid = a.id, bid = b.id;
  return a.tape->record(std::move(out), {a, b}, "add",
                        [aid, bid](Tape<T>& t, std::size_t self) {
                          const auto g = t.grad_buffer(self);
                          accumulate(t, aid, g);
                          accumulate(t, bid, g);
                        });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const auto& x = a.value().data;
  const auto& y = b.value().data;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  const std::size_t aid = a.id, bid = b.id;
  return a.tape->record(std::move(out), {a, b}, "sub",
                        [aid, bid](Tape<T>& t, std::size_t self) {
                          auto g = t.grad_buffer(self);
                          accumulate(t, aid, g);
                          for (auto& v : g) v = -v;
                          accumulate(t, bid, g);
                        });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const auto& x = a.value().data;
  const auto& y = b.value().data;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  const std::size_t aid = a.id, bid = b.id;
  return a.tape->record(
      std::move(out), {a, b}, "mul", [aid, bid](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        const auto& x = t.value(aid).data;
        const auto& y = t.value(bid).data;
        if (t.requires_grad(aid)) {
          auto& ga = t.grad_buffer(aid);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (t.requires_grad(bid)) {
          auto& gb = t.grad_buffer(bid);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
        }
      });
}

template <typename T>
Var<T> affine(Var<T> a, T s, T shift) {
  return unary(
      a, "affine", [s, shift](T x) { return s * x + shift; },
      [s](T, T) { return s; });
}

namespace {

// Positive-side flag per element, or the recorded flags on replay.
template <typename T>
const std::vector<std::uint32_t>& sign_branches(BranchLog& log, const Tensor<T>& x) {
  std::vector<std::uint32_t> pos;
  if (!log.replay) {
    pos.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) pos[i] = x[i] > T{0};
  }
  return log.visit(std::move(pos), x.size());
}

}  // namespace

template <typename T>
Var<T> selu(Var<T> a) {
  constexpr T lambda = static_cast<T>(kSeluLambda);
  constexpr T la = static_cast<T>(kSeluLambda * kSeluAlpha);
  const auto& av = a.value();
  Tensor<T> out(av.shape);
  std::vector<std::uint32_t> pos;
  if (BranchLog* log = a.tape->branch_log()) {
    pos = sign_branches(*log, av);
    for (std::size_t i = 0; i < av.size(); ++i)
      out[i] = pos[i] ? lambda * av[i] : la * (std::exp(av[i]) - T{1});
  } else {
    // la * (exp(min(x, 0)) - 1) + lambda * max(x, 0) is SELU on both branches.
    // Blocks go through an aligned buffer so every element takes the same
    // vectorized path whatever the address of the tensor data.
    constexpr Eigen::Index kBlock = 256;
    Eigen::Array<T, kBlock, 1> buf;
    for (std::size_t start = 0; start < av.size(); start += kBlock) {
      const std::size_t n = std::min<std::size_t>(kBlock, av.size() - start);
      buf.setZero();
      std::copy_n(av.data.begin() + static_cast<std::ptrdiff_t>(start), n, buf.data());
      buf = la * (buf.min(T{0}).exp() - T{1}) + lambda * buf.max(T{0});
      std::copy_n(buf.data(), n, out.data.begin() + static_cast<std::ptrdiff_t>(start));
    }
  }
  const std::size_t aid = a.id;
  return a.tape->record(std::move(out), {a}, "selu",
                        [aid, lambda, la, pos = std::move(pos)](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(aid)) return;
    const auto& xv = t.value(aid).data;
    const auto& y = t.value(self).data;
    const auto& g = t.grad_buffer(self);
    auto& ga = t.grad_buffer(aid);
    if (!pos.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (pos[i] ? lambda : y[i] + la);
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (xv[i] > T{0} ? lambda : y[i] + la);
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary(
      a, "sigmoid",
      [](T x) {
        if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
        const T e = std::exp(x);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return unary(
      a, "tanh", [](T x) { return std::tanh(x); },
      [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> relu(Var<T> a) {
  BranchLog* log = a.tape->branch_log();
  if (!log) {
    return unary(
        a, "relu", [](T x) { return x > T{0} ? x : T{0}; },
        [](T x, T) { return x > T{0} ? T{1} : T{0}; });
  }
  const auto& av = a.value();
  std::vector<std::uint32_t> pos = sign_branches(*log, av);
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = pos[i] ? av[i] : T{0};
  const std::size_t aid = a.id;
  return a.tape->record(std::move(out), {a}, "relu",
                        [aid, pos = std::move(pos)](Tape<T>& t, std::size_t self) {
                          if (!t.requires_grad(aid)) return;
                          const auto& g = t.grad_buffer(self);
                          auto& ga = t.grad_buffer(aid);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            if (pos[i]) ga[i] += g[i];
                        });
}

template <typename T>
Var<T> sqrt(Var<T> a) {
  for (const T x : a.value().data) {
    if (x < T{0}) throw InvalidArgument("sqrt: negative input");
  }
  return unary(
      a, "sqrt", [](T x) { return std::sqrt(x); },
      [](T, T y) { return y > T{0} ? T{0.5} / y : T{0}; });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw InvalidArgument("matmul: inner dims " + shape_str(a.shape()) + " @ " +
                          shape_str(b.shape()));
  }
  Tensor<T> out({m, n});
  MapR<T>(out.data.data(), m, n).noalias() =
      CMapR<T>(a.value().data.data(), m, k) * CMapR<T>(b.value().data.data(), k, n);
  const std::size_t aid = a.id, bid = b.id;
  return a.tape->record(
      std::move(out), {a, b}, "matmul",
      [aid, bid, m, k, n](Tape<T>& t, std::size_t self) {
        CMapR<T> g(t.grad_buffer(self).data(), m, n);
        if (t.requires_grad(aid)) {
          MapR<T>(t.grad_buffer(aid).data(), m, k).noalias() +=
              g * CMapR<T>(t.value(bid).data.data(), k, n).transpose();
        }
        if (t.requires_grad(bid)) {
          MapR<T>(t.grad_buffer(bid).data(), k, n).noalias() +=
              CMapR<T>(t.value(aid).data.data(), m, k).transpose() * g;
        }
      });
}

template <typename T>
Var<T> matvec(Var<T> a, Var<T> x) {
  require_rank(a, 2, "matvec");
  require_rank(x, 1, "matvec");
  const std::size_t n = x.shape()[0];
  if (a.shape()[1] != n) {
    throw InvalidArgument("matvec: " + shape_str(a.shape()) + " @ " +
                          shape_str(x.shape()));
  }
  return reshape(matmul(a, reshape(x, {n, 1})), {a.shape()[0]});
}

template <typename T>
Var<T> transpose(Var<T> a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor<T> out({n, m});
  MapR<T>(out.data.data(), n, m) = CMapR<T>(a.value().data.data(), m, n).transpose();
  const std::size_t aid = a.id;
  return a.tape->record(std::move(out), {a}, "transpose",
                        [aid, m, n](Tape<T>& t, std::size_t self) {
                          if (!t.requires_grad(aid)) return;
                          MapR<T>(t.grad_buffer(aid).data(), m, n) +=
                              CMapR<T>(t.grad_buffer(self).data(), n, m).transpose();
                        });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw InvalidArgument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                          shape_str(shape));
  }
  Tensor<T> out(std::move(shape), a.value().data);
  const std::size_t aid = a.id;
  return a.tape->record(std::move(out), {a}, "reshape",
                        [aid](Tape<T>& t, std::size_t self) {
                          accumulate(t, aid, t.grad_buffer(self));
                        });
}

template <typename T>
Var<T> select(Var<T> a, std::size_t i) {
  if (a.shape().empty() || i >= a.shape()[0]) {
    throw InvalidArgument("select: index " + std::to_string(i) + " out of " +
                          shape_str(a.shape()));
  }
  Shape rest(a.shape().begin() + 1, a.shape().end());
  const std::size_t inner = numel(rest);
  const auto& src = a.value().data;
  Tensor<T> out(std::move(rest));
  std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * inner), inner,
              out.data.begin());
  const std::size_t aid = a.id;
  return a.tape->record(std::move(out), {a}, "select",
                        [aid, i, inner](Tape<T>& t, std::size_t self) {
                          if (!t.requires_grad(aid)) return;
                          const auto& g = t.grad_buffer(self);
                          auto& ga = t.grad_buffer(aid);
                          for (std::size_t j = 0; j < inner; ++j) ga[i * inner + j] += g[j];
                        });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw InvalidArgument("concat: no inputs");
  Shape shape = parts[0].shape();
  if (shape.empty()) throw InvalidArgument("concat: scalar input");
  const Shape tail(shape.begin() + 1, shape.end());
  std::size_t rows = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.empty() || Shape(s.begin() + 1, s.end()) != tail) {
      throw InvalidArgument("concat: incompatible shape " + shape_str(s));
    }
    rows += s[0];
  }
  shape[0] = rows;
  Tensor<T> out(shape);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(off));
    ids.push_back(p.id);
    offsets.push_back(off);
    off += p.size();
  }
  return parts[0].tape->record(
      std::move(out), parts, "concat", [ids, offsets](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (!t.requires_grad(ids[p])) continue;
          auto& gp = t.grad_buffer(ids[p]);
          for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += g[offsets[p] + j];
        }
      });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T s{0};
  for (const T x : a.value().data) s += x;
  const std::size_t aid = a.id;
  return a.tape->record(Tensor<T>::scalar(s), {a}, "sum",
                        [aid](Tape<T>& t, std::size_t self) {
                          if (!t.requires_grad(aid)) return;
                          const T g = t.grad_buffer(self)[0];
                          for (auto& v : t.grad_buffer(aid)) v += g;
                        });
}

template <typename T>
Var<T> mean(Var<T> a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw InvalidArgument("mean: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape os = s;
  os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out(os);
  const auto& x = a.value().data;
  const T inv = T{1} / static_cast<T>(n);
  for (std::size_t o = 0; o < outer; ++o) {
    T* dst = out.data.data() + o * inner;
    for (std::size_t k = 0; k < n; ++k) {
      const T* src = x.data() + (o * n + k) * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < inner; ++i) dst[i] *= inv;
  }
  const std::size_t aid = a.id;
  return a.tape->record(std::move(out), {a}, "mean",
                        [aid, outer, inner, n, inv](Tape<T>& t, std::size_t self) {
                          if (!t.requires_grad(aid)) return;
                          const auto& g = t.grad_buffer(self);
                          auto& ga = t.grad_buffer(aid);
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t k = 0; k < n; ++k)
                              for (std::size_t i = 0; i < inner; ++i)
                                ga[(o * n + k) * inner + i] += g[o * inner + i] * inv;
                        });
}

namespace {

template <typename T>
std::size_t last_dim(Var<T> a, const char* op) {
  if (a.shape().empty() || a.shape().back() == 0) {
    throw InvalidArgument(std::string(op) + ": needs a non-empty last axis");
  }
  return a.shape().back();
}

}  // namespace

template <typename T>
Var<T> softmax(Var<T> a) {
  const std::size_t n = last_dim(a, "softmax");
  const std::size_t rows = a.size() / n;
  const auto& x = a.value().data;
  Tensor<T> out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * n;
    T* yr = out.data.data() + r * n;
    const T mx = *std::max_element(xr, xr + n);
    T z{0};
    for (std::size_t i = 0; i < n; ++i) z += (yr[i] = std::exp(xr[i] - mx));
    for (std::size_t i = 0; i < n; ++i) yr[i] /= z;
  }
  const std::size_t aid = a.id;
  return a.tape->record(std::move(out), {a}, "softmax",
                        [aid, rows, n](Tape<T>& t, std::size_t self) {
                          if (!t.requires_grad(aid)) return;
                          const auto& g = t.grad_buffer(self);
                          const auto& y = t.value(self).data;
                          auto& ga = t.grad_buffer(aid);
                          for (std::size_t r = 0; r < rows; ++r) {
                            T dot{0};
                            for (std::size_t i = 0; i < n; ++i) dot += g[r * n + i] * y[r * n + i];
                            for (std::size_t i = 0; i < n; ++i)
                              ga[r * n + i] += y[r * n + i] * (g[r * n + i] - dot);
                          }
                        });
}

template <typename T>
Var<T> log_softmax(Var<T> a) {
  const std::size_t n = last_dim(a, "log_softmax");
  const std::size_t rows = a.size() / n;
  const auto& x = a.value().data;
  Tensor<T> out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * n;
    const T mx = *std::max_element(xr, xr + n);
    T z{0};
    for (std::size_t i = 0; i < n; ++i) z += std::exp(xr[i] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = xr[i] - lse;
  }
  const std::size_t aid = a.id;
  return a.tape->record(std::move(out), {a}, "log_softmax",
                        [aid, rows, n](Tape<T>& t, std::size_t self) {
                          if (!t.requires_grad(aid)) return;
                          const auto& g = t.grad_buffer(self);
                          const auto& y = t.value(self).data;
                          auto& ga = t.grad_buffer(aid);
                          for (std::size_t r = 0; r < rows; ++r) {
                            T gs{0};
                            for (std::size_t i = 0; i < n; ++i) gs += g[r * n + i];
                            for (std::size_t i = 0; i < n; ++i)
                              ga[r * n + i] += g[r * n + i] - std::exp(y[r * n + i]) * gs;
                          }
                        });
}

template <typename T>
Var<T> l2_normalize(Var<T> a) {
  const std::size_t n = last_dim(a, "l2_normalize");
  const std::size_t rows = a.size() / n;
  constexpr T kFloor = static_cast<T>(1e-12);
  const auto& x = a.value().data;
  Tensor<T> out(a.shape());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T ss{0};
    for (std::size_t i = 0; i < n; ++i) ss += x[r * n + i] * x[r * n + i];
    norms[r] = std::max(std::sqrt(ss), kFloor);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = x[r * n + i] / norms[r];
  }
  const std::size_t aid = a.id;
  return a.tape->record(
      std::move(out), {a}, "l2_normalize",
      [aid, rows, n, norms](Tape<T>& t, std::size_t self) {
        if (!t.requires_grad(aid)) return;
        const auto& g = t.grad_buffer(self);
        const auto& y = t.value(self).data;
        auto& ga = t.grad_buffer(aid);
        for (std::size_t r = 0; r < rows; ++r) {
          const bool clamped = norms[r] <= kFloor;
          T dot{0};
          if (!clamped)
            for (std::size_t i = 0; i < n; ++i) dot += g[r * n + i] * y[r * n + i];
          for (std::size_t i = 0; i < n; ++i)
            ga[r * n + i] += (g[r * n + i] - y[r * n + i] * dot) / norms[r];
        }
      });
}

template <typename T>
Var<T> pick(Var<T> a, const std::vector<std::size_t>& index) {
  require_rank(a, 2, "pick");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (index.size() != rows) throw InvalidArgument("pick: index length mismatch");
  Tensor<T> out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= cols) {
      throw InvalidArgument("pick: column " + std::to_string(index[r]) +
                            " out of range " + std::to_string(cols));
    }
    out[r] = a.value()[r * cols + index[r]];
  }
  const std::size_t aid = a.id;
  return a.tape->record(std::move(out), {a}, "pick",
                        [aid, index, cols](Tape<T>& t, std::size_t self) {
                          if (!t.requires_grad(aid)) return;
                          const auto& g = t.grad_buffer(self);
                          auto& ga = t.grad_buffer(aid);
                          for (std::size_t r = 0; r < index.size(); ++r)
                            ga[r * cols + index[r]] += g[r];
                        });
}

template <typename T>
Var<T> blend(Var<T> a, Var<T> b, const std::vector<bool>& mask) {
  require_same_shape(a, b, "blend");
  if (mask.size() != a.size()) throw InvalidArgument("blend: mask length mismatch");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < mask.size(); ++i)
    out[i] = mask[i] ? b.value()[i] : a.value()[i];
  const std::size_t aid = a.id, bid = b.id;
  return a.tape->record(std::move(out), {a, b}, "blend",
                        [aid, bid, mask](Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad_buffer(self);
                          const bool ra = t.requires_grad(aid), rb = t.requires_grad(bid);
                          for (std::size_t i = 0; i < mask.size(); ++i) {
                            if (mask[i]) {
                              if (rb) t.grad_buffer(bid)[i] += g[i];
                            } else if (ra) {
                              t.grad_buffer(aid)[i] += g[i];
                            }
                          }
                        });
}

template <typename T>
Var<T> pairwise_sq_dist(Var<T> x, Var<T> y) {
  require_rank(x, 2, "pairwise_sq_dist");
  require_rank(y, 2, "pairwise_sq_dist");
  const std::size_t n = x.shape()[0], m = y.shape()[0], d = x.shape()[1];
  if (y.shape()[1] != d) throw InvalidArgument("pairwise_sq_dist: width mismatch");
  const auto& xv = x.value().data;
  const auto& yv = y.value().data;
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      T s{0};
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = xv[i * d + k] - yv[j * d + k];
        s += diff * diff;
      }
      out[i * m + j] = s;
    }
  const std::size_t xid = x.id, yid = y.id;
  return x.tape->record(
      std::move(out), {x, y}, "pairwise_sq_dist",
      [xid, yid, n, m, d](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        const auto& xv = t.value(xid).data;
        const auto& yv = t.value(yid).data;
        const bool rx = t.requires_grad(xid), ry = t.requires_grad(yid);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const T gij = g[i * m + j];
            if (gij == T{0}) continue;
            for (std::size_t k = 0; k < d; ++k) {
              const T v = T{2} * gij * (xv[i * d + k] - yv[j * d + k]);
              if (rx) t.grad_buffer(xid)[i * d + k] += v;
              if (ry) t.grad_buffer(yid)[j * d + k] -= v;
            }
          }
      });
}

template <typename T>
Var<T> rowwise_sq_dist(Var<T> x, Var<T> y) {
  require_rank(x, 2, "rowwise_sq_dist");
  require_same_shape(x, y, "rowwise_sq_dist");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  const auto& xv = x.value().data;
  const auto& yv = y.value().data;
  Tensor<T> out({n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const T diff = xv[i * d + k] - yv[i * d + k];
      out[i] += diff * diff;
    }
  const std::size_t xid = x.id, yid = y.id;
  return x.tape->record(std::move(out), {x, y}, "rowwise_sq_dist",
                        [xid, yid, n, d](Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad_buffer(self);
                          const auto& xv = t.value(xid).data;
                          const auto& yv = t.value(yid).data;
                          const bool rx = t.requires_grad(xid), ry = t.requires_grad(yid);
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t k = 0; k < d; ++k) {
                              const T v = T{2} * g[i] * (xv[i * d + k] - yv[i * d + k]);
                              if (rx) t.grad_buffer(xid)[i * d + k] += v;
                              if (ry) t.grad_buffer(yid)[i * d + k] -= v;
                            }
                        });
}

template <typename T>
Var<T> masked_row_reduce(Var<T> a, const std::vector<bool>& mask, Reduce op) {
  require_rank(a, 2, "masked_row_reduce");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  if (mask.size() != n * m) throw InvalidArgument("masked_row_reduce: mask size");
  const auto& v = a.value().data;
  Tensor<T> out({n});
  std::vector<std::size_t> arg(n);
  for (std::size_t i = 0; i < n; ++i) {
    bool found = false;
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask[i * m + j]) continue;
      const T x = v[i * m + j];
      if (!found || (op == Reduce::kMin ? x < out[i] : x > out[i])) {
        out[i] = x;
        arg[i] = j;
        found = true;
      }
    }
    if (!found) {
      throw InvalidArgument("masked_row_reduce: row " + std::to_string(i) +
                            " has no selected entries");
    }
  }
  if (BranchLog* log = a.tape->branch_log()) {
    std::vector<std::uint32_t> winners(arg.begin(), arg.end());
    const auto& chosen = log->visit(std::move(winners), n);
    for (std::size_t i = 0; i < n; ++i) {
      arg[i] = chosen[i];
      out[i] = v[i * m + arg[i]];
    }
  }
  const std::size_t aid = a.id;
  return a.tape->record(std::move(out), {a}, "masked_row_reduce",
                        [aid, arg, m](Tape<T>& t, std::size_t self) {
                          if (!t.requires_grad(aid)) return;
                          const auto& g = t.grad_buffer(self);
                          auto& ga = t.grad_buffer(aid);
                          for (std::size_t i = 0; i < arg.size(); ++i) ga[i * m + arg[i]] += g[i];
                        });
}

namespace {

// Output positions [lo, hi) that tap `kk` maps inside the input.
struct TapRange {
  std::ptrdiff_t offset, lo, hi;
};

inline TapRange tap_range(std::size_t kk, std::size_t dilation, std::size_t padding,
                          std::size_t len, std::size_t l_out) {
  const std::ptrdiff_t off =
      static_cast<std::ptrdiff_t>(kk * dilation) - static_cast<std::ptrdiff_t>(padding);
  const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-off, 0, static_cast<std::ptrdiff_t>(l_out));
  const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len) - off, lo,
                                                       static_cast<std::ptrdiff_t>(l_out));
  return {off, lo, hi};
}

// Kernel tap kk as a dense [c_out x c_in] matrix.
template <typename T>
MatR<T> kernel_tap(const std::vector<T>& kernels, std::size_t c_out, std::size_t c_in,
                   std::size_t k, std::size_t kk) {
  MatR<T> m(c_out, c_in);
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t i = 0; i < c_in; ++i) m(o, i) = kernels[(o * c_in + i) * k + kk];
  return m;
}

template <typename T>
void check_bias(const std::optional<Var<T>>& bias, std::size_t c_out, const char* op) {
  if (bias && (bias->shape() != Shape{c_out})) {
    throw InvalidArgument(std::string(op) + ": bias shape " +
                          shape_str(bias->shape()) + " for " + std::to_string(c_out) +
                          " output channels");
  }
}

}  // namespace

template <typename T>
Var<T> conv1d_dilated(Var<T> input, Var<T> kernels, std::optional<std::type_identity_t<Var<T>>> bias,
                      std::size_t dilation, std::size_t padding) {
  const Shape& is = input.shape();
  if (is.size() != 2 && is.size() != 3) {
    throw InvalidArgument("conv1d_dilated: input must be [c x l] or [c x l x b], got " +
                          shape_str(is));
  }
  require_rank(kernels, 3, "conv1d_dilated");
  if (dilation < 1) throw InvalidArgument("conv1d_dilated: dilation must be >= 1");
  const std::size_t c_in = is[0];
  const std::size_t len = is[1];
  const std::size_t batch = is.size() == 3 ? is[2] : 1;
  const std::size_t c_out = kernels.shape()[0], k = kernels.shape()[2];
  if (kernels.shape()[1] != c_in) {
    throw InvalidArgument("conv1d_dilated: kernel " + shape_str(kernels.shape()) +
                          " vs input " + shape_str(is));
  }
  check_bias(bias, c_out, "conv1d_dilated");
  const std::ptrdiff_t l_out_signed = static_cast<std::ptrdiff_t>(len + 2 * padding) -
                                      static_cast<std::ptrdiff_t>(dilation * (k - 1));
  if (l_out_signed < 1) {
    throw InvalidArgument("conv1d_dilated: non-positive output length " +
                          std::to_string(l_out_signed));
  }
  const auto l_out = static_cast<std::size_t>(l_out_signed);
  const auto b = static_cast<std::ptrdiff_t>(batch);

  // With the batch axis innermost, shifting every sequence by the same
  // offset is a column shift of the [c x (l * b)] matrix, so each tap is one
  // GEMM on contiguous column blocks.
  Tensor<T> out(is.size() == 3 ? Shape{c_out, l_out, batch} : Shape{c_out, l_out});
  MapR<T> o(out.data.data(), c_out, l_out * batch);
  CMapR<T> x(input.value().data.data(), c_in, len * batch);
  for (std::size_t kk = 0; kk < k; ++kk) {
    const auto r = tap_range(kk, dilation, padding, len, l_out);
    if (r.hi <= r.lo) continue;
    o.middleCols(r.lo * b, (r.hi - r.lo) * b).noalias() +=
        kernel_tap(kernels.value().data, c_out, c_in, k, kk) *
        x.middleCols((r.lo + r.offset) * b, (r.hi - r.lo) * b);
  }
  if (bias) {
    const auto& bv = bias->value().data;
    for (std::size_t c = 0; c < c_out; ++c) o.row(c).array() += bv[c];
  }

  std::vector<Var<T>> inputs{input, kernels};
  if (bias) inputs.push_back(*bias);
  const std::size_t xid = input.id, kid = kernels.id;
  const std::optional<std::size_t> bid = bias ? std::optional(bias->id) : std::nullopt;
  return input.tape->record(
      std::move(out), inputs, "conv1d_dilated",
      [=](Tape<T>& t, std::size_t self) {
        CMapR<T> g(t.grad_buffer(self).data(), c_out, l_out * batch);
        if (bid && t.requires_grad(*bid)) {
          auto& gb = t.grad_buffer(*bid);
          for (std::size_t c = 0; c < c_out; ++c) {
            const T* row = g.data() + c * g.cols();
            gb[c] += std::accumulate(row, row + g.cols(), T{0});
          }
        }
        const bool need_k = t.requires_grad(kid), need_x = t.requires_grad(xid);
        CMapR<T> xv(t.value(xid).data.data(), c_in, len * batch);
        const auto& kv = t.value(kid).data;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const auto r = tap_range(kk, dilation, padding, len, l_out);
          if (r.hi <= r.lo) continue;
          const auto gb = g.middleCols(r.lo * b, (r.hi - r.lo) * b);
          if (need_k) {
            const MatR<T> dk = gb * xv.middleCols((r.lo + r.offset) * b, (r.hi - r.lo) * b).transpose();
            auto& gk = t.grad_buffer(kid);
            for (std::size_t oc = 0; oc < c_out; ++oc)
              for (std::size_t ic = 0; ic < c_in; ++ic) gk[(oc * c_in + ic) * k + kk] += dk(oc, ic);
          }
          if (need_x) {
            MapR<T>(t.grad_buffer(xid).data(), c_in, len * batch)
                .middleCols((r.lo + r.offset) * b, (r.hi - r.lo) * b)
                .noalias() += kernel_tap(kv, c_out, c_in, k, kk).transpose() * gb;
          }
        }
      });
}

namespace {

template <typename T>
void im2col_2d(const T* x, std::size_t c_in, std::size_t h, std::size_t w,
               std::size_t k, std::size_t stride, std::size_t pad, std::size_t h_out,
               std::size_t w_out, T* cols) {
  const std::size_t width = h_out * w_out;
  for (std::size_t ci = 0; ci < c_in; ++ci)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((ci * k + ky) * k + kx) * width;
        for (std::size_t oy = 0; oy < h_out; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < w_out; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                ix < static_cast<std::ptrdiff_t>(w);
            row[oy * w_out + ox] =
                inside ? x[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)]
                       : T{0};
          }
        }
      }
}

template <typename T>
void col2im_2d(const T* cols, std::size_t c_in, std::size_t h, std::size_t w,
               std::size_t k, std::size_t stride, std::size_t pad, std::size_t h_out,
               std::size_t w_out, T* dx) {
  const std::size_t width = h_out * w_out;
  for (std::size_t ci = 0; ci < c_in; ++ci)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((ci * k + ky) * k + kx) * width;
        for (std::size_t oy = 0; oy < h_out; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < w_out; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            dx[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] +=
                row[oy * w_out + ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernels, std::optional<std::type_identity_t<Var<T>>> bias,
              std::size_t stride, std::size_t padding) {
  require_rank(input, 3, "conv2d");
  require_rank(kernels, 4, "conv2d");
  if (stride < 1) throw InvalidArgument("conv2d: stride must be >= 1");
  const std::size_t c_in = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const std::size_t c_out = kernels.shape()[0], k = kernels.shape()[2];
  if (kernels.shape()[1] != c_in || kernels.shape()[3] != k) {
    throw InvalidArgument("conv2d: kernel " + shape_str(kernels.shape()) + " vs input " +
                          shape_str(input.shape()));
  }
  check_bias(bias, c_out, "conv2d");
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw InvalidArgument("conv2d: kernel larger than padded input");
  }
  const std::size_t h_out = (h + 2 * padding - k) / stride + 1;
  const std::size_t w_out = (w + 2 * padding - k) / stride + 1;
  const std::size_t rows = c_in * k * k, width = h_out * w_out;

  std::vector<T> cols(rows * width);
  im2col_2d(input.value().data.data(), c_in, h, w, k, stride, padding, h_out, w_out,
            cols.data());
  Tensor<T> out({c_out, h_out, w_out});
  MapR<T> o(out.data.data(), c_out, width);
  o.noalias() = CMapR<T>(kernels.value().data.data(), c_out, rows) *
                CMapR<T>(cols.data(), rows, width);
  if (bias) {
    const auto& bv = bias->value().data;
    for (std::size_t c = 0; c < c_out; ++c) o.row(c).array() += bv[c];
  }

  std::vector<Var<T>> inputs{input, kernels};
  if (bias) inputs.push_back(*bias);
  const std::size_t xid = input.id, kid = kernels.id;
  const std::optional<std::size_t> bid = bias ? std::optional(bias->id) : std::nullopt;
  return input.tape->record(
      std::move(out), inputs, "conv2d", [=](Tape<T>& t, std::size_t self) {
        CMapR<T> g(t.grad_buffer(self).data(), c_out, width);
        if (bid && t.requires_grad(*bid)) {
          auto& gb = t.grad_buffer(*bid);
          for (std::size_t c = 0; c < c_out; ++c) {
            const T* row = g.data() + c * g.cols();
            gb[c] += std::accumulate(row, row + g.cols(), T{0});
          }
        }
        if (t.requires_grad(kid)) {
          std::vector<T> c2(rows * width);
          im2col_2d(t.value(xid).data.data(), c_in, h, w, k, stride, padding, h_out, w_out,
                    c2.data());
          MapR<T>(t.grad_buffer(kid).data(), c_out, rows).noalias() +=
              g * CMapR<T>(c2.data(), rows, width).transpose();
        }
        if (t.requires_grad(xid)) {
          std::vector<T> dcols(rows * width);
          MapR<T>(dcols.data(), rows, width).noalias() =
              CMapR<T>(t.value(kid).data.data(), c_out, rows).transpose() * g;
          col2im_2d(dcols.data(), c_in, h, w, k, stride, padding, h_out, w_out,
                    t.grad_buffer(xid).data());
        }
      });
}

template <typename T>
Var<T> gru_forward(Var<T> inputs, const GruParams<T>& p, Var<T> h0) {
  require_rank(inputs, 2, "gru_forward");
  const std::size_t steps = inputs.shape()[0], d = inputs.shape()[1];
  if (steps < 1) throw InvalidArgument("gru_forward: empty sequence");
  const std::size_t hd = h0.size();
  if (p.w_ih.shape() != Shape{3, hd, d} || p.w_hh.shape() != Shape{3, hd, hd} ||
      p.b_ih.shape() != Shape{3, hd} || p.b_hh.shape() != Shape{3, hd} ||
      h0.shape() != Shape{hd}) {
    throw InvalidArgument("gru_forward: parameter shapes do not match input " +
                          shape_str(inputs.shape()) + " and state " + shape_str(h0.shape()));
  }
  enum { kReset = 0, kUpdate = 1, kCand = 2 };
  auto gate_in = [&](Var<T> x, std::size_t g) {
    return add(matvec(select(p.w_ih, g), x), select(p.b_ih, g));
  };
  auto gate_hid = [&](Var<T> h, std::size_t g) {
    return add(matvec(select(p.w_hh, g), h), select(p.b_hh, g));
  };
  Var<T> h = h0;
  for (std::size_t s = 0; s < steps; ++s) {
    const Var<T> x = select(inputs, s);
    const Var<T> r = sigmoid(add(gate_in(x, kReset), gate_hid(h, kReset)));
    const Var<T> z = sigmoid(add(gate_in(x, kUpdate), gate_hid(h, kUpdate)));
    const Var<T> n = tanh(add(gate_in(x, kCand), mul(r, gate_hid(h, kCand))));
    h = add(mul(affine(z, T{-1}, T{1}), n), mul(z, h));
  }
  return h;
}

#define EVKIT_INSTANTIATE_OPS(T)                                                     \
  template Var<T> add(Var<T>, Var<T>);                                               \
  template Var<T> sub(Var<T>, Var<T>);                                               \
  template Var<T> mul(Var<T>, Var<T>);                                               \
  template Var<T> affine(Var<T>, T, T);                                              \
  template Var<T> selu(Var<T>);                                                      \
  template Var<T> sigmoid(Var<T>);                                                   \
  template Var<T> tanh(Var<T>);                                                      \
  template Var<T> relu(Var<T>);                                                      \
  template Var<T> sqrt(Var<T>);                                                      \
  template Var<T> matmul(Var<T>, Var<T>);                                            \
  template Var<T> matvec(Var<T>, Var<T>);                                            \
  template Var<T> transpose(Var<T>);                                                 \
  template Var<T> reshape(Var<T>, Shape);                                            \
  template Var<T> select(Var<T>, std::size_t);                                       \
  template Var<T> concat(const std::vector<Var<T>>&);                                \
  template Var<T> sum(Var<T>);                                                       \
  template Var<T> mean(Var<T>, std::size_t);                                         \
  template Var<T> softmax(Var<T>);                                                   \
  template Var<T> log_softmax(Var<T>);                                               \
  template Var<T> l2_normalize(Var<T>);                                              \
  template Var<T> pick(Var<T>, const std::vector<std::size_t>&);                     \
  template Var<T> blend(Var<T>, Var<T>, const std::vector<bool>&);                   \
  template Var<T> pairwise_sq_dist(Var<T>, Var<T>);                                  \
  template Var<T> rowwise_sq_dist(Var<T>, Var<T>);                                   \
  template Var<T> masked_row_reduce(Var<T>, const std::vector<bool>&, Reduce);       \
  template Var<T> conv1d_dilated(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t, \
                                 std::size_t);                                       \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t,         \
                         std::size_t);                                               \
  template Var<T> gru_forward(Var<T>, const GruParams<T>&, Var<T>);

EVKIT_INSTANTIATE_OPS(float)
EVKIT_INSTANTIATE_OPS(double)

}  // namespace evkit::diff
