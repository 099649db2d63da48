// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include "evkit/trainer.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>

#include "evkit/error.hpp"
#include "evkit/keyvalue.hpp"
#include "evkit/parallel.hpp"

namespace evkit {

using diff::Shape;
using diff::Tape;
using diff::Tensor;
using diff::Var;

// ---------------------------------------------------------------------------
// Configuration

using kv::format_real;

void TrainConfig::validate() const {
  auto bad = [](const std::string& key, const std::string& why) {
    throw InvalidArgument("config key '" + key + "': " + why);
  };
  if (n_speakers < 2 && loss != LossKind::kAam) bad("n_speakers", "GE2E losses need at least 2");
  if (n_speakers < 1) bad("n_speakers", "must be >= 1");
  if (m_frames < 2 && loss != LossKind::kAam) bad("m_frames", "GE2E losses need at least 2");
  if (m_frames < 1) bad("m_frames", "must be >= 1");
  if (!(learning_rate >= 0)) bad("learning_rate", "must be >= 0");
  if (max_steps < 1) bad("max_steps", "must be >= 1");
  if (plateau_window < 1) bad("plateau_window", "must be >= 1");
  if (plateau_window > max_steps) bad("plateau_window", "must not exceed max_steps");
  if (!(plateau_epsilon >= 0)) bad("plateau_epsilon", "must be >= 0");
  if (!(alpha >= 0 && alpha <= 1)) bad("alpha", "must lie in [0, 1]");
  if (!(margin >= 0)) bad("margin", "must be >= 0");
  if (!(aam_s > 0)) bad("aam_s", "must be > 0");
  if (!(aam_m >= 0)) bad("aam_m", "must be >= 0");
  if (n_vsf < 1) bad("n_vsf", "must be >= 1");
  if (!(momentum >= 0 && momentum < 1)) bad("momentum", "must lie in [0, 1)");
  if (!(grad_clip >= 0)) bad("grad_clip", "must be >= 0");
}

std::string TrainConfig::to_text() const {
  std::ostringstream o;
  o << "n_speakers=" << n_speakers << '\n'
    << "m_frames=" << m_frames << '\n'
    << "learning_rate=" << format_real(learning_rate) << '\n'
    << "max_steps=" << max_steps << '\n'
    << "plateau_window=" << plateau_window << '\n'
    << "plateau_epsilon=" << format_real(plateau_epsilon) << '\n'
    << "loss=" << to_string(loss) << '\n'
    << "alpha=" << format_real(alpha) << '\n'
    << "margin=" << format_real(margin) << '\n'
    << "aam_s=" << format_real(aam_s) << '\n'
    << "aam_m=" << format_real(aam_m) << '\n'
    << "n_vsf=" << n_vsf << '\n'
    << "seed=" << seed << '\n'
    << "momentum=" << format_real(momentum) << '\n'
    << "grad_clip=" << format_real(grad_clip) << '\n';
  return o.str();
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  for (const auto& e : kv::parse(text)) {
    const std::string& k = e.key;
    if (k == "n_speakers") c.n_speakers = kv::to_count(e);
    else if (k == "m_frames") c.m_frames = kv::to_count(e);
    else if (k == "learning_rate") c.learning_rate = kv::to_real(e);
    else if (k == "max_steps") c.max_steps = kv::to_count(e);
    else if (k == "plateau_window") c.plateau_window = kv::to_count(e);
    else if (k == "plateau_epsilon") c.plateau_epsilon = kv::to_real(e);
    else if (k == "loss") c.loss = parse_loss_kind(e.value);
    else if (k == "alpha") c.alpha = kv::to_real(e);
    else if (k == "margin") c.margin = kv::to_real(e);
    else if (k == "aam_s") c.aam_s = kv::to_real(e);
    else if (k == "aam_m") c.aam_m = kv::to_real(e);
    else if (k == "n_vsf") c.n_vsf = kv::to_count(e);
    else if (k == "seed") c.seed = kv::to_count(e);
    else if (k == "momentum") c.momentum = kv::to_real(e);
    else if (k == "grad_clip") c.grad_clip = kv::to_real(e);
    else kv::unknown_key(e);
  }
  c.validate();
  return c;
}

TrainConfig read_train_config(const std::filesystem::path& path) {
  return parse_train_config(kv::read_text(path));
}

namespace {

void ensure_parent(const std::filesystem::path& path) {
  const auto dir = path.parent_path();
  if (dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,loss\n";
  char buf[32];
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), losses[i]);
    out << steps[i] << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf)) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Optimization primitives

bool plateau_stop(std::span<const double> losses, std::size_t window, double epsilon) {
  if (window < 1) throw InvalidArgument("plateau_stop: window must be >= 1");
  const std::size_t k = std::max<std::size_t>(1, window / 10);
  const std::size_t n = losses.size();
  if (n < window + k) return false;
  // smoothed[t] = mean(losses[t - k + 1 .. t]) for t >= k - 1
  double run = 0;
  double before_best = INFINITY, recent_best = INFINITY;
  for (std::size_t t = 0; t < n; ++t) {
    run += losses[t];
    if (t >= k) run -= losses[t - k];
    if (t + 1 < k) continue;
    const double s = run / static_cast<double>(k);
    if (t < n - window) before_best = std::min(before_best, s);
    else recent_best = std::min(recent_best, s);
  }
  return recent_best >= before_best - epsilon * std::abs(before_best);
}

double scheduled_lr(const TrainConfig& cfg, std::size_t step) {
  const std::size_t quarter = std::max<std::size_t>(1, cfg.max_steps / 4);
  const std::size_t halvings = std::min<std::size_t>(step / quarter, 3);
  return cfg.learning_rate * std::ldexp(1.0, -static_cast<int>(halvings));
}

void sgd_momentum_step(std::span<float> param, std::span<float> buffer, std::span<const float> grad,
                       double lr, double momentum) {
  if (param.size() != buffer.size() || param.size() != grad.size()) {
    throw InvalidArgument("sgd_momentum_step: length mismatch");
  }
  const auto mu = static_cast<float>(momentum);
  const auto eta = static_cast<float>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    buffer[i] = mu * buffer[i] + grad[i];
    param[i] -= eta * buffer[i];
  }
}

double clip_global_norm(std::vector<std::vector<float>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads)
    for (const float v : g) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const auto s = static_cast<float>(max_norm / norm);
    for (auto& g : grads)
      for (float& v : g) v *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Batch gradients

namespace {

// Frames per batch above which per-frame tapes are rebuilt for the backward
// pass instead of being held across the loss evaluation.
constexpr std::size_t kMaxCachedTapes = 16;

struct FramePass {
  std::unique_ptr<Tape<float>> tape;
  std::vector<Var<float>> params;
  Var<float> out;
};

FramePass forward_frame(const ModelWeights& w, const SpeechFrame& f) {
  FramePass p;
  p.tape = std::make_unique<Tape<float>>();
  const auto net = Net<float>::bind(*p.tape, w, true);
  p.params = net.vars();
  p.out = evector(p.tape->constant(frame_tensor<float>(f)), net).evector;
  return p;
}

}  // namespace

BatchResult batch_gradients(const ModelWeights& w, const std::vector<const SpeechFrame*>& frames,
                            const std::vector<std::size_t>& labels, const TrainConfig& cfg,
                            const Tensor<float>* class_weights) {
  const std::size_t n = frames.size();
  if (n == 0 || labels.size() != n) throw InvalidArgument("batch_gradients: label count mismatch");
  if (cfg.loss == LossKind::kAam && !class_weights) {
    throw InvalidArgument("batch_gradients: aam loss needs class weights");
  }
  const bool cache = n <= kMaxCachedTapes;

  std::vector<FramePass> passes(n);
  std::vector<Tensor<float>> embeddings(n);
  parallel_for(n, [&](std::size_t i) {
    if (cache) {
      passes[i] = forward_frame(w, *frames[i]);
      embeddings[i] = passes[i].out.value();
    } else {
      embeddings[i] = evector(*frames[i], w).values;
    }
  });

  // Loss over the stacked embeddings, each row unit-normalized.
  Tape<float> lt;
  Tensor<float> stacked({n, kEVectorDim});
  for (std::size_t i = 0; i < n; ++i)
    std::copy(embeddings[i].data.begin(), embeddings[i].data.end(),
              stacked.data.begin() + static_cast<std::ptrdiff_t>(i * kEVectorDim));
  const Var<float> e = lt.parameter(std::move(stacked));
  const Var<float> x = diff::l2_normalize(e);
  Var<float> loss;
  Var<float> cw;
  const std::vector<double> alpha(n, cfg.alpha);
  switch (cfg.loss) {
    case LossKind::kContrastive:
      loss = ge2e_contrastive(x, loo_centroids(x, labels), labels, alpha, cfg.margin);
      break;
    case LossKind::kLiteral:
      loss = ge2e_literal(x, loo_centroids(x, labels), labels, alpha);
      break;
    case LossKind::kAam:
      cw = lt.parameter(*class_weights);
      loss = aam_loss(e, labels, cw, AamConfig{cfg.aam_s, cfg.aam_m});
      break;
  }
  lt.backward(loss);

  BatchResult r;
  r.loss = static_cast<double>(loss.value()[0]);
  const Tensor<float> de = lt.gradient(e);
  if (cfg.loss == LossKind::kAam) r.class_weight_grad = lt.gradient(cw).data;

  std::vector<std::vector<Tensor<float>>> per_frame(n);
  parallel_for(n, [&](std::size_t i) {
    FramePass p = cache ? std::move(passes[i]) : forward_frame(w, *frames[i]);
    p.tape->set_release_intermediates(true);
    p.tape->backward(p.out, std::span<const float>(de.data).subspan(i * kEVectorDim, kEVectorDim));
    per_frame[i].reserve(p.params.size());
    for (const auto& v : p.params) per_frame[i].push_back(p.tape->gradient(v));
  });

  // Summed in frame order so the result does not depend on the worker count.
  r.grads.resize(w.groups.size());
  for (std::size_t g = 0; g < w.groups.size(); ++g) {
    r.grads[g].assign(w.groups[g].value.size(), 0.0f);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < r.grads[g].size(); ++j) r.grads[g][j] += per_frame[i][g].data[j];
  }
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'E', 'V', 'C', 'K'};

void put_u32(std::string& buf, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.append(b, 4);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw InvalidArgument(std::string("checkpoint: ") + what + " too large");
  return static_cast<std::uint32_t>(v);
}

std::uint32_t crc_of(const char* data, std::size_t len) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (len > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(len, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    len -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end, std::string name)
      : buf_(buf), end_(end), name_(std::move(name)) {}

  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  std::string str(std::size_t n) { return std::string(take(n), n); }
  void floats(std::vector<float>& out) {
    const char* p = take(out.size() * sizeof(float));
    std::memcpy(out.data(), p, out.size() * sizeof(float));
  }
  bool done() const { return pos_ == end_; }

 private:
  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw InvalidArgument(name_ + ": truncated checkpoint");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }

  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string name_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& w, const TrainConfig& cfg) {
  std::string buf(kCheckpointMagic, 4);
  put_u32(buf, kCheckpointVersion);
  const std::string text = cfg.to_text();
  put_u32(buf, checked_u32(text.size(), "config"));
  buf += text;
  put_u32(buf, checked_u32(w.groups.size(), "group count"));
  for (const auto& g : w.groups) {
    put_u32(buf, checked_u32(g.name.size(), "group name"));
    buf += g.name;
    put_u32(buf, checked_u32(g.value.shape.size(), "rank"));
    for (const std::size_t d : g.value.shape) put_u32(buf, checked_u32(d, "dimension"));
    buf.append(reinterpret_cast<const char*>(g.value.data.data()), g.value.data.size() * sizeof(float));
  }
  put_u32(buf, crc_of(buf.data(), buf.size()));
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  const std::string buf = s.str();
  const std::string name = path.string();
  if (buf.size() < 8 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
    throw InvalidArgument(name + ": bad magic, not an EVCK checkpoint");
  }
  std::uint32_t version;
  std::memcpy(&version, buf.data() + 4, 4);
  if (version != kCheckpointVersion) {
    throw InvalidArgument(name + ": checkpoint version " + std::to_string(version) + " found, expected " +
                          std::to_string(kCheckpointVersion));
  }
  if (buf.size() < 12) throw InvalidArgument(name + ": truncated checkpoint");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (crc_of(buf.data(), buf.size() - 4) != stored_crc) {
    throw InvalidArgument(name + ": checkpoint CRC mismatch");
  }

  Reader r(buf, buf.size() - 4, name);
  r.u32();
  r.u32();
  Checkpoint ck;
  ck.config = parse_train_config(r.str(r.u32()));
  ck.weights.config = ModelConfig{ck.config.n_vsf};
  ck.weights.seed = ck.config.seed;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    ParamGroup g;
    g.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    // Bound the allocation by the bytes actually present.
    if (diff::numel(shape) > buf.size() / sizeof(float)) {
      throw InvalidArgument(name + ": group " + g.name + " larger than the file");
    }
    g.value = Tensor<float>(shape);
    r.floats(g.value.data);
    ck.weights.groups.push_back(std::move(g));
  }
  if (!r.done()) throw InvalidArgument(name + ": trailing bytes after parameter groups");

  const auto layout = param_layout(ck.weights.config);
  if (layout.size() != ck.weights.groups.size()) {
    throw InvalidArgument(name + ": " + std::to_string(ck.weights.groups.size()) +
                          " parameter groups, expected " + std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& g = ck.weights.groups[i];
    if (g.name != layout[i].first || g.value.shape != layout[i].second) {
      throw InvalidArgument(name + ": group " + g.name + " " + diff::shape_str(g.value.shape) +
                            " does not match " + layout[i].first + " " +
                            diff::shape_str(layout[i].second));
    }
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  const auto layout = param_layout(expected);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& g = ck.weights.groups[i];
    if (g.value.shape != layout[i].second) {
      throw InvalidArgument(path.string() + ": parameter " + g.name + " has shape " +
                            diff::shape_str(g.value.shape) + ", model expects " +
                            diff::shape_str(layout[i].second) + " (n_vsf " +
                            std::to_string(ck.weights.config.n_vsf) + " vs " +
                            std::to_string(expected.n_vsf) + ")");
    }
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

// Distinct stream for the AAM class weights so they do not shift the model
// initialization drawn from the same seed.
constexpr std::uint64_t kClassWeightStream = 0x9e3779b97f4a7c15ULL;

}  // namespace

TrainResult train(const TrainConfig& cfg, const FrameIndex& index, const TrainOptions& opts) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();

  std::vector<FrameRecord> pool;
  for (const auto& r : index.rows)
    if (r.split == "train") pool.push_back(r);
  if (pool.empty()) throw InvalidArgument("train: no frames in the train split");

  // Fails early, naming a deficient speaker, if the batch shape is impossible.
  std::mt19937_64 rng(cfg.seed);
  {
    std::mt19937_64 probe(cfg.seed);
    sample_batch(pool, cfg.n_speakers, cfg.m_frames, probe);
  }

  std::map<std::string, std::size_t> speaker_class;
  for (const auto& r : pool) speaker_class.emplace(r.speaker_id, 0);
  {
    std::size_t k = 0;
    for (auto& [spk, c] : speaker_class) c = k++;
  }

  std::vector<std::unique_ptr<SpeechFrame>> cache(pool.size());
  auto frame_at = [&](std::size_t i) -> const SpeechFrame& {
    if (!cache[i]) cache[i] = std::make_unique<SpeechFrame>(read_frame(index.resolve(pool[i])));
    return *cache[i];
  };

  TrainResult res;
  if (opts.initial) {
    if (opts.initial->config.n_vsf != cfg.n_vsf) {
      throw InvalidArgument("train: initial weights have n_vsf " +
                            std::to_string(opts.initial->config.n_vsf) + ", config has " +
                            std::to_string(cfg.n_vsf));
    }
    res.final_weights = *opts.initial;
  } else {
    res.final_weights = init_weights(ModelConfig{cfg.n_vsf}, cfg.seed);
  }
  ModelWeights& w = res.final_weights;
  res.best_weights = w;

  Tensor<float> class_weights;
  std::vector<float> class_momentum;
  if (cfg.loss == LossKind::kAam) {
    class_weights = Tensor<float>({speaker_class.size(), kEVectorDim});
    std::mt19937_64 crng(cfg.seed ^ kClassWeightStream);
    const auto bound = static_cast<float>(std::sqrt(1.0 / static_cast<double>(kEVectorDim)));
    std::uniform_real_distribution<float> uni(-bound, bound);
    for (auto& v : class_weights.data) v = uni(crng);
    class_momentum.assign(class_weights.size(), 0.0f);
  }

  std::vector<std::vector<float>> momentum(w.groups.size());
  for (std::size_t g = 0; g < w.groups.size(); ++g) momentum[g].assign(w.groups[g].value.size(), 0.0f);

  const std::size_t smooth = std::max<std::size_t>(1, cfg.plateau_window / 10);
  double smooth_sum = 0;
  double best_smoothed = INFINITY;

  auto save_best = [&] {
    if (opts.checkpoint_path) save_checkpoint(*opts.checkpoint_path, res.best_weights, cfg);
    if (opts.history_path) res.history.write_csv(*opts.history_path);
  };
  // The initial weights are the first best checkpoint; writing them now also
  // surfaces unwritable output paths before any training time is spent.
  save_best();

  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const Batch batch = sample_batch(pool, cfg.n_speakers, cfg.m_frames, rng);
    std::vector<const SpeechFrame*> frames;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < batch.frames.size(); ++i) {
      frames.push_back(&frame_at(batch.frames[i]));
      labels.push_back(cfg.loss == LossKind::kAam ? speaker_class.at(batch.labels[i])
                                                  : i / cfg.m_frames);
    }

    BatchResult br;
    try {
      br = batch_gradients(w, frames, labels, cfg, cfg.loss == LossKind::kAam ? &class_weights : nullptr);
    } catch (const NumericError& e) {
      save_best();
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    double loss = opts.loss_override ? opts.loss_override(step, br.loss) : br.loss;
    if (!std::isfinite(loss)) {
      save_best();
      throw NumericError("training diverged at step " + std::to_string(step) + ": loss is not finite");
    }

    res.history.steps.push_back(step);
    res.history.losses.push_back(loss);
    res.history.wall_seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    if (opts.on_step) opts.on_step(step, loss);

    // The best checkpoint holds the weights that produced the last loss of
    // the lowest smoothed window; `w` is still pre-update here.
    const std::size_t n = res.history.losses.size();
    smooth_sum += loss;
    if (n > smooth) smooth_sum -= res.history.losses[n - smooth - 1];
    if (n >= smooth) {
      const double s = smooth_sum / static_cast<double>(smooth);
      if (s < best_smoothed) {
        best_smoothed = s;
        res.best_weights = w;
        res.history.checkpoint_steps.push_back(step);
      }
    }

    if (cfg.grad_clip > 0) {
      if (cfg.loss == LossKind::kAam) br.grads.push_back(std::move(br.class_weight_grad));
      clip_global_norm(br.grads, cfg.grad_clip);
      if (cfg.loss == LossKind::kAam) {
        br.class_weight_grad = std::move(br.grads.back());
        br.grads.pop_back();
      }
    }
    const double lr = scheduled_lr(cfg, step);
    for (std::size_t g = 0; g < w.groups.size(); ++g)
      sgd_momentum_step(w.groups[g].value.data, momentum[g], br.grads[g], lr, cfg.momentum);
    if (cfg.loss == LossKind::kAam)
      sgd_momentum_step(class_weights.data, class_momentum, br.class_weight_grad, lr, cfg.momentum);

    if (plateau_stop(res.history.losses, cfg.plateau_window, cfg.plateau_epsilon)) {
      res.history.stop_reason = "plateau";
      break;
    }
  }
  if (res.history.stop_reason.empty()) res.history.stop_reason = "max_steps";
  if (res.history.checkpoint_steps.empty()) {
    // Fewer steps than one smoothing window: keep the starting weights.
    res.history.checkpoint_steps.push_back(0);
  }
  save_best();
  return res;
}

}  // namespace evkit
