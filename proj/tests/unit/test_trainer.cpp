// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "evkit/error.hpp"
#include "evkit/losses.hpp"
#include "evkit/trainer.hpp"
#include "test_util.hpp"

using namespace evkit;
namespace fs = std::filesystem;

namespace {

// Noise frames whose scale and tone depend on the speaker.
FrameIndex write_toy_frames(const fs::path& dir, std::size_t speakers, std::size_t per_speaker,
                            const std::string& split = "train") {
  FrameIndex idx;
  idx.base_dir = dir;
  std::mt19937_64 rng(42);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  for (std::size_t s = 0; s < speakers; ++s) {
    for (std::size_t k = 0; k < per_speaker; ++k) {
      SpeechFrame f;
      const float freq = 0.02f + 0.03f * static_cast<float>(s);
      for (std::size_t i = 0; i < f.data.size(); ++i)
        f.data[i] = 0.2f * std::sin(freq * static_cast<float>(i % 320)) + 0.02f * noise(rng);
      const std::string rel = "spk" + std::to_string(s) + "_" + std::to_string(k) + ".evfr";
      write_frame(dir / rel, f);
      idx.rows.push_back({rel, "spk" + std::to_string(s), "neutral", k, "src.wav", split});
    }
  }
  return idx;
}

TrainConfig small_config() {
  TrainConfig c;
  c.n_speakers = 2;
  c.m_frames = 2;
  c.max_steps = 3;
  c.plateau_window = 3;
  c.learning_rate = 0.01;
  c.seed = 5;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace

TEST_CASE("config text parses every key and round-trips") {
  const TrainConfig c = parse_train_config(
      "# run\n"
      "n_speakers = 6\n"
      "m_frames=3\n"
      "learning_rate=0.05  # fast\n"
      "max_steps=1000\n"
      "plateau_window=200\n"
      "plateau_epsilon=0.01\n"
      "loss=aam\n"
      "alpha=0.25\n"
      "margin=0.8\n"
      "aam_s=20\n"
      "aam_m=0.3\n"
      "n_vsf=20\n"
      "seed=99\n"
      "momentum=0.5\n"
      "grad_clip=0\n");
  CHECK(c.n_speakers == 6);
  CHECK(c.m_frames == 3);
  CHECK(c.learning_rate == 0.05);
  CHECK(c.max_steps == 1000);
  CHECK(c.plateau_window == 200);
  CHECK(c.plateau_epsilon == 0.01);
  CHECK(c.loss == LossKind::kAam);
  CHECK(c.alpha == 0.25);
  CHECK(c.margin == 0.8);
  CHECK(c.aam_s == 20);
  CHECK(c.aam_m == 0.3);
  CHECK(c.n_vsf == 20);
  CHECK(c.seed == 99);
  CHECK(c.momentum == 0.5);
  CHECK(c.grad_clip == 0);
  CHECK(parse_train_config(c.to_text()) == c);
  CHECK(parse_train_config("") == TrainConfig{});
}

TEST_CASE("config errors name the key") {
  auto msg = [](const std::string& text) {
    try {
      parse_train_config(text);
    } catch (const InvalidArgument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(msg("batch=3\n").find("batch") != std::string::npos);
  CHECK(msg("seed=1\nseed=2\n").find("twice") != std::string::npos);
  CHECK(msg("learning_rate=fast\n").find("learning_rate") != std::string::npos);
  CHECK(msg("learning_rate=-1\n").find("learning_rate") != std::string::npos);
  CHECK(msg("max_steps=10\nplateau_window=20\n").find("plateau_window") != std::string::npos);
  CHECK(msg("loss=triplet\n").find("triplet") != std::string::npos);
  CHECK(msg("m_frames=1\n").find("m_frames") != std::string::npos);
  CHECK(msg("n_vsf=0\n").find("n_vsf") != std::string::npos);
  CHECK(msg("just text\n").find("line 1") != std::string::npos);
  CHECK_NOTHROW(parse_train_config("loss=aam\nm_frames=1\n"));
}

TEST_CASE("plateau rule") {
  SUBCASE("strictly decreasing loss keeps training") {
    std::vector<double> l;
    for (int t = 0; t < 500; ++t) l.push_back(10.0 - 0.01 * t);
    CHECK_FALSE(plateau_stop(l, 100, 0.005));
  }
  SUBCASE("constant loss for a full window stops") {
    std::vector<double> l(110, 2.0);
    CHECK(plateau_stop(l, 100, 0.005));
    std::vector<double> drop;
    for (int t = 0; t < 300; ++t) drop.push_back(5.0 - 0.01 * t);
    drop.insert(drop.end(), 120, 1.0);
    CHECK(plateau_stop(drop, 100, 0.005));
  }
  SUBCASE("0.1% per window against a 0.5% threshold stops") {
    const std::size_t window = 100;
    std::vector<double> l;
    for (std::size_t t = 0; t < 5 * window; ++t)
      l.push_back(std::pow(0.999, static_cast<double>(t) / window));
    CHECK(plateau_stop(l, window, 0.005));
    // 1% per window clears the same threshold
    std::vector<double> fast;
    for (std::size_t t = 0; t < 5 * window; ++t)
      fast.push_back(std::pow(0.99, static_cast<double>(t) / window));
    CHECK_FALSE(plateau_stop(fast, window, 0.005));
  }
  SUBCASE("too little history never stops") {
    std::vector<double> l(100, 1.0);
    CHECK_FALSE(plateau_stop(l, 100, 0.005));
    CHECK_FALSE(plateau_stop(std::vector<double>{}, 1, 0.0));
  }
  SUBCASE("window 1 compares the last loss with the best earlier one") {
    CHECK(plateau_stop(std::vector<double>{3, 2, 2}, 1, 0.0));
    CHECK_FALSE(plateau_stop(std::vector<double>{3, 2, 1.5}, 1, 0.0));
  }
  CHECK_THROWS_AS(plateau_stop(std::vector<double>{1, 2}, 0, 0.1), InvalidArgument);
}

TEST_CASE("learning rate halves every quarter of the run") {
  TrainConfig c;
  c.learning_rate = 0.08;
  c.max_steps = 100;
  c.plateau_window = 10;
  CHECK(scheduled_lr(c, 0) == 0.08);
  CHECK(scheduled_lr(c, 24) == 0.08);
  CHECK(scheduled_lr(c, 25) == 0.04);
  CHECK(scheduled_lr(c, 50) == 0.02);
  CHECK(scheduled_lr(c, 75) == 0.01);
  CHECK(scheduled_lr(c, 99) == 0.01);
}

TEST_CASE("momentum update matches a hand-stepped single parameter") {
  // w0 = 1, lr 0.1, momentum 0.9, gradients 1, 1, 0.5:
  //   buf 1    -> w 0.9
  //   buf 1.9  -> w 0.71
  //   buf 2.21 -> w 0.489
  std::vector<float> w{1.0f}, buf{0.0f};
  const float grads[] = {1.0f, 1.0f, 0.5f};
  const double expect_w[] = {0.9, 0.71, 0.489};
  const double expect_buf[] = {1.0, 1.9, 2.21};
  for (int k = 0; k < 3; ++k) {
    sgd_momentum_step(w, buf, std::span<const float>(&grads[k], 1), 0.1, 0.9);
    CHECK(w[0] == doctest::Approx(expect_w[k]).epsilon(1e-6));
    CHECK(buf[0] == doctest::Approx(expect_buf[k]).epsilon(1e-6));
  }
  std::vector<float> short_buf;
  CHECK_THROWS_AS(sgd_momentum_step(w, short_buf, std::span<const float>(grads, 1), 0.1, 0.9),
                  InvalidArgument);
}

TEST_CASE("global norm clipping") {
  std::vector<std::vector<float>> g{{3.0f}, {4.0f}};
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0][0] == doctest::Approx(0.6));
  CHECK(g[1][0] == doctest::Approx(0.8));
  std::vector<std::vector<float>> small{{0.3f, 0.4f}};
  CHECK(clip_global_norm(small, 1.0) == doctest::Approx(0.5));
  CHECK(small[0][0] == 0.3f);
  std::vector<std::vector<float>> off{{30.0f, 40.0f}};
  clip_global_norm(off, 0.0);
  CHECK(off[0][1] == 40.0f);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  test::TempDir tmp;
  TrainConfig cfg = small_config();
  cfg.n_vsf = 5;
  const ModelWeights w = init_weights(ModelConfig{5}, 17);
  save_checkpoint(tmp.path() / "a.evck", w, cfg);
  const Checkpoint ck = load_checkpoint(tmp.path() / "a.evck", ModelConfig{5});
  CHECK(ck.config == cfg);
  CHECK(ck.weights.config.n_vsf == 5);
  REQUIRE(ck.weights.groups.size() == w.groups.size());
  for (std::size_t g = 0; g < w.groups.size(); ++g) {
    CHECK(ck.weights.groups[g].name == w.groups[g].name);
    CHECK(ck.weights.groups[g].value.shape == w.groups[g].value.shape);
    CHECK(std::memcmp(ck.weights.groups[g].value.data.data(), w.groups[g].value.data.data(),
                      w.groups[g].value.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("checkpoint validation") {
  test::TempDir tmp;
  const fs::path p = tmp.path() / "m.evck";
  TrainConfig cfg = small_config();
  save_checkpoint(p, init_weights(ModelConfig{10}, 1), cfg);
  const std::string good = slurp(p);
  REQUIRE(good.substr(0, 4) == "EVCK");

  auto error_of = [&](const std::string& bytes, const ModelConfig* expected = nullptr) {
    spit(p, bytes);
    try {
      if (expected) {
        load_checkpoint(p, *expected);
      } else {
        load_checkpoint(p);
      }
    } catch (const InvalidArgument& e) {
      return std::string(e.what());
    }
    return std::string();
  };

  SUBCASE("version mismatch names both versions") {
    std::string bytes = good;
    const std::uint32_t v = 7;
    std::memcpy(bytes.data() + 4, &v, 4);
    const std::string msg = error_of(bytes);
    CHECK(msg.find("version 7 found") != std::string::npos);
    CHECK(msg.find("expected 1") != std::string::npos);
  }
  SUBCASE("bad magic") {
    std::string bytes = good;
    bytes[0] = 'X';
    CHECK(error_of(bytes).find("magic") != std::string::npos);
  }
  SUBCASE("flipped payload byte fails the CRC") {
    std::string bytes = good;
    bytes[bytes.size() / 2] ^= 0x10;
    CHECK(error_of(bytes).find("CRC") != std::string::npos);
  }
  SUBCASE("truncated file") {
    CHECK_FALSE(error_of(good.substr(0, good.size() / 2)).empty());
    CHECK_FALSE(error_of(good.substr(0, 6)).empty());
  }
  SUBCASE("a 10-factor checkpoint refuses a 20-factor model") {
    const ModelConfig twenty{20};
    const std::string msg = error_of(good, &twenty);
    CHECK(msg.find("vsf.tokens") != std::string::npos);
    CHECK(msg.find("[10x128]") != std::string::npos);
    CHECK(msg.find("[20x128]") != std::string::npos);
  }
  CHECK_THROWS_AS(load_checkpoint(tmp.path() / "missing.evck"), IoError);
}

TEST_CASE("split-tape batch gradients equal a single-tape computation") {
  test::TempDir tmp;
  const FrameIndex idx = write_toy_frames(tmp.path(), 2, 2);
  std::vector<SpeechFrame> frames;
  for (const auto& r : idx.rows) frames.push_back(read_frame(idx.resolve(r)));
  std::vector<const SpeechFrame*> ptrs;
  for (const auto& f : frames) ptrs.push_back(&f);
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  const ModelWeights w = init_weights(ModelConfig{10}, 3);
  const TrainConfig cfg = small_config();
  const BatchResult r = batch_gradients(w, ptrs, labels, cfg);

  diff::Tape<float> tape;
  const auto net = Net<float>::bind(tape, w, true);
  std::vector<diff::Var<float>> rows;
  for (const auto& f : frames)
    rows.push_back(diff::reshape(evector(tape.constant(frame_tensor<float>(f)), net).evector,
                                 {1, kEVectorDim}));
  const auto x = diff::l2_normalize(diff::concat(rows));
  const auto loss = ge2e_contrastive(x, loo_centroids(x, labels), labels,
                                     std::vector<double>(4, cfg.alpha), cfg.margin);
  tape.backward(loss);
  CHECK(r.loss == doctest::Approx(loss.value()[0]).epsilon(1e-6));
  // Float rounding from the different summation order scales with the largest
  // gradient anywhere, so tiny groups get an absolute floor.
  double global = 0;
  for (std::size_t g = 0; g < w.groups.size(); ++g)
    for (const float v : tape.gradient(net.vars()[g]).data)
      global = std::max(global, static_cast<double>(std::abs(v)));
  for (std::size_t g = 0; g < w.groups.size(); ++g) {
    const auto ref = tape.gradient(net.vars()[g]);
    double scale = 1e-12;
    for (const float v : ref.data) scale = std::max(scale, static_cast<double>(std::abs(v)));
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i)
      worst = std::max(worst, static_cast<double>(std::abs(ref.data[i] - r.grads[g][i])));
    CHECK_MESSAGE(worst <= 1e-4 * scale + 1e-5 * global, w.groups[g].name);
  }
}

TEST_CASE("batch gradients do not depend on the worker count") {
  test::TempDir tmp;
  const FrameIndex idx = write_toy_frames(tmp.path(), 2, 2);
  std::vector<SpeechFrame> frames;
  for (const auto& r : idx.rows) frames.push_back(read_frame(idx.resolve(r)));
  std::vector<const SpeechFrame*> ptrs;
  for (const auto& f : frames) ptrs.push_back(&f);
  const ModelWeights w = init_weights(ModelConfig{10}, 3);
  const TrainConfig cfg = small_config();
  ::setenv("EVKIT_THREADS", "1", 1);
  const BatchResult one = batch_gradients(w, ptrs, {0, 0, 1, 1}, cfg);
  ::setenv("EVKIT_THREADS", "3", 1);
  const BatchResult three = batch_gradients(w, ptrs, {0, 0, 1, 1}, cfg);
  ::unsetenv("EVKIT_THREADS");
  CHECK(one.loss == three.loss);
  CHECK(one.grads == three.grads);
}

TEST_CASE("training runs") {
  test::TempDir tmp;
  const FrameIndex idx = write_toy_frames(tmp.path(), 2, 2);

  SUBCASE("learning rate 0 leaves the weights and the loss unchanged") {
    TrainConfig cfg = small_config();
    cfg.learning_rate = 0;
    const TrainResult r = train(cfg, idx);
    const ModelWeights init = init_weights(ModelConfig{10}, cfg.seed);
    for (std::size_t g = 0; g < init.groups.size(); ++g)
      CHECK(r.final_weights.groups[g].value.data == init.groups[g].value.data);
    REQUIRE(r.history.losses.size() == 3);
    for (const double l : r.history.losses)
      CHECK(l == doctest::Approx(r.history.losses[0]).epsilon(1e-6));
  }
  SUBCASE("same seed gives the same history, checkpoint and history file") {
    TrainConfig cfg = small_config();
    TrainOptions a, b;
    a.checkpoint_path = tmp.path() / "a.evck";
    a.history_path = tmp.path() / "a.csv";
    b.checkpoint_path = tmp.path() / "b.evck";
    b.history_path = tmp.path() / "b.csv";
    const TrainResult ra = train(cfg, idx, a);
    const TrainResult rb = train(cfg, idx, b);
    CHECK(ra.history.steps == rb.history.steps);
    CHECK(ra.history.losses == rb.history.losses);
    CHECK(ra.history.stop_reason == "max_steps");
    CHECK(slurp(*a.checkpoint_path) == slurp(*b.checkpoint_path));
    const std::string hist = slurp(*a.history_path);
    CHECK(hist == slurp(*b.history_path));
    CHECK(hist.starts_with("step,loss\n0,"));
    CHECK(std::count(hist.begin(), hist.end(), '\n') == 4);
    bool moved = false;
    for (std::size_t g = 0; g < ra.final_weights.groups.size(); ++g)
      moved = moved || ra.final_weights.groups[g].value.data !=
                           init_weights(ModelConfig{10}, cfg.seed).groups[g].value.data;
    CHECK(moved);
  }
  SUBCASE("plateau stop fires on a constant loss") {
    TrainConfig cfg = small_config();
    cfg.max_steps = 50;
    cfg.plateau_window = 2;
    TrainOptions o;
    o.loss_override = [](std::size_t, double) { return 1.0; };
    const TrainResult r = train(cfg, idx, o);
    CHECK(r.history.stop_reason == "plateau");
    CHECK(r.history.losses.size() == 3);
  }
  SUBCASE("divergence keeps the last good checkpoint") {
    TrainConfig cfg = small_config();
    TrainOptions o;
    o.checkpoint_path = tmp.path() / "d.evck";
    o.loss_override = [](std::size_t step, double l) { return step == 2 ? NAN : l; };
    CHECK_THROWS_AS(train(cfg, idx, o), NumericError);
    const Checkpoint ck = load_checkpoint(*o.checkpoint_path, ModelConfig{10});
    CHECK(ck.config == cfg);
  }
  SUBCASE("output directories are created and bad paths fail before any step") {
    TrainConfig cfg = small_config();
    cfg.max_steps = 2;
    cfg.plateau_window = 2;
    TrainOptions o;
    o.checkpoint_path = tmp.path() / "nested" / "run" / "m.evck";
    o.history_path = tmp.path() / "nested" / "logs" / "h.csv";
    train(cfg, idx, o);
    CHECK(std::filesystem::exists(*o.checkpoint_path));
    CHECK(std::filesystem::exists(*o.history_path));

    std::ofstream(tmp.path() / "plain_file") << "x";
    TrainOptions bad;
    bad.checkpoint_path = tmp.path() / "plain_file" / "m.evck";
    std::size_t steps_run = 0;
    bad.on_step = [&](std::size_t, double) { ++steps_run; };
    CHECK_THROWS_AS(train(cfg, idx, bad), IoError);
    CHECK(steps_run == 0);
  }
  SUBCASE("aam loss trains on global speaker classes") {
    TrainConfig cfg = small_config();
    cfg.loss = LossKind::kAam;
    cfg.max_steps = 2;
    cfg.plateau_window = 2;
    const TrainResult r = train(cfg, idx);
    REQUIRE(r.history.losses.size() == 2);
    CHECK(std::isfinite(r.history.losses[1]));
  }
}

TEST_CASE("training refuses impossible batches and evaluation-only data") {
  test::TempDir tmp;
  TrainConfig cfg = small_config();
  cfg.n_speakers = 3;
  const FrameIndex idx = write_toy_frames(tmp.path(), 2, 2);
  CHECK_THROWS_AS(train(cfg, idx), InvalidArgument);
  const FrameIndex held_out = write_toy_frames(tmp.path(), 2, 2, "test1");
  CHECK_THROWS_AS(train(small_config(), held_out), InvalidArgument);
}
