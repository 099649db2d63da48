// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "doctest.h"
#include "evkit/audio.hpp"
#include "evkit/error.hpp"
#include "evkit/manifest.hpp"
#include "evkit/preprocess.hpp"
#include "test_util.hpp"

using namespace evkit;

namespace {

// Hand-built WAV header so the reader is tested against bytes it did not
// write itself.
void write_raw_wav(const std::filesystem::path& p, std::uint16_t format, std::uint16_t channels,
                   std::uint32_t rate, std::uint16_t bits, const std::vector<std::int16_t>& pcm) {
  auto u32 = [](std::ofstream& o, std::uint32_t v) { o.write(reinterpret_cast<char*>(&v), 4); };
  auto u16 = [](std::ofstream& o, std::uint16_t v) { o.write(reinterpret_cast<char*>(&v), 2); };
  std::ofstream o(p, std::ios::binary);
  const auto bytes = static_cast<std::uint32_t>(pcm.size() * 2);
  o.write("RIFF", 4);
  u32(o, 36 + bytes);
  o.write("WAVEfmt ", 8);
  u32(o, 16);
  u16(o, format);
  u16(o, channels);
  u32(o, rate);
  u32(o, rate * channels * bits / 8);
  u16(o, static_cast<std::uint16_t>(channels * bits / 8));
  u16(o, bits);
  o.write("data", 4);
  u32(o, bytes);
  o.write(reinterpret_cast<const char*>(pcm.data()), static_cast<std::streamsize>(bytes));
}

AudioSample tone_sandwich() {
  AudioSample s;
  s.waveform.assign(48000, 0.0f);
  for (std::size_t i = 16000; i < 32000; ++i)
    s.waveform[i] = static_cast<float>(std::sin(2.0 * std::numbers::pi * 440.0 * i / 16000.0));
  return s;
}

}  // namespace

TEST_CASE("load_wav scaling and duration") {
  test::TempDir dir;
  const auto p = dir.path() / "a.wav";
  write_raw_wav(p, 1, 1, 16000, 16, std::vector<std::int16_t>(16000, 0));
  auto s = load_wav(p);
  CHECK(s.waveform.size() == 16000);
  CHECK(std::all_of(s.waveform.begin(), s.waveform.end(), [](float x) { return x == 0.0f; }));

  write_raw_wav(p, 1, 1, 16000, 16, {16384, -32768, 32767});
  s = load_wav(p);
  CHECK(s.waveform[0] == 0.5f);
  CHECK(s.waveform[1] == -1.0f);

  write_wav(p, std::vector<float>(56000, 0.25f));
  CHECK(load_wav(p).waveform.size() == 56000);
  CHECK(load_wav(p).duration_s() == doctest::Approx(3.5));
}

TEST_CASE("load_wav rejects the wrong format with a named property") {
  test::TempDir dir;
  const auto p = dir.path() / "bad.wav";
  auto message = [&] {
    try {
      load_wav(p);
    } catch (const InvalidArgument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  write_raw_wav(p, 1, 1, 8000, 16, {0, 0});
  CHECK(message().find("sample rate") != std::string::npos);
  write_raw_wav(p, 1, 2, 16000, 16, {0, 0});
  CHECK(message().find("channel") != std::string::npos);
  write_raw_wav(p, 1, 1, 16000, 8, {0, 0});
  CHECK(message().find("bit depth") != std::string::npos);
  CHECK_THROWS_AS(load_wav(dir.path() / "missing.wav"), IoError);
}

TEST_CASE("detect_voice examples") {
  AudioSample silent;
  silent.waveform.assign(16000, 0.0f);
  CHECK(detect_voice(silent).empty());

  const auto s = tone_sandwich();
  const auto spans = detect_voice(s);
  REQUIRE(spans.size() == 1);
  CHECK(std::abs(static_cast<long>(spans[0].start) - 16000) <= 320);
  CHECK(std::abs(static_cast<long>(spans[0].end) - 32000) <= 320);

  // independent oracle: sum the energy of each frame directly
  std::vector<std::size_t> voiced;
  std::vector<double> active;
  for (std::size_t k = 0; k + 320 <= s.waveform.size(); k += 160) {
    double e = 0;
    for (std::size_t i = k; i < k + 320; ++i) e += double(s.waveform[i]) * s.waveform[i];
    const double rms = std::sqrt(e / 320);
    if (rms > 1e-4) active.push_back(rms);
  }
  std::sort(active.begin(), active.end());
  const double ref = active.size() % 2 ? active[active.size() / 2]
                                       : 0.5 * (active[active.size() / 2 - 1] + active[active.size() / 2]);
  for (std::size_t k = 0; k + 320 <= s.waveform.size(); k += 160) {
    double e = 0;
    for (std::size_t i = k; i < k + 320; ++i) e += double(s.waveform[i]) * s.waveform[i];
    if (std::sqrt(e / 320) >= 0.5 * ref) voiced.push_back(k);
  }
  CHECK(spans[0].start == voiced.front());
  CHECK(spans[0].end == voiced.back() + 320);

  AudioSample loud;
  loud.waveform.assign(20000, 0.3f);
  const auto all = detect_voice(loud);
  REQUIRE(all.size() == 1);
  CHECK(all[0] == Span{0, 20000});
}

TEST_CASE("detect_voice merges short gaps") {
  AudioSample s;
  s.waveform.assign(32000, 0.5f);
  std::fill(s.waveform.begin() + 10000, s.waveform.begin() + 10800, 0.0f);  // 50 ms gap
  CHECK(detect_voice(s).size() == 1);
  std::fill(s.waveform.begin() + 20000, s.waveform.begin() + 24000, 0.0f);  // 250 ms gap
  CHECK(detect_voice(s).size() == 2);
}

TEST_CASE("segment drop/pad rule") {
  CHECK(segment(std::vector<float>(96000, 0.1f)).clips.size() == 3);
  const auto five = segment(std::vector<float>(83200, 0.1f));
  REQUIRE(five.clips.size() == 3);
  CHECK(five.clips[2][19199] == 0.1f);
  CHECK(five.clips[2][19200] == 0.0f);
  CHECK(five.clips[2].size() == 32000);
  const auto short_audio = segment(std::vector<float>(12800, 0.1f));
  CHECK(short_audio.clips.empty());
  CHECK(short_audio.dropped_tail);
}

TEST_CASE("segment covers the voiced audio except the dropped tail") {
  for (std::size_t len : {0u, 1000u, 32000u, 47999u, 48000u, 70001u, 100000u}) {
    std::vector<float> v(len);
    for (std::size_t i = 0; i < len; ++i) v[i] = static_cast<float>(i + 1);
    const auto seg = segment(v);
    std::size_t pos = 0;
    for (const auto& c : seg.clips) {
      CHECK(c.size() == kClipSamples);
      for (std::size_t i = 0; i < c.size() && pos < len; ++i, ++pos) CHECK(c[i] == v[pos]);
    }
    const std::size_t covered = std::min(len, seg.clips.size() * kClipSamples);
    CHECK(len - covered < kMinTailSamples);
  }
}

TEST_CASE("frame geometry") {
  CHECK((32000 - 320) / 160 + 1 == 199);
  CHECK((kPaddedClipSamples - 320) / 160 + 1 == 200);

  const auto zero = frame(std::vector<float>(32000, 0.0f));
  CHECK(zero.data.size() == 320u * 200u);
  CHECK(std::all_of(zero.data.begin(), zero.data.end(), [](float x) { return x == 0.0f; }));

  const auto w = hamming_window();
  CHECK(w[0] == doctest::Approx(0.08));
  CHECK(w[319] == doctest::Approx(0.08));
  const auto ones = frame(std::vector<float>(32000, 1.0f));
  for (std::size_t c = 0; c < 199; ++c)
    for (std::size_t r = 0; r < 320; ++r) CHECK(ones.at(r, c) == w[r]);
  for (std::size_t r = 0; r < 160; ++r) CHECK(ones.at(r, 199) == w[r]);
  for (std::size_t r = 160; r < 320; ++r) CHECK(ones.at(r, 199) == 0.0f);

  CHECK_THROWS_AS(frame(std::vector<float>(31999)), InvalidArgument);
}

TEST_CASE("frame is linear in the clip") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(-1, 1);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<float> clip(32000);
    for (auto& x : clip) x = u(rng);
    const float a = u(rng) * 3.0f;
    auto scaled = clip;
    for (auto& x : scaled) x *= a;
    const auto f1 = frame(clip), f2 = frame(scaled);
    for (std::size_t i = 0; i < f1.data.size(); ++i)
      CHECK(std::abs(f2.data[i] - a * f1.data[i]) <= 1e-6f * (1.0f + std::abs(f2.data[i])));
  }
}

TEST_CASE("EVFR records round-trip and reject corruption") {
  test::TempDir dir;
  std::vector<float> clip(32000);
  for (std::size_t i = 0; i < clip.size(); ++i) clip[i] = std::sin(0.01f * static_cast<float>(i));
  const auto f = frame(clip);
  const auto p = dir.path() / "f.evfr";
  write_frame(p, f);
  CHECK(std::filesystem::file_size(p) == 12 + 64000 * 4);
  CHECK(read_frame(p).data == f.data);
  {
    std::fstream io(p, std::ios::in | std::ios::out | std::ios::binary);
    io.write("XXXX", 4);
  }
  CHECK_THROWS_AS(read_frame(p), InvalidArgument);
}

TEST_CASE("manifest round trip and validation") {
  test::TempDir dir;
  Manifest m;
  m.rows.push_back({"a.wav", "spk0", "happy", 3.5, 4.0, 2.5, "female", "train"});
  m.rows.push_back({"b.wav", "spk1", "sad", 1.5, 1.0, 2.0, "male", "test1"});
  m.write(dir.path() / "m.csv");
  const auto back = Manifest::read(dir.path() / "m.csv");
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[1].emotion == "sad");
  CHECK(back.rows[0].arousal == 4.0);
  CHECK(back.resolve(back.rows[0]) == dir.path() / "a.wav");

  auto dup = m;
  dup.rows.push_back(m.rows[0]);
  CHECK_THROWS_AS(dup.validate(), InvalidArgument);
  auto bad_split = m;
  bad_split.rows[0].split = "dev";
  CHECK_THROWS_AS(bad_split.validate(), InvalidArgument);
  auto bad_emotion = m;
  bad_emotion.rows[0].emotion = "bored";
  CHECK_THROWS_AS(bad_emotion.validate(), InvalidArgument);
}

namespace {

std::vector<FrameRecord> pool(std::size_t speakers, std::size_t frames_each) {
  std::vector<FrameRecord> p;
  for (std::size_t s = 0; s < speakers; ++s)
    for (std::size_t f = 0; f < frames_each; ++f)
      p.push_back({"f" + std::to_string(s) + "_" + std::to_string(f), "spk" + std::to_string(s),
                   "neutral", f, "u", "train"});
  p.push_back({"held_out", "spk_test", "neutral", 0, "u", "test1"});
  return p;
}

}  // namespace

TEST_CASE("sample_batch examples") {
  const auto p = pool(10, 6);
  const auto b = sample_batch(p, 2, 2, std::uint64_t{7});
  CHECK(b.frames.size() == 4);
  for (const auto& t : b.triplets()) {
    CHECK(b.labels[t.anchor] == b.labels[t.positive]);
    CHECK(b.labels[t.anchor] != b.labels[t.negative]);
    CHECK(t.anchor != t.positive);
  }
  CHECK(b.triplets().size() == 4 * 1 * 2);

  const auto again = sample_batch(p, 2, 2, std::uint64_t{7});
  CHECK(again.frames == b.frames);
  CHECK(again.labels == b.labels);

  const auto big = sample_batch(p, 8, 4, std::uint64_t{1});
  CHECK(big.frames.size() == 32);
  CHECK(std::set<std::string>(big.labels.begin(), big.labels.end()).size() == 8);
  for (std::size_t i : big.frames) CHECK(p[i].split == "train");
  CHECK(std::set<std::size_t>(big.frames.begin(), big.frames.end()).size() == 32);
}

TEST_CASE("sample_batch names a deficient speaker") {
  auto p = pool(3, 4);
  p.erase(p.begin() + 4, p.begin() + 7);  // spk1 keeps one frame
  try {
    sample_batch(p, 3, 2, std::uint64_t{0});
    FAIL("expected an error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("spk1") != std::string::npos);
  }
}

TEST_CASE("triplet label constraints hold for every seed") {
  const auto p = pool(12, 5);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto b = sample_batch(p, 4, 3, seed);
    for (const auto& t : b.triplets()) {
      REQUIRE(b.labels[t.anchor] == b.labels[t.positive]);
      REQUIRE(b.labels[t.anchor] != b.labels[t.negative]);
    }
  }
}
