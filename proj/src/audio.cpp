// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include "evkit/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "evkit/error.hpp"
#include "evkit/manifest.hpp"

namespace evkit {

std::optional<std::size_t> emotion_index(std::string_view label) {
  for (std::size_t i = 0; i < kEmotions.size(); ++i)
    if (kEmotions[i] == label) return i;
  return std::nullopt;
}

void AudioSample::validate() const {
  if (sample_rate != kSampleRate) {
    throw InvalidArgument("audio: sample rate " + std::to_string(sample_rate) +
                          " Hz, expected 16000");
  }
  for (const float x : waveform) {
    if (!std::isfinite(x)) throw InvalidArgument("audio: non-finite sample in " + source_path);
    if (x < -1.0f || x > 1.0f) {
      throw InvalidArgument("audio: amplitude outside [-1,1] in " + source_path);
    }
  }
  if (!emotion_index(emotion)) throw InvalidArgument("audio: unknown emotion '" + emotion + "'");
}

namespace {

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace

AudioSample load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw InvalidArgument(name + ": not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  AudioSample s;
  s.source_path = name;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = le32(bytes.data() + pos + 4);
    const unsigned char* body = bytes.data() + pos + 8;
    if (pos + 8 + size > bytes.size()) throw InvalidArgument(name + ": truncated chunk");
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (size < 16) throw InvalidArgument(name + ": short fmt chunk");
      const std::uint16_t format = le16(body), channels = le16(body + 2);
      const std::uint32_t rate = le32(body + 4);
      const std::uint16_t bits = le16(body + 14);
      if (format != 1) {
        throw InvalidArgument(name + ": audio format " + std::to_string(format) +
                              ", expected PCM (1)");
      }
      if (channels != 1) {
        throw InvalidArgument(name + ": channel count " + std::to_string(channels) +
                              ", expected mono");
      }
      if (rate != kSampleRate) {
        throw InvalidArgument(name + ": sample rate " + std::to_string(rate) +
                              " Hz, expected 16000");
      }
      if (bits != 16) {
        throw InvalidArgument(name + ": bit depth " + std::to_string(bits) +
                              ", expected 16");
      }
      have_fmt = true;
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw InvalidArgument(name + ": data chunk before fmt");
      const std::size_t n = size / 2;
      s.waveform.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto v = static_cast<std::int16_t>(le16(body + 2 * i));
        s.waveform[i] = static_cast<float>(v) / 32768.0f;
      }
      return s;
    }
    pos += 8 + size + (size & 1);
  }
  throw InvalidArgument(name + (have_fmt ? ": missing data chunk" : ": missing fmt chunk"));
}

AudioSample load_wav(const std::filesystem::path& path, const ManifestRow& row) {
  AudioSample s = load_wav(path);
  s.speaker_id = row.speaker_id;
  s.emotion = row.emotion;
  s.valence = row.valence;
  s.arousal = row.arousal;
  s.dominance = row.dominance;
  s.gender = row.gender;
  s.source_path = row.path;
  return s;
}

void write_wav(const std::filesystem::path& path, std::span<const float> samples,
               int sample_rate) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string buf;
  buf.reserve(44 + data_bytes);
  buf += "RIFF";
  put32(buf, 36 + data_bytes);
  buf += "WAVEfmt ";
  put32(buf, 16);
  put16(buf, 1);
  put16(buf, 1);
  put32(buf, static_cast<std::uint32_t>(sample_rate));
  put32(buf, static_cast<std::uint32_t>(sample_rate) * 2);
  put16(buf, 2);
  put16(buf, 16);
  buf += "data";
  put32(buf, data_bytes);
  for (const float x : samples) {
    const double v = std::round(std::clamp(static_cast<double>(x), -1.0, 1.0) * 32768.0);
    put16(buf, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0))));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace evkit
