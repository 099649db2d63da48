// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include "evkit/preprocess.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>

#include "evkit/csv.hpp"
#include "evkit/error.hpp"

namespace evkit {

static_assert(std::endian::native == std::endian::little,
              "frame and embedding records are written in host byte order");

std::vector<double> frame_rms(std::span<const float> w) {
  std::vector<double> out;
  if (w.empty()) return out;
  auto rms_of = [&](std::size_t start, std::size_t len) {
    double s = 0.0;
    for (std::size_t i = start; i < start + len; ++i) s += static_cast<double>(w[i]) * w[i];
    return std::sqrt(s / static_cast<double>(len));
  };
  if (w.size() < kUnitLength) {
    out.push_back(rms_of(0, w.size()));
    return out;
  }
  const std::size_t n = (w.size() - kUnitLength) / kUnitStride + 1;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(rms_of(k * kUnitStride, kUnitLength));
  return out;
}

double median_active_rms(std::span<const double> rms, double min_rms) {
  std::vector<double> active;
  for (const double r : rms)
    if (r > min_rms) active.push_back(r);
  if (active.empty()) return 0.0;
  const auto mid = active.begin() + static_cast<std::ptrdiff_t>(active.size() / 2);
  std::nth_element(active.begin(), mid, active.end());
  if (active.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(active.begin(), mid);
  return 0.5 * (lo + hi);
}

std::vector<Span> detect_voice(const AudioSample& sample, const VadConfig& cfg) {
  if (sample.waveform.empty()) throw InvalidArgument("detect_voice: empty waveform");
  const auto rms = frame_rms(sample.waveform);
  const double ref = cfg.reference_rms ? *cfg.reference_rms : median_active_rms(rms, cfg.min_rms);
  std::vector<Span> spans;
  if (ref <= 0.0) return spans;
  const double gate = cfg.threshold * ref;
  const std::size_t len = sample.waveform.size();
  for (std::size_t k = 0; k < rms.size(); ++k) {
    if (rms[k] < gate || rms[k] <= cfg.min_rms) continue;
    const std::size_t start = k * kUnitStride;
    const std::size_t end = std::min(len, start + kUnitLength);
    if (!spans.empty() && start <= spans.back().end) {
      spans.back().end = std::max(spans.back().end, end);
    } else {
      spans.push_back({start, end});
    }
  }
  const auto gap = static_cast<std::size_t>(cfg.merge_gap_ms * kSampleRate / 1000.0);
  std::vector<Span> merged;
  for (const auto& s : spans) {
    if (!merged.empty() && s.start - merged.back().end < gap) {
      merged.back().end = s.end;
    } else {
      merged.push_back(s);
    }
  }
  return merged;
}

std::vector<float> gather_voiced(std::span<const float> w, std::span<const Span> spans) {
  std::vector<float> out;
  for (const auto& s : spans) {
    if (s.start > s.end || s.end > w.size()) throw InvalidArgument("gather_voiced: span out of range");
    out.insert(out.end(), w.begin() + static_cast<std::ptrdiff_t>(s.start),
               w.begin() + static_cast<std::ptrdiff_t>(s.end));
  }
  return out;
}

Segmentation segment(std::span<const float> voiced) {
  Segmentation seg;
  std::size_t pos = 0;
  while (pos + kClipSamples <= voiced.size()) {
    seg.clips.emplace_back(voiced.begin() + static_cast<std::ptrdiff_t>(pos),
                           voiced.begin() + static_cast<std::ptrdiff_t>(pos + kClipSamples));
    pos += kClipSamples;
  }
  const std::size_t tail = voiced.size() - pos;
  if (tail >= kMinTailSamples) {
    std::vector<float> clip(kClipSamples, 0.0f);
    std::copy(voiced.begin() + static_cast<std::ptrdiff_t>(pos), voiced.end(), clip.begin());
    seg.clips.push_back(std::move(clip));
  } else if (tail > 0) {
    seg.dropped_tail = true;
  }
  return seg;
}

std::vector<float> hamming_window(std::size_t n) {
  std::vector<float> w(n);
  if (n == 1) {
    w[0] = 1.0f;
    return w;
  }
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = static_cast<float>(0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                     static_cast<double>(n - 1)));
  }
  return w;
}

SpeechFrame frame(std::span<const float> clip) {
  if (clip.size() != kClipSamples) {
    throw InvalidArgument("frame: clip has " + std::to_string(clip.size()) +
                          " samples, expected 32000");
  }
  static const std::vector<float> window = hamming_window(kUnitLength);
  SpeechFrame f;
  for (std::size_t u = 0; u < kFrameUnits; ++u) {
    const std::size_t start = u * kUnitStride;
    float* col = f.data.data() + u * kUnitLength;
    for (std::size_t i = 0; i < kUnitLength; ++i) {
      const std::size_t s = start + i;
      col[i] = s < kClipSamples ? clip[s] * window[i] : 0.0f;
    }
  }
  return f;
}

void write_frame(const std::filesystem::path& path, const SpeechFrame& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::uint32_t dims[2] = {SpeechFrame::kRows, SpeechFrame::kCols};
  out.write("EVFR", 4);
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(f.data.data()),
            static_cast<std::streamsize>(f.data.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

SpeechFrame read_frame(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  std::uint32_t dims[2];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || std::memcmp(magic, "EVFR", 4) != 0) {
    throw InvalidArgument(path.string() + ": not an EVFR frame record");
  }
  if (dims[0] != SpeechFrame::kRows || dims[1] != SpeechFrame::kCols) {
    throw InvalidArgument(path.string() + ": frame shape " + std::to_string(dims[0]) + "x" +
                          std::to_string(dims[1]) + ", expected 320x200");
  }
  SpeechFrame f;
  in.read(reinterpret_cast<char*>(f.data.data()),
          static_cast<std::streamsize>(f.data.size() * sizeof(float)));
  if (!in) throw InvalidArgument(path.string() + ": truncated frame record");
  return f;
}

FrameIndex FrameIndex::read(const std::filesystem::path& csv_path) {
  const auto t = csv::read(csv_path);
  const std::size_t c_path = t.column("frame_path"), c_spk = t.column("speaker_id"),
                    c_emo = t.column("emotion"), c_clip = t.column("clip_index"),
                    c_src = t.column("source_path"), c_split = t.column("split"), c_val = t.column("valence"),
                    c_aro = t.column("arousal"), c_dom = t.column("dominance"),
                    c_gen = t.column("gender");
  FrameIndex idx;
  idx.base_dir = csv_path.parent_path();
  for (const auto& r : t.rows) {
    FrameRecord rec;
    rec.frame_path = r[c_path];
    rec.speaker_id = r[c_spk];
    rec.emotion = r[c_emo];
    rec.clip_index = static_cast<std::size_t>(csv::to_int(r[c_clip], "clip_index"));
    rec.source_path = r[c_src];
    rec.split = r[c_split];
    rec.valence = csv::to_double(r[c_val], "valence");
    rec.arousal = csv::to_double(r[c_aro], "arousal");
    rec.dominance = csv::to_double(r[c_dom], "dominance");
    rec.gender = r[c_gen];
    idx.rows.push_back(std::move(rec));
  }
  return idx;
}

void FrameIndex::write(const std::filesystem::path& csv_path) const {
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot write " + csv_path.string());
  out << kFrameIndexHeader << '\n';
  for (const auto& r : rows) {
    out << csv::field(r.frame_path) << ',' << csv::field(r.speaker_id) << ','
        << csv::field(r.emotion) << ',' << r.clip_index << ',' << csv::field(r.source_path) << ','
        << csv::field(r.split) << ',' << csv::format_double(r.valence) << ','
        << csv::format_double(r.arousal) << ',' << csv::format_double(r.dominance) << ','
        << csv::field(r.gender) << '\n';
  }
  if (!out) throw IoError("write failed: " + csv_path.string());
}

std::filesystem::path FrameIndex::resolve(const FrameRecord& r) const {
  const std::filesystem::path p(r.frame_path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<Triplet> Batch::triplets() const {
  std::vector<Triplet> out;
  for (std::size_t a = 0; a < frames.size(); ++a)
    for (std::size_t p = 0; p < frames.size(); ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t n = 0; n < frames.size(); ++n)
        if (labels[n] != labels[a]) out.push_back({a, p, n});
    }
  return out;
}

Batch sample_batch(const std::vector<FrameRecord>& pool, std::size_t n_speakers,
                   std::size_t m_frames, std::mt19937_64& rng) {
  if (n_speakers < 1 || m_frames < 1) {
    throw InvalidArgument("sample_batch: n_speakers and m_frames must be positive");
  }
  // std::map keeps speaker order independent of pool order hashing.
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool[i].split == "train") by_speaker[pool[i].speaker_id].push_back(i);

  std::vector<const std::string*> eligible;
  const std::string* weakest = nullptr;
  std::size_t weakest_count = 0;
  for (const auto& [spk, idx] : by_speaker) {
    if (idx.size() >= m_frames) {
      eligible.push_back(&spk);
    } else if (!weakest || idx.size() < weakest_count) {
      weakest = &spk;
      weakest_count = idx.size();
    }
  }
  if (eligible.size() < n_speakers) {
    std::string msg = "sample_batch: need " + std::to_string(n_speakers) + " train speakers with " +
                      std::to_string(m_frames) + " frames, only " +
                      std::to_string(eligible.size()) + " qualify";
    if (weakest) {
      msg += "; speaker '" + *weakest + "' has " + std::to_string(weakest_count) + " frames";
    }
    throw InvalidArgument(msg);
  }

  // Partial Fisher-Yates with explicit index draws keeps the sequence
  // defined by the engine alone.
  auto draw = [&rng](std::size_t bound) {
    return static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(bound));
  };
  for (std::size_t i = 0; i < n_speakers; ++i)
    std::swap(eligible[i], eligible[i + draw(eligible.size() - i)]);

  Batch b;
  b.n_speakers = n_speakers;
  b.m_frames = m_frames;
  for (std::size_t s = 0; s < n_speakers; ++s) {
    auto idx = by_speaker[*eligible[s]];
    for (std::size_t i = 0; i < m_frames; ++i) {
      std::swap(idx[i], idx[i + draw(idx.size() - i)]);
      b.frames.push_back(idx[i]);
      b.labels.push_back(*eligible[s]);
    }
  }
  return b;
}

Batch sample_batch(const std::vector<FrameRecord>& pool, std::size_t n_speakers,
                   std::size_t m_frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_batch(pool, n_speakers, m_frames, rng);
}

}  // namespace evkit
