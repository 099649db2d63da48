// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include "evkit/pipeline.hpp"

#include <chrono>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "evkit/csv.hpp"
#include "evkit/error.hpp"
#include "evkit/parallel.hpp"

namespace evkit {

namespace fs = std::filesystem;

namespace {

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

// ---------------------------------------------------------------------------
// Corpus preprocessing

PreprocessSummary preprocess_corpus(const Manifest& manifest, const fs::path& out_dir,
                                    const VadConfig& vad) {
  if (manifest.rows.empty()) throw InvalidArgument("preprocess: manifest has no rows");
  manifest.validate();
  const std::size_t n = manifest.rows.size();

  PreprocessSummary out;
  out.files = n;
  VadConfig cfg = vad;
  if (!cfg.reference_rms) {
    std::vector<std::vector<double>> per_file(n);
    parallel_for(n, [&](std::size_t i) {
      const auto& row = manifest.rows[i];
      per_file[i] = frame_rms(load_wav(manifest.resolve(row), row).waveform);
    });
    std::vector<double> all;
    for (const auto& r : per_file) all.insert(all.end(), r.begin(), r.end());
    cfg.reference_rms = median_active_rms(all, cfg.min_rms);
  }
  out.vad_reference_rms = *cfg.reference_rms;

  // Frame names: <speaker>/<source stem>_<clip>; a repeated stem for one
  // speaker gets the manifest row number appended.
  std::vector<std::string> stems(n);
  std::set<std::string> taken;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = manifest.rows[i];
    std::string stem = row.speaker_id + "/" + fs::path(row.path).stem().string();
    if (!taken.insert(stem).second) {
      stem += "_r" + std::to_string(i);
      taken.insert(stem);
    }
    stems[i] = stem;
  }

  const fs::path frame_dir = out_dir / "frames";
  make_dirs(frame_dir);
  for (const auto& row : manifest.rows) make_dirs(frame_dir / row.speaker_id);

  std::vector<std::vector<FrameRecord>> records(n);
  std::vector<char> dropped(n, 0);
  parallel_for(n, [&](std::size_t i) {
    const auto& row = manifest.rows[i];
    const AudioSample s = load_wav(manifest.resolve(row), row);
    const auto spans = detect_voice(s, cfg);
    const auto seg = segment(gather_voiced(s.waveform, spans));
    dropped[i] = seg.dropped_tail;
    for (std::size_t c = 0; c < seg.clips.size(); ++c) {
      const std::string rel = "frames/" + stems[i] + "_" + std::to_string(c) + ".evfr";
      write_frame(out_dir / rel, frame(seg.clips[c]));
      records[i].push_back({rel, row.speaker_id, row.emotion, c, row.path, row.split, row.valence,
                            row.arousal, row.dominance, row.gender});
    }
  });

  out.index.base_dir = out_dir;
  for (std::size_t i = 0; i < n; ++i) {
    out.dropped_clips += static_cast<std::size_t>(dropped[i]);
    for (auto& r : records[i]) out.index.rows.push_back(std::move(r));
  }
  out.frames = out.index.rows.size();
  out.index_path = out_dir / "frames.csv";
  out.index.write(out.index_path);
  return out;
}

// ---------------------------------------------------------------------------
// Embedding store

void write_embedding(const fs::path& path, std::span<const float> values) {
  if (values.size() != kEVectorDim) {
    throw InvalidArgument("write_embedding: expected " + std::to_string(kEVectorDim) +
                          " values, got " + std::to_string(values.size()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto dim = static_cast<std::uint32_t>(values.size());
  out.write("EVEC", 4);
  out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<float> read_embedding(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  std::uint32_t dim = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
  if (!in || std::memcmp(magic, "EVEC", 4) != 0) {
    throw InvalidArgument(path.string() + ": not an EVEC embedding record");
  }
  if (dim != kEVectorDim) {
    throw InvalidArgument(path.string() + ": embedding dimension " + std::to_string(dim) +
                          ", expected 256");
  }
  std::vector<float> v(dim);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(dim * sizeof(float)));
  if (!in) throw InvalidArgument(path.string() + ": truncated embedding record");
  return v;
}

EmbeddingStore EmbeddingStore::read(const fs::path& csv_path) {
  const auto t = csv::read(csv_path);
  const std::size_t c_path = t.column("embedding_path"), c_spk = t.column("speaker_id"),
                    c_emo = t.column("emotion"), c_src = t.column("source"),
                    c_val = t.column("valence"), c_aro = t.column("arousal"),
                    c_dom = t.column("dominance"), c_gen = t.column("gender"),
                    c_split = t.column("split"), c_clip = t.column("clip_index");
  EmbeddingStore s;
  s.base_dir = csv_path.parent_path();
  for (const auto& r : t.rows) {
    EmbeddingRecord e;
    e.embedding_path = r[c_path];
    e.speaker_id = r[c_spk];
    e.emotion = r[c_emo];
    e.source = r[c_src];
    e.valence = csv::to_double(r[c_val], "valence");
    e.arousal = csv::to_double(r[c_aro], "arousal");
    e.dominance = csv::to_double(r[c_dom], "dominance");
    e.gender = r[c_gen];
    e.split = r[c_split];
    e.clip_index = static_cast<std::size_t>(csv::to_int(r[c_clip], "clip_index"));
    s.rows.push_back(std::move(e));
  }
  return s;
}

void EmbeddingStore::write(const fs::path& csv_path) const {
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot write " + csv_path.string());
  out << kEmbeddingIndexHeader << '\n';
  for (const auto& r : rows) {
    out << csv::field(r.embedding_path) << ',' << csv::field(r.speaker_id) << ','
        << csv::field(r.emotion) << ',' << csv::field(r.source) << ','
        << csv::format_double(r.valence) << ',' << csv::format_double(r.arousal) << ','
        << csv::format_double(r.dominance) << ',' << csv::field(r.gender) << ','
        << csv::field(r.split) << ','
        << r.clip_index << '\n';
  }
  if (!out) throw IoError("write failed: " + csv_path.string());
}

fs::path EmbeddingStore::resolve(const EmbeddingRecord& r) const {
  const fs::path p(r.embedding_path);
  return p.is_absolute() ? p : base_dir / p;
}

EmbedSummary embed_frames(const ModelWeights& w, const FrameIndex& frames, const fs::path& out_dir) {
  const std::size_t n = frames.rows.size();
  if (n == 0) throw InvalidArgument("embed: frame index is empty");
  std::vector<std::string> rel(n);
  std::set<std::string> taken;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = frames.rows[i];
    rel[i] = "embeddings/" + r.speaker_id + "/" + fs::path(r.frame_path).stem().string() + ".evec";
    if (!taken.insert(rel[i]).second) throw InvalidArgument("embed: duplicate frame name " + rel[i]);
    make_dirs(out_dir / "embeddings" / r.speaker_id);
  }

  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(n, [&](std::size_t i) {
    const SpeechFrame f = read_frame(frames.resolve(frames.rows[i]));
    write_embedding(out_dir / rel[i], evector(f, w).values.data);
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  EmbedSummary out;
  out.store.base_dir = out_dir;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = frames.rows[i];
    out.store.rows.push_back({rel[i], r.speaker_id, r.emotion, r.source_path, r.valence, r.arousal,
                              r.dominance, r.gender, r.split, r.clip_index});
  }
  out.index_path = out_dir / "embeddings.csv";
  out.store.write(out.index_path);
  out.ms_per_frame = 1000.0 * secs / static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

Aggregation parse_aggregation(const std::string& name) {
  if (name == "utterance") return Aggregation::kUtterance;
  if (name == "clip") return Aggregation::kClip;
  throw InvalidArgument("unknown aggregation '" + name + "' (expected utterance or clip)");
}

std::vector<ScoredItem> gather_items(const EmbeddingStore& store, const EvalConfig& cfg) {
  const std::set<std::string> splits(cfg.splits.begin(), cfg.splits.end());
  std::vector<ScoredItem> items;
  std::vector<std::vector<std::vector<float>>> clips;
  std::map<std::string, std::size_t> by_source;
  for (const auto& r : store.rows) {
    if (!splits.contains(r.split)) continue;
    std::vector<float> e = read_embedding(store.resolve(r));
    std::size_t k;
    const std::string key = cfg.aggregation == Aggregation::kUtterance ? r.source : r.embedding_path;
    if (const auto it = by_source.find(key); it != by_source.end()) {
      k = it->second;
    } else {
      k = items.size();
      by_source.emplace(key, k);
      items.push_back({r.speaker_id, r.emotion, r.source, r.gender, r.valence, r.arousal,
                       r.dominance, {}});
      clips.emplace_back();
    }
    clips[k].push_back(std::move(e));
  }
  for (std::size_t k = 0; k < items.size(); ++k) {
    items[k].embedding = cfg.aggregation == Aggregation::kUtterance ? utterance_embedding(clips[k])
                                                                    : std::move(clips[k].front());
  }
  return items;
}

ScoreTable score_items(const std::vector<ScoredItem>& items, const EvalConfig& cfg, bool* few_pairs) {
  std::vector<std::size_t> groups;
  if (cfg.aggregation == Aggregation::kClip) {
    std::map<std::string, std::size_t> ids;
    for (const auto& it : items) groups.push_back(ids.emplace(it.source, ids.size()).first->second);
  }
  const PairSample ps = sample_pairs(items.size(), cfg.fraction, cfg.seed, groups);
  if (few_pairs) *few_pairs = ps.few_pairs;
  ScoreTable t;
  t.fraction = cfg.fraction;
  t.seed = cfg.seed;
  t.records.reserve(ps.pairs.size());
  for (const auto& [i, j] : ps.pairs) {
    const auto& a = items[i];
    const auto& b = items[j];
    ScoreRecord r;
    r.identity_a = a.speaker_id;
    r.identity_b = b.speaker_id;
    r.emotion_a = a.emotion;
    r.emotion_b = b.emotion;
    r.valence_a = a.valence;
    r.arousal_a = a.arousal;
    r.dominance_a = a.dominance;
    r.valence_b = b.valence;
    r.arousal_b = b.arousal;
    r.dominance_b = b.dominance;
    r.gender_a = a.gender;
    r.gender_b = b.gender;
    r.score = score_pair(a.embedding, b.embedding);
    r.is_genuine = a.speaker_id == b.speaker_id;
    t.records.push_back(std::move(r));
  }
  return t;
}

EvalOutputs evaluate(const EmbeddingStore& store, const EvalConfig& cfg) {
  const auto items = gather_items(store, cfg);
  if (items.size() < 2) {
    throw InvalidArgument("evaluate: need at least 2 items in the selected splits, found " +
                          std::to_string(items.size()));
  }
  EvalOutputs out;
  out.table = score_items(items, cfg, &out.few_pairs);
  out.metrics = compute_metrics(out.table, cfg.c_miss, cfg.c_fm, cfg.p_target);
  out.det = det_curve(out.table, cfg.det_points);
  out.histograms = score_distributions(out.table, cfg.histogram_bins);
  out.grid = emotion_grid(out.table, emotion_centroids(out.table));
  return out;
}

void write_eval_outputs(const EvalOutputs& out, const fs::path& dir) {
  make_dirs(dir);
  write_metrics_json(dir / "metrics.json", out.metrics);
  write_scores_csv(dir / "scores.csv", out.table);
  write_det_csv(dir / "det.csv", out.det);
  write_histogram_csv(dir / "histogram.csv", out.histograms);
  write_grid_csv(dir / "emotion_grid.csv", out.grid);
}

}  // namespace evkit
