// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include "evkit/manifest.hpp"

#include <fstream>
#include <unordered_set>

#include "evkit/audio.hpp"
#include "evkit/csv.hpp"
#include "evkit/error.hpp"

namespace evkit {

bool is_valid_split(std::string_view split) {
  return split == "train" || split == "val" || split == "test1" || split == "test2";
}

Manifest Manifest::read(const std::filesystem::path& csv_path) {
  const auto table = csv::read(csv_path);
  const std::size_t c_path = table.column("path"), c_spk = table.column("speaker_id"),
                    c_emo = table.column("emotion"), c_val = table.column("valence"),
                    c_aro = table.column("arousal"), c_dom = table.column("dominance"),
                    c_gen = table.column("gender"), c_split = table.column("split");
  Manifest m;
  m.base_dir = csv_path.parent_path();
  for (const auto& r : table.rows) {
    ManifestRow row;
    row.path = r[c_path];
    row.speaker_id = r[c_spk];
    row.emotion = r[c_emo];
    row.valence = csv::to_double(r[c_val], "valence");
    row.arousal = csv::to_double(r[c_aro], "arousal");
    row.dominance = csv::to_double(r[c_dom], "dominance");
    row.gender = r[c_gen];
    row.split = r[c_split];
    m.rows.push_back(std::move(row));
  }
  m.validate();
  return m;
}

void Manifest::write(const std::filesystem::path& csv_path) const {
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot write " + csv_path.string());
  out << kManifestHeader << '\n';
  for (const auto& r : rows) {
    out << csv::field(r.path) << ',' << csv::field(r.speaker_id) << ',' << csv::field(r.emotion) << ','
        << csv::format_double(r.valence) << ',' << csv::format_double(r.arousal) << ','
        << csv::format_double(r.dominance) << ',' << csv::field(r.gender) << ','
        << csv::field(r.split) << '\n';
  }
  if (!out) throw IoError("write failed: " + csv_path.string());
}

void Manifest::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& r : rows) {
    if (!seen.insert(r.path).second) throw InvalidArgument("manifest: duplicate path " + r.path);
    if (!is_valid_split(r.split)) {
      throw InvalidArgument("manifest: unknown split '" + r.split + "' for " + r.path);
    }
    if (!emotion_index(r.emotion)) {
      throw InvalidArgument("manifest: unknown emotion '" + r.emotion + "' for " + r.path);
    }
    for (const double d : {r.valence, r.arousal, r.dominance}) {
      if (!(d >= 0.0 && d <= 5.0)) {
        throw InvalidArgument("manifest: emotion dimension outside [0,5] for " + r.path);
      }
    }
  }
}

std::filesystem::path Manifest::resolve(const ManifestRow& row) const {
  const std::filesystem::path p(row.path);
  return p.is_absolute() ? p : base_dir / p;
}

}  // namespace evkit
