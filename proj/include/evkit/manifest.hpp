// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace evkit {

inline constexpr std::string_view kManifestHeader =
    "path,speaker_id,emotion,valence,arousal,dominance,gender,split";

bool is_valid_split(std::string_view split);

struct ManifestRow {
  std::string path;
  std::string speaker_id;
  std::string emotion;
  double valence = 0.0;
  double arousal = 0.0;
  double dominance = 0.0;
  std::string gender;
  std::string split;
};

/// Audio inventory with labels and partition. Relative paths resolve
/// against `base_dir` (the manifest's directory when read from disk).
struct Manifest {
  std::vector<ManifestRow> rows;
  std::filesystem::path base_dir;

  static Manifest read(const std::filesystem::path& csv_path);
  void write(const std::filesystem::path& csv_path) const;

  /// Unique paths, known splits and emotions, dimensions in [0, 5].
  void validate() const;

  std::filesystem::path resolve(const ManifestRow& row) const;
};

}  // namespace evkit
