#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "octlesion/types.hpp"

namespace oct {

enum class Split { train, val, test, unassigned };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
  std::string volume_path;  // directory holding meta.json + volume.raw
  std::string mask_path;    // empty when the entry has no mask
  std::string participant_id;
  Eye eye = Eye::left;
  GradeLabel grade = GradeLabel::NoLesion;
  Split split = Split::unassigned;

  bool has_mask() const { return !mask_path.empty(); }
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
};

// Volume directory format: meta.json + volume.raw (B-scan-major bytes).
void save_volume(const OctVolume& vol, const std::filesystem::path& dir);
OctVolume load_volume(const std::filesystem::path& dir);

// Mask format: one byte per pixel, same shape and order as the paired volume.
void save_mask(const LesionMask& mask, const std::filesystem::path& path);
LesionMask load_mask(const std::filesystem::path& path, long n_bscans, long height, long width);

// Manifest JSON; paths are stored as written and resolved against the
// manifest's own directory on load.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Participant-level 60:20:20-style splitting: shuffles participants with the
// seeded generator, then cuts by cumulative eye counts, so all eyes of a
// participant land in the same split.
DatasetManifest split_dataset(const DatasetManifest& manifest, std::array<double, 3> ratios,
                              std::uint64_t seed);

// Empty result iff all manifest invariants hold; each violation names the
// offending entry and rule. File checks (existence, decode, shape agreement)
// are skipped when check_files is false.
std::vector<std::string> validate_manifest(const DatasetManifest& manifest, bool check_files = true);

}  // namespace oct
