#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace oct {

enum class Eye { left, right };

std::string to_string(Eye eye);
Eye eye_from_string(const std::string& s);

// Volume-level grading scale.
enum class GradeLabel : int {
  NoLesion = 1,
  OneLesion = 2,
  MoreThanOne = 3,
  Questionable = 4,
  Ungradable = 5,
};

GradeLabel grade_from_int(int v);

// Lesion mask category codes.
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kDrusen = 1;
inline constexpr std::uint8_t kRpd1 = 2;
inline constexpr std::uint8_t kRpd234 = 3;
inline constexpr int kNumMaskCategories = 4;

// Physical scan geometry; full scale is 128 B-scans x 512 A-scans over 6x6 mm.
struct ScanGeometry {
  long n_bscans = 0;
  long height = 0;
  long width = 0;
  std::array<double, 2> fov_mm{6.0, 6.0};
};

// A 3D voxel grid, indexed [bscan][row][col], 8-bit intensities.
struct OctVolume {
  std::string participant_id;
  Eye eye = Eye::left;
  long n_bscans = 0;
  long height = 0;
  long width = 0;
  std::array<double, 2> fov_mm{6.0, 6.0};
  std::vector<std::uint8_t> voxels;

  static OctVolume zeros(long n_bscans, long height, long width,
                         std::array<double, 2> fov_mm = {6.0, 6.0});

  long index(long b, long r, long c) const { return (b * height + r) * width + c; }
  std::uint8_t& at(long b, long r, long c) { return voxels[index(b, r, c)]; }
  std::uint8_t at(long b, long r, long c) const { return voxels[index(b, r, c)]; }
  long numel() const { return n_bscans * height * width; }

  ScanGeometry geometry() const { return {n_bscans, height, width, fov_mm}; }

  // Throws std::invalid_argument on any invariant violation.
  void validate() const;
};

// One byte per pixel over an H x W plane; used for B-scan images and
// per-B-scan mask planes.
struct Plane8 {
  long height = 0;
  long width = 0;
  std::vector<std::uint8_t> v;

  Plane8() = default;
  Plane8(long h, long w) : height(h), width(w), v(static_cast<std::size_t>(h * w), 0) {}

  std::uint8_t& at(long r, long c) { return v[static_cast<std::size_t>(r * width + c)]; }
  std::uint8_t at(long r, long c) const { return v[static_cast<std::size_t>(r * width + c)]; }
  long numel() const { return height * width; }

  bool operator==(const Plane8&) const = default;
};

// Per-pixel lesion categories for a whole volume; same shape and order as the
// paired volume's voxels.
struct LesionMask {
  long n_bscans = 0;
  long height = 0;
  long width = 0;
  std::vector<std::uint8_t> labels;

  static LesionMask zeros(long n_bscans, long height, long width);

  long index(long b, long r, long c) const { return (b * height + r) * width + c; }
  std::uint8_t& at(long b, long r, long c) { return labels[index(b, r, c)]; }
  std::uint8_t at(long b, long r, long c) const { return labels[index(b, r, c)]; }
  long numel() const { return n_bscans * height * width; }

  bool shape_matches(const OctVolume& vol) const {
    return n_bscans == vol.n_bscans && height == vol.height && width == vol.width;
  }

  Plane8 plane(long bscan) const;

  void validate() const;
};

// Per-channel probability maps for one B-scan, [channel][row][col].
struct ProbMap {
  long channels = 0;
  long height = 0;
  long width = 0;
  std::vector<double> v;

  ProbMap() = default;
  ProbMap(long ch, long h, long w)
      : channels(ch), height(h), width(w), v(static_cast<std::size_t>(ch * h * w), 0.0) {}

  double& at(long ch, long r, long c) { return v[static_cast<std::size_t>((ch * height + r) * width + c)]; }
  double at(long ch, long r, long c) const { return v[static_cast<std::size_t>((ch * height + r) * width + c)]; }
};

}  // namespace oct
