#include "octlesion/types.hpp"

#include <stdexcept>

namespace oct {

std::string to_string(Eye eye) { return eye == Eye::left ? "left" : "right"; }

Eye eye_from_string(const std::string& s) {
  if (s == "left") return Eye::left;
  if (s == "right") return Eye::right;
  throw std::invalid_argument("invalid eye value: " + s);
}

GradeLabel grade_from_int(int v) {
  if (v < 1 || v > 5) throw std::invalid_argument("grade must be in 1..5, got " + std::to_string(v));
  return static_cast<GradeLabel>(v);
}

OctVolume OctVolume::zeros(long n_bscans, long height, long width, std::array<double, 2> fov_mm) {
  OctVolume vol;
  vol.n_bscans = n_bscans;
  vol.height = height;
  vol.width = width;
  vol.fov_mm = fov_mm;
  vol.voxels.assign(static_cast<std::size_t>(n_bscans * height * width), 0);
  vol.validate();
  return vol;
}

void OctVolume::validate() const {
  if (n_bscans < 1) throw std::invalid_argument("volume needs n_bscans >= 1");
  if (height < 8 || width < 8) throw std::invalid_argument("volume needs height >= 8 and width >= 8");
  if (fov_mm[0] <= 0.0 || fov_mm[1] <= 0.0) throw std::invalid_argument("fov_mm components must be > 0");
  if (static_cast<long>(voxels.size()) != numel())
    throw std::invalid_argument("voxel buffer length " + std::to_string(voxels.size()) +
                                " does not match shape " + std::to_string(n_bscans) + "x" +
                                std::to_string(height) + "x" + std::to_string(width));
}

LesionMask LesionMask::zeros(long n_bscans, long height, long width) {
  LesionMask m;
  m.n_bscans = n_bscans;
  m.height = height;
  m.width = width;
  m.labels.assign(static_cast<std::size_t>(n_bscans * height * width), 0);
  return m;
}

Plane8 LesionMask::plane(long bscan) const {
  Plane8 p(height, width);
  const std::uint8_t* src = labels.data() + static_cast<std::size_t>(bscan * height * width);
  std::copy(src, src + height * width, p.v.begin());
  return p;
}

void LesionMask::validate() const {
  if (static_cast<long>(labels.size()) != numel())
    throw std::invalid_argument("mask buffer length does not match shape");
  for (std::uint8_t code : labels)
    if (code > 3) throw std::invalid_argument("mask label codes must be in {0,1,2,3}");
}

}  // namespace oct
