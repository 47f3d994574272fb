#pragma once

#include <cstdint>
#include <optional>

#include <nlohmann/json.hpp>

#include "octlesion/types.hpp"

namespace oct::aug {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Stochastic training augmentation: rotation, shear, zoom and translation in
// the B-scan plane, translation across B-scans, horizontal flip, gaussian
// noise and gamma correction. Noise and gamma act on intensities normalized
// to [0, 1].
struct AugmentConfig {
  Interval rotation_deg{-20.0, 20.0};
  Interval shear_frac{-0.10, 0.10};
  Interval zoom_frac{-0.10, 0.10};
  Interval translate_bscan_px{-10.0, 10.0};
  Interval translate_z_px{-2.0, 2.0};
  double hflip_prob = 0.15;
  double noise_mean = 0.0;
  double noise_sigma = 0.1;
  double noise_prob = 0.15;
  Interval gamma_range{0.75, 3.0};
  double gamma_prob = 0.15;

  void validate() const;
};

nlohmann::json to_json(const AugmentConfig&);
AugmentConfig augment_config_from_json(const nlohmann::json&);

// A concrete draw: one set of transform parameters for a whole volume.
struct AugmentDraw {
  double rotation_deg = 0.0;
  double shear = 0.0;
  double zoom = 0.0;
  double translate_x = 0.0;
  double translate_y = 0.0;
  long translate_z = 0;
  bool hflip = false;
  bool noise = false;
  double noise_mean = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
  bool gamma_on = false;
  double gamma = 1.0;
};

AugmentDraw sample_params(const AugmentConfig& cfg, std::uint64_t seed);

// Fixed application order: geometric (rotate, shear, zoom, translate
// composed into one in-plane affine; z-translation across B-scans), then
// flip, then noise, then gamma. Output shape matches the input; intensities
// are clamped back to [0, 255].
OctVolume apply(const OctVolume& vol, const AugmentDraw& draw);
OctVolume augment_volume(const OctVolume& vol, const AugmentConfig& cfg, std::uint64_t seed);

// Geometric-only application to a paired mask (nearest-neighbour labels,
// zero fill); photometric steps never touch labels.
LesionMask apply_to_mask(const LesionMask& mask, const AugmentDraw& draw);

// 2D restriction for B-scan training: same draw semantics minus the
// z-translation. The mask plane may be null.
void augment_bscan(Plane8& image, Plane8* mask, const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace oct::aug
