#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octlesion/manifest.hpp"
#include "octlesion/types.hpp"

namespace oct::phantom {

enum class LesionKind { drusen, rpd1, rpd2to4 };
enum class Corruption { none, heavy_noise, shadow_band, outer_retina_clip, vertical_flip, optical_artifact };

std::string to_string(LesionKind k);
LesionKind lesion_kind_from_string(const std::string& s);
std::string to_string(Corruption c);
Corruption corruption_from_string(const std::string& s);

// Mask category code a lesion kind maps to.
std::uint8_t mask_code(LesionKind k);

struct LesionPlan {
  LesionKind kind = LesionKind::drusen;
  long count = 0;
  std::array<long, 2> size_px{6, 14};       // lateral footprint, columns
  std::array<double, 2> amplitude_px{4, 8}; // vertical extent of the deposit, rows
};

// Band stack, top to bottom: vitreous, inner retina, EZ-like bright line,
// sub-EZ gap, RPE-like bright line, choroid. Intensities are 8-bit levels.
struct BackgroundModel {
  double vitreous = 12.0;
  double inner_retina = 85.0;
  double ez_line = 195.0;
  double sub_ez = 45.0;
  double rpe_line = 230.0;
  double choroid = 70.0;
  double jitter_sigma = 2.0;     // per-voxel intensity jitter, gray levels
  double undulation_px = 1.5;    // smooth axial wobble of the band boundaries

  static constexpr int layer_count() { return 6; }
};

// Lesion fill intensities; both sit >= 10 gray levels away from the bands
// they occupy, which keeps the corpus separable at desk scale.
struct LesionAppearance {
  double drusen_fill = 130.0;
  double rpd_fill = 150.0;
  double rpd1_speckle_sigma = 18.0;
  double rpd1_speckle_density = 0.65;
};

struct CorruptionParams {
  double noise_sigma = 14.0;       // heavy_noise; generate() sets 7x jitter
  double shadow_band_frac = 0.22;  // fraction of columns zeroed
  double clip_row_frac = 0.45;     // rows >= frac*height are blanked
  double flip_bscan_prob = 0.5;    // vertical_flip; at least one always flips
  double artifact_amplitude = 40.0;
  double artifact_wavelength_px = 7.0;
};

struct PhantomSpec {
  long n_bscans = 16;
  long height = 64;
  long width = 128;
  std::array<double, 2> fov_mm{6.0, 6.0};
  BackgroundModel background;
  LesionAppearance appearance;
  std::vector<LesionPlan> lesions;
  Corruption corruption = Corruption::none;
  CorruptionParams corruption_params;
  std::uint64_t seed = 0;
  std::string participant_id = "phantom";
  Eye eye = Eye::left;

  void validate() const;
};

nlohmann::json to_json(const PhantomSpec& spec);
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);

struct PhantomSample {
  OctVolume volume;
  LesionMask mask;
  GradeLabel grade = GradeLabel::NoLesion;
};

// Deterministic in spec.seed. The mask labels exactly the injected deposit
// pixels; grade is Ungradable when corrupted, else follows the lesion count.
PhantomSample generate(const PhantomSpec& spec);

// Deterministic in seed; Corruption::none is the identity.
OctVolume corrupt(const OctVolume& vol, Corruption corruption, std::uint64_t seed,
                  const CorruptionParams& params = {});

// Categories: control, single, lesion, questionable, ungradable, ood.
// Writes volumes/masks plus manifest.json under out_dir; per-category counts
// are exact and generation seeds are base_seed + running index.
DatasetManifest generate_dataset(const std::map<std::string, long>& n_per_category,
                                 std::uint64_t base_seed, const std::filesystem::path& out_dir,
                                 const PhantomSpec& base = {});

}  // namespace oct::phantom
