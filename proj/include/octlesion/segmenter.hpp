#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "octlesion/gates.hpp"
#include "octlesion/manifest.hpp"
#include "octlesion/net.hpp"
#include "octlesion/types.hpp"

namespace oct::seg {

// One training sample: a B-scan image with its mask plane.
struct BscanSample {
  Plane8 image;
  Plane8 mask;
  std::string participant_id;
};

using BscanSet = std::vector<BscanSample>;

enum class BscanSelection { all, balanced };

// Collects B-scans from every masked volume of a split. balanced keeps all
// lesion-bearing planes plus an equally sized seeded draw of lesion-free
// ones.
BscanSet collect_bscans(const DatasetManifest& manifest, Split split,
                        BscanSelection selection = BscanSelection::balanced, std::uint64_t seed = 0);

struct FoldPlan {
  int k = 5;
  std::vector<int> assignments;  // per sample, 0..k-1
};

// Participant-disjoint, participant-count-balanced fold assignment.
FoldPlan plan_folds(const BscanSet& set, int k, std::uint64_t seed);

struct SegEnsemble {
  std::vector<nn::MiniNet> members;  // one per fold
  int depth = 3;
  int base_width = 8;
};

struct SegTrainResult {
  SegEnsemble ensemble;
  std::vector<gates::TrainLog> fold_logs;
};

// Per fold: train on the other folds with in-plane augmentation and
// per-pixel cross-entropy, keep the checkpoint with the best held-out
// foreground-mean Dice.
SegTrainResult train_seg(const BscanSet& set, const FoldPlan& plan, const gates::TrainConfig& cfg,
                         int depth = 3, int base_width = 8, bool parallel = true);

// Pixelwise mean of the member probability maps; channels
// {background, drusen, rpd1, rpd2to4}.
ProbMap predict_bscan(const SegEnsemble& ensemble, const Plane8& image);
ProbMap probmap_from_tensor(const nn::Tensor& probs);  // (1,C,H,W) or (C,H,W)

// Discretization rule shared with the FROC sweep: the winning lesion
// category must beat background and reach the confidence threshold.
Plane8 mask_from_probs(const ProbMap& probs, double lesion_prob_threshold);

LesionMask predict_volume_mask(const SegEnsemble& ensemble, const OctVolume& vol, double threshold);

struct LesionAreas {
  // Indexed by category code 1..3; index 0 is unused padding.
  std::array<std::vector<long>, 4> pixels_per_bscan;  // per category, one entry per B-scan
  std::array<long, 4> total_pixels{0, 0, 0, 0};
  std::array<double, 4> enface_area_mm2{0.0, 0.0, 0.0, 0.0};
  double rpd_combined_area_mm2 = 0.0;  // union of stage-1 and stage-2..4 columns
};

// Pixel counts are exact; en-face area counts lesion-bearing A-scan columns
// per B-scan times the column and B-scan pitches.
LesionAreas quantify(const LesionMask& mask, const ScanGeometry& geometry);

// En-face area of the union of the given categories.
double enface_area_mm2(const LesionMask& mask, std::span<const std::uint8_t> categories,
                       const ScanGeometry& geometry);

void save_seg_ensemble(const SegEnsemble& ensemble, const std::filesystem::path& dir);
SegEnsemble load_seg_ensemble(const std::filesystem::path& dir);

// Probability-map export: header JSON + raw float32 planes.
void save_probmaps(const std::vector<ProbMap>& maps, const std::filesystem::path& dir);
std::vector<ProbMap> load_probmaps(const std::filesystem::path& dir);

}  // namespace oct::seg
