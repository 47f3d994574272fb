#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octlesion/gates.hpp"
#include "octlesion/manifest.hpp"
#include "octlesion/segmenter.hpp"

namespace oct::pipe {

enum class StageReached { removed_ungradable, removed_outlier, removed_control, segmented };

std::string to_string(StageReached stage);

struct PipelineVerdict {
  std::string volume_id;
  StageReached stage = StageReached::removed_ungradable;
  bool failed = false;
  std::string error;
  std::optional<double> p_ungradable;
  std::optional<double> ood_uncertainty;
  std::optional<double> p_lesion;
  std::optional<seg::LesionAreas> areas;  // present iff stage == segmented
};

nlohmann::json to_json(const PipelineVerdict& verdict);

struct RunConfig {
  std::filesystem::path ungradable_model;
  std::filesystem::path ood_model_dir;
  std::filesystem::path lesion_model;
  std::filesystem::path seg_model_dir;
  gates::GateThresholds thresholds;
  double seg_mask_threshold = 0.5;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  bool segment_all = false;  // segment every gated-in volume, not only classifier positives
  bool emit_masks = true;
  int n_threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);  // out_dir omitted so reruns compare byte-equal

struct RunOutput {
  std::vector<PipelineVerdict> verdicts;
  nlohmann::json metrics;
};

// Figure-style staging per volume: ungradable gate, outlier gate, lesion
// classifier, then per-B-scan segmentation and quantification. Removal at
// any gate short-circuits the rest; unreadable volumes are recorded as
// failures and the run continues. Writes verdicts.jsonl, metrics.json, a
// config echo and (optionally) predicted masks under out_dir.
RunOutput run_pipeline(const DatasetManifest& manifest, const RunConfig& cfg);

}  // namespace oct::pipe
