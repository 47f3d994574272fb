#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octlesion/augment.hpp"
#include "octlesion/builders.hpp"
#include "octlesion/manifest.hpp"
#include "octlesion/net.hpp"

namespace oct::gates {

struct TrainConfig {
  nn::AdamConfig adam;              // paper-scale defaults (lr 1e-4, 0.9/0.999)
  int batch_size = 4;
  long max_iterations = 2000;
  long patience_iterations = 500;   // full-scale value is 10000
  long eval_every = 50;
  aug::AugmentConfig augment;
  bool augment_enabled = true;
  double width_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig&);
TrainConfig train_config_from_json(const nlohmann::json&);

enum class GateTask { ungradable_vs_rest, lesion_vs_control };

std::string to_string(GateTask task);

// Task label mapping; nullopt marks grades excluded from training
// (one-lesion and questionable volumes, plus ungradable for the lesion task).
std::optional<int> task_label(GradeLabel grade, GateTask task);

// In-memory labelled volumes for one split.
struct VolumeSet {
  std::vector<OctVolume> volumes;
  std::vector<GradeLabel> grades;
  std::vector<std::string> participant_ids;

  std::size_t size() const { return volumes.size(); }
};

VolumeSet load_volume_set(const DatasetManifest& manifest, Split split);

// Class-balanced batch stream: category slots rotate round-robin, each
// category draws from its own seeded shuffle and reshuffles on exhaustion,
// so minority categories recycle with replacement across their epochs.
class BalancedSampler {
 public:
  BalancedSampler(std::vector<int> categories, int batch_size, std::uint64_t seed);
  std::vector<std::size_t> next_batch();

 private:
  std::size_t draw_from(std::size_t cat);

  int batch_size_;
  Rng rng_;
  std::vector<int> cat_values_;
  std::vector<std::vector<std::size_t>> items_;  // per category
  std::vector<std::size_t> cursor_;              // per category position
  std::size_t slot_ = 0;
};

struct TrainLogEntry {
  long iteration = 0;
  double loss = 0.0;
  double val_kappa = 0.0;
  bool is_best = false;
};

struct TrainLog {
  std::string metric_name = "val_kappa";  // "val_dice" for segmentation folds
  std::vector<std::string> notes;
  std::vector<TrainLogEntry> entries;
  long best_iteration = 0;
  double best_kappa = -2.0;

  void to_jsonl(const std::filesystem::path& path) const;
};

struct GateTrainResult {
  nn::MiniNet net;
  TrainLog log;
};

// Balanced, augmented cross-entropy training with early stopping on
// validation kappa; returns the best-kappa checkpoint.
GateTrainResult train_gate(const VolumeSet& train, const VolumeSet& val, GateTask task,
                           const TrainConfig& cfg);

// (N,1,B,H,W) normalized batch from volumes.
nn::Tensor volumes_to_batch(std::span<const OctVolume* const> volumes);
nn::Tensor volume_to_input(const OctVolume& vol);

std::array<double, 2> predict_gate(const nn::MiniNet& net, const OctVolume& vol);

struct EnsembleModel {
  std::vector<nn::MiniNet> members;
  std::vector<std::uint64_t> member_seeds;
};

// Members train independently with seeds cfg.seed + i (weight init and
// sampling); parallel and serial runs produce identical checkpoints.
EnsembleModel train_ensemble(const VolumeSet& train, const VolumeSet& val, const TrainConfig& cfg,
                             int n_members = 10, GateTask task = GateTask::ungradable_vs_rest,
                             bool parallel = true);

// Mean over categories of the population variance of member probabilities;
// in [0, (C-1)/C^2 * ...] and 0 iff all members agree exactly.
double mean_member_variance(const std::vector<std::vector<double>>& member_probs);
double ood_uncertainty(const EnsembleModel& ensemble, const OctVolume& vol);

void save_ensemble(const EnsembleModel& ensemble, const std::filesystem::path& dir);
EnsembleModel load_ensemble(const std::filesystem::path& dir);

struct ThresholdPolicy {
  enum class Kind { youden, sens_at, spec_at };
  Kind kind = Kind::youden;
  double target = 0.0;

  static ThresholdPolicy youden() { return {Kind::youden, 0.0}; }
  static ThresholdPolicy sens_at(double x) { return {Kind::sens_at, x}; }
  static ThresholdPolicy spec_at(double x) { return {Kind::spec_at, x}; }
};

// Operating threshold over candidate cuts (the distinct scores plus an
// above-maximum cut); ties resolve toward higher specificity.
double calibrate_threshold(std::span<const double> scores, std::span<const int> labels,
                           const ThresholdPolicy& policy);

struct GateThresholds {
  double ungradable_prob = 0.5;
  double ood_uncertainty = 0.05;
  double lesion_prob = 0.5;

  void validate() const;
};

nlohmann::json to_json(const GateThresholds&);
GateThresholds gate_thresholds_from_json(const nlohmann::json&);

}  // namespace oct::gates
