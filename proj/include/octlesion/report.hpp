#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "octlesion/metrics.hpp"

namespace oct::report {

// The classification metric set reported per model: sensitivity,
// specificity, AUC, kappa, accuracy and PR-AUC at one operating threshold.
struct ClassificationReport {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double auc = 0.0;
  double kappa = 0.0;
  double accuracy = 0.0;
  double pr_auc = 0.0;
  double threshold = 0.5;
  std::vector<metrics::RocPoint> roc;
  std::vector<metrics::PrPoint> pr;
};

ClassificationReport evaluate_classification(std::span<const double> scores,
                                             std::span<const int> labels, double threshold);

nlohmann::json to_json(const ClassificationReport& report);

// Plot-ready CSV emission; numeric fields round-trip exactly.
void write_roc_csv(const std::vector<metrics::RocPoint>& points, const std::filesystem::path& path);
void write_pr_csv(const std::vector<metrics::PrPoint>& points, const std::filesystem::path& path);
void write_froc_csv(const std::vector<metrics::FrocPoint>& points, const std::filesystem::path& path);

// Trapezoidal re-integration of a written roc.csv (used to cross-check the
// emitted points against the reported AUC).
double trapezoid_auc_from_roc_csv(const std::filesystem::path& path);

std::string format_double(double v);

}  // namespace oct::report
