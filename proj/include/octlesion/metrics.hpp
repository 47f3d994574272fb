#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "octlesion/types.hpp"

namespace oct::metrics {

// --- Classification -------------------------------------------------------

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

// Threshold-descending operating points from (+inf) down, one per distinct
// score, with (0,0) and (1,1) endpoints. score >= threshold predicts
// positive.
std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const int> labels);

// Trapezoidal area over tie-grouped ROC points; equals the Mann-Whitney
// probability with ties counted 1/2.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct PrPoint {
  double threshold;
  double recall;
  double precision;
};

std::vector<PrPoint> pr_points(std::span<const double> scores, std::span<const int> labels);

// Average precision: sum of precision x recall increments over the
// threshold-descending sweep.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

struct ConfusionCounts {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  long total() const { return tp + fp + tn + fn; }
};

ConfusionCounts confusion_at(std::span<const double> scores, std::span<const int> labels,
                             double threshold);

struct Rates {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double accuracy = 0.0;
};

Rates rates(const ConfusionCounts& cc);

struct KappaResult {
  double value = 0.0;
  bool degenerate = false;  // expected agreement was 1 (constant marginals)
};

KappaResult cohens_kappa_ex(std::span<const int> predicted, std::span<const int> truth);
double cohens_kappa(std::span<const int> predicted, std::span<const int> truth);

// --- Segmentation overlap --------------------------------------------------

// 2|A n B| / (|A| + |B|) over pixels equal to category; 1.0 when both masks
// are empty for that category.
double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, std::uint8_t category);
double dice(const Plane8& a, const Plane8& b, std::uint8_t category);
double dice(const LesionMask& a, const LesionMask& b, std::uint8_t category);

enum class Connectivity { four, eight };

struct Components {
  long height = 0, width = 0;
  std::vector<int> labels;  // 0 background, 1..count component ids
  int count = 0;
};

Components connected_components(const Plane8& binary, Connectivity conn = Connectivity::eight);

struct LesionMatch {
  int truth_components = 0;
  int detected = 0;          // truth components sharing >= 1 pixel with a prediction
  int missed = 0;
  int false_positives = 0;   // predicted components sharing no pixel with truth
};

// Overlap criterion: one shared pixel of the category. Categories with more
// than one code (e.g. combined RPD) are matched on the union.
LesionMatch match_lesions(const Plane8& pred, const Plane8& truth,
                          std::span<const std::uint8_t> category_codes,
                          Connectivity conn = Connectivity::eight);
LesionMatch match_lesions(const Plane8& pred, const Plane8& truth, std::uint8_t category,
                          Connectivity conn = Connectivity::eight);

// Shared discretization rule (also exposed as seg::mask_from_probs): per
// pixel, the winning lesion category must beat background and reach the
// confidence threshold, else the pixel is background. Channel 0 is
// background.
Plane8 discretize_probs(const ProbMap& probs, double threshold);

// --- FROC -------------------------------------------------------------------

struct FrocPoint {
  double threshold = 0.0;
  double avg_fp_per_scan = 0.0;
  double sensitivity = 0.0;
  double ci_low = 0.0;   // bootstrap 2.5 percentile of sensitivity
  double ci_high = 0.0;  // bootstrap 97.5 percentile
};

// Lesion-level sweep over thresholds (sorted descending). Bootstrap
// resamples whole B-scans with replacement; replicate r uses seed + r, and
// the percentile interval is widened to contain the point estimate when
// needed so FrocPoint's invariant always holds.
std::vector<FrocPoint> froc(const std::vector<ProbMap>& prob_maps, const std::vector<Plane8>& truth,
                            std::span<const std::uint8_t> category_codes, std::vector<double> thresholds,
                            int bootstrap_n = 1000, std::uint64_t seed = 0,
                            Connectivity conn = Connectivity::eight);

// --- Agreement --------------------------------------------------------------

enum class IccBin { Poor, Moderate, Good, Excellent };

std::string to_string(IccBin bin);
IccBin icc_bin(double icc);

struct IccResult {
  double icc = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  IccBin bin = IccBin::Poor;
  bool degenerate = false;
};

// Two-way random effects, absolute agreement, single rater (ICC(2,1)):
// (MSR - MSE) / (MSR + (k-1) MSE + k (MSC - MSE) / n), with the standard
// F-based 95% confidence interval.
IccResult icc_absolute(const Eigen::MatrixXd& ratings);

struct AgreementReport {
  std::vector<IccResult> model_vs_grader;  // one per grader column
  double mean_model_icc = 0.0;             // arithmetic mean of the point estimates
  IccResult intergrader;                   // ICC over the grader columns (k >= 2)
  bool has_intergrader = false;
};

// model: per-target areas; graders: targets x graders matrix aligned on the
// same targets (absent segmentations encoded as zero area upstream).
AgreementReport agreement_report(const Eigen::VectorXd& model, const Eigen::MatrixXd& graders);

// --- Shared helpers ---------------------------------------------------------

// Percentile with linear interpolation between order statistics.
double percentile(std::vector<double> values, double p);

// Regularized incomplete beta and F-distribution helpers (used by the ICC
// confidence interval).
double betainc(double a, double b, double x);
double f_cdf(double x, double d1, double d2);
double f_quantile(double p, double d1, double d2);

}  // namespace oct::metrics
