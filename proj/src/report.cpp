#include "octlesion/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace oct::report {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

ClassificationReport evaluate_classification(std::span<const double> scores,
                                             std::span<const int> labels, double threshold) {
  ClassificationReport rep;
  rep.threshold = threshold;
  rep.auc = metrics::roc_auc(scores, labels);
  rep.pr_auc = metrics::pr_auc(scores, labels);
  rep.roc = metrics::roc_points(scores, labels);
  rep.pr = metrics::pr_points(scores, labels);

  const auto cc = metrics::confusion_at(scores, labels, threshold);
  const auto r = metrics::rates(cc);
  rep.sensitivity = r.sensitivity;
  rep.specificity = r.specificity;
  rep.accuracy = r.accuracy;

  std::vector<int> predicted(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) predicted[i] = scores[i] >= threshold ? 1 : 0;
  rep.kappa = metrics::cohens_kappa(predicted, labels);
  return rep;
}

nlohmann::json to_json(const ClassificationReport& rep) {
  return {{"sensitivity", rep.sensitivity}, {"specificity", rep.specificity}, {"auc", rep.auc},
          {"kappa", rep.kappa},             {"accuracy", rep.accuracy},       {"pr_auc", rep.pr_auc},
          {"threshold", rep.threshold}};
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  return out;
}

}  // namespace

void write_roc_csv(const std::vector<metrics::RocPoint>& points, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "threshold,fpr,tpr\n";
  for (const auto& p : points)
    out << format_double(p.threshold) << ',' << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
}

void write_pr_csv(const std::vector<metrics::PrPoint>& points, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "threshold,recall,precision\n";
  for (const auto& p : points)
    out << format_double(p.threshold) << ',' << format_double(p.recall) << ',' << format_double(p.precision)
        << '\n';
}

void write_froc_csv(const std::vector<metrics::FrocPoint>& points, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "threshold,avg_fp_per_scan,sensitivity,ci_low,ci_high\n";
  for (const auto& p : points)
    out << format_double(p.threshold) << ',' << format_double(p.avg_fp_per_scan) << ','
        << format_double(p.sensitivity) << ',' << format_double(p.ci_low) << ',' << format_double(p.ci_high)
        << '\n';
}

double trapezoid_auc_from_roc_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::string line;
  std::getline(in, line);  // header
  double auc = 0.0, prev_fpr = 0.0, prev_tpr = 0.0;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');  // threshold
    std::getline(ss, tok, ',');
    const double fpr = std::stod(tok);
    std::getline(ss, tok, ',');
    const double tpr = std::stod(tok);
    if (!first) auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_fpr = fpr;
    prev_tpr = tpr;
    first = false;
  }
  return auc;
}

}  // namespace oct::report
