#include "octlesion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <stdexcept>

#include "octlesion/rng.hpp"

namespace oct::metrics {

namespace {

void check_scores(std::span<const double> scores, std::span<const int> labels, bool need_both) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores/labels length mismatch");
  if (scores.empty()) throw std::invalid_argument("empty score set");
  long pos = 0, neg = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("labels must be binary 0/1");
    (l == 1 ? pos : neg)++;
  }
  if (pos == 0) throw std::invalid_argument("no positive labels");
  if (need_both && neg == 0) throw std::invalid_argument("no negative labels");
}

// Indices sorted by score descending, plus tie-group boundaries.
std::vector<std::size_t> by_score_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const int> labels) {
  check_scores(scores, labels, true);
  const double npos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double nneg = static_cast<double>(labels.size()) - npos;

  std::vector<RocPoint> points;
  points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  const auto idx = by_score_desc(scores);
  long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double t = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == t) {
      (labels[idx[i]] == 1 ? tp : fp)++;
      ++i;
    }
    points.push_back({t, static_cast<double>(fp) / nneg, static_cast<double>(tp) / npos});
  }
  return points;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  const auto pts = roc_points(scores, labels);
  double auc = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    auc += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  return auc;
}

std::vector<PrPoint> pr_points(std::span<const double> scores, std::span<const int> labels) {
  check_scores(scores, labels, false);
  const double npos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));

  std::vector<PrPoint> points;
  const auto idx = by_score_desc(scores);
  long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double t = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == t) {
      (labels[idx[i]] == 1 ? tp : fp)++;
      ++i;
    }
    points.push_back({t, static_cast<double>(tp) / npos, static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  return points;
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  const auto pts = pr_points(scores, labels);
  double ap = 0.0, prev_recall = 0.0;
  for (const auto& p : pts) {
    ap += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return ap;
}

ConfusionCounts confusion_at(std::span<const double> scores, std::span<const int> labels,
                             double threshold) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores/labels length mismatch");
  if (scores.empty()) throw std::invalid_argument("empty score set");
  ConfusionCounts cc;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool truth = labels[i] == 1;
    if (pred && truth)
      ++cc.tp;
    else if (pred && !truth)
      ++cc.fp;
    else if (!pred && truth)
      ++cc.fn;
    else
      ++cc.tn;
  }
  return cc;
}

Rates rates(const ConfusionCounts& cc) {
  if (cc.total() < 1) throw std::invalid_argument("confusion counts are empty");
  Rates r;
  r.sensitivity = cc.tp + cc.fn > 0 ? static_cast<double>(cc.tp) / static_cast<double>(cc.tp + cc.fn) : 0.0;
  r.specificity = cc.tn + cc.fp > 0 ? static_cast<double>(cc.tn) / static_cast<double>(cc.tn + cc.fp) : 0.0;
  r.accuracy = static_cast<double>(cc.tp + cc.tn) / static_cast<double>(cc.total());
  return r;
}

KappaResult cohens_kappa_ex(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("label vectors differ in length");
  if (predicted.empty()) throw std::invalid_argument("empty label vectors");
  const double n = static_cast<double>(predicted.size());

  std::map<std::pair<int, int>, long> cm;
  std::map<int, long> row, col;
  long agree = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    ++cm[{predicted[i], truth[i]}];
    ++row[predicted[i]];
    ++col[truth[i]];
    if (predicted[i] == truth[i]) ++agree;
  }
  const double po = static_cast<double>(agree) / n;
  double pe = 0.0;
  for (const auto& [cls, rc] : row) {
    const auto it = col.find(cls);
    if (it != col.end()) pe += (static_cast<double>(rc) / n) * (static_cast<double>(it->second) / n);
  }

  KappaResult out;
  if (std::abs(1.0 - pe) < 1e-15) {
    out.degenerate = true;
    out.value = std::abs(1.0 - po) < 1e-15 ? 1.0 : 0.0;
    return out;
  }
  out.value = (po - pe) / (1.0 - pe);
  return out;
}

double cohens_kappa(std::span<const int> predicted, std::span<const int> truth) {
  return cohens_kappa_ex(predicted, truth).value;
}

// ---------------------------------------------------------------------------

double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, std::uint8_t category) {
  if (a.size() != b.size()) throw std::invalid_argument("dice inputs differ in shape");
  long na = 0, nb = 0, ni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool ia = a[i] == category, ib = b[i] == category;
    na += ia;
    nb += ib;
    ni += ia && ib;
  }
  if (na + nb == 0) return 1.0;  // agreement on absence
  return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

double dice(const Plane8& a, const Plane8& b, std::uint8_t category) {
  if (a.height != b.height || a.width != b.width) throw std::invalid_argument("dice planes differ in shape");
  return dice(std::span(a.v), std::span(b.v), category);
}

double dice(const LesionMask& a, const LesionMask& b, std::uint8_t category) {
  if (a.n_bscans != b.n_bscans || a.height != b.height || a.width != b.width)
    throw std::invalid_argument("dice masks differ in shape");
  return dice(std::span(a.labels), std::span(b.labels), category);
}

Components connected_components(const Plane8& binary, Connectivity conn) {
  Components out;
  out.height = binary.height;
  out.width = binary.width;
  out.labels.assign(static_cast<std::size_t>(binary.numel()), 0);

  const long H = binary.height, W = binary.width;
  static constexpr int dr8[] = {-1, -1, -1, 0, 0, 1, 1, 1};
  static constexpr int dc8[] = {-1, 0, 1, -1, 1, -1, 0, 1};
  static constexpr int dr4[] = {-1, 0, 0, 1};
  static constexpr int dc4[] = {0, -1, 1, 0};
  const int* dr = conn == Connectivity::eight ? dr8 : dr4;
  const int* dc = conn == Connectivity::eight ? dc8 : dc4;
  const int nn = conn == Connectivity::eight ? 8 : 4;

  std::vector<long> stack;
  for (long r = 0; r < H; ++r) {
    for (long c = 0; c < W; ++c) {
      const long start = r * W + c;
      if (binary.v[static_cast<std::size_t>(start)] == 0 || out.labels[static_cast<std::size_t>(start)] != 0)
        continue;
      ++out.count;
      stack.assign(1, start);
      out.labels[static_cast<std::size_t>(start)] = out.count;
      while (!stack.empty()) {
        const long cur = stack.back();
        stack.pop_back();
        const long cr = cur / W, cc = cur % W;
        for (int k = 0; k < nn; ++k) {
          const long nr = cr + dr[k], ncol = cc + dc[k];
          if (nr < 0 || nr >= H || ncol < 0 || ncol >= W) continue;
          const long ni = nr * W + ncol;
          if (binary.v[static_cast<std::size_t>(ni)] != 0 && out.labels[static_cast<std::size_t>(ni)] == 0) {
            out.labels[static_cast<std::size_t>(ni)] = out.count;
            stack.push_back(ni);
          }
        }
      }
    }
  }
  return out;
}

namespace {

Plane8 binarize(const Plane8& plane, std::span<const std::uint8_t> codes) {
  Plane8 out(plane.height, plane.width);
  for (long i = 0; i < plane.numel(); ++i) {
    const std::uint8_t v = plane.v[static_cast<std::size_t>(i)];
    out.v[static_cast<std::size_t>(i)] =
        std::find(codes.begin(), codes.end(), v) != codes.end() ? 1 : 0;
  }
  return out;
}

}  // namespace

LesionMatch match_lesions(const Plane8& pred, const Plane8& truth,
                          std::span<const std::uint8_t> category_codes, Connectivity conn) {
  if (pred.height != truth.height || pred.width != truth.width)
    throw std::invalid_argument("match_lesions planes differ in shape");

  const Plane8 pred_bin = binarize(pred, category_codes);
  const Plane8 truth_bin = binarize(truth, category_codes);
  const Components truth_cc = connected_components(truth_bin, conn);
  const Components pred_cc = connected_components(pred_bin, conn);

  std::vector<char> truth_hit(static_cast<std::size_t>(truth_cc.count) + 1, 0);
  std::vector<char> pred_hit(static_cast<std::size_t>(pred_cc.count) + 1, 0);
  for (long i = 0; i < pred.numel(); ++i) {
    const int tl = truth_cc.labels[static_cast<std::size_t>(i)];
    const int pl = pred_cc.labels[static_cast<std::size_t>(i)];
    if (tl != 0 && pred_bin.v[static_cast<std::size_t>(i)] != 0) truth_hit[static_cast<std::size_t>(tl)] = 1;
    if (pl != 0 && truth_bin.v[static_cast<std::size_t>(i)] != 0) pred_hit[static_cast<std::size_t>(pl)] = 1;
  }

  LesionMatch m;
  m.truth_components = truth_cc.count;
  for (int t = 1; t <= truth_cc.count; ++t) m.detected += truth_hit[static_cast<std::size_t>(t)];
  m.missed = m.truth_components - m.detected;
  for (int p = 1; p <= pred_cc.count; ++p)
    if (!pred_hit[static_cast<std::size_t>(p)]) ++m.false_positives;
  return m;
}

LesionMatch match_lesions(const Plane8& pred, const Plane8& truth, std::uint8_t category,
                          Connectivity conn) {
  const std::uint8_t codes[1] = {category};
  return match_lesions(pred, truth, std::span(codes), conn);
}

Plane8 discretize_probs(const ProbMap& probs, double threshold) {
  if (probs.channels < 2) throw std::invalid_argument("probability map needs >= 2 channels");
  Plane8 out(probs.height, probs.width);
  const long P = probs.height * probs.width;
  for (long i = 0; i < P; ++i) {
    const double bg = probs.v[static_cast<std::size_t>(i)];
    long best = 0;
    double best_p = -1.0;
    for (long ch = 1; ch < probs.channels; ++ch) {
      const double p = probs.v[static_cast<std::size_t>(ch * P + i)];
      if (p > best_p) {
        best_p = p;
        best = ch;
      }
    }
    out.v[static_cast<std::size_t>(i)] =
        (best_p > bg && best_p >= threshold) ? static_cast<std::uint8_t>(best) : kBackground;
  }
  return out;
}

// ---------------------------------------------------------------------------
// FROC

std::vector<FrocPoint> froc(const std::vector<ProbMap>& prob_maps, const std::vector<Plane8>& truth,
                            std::span<const std::uint8_t> category_codes, std::vector<double> thresholds,
                            int bootstrap_n, std::uint64_t seed, Connectivity conn) {
  if (prob_maps.empty() || prob_maps.size() != truth.size())
    throw std::invalid_argument("froc needs matching prob maps and truth planes");
  if (thresholds.empty()) return {};
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());

  const std::size_t n_scans = prob_maps.size();
  const std::size_t n_thr = thresholds.size();

  // Per-scan cache: truth component count, and per-threshold (detected, fp).
  std::vector<long> truth_n(n_scans, 0);
  std::vector<std::vector<long>> det(n_scans, std::vector<long>(n_thr, 0));
  std::vector<std::vector<long>> fp(n_scans, std::vector<long>(n_thr, 0));
  long total_truth = 0;
  for (std::size_t s = 0; s < n_scans; ++s) {
    for (std::size_t t = 0; t < n_thr; ++t) {
      const Plane8 pred = discretize_probs(prob_maps[s], thresholds[t]);
      const LesionMatch m = match_lesions(pred, truth[s], category_codes, conn);
      truth_n[s] = m.truth_components;
      det[s][t] = m.detected;
      fp[s][t] = m.false_positives;
    }
    total_truth += truth_n[s];
  }
  if (total_truth == 0) throw std::invalid_argument("froc: no truth components in any scan");

  std::vector<FrocPoint> points(n_thr);
  for (std::size_t t = 0; t < n_thr; ++t) {
    long d = 0, f = 0;
    for (std::size_t s = 0; s < n_scans; ++s) {
      d += det[s][t];
      f += fp[s][t];
    }
    points[t].threshold = thresholds[t];
    points[t].sensitivity = static_cast<double>(d) / static_cast<double>(total_truth);
    points[t].avg_fp_per_scan = static_cast<double>(f) / static_cast<double>(n_scans);
  }

  if (bootstrap_n > 0) {
    std::vector<std::vector<double>> sens_reps(n_thr);
    for (int r = 0; r < bootstrap_n; ++r) {
      Rng rng(seed + static_cast<std::uint64_t>(r));
      std::vector<std::size_t> pick(n_scans);
      long rep_truth = 0;
      for (std::size_t s = 0; s < n_scans; ++s) {
        pick[s] = static_cast<std::size_t>(rng.below(n_scans));
        rep_truth += truth_n[pick[s]];
      }
      if (rep_truth == 0) continue;  // replicate without any lesion: sensitivity undefined
      for (std::size_t t = 0; t < n_thr; ++t) {
        long d = 0;
        for (std::size_t s = 0; s < n_scans; ++s) d += det[pick[s]][t];
        sens_reps[t].push_back(static_cast<double>(d) / static_cast<double>(rep_truth));
      }
    }
    for (std::size_t t = 0; t < n_thr; ++t) {
      if (sens_reps[t].empty()) {
        points[t].ci_low = points[t].ci_high = points[t].sensitivity;
        continue;
      }
      double lo = percentile(sens_reps[t], 2.5);
      double hi = percentile(sens_reps[t], 97.5);
      // FrocPoint requires ci_low <= sensitivity <= ci_high.
      points[t].ci_low = std::min(lo, points[t].sensitivity);
      points[t].ci_high = std::max(hi, points[t].sensitivity);
    }
  } else {
    for (auto& p : points) {
      p.ci_low = p.sensitivity;
      p.ci_high = p.sensitivity;
    }
  }
  return points;
}

// ---------------------------------------------------------------------------
// ICC

std::string to_string(IccBin bin) {
  switch (bin) {
    case IccBin::Poor: return "Poor";
    case IccBin::Moderate: return "Moderate";
    case IccBin::Good: return "Good";
    default: return "Excellent";
  }
}

IccBin icc_bin(double icc) {
  if (icc < 0.50) return IccBin::Poor;
  if (icc < 0.75) return IccBin::Moderate;
  if (icc < 0.90) return IccBin::Good;
  return IccBin::Excellent;
}

IccResult icc_absolute(const Eigen::MatrixXd& ratings) {
  const Eigen::Index n = ratings.rows(), k = ratings.cols();
  if (n < 2 || k < 2) throw std::invalid_argument("icc needs >= 2 targets and >= 2 raters");
  if (!ratings.allFinite()) throw std::invalid_argument("icc ratings must be finite (no missing cells)");

  const double grand = ratings.mean();
  const Eigen::VectorXd row_means = ratings.rowwise().mean();
  const Eigen::VectorXd col_means = ratings.colwise().mean();

  const double ssr = static_cast<double>(k) * (row_means.array() - grand).square().sum();
  const double ssc = static_cast<double>(n) * (col_means.array() - grand).square().sum();
  const double sst = (ratings.array() - grand).square().sum();
  const double sse = std::max(0.0, sst - ssr - ssc);

  const double msr = ssr / static_cast<double>(n - 1);
  const double msc = ssc / static_cast<double>(k - 1);
  const double mse = sse / static_cast<double>((n - 1) * (k - 1));

  const double nk = static_cast<double>(k), nn = static_cast<double>(n);
  const double denom = msr + (nk - 1.0) * mse + nk * (msc - mse) / nn;

  IccResult out;
  if (std::abs(denom) < 1e-30 || !std::isfinite(denom)) {
    out.degenerate = true;
    out.icc = 0.0;
    out.ci_low = out.ci_high = 0.0;
    out.bin = icc_bin(out.icc);
    return out;
  }
  out.icc = (msr - mse) / denom;
  out.bin = icc_bin(out.icc);

  // F-based 95% interval with Satterthwaite degrees of freedom.
  const double alpha = 0.05;
  if (mse > 0.0 && std::isfinite(out.icc)) {
    const double fj = msc / mse;
    const double icc2 = out.icc;
    const double vn = (nk - 1.0) * (nn - 1.0) *
                      std::pow(nk * icc2 * fj + nn * (1.0 + (nk - 1.0) * icc2) - nk * icc2, 2.0);
    const double vd = (nn - 1.0) * nk * nk * icc2 * icc2 * fj * fj +
                      std::pow(nn * (1.0 + (nk - 1.0) * icc2) - nk * icc2, 2.0);
    const double v = vn / vd;
    if (std::isfinite(v) && v > 0.0) {
      const double f2u = f_quantile(1.0 - alpha / 2.0, nn - 1.0, v);
      const double f2l = f_quantile(1.0 - alpha / 2.0, v, nn - 1.0);
      const double lb = nn * (msr - f2u * mse) / (f2u * (nk * msc + (nk * nn - nk - nn) * mse) + nn * msr);
      const double ub = nn * (f2l * msr - mse) / (nk * msc + (nk * nn - nk - nn) * mse + nn * f2l * msr);
      if (std::isfinite(lb) && std::isfinite(ub)) {
        out.ci_low = std::clamp(lb, -1.0, 1.0);
        out.ci_high = std::clamp(ub, -1.0, 1.0);
      } else {
        out.ci_low = out.ci_high = out.icc;
      }
    } else {
      out.ci_low = out.ci_high = out.icc;
    }
  } else {
    out.ci_low = out.ci_high = out.icc;
  }
  return out;
}

AgreementReport agreement_report(const Eigen::VectorXd& model, const Eigen::MatrixXd& graders) {
  if (model.size() != graders.rows()) throw std::invalid_argument("model/grader target sets mismatch");
  if (graders.cols() < 1) throw std::invalid_argument("need at least one grader column");

  AgreementReport report;
  double sum = 0.0;
  for (Eigen::Index g = 0; g < graders.cols(); ++g) {
    Eigen::MatrixXd pair(model.size(), 2);
    pair.col(0) = model;
    pair.col(1) = graders.col(g);
    report.model_vs_grader.push_back(icc_absolute(pair));
    sum += report.model_vs_grader.back().icc;
  }
  report.mean_model_icc = sum / static_cast<double>(graders.cols());
  if (graders.cols() >= 2) {
    report.intergrader = icc_absolute(graders);
    report.has_intergrader = true;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Shared numerics

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p / 100.0;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  const double frac = h - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

namespace {

// Continued-fraction core of the regularized incomplete beta (modified
// Lentz iteration).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 400;
  constexpr double kEps = 3e-16;
  constexpr double kTiny = 1e-300;

  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double betainc(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("betainc needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double f_cdf(double x, double d1, double d2) {
  if (x <= 0.0) return 0.0;
  return betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2));
}

double f_quantile(double p, double d1, double d2) {
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) throw std::invalid_argument("f_quantile needs p in (0, 1)");
  double hi = 1.0;
  while (f_cdf(hi, d1, d2) < p) {
    hi *= 2.0;
    if (hi > 1e300) return hi;
  }
  double lo = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = (lo + hi) / 2.0;
    if (f_cdf(mid, d1, d2) < p)
      lo = mid;
    else
      hi = mid;
  }
  return (lo + hi) / 2.0;
}

}  // namespace oct::metrics
