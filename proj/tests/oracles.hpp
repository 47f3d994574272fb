// Independent brute-force oracles for the metric implementations. These are
// deliberately naive (pair counting, exhaustive threshold sweeps, direct
// formula evaluation) and share no code with the library paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "octlesion/types.hpp"

namespace oracle {

// AUC by counting correctly ordered positive/negative pairs, ties as 1/2.
inline double auc_pair_counting(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  long n_pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++n_pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(n_pairs);
}

// Average precision by a full sweep over the distinct scores as thresholds,
// recomputing precision and recall from scratch at each threshold.
inline double ap_full_sweep(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  const double n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  double ap = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    long tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) (labels[i] == 1 ? tp : fp)++;
    }
    const double recall = static_cast<double>(tp) / n_pos;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

// Cohen's kappa straight from the confusion matrix definition.
inline double kappa_direct(const std::vector<int>& pred, const std::vector<int>& truth) {
  const double n = static_cast<double>(pred.size());
  std::map<int, double> row, col;
  double agree = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    row[pred[i]] += 1.0;
    col[truth[i]] += 1.0;
    if (pred[i] == truth[i]) agree += 1.0;
  }
  const double po = agree / n;
  double pe = 0.0;
  for (const auto& [cls, r] : row)
    if (col.count(cls)) pe += (r / n) * (col.at(cls) / n);
  if (pe == 1.0) return po == 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1.0 - pe);
}

inline double dice_pixel_count(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b,
                               std::uint8_t cat) {
  long na = 0, nb = 0, ni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == cat) ++na;
    if (b[i] == cat) ++nb;
    if (a[i] == cat && b[i] == cat) ++ni;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

// Two-way ANOVA ICC for absolute agreement, single rater, written with
// explicit loops over the cell decomposition.
inline double icc_two_way_anova(const std::vector<std::vector<double>>& x) {
  const std::size_t n = x.size(), k = x.front().size();
  double grand = 0.0;
  for (const auto& r : x)
    for (double v : r) grand += v;
  grand /= static_cast<double>(n * k);

  double ssr = 0.0;
  for (const auto& r : x) {
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(k);
    ssr += (mean - grand) * (mean - grand);
  }
  ssr *= static_cast<double>(k);

  double ssc = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i][j];
    mean /= static_cast<double>(n);
    ssc += (mean - grand) * (mean - grand);
  }
  ssc *= static_cast<double>(n);

  double sst = 0.0;
  for (const auto& r : x)
    for (double v : r) sst += (v - grand) * (v - grand);
  const double sse = sst - ssr - ssc;

  const double msr = ssr / static_cast<double>(n - 1);
  const double msc = ssc / static_cast<double>(k - 1);
  const double mse = sse / static_cast<double>((n - 1) * (k - 1));
  return (msr - mse) / (msr + static_cast<double>(k - 1) * mse +
                        static_cast<double>(k) * (msc - mse) / static_cast<double>(n));
}

// Connected-component count by repeated flood fill with an explicit queue.
inline int flood_fill_count(const oct::Plane8& plane, bool eight) {
  const long H = plane.height, W = plane.width;
  std::vector<char> seen(static_cast<std::size_t>(H * W), 0);
  int count = 0;
  for (long start = 0; start < H * W; ++start) {
    if (plane.v[static_cast<std::size_t>(start)] == 0 || seen[static_cast<std::size_t>(start)]) continue;
    ++count;
    std::vector<long> queue{start};
    seen[static_cast<std::size_t>(start)] = 1;
    while (!queue.empty()) {
      const long cur = queue.back();
      queue.pop_back();
      const long r = cur / W, c = cur % W;
      for (long dr = -1; dr <= 1; ++dr) {
        for (long dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          if (!eight && dr != 0 && dc != 0) continue;
          const long nr = r + dr, nc = c + dc;
          if (nr < 0 || nr >= H || nc < 0 || nc >= W) continue;
          const long ni = nr * W + nc;
          if (plane.v[static_cast<std::size_t>(ni)] != 0 && !seen[static_cast<std::size_t>(ni)]) {
            seen[static_cast<std::size_t>(ni)] = 1;
            queue.push_back(ni);
          }
        }
      }
    }
  }
  return count;
}

}  // namespace oracle
