#include "octlesion/gradcheck.hpp"

#include <cmath>

#include "octlesion/rng.hpp"

namespace oct::nn {

namespace {

struct ParamRef {
  Tensor* param;
  const Tensor* grad;
  int node;
  std::string layer_type;
};

}  // namespace

GradCheckReport grad_check(const MiniNet& net, const Tensor& batch, const std::vector<long>& targets,
                           double h, double tol, Eigen::Index max_checks, std::uint64_t seed) {
  MiniNet work = net;  // keep the caller's net untouched
  const std::vector<Tensor> analytic = backward(work, batch, targets);

  std::vector<ParamRef> refs;
  {
    std::size_t g = 0;
    for (int i = 0; i < work.size(); ++i) {
      auto ps = work.layer(i).params();
      for (Tensor* p : ps) {
        refs.push_back({p, &analytic[g], i, work.layer(i).type()});
        ++g;
      }
    }
  }

  // Element picks: everything if small, else a seeded subsample.
  std::vector<std::pair<std::size_t, Eigen::Index>> picks;
  Eigen::Index total = 0;
  for (const auto& r : refs) total += r.param->numel();
  if (total <= max_checks) {
    for (std::size_t i = 0; i < refs.size(); ++i)
      for (Eigen::Index j = 0; j < refs[i].param->numel(); ++j) picks.emplace_back(i, j);
  } else {
    Rng rng(seed);
    for (Eigen::Index k = 0; k < max_checks; ++k) {
      Eigen::Index flat = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(total)));
      std::size_t i = 0;
      while (flat >= refs[i].param->numel()) {
        flat -= refs[i].param->numel();
        ++i;
      }
      picks.emplace_back(i, flat);
    }
  }

  GradCheckReport report;
  report.tolerance = tol;
  for (const auto& [i, j] : picks) {
    Tensor& p = *refs[i].param;
    const double saved = p[j];
    p[j] = saved + h;
    const double loss_plus = cross_entropy(work.forward(batch, Phase::train), targets);
    p[j] = saved - h;
    const double loss_minus = cross_entropy(work.forward(batch, Phase::train), targets);
    p[j] = saved;

    const double numeric = (loss_plus - loss_minus) / (2.0 * h);
    const double a = (*refs[i].grad)[j];
    // Gradients below the finite-difference noise floor compare against the
    // floor, so the check tolerates absolute differences only up to tol*1e-5.
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-5});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_layer = refs[i].layer_type;
      report.worst_node = refs[i].node;
      report.worst_index = j;
    }
    ++report.checked;
  }
  report.pass = report.max_rel_error < tol;
  return report;
}

}  // namespace oct::nn
