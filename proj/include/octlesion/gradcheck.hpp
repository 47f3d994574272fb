#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "octlesion/net.hpp"

namespace oct::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_layer;   // layer type holding the worst parameter
  int worst_node = -1;
  Eigen::Index worst_index = -1;
  Eigen::Index checked = 0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central-difference check of the analytic cross-entropy gradient. Works on a
// clone, so the input net is untouched. At most max_checks parameters are
// probed (seeded subsample when the net is larger).
GradCheckReport grad_check(const MiniNet& net, const Tensor& batch, const std::vector<long>& targets,
                           double h = 1e-5, double tol = 1e-4, Eigen::Index max_checks = 2000,
                           std::uint64_t seed = 0);

}  // namespace oct::nn
