#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "pacdiff/graph.hpp"
#include "pacdiff/optim.hpp"

namespace pacdiff {

// Builds a scalar objective into the graph from named param leaves. Must be
// deterministic: any randomness has to be drawn beforehand and captured.
using GraphBuilder = std::function<Var(Graph&)>;

struct GradCheckOptions {
  double h = 1e-5;
  int n_probe = 50;
  std::uint64_t seed = 0;
  // Denominator floor for |autodiff - numeric| / max(|autodiff|, |numeric|, floor).
  double abs_floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double autodiff = 0.0;
  double numeric = 0.0;
  int probes = 0;
};

/// Central differences on randomly chosen coordinates versus reverse-mode
/// gradients. `data` binds any non-parameter leaves the builder declares.
GradCheckResult finite_diff_check(const GraphBuilder& objective, const TensorMap& params,
                                  const GradCheckOptions& options = {},
                                  const TensorMap& data = {});

inline GradCheckResult finite_diff_check(const GraphBuilder& objective,
                                         const ParamStore& params,
                                         const GradCheckOptions& options = {},
                                         const TensorMap& data = {}) {
  return finite_diff_check(objective, params.values(), options, data);
}

}  // namespace pacdiff
