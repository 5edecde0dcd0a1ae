#include "pacdiff/gradcheck.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <vector>

#include "pacdiff/errors.hpp"

namespace pacdiff {

GradCheckResult finite_diff_check(const GraphBuilder& objective, const TensorMap& params,
                                  const GradCheckOptions& options, const TensorMap& data) {
  if (!(options.h >= 1e-6 && options.h <= 1e-3))
    throw DomainError("finite-difference step must lie in [1e-6, 1e-3]");
  if (options.n_probe < 1) throw ContractError("n_probe must be at least 1");

  TensorMap work = params;

  Graph g;
  g.set_output(objective(g));
  g.bind(data);
  g.bind(work);
  const double base = g.forward()(0, 0);
  TensorMap grads = g.backward();

  {
    Graph again;
    again.set_output(objective(again));
    again.bind(data);
    again.bind(work);
    const double repeat = again.forward()(0, 0);
    if (std::bit_cast<std::uint64_t>(repeat) != std::bit_cast<std::uint64_t>(base))
      throw ContractError("objective is not deterministic under a fixed seed: " +
                          std::to_string(base) + " vs " + std::to_string(repeat));
  }

  std::vector<std::pair<std::string, Eigen::Index>> slots;
  Eigen::Index total = 0;
  for (const auto& [name, t] : work) {
    slots.emplace_back(name, t.size());
    total += t.size();
  }
  if (total == 0) throw ContractError("no parameters to probe");

  Rng rng(options.seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, total - 1);

  GradCheckResult result;
  for (int p = 0; p < options.n_probe; ++p) {
    Eigen::Index flat = pick(rng);
    std::size_t s = 0;
    while (flat >= slots[s].second) flat -= slots[s++].second;
    const std::string& name = slots[s].first;
    Tensor& t = work.find(name)->second;
    double& coord = t.data()[flat];
    const double saved = coord;

    coord = saved + options.h;
    const double up = g.forward()(0, 0);
    coord = saved - options.h;
    const double down = g.forward()(0, 0);
    coord = saved;

    const double numeric = (up - down) / (2.0 * options.h);
    // Parameters the graph never declares have a zero gradient.
    const auto git = grads.find(name);
    const double analytic = git == grads.end() ? 0.0 : git->second.data()[flat];
    const double denom =
        std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
    const double rel = std::abs(analytic - numeric) / denom;
    ++result.probes;
    if (rel >= result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_param = name;
      result.worst_index = flat;
      result.autodiff = analytic;
      result.numeric = numeric;
    }
  }
  return result;
}

}  // namespace pacdiff
