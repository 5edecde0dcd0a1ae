#include "pacdiff/toybench.hpp"

#include <algorithm>
#include <random>

namespace pacdiff {

Eigen::Vector2d toy_objective_gradient(const ToySpec& spec, const Eigen::Vector2d& x) {
  const Eigen::Matrix2d prec = spec.cov.inverse();
  const Eigen::Vector2d d1 = x - spec.mu1;
  const Eigen::Vector2d d2 = x - spec.mu2;
  const double e1 = spec.objective_weights[0] * std::exp(-0.5 * d1.dot(prec * d1));
  const double e2 = spec.objective_weights[1] * std::exp(-0.5 * d2.dot(prec * d2));
  return -e1 * (prec * d1) - e2 * (prec * d2);
}

Vector toy_objective_batch(const ToySpec& spec, const Tensor& x) {
  if (x.cols() != 2) throw ShapeError("toy objective expects 2 columns, got " + std::to_string(x.cols()));
  Vector f(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) f(i) = toy_objective(spec, x.row(i).transpose());
  return f;
}

OfflineDataset sample_pdata(const ToySpec& spec, int n, std::uint64_t seed,
                            const NormalizationOptions& options) {
  if (n < 1) throw ContractError("sample_pdata needs n >= 1");
  Rng rng(seed);
  std::bernoulli_distribution pick_far(spec.data_weights[1]);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor x(n, 2);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d& mu = pick_far(rng) ? spec.mu4 : spec.mu3;
    x(i, 0) = mu(0) + normal(rng);
    x(i, 1) = mu(1) + normal(rng);
  }
  Vector y = toy_objective_batch(spec, x);
  return make_dataset(std::move(x), std::move(y), options);
}

Tensor toy_grid(const ToySpec& spec, int points, double lo, double hi) {
  if (points < 2) throw DomainError("grid needs at least 2 points per axis");
  Tensor g(Eigen::Index(points) * points, 3);
  const double step = (hi - lo) / double(points - 1);
  Eigen::Index r = 0;
  for (int i = 0; i < points; ++i) {
    for (int j = 0; j < points; ++j, ++r) {
      const Eigen::Vector2d p(lo + step * i, lo + step * j);
      g(r, 0) = p(0);
      g(r, 1) = p(1);
      g(r, 2) = toy_objective(spec, p);
    }
  }
  return g;
}

double percentile(Vector values, double p) {
  if (values.size() == 0) throw ContractError("percentile of an empty set");
  if (!(p >= 0.0 && p <= 100.0)) throw DomainError("percentile must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * double(values.size() - 1);
  const auto lo = Eigen::Index(std::floor(pos));
  const auto hi = std::min<Eigen::Index>(lo + 1, values.size() - 1);
  const double frac = pos - double(lo);
  return values(lo) + frac * (values(hi) - values(lo));
}

PercentileReport percentile_report(const Vector& values) {
  return {percentile(values, 50.0), percentile(values, 80.0), percentile(values, 100.0)};
}

PercentileReport percentile_report(const ToySpec& spec, const Tensor& raw_designs) {
  if (raw_designs.rows() == 0) throw ContractError("percentile report of an empty sample set");
  return percentile_report(toy_objective_batch(spec, raw_designs));
}

Eigen::Vector2d pdata_score(const ToySpec& spec, const Eigen::Vector2d& x) {
  const Eigen::Vector2d d3 = x - spec.mu3;
  const Eigen::Vector2d d4 = x - spec.mu4;
  // Responsibilities computed in log space; the components sit far apart.
  const double l3 = std::log(spec.data_weights[0]) - 0.5 * d3.squaredNorm();
  const double l4 = std::log(spec.data_weights[1]) - 0.5 * d4.squaredNorm();
  const double mx = std::max(l3, l4);
  const double r3 = std::exp(l3 - mx);
  const double r4 = std::exp(l4 - mx);
  return -(r3 * d3 + r4 * d4) / (r3 + r4);
}

Eigen::Vector2d target_score(const ToySpec& spec, const Eigen::Vector2d& x, double dlogw) {
  return pdata_score(spec, x) + dlogw * toy_objective_gradient(spec, x);
}

}  // namespace pacdiff
