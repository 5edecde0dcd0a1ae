#pragma once

#include <cmath>
#include <cstdint>

#include "pacdiff/data_io.hpp"
#include "pacdiff/errors.hpp"
#include "pacdiff/tensor.hpp"

namespace pacdiff {

// Two-dimensional synthetic task: objective is a two-component Gaussian
// mixture (rescaled to peak near 1), data come from a far-apart mixture.
struct ToySpec {
  double objective_weights[2] = {0.45, 0.55};
  Eigen::Vector2d mu1{1.5, 1.5};
  Eigen::Vector2d mu2{-1.5, -1.5};
  Eigen::Matrix2d cov = (Eigen::Matrix2d() << 2.0, 1.0, 1.0, 2.0).finished();
  double data_weights[2] = {0.3, 0.7};
  Eigen::Vector2d mu3{-4.0, -4.0};
  Eigen::Vector2d mu4{4.0, 4.0};
  int m = 300;
};

namespace detail {
template <typename Derived>
typename Derived::Scalar mahalanobis(const ToySpec& spec, const Eigen::MatrixBase<Derived>& d) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Matrix<Scalar, 2, 2> prec = spec.cov.inverse().cast<Scalar>();
  return d.dot(prec * d);
}
}  // namespace detail

/// f(x) = 0.45 exp(-q1/2) + 0.55 exp(-q2/2), q_i = (x - mu_i)' inv(cov) (x - mu_i).
template <typename Derived>
typename Derived::Scalar toy_objective(const ToySpec& spec, const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  using std::exp;
  const Eigen::Matrix<Scalar, 2, 1> p = x;
  const Eigen::Matrix<Scalar, 2, 1> d1 = p - spec.mu1.cast<Scalar>();
  const Eigen::Matrix<Scalar, 2, 1> d2 = p - spec.mu2.cast<Scalar>();
  return Scalar(spec.objective_weights[0]) * exp(-detail::mahalanobis(spec, d1) / Scalar(2)) +
         Scalar(spec.objective_weights[1]) * exp(-detail::mahalanobis(spec, d2) / Scalar(2));
}

Eigen::Vector2d toy_objective_gradient(const ToySpec& spec, const Eigen::Vector2d& x);

/// Row-wise objective of an n x 2 design matrix in raw units.
Vector toy_objective_batch(const ToySpec& spec, const Tensor& x);

/// n draws from the data mixture, paired with objective values and normalized.
OfflineDataset sample_pdata(const ToySpec& spec, int n, std::uint64_t seed,
                            const NormalizationOptions& options = {});

/// Square grid of points on [lo, hi]^2 with their objective values (columns x1, x2, f).
Tensor toy_grid(const ToySpec& spec, int points = 101, double lo = -8.0, double hi = 8.0);

struct PercentileReport {
  double p50 = 0.0;
  double p80 = 0.0;
  double p100 = 0.0;
};

/// Linear interpolation between order statistics at position p/100 (n - 1).
double percentile(Vector values, double p);
PercentileReport percentile_report(const Vector& values);
PercentileReport percentile_report(const ToySpec& spec, const Tensor& raw_designs);

/// Score of the reweighted data mixture at diffusion time zero:
/// grad log p_data(x) + (w'(f) / w(f)) grad f(x), for a weight with
/// log-derivative `dlogw` evaluated at f(x).
Eigen::Vector2d target_score(const ToySpec& spec, const Eigen::Vector2d& x, double dlogw);

Eigen::Vector2d pdata_score(const ToySpec& spec, const Eigen::Vector2d& x);

}  // namespace pacdiff
