#pragma once

#include <cmath>
#include <functional>

#include "pacdiff/errors.hpp"
#include "pacdiff/graph.hpp"
#include "pacdiff/tensor.hpp"

namespace pacdiff {

// Variance-preserving schedule with linear rate beta(t) on t in [0, 1].
struct NoiseSchedule {
  double beta_min = 0.1;
  double beta_max = 20.0;
  double t_min = 1e-3;

  void validate() const {
    if (!(beta_min > 0.0 && beta_min < beta_max))
      throw DomainError("noise schedule needs 0 < beta_min < beta_max");
    if (!(t_min > 0.0 && t_min < 1.0)) throw DomainError("noise schedule needs 0 < t_min < 1");
  }

  bool operator==(const NoiseSchedule&) const = default;
};

namespace detail {
template <typename Scalar>
void check_time(Scalar t) {
  if (!(t >= Scalar(0) && t <= Scalar(1)))
    throw DomainError("diffusion time must lie in [0, 1]");
}
}  // namespace detail

template <typename Scalar>
Scalar beta(const NoiseSchedule& s, Scalar t) {
  detail::check_time(t);
  return Scalar(s.beta_min) + (Scalar(s.beta_max) - Scalar(s.beta_min)) * t;
}

/// Closed-form integral of beta over [0, t].
template <typename Scalar>
Scalar integrated_beta(const NoiseSchedule& s, Scalar t) {
  detail::check_time(t);
  return Scalar(s.beta_min) * t + (Scalar(s.beta_max) - Scalar(s.beta_min)) * t * t / Scalar(2);
}

/// Standard deviation of the forward perturbation kernel at time t.
template <typename Scalar>
Scalar sigma(const NoiseSchedule& s, Scalar t) {
  using std::exp;
  using std::sqrt;
  return sqrt(-std::expm1(-integrated_beta(s, t)));
}

/// sqrt(1 - sigma(t)^2), the mean scaling of the kernel.
template <typename Scalar>
Scalar signal_scale(const NoiseSchedule& s, Scalar t) {
  using std::exp;
  return exp(-integrated_beta(s, t) / Scalar(2));
}

/// x_t = sqrt(1 - sigma^2) x + sigma z.
template <typename DerivedX, typename DerivedZ>
auto perturb(const NoiseSchedule& s, const Eigen::MatrixBase<DerivedX>& x, double t,
             const Eigen::MatrixBase<DerivedZ>& z) {
  if (x.rows() != z.rows() || x.cols() != z.cols())
    throw ShapeError("perturb: design and noise dimensions differ");
  const double sg = sigma(s, t);
  using Plain = typename DerivedX::PlainObject;
  return Plain(std::sqrt(1.0 - sg * sg) * x + sg * z);
}

struct DsmConfig {
  int n_time_samples = 1;
  void validate() const {
    if (n_time_samples < 1) throw DomainError("n_time_samples must be at least 1");
  }
};

// Monte Carlo draws for a batch: row j belongs to example j / n_time_samples.
struct DsmDraws {
  Vector t;
  Tensor z;
  int per_example = 1;
  Eigen::Index examples() const { return t.size() / per_example; }
};

DsmDraws draw_dsm(const NoiseSchedule& s, const DsmConfig& config, Eigen::Index n_examples,
                  Eigen::Index dim, Rng& rng);

// Builds a score estimate (rows x d) for perturbed inputs x_t at per-row times.
using ScoreFn = std::function<Var(Graph& g, Var x_t, const Vector& t)>;

/// Per-example Monte Carlo DSM losses (n x 1) for the batch `x` (n x d):
/// mean over draws of (1 - t_min) beta(t) ||s_t(x_t) + z / sigma(t)||^2.
Var dsm_losses(Graph& g, const NoiseSchedule& s, const DsmDraws& draws, const ScoreFn& score,
               Var x);

/// Value of the point-wise DSM estimate for a single design.
double dsm_pointwise_loss(const NoiseSchedule& s, const DsmConfig& config, const ScoreFn& score,
                          const Vector& x, Rng& rng);

}  // namespace pacdiff
