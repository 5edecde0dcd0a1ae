#include "pacdiff/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace pacdiff {

StepCoefficients step_coefficients(const NoiseSchedule& s, int t, int T) {
  if (T < 1 || t < 1 || t > T) throw DomainError("sampler step must satisfy 1 <= t <= T");
  StepCoefficients c;
  c.beta_tilde =
      (s.beta_min + (double(t) / double(T)) * (s.beta_max - s.beta_min)) / double(T);
  if (!(c.beta_tilde < 1.0)) throw DomainError("discretized rate >= 1; increase T");
  c.drift = 2.0 - std::sqrt(1.0 - c.beta_tilde);
  return c;
}

BatchScore network_score(const ScoreNet& net) {
  return [&net](const Tensor& x, double time) { return score_eval(net, x, time); };
}

Tensor sample_step(const BatchScore& score, const Tensor& x_t, int t, int T,
                   const NoiseSchedule& s) {
  const StepCoefficients c = step_coefficients(s, t, T);
  // Times below the training cutoff only occur for T > 1000.
  const double time = std::clamp(double(t) / double(T), s.t_min, 1.0);
  const Tensor sc = score(x_t, time);
  if (!sc.allFinite())
    throw NonFiniteError("score is non-finite at sampler step " + std::to_string(t));
  if (sc.rows() != x_t.rows() || sc.cols() != x_t.cols())
    throw ShapeError("score output shape differs from the state shape");
  return c.drift * x_t + 0.5 * c.beta_tilde * sc;
}

Tensor initial_noise(int n, int dim, std::uint64_t seed) {
  Tensor x(n, dim);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, std::uint64_t(i)));
    x.row(i) = standard_normal(1, dim, rng);
  }
  return x;
}

SampleBatch sample(const BatchScore& score, int dim, const NoiseSchedule& s,
                   const SamplerOptions& options) {
  if (options.n < 1 || options.steps < 1) throw DomainError("sampler needs N >= 1 and T >= 1");
  Tensor x = initial_noise(options.n, dim, options.seed);
  for (int t = options.steps; t >= 1; --t) {
    x = sample_step(score, x, t, options.steps, s);
    if (options.clamp) x = x.cwiseMax(-*options.clamp).cwiseMin(*options.clamp);
  }
  if (!x.allFinite()) throw NonFiniteError("sampler produced non-finite designs");
  SampleBatch b;
  b.designs = std::move(x);
  b.steps = options.steps;
  b.seed = options.seed;
  return b;
}

SampleBatch sample(const ScoreNet& net, const SamplerOptions& options) {
  return sample(network_score(net), net.arch.dim, net.schedule, options);
}

}  // namespace pacdiff
