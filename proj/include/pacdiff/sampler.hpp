#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "pacdiff/diffusion.hpp"
#include "pacdiff/models.hpp"

namespace pacdiff {

struct SampleBatch {
  Tensor designs;  // N x d, normalized feature space
  std::string checkpoint_id;
  int steps = 0;
  std::uint64_t seed = 0;
};

struct StepCoefficients {
  double beta_tilde = 0.0;
  double drift = 0.0;  // 2 - sqrt(1 - beta_tilde)
};

/// Discretized rate for step t of T (1 <= t <= T).
StepCoefficients step_coefficients(const NoiseSchedule& s, int t, int T);

// Score of the batch at a diffusion time; rows are samples.
using BatchScore = std::function<Tensor(const Tensor& x, double time)>;

BatchScore network_score(const ScoreNet& net);

/// x_{t-1} = (2 - sqrt(1 - beta_tilde)) x_t + beta_tilde / 2 * s_{t/T}(x_t).
Tensor sample_step(const BatchScore& score, const Tensor& x_t, int t, int T,
                   const NoiseSchedule& s);

struct SamplerOptions {
  int n = 128;
  int steps = 1000;
  std::uint64_t seed = 0;
  // Diagnostic clamp of intermediate states; off by default.
  std::optional<double> clamp;
};

/// Initial noise for sample index i is drawn from its own stream, so the batch
/// does not depend on how samples are grouped.
Tensor initial_noise(int n, int dim, std::uint64_t seed);

SampleBatch sample(const BatchScore& score, int dim, const NoiseSchedule& s,
                   const SamplerOptions& options);
SampleBatch sample(const ScoreNet& net, const SamplerOptions& options);

}  // namespace pacdiff
