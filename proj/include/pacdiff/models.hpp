#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pacdiff/diffusion.hpp"
#include "pacdiff/graph.hpp"
#include "pacdiff/optim.hpp"

namespace pacdiff {

inline constexpr std::string_view kWeightPrefix = "phi/";
inline constexpr std::string_view kScorePrefix = "theta/";

// ---------------------------------------------------------------------------
// Weight network: w(y) = exp(mlp(y)) over a normalized objective value y.

struct WeightNetArch {
  // Hidden widths; hidden.size() + 1 dense layers with ReLU in between.
  std::vector<int> hidden{64, 64, 64};
  bool operator==(const WeightNetArch&) const = default;
};

ParamStore init_weight_net(const WeightNetArch& arch, std::uint64_t seed);

/// Raw log-weights mlp(y) for a column of objective values (m x 1).
Var weight_net_logits(Graph& g, const WeightNetArch& arch, Var y);
/// Positive raw weights exp(mlp(y)) (m x 1).
Var weight_net(Graph& g, const WeightNetArch& arch, Var y);

Vector weight_eval(const ParamStore& phi, const WeightNetArch& arch, const Vector& y);
double weight_eval(const ParamStore& phi, const WeightNetArch& arch, double y);

/// exp(psi * y), the fixed exponential weighting.
double predefined_weight_eval(double psi, double y);
Var predefined_weight(Graph& g, double psi, Var y);

// Either the trainable network or the fixed exponential weighting.
struct WeightModel {
  enum class Kind { Trainable, Exponential };
  Kind kind = Kind::Trainable;
  WeightNetArch arch;
  double psi = 0.0;

  static WeightModel trainable(WeightNetArch arch = {}) {
    return {Kind::Trainable, std::move(arch), 0.0};
  }
  static WeightModel exponential(double psi) { return {Kind::Exponential, {}, psi}; }

  bool is_trainable() const { return kind == Kind::Trainable; }
  /// Raw positive weights for a column of objective values.
  Var build(Graph& g, Var y) const;
  Vector eval(const ParamStore& phi, const Vector& y) const;
  std::string describe() const;
};

// ---------------------------------------------------------------------------
// Score network: time embedding plus Dense-Norm-ELU blocks whose inputs are
// concatenated with the embedding, then a dense map back to the design space.

enum class NormKind { Batch, Layer };
enum class NetMode { Train, Inference };

struct ScoreNetArch {
  int dim = 2;
  int hidden = 256;
  int blocks = 5;
  int embed_dim = 32;
  NormKind norm = NormKind::Batch;
  // Divide the network output by sigma(t) so it parameterizes -z instead of
  // -z / sigma(t).
  bool scale_by_sigma = true;
  double norm_eps = 1e-5;
  double momentum = 0.1;
  bool operator==(const ScoreNetArch&) const = default;
};

struct ScoreNet {
  ScoreNetArch arch;
  NoiseSchedule schedule;
  ParamStore params;
  // Batch-norm running statistics (absent for layer norm).
  TensorMap running;
};

ScoreNet init_score_net(const ScoreNetArch& arch, const NoiseSchedule& schedule,
                        std::uint64_t seed);

/// Sinusoidal features of t, one row per time.
Tensor time_features(const Vector& t, int dim);

struct ScoreGraph {
  Var output;
  // Dense outputs feeding each batch-norm layer (train mode only).
  std::vector<Var> pre_norm;
};

ScoreGraph build_score_net(Graph& g, const ScoreNet& net, Var x, const Vector& t, NetMode mode);

/// Adapter for dsm_losses. When `pre_norm` is given, collects the batch-norm
/// inputs so running statistics can be updated after forward().
ScoreFn score_fn(const ScoreNet& net, NetMode mode, std::vector<Var>* pre_norm = nullptr);

void update_running_stats(ScoreNet& net, const std::vector<Var>& pre_norm);

Tensor score_eval(const ScoreNet& net, const Tensor& x, const Vector& t,
                  NetMode mode = NetMode::Inference);
Tensor score_eval(const ScoreNet& net, const Tensor& x, double t);

/// He-style N(0, 2 / fan_in) matrix.
Tensor he_normal(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);

}  // namespace pacdiff
