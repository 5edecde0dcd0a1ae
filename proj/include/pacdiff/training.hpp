#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pacdiff/diffusion.hpp"
#include "pacdiff/models.hpp"
#include "pacdiff/objective.hpp"
#include "pacdiff/optim.hpp"

namespace pacdiff {

struct Hyperparams {
  double alpha = 0.2;
  double lambda = 0.1;
  double eta1 = 1e-4;
  double eta2 = 1e-4;
  int K = 50;

  int init_weight_steps = 1000;
  double init_weight_lr = 1e-3;
  int init_score_epochs = 200;
  double score_lr_start = 1e-3;
  double score_lr_end = 1e-4;
  int batch_size = 128;
  // Mini-batch theta steps per alternation round; 0 means one full epoch.
  int alternate_theta_steps = 0;

  DsmConfig dsm;
  std::optional<double> clip_norm;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const Hyperparams&) const = default;
};

struct TrainConfig {
  Hyperparams hyper;
  NoiseSchedule schedule;
  WeightModel weights = WeightModel::trainable();
  ScoreNetArch score_arch;
};

enum class Phase { InitWeight, InitScore, Alternate };
std::string_view phase_name(Phase p);

struct HistoryRow {
  std::int64_t step = 0;
  Phase phase = Phase::InitWeight;
  ObjectiveBreakdown breakdown;
};

struct TrainState {
  TrainConfig config;
  ParamStore phi;
  ScoreNet theta;
  Rng rng;
  int weight_steps = 0;
  int score_epochs = 0;
  int rounds = 0;
  std::vector<HistoryRow> history;
};

/// Fresh parameters for designs of dimension `dim`, seeded from hyper.seed.
TrainState make_train_state(const TrainConfig& config, int dim);

/// Full-batch Adam ascent on utility - alpha (variance + eps)^(1/4) over phi.
void init_weight_phase(TrainState& state, const Tensor& x, const Vector& y, int n_steps);

/// Mini-batch Adam descent on the phi-weighted DSM loss over theta, with the
/// learning rate decayed linearly from score_lr_start to score_lr_end.
void init_score_phase(TrainState& state, const Tensor& x, const Vector& y, int n_epochs,
                      int batch_size);

/// One round: a full-batch ascent step on phi against J with the DSM draws
/// frozen, then theta descent against the re-weighted DSM loss.
void alternate_step(TrainState& state, const Tensor& x, const Vector& y);

/// All three stages, deterministic in (config, data).
TrainState train(const TrainConfig& config, const Tensor& x, const Vector& y);

/// Normalized weights w(y)/Z over the given objective values.
Vector normalized_weights(const TrainState& state, const Vector& y);

std::string history_csv(const std::vector<HistoryRow>& history);

}  // namespace pacdiff
