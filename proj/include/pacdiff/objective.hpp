#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pacdiff/diffusion.hpp"
#include "pacdiff/graph.hpp"
#include "pacdiff/models.hpp"

namespace pacdiff {

// Smoothing inside the square root and fourth root of the objective. Both
// roots are singular at zero.
inline constexpr double kRootSmoothing = 1e-8;

struct ObjectiveBreakdown {
  double utility = 0.0;
  double weighted_dsm = 0.0;
  double variance = 0.0;
  double normalizer = 0.0;
  double total = 0.0;
  // False for the theta-free objective of the weight-initialization phase.
  bool has_dsm = true;
};

/// utility - lambda sqrt(dsm + eps) - alpha (variance + eps)^(1/4).
double assemble_objective(double utility, double weighted_dsm, double variance, double alpha,
                          double lambda, double eps = kRootSmoothing);

// ---- values ---------------------------------------------------------------
// Each takes raw (un-normalized) weights w(y_i).

double normalizer(const Vector& raw_weights);
double empirical_utility(const Vector& raw_weights, const Vector& y);
double empirical_variance(const Vector& raw_weights);
double weighted_dsm(const Vector& raw_weights, const Vector& losses);
ObjectiveBreakdown j_objective(const Vector& raw_weights, const Vector& y, const Vector& losses,
                               double alpha, double lambda);

// ---- graph ----------------------------------------------------------------

struct ObjectiveNodes {
  Var normalizer;
  Var normalized_weights;
  Var utility;
  Var variance;
  std::optional<Var> weighted_dsm;
  Var total;
};

/// Builds the objective from raw weights (m x 1) and objective values (m x 1).
/// Without `losses` the DSM term is dropped (weight-initialization objective).
/// The normalizer is part of the graph and is differentiated through.
ObjectiveNodes build_objective(Graph& g, Var raw_weights, Var y, std::optional<Var> losses,
                               double alpha, double lambda, double eps = kRootSmoothing);

ObjectiveBreakdown read_breakdown(const ObjectiveNodes& nodes);

/// Full objective with both networks in one graph: weights from `weights`,
/// per-example losses from the score network under the frozen `draws`.
ObjectiveNodes build_joint_objective(Graph& g, const WeightModel& weights, const ScoreNet& net,
                                     const Tensor& x, const Vector& y, const DsmDraws& draws,
                                     double alpha, double lambda,
                                     NetMode mode = NetMode::Train);

/// Evaluates the joint objective once with fresh draws from `rng`.
ObjectiveBreakdown j_objective(const WeightModel& weights, const ParamStore& phi,
                               const ScoreNet& net, const Tensor& x, const Vector& y,
                               const DsmConfig& config, double alpha, double lambda, Rng& rng);

// ---- diagnostics ----------------------------------------------------------

struct BoundReport {
  std::string weight_mode;
  Eigen::Index m = 0;
  Eigen::Index n_mc = 0;
  double alpha = 0.0;
  double lambda = 0.0;
  double utility = 0.0;
  double weighted_dsm = 0.0;
  double weighted_dsm_stderr = 0.0;
  double variance = 0.0;
  double normalizer = 0.0;
  double total = 0.0;

  std::vector<std::pair<std::string, std::string>> fields() const;
  std::string to_key_value() const;
  std::string to_csv() const;
};

/// Low-variance estimates of the learnable terms. The weighted DSM term uses
/// n_mc draws cycling over the examples, with the score network in inference
/// mode. Bound terms that are not estimated are labelled "not computed".
BoundReport bound_report(const WeightModel& weights, const ParamStore& phi, const ScoreNet& net,
                         const Tensor& x, const Vector& y, double alpha, double lambda,
                         Eigen::Index n_mc, Rng& rng);

}  // namespace pacdiff
