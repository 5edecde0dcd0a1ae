#include "pacdiff/objective.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace pacdiff {

namespace {

void require_examples(Eigen::Index m) {
  if (m < 1) throw ContractError("objective terms need at least one example");
}

ObjectiveBreakdown evaluate_values(const Vector& raw_weights, const Vector& y,
                                   const Vector* losses, double alpha, double lambda) {
  require_examples(raw_weights.size());
  if (y.size() != raw_weights.size() || (losses && losses->size() != raw_weights.size()))
    throw ShapeError("objective: weights, objectives and losses must have equal length");
  Graph g;
  std::optional<Var> l;
  if (losses) l = g.constant(*losses);
  ObjectiveNodes nodes = build_objective(g, g.constant(raw_weights), g.constant(y), l, alpha, lambda);
  g.set_output(nodes.total);
  g.forward(TensorMap{});
  return read_breakdown(nodes);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

double assemble_objective(double utility, double weighted_dsm, double variance, double alpha,
                          double lambda, double eps) {
  return utility - lambda * std::sqrt(weighted_dsm + eps) -
         alpha * std::sqrt(std::sqrt(variance + eps));
}

ObjectiveNodes build_objective(Graph&, Var raw_weights, Var y, std::optional<Var> losses,
                               double alpha, double lambda, double eps) {
  ObjectiveNodes n;
  n.normalizer = mean(raw_weights);
  n.normalized_weights = raw_weights / n.normalizer;
  n.utility = mean(n.normalized_weights * y);
  n.variance = mean(square(n.normalized_weights - 1.0));
  Var penalty = alpha * sqrt(sqrt(n.variance + eps));
  if (losses) {
    n.weighted_dsm = mean(n.normalized_weights * *losses);
    n.total = n.utility - lambda * sqrt(*n.weighted_dsm + eps) - penalty;
  } else {
    n.total = n.utility - penalty;
  }
  return n;
}

ObjectiveBreakdown read_breakdown(const ObjectiveNodes& n) {
  ObjectiveBreakdown b;
  b.normalizer = n.normalizer.value()(0, 0);
  b.utility = n.utility.value()(0, 0);
  b.variance = n.variance.value()(0, 0);
  b.has_dsm = n.weighted_dsm.has_value();
  b.weighted_dsm = b.has_dsm ? n.weighted_dsm->value()(0, 0) : 0.0;
  b.total = n.total.value()(0, 0);
  return b;
}

double normalizer(const Vector& raw_weights) {
  return evaluate_values(raw_weights, Vector::Zero(raw_weights.size()), nullptr, 0, 0).normalizer;
}

double empirical_utility(const Vector& raw_weights, const Vector& y) {
  return evaluate_values(raw_weights, y, nullptr, 0, 0).utility;
}

double empirical_variance(const Vector& raw_weights) {
  return evaluate_values(raw_weights, Vector::Zero(raw_weights.size()), nullptr, 0, 0).variance;
}

double weighted_dsm(const Vector& raw_weights, const Vector& losses) {
  return evaluate_values(raw_weights, Vector::Zero(raw_weights.size()), &losses, 0, 0)
      .weighted_dsm;
}

ObjectiveBreakdown j_objective(const Vector& raw_weights, const Vector& y, const Vector& losses,
                               double alpha, double lambda) {
  return evaluate_values(raw_weights, y, &losses, alpha, lambda);
}

ObjectiveNodes build_joint_objective(Graph& g, const WeightModel& weights, const ScoreNet& net,
                                     const Tensor& x, const Vector& y, const DsmDraws& draws,
                                     double alpha, double lambda, NetMode mode) {
  require_examples(x.rows());
  if (y.size() != x.rows() || draws.examples() != x.rows())
    throw ShapeError("joint objective: designs, objectives and draws disagree in length");
  Var w = weights.build(g, g.constant(y));
  Var losses = dsm_losses(g, net.schedule, draws, score_fn(net, mode), g.constant(x));
  return build_objective(g, w, g.constant(y), losses, alpha, lambda);
}

ObjectiveBreakdown j_objective(const WeightModel& weights, const ParamStore& phi,
                               const ScoreNet& net, const Tensor& x, const Vector& y,
                               const DsmConfig& config, double alpha, double lambda, Rng& rng) {
  if (alpha < 0.0 || lambda < 0.0) throw DomainError("alpha and lambda must be non-negative");
  DsmDraws draws = draw_dsm(net.schedule, config, x.rows(), x.cols(), rng);
  Graph g;
  ObjectiveNodes nodes = build_joint_objective(g, weights, net, x, y, draws, alpha, lambda);
  g.set_output(nodes.total);
  g.bind(phi.values());
  g.bind(net.params.values());
  g.forward();
  return read_breakdown(nodes);
}

BoundReport bound_report(const WeightModel& weights, const ParamStore& phi, const ScoreNet& net,
                         const Tensor& x, const Vector& y, double alpha, double lambda,
                         Eigen::Index n_mc, Rng& rng) {
  require_examples(x.rows());
  if (n_mc < 2) throw ContractError("bound_report needs n_mc >= 2");
  const Eigen::Index m = x.rows();

  const Vector raw = weights.eval(phi, y);
  const Vector w_tilde = raw / raw.mean();

  BoundReport r;
  r.weight_mode = weights.describe();
  r.m = m;
  r.n_mc = n_mc;
  r.alpha = alpha;
  r.lambda = lambda;
  r.normalizer = raw.mean();
  r.utility = w_tilde.dot(y) / double(m);
  r.variance = (w_tilde.array() - 1.0).square().mean();

  constexpr Eigen::Index kChunk = 2048;
  double total = 0.0, total_sq = 0.0;
  for (Eigen::Index start = 0; start < n_mc; start += kChunk) {
    const Eigen::Index rows = std::min(kChunk, n_mc - start);
    Tensor xb(rows, x.cols());
    Vector wb(rows);
    for (Eigen::Index j = 0; j < rows; ++j) {
      const Eigen::Index i = (start + j) % m;
      xb.row(j) = x.row(i);
      wb(j) = w_tilde(i);
    }
    DsmDraws draws = draw_dsm(net.schedule, DsmConfig{}, rows, x.cols(), rng);
    Graph g;
    g.set_output(dsm_losses(g, net.schedule, draws, score_fn(net, NetMode::Inference),
                            g.constant(std::move(xb))));
    const Vector values = g.forward(net.params.values()).col(0).cwiseProduct(wb);
    total += values.sum();
    total_sq += values.squaredNorm();
  }
  const double n = double(n_mc);
  r.weighted_dsm = total / n;
  const double var = std::max(0.0, (total_sq - n * r.weighted_dsm * r.weighted_dsm) / (n - 1.0));
  r.weighted_dsm_stderr = std::sqrt(var / n);
  r.total = assemble_objective(r.utility, r.weighted_dsm, r.variance, alpha, lambda);
  return r;
}

std::vector<std::pair<std::string, std::string>> BoundReport::fields() const {
  return {
      {"weight_mode", weight_mode},
      {"m", std::to_string(m)},
      {"n_mc", std::to_string(n_mc)},
      {"alpha", format_double(alpha)},
      {"lambda", format_double(lambda)},
      {"empirical_utility", format_double(utility)},
      {"weighted_dsm", format_double(weighted_dsm)},
      {"weighted_dsm_stderr", format_double(weighted_dsm_stderr)},
      {"empirical_variance", format_double(variance)},
      {"normalizer", format_double(normalizer)},
      {"J", format_double(total)},
      {"rademacher_complexity", "not computed"},
      {"covering_number", "not computed"},
      {"terminal_w2", "not computed"},
      {"bound_constants", "not computed"},
  };
}

std::string BoundReport::to_key_value() const {
  std::ostringstream os;
  for (const auto& [k, v] : fields()) os << k << '=' << v << '\n';
  return os.str();
}

std::string BoundReport::to_csv() const {
  std::ostringstream header, row;
  bool first = true;
  for (const auto& [k, v] : fields()) {
    if (!first) {
      header << ',';
      row << ',';
    }
    first = false;
    header << k;
    row << v;
  }
  return header.str() + "\n" + row.str() + "\n";
}

}  // namespace pacdiff
