#include "pacdiff/training.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>

namespace pacdiff {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string describe(const ObjectiveBreakdown& b) {
  std::ostringstream os;
  os << "utility=" << fmt(b.utility) << " weighted_dsm="
     << (b.has_dsm ? fmt(b.weighted_dsm) : std::string("n/a")) << " variance=" << fmt(b.variance)
     << " normalizer=" << fmt(b.normalizer) << " J=" << fmt(b.total);
  return os.str();
}

[[noreturn]] void abort_stage(const char* stage, const TrainState& s, const std::exception& e) {
  std::string msg = e.what();
  if (!s.history.empty()) msg += " (last breakdown: " + describe(s.history.back().breakdown) + ")";
  throw TrainingAbort(stage, msg);
}

void record(TrainState& s, Phase phase, const ObjectiveBreakdown& b) {
  s.history.push_back({std::int64_t(s.history.size()), phase, b});
}

void check_data(const Tensor& x, const Vector& y) {
  if (x.rows() < 1) throw ContractError("training needs at least one example");
  if (y.size() != x.rows()) throw ShapeError("designs and objective values differ in length");
}

// Normalized weights w/Z as a plain vector; phi is constant here.
Vector current_weights(const TrainState& s, const Vector& y) {
  const Vector raw = s.config.weights.eval(s.phi, y);
  return raw / raw.mean();
}

// One Adam step on theta against the mean weighted DSM loss of the rows in
// `batch`. Returns the loss value before the update.
double theta_step(TrainState& s, const Tensor& x, const Vector& w_tilde,
                  const std::vector<Eigen::Index>& batch, double lr) {
  const auto n = Eigen::Index(batch.size());
  Tensor xb(n, x.cols());
  Vector wb(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    xb.row(j) = x.row(batch[j]);
    wb(j) = w_tilde(batch[j]);
  }
  DsmDraws draws = draw_dsm(s.theta.schedule, s.config.hyper.dsm, n, x.cols(), s.rng);
  Graph g;
  std::vector<Var> pre_norm;
  Var losses = dsm_losses(g, s.theta.schedule, draws,
                          score_fn(s.theta, NetMode::Train, &pre_norm), g.constant(std::move(xb)));
  g.set_output(mean(losses * g.constant(std::move(wb))));
  const double loss = g.forward(s.theta.params.values())(0, 0);
  TensorMap grads = g.backward();
  update_running_stats(s.theta, pre_norm);
  AdamConfig adam{.lr = lr, .clip_norm = s.config.hyper.clip_norm};
  adam_step(s.theta.params, grads, adam);
  return loss;
}

// Runs `max_steps` mini-batch steps (0 = one epoch) over a fresh shuffle.
// Returns the batch-size-weighted mean loss.
double theta_pass(TrainState& s, const Tensor& x, const Vector& w_tilde, int batch_size,
                  double lr, int max_steps) {
  const Eigen::Index m = x.rows();
  std::vector<Eigen::Index> order(m);
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::shuffle(order.begin(), order.end(), s.rng);
  const Eigen::Index bs = std::min<Eigen::Index>(batch_size, m);

  double weighted = 0.0;
  Eigen::Index seen = 0;
  int steps = 0;
  for (Eigen::Index start = 0;; start += bs) {
    if (start >= m) {
      if (max_steps == 0) break;
      std::shuffle(order.begin(), order.end(), s.rng);
      start = 0;
    }
    const Eigen::Index end = std::min(m, start + bs);
    std::vector<Eigen::Index> batch(order.begin() + start, order.begin() + end);
    weighted += theta_step(s, x, w_tilde, batch, lr) * double(batch.size());
    seen += Eigen::Index(batch.size());
    if (max_steps > 0 && ++steps >= max_steps) break;
  }
  return weighted / double(seen);
}

}  // namespace

void Hyperparams::validate() const {
  if (!(alpha >= 0.0)) throw DomainError("alpha must be >= 0");
  if (!(lambda >= 0.0)) throw DomainError("lambda must be >= 0");
  if (!(eta1 > 0.0) || !(eta2 > 0.0)) throw DomainError("eta1 and eta2 must be > 0");
  if (K < 0) throw DomainError("K must be >= 0");
  if (init_weight_steps < 0 || init_score_epochs < 0)
    throw DomainError("stage lengths must be >= 0");
  if (!(init_weight_lr > 0.0) || !(score_lr_start > 0.0) || !(score_lr_end > 0.0))
    throw DomainError("learning rates must be > 0");
  if (batch_size < 1) throw DomainError("batch size must be >= 1");
  if (alternate_theta_steps < 0) throw DomainError("alternate_theta_steps must be >= 0");
  if (clip_norm && !(*clip_norm > 0.0)) throw DomainError("clip norm must be > 0");
  dsm.validate();
}

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::InitWeight: return "init_weight";
    case Phase::InitScore: return "init_score";
    case Phase::Alternate: return "alternate";
  }
  return "?";
}

TrainState make_train_state(const TrainConfig& config, int dim) {
  config.hyper.validate();
  config.schedule.validate();
  TrainState s;
  s.config = config;
  s.config.score_arch.dim = dim;
  const std::uint64_t seed = config.hyper.seed;
  if (config.weights.is_trainable()) s.phi = init_weight_net(config.weights.arch, derive_seed(seed, 1));
  s.theta = init_score_net(s.config.score_arch, config.schedule, derive_seed(seed, 2));
  s.rng.seed(derive_seed(seed, 3));
  return s;
}

void init_weight_phase(TrainState& s, const Tensor& x, const Vector& y, int n_steps) {
  check_data(x, y);
  if (!s.config.weights.is_trainable() || n_steps <= 0) return;
  const Hyperparams& h = s.config.hyper;
  const AdamConfig adam{.lr = h.init_weight_lr, .maximize = true, .clip_norm = h.clip_norm};
  try {
    for (int step = 0; step < n_steps; ++step) {
      Graph g;
      Var yv = g.constant(y);
      ObjectiveNodes nodes =
          build_objective(g, s.config.weights.build(g, yv), yv, std::nullopt, h.alpha, 0.0);
      g.set_output(nodes.total);
      g.forward(s.phi.values());
      record(s, Phase::InitWeight, read_breakdown(nodes));
      adam_step(s.phi, g.backward(), adam);
      for (const auto& [name, t] : s.phi.values())
        if (!t.allFinite()) throw NonFiniteError("weight parameter '" + name + "' became non-finite");
      ++s.weight_steps;
    }
  } catch (const NonFiniteError& e) {
    abort_stage("init_weight", s, e);
  }
}

void init_score_phase(TrainState& s, const Tensor& x, const Vector& y, int n_epochs,
                      int batch_size) {
  check_data(x, y);
  if (n_epochs <= 0) return;
  const Hyperparams& h = s.config.hyper;
  try {
    const Vector raw = s.config.weights.eval(s.phi, y);
    const Vector w_tilde = raw / raw.mean();
    ObjectiveBreakdown base;
    base.normalizer = raw.mean();
    base.utility = w_tilde.dot(y) / double(y.size());
    base.variance = (w_tilde.array() - 1.0).square().mean();
    for (int e = 0; e < n_epochs; ++e) {
      const double frac = n_epochs > 1 ? double(e) / double(n_epochs - 1) : 0.0;
      const double lr = h.score_lr_start + (h.score_lr_end - h.score_lr_start) * frac;
      ObjectiveBreakdown b = base;
      b.weighted_dsm = theta_pass(s, x, w_tilde, batch_size, lr, 0);
      b.total = assemble_objective(b.utility, b.weighted_dsm, b.variance, h.alpha, h.lambda);
      record(s, Phase::InitScore, b);
      ++s.score_epochs;
    }
  } catch (const NonFiniteError& e) {
    abort_stage("init_score", s, e);
  }
}

void alternate_step(TrainState& s, const Tensor& x, const Vector& y) {
  check_data(x, y);
  const Hyperparams& h = s.config.hyper;
  try {
    // Per-example DSM losses under frozen draws; theta is constant for the phi step.
    DsmDraws draws = draw_dsm(s.theta.schedule, h.dsm, x.rows(), x.cols(), s.rng);
    Vector losses;
    {
      Graph g;
      g.set_output(dsm_losses(g, s.theta.schedule, draws, score_fn(s.theta, NetMode::Train),
                              g.constant(x)));
      losses = g.forward(s.theta.params.values()).col(0);
    }

    Graph g;
    Var yv = g.constant(y);
    ObjectiveNodes nodes = build_objective(g, s.config.weights.build(g, yv), yv,
                                           g.constant(losses), h.alpha, h.lambda);
    g.set_output(nodes.total);
    g.forward(s.phi.values());
    record(s, Phase::Alternate, read_breakdown(nodes));
    if (s.config.weights.is_trainable()) {
      const AdamConfig adam{.lr = h.eta1, .maximize = true, .clip_norm = h.clip_norm};
      adam_step(s.phi, g.backward(), adam);
    }

    theta_pass(s, x, current_weights(s, y), h.batch_size, h.eta2, h.alternate_theta_steps);
    ++s.rounds;
  } catch (const NonFiniteError& e) {
    abort_stage("alternate", s, e);
  }
}

TrainState train(const TrainConfig& config, const Tensor& x, const Vector& y) {
  check_data(x, y);
  TrainState s = make_train_state(config, int(x.cols()));
  init_weight_phase(s, x, y, config.hyper.init_weight_steps);
  init_score_phase(s, x, y, config.hyper.init_score_epochs, config.hyper.batch_size);
  for (int k = 0; k < config.hyper.K; ++k) alternate_step(s, x, y);
  return s;
}

Vector normalized_weights(const TrainState& state, const Vector& y) {
  return current_weights(state, y);
}

std::string history_csv(const std::vector<HistoryRow>& history) {
  std::ostringstream os;
  os << "step,phase,utility,weighted_dsm,variance,J\n";
  for (const HistoryRow& r : history) {
    const ObjectiveBreakdown& b = r.breakdown;
    os << r.step << ',' << phase_name(r.phase) << ',' << fmt(b.utility) << ','
       << (b.has_dsm ? fmt(b.weighted_dsm) : std::string()) << ',' << fmt(b.variance) << ','
       << fmt(b.total) << '\n';
  }
  return os.str();
}

}  // namespace pacdiff
