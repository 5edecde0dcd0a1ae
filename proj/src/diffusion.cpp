#include "pacdiff/diffusion.hpp"

namespace pacdiff {

DsmDraws draw_dsm(const NoiseSchedule& s, const DsmConfig& config, Eigen::Index n_examples,
                  Eigen::Index dim, Rng& rng) {
  config.validate();
  const Eigen::Index rows = n_examples * config.n_time_samples;
  DsmDraws d;
  d.per_example = config.n_time_samples;
  d.t.resize(rows);
  std::uniform_real_distribution<double> uniform(s.t_min, 1.0);
  for (Eigen::Index j = 0; j < rows; ++j) d.t(j) = uniform(rng);
  d.z = standard_normal(rows, dim, rng);
  return d;
}

Var dsm_losses(Graph& g, const NoiseSchedule& s, const DsmDraws& draws, const ScoreFn& score,
               Var x) {
  const Eigen::Index rows = draws.t.size();
  const Eigen::Index n = draws.examples();
  const int k = draws.per_example;

  Vector sig(rows), coef(rows);
  for (Eigen::Index j = 0; j < rows; ++j) {
    sig(j) = sigma(s, draws.t(j));
    coef(j) = (1.0 - s.t_min) * beta(s, draws.t(j));
  }

  Var xr = x;
  if (k > 1) {
    Tensor rep = Tensor::Zero(rows, n);
    for (Eigen::Index j = 0; j < rows; ++j) rep(j, j / k) = 1.0;
    xr = matmul(g.constant(std::move(rep)), x);
  }

  Vector keep(rows), spread(rows);
  for (Eigen::Index j = 0; j < rows; ++j) {
    keep(j) = std::sqrt(1.0 - sig(j) * sig(j));
    spread(j) = sig(j);
  }
  Tensor noise = draws.z.array().colwise() * spread.array();
  Var xt = xr * g.constant(keep) + g.constant(std::move(noise));

  Tensor target = draws.z.array().colwise() / sig.array();
  Var residual = score(g, xt, draws.t) + g.constant(std::move(target));
  Var per_row = sum(square(residual), Axis::Cols) * g.constant(coef);

  if (k == 1) return per_row;
  Tensor avg = Tensor::Zero(n, rows);
  for (Eigen::Index j = 0; j < rows; ++j) avg(j / k, j) = 1.0 / k;
  return matmul(g.constant(std::move(avg)), per_row);
}

double dsm_pointwise_loss(const NoiseSchedule& s, const DsmConfig& config, const ScoreFn& score,
                          const Vector& x, Rng& rng) {
  DsmDraws draws = draw_dsm(s, config, 1, x.size(), rng);
  Graph g;
  Var loss = dsm_losses(g, s, draws, score, g.constant(Tensor(x.transpose())));
  g.set_output(loss);
  return g.forward(TensorMap{})(0, 0);
}

}  // namespace pacdiff
