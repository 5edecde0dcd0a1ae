#include <doctest.h>

#include <cmath>
#include <cstring>

#include "pacdiff/diffusion.hpp"
#include "pacdiff/gradcheck.hpp"

using namespace pacdiff;

namespace {

const NoiseSchedule kSchedule;

Var zero_score(Graph&, Var x_t, const Vector&) { return x_t * 0.0; }
Var gaussian_score(Graph&, Var x_t, const Vector&) { return -x_t; }

}  // namespace

TEST_CASE("beta") {
  CHECK(beta(kSchedule, 0.0) == doctest::Approx(0.1));
  CHECK(beta(kSchedule, 1.0) == doctest::Approx(20.0));
  CHECK(beta(kSchedule, 0.5) == doctest::Approx(10.05));
  CHECK_THROWS_AS(beta(kSchedule, -0.01), DomainError);
  CHECK_THROWS_AS(beta(kSchedule, 1.01), DomainError);
  for (int i = 0; i < 100; ++i) CHECK(beta(kSchedule, (i + 1) / 100.0) > beta(kSchedule, i / 100.0));
}

TEST_CASE("sigma") {
  CHECK(sigma(kSchedule, 0.0) == 0.0);
  CHECK(sigma(kSchedule, 1.0) == doctest::Approx(std::sqrt(1.0 - std::exp(-10.05))));
  CHECK(sigma(kSchedule, 1.0) == doctest::Approx(0.99998).epsilon(1e-5));
  CHECK(sigma(kSchedule, 0.1) == doctest::Approx(0.3221).epsilon(1e-3));
  CHECK_THROWS_AS(sigma(kSchedule, 2.0), DomainError);
  for (int i = 0; i < 1000; ++i)
    CHECK(sigma(kSchedule, (i + 1) / 1000.0) >= sigma(kSchedule, i / 1000.0));
  // Templated on the scalar type.
  CHECK(sigma(kSchedule, 0.1f) == doctest::Approx(0.3221f).epsilon(1e-3));
}

TEST_CASE("schedule validation") {
  CHECK_THROWS_AS((NoiseSchedule{0.0, 20.0, 1e-3}.validate()), DomainError);
  CHECK_THROWS_AS((NoiseSchedule{5.0, 1.0, 1e-3}.validate()), DomainError);
  CHECK_THROWS_AS((NoiseSchedule{0.1, 20.0, 1.0}.validate()), DomainError);
  CHECK_NOTHROW(kSchedule.validate());
}

TEST_CASE("perturb") {
  const Eigen::RowVector2d x(1.0, -2.0);
  const Eigen::RowVector2d z(0.3, 0.7);
  CHECK(perturb(kSchedule, x, 0.0, z) == x);
  const double t = 0.4;
  const Eigen::RowVector2d noise_free = perturb(kSchedule, x, t, Eigen::RowVector2d::Zero());
  CHECK((noise_free - signal_scale(kSchedule, t) * x).norm() < 1e-15);

  // Find the time with sigma = 0.6: integrated beta = -log(0.64).
  const double target = -std::log(0.64);
  const double a = 9.95, b = 0.1;
  const double t6 = (-b + std::sqrt(b * b + 4 * a * target)) / (2 * a);
  const Eigen::RowVector2d out =
      perturb(kSchedule, Eigen::RowVector2d(1.0, 0.0), t6, Eigen::RowVector2d(0.0, 1.0));
  CHECK(out(0) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(out(1) == doctest::Approx(0.6).epsilon(1e-12));

  CHECK_THROWS_AS(perturb(kSchedule, x, 0.5, Tensor(Tensor::Zero(1, 3))), ShapeError);
}

TEST_CASE("draw_dsm ranges and layout") {
  Rng rng(1);
  DsmConfig cfg;
  cfg.n_time_samples = 3;
  const DsmDraws d = draw_dsm(kSchedule, cfg, 50, 4, rng);
  CHECK(d.t.size() == 150);
  CHECK(d.z.rows() == 150);
  CHECK(d.z.cols() == 4);
  CHECK(d.examples() == 50);
  CHECK(d.t.minCoeff() >= kSchedule.t_min);
  CHECK(d.t.maxCoeff() <= 1.0);
  DsmConfig bad;
  bad.n_time_samples = 0;
  CHECK_THROWS_AS(draw_dsm(kSchedule, bad, 5, 2, rng), DomainError);
}

TEST_CASE("dsm loss with the realized noise as the score is zero") {
  Rng rng(2);
  const Tensor x = standard_normal(8, 3, rng);
  const DsmDraws d = draw_dsm(kSchedule, {}, 8, 3, rng);
  ScoreFn exact = [&](Graph& g, Var, const Vector& t) {
    Tensor s = d.z;
    for (Eigen::Index i = 0; i < s.rows(); ++i) s.row(i) /= -sigma(kSchedule, t(i));
    return g.constant(s);
  };
  Graph g;
  g.set_output(dsm_losses(g, kSchedule, d, exact, g.constant(x)));
  CHECK(g.forward().cwiseAbs().maxCoeff() < 1e-20);
}

TEST_CASE("dsm loss of the zero score at a fixed draw") {
  DsmDraws d;
  d.t = Vector::Constant(1, 0.1);
  d.z = Eigen::RowVector2d(1.0, 0.0);
  Graph g;
  g.set_output(dsm_losses(g, kSchedule, d, zero_score, g.constant(Eigen::RowVector2d(0.5, -0.5))));
  const double expected = (1.0 - 1e-3) * 2.09 / (1.0 - std::exp(-0.1095));
  CHECK(g.forward()(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(20.13).epsilon(2e-3));
}

TEST_CASE("dsm losses average over time samples per example") {
  DsmDraws d;
  d.per_example = 2;
  d.t = (Vector(4) << 0.1, 0.5, 0.2, 0.9).finished();
  d.z = (Tensor(4, 1) << 1.0, -2.0, 0.5, 0.0).finished();
  Graph g;
  g.set_output(dsm_losses(g, kSchedule, d, zero_score, g.constant(Tensor::Zero(2, 1))));
  const Tensor got = g.forward();
  auto one = [](double t, double z) {
    return (1.0 - 1e-3) * beta(kSchedule, t) * z * z / std::pow(sigma(kSchedule, t), 2);
  };
  CHECK(got.rows() == 2);
  CHECK(got(0, 0) == doctest::Approx(0.5 * (one(0.1, 1.0) + one(0.5, -2.0))));
  CHECK(got(1, 0) == doctest::Approx(0.5 * (one(0.2, 0.5) + one(0.9, 0.0))));
}

TEST_CASE("analytic Gaussian score beats the zero score on common draws") {
  Rng rng(3);
  const Eigen::Index n = 100000;
  const Tensor x = standard_normal(n, 2, rng);
  const DsmDraws d = draw_dsm(kSchedule, {}, n, 2, rng);
  auto total = [&](const ScoreFn& s) {
    Graph g;
    g.set_output(mean(dsm_losses(g, kSchedule, d, s, g.constant(x))));
    return g.forward()(0, 0);
  };
  CHECK(total(gaussian_score) < total(zero_score));
}

TEST_CASE("dsm_pointwise_loss") {
  const Vector x = Eigen::Vector2d(0.3, -1.2);
  SUBCASE("non-negative and reproducible") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng a(seed), b(seed);
      const double la = dsm_pointwise_loss(kSchedule, {}, gaussian_score, x, a);
      const double lb = dsm_pointwise_loss(kSchedule, {}, gaussian_score, x, b);
      CHECK(la >= 0.0);
      CHECK(std::memcmp(&la, &lb, sizeof la) == 0);
    }
  }
  SUBCASE("non-finite score is reported") {
    ScoreFn bad = [](Graph& g, Var x_t, const Vector&) { return x_t / g.scalar(0.0); };
    Rng rng(0);
    CHECK_THROWS_AS(dsm_pointwise_loss(kSchedule, {}, bad, x, rng), NonFiniteError);
  }
}

TEST_CASE("dsm losses are differentiable in score parameters") {
  Rng rng(4);
  const Tensor x = standard_normal(6, 2, rng);
  const DsmDraws d = draw_dsm(kSchedule, {}, 6, 2, rng);
  const TensorMap p{{"A", standard_normal(2, 2, rng)}, {"c", standard_normal(1, 2, rng)}};
  GraphBuilder f = [&](Graph& g) {
    ScoreFn s = [](Graph& gg, Var x_t, const Vector&) {
      return matmul(x_t, gg.param("A")) + gg.param("c");
    };
    return mean(dsm_losses(g, kSchedule, d, s, g.constant(x)));
  };
  CHECK(finite_diff_check(f, p).max_rel_error < 1e-4);
}
