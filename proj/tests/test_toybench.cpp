#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pacdiff/toybench.hpp"

using namespace pacdiff;

namespace {

const ToySpec kSpec;

// Literal form: 2 sqrt(3) pi times the mixture of two bivariate Gaussian densities.
double mixture_density_form(const Eigen::Vector2d& x) {
  const Eigen::Matrix2d cov = kSpec.cov;
  const double det = cov.determinant();
  const Eigen::Matrix2d inv = cov.inverse();
  auto density = [&](const Eigen::Vector2d& mu) {
    const Eigen::Vector2d d = x - mu;
    return std::exp(-0.5 * d.dot(inv * d)) / (2.0 * std::numbers::pi * std::sqrt(det));
  };
  return 2.0 * std::sqrt(3.0) * std::numbers::pi *
         (0.45 * density(kSpec.mu1) + 0.55 * density(kSpec.mu2));
}

}  // namespace

TEST_CASE("spec invariants") {
  CHECK(kSpec.objective_weights[0] + kSpec.objective_weights[1] == doctest::Approx(1.0));
  CHECK(kSpec.data_weights[0] + kSpec.data_weights[1] == doctest::Approx(1.0));
  CHECK(kSpec.cov.determinant() == doctest::Approx(3.0));
  CHECK(kSpec.cov == kSpec.cov.transpose());
  CHECK(kSpec.m == 300);
}

TEST_CASE("toy objective values") {
  const double e3 = std::exp(-3.0);
  CHECK(toy_objective(kSpec, kSpec.mu2) == doctest::Approx(0.55 + 0.45 * e3).epsilon(1e-14));
  CHECK(toy_objective(kSpec, kSpec.mu2) == doctest::Approx(0.5724).epsilon(1e-4));
  CHECK(toy_objective(kSpec, kSpec.mu1) == doctest::Approx(0.45 + 0.55 * e3).epsilon(1e-14));
  CHECK(toy_objective(kSpec, kSpec.mu1) == doctest::Approx(0.4774).epsilon(1e-4));
  CHECK(toy_objective(kSpec, Eigen::Vector2d(0, 0)) == doctest::Approx(std::exp(-0.75)).epsilon(1e-14));
  CHECK(toy_objective(kSpec, Eigen::Vector2d(0, 0)) == doctest::Approx(0.4724).epsilon(1e-4));
}

TEST_CASE("analytic form equals the mixture-density form") {
  for (double a = -8.0; a <= 8.0; a += 0.5)
    for (double b = -8.0; b <= 8.0; b += 0.5) {
      const Eigen::Vector2d x(a, b);
      CHECK(std::abs(toy_objective(kSpec, x) - mixture_density_form(x)) < 1e-12);
    }
}

TEST_CASE("objective is bounded in (0, 1)") {
  const Tensor grid = toy_grid(kSpec, 41, -6.0, 6.0);
  CHECK(grid.col(2).minCoeff() > 0.0);
  CHECK(grid.col(2).maxCoeff() < 1.0);
}

TEST_CASE("gradient") {
  SUBCASE("closed form at mu2") {
    const Eigen::Vector2d g = toy_objective_gradient(kSpec, kSpec.mu2);
    const Eigen::Vector2d expected =
        -0.45 * std::exp(-3.0) * (kSpec.cov.inverse() * (kSpec.mu2 - kSpec.mu1));
    CHECK((g - expected).norm() < 1e-14);
  }
  SUBCASE("central differences on a grid") {
    const double h = 1e-5;
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        const Eigen::Vector2d x(-4.0 + 2.0 * i, -4.0 + 2.0 * j);
        const Eigen::Vector2d g = toy_objective_gradient(kSpec, x);
        for (int k = 0; k < 2; ++k) {
          Eigen::Vector2d e = Eigen::Vector2d::Zero();
          e(k) = h;
          const double num = (toy_objective(kSpec, Eigen::Vector2d(x + e)) -
                              toy_objective(kSpec, Eigen::Vector2d(x - e))) / (2 * h);
          CHECK(std::abs(num - g(k)) < 1e-6);
          const double rel = std::abs(num - g(k)) / std::max({std::abs(num), std::abs(g(k)), 1e-8});
          CHECK(rel < 1e-6);
        }
      }
  }
  SUBCASE("vanishes at the numerically located maximizer") {
    Eigen::Vector2d x = kSpec.mu2;
    for (int it = 0; it < 20000; ++it) x += 0.5 * toy_objective_gradient(kSpec, x);
    CHECK(toy_objective_gradient(kSpec, x).norm() < 1e-4);
    CHECK(toy_objective(kSpec, x) >= toy_objective(kSpec, kSpec.mu2));
  }
}

TEST_CASE("data mixture sampling") {
  SUBCASE("large sample statistics") {
    const OfflineDataset d = sample_pdata(kSpec, 100000, 3);
    const Tensor& x = d.x_raw;
    Eigen::Index far = 0;
    std::vector<Eigen::Index> near3, near4;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Eigen::Vector2d p = x.row(i).transpose();
      if ((p - kSpec.mu4).norm() < (p - kSpec.mu3).norm()) {
        ++far;
        near4.push_back(i);
      } else {
        near3.push_back(i);
      }
    }
    CHECK(std::abs(double(far) / 1e5 - 0.7) < 0.01);
    for (const auto* cluster : {&near3, &near4})
      for (int c = 0; c < 2; ++c) {
        double m = 0.0, v = 0.0;
        for (Eigen::Index i : *cluster) m += x(i, c);
        m /= double(cluster->size());
        for (Eigen::Index i : *cluster) v += (x(i, c) - m) * (x(i, c) - m);
        v /= double(cluster->size() - 1);
        CHECK(std::abs(v - 1.0) < 0.05);
      }
  }
  SUBCASE("single example") {
    const OfflineDataset d = sample_pdata(kSpec, 1, 3);
    CHECK(d.size() == 1);
    CHECK(d.y_raw(0) == doctest::Approx(toy_objective(kSpec, d.x_raw.row(0).transpose())));
  }
  SUBCASE("deterministic given the seed") {
    CHECK(sample_pdata(kSpec, 50, 8).x_raw == sample_pdata(kSpec, 50, 8).x_raw);
    CHECK_FALSE(sample_pdata(kSpec, 50, 8).x_raw == sample_pdata(kSpec, 50, 9).x_raw);
    CHECK_THROWS_AS(sample_pdata(kSpec, 0, 8), ContractError);
  }
  SUBCASE("normalization with a margin") {
    const OfflineDataset d = sample_pdata(kSpec, 300, 8);
    CHECK(d.x_norm.cwiseAbs().maxCoeff() <= 1.0 / 1.1 + 1e-12);
    CHECK(d.y_train.minCoeff() == 0.0);
    CHECK(d.y_train.maxCoeff() == 1.0);
  }
}

TEST_CASE("grid") {
  const Tensor g = toy_grid(kSpec);
  CHECK(g.rows() == 101 * 101);
  CHECK(g(0, 0) == -8.0);
  CHECK(g(g.rows() - 1, 1) == 8.0);
  CHECK(g(101 * 50 + 50, 0) == doctest::Approx(0.0));
  CHECK(g(101 * 50 + 50, 2) == doctest::Approx(std::exp(-0.75)));
}

TEST_CASE("percentiles") {
  CHECK(percentile_report((Vector(3) << 0.1, 0.2, 0.3).finished()).p100 == 0.3);
  CHECK(percentile((Vector(2) << 1.0, 0.0).finished(), 50.0) == doctest::Approx(0.5));
  const PercentileReport c = percentile_report(Vector::Constant(9, 0.7));
  CHECK(c.p50 == 0.7);
  CHECK(c.p80 == 0.7);
  CHECK(c.p100 == 0.7);
  CHECK(percentile(Vector::LinSpaced(11, 0.0, 10.0), 80.0) == doctest::Approx(8.0));
  CHECK_THROWS_AS(percentile(Vector(), 50.0), ContractError);
  CHECK_THROWS_AS(percentile_report(kSpec, Tensor(0, 2)), ContractError);
  const OfflineDataset d = sample_pdata(kSpec, 300, 5);
  CHECK(std::abs(percentile_report(kSpec, d.x_raw).p100 - d.y_raw.maxCoeff()) < 1e-12);
}

TEST_CASE("data score oracle matches finite differences of the log density") {
  auto log_density = [](const Eigen::Vector2d& x) {
    return std::log(0.3 * std::exp(-0.5 * (x - kSpec.mu3).squaredNorm()) +
                    0.7 * std::exp(-0.5 * (x - kSpec.mu4).squaredNorm()));
  };
  const double h = 1e-5;
  for (const Eigen::Vector2d x : {Eigen::Vector2d(0.3, -0.2), Eigen::Vector2d(3.5, 4.5),
                                  Eigen::Vector2d(-4.2, -3.1)}) {
    const Eigen::Vector2d s = pdata_score(kSpec, x);
    for (int k = 0; k < 2; ++k) {
      Eigen::Vector2d e = Eigen::Vector2d::Zero();
      e(k) = h;
      CHECK(s(k) == doctest::Approx((log_density(x + e) - log_density(x - e)) / (2 * h)).epsilon(1e-6));
    }
  }
  const Eigen::Vector2d x(1.0, 0.5);
  CHECK((target_score(kSpec, x, 2.0) - pdata_score(kSpec, x) -
         2.0 * toy_objective_gradient(kSpec, x)).norm() < 1e-15);
}
