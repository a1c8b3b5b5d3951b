#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>
#include <random>

#include "nvf/ntk.hpp"
#include "test_support.hpp"

using namespace nvf;

namespace {

MatrixXd unit_row(double x, double y, double z) {
  MatrixXd m(1, 3);
  m << x, y, z;
  return m;
}

}  // namespace

TEST_CASE("hand values, depth 1") {
  MatrixXd e1 = unit_row(1, 0, 0);
  // sigma0 = 1, omega = 1: sigma1 = 1/2, sdot = 1, theta = 1/2 + 1
  CHECK(std::abs(ntk_mlp(e1, e1, 1)(0, 0) - 1.5) < 1e-12);
  // orthonormal pair: sigma1 = 1/(2pi), sdot = 1/2, theta0 = 0
  MatrixXd e2 = unit_row(0, 1, 0);
  CHECK(std::abs(ntk_mlp(e1, e2, 1)(0, 0) - 1.0 / (2.0 * M_PI)) < 1e-12);
  // antipodal pair: omega = -1 kills both terms
  MatrixXd neg = unit_row(-1, 0, 0);
  CHECK(std::abs(ntk_mlp(e1, neg, 1)(0, 0)) < 1e-12);
}

TEST_CASE("hand value, depth 2: identical unit vector") {
  // Layer 1: sigma = 1/2, theta = 3/2. Layer 2: d halves to 1/2, so r = 1/2,
  // omega = (1/2)/(1/2) = 1, sigma = r/2 = 1/4, sdot = 1:
  // theta = 1/4 + (3/2)*1 = 7/4.
  MatrixXd e1 = unit_row(1, 0, 0);
  CHECK(std::abs(ntk_mlp(e1, e1, 2)(0, 0) - 1.75) < 1e-12);
}

TEST_CASE("scaled single input, depth 1") {
  // ||x||^2 = 2: sigma0 = 2, omega = 1, sigma1 = 1, theta = 1 + 2.
  MatrixXd x = unit_row(1, 0, 1);
  CHECK(std::abs(ntk_mlp(x, x, 1)(0, 0) - 3.0) < 1e-12);
}

TEST_CASE("transpose symmetry on random inputs") {
  std::mt19937_64 rng(3);
  MatrixXd x = nvftest::random_unit_rows(5, rng);
  MatrixXd y = nvftest::random_unit_rows(7, rng);
  MatrixXd k1 = ntk_mlp(x, y, 4);
  MatrixXd k2 = ntk_mlp(y, x, 4);
  CHECK((k1 - k2.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("self gram is symmetric PSD with positive diagonal") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    MatrixXd x = nvftest::random_unit_rows(24, rng);
    for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i) *= 0.2 + 0.8 * static_cast<double>(trial + 1) / 5.0;
    for (int depth : {1, 3, 5}) {
      MatrixXd k = ntk_mlp(x, x, depth);
      CHECK((k - k.transpose()).cwiseAbs().maxCoeff() < 1e-10);
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(k);
      CHECK(eig.eigenvalues().minCoeff() >= -1e-8 * k.trace());
      CHECK(k.diagonal().minCoeff() > 0.0);
    }
  }
}

TEST_CASE("zero feature row stays finite") {
  MatrixXd x(2, 3);
  x << 0, 0, 0, 1, 0, 0;
  MatrixXd k = ntk_mlp(x, x, 3);
  CHECK(k.allFinite());
  CHECK(std::abs(k(0, 1)) < 1e-6);
}

TEST_CASE("argument validation") {
  MatrixXd x = unit_row(1, 0, 0);
  MatrixXd y(1, 2);
  y << 1, 0;
  CHECK_THROWS_AS(ntk_mlp(x, y, 1), std::invalid_argument);
  CHECK_THROWS_AS(ntk_mlp(x, x, 0), std::invalid_argument);
  CHECK_THROWS_AS(ntk_mlp(x, x, kMaxNtkDepth + 1), std::invalid_argument);
  MatrixXd bad = unit_row(1, 0, std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(ntk_mlp(x, bad, 1), std::invalid_argument);
}

TEST_CASE("empirical ntk: linear model is exact, seeds are deterministic") {
  std::mt19937_64 rng(17);
  MatrixXd x = nvftest::random_unit_rows(4, rng);
  MatrixXd y = nvftest::random_unit_rows(3, rng);
  MatrixXd k0 = empirical_ntk({}, x, y, 0);
  CHECK((k0 - x * y.transpose()).cwiseAbs().maxCoeff() < 1e-14);

  MatrixXd a = empirical_ntk({64, 64}, x, y, 123);
  MatrixXd b = empirical_ntk({64, 64}, x, y, 123);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  MatrixXd c = empirical_ntk({64, 64}, x, y, 124);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("empirical ntk approaches the closed form") {
  std::mt19937_64 rng(29);
  MatrixXd x = nvftest::random_unit_rows(8, rng);
  MatrixXd exact = ntk_mlp(x, x, 1);
  MatrixXd mean = MatrixXd::Zero(8, 8);
  const int seeds = 8;
  for (int s = 0; s < seeds; ++s) mean += empirical_ntk({1024}, x, x, 100 + static_cast<std::uint64_t>(s));
  mean /= static_cast<double>(seeds);
  CHECK((mean - exact).norm() / exact.norm() < 0.15);
}

TEST_CASE("backward pass matches central finite differences") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixXd x(4, 3), y(3, 3);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) x(i, j) = gauss(rng);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) y(i, j) = gauss(rng);
  MatrixXd gbar(4, 3);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) gbar(i, j) = gauss(rng);

  for (int depth : {1, 2, 5}) {
    NtkTape tape;
    ntk_mlp(x, y, depth, &tape);
    MatrixXd gx = MatrixXd::Zero(4, 3), gy = MatrixXd::Zero(3, 3);
    ntk_mlp_backward(x, y, tape, gbar, gx, gy);

    const double h = 1e-6;
    auto loss = [&](const MatrixXd& xx, const MatrixXd& yy) { return gbar.cwiseProduct(ntk_mlp(xx, yy, depth)).sum(); };
    for (Eigen::Index i = 0; i < 4; ++i) {
      for (int j = 0; j < 3; ++j) {
        MatrixXd xp = x, xm = x;
        xp(i, j) += h;
        xm(i, j) -= h;
        const double fd = (loss(xp, y) - loss(xm, y)) / (2.0 * h);
        CHECK(std::abs(gx(i, j) - fd) < 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
    for (Eigen::Index i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        MatrixXd yp = y, ym = y;
        yp(i, j) += h;
        ym(i, j) -= h;
        const double fd = (loss(x, yp) - loss(x, ym)) / (2.0 * h);
        CHECK(std::abs(gy(i, j) - fd) < 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("kernel block CSV header") {
  MatrixXd x = unit_row(1, 0, 0);
  KernelBlock block = ntk_mlp_block(x, x, 2);
  CHECK(block.depth == 2);
  CHECK(block.values.rows() == 1);
}
