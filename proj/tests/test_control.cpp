#include <doctest.h>

#include <cmath>

#include "ncs/control.hpp"

using namespace ncs;

namespace {

double scalar_residual(const PlantSpec<double>& spec, const Matrix<double>& P) {
  return (riccati_rhs(P, spec) - P).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("deadbeat plants have P = Qx and K = A") {
  for (double a : {0.75, 1.25, 2.0, -0.5}) {
    const auto spec = PlantSpec<double>::scalar(a, 1, 1, 1, 0);
    const auto sol = lqg_design(spec);
    CHECK(std::abs(sol.P(0, 0) - 1.0) < 1e-9);
    CHECK(std::abs(sol.K(0, 0) - a) < 1e-9);
    CHECK(std::abs(sol.Qe(0, 0) - a * a) < 1e-9);
    CHECK(std::abs(sol.floorCost - 1.0) < 1e-9);
    CHECK(scalar_residual(spec, sol.P) <= 1e-9);
  }
}

TEST_CASE("unit plant gives the golden ratio") {
  const auto spec = PlantSpec<double>::scalar(1, 1, 1, 1, 1);
  const auto sol = lqg_design(spec);
  const double phi = (1 + std::sqrt(5.0)) / 2;
  CHECK(std::abs(sol.P(0, 0) - phi) < 1e-9);
  // K = P / (1 + P) for A = B = Qu = 1.
  CHECK(std::abs(sol.K(0, 0) - phi / (1 + phi)) < 1e-9);
}

TEST_CASE("matrix Riccati solution satisfies the fixed point") {
  PlantSpec<double> spec;
  spec.A = (Matrix<double>(2, 2) << 1.1, 0.3, 0.0, 0.9).finished();
  spec.B = (Matrix<double>(2, 1) << 0.0, 1.0).finished();
  spec.Z = Matrix<double>::Identity(2, 2);
  spec.Qx = Matrix<double>::Identity(2, 2);
  spec.Qu = Matrix<double>::Identity(1, 1);
  const auto sol = lqg_design(spec);
  CHECK(scalar_residual(spec, sol.P) <= 1e-8);
  const Matrix<double> closed = spec.A - spec.B * sol.K;
  Eigen::EigenSolver<Matrix<double>> eig(closed);
  CHECK(eig.eigenvalues().cwiseAbs().maxCoeff() < 1.0);
}

TEST_CASE("long double instantiation agrees") {
  const auto spec = PlantSpec<long double>::scalar(1, 1, 1, 1, 1);
  const auto sol = lqg_design(spec);
  CHECK(std::abs(static_cast<double>(sol.P(0, 0)) - (1 + std::sqrt(5.0)) / 2) < 1e-9);
}

TEST_CASE("invalid plants are rejected") {
  auto bad = PlantSpec<double>::scalar(1, 1, -1, 1, 0);
  CHECK_THROWS_AS(bad.validate(), ControlError);
  auto dims = PlantSpec<double>::scalar(1, 1, 1, 1, 0);
  dims.B = Matrix<double>::Ones(2, 1);
  CHECK_THROWS_AS(lqg_design(dims), ControlError);
  // Uncontrollable unstable plant never converges.
  auto stuck = PlantSpec<double>::scalar(2, 0, 1, 1, 1);
  RiccatiOptions opts;
  opts.maxIterations = 1000;
  CHECK_THROWS_AS(solve_riccati(stuck, opts), ControlError);
}

TEST_CASE("error recursion examples") {
  const auto spec = PlantSpec<double>::scalar(1.25, 1, 1, 1, 0);
  Vector<double> e(1), w(1);
  e << 2.0;
  w << 0.5;
  CHECK(error_step(e, false, w, spec)(0) == doctest::Approx(3.0));
  CHECK(error_step(e, true, w, spec)(0) == doctest::Approx(0.5));
}

TEST_CASE("stage cost and control input") {
  const auto spec = PlantSpec<double>::scalar(0.75, 1, 1, 2, 3);
  Vector<double> x(1), u(1);
  x << 2;
  u << -1;
  CHECK(stage_cost(x, u, spec) == doctest::Approx(2 * 4 + 3 * 1));
  const auto dead = lqg_design(PlantSpec<double>::scalar(0.75, 1, 1, 1, 0));
  CHECK(control_input(x, dead)(0) == doctest::Approx(-1.5));
  CHECK(estimator_predict(x, PlantSpec<double>::scalar(0.75, 1, 1, 1, 0), dead)(0) ==
        doctest::Approx(0.0));
}

TEST_CASE("noise factor reproduces Z, including singular Z") {
  Matrix<double> Z(2, 2);
  Z << 4, 2, 2, 1;  // rank one
  const Matrix<double> L = noise_factor(Z);
  CHECK((L * L.transpose() - Z).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("input history pins and grows") {
  InputHistory<double> h(4);
  auto v = [](double x) { return Vector<double>::Constant(1, x); };
  for (int k = 0; k < 10; ++k) h.push(k, v(k));
  CHECK(h.capacity() == 4);
  CHECK(h.first_step() == 6);
  CHECK_THROWS_AS(h.at(5), ControlError);
  CHECK_THROWS_AS(h.push(12, v(0)), ControlError);

  h.pin(7);
  for (int k = 10; k < 20; ++k) h.push(k, v(k));
  CHECK(h.covers(7, 20));
  CHECK(h.at(7)(0) == 7);
  CHECK(h.capacity() >= 13);
  h.unpin();
  for (int k = 20; k < 60; ++k) h.push(k, v(k));
  CHECK_FALSE(h.covers(7, 60));
  CHECK(h.at(59)(0) == 59);
}

TEST_CASE("delayed delivery replays applied inputs") {
  const auto spec = PlantSpec<double>::scalar(1.25, 1, 1, 1, 0);
  InputHistory<double> h;
  Vector<double> x0(1);
  x0 << 2.0;

  SUBCASE("zero delay returns the sample") {
    CHECK(estimator_deliver(x0, 5, 5, h, spec)(0) == doctest::Approx(2.0));
  }
  SUBCASE("zero inputs give A^d x") {
    for (int k = 0; k < 3; ++k) h.push(k, Vector<double>::Zero(1));
    CHECK(estimator_deliver(x0, 0, 3, h, spec)(0) == doctest::Approx(2.0 * std::pow(1.25, 3)));
  }
  SUBCASE("replay matches the true plant without noise") {
    Vector<double> x = x0;
    for (int k = 0; k < 4; ++k) {
      Vector<double> u = Vector<double>::Constant(1, 0.3 * k - 1);
      h.push(k, u);
      x = plant_step(x, u, Vector<double>(Vector<double>::Zero(1)), spec);
    }
    CHECK(estimator_deliver(x0, 0, 4, h, spec)(0) == doctest::Approx(x(0)).epsilon(1e-12));
  }
  SUBCASE("missing inputs throw") {
    h.push(3, Vector<double>::Zero(1));
    CHECK_THROWS_AS(estimator_deliver(x0, 1, 4, h, spec), ControlError);
    CHECK_THROWS_AS(estimator_deliver(x0, 5, 4, h, spec), ControlError);
  }
}
