#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "pushbox/cost.hpp"

using namespace pushbox;

namespace {

// Disc center resting `gap` outside the contact face at box angle `theta`,
// offset `lateral` along the face tangent.
Vec2 face_point(double theta, double lateral, double gap,
                const SystemParams& P) {
  const Vec2 n(-std::cos(theta), -std::sin(theta));
  const Vec2 t(std::sin(theta), -std::cos(theta));
  return (P.half_side() + P.pusher_radius + gap) * n + lateral * t;
}

CostWeights abstract_weights(int n, int m) {
  CostWeights w;
  w.Q = Eigen::MatrixXd::Identity(n, n);
  w.R = Eigen::MatrixXd::Identity(m, m);
  w.goal = Eigen::VectorXd::Zero(n);
  return w;
}

// Stage cost value recomputed from scratch at x, with the gap expansion
// re-evaluated there. Drives the finite-difference checks.
double stage_value_at(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                      const CostWeights& w, const SystemParams& P) {
  const GapExpansion gap = min_gap_expansion(x, P);
  return stage_cost(x, u, w, &gap).value;
}

Eigen::VectorXd stage_grad_at(const Eigen::VectorXd& x,
                              const Eigen::VectorXd& u, const CostWeights& w,
                              const SystemParams& P) {
  const GapExpansion gap = min_gap_expansion(x, P);
  return stage_cost(x, u, w, &gap).lx;
}

}  // namespace

TEST_CASE("stage cost reproduces a hand-computed value") {
  CostWeights w;
  w.Q = Eigen::Vector3d(1.0, 0.1, 0.1).asDiagonal();
  w.R = Eigen::Vector2d(1.0, 0.1).asDiagonal();
  w.goal = Eigen::Vector3d(0.4, -1.0, 2.0);

  Eigen::Vector3d x(0.5, -1.0, 2.0);  // err = (0.1, 0, 0)
  Eigen::Vector2d u(1.0, 0.0);
  const auto e = stage_cost(x, u, w);
  CHECK(e.value == Catch::Approx(1.01).epsilon(1e-14));
  CHECK(e.state_part == Catch::Approx(0.01).epsilon(1e-14));
  CHECK(e.control_part == Catch::Approx(1.0).epsilon(1e-14));
  CHECK(e.sdf_part == 0.0);

  // At the goal with zero control everything vanishes.
  const auto z = stage_cost(w.goal, Eigen::Vector2d::Zero(), w);
  CHECK(z.value == 0.0);
  CHECK(z.lx.norm() == 0.0);
  CHECK(z.lu.norm() == 0.0);
}

TEST_CASE("terminal cost is the state tracking term alone") {
  CostWeights w;
  w.Q = Eigen::Vector3d(2.0, 0.5, 1.0).asDiagonal();
  w.R = Eigen::MatrixXd::Identity(2, 2);
  w.goal = Eigen::Vector3d(1.0, 0.0, -1.0);
  Eigen::Vector3d x(0.0, 2.0, 0.0);

  const auto e = terminal_cost(x, w);
  const Eigen::Vector3d err = x - w.goal;
  CHECK(e.value == Catch::Approx(err.dot(w.Q * err)).epsilon(1e-14));
  CHECK(e.control_part == 0.0);
  CHECK(e.sdf_part == 0.0);
  CHECK((e.lx - 2.0 * w.Q * err).norm() == 0.0);
  CHECK((e.lxx - 2.0 * w.Q).norm() == 0.0);
}

TEST_CASE("quadratic derivatives match the closed forms") {
  const int n = 6, m = 2;
  CostWeights w = abstract_weights(n, m);
  Eigen::VectorXd qd(n);
  qd << 3.0, 0.1, 0.2, 0.4, 0.5, 0.6;
  w.Q = qd.asDiagonal();
  w.R = Eigen::Vector2d(0.3, 0.7).asDiagonal();
  w.goal = Eigen::VectorXd::LinSpaced(n, -0.2, 0.3);

  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(n, 0.5, -0.4);
  Eigen::VectorXd u = Eigen::Vector2d(1.5, -2.0);
  const auto e = stage_cost(x, u, w);
  CHECK((e.lx - 2.0 * w.Q * (x - w.goal)).norm() < 1e-14);
  CHECK((e.lu - 2.0 * w.R * u).norm() < 1e-14);
  CHECK((e.lxx - 2.0 * w.Q).norm() == 0.0);
  CHECK((e.luu - 2.0 * w.R).norm() == 0.0);
  CHECK(e.lux.norm() == 0.0);
}

TEST_CASE("pusher count from state dimension") {
  CHECK(pusher_count_for_dim(6) == 1);
  CHECK(pusher_count_for_dim(10) == 2);
  CHECK_THROWS_AS(pusher_count_for_dim(5), std::invalid_argument);
  CHECK_THROWS_AS(pusher_count_for_dim(8), std::invalid_argument);
  CHECK_THROWS_AS(pusher_count_for_dim(2), std::invalid_argument);
}

TEST_CASE("gap expansion value matches the face geometry") {
  SystemParams P;
  const double theta = 0.35;
  const double gap = 4e-3;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(6);
  x(0) = theta;
  x.segment<2>(1) = face_point(theta, 2e-3, gap, P);

  const auto e = min_gap_expansion(x, P);
  CHECK(e.raw == Catch::Approx(gap).margin(1e-12));
  CHECK(e.value == Catch::Approx(gap).margin(1e-12));
}

TEST_CASE("gap expansion clamps at contact and goes flat") {
  SystemParams P;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(6);
  x(0) = -0.2;
  x.segment<2>(1) = face_point(-0.2, 0.0, -1e-3, P);  // slight penetration

  const auto e = min_gap_expansion(x, P);
  CHECK(e.raw == Catch::Approx(-1e-3).margin(1e-12));
  CHECK(e.value == 0.0);
  CHECK(e.grad.norm() == 0.0);
  CHECK(e.hess.norm() == 0.0);
}

TEST_CASE("gap expansion derivatives agree with finite differences") {
  SystemParams P;
  std::mt19937 rng(41);
  std::uniform_real_distribution<double> ang(-0.8, 0.8);
  std::uniform_real_distribution<double> lat(-6e-3, 6e-3);
  std::uniform_real_distribution<double> g(2e-3, 8e-3);

  for (int trial = 0; trial < 20; ++trial) {
    const double theta = ang(rng);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(6);
    x(0) = theta;
    x.segment<2>(1) = face_point(theta, lat(rng), g(rng), P);

    const auto e = min_gap_expansion(x, P);
    const double h = 1e-6;
    for (int j = 0; j < 6; ++j) {
      Eigen::VectorXd xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      const double fd =
          (min_gap_expansion(xp, P).value - min_gap_expansion(xm, P).value) /
          (2.0 * h);
      CHECK(e.grad(j) == Catch::Approx(fd).margin(1e-6));
      for (int i = 0; i < 6; ++i) {
        const double fd2 = (min_gap_expansion(xp, P).grad(i) -
                            min_gap_expansion(xm, P).grad(i)) /
                           (2.0 * h);
        CHECK(e.hess(i, j) == Catch::Approx(fd2).margin(1e-6));
      }
    }
  }
}

TEST_CASE("two-pusher gap selects the minimum and breaks ties low") {
  SystemParams P;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(10);

  SECTION("second pusher strictly closer") {
    x.segment<2>(1) = face_point(0.0, 2e-3, 6e-3, P);
    x.segment<2>(3) = face_point(0.0, -2e-3, 3e-3, P);
    const auto e = min_gap_expansion(x, P);
    CHECK(e.value == Catch::Approx(3e-3).margin(1e-12));
    CHECK(e.grad.segment<2>(1).norm() == 0.0);       // pusher 0 inactive
    CHECK(e.grad.segment<2>(3).norm() > 0.5);        // unit normal on pusher 1
  }

  SECTION("exact tie uses the lower index") {
    x.segment<2>(1) = face_point(0.0, 2e-3, 5e-3, P);
    x.segment<2>(3) = face_point(0.0, -2e-3, 5e-3, P);
    const auto e = min_gap_expansion(x, P);
    CHECK(e.grad.segment<2>(1).norm() > 0.5);
    CHECK(e.grad.segment<2>(3).norm() == 0.0);
  }
}

TEST_CASE("stage cost with distance penalty matches finite differences") {
  SystemParams P;
  CostWeights w = abstract_weights(6, 2);
  Eigen::VectorXd qd(6);
  qd << 2.0, 0.1, 0.1, 0.05, 0.02, 0.02;
  w.Q = qd.asDiagonal();
  w.R = Eigen::Vector2d(0.3, 0.4).asDiagonal();
  w.w = 10.0;
  w.goal = Eigen::VectorXd::Zero(6);
  w.goal(0) = 0.3;

  std::mt19937 rng(7);
  std::uniform_real_distribution<double> ang(-0.5, 0.5);
  std::uniform_real_distribution<double> lat(-4e-3, 4e-3);
  std::uniform_real_distribution<double> g(2e-3, 8e-3);
  const Eigen::Vector2d u(0.7, -0.4);

  for (int trial = 0; trial < 10; ++trial) {
    const double theta = ang(rng);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(6);
    x(0) = theta;
    x(4) = 0.01;
    x.segment<2>(1) = face_point(theta, lat(rng), g(rng), P);

    const GapExpansion gap = min_gap_expansion(x, P);
    const auto e = stage_cost(x, u, w, &gap);
    CHECK(e.sdf_part ==
          Catch::Approx(0.5 * w.w * gap.value * gap.value).epsilon(1e-12));

    const double h = 1e-6;
    for (int j = 0; j < 6; ++j) {
      Eigen::VectorXd xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      const double fd =
          (stage_value_at(xp, u, w, P) - stage_value_at(xm, u, w, P)) /
          (2.0 * h);
      CHECK(e.lx(j) == Catch::Approx(fd).margin(1e-5));

      const Eigen::VectorXd gp = stage_grad_at(xp, u, w, P);
      const Eigen::VectorXd gm = stage_grad_at(xm, u, w, P);
      for (int i = 0; i < 6; ++i) {
        CHECK(e.lxx(i, j) ==
              Catch::Approx((gp(i) - gm(i)) / (2.0 * h)).margin(1e-5));
      }
    }
  }
}

TEST_CASE("goal vector keeps initial pusher positions and zero rates") {
  State x0;
  x0.theta_box = 0.1;
  x0.omega_box = 0.5;
  x0.pusher_pos = {{-0.03, 0.01}, {-0.03, -0.01}};
  x0.pusher_vel = {{1.0, 2.0}, {3.0, 4.0}};

  const Eigen::VectorXd g = make_goal_vector(0.7, x0);
  REQUIRE(g.size() == 10);
  CHECK(g(0) == 0.7);
  CHECK((g.segment<2>(1) - Eigen::Vector2d(-0.03, 0.01)).norm() == 0.0);
  CHECK((g.segment<2>(3) - Eigen::Vector2d(-0.03, -0.01)).norm() == 0.0);
  CHECK(g.segment<5>(5).norm() == 0.0);  // omega and pusher velocities zero
}

TEST_CASE("cost weight validation rejects malformed inputs") {
  CostWeights w = abstract_weights(6, 2);
  w.goal = Eigen::VectorXd::Zero(6);
  CHECK_NOTHROW(w.validate(6, 2));

  SECTION("dimension mismatches") {
    CHECK_THROWS_AS(w.validate(10, 2), std::invalid_argument);
    CHECK_THROWS_AS(w.validate(6, 4), std::invalid_argument);
  }
  SECTION("negative state weight") {
    w.Q(2, 2) = -1.0;
    CHECK_THROWS_AS(w.validate(6, 2), std::invalid_argument);
  }
  SECTION("nonpositive control weight") {
    w.R(1, 1) = 0.0;
    CHECK_THROWS_AS(w.validate(6, 2), std::invalid_argument);
  }
  SECTION("negative penalty weight") {
    w.w = -0.5;
    CHECK_THROWS_AS(w.validate(6, 2), std::invalid_argument);
  }
  SECTION("non-finite goal") {
    w.goal(0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(w.validate(6, 2), std::invalid_argument);
  }
}
