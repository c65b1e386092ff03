#pragma once

// Trajectory objective for the box-rotation task: quadratic tracking of a
// goal state, quadratic control effort, and a one-sided distance penalty
// that pulls free pushers toward the box face,
//
//   stage(x, u)  = (x - g)' Q (x - g) + u' R u + w/2 * phi(x)^2
//   terminal(x)  = (x - g)' Q (x - g)
//
// where phi(x) = max(0, min_i gap_i(x)) is the smallest pusher gap clamped
// below at zero (penetration earns no reward). Gradients and Hessians are
// exact; at a tie between gaps the lower-index pusher's geometry is used.

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include <pushbox/model.hpp>
#include <pushbox/types.hpp>

namespace pushbox {

struct CostWeights {
  Eigen::MatrixXd Q;      // state tracking weight, n x n
  Eigen::MatrixXd R;      // control effort weight, m x m
  double w = 0.0;         // distance penalty weight
  Eigen::VectorXd goal;   // goal state, dim n

  void validate(int n, int m) const {
    if (Q.rows() != n || Q.cols() != n)
      throw std::invalid_argument("cost Q must be n x n for the state dimension");
    if (R.rows() != m || R.cols() != m)
      throw std::invalid_argument("cost R must be m x m for the control dimension");
    if (goal.size() != n)
      throw std::invalid_argument("cost goal must match the state dimension");
    if (!(w >= 0.0)) throw std::invalid_argument("cost w must be >= 0");
    for (int i = 0; i < n; ++i)
      if (Q(i, i) < 0.0)
        throw std::invalid_argument("cost Q diagonal must be nonnegative");
    for (int i = 0; i < m; ++i)
      if (!(R(i, i) > 0.0))
        throw std::invalid_argument("cost R diagonal must be positive");
    if (!Q.allFinite() || !R.allFinite() || !goal.allFinite())
      throw std::invalid_argument("cost weights must be finite");
  }
};

// Clamped minimum pusher gap with exact first and second derivatives in the
// state-vector coordinates [theta, p..., omega, v...].
struct GapExpansion {
  double value = 0.0;     // max(0, min_i gap_i)
  double raw = 0.0;       // min_i gap_i before clamping
  Eigen::VectorXd grad;   // d value / dx
  Eigen::MatrixXd hess;   // d^2 value / dx^2
};

inline int pusher_count_for_dim(Eigen::Index n) {
  if (n < 6 || (n - 2) % 4 != 0)
    throw std::invalid_argument("state vector dimension does not match any pusher layout");
  return static_cast<int>((n - 2) / 4);
}

inline GapExpansion min_gap_expansion(const Eigen::VectorXd& x,
                                      const SystemParams& params) {
  const int np = pusher_count_for_dim(x.size());
  const double theta = x(0);
  const auto f = face_frame(theta);

  GapExpansion out;
  out.grad = Eigen::VectorXd::Zero(x.size());
  out.hess = Eigen::MatrixXd::Zero(x.size(), x.size());

  int best = 0;
  double best_gap = 0.0;
  for (int i = 0; i < np; ++i) {
    const double gap = face_gap(f, x(1 + 2 * i), x(2 + 2 * i),
                                params.half_side(), params.pusher_radius);
    if (i == 0 || gap < best_gap) {
      best = i;
      best_gap = gap;
    }
  }
  out.raw = best_gap;
  if (best_gap <= 0.0) return out;  // clamped: flat zero branch

  out.value = best_gap;
  const Eigen::Vector2d p(x(1 + 2 * best), x(2 + 2 * best));
  const Eigen::Vector2d n(f.nx, f.ny), t(f.tx, f.ty);
  // gap = p.n(theta) - const with n' = t and t' = -n.
  out.grad(0) = p.dot(t);
  out.grad.segment<2>(1 + 2 * best) = n;
  out.hess(0, 0) = -p.dot(n);
  out.hess.block<1, 2>(0, 1 + 2 * best) = t.transpose();
  out.hess.block<2, 1>(1 + 2 * best, 0) = t;
  return out;
}

// Quadratic expansion of a stage or terminal cost about (x, u).
struct QuadraticExpansion {
  double value = 0.0;
  double state_part = 0.0;
  double control_part = 0.0;
  double sdf_part = 0.0;
  Eigen::VectorXd lx, lu;
  Eigen::MatrixXd lxx, luu, lux;
};

// gap == nullptr treats phi as identically zero (useful for abstract
// dimensions where no pusher geometry exists).
inline QuadraticExpansion stage_cost(const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& u,
                                     const CostWeights& weights,
                                     const GapExpansion* gap = nullptr) {
  weights.validate(static_cast<int>(x.size()), static_cast<int>(u.size()));
  QuadraticExpansion e;
  const Eigen::VectorXd err = x - weights.goal;
  e.state_part = err.dot(weights.Q * err);
  e.control_part = u.dot(weights.R * u);
  e.lx = 2.0 * weights.Q * err;
  e.lu = 2.0 * weights.R * u;
  e.lxx = 2.0 * weights.Q;
  e.luu = 2.0 * weights.R;
  e.lux = Eigen::MatrixXd::Zero(u.size(), x.size());
  if (gap != nullptr && weights.w > 0.0) {
    if (gap->grad.size() != x.size())
      throw std::invalid_argument("gap expansion dimension does not match state");
    e.sdf_part = 0.5 * weights.w * gap->value * gap->value;
    e.lx += weights.w * gap->value * gap->grad;
    e.lxx += weights.w * (gap->grad * gap->grad.transpose() + gap->value * gap->hess);
  }
  e.value = e.state_part + e.control_part + e.sdf_part;
  return e;
}

inline QuadraticExpansion terminal_cost(const Eigen::VectorXd& x,
                                        const CostWeights& weights) {
  if (weights.goal.size() != x.size())
    throw std::invalid_argument("cost goal must match the state dimension");
  QuadraticExpansion e;
  const Eigen::VectorXd err = x - weights.goal;
  e.state_part = err.dot(weights.Q * err);
  e.value = e.state_part;
  e.lx = 2.0 * weights.Q * err;
  e.lxx = 2.0 * weights.Q;
  return e;
}

// Goal vector for rotating the box to theta_goal: reference pusher positions
// are the initial ones, reference velocities are zero.
inline Eigen::VectorXd make_goal_vector(double theta_goal, const State& x0) {
  Eigen::VectorXd g = x0.to_vector();
  g.setZero();
  g(0) = theta_goal;
  for (int i = 0; i < x0.num_points(); ++i)
    g.segment<2>(1 + 2 * i) = x0.pusher_pos[i];
  return g;
}

}  // namespace pushbox
