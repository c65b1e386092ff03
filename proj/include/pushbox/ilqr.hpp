#pragma once

// Gauss-Newton trajectory optimizer (iLQR) over the implicit contact step.
// A rollout chains solve_step with warm starts; the backward pass runs the
// Riccati recursion on the step linearizations with the control Hessian
// regularized adaptively; the forward pass re-rolls the perturbed policy
// u_t = u_t' + a*k_t + K_t (x_t - x_t') and a step is accepted when the
// realized cost drop clears an Armijo fraction of the predicted one.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include <pushbox/cost.hpp>
#include <pushbox/errors.hpp>
#include <pushbox/lower_dynamics.hpp>

namespace pushbox {

struct IlqrSettings {
  int max_iterations = 200;
  double cost_tol = 1e-6;   // stop when |dcost| < cost_tol * (1 + |cost|)
  double reg_init = 1e-6;   // control-Hessian regularization (dimensionless)
  double reg_up = 10.0;     // escalation factor on failure
  double reg_down = 0.5;    // relaxation factor on acceptance
  double reg_max = 1e6;     // past this the optimizer gives up
  double armijo = 1e-4;     // acceptance fraction of predicted decrease
  int alpha_steps = 11;     // step sizes 1, 1/2, ..., 2^-(alpha_steps-1)

  void validate() const {
    if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
    if (!(cost_tol > 0.0)) throw std::invalid_argument("cost_tol must be > 0");
    if (!(reg_init >= 0.0) || !(reg_max >= reg_init))
      throw std::invalid_argument("need 0 <= reg_init <= reg_max");
    if (!(reg_up > 1.0) || !(reg_down > 0.0) || !(reg_down < 1.0))
      throw std::invalid_argument("need reg_up > 1 and reg_down in (0,1)");
    if (!(armijo > 0.0)) throw std::invalid_argument("armijo must be > 0");
    if (alpha_steps < 1) throw std::invalid_argument("alpha_steps must be >= 1");
  }
};

// Scene, objective, and solver knobs bundled for one optimization run.
struct IlqrSetup {
  double h = 0.05;
  SystemParams params;
  ContactModel model;
  CostWeights weights;
  IlqrSettings settings;
  SolverSettings lower;
};

struct StepCostRow {
  double state = 0.0;
  double control = 0.0;
  double sdf = 0.0;
  double total() const { return state + control + sdf; }
};

struct IterationRow {
  int iteration = 0;
  double cost = 0.0;
  double dcost = 0.0;
  double alpha = 0.0;
  double reg = 0.0;
};

struct SolverStats {
  bool converged = false;
  int iterations = 0;             // optimizer loop passes executed
  double final_gradient_norm = 0.0;
  std::vector<IterationRow> history;  // one row per accepted step
};

struct Trajectory {
  std::vector<Eigen::VectorXd> states;     // T+1 state vectors
  std::vector<Eigen::VectorXd> controls;   // T
  std::vector<LowerSolution> lower;        // T: forces, duals, warm-start data
  std::vector<StepCostRow> per_step_cost;  // T+1; last row is the terminal term
  double cost = 0.0;
  SolverStats stats;

  int horizon() const { return static_cast<int>(controls.size()); }
  const std::vector<double>& normal_force(int t) const { return lower.at(t).fn; }
};

// Failure wrapper that keeps the best accepted trajectory readable after an
// abort, while remaining catchable as the underlying error type.
template <class Base>
class WithIncumbent : public Base {
 public:
  WithIncumbent(const std::string& msg, Trajectory t)
      : Base(msg), incumbent(std::move(t)) {}
  Trajectory incumbent;
};

namespace detail {

// Shared rollout core: law(t, x_vec) -> control for step t. Warm starts
// chain along the trajectory (step 0 starts cold), so re-rolling identical
// controls reproduces identical states.
template <class Law>
Trajectory roll(const IlqrSetup& S, const State& x0, int T, Law&& law) {
  Trajectory out;
  out.states.reserve(T + 1);
  out.controls.reserve(T);
  out.lower.reserve(T);  // reserved up front: warm pointers must stay valid
  out.per_step_cost.reserve(T + 1);
  out.states.push_back(x0.to_vector());

  State x = x0;
  for (int t = 0; t < T; ++t) {
    Eigen::VectorXd u = law(t, out.states.back());
    LowerProblem pb;
    pb.x = x;
    pb.u = u;
    pb.h = S.h;
    pb.params = S.params;
    pb.model = S.model;
    const LowerSolution* warm = out.lower.empty() ? nullptr : &out.lower.back();
    out.lower.push_back(solve_step(pb, S.lower, warm));
    x = out.lower.back().next_state;

    const GapExpansion gap = min_gap_expansion(out.states.back(), S.params);
    const auto e = stage_cost(out.states.back(), u, S.weights, &gap);
    out.per_step_cost.push_back({e.state_part, e.control_part, e.sdf_part});
    out.controls.push_back(std::move(u));
    out.states.push_back(x.to_vector());
  }
  const auto term = terminal_cost(out.states.back(), S.weights);
  out.per_step_cost.push_back({term.state_part, 0.0, 0.0});
  double total = 0.0;
  for (const auto& row : out.per_step_cost) total += row.total();
  out.cost = total;
  return out;
}

inline void check_setup(const IlqrSetup& S, const State& x0, int T) {
  S.settings.validate();
  x0.validate(S.model);
  if (T < 1) throw std::invalid_argument("horizon must be >= 1");
  S.weights.validate(x0.dim(), 2 * x0.num_points());
}

}  // namespace detail

// Open-loop rollout of a fixed control sequence.
inline Trajectory rollout(const IlqrSetup& S, const State& x0,
                          const std::vector<Eigen::VectorXd>& controls) {
  detail::check_setup(S, x0, static_cast<int>(controls.size()));
  for (const auto& u : controls)
    if (u.size() != 2 * x0.num_points() || !u.allFinite())
      throw std::invalid_argument("each control must be finite with 2 entries per pusher");
  return detail::roll(S, x0, static_cast<int>(controls.size()),
                      [&](int t, const Eigen::VectorXd&) { return controls[t]; });
}

// Step linearizations along a trajectory, for the backward pass.
inline std::vector<StepLinearization> linearize_trajectory(const IlqrSetup& S,
                                                           const Trajectory& traj) {
  const int np = pusher_count_for_dim(traj.states.at(0).size());
  std::vector<StepLinearization> lins;
  lins.reserve(traj.horizon());
  for (int t = 0; t < traj.horizon(); ++t) {
    LowerProblem pb;
    pb.x = State::from_vector(traj.states[t], np);
    pb.u = traj.controls[t];
    pb.h = S.h;
    pb.params = S.params;
    pb.model = S.model;
    lins.push_back(linearize_step(pb, traj.lower.at(t), S.lower.kappa_gradient));
  }
  return lins;
}

struct Gains {
  std::vector<Eigen::VectorXd> k;  // feedforward
  std::vector<Eigen::MatrixXd> K;  // feedback
  double d1 = 0.0;                 // sum k'Qu
  double d2 = 0.0;                 // sum k'Quu k
  double gradient_norm = 0.0;      // max_t |Qu|_inf
  double reg = 0.0;                // regularization the gains were built with

  double expected_decrease(double alpha) const {
    return -(alpha * d1 + 0.5 * alpha * alpha * d2);
  }
};

// Riccati recursion over the linearized steps. The control Hessian is
// regularized as Quu + reg * scale(Quu) * I, with scale the largest diagonal
// magnitude, so a uniform rescaling of the objective leaves the gains
// unchanged. Throws NotPositiveDefinite when that factorization still fails.
inline Gains backward_pass(const IlqrSetup& S, const Trajectory& traj,
                           const std::vector<StepLinearization>& lins,
                           double reg) {
  const int T = traj.horizon();
  if (static_cast<int>(lins.size()) != T)
    throw std::invalid_argument("need exactly one linearization per step");
  const auto n = traj.states.at(0).size();
  const auto m = traj.controls.at(0).size();

  Gains g;
  g.k.resize(T);
  g.K.resize(T);
  g.reg = reg;

  const auto term = terminal_cost(traj.states[T], S.weights);
  Eigen::VectorXd Vx = term.lx;
  Eigen::MatrixXd Vxx = term.lxx;

  for (int t = T - 1; t >= 0; --t) {
    GapExpansion gap;
    const GapExpansion* gp = nullptr;
    if (S.weights.w > 0.0) {
      gap = min_gap_expansion(traj.states[t], S.params);
      gp = &gap;
    }
    const auto e = stage_cost(traj.states[t], traj.controls[t], S.weights, gp);
    const Eigen::MatrixXd& A = lins[t].A;
    const Eigen::MatrixXd& B = lins[t].B;
    if (A.rows() != n || A.cols() != n || B.rows() != n || B.cols() != m)
      throw std::invalid_argument("linearization dimensions do not match the trajectory");

    const Eigen::VectorXd Qx = e.lx + A.transpose() * Vx;
    const Eigen::VectorXd Qu = e.lu + B.transpose() * Vx;
    const Eigen::MatrixXd Qxx = e.lxx + A.transpose() * Vxx * A;
    const Eigen::MatrixXd Quu = e.luu + B.transpose() * Vxx * B;
    const Eigen::MatrixXd Qux = e.lux + B.transpose() * Vxx * A;

    const double scale = Quu.diagonal().cwiseAbs().maxCoeff();
    const Eigen::MatrixXd Quu_reg =
        Quu + reg * scale * Eigen::MatrixXd::Identity(m, m);
    const Eigen::LLT<Eigen::MatrixXd> llt(Quu_reg);
    if (llt.info() != Eigen::Success)
      throw NotPositiveDefinite("control Hessian not positive definite at step " +
                                std::to_string(t));

    g.k[t] = -llt.solve(Qu);
    g.K[t] = -llt.solve(Qux);
    g.d1 += g.k[t].dot(Qu);
    g.d2 += g.k[t].dot(Quu * g.k[t]);
    g.gradient_norm = std::max(g.gradient_norm, Qu.lpNorm<Eigen::Infinity>());

    Vx = Qx + g.K[t].transpose() * (Quu * g.k[t] + Qu) + Qux.transpose() * g.k[t];
    Vxx = Qxx + g.K[t].transpose() * Quu * g.K[t] + g.K[t].transpose() * Qux +
          Qux.transpose() * g.K[t];
    Vxx = 0.5 * (Vxx + Vxx.transpose()).eval();
  }
  return g;
}

// Perturbed re-rollout. alpha = 0 reproduces the incumbent exactly (same
// controls, same cold/warm chain). A lower-level solver failure or a
// non-finite cost rejects the candidate (nullopt) rather than throwing.
inline std::optional<Trajectory> forward_pass(const IlqrSetup& S,
                                              const Trajectory& incumbent,
                                              const Gains& gains, double alpha) {
  const int T = incumbent.horizon();
  if (static_cast<int>(gains.k.size()) != T)
    throw std::invalid_argument("gains horizon does not match the trajectory");
  if (!(alpha >= 0.0) || !(alpha <= 1.0))
    throw std::invalid_argument("alpha must lie in [0, 1]");
  const int np = pusher_count_for_dim(incumbent.states.at(0).size());
  const State x0 = State::from_vector(incumbent.states[0], np);
  try {
    Trajectory cand =
        detail::roll(S, x0, T, [&](int t, const Eigen::VectorXd& x) {
          return (incumbent.controls[t] + alpha * gains.k[t] +
                  gains.K[t] * (x - incumbent.states[t]))
              .eval();
        });
    if (!std::isfinite(cand.cost)) return std::nullopt;
    return cand;
  } catch (const SolverError&) {
    return std::nullopt;
  }
}

// Full optimization loop: alternate backward and forward passes, escalating
// regularization on failed factorizations or line searches, until both the
// accepted cost change and the predicted full-step decrease fall below
// cost_tol * (1 + |cost|) or the iteration budget runs out.
// RegularizationExhausted and NonFiniteIterate raised after a first
// trajectory exists are rethrown with that incumbent attached.
inline Trajectory optimize(const IlqrSetup& S, const State& x0,
                           const std::vector<Eigen::VectorXd>& u_init) {
  detail::check_setup(S, x0, static_cast<int>(u_init.size()));

  Trajectory traj = rollout(S, x0, u_init);
  std::vector<StepLinearization> lins = linearize_trajectory(S, traj);

  SolverStats stats;
  const IlqrSettings& opt = S.settings;
  double reg = opt.reg_init;
  const auto escalate = [&](double r) {
    return std::min(std::max(r * opt.reg_up, std::max(opt.reg_init, 1e-8)),
                    opt.reg_max);
  };

  for (int iter = 1; iter <= opt.max_iterations; ++iter) {
    stats.iterations = iter;

    Gains gains;
    while (true) {
      try {
        gains = backward_pass(S, traj, lins, reg);
        break;
      } catch (const NotPositiveDefinite& e) {
        if (reg >= opt.reg_max) {
          traj.stats = stats;
          throw WithIncumbent<RegularizationExhausted>(
              std::string("regularization ceiling reached: ") + e.what(), traj);
        }
        reg = escalate(reg);
      }
    }
    stats.final_gradient_norm = gains.gradient_norm;

    const double tol_scaled = opt.cost_tol * (1.0 + std::abs(traj.cost));
    if (gains.expected_decrease(1.0) <= tol_scaled) {
      stats.converged = true;
      break;
    }

    bool accepted = false;
    for (int i = 0; i < opt.alpha_steps && !accepted; ++i) {
      const double alpha = std::pow(2.0, -i);
      const double predicted = gains.expected_decrease(alpha);
      if (!(predicted > 0.0)) continue;
      auto cand = forward_pass(S, traj, gains, alpha);
      if (!cand) continue;
      const double actual = traj.cost - cand->cost;
      if (actual >= opt.armijo * predicted) {
        traj = std::move(*cand);
        try {
          lins = linearize_trajectory(S, traj);
        } catch (const NonFiniteIterate& e) {
          traj.stats = stats;
          throw WithIncumbent<NonFiniteIterate>(e.what(), traj);
        }
        reg = std::max(reg * opt.reg_down, 1e-12);
        stats.history.push_back({iter, traj.cost, actual, alpha, reg});
        accepted = true;
        // A tiny accepted step only signals convergence when a full step was
        // also predicted to gain little; on friction-induced cost plateaus
        // the line search can accept micro-steps while a large descent
        // direction still exists.
        if (actual < tol_scaled &&
            gains.expected_decrease(1.0) <= tol_scaled) {
          stats.converged = true;
        }
      }
    }

    if (!accepted) {
      if (reg >= opt.reg_max) {
        traj.stats = stats;
        throw WithIncumbent<RegularizationExhausted>(
            "line search failed at maximum regularization", traj);
      }
      reg = escalate(reg);
      continue;
    }
    if (stats.converged) break;
  }

  traj.stats = stats;
  return traj;
}

}  // namespace pushbox
