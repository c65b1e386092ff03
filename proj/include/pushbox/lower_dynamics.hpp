#pragma once

// One implicit contact time step. The step solves a square root-finding
// problem R(z; x, u, kappa) = 0 assembled from semi-implicit momentum
// balance, unilateral contact, a polyhedral friction cone with slip slacks,
// and a ground-torque cone on the box, all relaxed through a central-path
// parameter kappa that is driven down a geometric schedule. Sensitivities of
// the next state w.r.t. the current state and control come from the implicit
// function theorem at the final kappa, using the exact same residual
// arithmetic via forward-mode duals.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "pushbox/dual.hpp"
#include "pushbox/errors.hpp"
#include "pushbox/model.hpp"
#include "pushbox/types.hpp"

namespace pushbox {

struct SolverSettings {
  double kappa0 = 1e-3;        // central-path start
  double kappa_final = 1e-8;   // central-path end (smoothed dynamics)
  double kappa_factor = 0.1;   // geometric reduction per stage
  // Central-path point for differentiation. 0 differentiates at the solved
  // kappa_final point; a larger value re-centers the solution on the path at
  // that relaxation first, which keeps gradients informative across friction
  // deadbands. Dynamics are unaffected; solve_step ignores this field.
  double kappa_gradient = 0.0;
  double tol = 1e-8;           // accepted infinity-norm residual
  double tol_polish = 1e-12;   // keep iterating below this while progressing
  double stage_tol_ratio = 0.03;  // intermediate stages solve to ratio*kappa
  int max_iters = 100;         // Newton iterations per stage
  double ftb = 0.99;           // fraction-to-boundary parameter
  double backtrack = 0.5;      // line-search step shrink factor
  double cull_reach_factor = 2.0;  // contacts farther than this*reach sit out
  bool collect_diagnostics = false;
};

struct LowerProblem {
  State x;
  Control u;
  double h = 0.05;
  SystemParams params;
  ContactModel model;

  void validate() const {
    params.validate();
    model.validate();
    x.validate(model);
    if (u.size() != 2 * model.num_points()) {
      throw std::invalid_argument("control dimension must be 2 per pusher point");
    }
    if (!(h > 0.0) || !u.allFinite()) {
      throw std::invalid_argument("step length must be > 0 and controls finite");
    }
  }
};

// Index map of the decision vector. Per contact i the unknowns are the next
// pusher velocity (2), and impulses: normal, tangential +/-, slip slack;
// globally the next box rate and the ground torque pair with its slack.
struct VarLayout {
  int np = 1;
  int nz() const { return 6 * np + 4; }
  int v(int i, int c) const { return 2 * i + c; }
  int omega() const { return 2 * np; }
  int ln(int i) const { return 2 * np + 1 + i; }
  int ltp(int i) const { return 3 * np + 1 + i; }
  int ltm(int i) const { return 4 * np + 1 + i; }
  int beta(int i) const { return 5 * np + 1 + i; }
  int gp() const { return 6 * np + 1; }
  int gm() const { return 6 * np + 2; }
  int gb() const { return 6 * np + 3; }
};

struct StepDiagRow {
  double kappa;
  int iteration;
  double residual_inf;
  double alpha;
};

struct LowerSolution {
  State next_state;
  std::vector<double> fn, ft;      // contact forces, N (impulse / h)
  double ground_torque = 0.0;      // N m exerted on the box by ground friction
  Eigen::VectorXd duals_and_slacks;  // full converged decision vector
  double residual_norm = 0.0;
  double kappa = 0.0;
  int iterations = 0;
  std::array<bool, 2> contact_active{true, true};
  bool ground_active = true;
  std::vector<StepDiagRow> diag;
};

struct StepLinearization {
  Eigen::MatrixXd A;  // d next_state / d state
  Eigen::MatrixXd B;  // d next_state / d control
};

namespace detail {

constexpr int kMaxLanes = 32;
using Ad = Dual<kMaxLanes>;

template <class S>
struct StepInputs {
  S theta{}, omega{};
  std::array<S, 2> px{}, py{}, vx{}, vy{}, ux{}, uy{};
};

inline StepInputs<double> plain_inputs(const LowerProblem& pb) {
  StepInputs<double> in;
  in.theta = pb.x.theta_box;
  in.omega = pb.x.omega_box;
  for (int i = 0; i < pb.model.num_points(); ++i) {
    in.px[i] = pb.x.pusher_pos[i].x();
    in.py[i] = pb.x.pusher_pos[i].y();
    in.vx[i] = pb.x.pusher_vel[i].x();
    in.vy[i] = pb.x.pusher_vel[i].y();
    in.ux[i] = pb.u(2 * i);
    in.uy[i] = pb.u(2 * i + 1);
  }
  return in;
}

// Constants of one step shared by the residual, its duals, and the interior
// bookkeeping.
struct StepContext {
  int np = 1;
  double h = 0.05;
  double pusher_mass = 0.1;
  double inertia = 0.0;
  double half_side = 0.01;
  double pusher_radius = 0.0025;
  double mu_pusher = 0.5;
  double tau_bound = 0.0;  // impulse bound h * tau_max
  bool ground_active = false;
  bool friction_active = true;
  std::array<bool, 2> contact_active{true, true};
  bool spring_active = false;
  double k_spring = 0.0, c_spring = 0.0, rest_length = 0.0;
  double eps_dir = 1e-9;
  Vec2 fallback_dir = Vec2(1.0, 0.0);
  double kappa = 0.0;
};

inline StepContext make_context(const LowerProblem& pb) {
  StepContext C;
  C.np = pb.model.num_points();
  C.h = pb.h;
  C.pusher_mass = pb.params.pusher_mass;
  C.inertia = pb.params.box_inertia;
  C.half_side = pb.params.half_side();
  C.pusher_radius = pb.params.pusher_radius;
  C.mu_pusher = pb.params.mu_pusher;
  const double load = pb.params.mass_box * pb.params.gravity;
  C.tau_bound = pb.h * corner_friction_torque(0.0, load, pb.params).tau_max;
  C.ground_active = C.tau_bound > 0.0;
  C.friction_active = C.mu_pusher > 0.0;
  C.spring_active = pb.model.kind == ContactModelKind::kFdlc;
  C.k_spring = pb.model.stiffness;
  C.c_spring = pb.model.damping;
  C.rest_length = pb.model.rest_length;
  C.eps_dir = pb.params.eps_dir;
  if (C.spring_active) {
    const Vec2 r = pb.x.pusher_pos[1] - pb.x.pusher_pos[0];
    C.fallback_dir = r.norm() > pb.params.eps_dir ? Vec2(r / r.norm()) : Vec2(1.0, 0.0);
  }
  return C;
}

// Residual of the relaxed step equations. Rows mirror the decision layout:
// pusher momentum (impulse units), box angular momentum, gap complementarity
// at the next configuration, friction-cone complementarity against the
// next-step tangential velocity, and the ground-torque cone against the
// next-step box rate. Inactive blocks pin their unknowns instead. When
// `interior_out` is given it receives every quantity the interior-point
// iteration must keep strictly positive (value path only).
template <class S>
void residual_core(const StepContext& C, const StepInputs<S>& in, const S* z,
                   S* r, double* interior_out = nullptr, int* interior_n = nullptr) {
  const VarLayout L{C.np};
  const double h = C.h;
  int ic = 0;
  auto keep_positive = [&](const S& q) {
    if (interior_out != nullptr) interior_out[ic++] = value_of(q);
  };

  const S wplus = z[L.omega()];
  const S thp = in.theta + h * wplus;
  const FaceFrame<S> F = face_frame(thp);

  std::array<S, 2> pxp{}, pyp{};
  for (int i = 0; i < C.np; ++i) {
    pxp[i] = in.px[i] + h * z[L.v(i, 0)];
    pyp[i] = in.py[i] + h * z[L.v(i, 1)];
  }

  // Spring-damper pair forces at the next configuration/velocities.
  std::array<S, 2> fsx{}, fsy{};
  if (C.spring_active) {
    const S rx = pxp[1] - pxp[0];
    const S ry = pyp[1] - pyp[0];
    const S d = sqrt(rx * rx + ry * ry);
    S dirx, diry, ext;
    if (value_of(d) <= C.eps_dir) {
      // Coincident endpoints: fall back to the incoming direction (constant).
      dirx = S(C.fallback_dir.x());
      diry = S(C.fallback_dir.y());
      ext = -C.rest_length;
    } else {
      dirx = rx / d;
      diry = ry / d;
      ext = d - C.rest_length;
    }
    const S rate = (z[L.v(1, 0)] - z[L.v(0, 0)]) * dirx +
                   (z[L.v(1, 1)] - z[L.v(0, 1)]) * diry;
    const S fs = -C.k_spring * ext - C.c_spring * rate;  // along p1->p2
    fsx[1] += fs * dirx;   // exerted by point 1 on point 2
    fsy[1] += fs * diry;
    fsx[0] -= fs * dirx;
    fsy[0] -= fs * diry;
  }

  // Pusher momentum: m (v+ - v) = h u + h f_spring + contact impulse.
  for (int i = 0; i < C.np; ++i) {
    S fx = h * in.ux[i] + h * fsx[i];
    S fy = h * in.uy[i] + h * fsy[i];
    if (C.contact_active[i]) {
      const S lam_n = z[L.ln(i)];
      const S lam_t = z[L.ltp(i)] - z[L.ltm(i)];
      fx += lam_n * F.nx + lam_t * F.tx;
      fy += lam_n * F.ny + lam_t * F.ty;
    }
    r[L.v(i, 0)] = C.pusher_mass * (z[L.v(i, 0)] - in.vx[i]) - fx;
    r[L.v(i, 1)] = C.pusher_mass * (z[L.v(i, 1)] - in.vy[i]) - fy;
  }

  // Box angular momentum: I (w+ - w) = contact torques + ground torque.
  S torque(0.0);
  for (int i = 0; i < C.np; ++i) {
    if (!C.contact_active[i]) continue;
    const S arm = pxp[i] * F.tx + pyp[i] * F.ty;
    torque += arm * z[L.ln(i)] - C.half_side * (z[L.ltp(i)] - z[L.ltm(i)]);
  }
  if (C.ground_active) torque += z[L.gp()] - z[L.gm()];
  r[L.omega()] = C.inertia * (wplus - in.omega) - torque;

  // Gap complementarity at the next configuration.
  for (int i = 0; i < C.np; ++i) {
    if (C.contact_active[i]) {
      const S gap = face_gap(F, pxp[i], pyp[i], C.half_side, C.pusher_radius);
      r[L.ln(i)] = z[L.ln(i)] * gap - C.kappa;
      keep_positive(z[L.ln(i)]);
      keep_positive(gap);
    } else {
      r[L.ln(i)] = z[L.ln(i)];
    }
  }

  // Friction cone with slip slack beta:
  //   (beta + v_t) lt+ = kappa, (beta - v_t) lt- = kappa,
  //   (mu ln - lt+ - lt-) beta = kappa.
  for (int i = 0; i < C.np; ++i) {
    if (C.contact_active[i] && C.friction_active) {
      const S vt = z[L.v(i, 0)] * F.tx + z[L.v(i, 1)] * F.ty - wplus * C.half_side;
      const S cone = C.mu_pusher * z[L.ln(i)] - z[L.ltp(i)] - z[L.ltm(i)];
      r[L.ltp(i)] = (z[L.beta(i)] + vt) * z[L.ltp(i)] - C.kappa;
      r[L.ltm(i)] = (z[L.beta(i)] - vt) * z[L.ltm(i)] - C.kappa;
      r[L.beta(i)] = cone * z[L.beta(i)] - C.kappa;
      keep_positive(z[L.ltp(i)]);
      keep_positive(z[L.ltm(i)]);
      keep_positive(z[L.beta(i)]);
      keep_positive(z[L.beta(i)] + vt);
      keep_positive(z[L.beta(i)] - vt);
      keep_positive(cone);
    } else {
      r[L.ltp(i)] = z[L.ltp(i)];
      r[L.ltm(i)] = z[L.ltm(i)];
      r[L.beta(i)] = z[L.beta(i)] - 1.0;
    }
  }

  // Ground torque cone against the next box rate, same pattern.
  if (C.ground_active) {
    const S margin = C.tau_bound - z[L.gp()] - z[L.gm()];
    r[L.gp()] = (z[L.gb()] + wplus) * z[L.gp()] - C.kappa;
    r[L.gm()] = (z[L.gb()] - wplus) * z[L.gm()] - C.kappa;
    r[L.gb()] = margin * z[L.gb()] - C.kappa;
    keep_positive(z[L.gp()]);
    keep_positive(z[L.gm()]);
    keep_positive(z[L.gb()]);
    keep_positive(z[L.gb()] + wplus);
    keep_positive(z[L.gb()] - wplus);
    keep_positive(margin);
  } else {
    r[L.gp()] = z[L.gp()];
    r[L.gm()] = z[L.gm()];
    r[L.gb()] = z[L.gb()] - 1.0;
  }

  if (interior_n != nullptr) *interior_n = ic;
}

inline double predicted_gap(const StepContext& C, const StepInputs<double>& in,
                            int i, double wplus, double vx, double vy) {
  const auto F = face_frame(in.theta + C.h * wplus);
  return face_gap(F, in.px[i] + C.h * vx, in.py[i] + C.h * vy, C.half_side,
                  C.pusher_radius);
}

}  // namespace detail

// Residual of the full step system (all contacts participating) at a given
// decision vector and relaxation kappa.
inline Eigen::VectorXd assemble_residual(const LowerProblem& pb,
                                         const Eigen::VectorXd& z,
                                         double kappa) {
  pb.validate();
  detail::StepContext C = detail::make_context(pb);
  C.kappa = kappa;
  const VarLayout L{C.np};
  if (z.size() != L.nz()) throw std::invalid_argument("decision vector has wrong size");
  const auto in = detail::plain_inputs(pb);
  Eigen::VectorXd r(L.nz());
  detail::residual_core<double>(C, in, z.data(), r.data());
  return r;
}

// Jacobian of assemble_residual w.r.t. the decision vector (dual pass).
inline Eigen::MatrixXd residual_jacobian(const LowerProblem& pb,
                                         const Eigen::VectorXd& z,
                                         double kappa) {
  using detail::Ad;
  detail::StepContext C = detail::make_context(pb);
  C.kappa = kappa;
  const VarLayout L{C.np};
  const int nz = L.nz();
  detail::StepInputs<Ad> in;
  const auto pin = detail::plain_inputs(pb);
  in.theta = pin.theta;
  in.omega = pin.omega;
  for (int i = 0; i < C.np; ++i) {
    in.px[i] = pin.px[i]; in.py[i] = pin.py[i];
    in.vx[i] = pin.vx[i]; in.vy[i] = pin.vy[i];
    in.ux[i] = pin.ux[i]; in.uy[i] = pin.uy[i];
  }
  std::array<Ad, 16> zd;
  for (int j = 0; j < nz; ++j) zd[j] = Ad::seeded(z(j), j);
  std::array<Ad, 16> rd;
  detail::residual_core<Ad>(C, in, zd.data(), rd.data());
  Eigen::MatrixXd J(nz, nz);
  for (int i = 0; i < nz; ++i)
    for (int j = 0; j < nz; ++j) J(i, j) = rd[i].g[j];
  return J;
}

namespace detail {

struct NewtonScratch {
  Eigen::VectorXd r, r_try, dz, z_try;
  Eigen::MatrixXd J;
  std::array<double, 24> interior{}, interior_try{};
};

inline double inf_norm(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

// Damped Newton on R(z; kappa) = 0 down the kappa schedule. Keeps every
// interior quantity strictly positive via fraction-to-the-boundary step
// limiting plus backtracking on the residual 2-norm.
inline void newton_solve(const StepContext& C0, const StepInputs<double>& in,
                         const SolverSettings& st, Eigen::VectorXd& z,
                         int& total_iters, double& final_rn,
                         std::vector<StepDiagRow>* diag) {
  StepContext C = C0;
  const VarLayout L{C.np};
  const int nz = L.nz();
  NewtonScratch S;
  S.r.resize(nz);
  S.r_try.resize(nz);
  S.J.resize(nz, nz);

  StepInputs<Ad> din;
  din.theta = in.theta;
  din.omega = in.omega;
  for (int i = 0; i < C.np; ++i) {
    din.px[i] = in.px[i]; din.py[i] = in.py[i];
    din.vx[i] = in.vx[i]; din.vy[i] = in.vy[i];
    din.ux[i] = in.ux[i]; din.uy[i] = in.uy[i];
  }

  std::vector<double> kappas;
  for (double k = st.kappa0; k > st.kappa_final; k *= st.kappa_factor) {
    kappas.push_back(k);
    if (kappas.size() > 64) break;  // guard against non-contracting schedules
  }
  kappas.push_back(st.kappa_final);

  std::array<Ad, 16> zd, rd;
  for (size_t stage = 0; stage < kappas.size(); ++stage) {
    C.kappa = kappas[stage];
    const bool last = stage + 1 == kappas.size();
    const double stage_tol =
        last ? st.tol_polish : std::max(st.tol, C.kappa * st.stage_tol_ratio);
    // Intermediate stages only need to track the path loosely; the final
    // stage owns the accuracy contract and gets the full budget.
    const int iter_cap = last ? st.max_iters : std::min(st.max_iters, 40);

    double prev_rn = std::numeric_limits<double>::infinity();
    int it = 0;
    for (; it < iter_cap; ++it) {
      int n_int = 0;
      residual_core<double>(C, in, z.data(), S.r.data(), S.interior.data(), &n_int);
      if (!S.r.allFinite()) throw NonFiniteIterate("step residual is not finite");
      const double rn = inf_norm(S.r);
      if (rn <= stage_tol) break;
      // On the final stage, stop polishing once progress stalls at an
      // acceptable level; the acceptance threshold is checked at the end.
      if (last && rn <= st.tol && rn > 0.75 * prev_rn) break;
      prev_rn = rn;

      for (int j = 0; j < nz; ++j) zd[j] = Ad::seeded(z(j), j);
      residual_core<Ad>(C, din, zd.data(), rd.data());
      for (int i = 0; i < nz; ++i)
        for (int j = 0; j < nz; ++j) S.J(i, j) = rd[i].g[j];

      Eigen::FullPivLU<Eigen::MatrixXd> lu(S.J);
      if (!lu.isInvertible()) {
        // One Tikhonov retry; genuine rank deficiency surfaces as failure.
        const double shift = 1e-14 * std::max(1.0, S.J.cwiseAbs().maxCoeff());
        lu.compute(S.J + shift * Eigen::MatrixXd::Identity(nz, nz));
        if (!lu.isInvertible()) {
          throw SingularJacobian("newton jacobian is singular during the step solve");
        }
      }
      S.dz = lu.solve(-S.r);
      if (!S.dz.allFinite()) throw NonFiniteIterate("newton direction is not finite");

      // Fraction-to-boundary plus backtracking; every trial must keep the
      // nonlinear interior quantities positive and decrease the residual.
      const double m0 = S.r.norm();
      auto try_direction = [&](int halvings) {
        double alpha = 1.0;
        auto limit_var = [&](int idx) {
          if (S.dz(idx) < 0.0) {
            alpha = std::min(alpha, -st.ftb * z(idx) / S.dz(idx));
          }
        };
        for (int i = 0; i < C.np; ++i) {
          if (!C.contact_active[i]) continue;
          limit_var(L.ln(i));
          if (C.friction_active) {
            limit_var(L.ltp(i));
            limit_var(L.ltm(i));
            limit_var(L.beta(i));
          }
        }
        if (C.ground_active) {
          limit_var(L.gp());
          limit_var(L.gm());
          limit_var(L.gb());
        }
        for (int ls = 0; ls < halvings; ++ls) {
          S.z_try = z + alpha * S.dz;
          int n_try = 0;
          residual_core<double>(C, in, S.z_try.data(), S.r_try.data(),
                                S.interior_try.data(), &n_try);
          bool ok = S.r_try.allFinite();
          for (int q = 0; ok && q < n_try; ++q) {
            ok = S.interior_try[q] >= (1.0 - st.ftb) * S.interior[q];
          }
          if (ok && S.r_try.norm() <= (1.0 - 1e-4 * alpha) * m0) return alpha;
          alpha *= st.backtrack;
        }
        return -1.0;
      };

      double used_alpha = try_direction(30);
      if (used_alpha < 0.0) {
        // The pure Newton direction is blocked (near-singular geometry or a
        // cone boundary). Fall back to damped least-squares directions,
        // which bound the step and guarantee descent on |R|_2.
        const Eigen::MatrixXd JtJ = S.J.transpose() * S.J;
        const Eigen::VectorXd g = S.J.transpose() * S.r;
        const double s = std::max(JtJ.diagonal().maxCoeff(), 1e-300);
        for (double nu = 1e-8; nu <= 1e6; nu *= 100.0) {
          Eigen::LLT<Eigen::MatrixXd> llt(
              JtJ + nu * s * Eigen::MatrixXd::Identity(nz, nz));
          if (llt.info() != Eigen::Success) continue;
          S.dz = llt.solve(-g);
          if (!S.dz.allFinite()) continue;
          used_alpha = try_direction(12);
          if (used_alpha > 0.0) break;
        }
      }
      if (used_alpha < 0.0) {
        throw MaxIterationsExceeded("newton line search failed to make progress");
      }
      z = S.z_try;
      if (diag != nullptr) diag->push_back({C.kappa, it, inf_norm(S.r), used_alpha});
    }
    total_iters += it;
    if (it >= st.max_iters && last) {
      // Intermediate stages may hand a loose iterate to the next stage; the
      // final stage owns the accuracy contract.
      int n_int = 0;
      residual_core<double>(C, in, z.data(), S.r.data(), S.interior.data(), &n_int);
      if (inf_norm(S.r) > st.tol) {
        throw MaxIterationsExceeded("newton iteration budget exhausted");
      }
    }
  }

  C.kappa = kappas.back();
  residual_core<double>(C, in, z.data(), S.r.data());
  final_rn = inf_norm(S.r);
  if (!(final_rn <= st.tol)) {
    throw MaxIterationsExceeded("step residual did not meet tolerance");
  }
}

// Deterministic strictly interior starting point: free-step velocities,
// healed along the contact normal so predicted gaps stay positive.
inline Eigen::VectorXd cold_start(const StepContext& C,
                                  const StepInputs<double>& in) {
  const VarLayout L{C.np};
  Eigen::VectorXd z = Eigen::VectorXd::Zero(L.nz());
  double wplus = in.omega;
  std::array<double, 2> vx{}, vy{};
  for (int i = 0; i < C.np; ++i) {
    vx[i] = in.vx[i] + C.h / C.pusher_mass * in.ux[i];
    vy[i] = in.vy[i] + C.h / C.pusher_mass * in.uy[i];
  }
  const auto Fp = face_frame(in.theta + C.h * wplus);
  for (int i = 0; i < C.np; ++i) {
    if (!C.contact_active[i]) continue;
    const double g = predicted_gap(C, in, i, wplus, vx[i], vy[i]);
    if (g <= 1e-9) {
      // Keep the tangential part of the free velocity, retreat the normal
      // part just enough to stay outside the face.
      const double push = (1e-6 - g) / C.h;
      vx[i] += push * Fp.nx;
      vy[i] += push * Fp.ny;
    }
  }
  // If box rotation alone penetrates a gap (extreme spin), restart from
  // all-zero velocities with the same normal healing.
  bool ok = true;
  for (int i = 0; i < C.np; ++i) {
    if (C.contact_active[i] &&
        predicted_gap(C, in, i, wplus, vx[i], vy[i]) <= 1e-9) {
      ok = false;
    }
  }
  if (!ok) {
    wplus = 0.0;
    for (int i = 0; i < C.np; ++i) {
      vx[i] = 0.0;
      vy[i] = 0.0;
      const double g = predicted_gap(C, in, i, 0.0, 0.0, 0.0);
      if (C.contact_active[i] && g <= 1e-9) {
        const auto F = face_frame(in.theta);
        const double push = (1e-8 - g) / C.h;
        vx[i] += push * F.nx;
        vy[i] += push * F.ny;
      }
    }
  }
  for (int i = 0; i < C.np; ++i) {
    z(L.v(i, 0)) = vx[i];
    z(L.v(i, 1)) = vy[i];
  }
  z(L.omega()) = wplus;

  const auto F = face_frame(in.theta + C.h * wplus);
  for (int i = 0; i < C.np; ++i) {
    if (!C.contact_active[i]) {
      z(L.beta(i)) = 1.0;
      continue;
    }
    z(L.ln(i)) = 1e-3;
    if (C.friction_active) {
      z(L.ltp(i)) = z(L.ltm(i)) = 0.25 * C.mu_pusher * z(L.ln(i));
      const double vt = vx[i] * F.tx + vy[i] * F.ty - wplus * C.half_side;
      z(L.beta(i)) = std::abs(vt) + 0.1;
    } else {
      z(L.beta(i)) = 1.0;
    }
  }
  if (C.ground_active) {
    z(L.gp()) = z(L.gm()) = 0.25 * C.tau_bound;
    z(L.gb()) = std::abs(wplus) + 0.1;
  } else {
    z(L.gb()) = 1.0;
  }
  return z;
}

// Clamp a prior solution back into the strict interior so it can seed the
// next solve.
inline Eigen::VectorXd warm_start(const StepContext& C,
                                  const StepInputs<double>& in,
                                  const Eigen::VectorXd& prior) {
  const VarLayout L{C.np};
  Eigen::VectorXd z = prior;
  const double floor = 1e-8;

  double wplus = z(L.omega());
  bool feasible = true;
  for (int i = 0; i < C.np; ++i) {
    if (C.contact_active[i] &&
        predicted_gap(C, in, i, wplus, z(L.v(i, 0)), z(L.v(i, 1))) <= 1e-12) {
      feasible = false;
    }
  }
  if (!feasible) return cold_start(C, in);

  const auto F = face_frame(in.theta + C.h * wplus);
  for (int i = 0; i < C.np; ++i) {
    if (!C.contact_active[i]) {
      z(L.ln(i)) = z(L.ltp(i)) = z(L.ltm(i)) = 0.0;
      z(L.beta(i)) = 1.0;
      continue;
    }
    z(L.ln(i)) = std::max(z(L.ln(i)), floor);
    if (C.friction_active) {
      z(L.ltp(i)) = std::max(z(L.ltp(i)), floor);
      z(L.ltm(i)) = std::max(z(L.ltm(i)), floor);
      if (C.mu_pusher * z(L.ln(i)) - z(L.ltp(i)) - z(L.ltm(i)) <= 0.0) {
        z(L.ltp(i)) = z(L.ltm(i)) = 0.25 * C.mu_pusher * z(L.ln(i));
      }
      const double vt =
          z(L.v(i, 0)) * F.tx + z(L.v(i, 1)) * F.ty - wplus * C.half_side;
      z(L.beta(i)) = std::max(z(L.beta(i)), floor);
      if (z(L.beta(i)) - std::abs(vt) <= 0.0) z(L.beta(i)) = std::abs(vt) + 0.1;
    } else {
      z(L.ltp(i)) = z(L.ltm(i)) = 0.0;
      z(L.beta(i)) = 1.0;
    }
  }
  if (C.ground_active) {
    z(L.gp()) = std::max(z(L.gp()), floor);
    z(L.gm()) = std::max(z(L.gm()), floor);
    if (C.tau_bound - z(L.gp()) - z(L.gm()) <= 0.0) {
      z(L.gp()) = z(L.gm()) = 0.25 * C.tau_bound;
    }
    z(L.gb()) = std::max(z(L.gb()), floor);
    if (z(L.gb()) - std::abs(wplus) <= 0.0) z(L.gb()) = std::abs(wplus) + 0.1;
  } else {
    z(L.gp()) = z(L.gm()) = 0.0;
    z(L.gb()) = 1.0;
  }
  return z;
}

// A contact only participates in the step if the pusher could plausibly
// close its current gap within the step; everything else is left exactly
// force-free. A post-solve safety check re-includes a contact whose
// free-flight prediction lands too close anyway.
inline std::array<bool, 2> cull_contacts(const StepContext& C,
                                         const LowerProblem& pb,
                                         const SolverSettings& st) {
  std::array<bool, 2> active{false, false};
  double vel_sum = 0.0;
  for (int i = 0; i < C.np; ++i) vel_sum += pb.x.pusher_vel[i].norm();
  for (int i = 0; i < C.np; ++i) {
    const double gap0 = signed_distance(pb.x.theta_box, pb.x.pusher_pos[i], pb.params);
    const double speed = pb.x.pusher_vel[i].norm() +
                         std::abs(pb.x.omega_box) *
                             (pb.x.pusher_pos[i].norm() + 2.0 * C.half_side);
    double force_cap = pb.u.segment<2>(2 * i).norm();
    if (C.spring_active) {
      const double d0 = (pb.x.pusher_pos[1] - pb.x.pusher_pos[0]).norm();
      force_cap += C.k_spring * (std::abs(d0 - C.rest_length) + C.h * vel_sum) +
                   C.c_spring * vel_sum;
    }
    const double reach =
        C.h * speed + C.h * C.h / C.pusher_mass * force_cap + 1e-6;
    active[i] = gap0 <= st.cull_reach_factor * reach;
  }
  return active;
}

}  // namespace detail

// Solve one implicit contact step. `warm` may carry the previous step's
// solution; identical inputs and warm starts reproduce identical iterates.
inline LowerSolution solve_step(const LowerProblem& pb,
                                const SolverSettings& st = {},
                                const LowerSolution* warm = nullptr) {
  pb.validate();
  detail::StepContext C = detail::make_context(pb);
  const VarLayout L{C.np};
  const auto in = detail::plain_inputs(pb);

  C.contact_active = detail::cull_contacts(C, pb, st);

  LowerSolution sol;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::VectorXd z =
        (warm != nullptr && warm->duals_and_slacks.size() == L.nz())
            ? detail::warm_start(C, in, warm->duals_and_slacks)
            : detail::cold_start(C, in);

    sol = LowerSolution{};
    sol.diag.clear();
    int iters = 0;
    double rn = 0.0;
    detail::newton_solve(C, in, st, z, iters, rn,
                         st.collect_diagnostics ? &sol.diag : nullptr);

    sol.duals_and_slacks = z;
    sol.residual_norm = rn;
    sol.kappa = st.kappa_final;
    sol.iterations = iters;
    sol.contact_active = C.contact_active;
    sol.ground_active = C.ground_active;

    State next = pb.x;
    next.theta_box = pb.x.theta_box + pb.h * z(L.omega());
    next.omega_box = z(L.omega());
    for (int i = 0; i < C.np; ++i) {
      next.pusher_vel[i] = Vec2(z(L.v(i, 0)), z(L.v(i, 1)));
      next.pusher_pos[i] = pb.x.pusher_pos[i] + pb.h * next.pusher_vel[i];
    }
    sol.next_state = next;
    sol.fn.assign(C.np, 0.0);
    sol.ft.assign(C.np, 0.0);
    for (int i = 0; i < C.np; ++i) {
      if (!C.contact_active[i]) continue;
      sol.fn[i] = z(L.ln(i)) / pb.h;
      sol.ft[i] = (z(L.ltp(i)) - z(L.ltm(i))) / pb.h;
    }
    sol.ground_torque = C.ground_active ? (z(L.gp()) - z(L.gm())) / pb.h : 0.0;

    // Safety net: a culled contact whose free prediction still lands near
    // the face must participate after all.
    bool redo = false;
    for (int i = 0; i < C.np; ++i) {
      if (C.contact_active[i]) continue;
      const double g =
          signed_distance(next.theta_box, next.pusher_pos[i], pb.params);
      if (g < 1e-4) {
        C.contact_active[i] = true;
        redo = true;
      }
    }
    if (!redo) break;
  }
  return sol;
}

// Implicit-function-theorem sensitivities of the next state at a converged
// step: one factorization of dR/dz serves every right-hand side of
// dR/d(state, control).
inline StepLinearization linearize_step(const LowerProblem& pb,
                                        const LowerSolution& sol,
                                        double kappa_gradient = 0.0) {
  pb.validate();
  using detail::Ad;
  detail::StepContext C = detail::make_context(pb);
  C.contact_active = sol.contact_active;
  C.ground_active = sol.ground_active;
  C.kappa = sol.kappa;
  const VarLayout L{C.np};
  const int nz = L.nz();
  const int np = C.np;
  const int n = 2 * (1 + 2 * np);
  const int m = 2 * np;
  const int nq = 1 + 2 * np;
  if (sol.duals_and_slacks.size() != nz) {
    throw std::invalid_argument("solution decision vector has wrong size");
  }

  // Differentiation point: either the solution itself, or the same active
  // set re-centered on the central path at a looser relaxation.
  Eigen::VectorXd zstar = sol.duals_and_slacks;
  if (kappa_gradient > 0.0 && kappa_gradient != sol.kappa) {
    // Walk the central path from the solved relaxation to the
    // differentiation relaxation in geometric stages; a single multi-decade
    // jump can strand the Newton iteration far off the path, and a
    // half-converged point yields wildly ill-conditioned sensitivities.
    // Unless every stage converges, differentiate the tight point instead.
    Eigen::VectorXd zp = zstar;
    bool on_path = true;
    double k = sol.kappa;
    try {
      while (k != kappa_gradient) {
        k = (kappa_gradient > k) ? std::min(k * 10.0, kappa_gradient)
                                 : std::max(k * 0.1, kappa_gradient);
        C.kappa = k;
        SolverSettings stage;
        stage.kappa0 = stage.kappa_final = k;
        stage.max_iters = 60;
        int iters = 0;
        double rn = 0.0;
        detail::newton_solve(C, detail::plain_inputs(pb), stage, zp, iters,
                             rn, nullptr);
      }
    } catch (const SolverError&) {
      on_path = false;
    }
    if (on_path && zp.allFinite()) {
      zstar = zp;
      C.kappa = kappa_gradient;
    } else {
      C.kappa = sol.kappa;
    }
  }

  // Lane map: decision vector first, then the state in packed order, then
  // the control.
  detail::StepInputs<Ad> in;
  const auto pin = detail::plain_inputs(pb);
  in.theta = Ad::seeded(pin.theta, nz + 0);
  in.omega = Ad::seeded(pin.omega, nz + nq);
  for (int i = 0; i < np; ++i) {
    in.px[i] = Ad::seeded(pin.px[i], nz + 1 + 2 * i);
    in.py[i] = Ad::seeded(pin.py[i], nz + 2 + 2 * i);
    in.vx[i] = Ad::seeded(pin.vx[i], nz + nq + 1 + 2 * i);
    in.vy[i] = Ad::seeded(pin.vy[i], nz + nq + 2 + 2 * i);
    in.ux[i] = Ad::seeded(pin.ux[i], nz + n + 2 * i);
    in.uy[i] = Ad::seeded(pin.uy[i], nz + n + 2 * i + 1);
  }
  std::array<Ad, 16> zd, rd;
  for (int j = 0; j < nz; ++j) zd[j] = Ad::seeded(zstar(j), j);
  detail::residual_core<Ad>(C, in, zd.data(), rd.data());

  Eigen::MatrixXd Jz(nz, nz), Jth(nz, n + m);
  for (int i = 0; i < nz; ++i) {
    for (int j = 0; j < nz; ++j) Jz(i, j) = rd[i].g[j];
    for (int j = 0; j < n + m; ++j) Jth(i, j) = rd[i].g[nz + j];
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(Jz);
  if (!lu.isInvertible()) {
    throw SingularJacobian("step jacobian is singular; sensitivities undefined");
  }
  const Eigen::MatrixXd Zs = -lu.solve(Jth);  // d z* / d (state, control)

  StepLinearization lin;
  lin.A = Eigen::MatrixXd::Zero(n, n);
  lin.B = Eigen::MatrixXd::Zero(n, m);
  const double h = pb.h;
  auto zrow_state = [&](int k) { return Zs.row(k).head(n); };
  auto zrow_ctrl = [&](int k) { return Zs.row(k).tail(m); };

  lin.A.row(0) = h * zrow_state(L.omega());
  lin.A(0, 0) += 1.0;
  lin.B.row(0) = h * zrow_ctrl(L.omega());
  for (int i = 0; i < np; ++i) {
    for (int c = 0; c < 2; ++c) {
      const int xr = 1 + 2 * i + c;
      lin.A.row(xr) = h * zrow_state(L.v(i, c));
      lin.A(xr, xr) += 1.0;
      lin.B.row(xr) = h * zrow_ctrl(L.v(i, c));
    }
  }
  lin.A.row(nq) = zrow_state(L.omega());
  lin.B.row(nq) = zrow_ctrl(L.omega());
  for (int i = 0; i < np; ++i) {
    for (int c = 0; c < 2; ++c) {
      const int xr = nq + 1 + 2 * i + c;
      lin.A.row(xr) = zrow_state(L.v(i, c));
      lin.B.row(xr) = zrow_ctrl(L.v(i, c));
    }
  }
  return lin;
}

}  // namespace pushbox
