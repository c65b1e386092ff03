#pragma once

// Planar scene model: a square box pinned at the origin (rotation only) and
// one or two disc pushers. Contact is resolved against the single box face
// whose outward normal points along -x at theta_box = 0; for the rotation
// range studied here the other faces stay out of reach, so the face is
// treated as a full plane.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "pushbox/errors.hpp"
#include "pushbox/types.hpp"

namespace pushbox {

// Geometry core, templated so the implicit step can differentiate through it.
// World-frame face data at box angle `theta`:
//   normal  n = (-cos, -sin)          outward face normal
//   tangent t = ( sin, -cos)          n rotated +90 degrees
//   gap(p)    = p.n - a/2 - r         disc-center plane distance minus radius
// Useful identities (face plane passes through (a/2) n):
//   contact point x_c = p - (p.n - a/2) n,   x_c.n = a/2,   x_c.t = p.t
template <class S>
struct FaceFrame {
  S nx, ny, tx, ty;
};

template <class S>
FaceFrame<S> face_frame(const S& theta) {
  const S c = cos(theta), s = sin(theta);
  return FaceFrame<S>{-c, -s, s, -c};
}

template <class S>
S face_gap(const FaceFrame<S>& f, const S& px, const S& py, double half_side,
           double radius) {
  return px * f.nx + py * f.ny - half_side - radius;
}

// --- signed_distance -------------------------------------------------------

inline double signed_distance(double theta_box, const Vec2& center,
                              const SystemParams& params) {
  const auto f = face_frame(theta_box);
  return face_gap(f, center.x(), center.y(), params.half_side(),
                  params.pusher_radius);
}

inline ContactFrame contact_frame(double theta_box, const Vec2& center,
                                  const SystemParams& params, int contact_id) {
  const auto f = face_frame(theta_box);
  ContactFrame out;
  out.contact_id = contact_id;
  out.normal = Vec2(f.nx, f.ny);
  out.tangent = Vec2(f.tx, f.ty);
  out.gap = face_gap(f, center.x(), center.y(), params.half_side(),
                     params.pusher_radius);
  const double s = center.dot(out.normal) - params.half_side();
  out.point = center - s * out.normal;
  return out;
}

inline std::vector<ContactFrame> contact_frames(const State& state,
                                                const SystemParams& params,
                                                const ContactModel& model) {
  std::vector<ContactFrame> frames;
  frames.reserve(model.num_points());
  for (int i = 0; i < model.num_points(); ++i) {
    frames.push_back(contact_frame(state.theta_box, state.pusher_pos[i], params, i));
  }
  return frames;
}

// --- spring_damper_force ----------------------------------------------------

struct SpringForcePair {
  Vec2 f12;  // force exerted by point 1 on point 2
  Vec2 f21;  // exact opposite, exerted by point 2 on point 1
};

// f12 = -k (d - L) n - c ((v2 - v1).n) n with n = (p2 - p1)/d. The pair is an
// internal action-reaction couple: a stretched spring pulls the points
// together, so f12 acts on point 2 and f21 on point 1.
inline SpringForcePair spring_damper_force(const Vec2& p1, const Vec2& p2,
                                           const Vec2& v1, const Vec2& v2,
                                           const ContactModel& model,
                                           double eps_dir) {
  const Vec2 r = p2 - p1;
  const double d = r.norm();
  if (d <= eps_dir) {
    throw DegenerateDirection(
        "spring endpoints coincide; no unit direction exists");
  }
  const Vec2 n = r / d;
  const double rate = (v2 - v1).dot(n);
  const Vec2 f12 =
      (-model.stiffness * (d - model.rest_length) - model.damping * rate) * n;
  return SpringForcePair{f12, -f12};
}

// --- corner_friction_torque --------------------------------------------------

struct GroundFriction {
  double tau_max = 0.0;       // N m, rotational Coulomb bound
  double tau_smoothed = 0.0;  // N m, regularized kinetic value at this omega
};

// The ground resists rotation through translational friction at the four box
// corners, each carrying a quarter of the normal load at radius a/sqrt(2):
// tau_max = mu_s * load * a / sqrt(2). The smoothed value is the regularized
// kinetic torque (used by explicit reference integrators); the implicit step
// instead enforces |tau_g| <= tau_max with maximum-dissipation
// complementarity against the next-step omega.
inline GroundFriction corner_friction_torque(double omega, double normal_load,
                                             const SystemParams& params,
                                             double omega_eps = 1e-3) {
  GroundFriction out;
  out.tau_max = params.mu_surface * normal_load * params.side_len / std::sqrt(2.0);
  out.tau_smoothed = -out.tau_max * std::tanh(omega / omega_eps);
  return out;
}

// --- contact_jacobians --------------------------------------------------------

// Linear map from generalized velocities (omega, v_x, v_y) of the box-pusher
// pair to the relative contact velocity (normal, tangential) of the pusher
// w.r.t. the box material point. Its transpose maps contact impulses
// (normal, tangential) back to (box torque, pusher force); the normal impulse
// acts on the pusher along +normal, the reaction on the box.
struct ContactJacobian {
  Eigen::Matrix<double, 2, 3> vel;  // rows: normal, tangential
};

inline ContactJacobian contact_jacobian(const ContactFrame& f) {
  ContactJacobian J;
  const double arm_n = f.point.x() * f.tangent.x() + f.point.y() * f.tangent.y();
  const double arm_t = -(f.point.x() * f.normal.x() + f.point.y() * f.normal.y());
  J.vel << arm_n, f.normal.x(), f.normal.y(),
           arm_t, f.tangent.x(), f.tangent.y();
  return J;
}

inline std::vector<ContactJacobian> contact_jacobians(const State& state,
                                                      const SystemParams& params,
                                                      const ContactModel& model) {
  std::vector<ContactJacobian> out;
  out.reserve(model.num_points());
  for (const auto& f : contact_frames(state, params, model)) {
    out.push_back(contact_jacobian(f));
  }
  return out;
}

}  // namespace pushbox
