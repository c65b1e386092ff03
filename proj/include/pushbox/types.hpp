#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace pushbox {

using Vec2 = Eigen::Vector2d;

// Which pusher is touching the box: a single rigid disc, or a pair of discs
// joined by a virtual spring-damper so they behave like a compliant line
// segment ("fdlc" in configs).
enum class ContactModelKind { kPoint, kFdlc };

inline const char* to_string(ContactModelKind k) {
  return k == ContactModelKind::kPoint ? "point" : "fdlc";
}

inline ContactModelKind contact_model_from_string(const std::string& s) {
  if (s == "point") return ContactModelKind::kPoint;
  if (s == "fdlc") return ContactModelKind::kFdlc;
  throw std::invalid_argument("unknown contact model '" + s +
                              "' (expected 'point' or 'fdlc')");
}

struct ContactModel {
  ContactModelKind kind = ContactModelKind::kPoint;
  // Virtual spring-damper joining the two discs; ignored for the point model.
  double stiffness = 1000.0;    // N/m
  double damping = 20.0;        // N s/m
  double rest_length = 0.005;   // m

  int num_points() const { return kind == ContactModelKind::kPoint ? 1 : 2; }

  void validate() const {
    if (kind == ContactModelKind::kFdlc) {
      if (!(stiffness > 0.0)) throw std::invalid_argument("fdlc stiffness must be > 0");
      if (!(damping >= 0.0)) throw std::invalid_argument("fdlc damping must be >= 0");
      if (!(rest_length > 0.0)) throw std::invalid_argument("fdlc rest_length must be > 0");
    }
  }
};

// Scene constants: a square box pinned at its center so it can only rotate,
// plus one or two disc pushers that translate freely.
struct SystemParams {
  double mu_pusher = 0.5;        // pusher-box Coulomb coefficient
  double mu_surface = 1.0;       // box-ground Coulomb coefficient
  double mass_box = 1.0;         // kg
  double side_len = 0.02;        // m, box edge
  double pusher_sep = 0.005;     // m, disc pair spacing at placement
  double pusher_radius = 0.0025; // m
  double pusher_mass = 0.1;      // kg per disc
  double box_inertia = 1.0 * 0.02 * 0.02 / 6.0;  // kg m^2, square plate
  bool custom_inertia = false;   // set when box_inertia is supplied externally
  double gravity = 9.81;         // m/s^2, sets the ground normal load
  double eps_dir = 1e-9;         // m, coincidence threshold for unit directions

  double half_side() const { return 0.5 * side_len; }

  static double plate_inertia(double mass, double side) {
    return mass * side * side / 6.0;
  }

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0)) throw std::invalid_argument(std::string(name) + " must be > 0");
    };
    positive(mass_box, "mass_box");
    positive(side_len, "side_len");
    positive(pusher_sep, "pusher_sep");
    positive(pusher_radius, "pusher_radius");
    positive(pusher_mass, "pusher_mass");
    positive(box_inertia, "box_inertia");
    positive(eps_dir, "eps_dir");
    if (!(mu_pusher >= 0.0)) throw std::invalid_argument("mu_pusher must be >= 0");
    if (!(mu_surface >= 0.0)) throw std::invalid_argument("mu_surface must be >= 0");
    if (!(gravity >= 0.0)) throw std::invalid_argument("gravity must be >= 0");
    if (!custom_inertia) {
      const double expect = plate_inertia(mass_box, side_len);
      if (std::abs(box_inertia - expect) > 1e-9 * std::max(1.0, expect)) {
        throw std::invalid_argument(
            "box_inertia does not match mass_box*side_len^2/6; set "
            "custom_inertia to override");
      }
    }
  }
};

// Box angle/rate plus planar position/velocity per pusher disc. The packed
// vector layout is [theta, p_1.., p_Np, omega, v_1.., v_Np].
struct State {
  double theta_box = 0.0;  // rad
  double omega_box = 0.0;  // rad/s
  std::vector<Vec2> pusher_pos;
  std::vector<Vec2> pusher_vel;

  int num_points() const { return static_cast<int>(pusher_pos.size()); }
  int dim() const { return 2 * (1 + 2 * num_points()); }

  Eigen::VectorXd to_vector() const {
    const int np = num_points();
    Eigen::VectorXd x(dim());
    x(0) = theta_box;
    for (int i = 0; i < np; ++i) x.segment<2>(1 + 2 * i) = pusher_pos[i];
    const int nq = 1 + 2 * np;
    x(nq) = omega_box;
    for (int i = 0; i < np; ++i) x.segment<2>(nq + 1 + 2 * i) = pusher_vel[i];
    return x;
  }

  static State from_vector(const Eigen::VectorXd& x, int np) {
    if (x.size() != 2 * (1 + 2 * np)) {
      throw std::invalid_argument("state vector has wrong dimension");
    }
    State s;
    s.theta_box = x(0);
    const int nq = 1 + 2 * np;
    s.omega_box = x(nq);
    s.pusher_pos.resize(np);
    s.pusher_vel.resize(np);
    for (int i = 0; i < np; ++i) {
      s.pusher_pos[i] = x.segment<2>(1 + 2 * i);
      s.pusher_vel[i] = x.segment<2>(nq + 1 + 2 * i);
    }
    return s;
  }

  void validate(const ContactModel& model) const {
    if (num_points() != model.num_points()) {
      throw std::invalid_argument("state pusher count does not match contact model");
    }
    if (pusher_vel.size() != pusher_pos.size()) {
      throw std::invalid_argument("pusher position/velocity lengths differ");
    }
    auto finite = [](double v) { return std::isfinite(v); };
    bool ok = finite(theta_box) && finite(omega_box);
    for (const auto& p : pusher_pos) ok = ok && finite(p.x()) && finite(p.y());
    for (const auto& v : pusher_vel) ok = ok && finite(v.x()) && finite(v.y());
    if (!ok) throw std::invalid_argument("state contains non-finite entries");
  }
};

// Flattened per-disc planar force [u_1x, u_1y, u_2x, u_2y...], length 2*Np.
using Control = Eigen::VectorXd;

// One resolved pusher-face pairing. The tangent is the normal rotated +90
// degrees; ids run A (point model) then B, C (disc pair).
struct ContactFrame {
  int contact_id = 0;
  Vec2 point = Vec2::Zero();    // world-frame location on the face plane
  Vec2 normal = Vec2::Zero();   // outward face normal
  Vec2 tangent = Vec2::Zero();
  double gap = 0.0;             // center-to-plane distance minus disc radius
};

inline char contact_label(ContactModelKind kind, int i) {
  return kind == ContactModelKind::kPoint ? 'A' : static_cast<char>('B' + i);
}

inline Eigen::Matrix2d rotation2d(double a) {
  Eigen::Matrix2d r;
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return r;
}

}  // namespace pushbox
