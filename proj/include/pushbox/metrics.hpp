#pragma once

// Post-hoc trajectory scoring for the box-rotation task: accumulated control
// effort, pusher travel distance, terminal tracking error, time-to-goal, and
// how continuously the pushers kept force on the box while steering it there.
// A comparison row ranks the two contact models side by side on one goal.
//
// Effort is the unweighted squared-norm integral sum_t |u_t|^2 h so the
// number stays comparable across runs with different R; travel distance is
// averaged over pusher points so a two-point pusher is comparable to a
// single-point one.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include <json.hpp>

#include <pushbox/errors.hpp>
#include <pushbox/ilqr.hpp>
#include <pushbox/io_util.hpp>

namespace pushbox {

struct MetricsSettings {
  double h = 0.05;              // timestep weighting the effort sum, s
  double reach_tolerance =
      0.5 * std::numbers::pi / 180.0;  // goal band half-width, rad
  double force_floor = 0.01;    // normal force that counts as contact, N

  void validate() const {
    if (!(h > 0.0) || !std::isfinite(h)) {
      throw std::invalid_argument("metrics timestep must be positive");
    }
    if (!(reach_tolerance >= 0.0) || !std::isfinite(reach_tolerance)) {
      throw std::invalid_argument("reach tolerance must be non-negative");
    }
    if (!(force_floor >= 0.0) || !std::isfinite(force_floor)) {
      throw std::invalid_argument("force floor must be non-negative");
    }
  }
};

struct MetricsReport {
  double theta_goal = 0.0;       // rad, recorded so rows can be paired safely
  double control_effort = 0.0;   // sum_t |u_t|^2 h, N^2 s
  double travel_distance = 0.0;  // mean over pushers of path length, m
  double tracking_error = 0.0;   // |theta_T - theta_goal|, rad
  std::optional<int> reach_step;  // first t with theta_t inside the goal band
  double persistence_ratio = 1.0;  // fraction of pre-reach steps in contact
  std::vector<double> force_series;  // total pusher normal force per step, N
};

// Scores a rolled-out trajectory against a goal angle. The persistence ratio
// counts steps before reach_step whose total normal force stays above the
// floor; when the band is never reached it is taken over every step, and a
// trajectory that starts inside the band (no pre-reach steps) scores 1.
inline MetricsReport evaluate(const Trajectory& traj, double theta_goal,
                              const MetricsSettings& settings = {}) {
  settings.validate();
  if (!std::isfinite(theta_goal)) {
    throw std::invalid_argument("goal angle must be finite");
  }
  const std::size_t T = traj.controls.size();
  if (traj.states.size() != T + 1) {
    throw std::invalid_argument(
        "trajectory must hold one more state than controls");
  }
  if (traj.lower.size() != T) {
    throw std::invalid_argument(
        "trajectory must hold one contact solution per step");
  }
  const Eigen::Index n = traj.states.front().size();
  if (n < 6 || n % 4 != 2) {
    throw std::invalid_argument("state vectors have malformed dimension");
  }
  const int np = static_cast<int>((n / 2 - 1) / 2);
  for (const auto& x : traj.states) {
    if (x.size() != n) {
      throw std::invalid_argument("state vectors must share one dimension");
    }
  }

  MetricsReport out;
  out.theta_goal = theta_goal;

  for (const auto& u : traj.controls) {
    out.control_effort += u.squaredNorm() * settings.h;
  }

  for (int i = 0; i < np; ++i) {
    for (std::size_t t = 0; t < T; ++t) {
      out.travel_distance +=
          (traj.states[t + 1].segment<2>(1 + 2 * i) -
           traj.states[t].segment<2>(1 + 2 * i))
              .norm();
    }
  }
  out.travel_distance /= np;

  out.tracking_error = std::abs(traj.states.back()(0) - theta_goal);

  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    if (std::abs(traj.states[t](0) - theta_goal) <= settings.reach_tolerance) {
      out.reach_step = static_cast<int>(t);
      break;
    }
  }

  out.force_series.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    double total = 0.0;
    for (double f : traj.lower[t].fn) total += f;
    out.force_series.push_back(total);
  }

  const std::size_t denom =
      out.reach_step ? static_cast<std::size_t>(*out.reach_step) : T;
  if (denom == 0) {
    out.persistence_ratio = 1.0;
  } else {
    std::size_t held = 0;
    for (std::size_t t = 0; t < denom; ++t) {
      if (out.force_series[t] >= settings.force_floor) ++held;
    }
    out.persistence_ratio = static_cast<double>(held) / denom;
  }
  return out;
}

struct ComparisonRow {
  double theta_goal = 0.0;
  double effort_point = 0.0;
  double effort_fdlc = 0.0;
  double effort_ratio = 1.0;  // fdlc / point; 1 when the two are equal
  bool fdlc_effort_lower = false;
  double distance_point = 0.0;
  double distance_fdlc = 0.0;
  double distance_ratio = 1.0;
  bool fdlc_distance_lower = false;
  double persistence_point = 0.0;
  double persistence_fdlc = 0.0;
  bool fdlc_persistence_at_least = false;
};

namespace detail {

inline double metric_ratio(double fdlc, double point) {
  if (fdlc == point) return 1.0;  // covers the 0/0 case for null trajectories
  return fdlc / point;
}

}  // namespace detail

// Pairs two reports for the same goal into one row. Throws GoalMismatch when
// the reports score different goal angles.
inline ComparisonRow compare(const MetricsReport& point,
                             const MetricsReport& fdlc) {
  if (point.theta_goal != fdlc.theta_goal) {
    throw GoalMismatch("cannot compare reports for different goal angles");
  }
  ComparisonRow row;
  row.theta_goal = point.theta_goal;
  row.effort_point = point.control_effort;
  row.effort_fdlc = fdlc.control_effort;
  row.effort_ratio = detail::metric_ratio(fdlc.control_effort,
                                          point.control_effort);
  row.fdlc_effort_lower = fdlc.control_effort < point.control_effort;
  row.distance_point = point.travel_distance;
  row.distance_fdlc = fdlc.travel_distance;
  row.distance_ratio = detail::metric_ratio(fdlc.travel_distance,
                                            point.travel_distance);
  row.fdlc_distance_lower = fdlc.travel_distance < point.travel_distance;
  row.persistence_point = point.persistence_ratio;
  row.persistence_fdlc = fdlc.persistence_ratio;
  row.fdlc_persistence_at_least =
      fdlc.persistence_ratio >= point.persistence_ratio;
  return row;
}

// CSV layout: the summary row carries the scalar fields in a fixed column
// order; the per-step force series is emitted separately (one row per step)
// by the experiment layer. reach_step serializes as an empty cell when the
// goal band was never entered. Booleans serialize as 0/1.

inline std::string metrics_csv_header() {
  return "theta_goal,control_effort,travel_distance,tracking_error,"
         "reach_step,persistence_ratio";
}

inline std::string metrics_csv_row(const MetricsReport& r) {
  return csv_join({format_double(r.theta_goal),
                   format_double(r.control_effort),
                   format_double(r.travel_distance),
                   format_double(r.tracking_error),
                   r.reach_step ? std::to_string(*r.reach_step) : "",
                   format_double(r.persistence_ratio)});
}

inline std::string comparison_csv_header() {
  return "theta_goal,effort_point,effort_fdlc,effort_ratio,fdlc_effort_lower,"
         "distance_point,distance_fdlc,distance_ratio,fdlc_distance_lower,"
         "persistence_point,persistence_fdlc,fdlc_persistence_at_least";
}

inline std::string comparison_csv_row(const ComparisonRow& r) {
  return csv_join({format_double(r.theta_goal),
                   format_double(r.effort_point),
                   format_double(r.effort_fdlc),
                   format_double(r.effort_ratio),
                   r.fdlc_effort_lower ? "1" : "0",
                   format_double(r.distance_point),
                   format_double(r.distance_fdlc),
                   format_double(r.distance_ratio),
                   r.fdlc_distance_lower ? "1" : "0",
                   format_double(r.persistence_point),
                   format_double(r.persistence_fdlc),
                   r.fdlc_persistence_at_least ? "1" : "0"});
}

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"theta_goal", r.theta_goal},
                     {"control_effort", r.control_effort},
                     {"travel_distance", r.travel_distance},
                     {"tracking_error", r.tracking_error},
                     {"persistence_ratio", r.persistence_ratio},
                     {"force_series", r.force_series}};
  if (r.reach_step) {
    j["reach_step"] = *r.reach_step;
  } else {
    j["reach_step"] = nullptr;
  }
}

inline void to_json(nlohmann::json& j, const ComparisonRow& r) {
  j = nlohmann::json{{"theta_goal", r.theta_goal},
                     {"effort_point", r.effort_point},
                     {"effort_fdlc", r.effort_fdlc},
                     {"effort_ratio", r.effort_ratio},
                     {"fdlc_effort_lower", r.fdlc_effort_lower},
                     {"distance_point", r.distance_point},
                     {"distance_fdlc", r.distance_fdlc},
                     {"distance_ratio", r.distance_ratio},
                     {"fdlc_distance_lower", r.fdlc_distance_lower},
                     {"persistence_point", r.persistence_point},
                     {"persistence_fdlc", r.persistence_fdlc},
                     {"fdlc_persistence_at_least", r.fdlc_persistence_at_least}};
}

}  // namespace pushbox
