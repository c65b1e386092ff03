#pragma once

// Study driver: for every configured contact model and goal angle, optimize
// the box-rotation task, score the result, pair the two models goal by goal,
// and persist everything under one output tree:
//
//   <out>/manifest.json                      config echo, run status, hashes
//   <out>/<model>_<goal>/trajectory.json     full rollout (replayable)
//   <out>/<model>_<goal>/metrics.csv         scalar score row
//   <out>/<model>_<goal>/forces.csv          per-step contact forces
//   <out>/<model>_<goal>/controls.csv        per-step control inputs
//   <out>/comparison.csv                     per-goal model pairing
//   <out>/plots/*.svg                        control/effort/travel/force
//
// Runs execute concurrently (they share no mutable state); all files are
// written afterwards by a single writer, and CSV/JSON artifacts are
// bit-identical across re-runs of the same config. Per-run failures land in
// the manifest without aborting sibling runs.
//
// The optimizer is driven through a relaxation-continuation cascade: solve
// with the differentiation relaxation at 1e-3, re-solve warm-started at 1e-4,
// keep the better cost, and if the result never formally converged, retry
// cold on {5e-4, 1e-4}. No single relaxation navigates both the long-range
// friction plateaus and the fine endgame, so the schedule adapts per run.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <future>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include <pushbox/config.hpp>
#include <pushbox/cost.hpp>
#include <pushbox/errors.hpp>
#include <pushbox/ilqr.hpp>
#include <pushbox/io_util.hpp>
#include <pushbox/metrics.hpp>
#include <pushbox/plot.hpp>

namespace pushbox {

struct RunOutcome {
  ContactModelKind model = ContactModelKind::kPoint;
  double goal_deg = 0.0;
  std::string status = "ok";  // "ok" or "error: <what>"
  bool converged = false;
  bool used_fallback = false;  // cold fallback schedule was tried
  Trajectory traj;             // valid when ok()
  MetricsReport report;        // valid when ok()

  bool ok() const { return status == "ok"; }
};

struct RunBundle {
  std::vector<RunOutcome> runs;          // configured order: model-major
  std::vector<ComparisonRow> comparisons;  // one per goal with both models ok
  nlohmann::json manifest;
};

namespace experiment_detail {

inline const std::vector<double> kPrimarySchedule = {1e-3, 1e-4};
inline const std::vector<double> kFallbackSchedule = {5e-4, 1e-4};

// Multi-start scales applied to the configured initial push magnitude. The
// cost landscape has several basins per cell (how hard the first push is
// decides which one the optimizer falls into), so each cell is optimized from
// all of these and the best solution wins.
inline constexpr double kSeedScales[] = {0.25, 0.5, 1.0};

inline const char* kPointColor = "#d95f02";
inline const char* kFdlcColor = "#1b9e77";
inline const char* kPalette[4] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a"};

inline IlqrSetup setup_for(const ExperimentConfig& c, ContactModelKind kind) {
  IlqrSetup S;
  S.h = c.step;
  S.params = c.params;
  S.model = c.model_for(kind);
  const int np = S.model.num_points();
  const int n = 2 + 4 * np, m = 2 * np;
  Eigen::VectorXd qd = Eigen::VectorXd::Zero(n);
  qd(0) = c.weights.q_theta;
  for (int i = 0; i < np; ++i) {
    qd.segment<2>(1 + 2 * i).setConstant(c.weights.q_pusher_pos);
  }
  qd(1 + 2 * np) = c.weights.q_rate;
  for (int i = 0; i < np; ++i) {
    qd.segment<2>(2 + 2 * np + 2 * i).setConstant(c.weights.q_rate);
  }
  S.weights.Q = qd.asDiagonal();
  S.weights.R = c.weights.r_control * Eigen::MatrixXd::Identity(m, m);
  S.weights.w = c.weights.w_distance;
  return S;
}

// Start pose: the pusher (disc pair: its midpoint) sits at the center height
// of the contact face with a 5 mm gap, discs offset half a separation each
// way along the face tangent, everything at rest.
inline State start_state(const ExperimentConfig& c, ContactModelKind kind) {
  const auto f = face_frame(0.0);
  const Eigen::Vector2d n(f.nx, f.ny), t(f.tx, f.ty);
  const double d = c.params.half_side() + c.params.pusher_radius + 5e-3;
  State x0;
  if (kind == ContactModelKind::kPoint) {
    x0.pusher_pos = {d * n};
    x0.pusher_vel = {{0.0, 0.0}};
  } else {
    const double lat = c.params.pusher_sep / 2.0;
    x0.pusher_pos = {d * n + lat * t, d * n - lat * t};
    x0.pusher_vel = {{0.0, 0.0}, {0.0, 0.0}};
  }
  return x0;
}

inline Trajectory round_run(IlqrSetup S, const State& x0,
                            const std::vector<Eigen::VectorXd>& u0,
                            double kappa_gradient) {
  S.lower.kappa_gradient = kappa_gradient;
  try {
    return optimize(S, x0, u0);
  } catch (const WithIncumbent<RegularizationExhausted>& e) {
    return e.incumbent;
  } catch (const WithIncumbent<NonFiniteIterate>& e) {
    return e.incumbent;
  }
}

// Each later round warm-starts from the best controls so far; cost is always
// measured under the tight dynamics, so best-by-cost is a fair pick.
inline Trajectory cascade(const IlqrSetup& S, const State& x0,
                          const std::vector<Eigen::VectorXd>& u0,
                          const std::vector<double>& schedule) {
  Trajectory best = round_run(S, x0, u0, schedule.front());
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    Trajectory r = round_run(S, x0, best.controls, schedule[i]);
    if (r.cost < best.cost) best = std::move(r);
  }
  return best;
}

inline std::string run_dir_name(ContactModelKind kind, double goal_deg) {
  return std::string(to_string(kind)) + "_" + format_double(goal_deg);
}

// Serialized writer for the output tree; remembers every file's content hash
// for the manifest.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path root)
      : root_(std::move(root)) {
    files_ = nlohmann::json::object();
  }

  void write(const std::string& rel, const std::string& content) {
    const std::filesystem::path p = root_ / rel;
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) {
      throw std::runtime_error("failed to write artifact: " + p.string());
    }
    files_[rel] = hex64(fnv1a64(content));
  }

  const nlohmann::json& files() const { return files_; }

 private:
  std::filesystem::path root_;
  nlohmann::json files_;
};

inline nlohmann::json trajectory_json(const ExperimentConfig& c,
                                      const RunOutcome& r) {
  nlohmann::json j;
  j["schema"] = "pushbox-trajectory-v1";
  j["model"] = to_string(r.model);
  j["goal_deg"] = r.goal_deg;
  j["h"] = c.step;
  j["horizon"] = r.traj.horizon();
  j["cost"] = r.traj.cost;
  j["converged"] = r.converged;
  auto rows = [](const std::vector<Eigen::VectorXd>& vs) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& v : vs) {
      out.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    }
    return out;
  };
  j["states"] = rows(r.traj.states);
  j["controls"] = rows(r.traj.controls);
  nlohmann::json fn = nlohmann::json::array(), ft = nlohmann::json::array(),
                 tau = nlohmann::json::array();
  for (const auto& sol : r.traj.lower) {
    fn.push_back(sol.fn);
    ft.push_back(sol.ft);
    tau.push_back(sol.ground_torque);
  }
  j["fn"] = fn;
  j["ft"] = ft;
  j["ground_torque"] = tau;
  return j;
}

inline std::string forces_csv(const RunOutcome& r) {
  const int np = static_cast<int>(r.traj.lower.front().fn.size());
  std::string s = "step";
  for (int i = 0; i < np; ++i) {
    s += ",fn_" + std::to_string(i) + ",ft_" + std::to_string(i);
  }
  s += ",total_fn,ground_torque\n";
  for (int t = 0; t < r.traj.horizon(); ++t) {
    const auto& sol = r.traj.lower[t];
    s += std::to_string(t);
    double total = 0.0;
    for (int i = 0; i < np; ++i) {
      s += "," + format_double(sol.fn[i]) + "," + format_double(sol.ft[i]);
      total += sol.fn[i];
    }
    s += "," + format_double(total) + "," + format_double(sol.ground_torque);
    s += "\n";
  }
  return s;
}

inline std::string controls_csv(const RunOutcome& r) {
  const int m = static_cast<int>(r.traj.controls.front().size());
  std::string s = "step";
  for (int i = 0; i < m; ++i) s += ",u_" + std::to_string(i);
  s += "\n";
  for (int t = 0; t < r.traj.horizon(); ++t) {
    s += std::to_string(t);
    for (int i = 0; i < m; ++i) {
      s += "," + format_double(r.traj.controls[t](i));
    }
    s += "\n";
  }
  return s;
}

// Cumulative mean-over-pushers path length after each step, length T+1.
inline std::vector<double> cumulative_travel(
    const std::vector<Eigen::VectorXd>& states) {
  const int np = static_cast<int>((states.front().size() / 2 - 1) / 2);
  std::vector<double> out(states.size(), 0.0);
  for (std::size_t t = 1; t < states.size(); ++t) {
    double seg = 0.0;
    for (int i = 0; i < np; ++i) {
      seg += (states[t].segment<2>(1 + 2 * i) -
              states[t - 1].segment<2>(1 + 2 * i))
                 .norm();
    }
    out[t] = out[t - 1] + seg / np;
  }
  return out;
}

inline const char* model_color(ContactModelKind kind) {
  return kind == ContactModelKind::kPoint ? kPointColor : kFdlcColor;
}

// Everything one run contributes to the plots, independent of whether it
// came from a live sweep or was read back from the artifact tree.
struct PlotData {
  ContactModelKind model = ContactModelKind::kPoint;
  double goal_deg = 0.0;
  std::vector<Eigen::VectorXd> controls;
  std::vector<double> travel;        // cumulative, length T+1
  std::optional<int> reach_step;
  std::vector<double> force_series;  // total normal force per step
};

// Plots: per-run control inputs; per-goal travel curves (goal-reached
// markers) and total-force series; effort bars across goals.
inline void write_plots(ArtifactWriter& writer, const std::vector<double>& goals,
                        const std::vector<PlotData>& runs,
                        const std::vector<ComparisonRow>& comparisons) {
  for (const auto& r : runs) {
    std::vector<PlotSeries> series;
    const int m = static_cast<int>(r.controls.front().size());
    for (int i = 0; i < m; ++i) {
      PlotSeries s;
      s.name = "u_" + std::to_string(i);
      s.color = kPalette[i % 4];
      for (std::size_t t = 0; t < r.controls.size(); ++t) {
        s.pts.emplace_back(static_cast<double>(t), r.controls[t](i));
      }
      series.push_back(std::move(s));
    }
    writer.write("plots/controls_" + run_dir_name(r.model, r.goal_deg) +
                     ".svg",
                 line_chart("Control inputs: " +
                                std::string(to_string(r.model)) + ", goal " +
                                format_double(r.goal_deg) + " deg",
                            "step", "force (N)", series));
  }
  for (double goal : goals) {
    std::vector<PlotSeries> travel, forces;
    for (const auto& r : runs) {
      if (r.goal_deg != goal) continue;
      PlotSeries tv;
      tv.name = to_string(r.model);
      tv.color = model_color(r.model);
      for (std::size_t t = 0; t < r.travel.size(); ++t) {
        tv.pts.emplace_back(static_cast<double>(t), r.travel[t]);
      }
      tv.marker = r.reach_step;
      travel.push_back(std::move(tv));

      PlotSeries fs;
      fs.name = to_string(r.model);
      fs.color = model_color(r.model);
      for (std::size_t t = 0; t < r.force_series.size(); ++t) {
        fs.pts.emplace_back(static_cast<double>(t), r.force_series[t]);
      }
      forces.push_back(std::move(fs));
    }
    if (!travel.empty()) {
      writer.write("plots/travel_" + format_double(goal) + ".svg",
                   line_chart("Cumulative pusher travel: goal " +
                                  format_double(goal) + " deg",
                              "step", "distance (m)", travel));
      writer.write("plots/forces_" + format_double(goal) + ".svg",
                   line_chart("Total normal force: goal " +
                                  format_double(goal) + " deg",
                              "step", "force (N)", forces));
    }
  }
  if (!comparisons.empty()) {
    std::vector<BarGroup> groups;
    for (double goal : goals) {
      const double rad = goal * std::numbers::pi / 180.0;
      for (const auto& row : comparisons) {
        if (row.theta_goal == rad) {
          groups.push_back(BarGroup{format_double(goal) + " deg",
                                    {row.effort_point, row.effort_fdlc}});
        }
      }
    }
    writer.write("plots/effort.svg",
                 bar_chart("Control effort by goal", "effort (N^2 s)",
                           {{"point", kPointColor}, {"fdlc", kFdlcColor}},
                           groups));
  }
}

}  // namespace experiment_detail

// Optimizes one (model, goal) cell of the sweep: the primary schedule is run
// from every seed scale and the best solution wins (converged beats
// non-converged, then lower cost); the colder fallback schedule is tried the
// same way only if no seed converged. Exceptions become an error status;
// regularization/numeric exhaustion inside a cascade round keeps the
// incumbent trajectory and lets later rounds improve it.
inline RunOutcome solve_one(const ExperimentConfig& cfg, ContactModelKind kind,
                            double goal_deg) {
  namespace ed = experiment_detail;
  RunOutcome out;
  out.model = kind;
  out.goal_deg = goal_deg;
  try {
    IlqrSetup S = ed::setup_for(cfg, kind);
    const State x0 = ed::start_state(cfg, kind);
    const double goal = goal_deg * std::numbers::pi / 180.0;
    S.weights.goal = make_goal_vector(goal, x0);
    const int m = static_cast<int>(S.weights.R.rows());

    std::optional<Trajectory> best;
    auto offer = [&best](Trajectory cand) {
      if (!best || std::pair(!cand.stats.converged, cand.cost) <
                       std::pair(!best->stats.converged, best->cost)) {
        best = std::move(cand);
      }
    };
    std::exception_ptr last_error;
    auto try_seeds = [&](const std::vector<double>& schedule) {
      for (double scale : ed::kSeedScales) {
        Eigen::VectorXd ui = Eigen::VectorXd::Zero(m);
        for (int i = 0; i < m / 2; ++i) ui(2 * i) = scale * cfg.u_init;
        try {
          offer(ed::cascade(S, x0, std::vector<Eigen::VectorXd>(cfg.horizon, ui),
                            schedule));
        } catch (const SolverError&) {
          last_error = std::current_exception();
        }
      }
    };
    try_seeds(ed::kPrimarySchedule);
    if (!best || !best->stats.converged) {
      out.used_fallback = true;
      try_seeds(ed::kFallbackSchedule);
    }
    if (!best) std::rethrow_exception(last_error);

    out.converged = best->stats.converged;
    MetricsSettings ms;
    ms.h = cfg.step;
    out.report = evaluate(*best, goal, ms);
    out.traj = std::move(*best);
  } catch (const std::exception& e) {
    out.status = std::string("error: ") + e.what();
  }
  return out;
}

// Runs the full sweep and persists the output tree described above. The
// manifest enumerates every written file with its FNV-1a content hash
// (manifest.json itself excluded).
inline RunBundle run(const ExperimentConfig& cfg) {
  namespace ed = experiment_detail;
  cfg.validate();

  std::vector<std::future<RunOutcome>> pending;
  for (ContactModelKind kind : cfg.models) {
    for (double goal : cfg.goals_deg) {
      pending.push_back(std::async(std::launch::async, [&cfg, kind, goal] {
        return solve_one(cfg, kind, goal);
      }));
    }
  }
  RunBundle bundle;
  for (auto& f : pending) bundle.runs.push_back(f.get());

  auto find_run = [&](ContactModelKind kind, double goal) -> const RunOutcome* {
    for (const auto& r : bundle.runs) {
      if (r.model == kind && r.goal_deg == goal && r.ok()) return &r;
    }
    return nullptr;
  };
  for (double goal : cfg.goals_deg) {
    const RunOutcome* point = find_run(ContactModelKind::kPoint, goal);
    const RunOutcome* fdlc = find_run(ContactModelKind::kFdlc, goal);
    if (point && fdlc) {
      bundle.comparisons.push_back(compare(point->report, fdlc->report));
    }
  }

  ed::ArtifactWriter writer(cfg.output_dir);
  for (const auto& r : bundle.runs) {
    if (!r.ok()) continue;
    const std::string dir = ed::run_dir_name(r.model, r.goal_deg);
    writer.write(dir + "/trajectory.json",
                 ed::trajectory_json(cfg, r).dump(2) + "\n");
    writer.write(dir + "/metrics.csv",
                 metrics_csv_header() + "\n" + metrics_csv_row(r.report) +
                     "\n");
    writer.write(dir + "/forces.csv", ed::forces_csv(r));
    writer.write(dir + "/controls.csv", ed::controls_csv(r));
  }
  if (!bundle.runs.empty()) {
    std::string cmp = comparison_csv_header() + "\n";
    for (const auto& row : bundle.comparisons) {
      cmp += comparison_csv_row(row) + "\n";
    }
    writer.write("comparison.csv", cmp);
  }

  std::vector<ed::PlotData> plot_runs;
  for (const auto& r : bundle.runs) {
    if (!r.ok()) continue;
    ed::PlotData p;
    p.model = r.model;
    p.goal_deg = r.goal_deg;
    p.controls = r.traj.controls;
    p.travel = ed::cumulative_travel(r.traj.states);
    p.reach_step = r.report.reach_step;
    p.force_series = r.report.force_series;
    plot_runs.push_back(std::move(p));
  }
  ed::write_plots(writer, cfg.goals_deg, plot_runs, bundle.comparisons);

  nlohmann::json manifest;
  manifest["schema"] = "pushbox-manifest-v1";
  manifest["config"] = config_to_json(cfg);
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : bundle.runs) {
    nlohmann::json e;
    e["model"] = to_string(r.model);
    e["goal_deg"] = r.goal_deg;
    e["status"] = r.status;
    if (r.ok()) {
      e["converged"] = r.converged;
      e["used_fallback"] = r.used_fallback;
      e["cost"] = r.traj.cost;
      e["tracking_error_deg"] =
          r.report.tracking_error * 180.0 / std::numbers::pi;
      if (r.report.reach_step) {
        e["reach_step"] = *r.report.reach_step;
      } else {
        e["reach_step"] = nullptr;
      }
    }
    runs.push_back(std::move(e));
  }
  manifest["runs"] = runs;
  manifest["files"] = writer.files();
  bundle.manifest = manifest;

  std::filesystem::create_directories(cfg.output_dir);
  std::ofstream out(std::filesystem::path(cfg.output_dir) / "manifest.json",
                    std::ios::binary | std::ios::trunc);
  out << manifest.dump(2) << "\n";
  if (!out) {
    throw std::runtime_error("failed to write manifest under " +
                             cfg.output_dir);
  }
  return bundle;
}

struct ReplayResult {
  Trajectory traj;
  double max_deviation = 0.0;  // infinity norm over all states
};

// Re-simulates a stored trajectory's controls through the contact solver and
// reports the largest state deviation. Structural problems (bad JSON, wrong
// schema, non-finite numbers, dimensions that do not fit the config's model)
// raise SchemaMismatch.
inline ReplayResult replay(const std::filesystem::path& file,
                           const ExperimentConfig& cfg) {
  namespace ed = experiment_detail;
  cfg.validate();
  std::ifstream in(file);
  if (!in) throw SchemaMismatch("cannot open trajectory file: " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaMismatch("trajectory file is not valid JSON: " +
                         std::string(e.what()));
  }
  if (!j.is_object() || j.value("schema", "") != "pushbox-trajectory-v1") {
    throw SchemaMismatch("not a pushbox-trajectory-v1 file: " + file.string());
  }
  const std::string model_name = j.value("model", "");
  ContactModelKind kind;
  if (model_name == "point") {
    kind = ContactModelKind::kPoint;
  } else if (model_name == "fdlc") {
    kind = ContactModelKind::kFdlc;
  } else {
    throw SchemaMismatch("unknown trajectory model: \"" + model_name + "\"");
  }
  if (std::find(cfg.models.begin(), cfg.models.end(), kind) ==
      cfg.models.end()) {
    throw SchemaMismatch("trajectory model \"" + model_name +
                         "\" is not enabled in the config");
  }
  if (!j.contains("goal_deg") || !j["goal_deg"].is_number()) {
    throw SchemaMismatch("trajectory file lacks a numeric goal_deg");
  }
  const double goal_deg = j["goal_deg"].get<double>();

  const int np = cfg.model_for(kind).num_points();
  const int n = 2 + 4 * np, m = 2 * np;
  auto matrix_at = [&](const char* key, int width) {
    if (!j.contains(key) || !j[key].is_array() || j[key].empty()) {
      throw SchemaMismatch(std::string("trajectory file lacks ") + key);
    }
    std::vector<Eigen::VectorXd> rows;
    int idx = 0;
    for (const auto& row : j[key]) {
      if (!row.is_array() || static_cast<int>(row.size()) != width) {
        throw SchemaMismatch(std::string(key) + "[" + std::to_string(idx) +
                             "] does not have " + std::to_string(width) +
                             " entries for the " + model_name + " model");
      }
      Eigen::VectorXd v(width);
      int col = 0;
      for (const auto& e : row) {
        if (!e.is_number() || !std::isfinite(e.get<double>())) {
          throw SchemaMismatch(std::string(key) + "[" + std::to_string(idx) +
                               "][" + std::to_string(col) +
                               "] is not a finite number");
        }
        v(col++) = e.get<double>();
      }
      rows.push_back(std::move(v));
      ++idx;
    }
    return rows;
  };
  const std::vector<Eigen::VectorXd> states = matrix_at("states", n);
  const std::vector<Eigen::VectorXd> controls = matrix_at("controls", m);
  if (states.size() != controls.size() + 1) {
    throw SchemaMismatch(
        "trajectory must hold one more state than controls (got " +
        std::to_string(states.size()) + " states, " +
        std::to_string(controls.size()) + " controls)");
  }

  IlqrSetup S = ed::setup_for(cfg, kind);
  const State x0 = State::from_vector(states.front(), np);
  S.weights.goal =
      make_goal_vector(goal_deg * std::numbers::pi / 180.0, x0);
  ReplayResult res;
  res.traj = rollout(S, x0, controls);
  for (std::size_t t = 0; t < states.size(); ++t) {
    res.max_deviation =
        std::max(res.max_deviation,
                 (res.traj.states[t] - states[t]).lpNorm<Eigen::Infinity>());
  }
  return res;
}

struct GradCheckResult {
  double max_rel_A = 0.0;  // worst ||A - A_fd|| / ||A_fd|| (Frobenius)
  double max_rel_B = 0.0;
  int states_checked = 0;
};

// Compares the solver's implicit-function sensitivities against central
// finite differences of the solve itself at random contact states.
//
// The sampled states keep every contact branch decisively kinetic: the box
// spins fast enough to still be moving at the end of a short step, and the
// pushers approach the face firmly enough that engagement never straddles a
// finite-difference perturbation. A relative comparison needs that; a box
// jammed by support friction ends the step at a force-balance equilibrium
// whose sensitivity to the controls is below the solve tolerance.
inline GradCheckResult gradcheck(const ExperimentConfig& cfg,
                                 ContactModelKind kind, int n_states = 20) {
  cfg.validate();
  if (n_states < 1) {
    throw std::invalid_argument("gradcheck needs at least one state");
  }
  const ContactModel model = cfg.model_for(kind);
  const int np = model.num_points();
  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ull +
                      (kind == ContactModelKind::kFdlc ? 2u : 1u));
  std::uniform_real_distribution<double> uth(-0.25, 0.25);
  std::uniform_real_distribution<double> uw(-0.3, 0.3);
  std::uniform_real_distribution<double> uspin(2.5, 4.0);
  std::uniform_real_distribution<double> ug(2e-5, 8e-5);
  std::uniform_real_distribution<double> uap(0.05, 0.10);
  std::uniform_real_distribution<double> uf(4.0, 7.0);
  std::uniform_real_distribution<double> ulat(0.4, 0.8);
  std::uniform_int_distribution<int> usign(0, 1);
  SolverSettings st;
  st.kappa_final = 1e-6;
  const double check_step = 0.002;
  const double eps = 1e-6;

  GradCheckResult res;
  int attempts = 0;
  while (res.states_checked < n_states && attempts < 50 * n_states) {
    ++attempts;
    LowerProblem pb;
    pb.model = model;
    pb.params = cfg.params;
    pb.h = check_step;
    const double th = uth(rng);
    const auto f = face_frame(th);
    const Eigen::Vector2d nv(f.nx, f.ny), tv(f.tx, f.ty);
    pb.x.theta_box = th;
    pb.x.omega_box = (usign(rng) ? 1.0 : -1.0) * uspin(rng);
    pb.u = Eigen::VectorXd(2 * np);
    const double span =
        cfg.params.half_side() - (np == 2 ? cfg.params.pusher_sep / 2 : 0.0);
    const double lat_c = (usign(rng) ? 1.0 : -1.0) * ulat(rng) * span;
    for (int i = 0; i < np; ++i) {
      const double lat =
          np == 1 ? lat_c
                  : lat_c + (i == 0 ? 1 : -1) * cfg.params.pusher_sep / 2;
      const double d =
          cfg.params.half_side() + cfg.params.pusher_radius + ug(rng);
      pb.x.pusher_pos.push_back(d * nv + lat * tv);
      pb.x.pusher_vel.push_back(-uap(rng) * nv + 0.02 * uw(rng) * tv);
      pb.u.segment<2>(2 * i) = -uf(rng) * nv + 0.4 * tv;
    }
    try {
      const LowerSolution sol = solve_step(pb, st);
      const StepLinearization lin = linearize_step(pb, sol);
      const int n = pb.x.dim(), m = 2 * np;
      Eigen::MatrixXd Afd(n, n), Bfd(n, m);
      const Eigen::VectorXd xv = pb.x.to_vector();
      for (int jx = 0; jx < n; ++jx) {
        Eigen::VectorXd hi = xv, lo = xv;
        hi(jx) += eps;
        lo(jx) -= eps;
        LowerProblem qh = pb, ql = pb;
        qh.x = State::from_vector(hi, np);
        ql.x = State::from_vector(lo, np);
        Afd.col(jx) = (solve_step(qh, st).next_state.to_vector() -
                       solve_step(ql, st).next_state.to_vector()) /
                      (2 * eps);
      }
      for (int ju = 0; ju < m; ++ju) {
        LowerProblem qh = pb, ql = pb;
        qh.u(ju) += eps;
        ql.u(ju) -= eps;
        Bfd.col(ju) = (solve_step(qh, st).next_state.to_vector() -
                       solve_step(ql, st).next_state.to_vector()) /
                      (2 * eps);
      }
      res.max_rel_A =
          std::max(res.max_rel_A, (lin.A - Afd).norm() / Afd.norm());
      res.max_rel_B =
          std::max(res.max_rel_B, (lin.B - Bfd).norm() / Bfd.norm());
      ++res.states_checked;
    } catch (const SolverError&) {
      continue;  // infeasible draw; try another
    }
  }
  if (res.states_checked < n_states) {
    throw SolverError("gradcheck could not assemble enough feasible states");
  }
  return res;
}

}  // namespace pushbox
