#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <string>

#include "pushbox/experiment.hpp"

using namespace pushbox;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  const fs::path p = fs::temp_directory_path() /
                     ("pushbox_" + tag + "_" + std::to_string(::getpid()) +
                      "_" + std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

// Fast two-model sweep: one shallow goal, short horizon.
ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.goals_deg = {5.0};
  c.horizon = 8;
  c.output_dir = out.string();
  return c;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
    }
  }
  return out;
}

}  // namespace

TEST_CASE("default config validates and carries the study defaults") {
  ExperimentConfig c;
  c.validate();
  CHECK(c.horizon == 26);
  CHECK(c.step == 0.05);
  CHECK(c.goals_deg == std::vector<double>{10.0, 20.0, 30.0, 40.0});
  REQUIRE(c.models.size() == 2);
  CHECK(c.models[0] == ContactModelKind::kPoint);
  CHECK(c.models[1] == ContactModelKind::kFdlc);
  CHECK_THAT(c.weights.q_theta,
             Catch::Matchers::WithinRel(
                 std::pow(180.0 / std::numbers::pi, 2), 1e-12));
  CHECK(c.model_for(ContactModelKind::kPoint).num_points() == 1);
  CHECK(c.model_for(ContactModelKind::kFdlc).num_points() == 2);
}

TEST_CASE("config validation rejects out-of-range values") {
  ExperimentConfig c;
  SECTION("horizon") {
    c.horizon = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
  SECTION("step") {
    c.step = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
  SECTION("goal bounds are exclusive") {
    c.goals_deg = {180.0};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.goals_deg = {-180.0};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.goals_deg = {179.9, -179.9};
    CHECK_NOTHROW(c.validate());
  }
  SECTION("duplicate models") {
    c.models = {ContactModelKind::kPoint, ContactModelKind::kPoint};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
  SECTION("control weight must be positive") {
    c.weights.r_control = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
  SECTION("output dir") {
    c.output_dir.clear();
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
}

TEST_CASE("JSON config loading") {
  SECTION("empty object keeps every default") {
    const ExperimentConfig c = load_config(nlohmann::json::object());
    CHECK(config_to_json(c) == config_to_json(ExperimentConfig{}));
  }
  SECTION("echo round-trips to an equivalent config") {
    ExperimentConfig c;
    c.goals_deg = {15.0};
    c.weights.w_distance = 3.0;
    c.finalize();
    const ExperimentConfig back = load_config(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));
  }
  SECTION("mass change recomputes the plate inertia") {
    const auto c = load_config({{"params", {{"mass_box", 2.0}}}});
    CHECK_THAT(c.params.box_inertia,
               Catch::Matchers::WithinRel(2.0 * 0.02 * 0.02 / 6.0, 1e-12));
    CHECK_FALSE(c.params.custom_inertia);
  }
  SECTION("explicit inertia wins over the derived value") {
    const auto c = load_config(
        {{"params", {{"mass_box", 2.0}, {"box_inertia", 4.5e-4}}}});
    CHECK(c.params.box_inertia == 4.5e-4);
    CHECK(c.params.custom_inertia);
    CHECK_NOTHROW(c.validate());
  }
  SECTION("unknown keys are rejected by name") {
    CHECK_THROWS_WITH(load_config({{"horizont", 20}}),
                      Catch::Matchers::ContainsSubstring("horizont"));
    CHECK_THROWS_WITH(load_config({{"params", {{"mu_px", 0.4}}}}),
                      Catch::Matchers::ContainsSubstring("params.mu_px"));
    CHECK_THROWS_AS(load_config({{"params", {{"mu_px", 0.4}}}}),
                    SchemaMismatch);
  }
  SECTION("type mismatches name the key") {
    CHECK_THROWS_WITH(load_config({{"step", "fast"}}),
                      Catch::Matchers::ContainsSubstring("step"));
    CHECK_THROWS_AS(load_config({{"step", "fast"}}), SchemaMismatch);
    CHECK_THROWS_AS(load_config({{"params", 7}}), SchemaMismatch);
    CHECK_THROWS_AS(load_config(nlohmann::json::array()), SchemaMismatch);
  }
  SECTION("model names are checked") {
    CHECK_THROWS_WITH(load_config({{"models", {"point", "ellipse"}}}),
                      Catch::Matchers::ContainsSubstring("ellipse"));
  }
  SECTION("file loading reports parse failures") {
    const fs::path dir = fresh_dir("cfg");
    const fs::path bad = dir / "bad.json";
    std::ofstream(bad) << "{ not json";
    CHECK_THROWS_AS(load_config_file(bad.string()), SchemaMismatch);
    CHECK_THROWS_AS(load_config_file((dir / "missing.json").string()),
                    SchemaMismatch);
    const fs::path good = dir / "good.json";
    std::ofstream(good) << R"({"horizon": 12, "params": {"mu_p": 0.3}})";
    const ExperimentConfig c = load_config_file(good.string());
    CHECK(c.horizon == 12);
    CHECK(c.params.mu_pusher == 0.3);
  }
}

TEST_CASE("overrides compose left-to-right and name offending keys") {
  ExperimentConfig c;
  apply_override(c, "step=0.1");
  apply_override(c, "step=0.025");
  CHECK(c.step == 0.025);

  apply_override(c, "params.mu_p=0.4");
  CHECK(c.params.mu_pusher == 0.4);
  apply_override(c, "params.mu_s=0.8");
  CHECK(c.params.mu_surface == 0.8);

  apply_override(c, "goals_deg=10,20");
  CHECK(c.goals_deg == std::vector<double>{10.0, 20.0});
  apply_override(c, "models=fdlc");
  REQUIRE(c.models.size() == 1);
  CHECK(c.models[0] == ContactModelKind::kFdlc);

  apply_override(c, "output_dir=/tmp/somewhere");
  CHECK(c.output_dir == "/tmp/somewhere");

  apply_override(c, "params.mass_box=3");
  CHECK_THAT(c.params.box_inertia,
             Catch::Matchers::WithinRel(3.0 * 0.02 * 0.02 / 6.0, 1e-12));

  SECTION("negative friction names the key as given") {
    CHECK_THROWS_WITH(apply_override(c, "params.mu_p=-1"),
                      Catch::Matchers::ContainsSubstring("params.mu_p"));
    CHECK_THROWS_AS(apply_override(c, "params.mu_p=-1"),
                    std::invalid_argument);
  }
  SECTION("unknown key") {
    CHECK_THROWS_WITH(apply_override(c, "params.bogus=1"),
                      Catch::Matchers::ContainsSubstring("params.bogus"));
  }
  SECTION("malformed spec") {
    CHECK_THROWS_AS(apply_override(c, "just-words"), std::invalid_argument);
    CHECK_THROWS_AS(apply_override(c, "=5"), std::invalid_argument);
  }
  SECTION("seed must be a non-negative integer") {
    apply_override(c, "seed=42");
    CHECK(c.seed == 42);
    CHECK_THROWS_AS(apply_override(c, "seed=-3"), SchemaMismatch);
  }
}

TEST_CASE("line charts are structural SVG with legends and markers") {
  PlotSeries a;
  a.name = "alpha";
  a.color = "#1b9e77";
  a.pts = {{0.0, 1.0}, {1.0, 3.0}, {2.0, 2.0}};
  a.marker = 1;
  PlotSeries b;
  b.name = "beta";
  b.color = "#d95f02";
  b.pts = {{0.0, 0.5}, {1.0, 0.25}, {2.0, 4.0}};
  const std::string svg = line_chart("Demo", "step", "value", {a, b});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("alpha") != std::string::npos);
  CHECK(svg.find("beta") != std::string::npos);
  CHECK(svg.find("<circle") != std::string::npos);
  CHECK(svg.find("Demo") != std::string::npos);
  CHECK(svg == line_chart("Demo", "step", "value", {a, b}));

  SECTION("rejects bad inputs") {
    CHECK_THROWS_AS(line_chart("t", "x", "y", {}), std::invalid_argument);
    PlotSeries nan = a;
    nan.pts[0].second = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(line_chart("t", "x", "y", {nan}), std::invalid_argument);
    PlotSeries oob = a;
    oob.marker = 9;
    CHECK_THROWS_AS(line_chart("t", "x", "y", {oob}), std::invalid_argument);
  }
  SECTION("escapes markup in labels") {
    const std::string esc = line_chart("a<b", "x", "y", {a});
    CHECK(esc.find("a&lt;b") != std::string::npos);
  }
}

TEST_CASE("bar charts draw one rect per value") {
  const std::vector<std::pair<std::string, std::string>> series = {
      {"point", "#d95f02"}, {"fdlc", "#1b9e77"}};
  const std::vector<BarGroup> groups = {{"10 deg", {2.0, 1.0}},
                                        {"20 deg", {4.0, 3.0}}};
  const std::string svg = bar_chart("Effort", "N^2 s", series, groups);
  CHECK(svg.rfind("<svg", 0) == 0);
  std::size_t rects = 0;
  for (std::size_t pos = 0; (pos = svg.find("<rect", pos)) != std::string::npos;
       ++pos) {
    ++rects;
  }
  CHECK(rects == 2 + 4);  // background + frame + one per value
  CHECK_THROWS_AS(bar_chart("t", "y", series, {{"g", {1.0}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(bar_chart("t", "y", series, {{"g", {1.0, -2.0}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(bar_chart("t", "y", {}, {}), std::invalid_argument);
}

TEST_CASE("empty goal list produces a manifest and nothing else") {
  const fs::path out = fresh_dir("empty");
  ExperimentConfig c = tiny_config(out);
  c.goals_deg.clear();
  const RunBundle bundle = run(c);
  CHECK(bundle.runs.empty());
  CHECK(bundle.comparisons.empty());

  const auto tree = tree_bytes(out);
  REQUIRE(tree.size() == 1);
  CHECK(tree.count("manifest.json") == 1);
  const nlohmann::json m = nlohmann::json::parse(tree.at("manifest.json"));
  CHECK(m["schema"] == "pushbox-manifest-v1");
  CHECK(m["runs"].empty());
  CHECK(m["files"].empty());
  CHECK(m["config"] == config_to_json(c));
  fs::remove_all(out);
}

TEST_CASE("a small sweep persists the full artifact tree") {
  const fs::path out = fresh_dir("sweep");
  const ExperimentConfig c = tiny_config(out);
  const RunBundle bundle = run(c);

  REQUIRE(bundle.runs.size() == 2);
  for (const auto& r : bundle.runs) {
    INFO(to_string(r.model) << " status: " << r.status);
    CHECK(r.ok());
    CHECK(r.traj.horizon() == 8);
    CHECK(r.report.tracking_error < 2.0 * std::numbers::pi / 180.0);
  }
  REQUIRE(bundle.comparisons.size() == 1);
  CHECK(bundle.comparisons[0].theta_goal ==
        5.0 * std::numbers::pi / 180.0);

  const auto tree = tree_bytes(out);
  for (const char* rel :
       {"manifest.json", "comparison.csv", "point_5/trajectory.json",
        "point_5/metrics.csv", "point_5/forces.csv", "point_5/controls.csv",
        "fdlc_5/trajectory.json", "fdlc_5/metrics.csv", "fdlc_5/forces.csv",
        "fdlc_5/controls.csv", "plots/controls_point_5.svg",
        "plots/controls_fdlc_5.svg", "plots/travel_5.svg",
        "plots/forces_5.svg", "plots/effort.svg"}) {
    INFO(rel);
    CHECK(tree.count(rel) == 1);
  }
  CHECK(tree.size() == 15);

  SECTION("manifest hashes every file it names, and names every file") {
    const nlohmann::json m = nlohmann::json::parse(tree.at("manifest.json"));
    REQUIRE(m["files"].size() == tree.size() - 1);  // itself excluded
    for (const auto& [rel, hash] : m["files"].items()) {
      REQUIRE(tree.count(rel) == 1);
      CHECK(hash.get<std::string>() == hex64(fnv1a64(tree.at(rel))));
    }
    CHECK(m["config"] == config_to_json(c));
    for (const auto& e : m["runs"]) {
      CHECK(e["status"] == "ok");
      CHECK(e["goal_deg"] == 5.0);
    }
  }
  SECTION("stored artifacts parse and agree with the bundle") {
    const nlohmann::json tj =
        nlohmann::json::parse(tree.at("point_5/trajectory.json"));
    CHECK(tj["schema"] == "pushbox-trajectory-v1");
    CHECK(tj["model"] == "point");
    CHECK(tj["states"].size() == 9);
    CHECK(tj["controls"].size() == 8);
    CHECK(tj["fn"].size() == 8);

    const std::string mcsv = tree.at("point_5/metrics.csv");
    CHECK(mcsv.rfind(metrics_csv_header(), 0) == 0);
    CHECK(mcsv.find(metrics_csv_row(bundle.runs[0].report)) !=
          std::string::npos);

    const std::string cmp = tree.at("comparison.csv");
    CHECK(cmp == comparison_csv_header() + "\n" +
                     comparison_csv_row(bundle.comparisons[0]) + "\n");

    const std::string fcsv = tree.at("point_5/forces.csv");
    CHECK(fcsv.rfind("step,fn_0,ft_0,total_fn,ground_torque", 0) == 0);
    const std::string fcsv2 = tree.at("fdlc_5/forces.csv");
    CHECK(fcsv2.rfind("step,fn_0,ft_0,fn_1,ft_1,total_fn,ground_torque", 0) ==
          0);
  }
  fs::remove_all(out);
}

TEST_CASE("re-running an identical config reproduces identical artifacts") {
  const fs::path out = fresh_dir("deterministic");
  ExperimentConfig c = tiny_config(out);
  c.models = {ContactModelKind::kPoint};

  run(c);
  const auto first = tree_bytes(out);
  run(c);
  const auto second = tree_bytes(out);

  REQUIRE(first.size() == second.size());
  for (const auto& [rel, bytes] : first) {
    INFO(rel);
    CHECK(second.at(rel) == bytes);
  }
  fs::remove_all(out);
}

TEST_CASE("replay re-simulates stored controls") {
  const fs::path out = fresh_dir("replay");
  const ExperimentConfig c = tiny_config(out);
  run(c);
  const fs::path stored = out / "point_5" / "trajectory.json";

  SECTION("fresh trajectories replay to within tolerance") {
    const ReplayResult r = replay(stored, c);
    CHECK(r.max_deviation <= 1e-6);
    CHECK(r.traj.horizon() == 8);
  }
  SECTION("perturbed friction reports a deviation without error") {
    ExperimentConfig bent = c;
    bent.params.mu_pusher = 0.4;
    const ReplayResult r = replay(stored, bent);
    CHECK(std::isfinite(r.max_deviation));
    CHECK(r.max_deviation > 1e-9);
  }
  SECTION("a NaN in the controls is rejected as a schema violation") {
    nlohmann::json j = nlohmann::json::parse(slurp(stored));
    j["controls"][3][0] = "nan";
    const fs::path bad = out / "bad.json";
    std::ofstream(bad) << j.dump();
    CHECK_THROWS_AS(replay(bad, c), SchemaMismatch);
  }
  SECTION("model not enabled in the config") {
    ExperimentConfig fdlc_only = c;
    fdlc_only.models = {ContactModelKind::kFdlc};
    CHECK_THROWS_AS(replay(stored, fdlc_only), SchemaMismatch);
  }
  SECTION("state width must match the declared model") {
    nlohmann::json j = nlohmann::json::parse(slurp(stored));
    j["model"] = "fdlc";  // point-width states cannot drive the disc pair
    const fs::path bad = out / "mismatch.json";
    std::ofstream(bad) << j.dump();
    CHECK_THROWS_AS(replay(bad, c), SchemaMismatch);
  }
  SECTION("garbage files are schema mismatches") {
    const fs::path bad = out / "garbage.json";
    std::ofstream(bad) << "not json at all";
    CHECK_THROWS_AS(replay(bad, c), SchemaMismatch);
    CHECK_THROWS_AS(replay(out / "nothing.json", c), SchemaMismatch);
  }
  fs::remove_all(out);
}

TEST_CASE("sensitivities agree with finite differences at random states") {
  ExperimentConfig c;
  for (ContactModelKind kind :
       {ContactModelKind::kPoint, ContactModelKind::kFdlc}) {
    const GradCheckResult g = gradcheck(c, kind, 4);
    INFO(to_string(kind));
    CHECK(g.states_checked == 4);
    CHECK(g.max_rel_A <= 1e-4);
    CHECK(g.max_rel_B <= 1e-4);
    CHECK(g.max_rel_A > 0.0);
  }
  CHECK_THROWS_AS(gradcheck(c, ContactModelKind::kPoint, 0),
                  std::invalid_argument);
}
