#pragma once

// Experiment configuration: the sweep definition (models x goal angles plus
// physical parameters, weights, horizon, and output location), its JSON
// schema, and dotted-path overrides ("params.mu_pusher=0.4"). All physical
// quantities are SI; angles in config files are degrees, converted at the
// boundary. Unknown keys are rejected by name, never ignored.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <pushbox/errors.hpp>
#include <pushbox/types.hpp>

namespace pushbox {

// Scalar weights expanded into per-model Q/R matrices: q_theta on the box
// angle, q_pusher_pos on every pusher coordinate, q_rate on the box rate and
// pusher velocities, r_control on every control, w_distance on the gap
// penalty. The angle weight defaults to (180/pi)^2 so a degree of angle
// error costs as much as a unit of the per-degree terms. The rate weight is
// large enough that ramming the box up to speed in one step costs more than
// pushing it steadily; that keeps the optima in the sustained-contact regime
// the study compares the two models in.
struct WeightSpec {
  double q_theta = std::pow(180.0 / std::numbers::pi, 2);
  double q_pusher_pos = 0.1;
  double q_rate = 0.05;
  double r_control = 0.1;
  double w_distance = 10.0;
};

struct ExperimentConfig {
  SystemParams params;
  ContactModel fdlc{ContactModelKind::kFdlc};  // disc-pair spring settings
  std::vector<ContactModelKind> models{ContactModelKind::kPoint,
                                       ContactModelKind::kFdlc};
  std::vector<double> goals_deg{10.0, 20.0, 30.0, 40.0};
  int horizon = 26;
  double step = 0.05;  // s
  WeightSpec weights;
  double u_init = 1.0;  // N, initial push magnitude per pusher
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  ContactModel model_for(ContactModelKind kind) const {
    if (kind == ContactModelKind::kPoint) return ContactModel{};
    ContactModel m = fdlc;
    m.kind = ContactModelKind::kFdlc;
    return m;
  }

  // Derives the box inertia from mass and side unless it was set explicitly.
  void finalize() {
    if (!params.custom_inertia) {
      params.box_inertia =
          SystemParams::plate_inertia(params.mass_box, params.side_len);
    }
  }

  void validate() const {
    if (horizon < 2) throw std::invalid_argument("horizon must be at least 2");
    if (!(step > 0.0) || !std::isfinite(step)) {
      throw std::invalid_argument("step must be a positive time in seconds");
    }
    for (double g : goals_deg) {
      if (!std::isfinite(g) || g <= -180.0 || g >= 180.0) {
        throw std::invalid_argument(
            "goal angles must lie strictly inside (-180, 180) degrees");
      }
    }
    for (std::size_t i = 0; i < models.size(); ++i) {
      for (std::size_t j = i + 1; j < models.size(); ++j) {
        if (models[i] == models[j]) {
          throw std::invalid_argument("models list contains duplicates");
        }
      }
    }
    if (!(u_init >= 0.0) || !std::isfinite(u_init)) {
      throw std::invalid_argument("u_init must be a non-negative force");
    }
    auto nonneg = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument(std::string(name) +
                                    " must be non-negative");
      }
    };
    nonneg(weights.q_theta, "weights.q_theta");
    nonneg(weights.q_pusher_pos, "weights.q_pusher_pos");
    nonneg(weights.q_rate, "weights.q_rate");
    nonneg(weights.w_distance, "weights.w_distance");
    if (!(weights.r_control > 0.0) || !std::isfinite(weights.r_control)) {
      throw std::invalid_argument("weights.r_control must be positive");
    }
    if (output_dir.empty()) {
      throw std::invalid_argument("output_dir must not be empty");
    }
    params.validate();
    for (ContactModelKind k : models) model_for(k).validate();
  }
};

namespace config_detail {

inline double number_at(const std::string& key, const nlohmann::json& v) {
  if (!v.is_number()) {
    throw SchemaMismatch(key + ": expected a number, got " +
                         std::string(v.type_name()));
  }
  return v.get<double>();
}

inline double positive_at(const std::string& key, const nlohmann::json& v) {
  const double x = number_at(key, v);
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw std::invalid_argument(key + ": must be > 0 (got " + v.dump() + ")");
  }
  return x;
}

inline double nonneg_at(const std::string& key, const nlohmann::json& v) {
  const double x = number_at(key, v);
  if (!(x >= 0.0) || !std::isfinite(x)) {
    throw std::invalid_argument(key + ": must be >= 0 (got " + v.dump() + ")");
  }
  return x;
}

inline ContactModelKind kind_at(const std::string& key,
                                const nlohmann::json& v) {
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s == "point") return ContactModelKind::kPoint;
    if (s == "fdlc") return ContactModelKind::kFdlc;
  }
  throw std::invalid_argument(key + ": expected \"point\" or \"fdlc\" (got " +
                              v.dump() + ")");
}

}  // namespace config_detail

// Applies one dotted-path key. Range violations raise std::invalid_argument
// and unknown keys / wrong JSON types raise SchemaMismatch, both naming the
// key exactly as given (aliases mu_p / mu_s match the symbols in the study's
// parameter table).
inline void apply_config_value(ExperimentConfig& c, const std::string& key,
                               const nlohmann::json& v) {
  using namespace config_detail;
  auto expect = [&](bool cond, const char* what) {
    if (!cond) {
      throw SchemaMismatch(key + ": expected " + what + ", got " + v.dump());
    }
  };
  if (key == "output_dir") {
    expect(v.is_string(), "a string");
    c.output_dir = v.get<std::string>();
    if (c.output_dir.empty()) {
      throw std::invalid_argument(key + ": must not be empty");
    }
  } else if (key == "seed") {
    expect(v.is_number_unsigned(), "a non-negative integer");
    c.seed = v.get<std::uint64_t>();
  } else if (key == "horizon") {
    expect(v.is_number_integer(), "an integer");
    const long long t = v.get<long long>();
    if (t < 2 || t > 100000) {
      throw std::invalid_argument(key + ": must be in [2, 100000] (got " +
                                  v.dump() + ")");
    }
    c.horizon = static_cast<int>(t);
  } else if (key == "step") {
    c.step = positive_at(key, v);
  } else if (key == "u_init") {
    c.u_init = nonneg_at(key, v);
  } else if (key == "goals_deg") {
    expect(v.is_array(), "an array of numbers");
    std::vector<double> goals;
    for (const auto& e : v) {
      const double g = number_at(key, e);
      if (!std::isfinite(g) || g <= -180.0 || g >= 180.0) {
        throw std::invalid_argument(
            key + ": goal angles must lie strictly inside (-180, 180) "
                  "degrees (got " +
            e.dump() + ")");
      }
      goals.push_back(g);
    }
    c.goals_deg = std::move(goals);
  } else if (key == "models") {
    expect(v.is_array(), "an array of model names");
    std::vector<ContactModelKind> kinds;
    for (const auto& e : v) kinds.push_back(kind_at(key, e));
    c.models = std::move(kinds);
  } else if (key == "params.mu_pusher" || key == "params.mu_p") {
    c.params.mu_pusher = nonneg_at(key, v);
  } else if (key == "params.mu_surface" || key == "params.mu_s") {
    c.params.mu_surface = nonneg_at(key, v);
  } else if (key == "params.mass_box") {
    c.params.mass_box = positive_at(key, v);
  } else if (key == "params.side_len") {
    c.params.side_len = positive_at(key, v);
  } else if (key == "params.pusher_sep") {
    c.params.pusher_sep = positive_at(key, v);
  } else if (key == "params.pusher_radius") {
    c.params.pusher_radius = positive_at(key, v);
  } else if (key == "params.pusher_mass") {
    c.params.pusher_mass = positive_at(key, v);
  } else if (key == "params.box_inertia") {
    c.params.box_inertia = positive_at(key, v);
    c.params.custom_inertia = true;
  } else if (key == "params.gravity") {
    c.params.gravity = nonneg_at(key, v);
  } else if (key == "params.eps_dir") {
    c.params.eps_dir = positive_at(key, v);
  } else if (key == "fdlc.stiffness") {
    c.fdlc.stiffness = positive_at(key, v);
  } else if (key == "fdlc.damping") {
    c.fdlc.damping = nonneg_at(key, v);
  } else if (key == "fdlc.rest_length") {
    c.fdlc.rest_length = positive_at(key, v);
  } else if (key == "weights.q_theta") {
    c.weights.q_theta = nonneg_at(key, v);
  } else if (key == "weights.q_pusher_pos") {
    c.weights.q_pusher_pos = nonneg_at(key, v);
  } else if (key == "weights.q_rate") {
    c.weights.q_rate = nonneg_at(key, v);
  } else if (key == "weights.r_control") {
    c.weights.r_control = positive_at(key, v);
  } else if (key == "weights.w_distance") {
    c.weights.w_distance = nonneg_at(key, v);
  } else {
    throw SchemaMismatch("unknown config key: " + key);
  }
}

// Builds a config from a parsed JSON document. Nested objects (params, fdlc,
// weights) flatten to dotted keys; anything else unknown is rejected.
inline ExperimentConfig load_config(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw SchemaMismatch("config root must be a JSON object");
  }
  ExperimentConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "params" || key == "fdlc" || key == "weights") {
      if (!value.is_object()) {
        throw SchemaMismatch(key + ": expected an object");
      }
      for (const auto& [inner, iv] : value.items()) {
        apply_config_value(c, key + "." + inner, iv);
      }
    } else {
      apply_config_value(c, key, value);
    }
  }
  c.finalize();
  return c;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaMismatch("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaMismatch("config file " + path + " is not valid JSON: " +
                         e.what());
  }
  return load_config(j);
}

// Applies one "key=value" override. Values parse as JSON scalars (bare words
// fall back to strings); the two list keys split on commas, so
// "goals_deg=10,20" and "models=fdlc" work as expected.
inline void apply_override(ExperimentConfig& c, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override must look like key=value: " + spec);
  }
  const std::string key = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);
  auto scalar = [](const std::string& text) {
    nlohmann::json v = nlohmann::json::parse(text, nullptr, false);
    if (v.is_discarded() || v.is_object() || v.is_array()) {
      v = text;  // bare word: treat as a string
    }
    return v;
  };
  nlohmann::json value;
  if (key == "goals_deg" || key == "models") {
    value = nlohmann::json::array();
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) value.push_back(scalar(item));
  } else {
    value = scalar(raw);
  }
  apply_config_value(c, key, value);
  c.finalize();
}

// Effective-config echo for the run manifest; loading the echo back yields an
// equivalent config (box_inertia round-trips as an explicit value).
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json models = nlohmann::json::array();
  for (ContactModelKind k : c.models) models.push_back(to_string(k));
  return nlohmann::json{
      {"output_dir", c.output_dir},
      {"seed", c.seed},
      {"horizon", c.horizon},
      {"step", c.step},
      {"u_init", c.u_init},
      {"goals_deg", c.goals_deg},
      {"models", models},
      {"params",
       {{"mu_pusher", c.params.mu_pusher},
        {"mu_surface", c.params.mu_surface},
        {"mass_box", c.params.mass_box},
        {"side_len", c.params.side_len},
        {"pusher_sep", c.params.pusher_sep},
        {"pusher_radius", c.params.pusher_radius},
        {"pusher_mass", c.params.pusher_mass},
        {"box_inertia", c.params.box_inertia},
        {"gravity", c.params.gravity},
        {"eps_dir", c.params.eps_dir}}},
      {"fdlc",
       {{"stiffness", c.fdlc.stiffness},
        {"damping", c.fdlc.damping},
        {"rest_length", c.fdlc.rest_length}}},
      {"weights",
       {{"q_theta", c.weights.q_theta},
        {"q_pusher_pos", c.weights.q_pusher_pos},
        {"q_rate", c.weights.q_rate},
        {"r_control", c.weights.r_control},
        {"w_distance", c.weights.w_distance}}}};
}

}  // namespace pushbox
