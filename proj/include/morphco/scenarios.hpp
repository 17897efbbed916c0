#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "morphco/geom.hpp"
#include "morphco/morpho.hpp"
#include "morphco/rng.hpp"

#include "json.hpp"

// Task definitions: planar reach / box-flip / plank-rotation scenarios.
// A scenario fixes the feature schema and ranges, the robot geometry, the
// rollout horizon and the loss weights; a task instance is one draw of the
// features plus the derived object placement.

namespace morphco::scen {

struct MissingFeature : std::runtime_error {
  explicit MissingFeature(const std::string& m) : std::runtime_error(m) {}
};

enum class Scenario { reach, flipbox, rotateplank };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::reach: return "reach";
    case Scenario::flipbox: return "flipbox";
    case Scenario::rotateplank: return "rotateplank";
  }
  return "?";
}

inline Scenario scenario_from_string(const std::string& s) {
  if (s == "reach") return Scenario::reach;
  if (s == "flipbox") return Scenario::flipbox;
  if (s == "rotateplank") return Scenario::rotateplank;
  throw std::invalid_argument("unknown scenario: " + s);
}

inline int feature_dim(Scenario s) {
  switch (s) {
    case Scenario::reach: return 8;
    case Scenario::flipbox: return 4;
    case Scenario::rotateplank: return 2;
  }
  return 0;
}

struct FeatureRange {
  double lo = 0.0, hi = 1.0;
};

struct TaskFeatures {
  Scenario tag = Scenario::flipbox;
  Eigen::VectorXd values;
};

struct ScenarioConfig {
  Scenario tag = Scenario::flipbox;
  std::vector<FeatureRange> feature_ranges;
  int horizon = 240;
  double dt = 1.0 / 120.0;
  double state_weight = 1.0;
  double effort_weight = 1e-3;
  double tau_max = 30.0;
  morpho::RobotSpec robot;
  std::array<double, 3> q_init{0.0, 0.0, 0.0};

  double gravity = 9.81;
  double joint_damping = 0.05;
  double contact_stiffness = 1e4;
  double contact_damping = 10.0;
  double friction_mu = 0.8;
  double friction_vreg = 0.01;
  double contact_vsat = 0.25;       // approach-speed saturation in the load factor
  double contact_depth_cap = 0.12;  // smooth saturation depth of the spring

  double object_density = 0.01;
  double plank_length = 12.0;
  double plank_thickness = 0.8;
  double plank_pivot_damping = 0.1;
};

// The robot geometry per scenario is sized so that the rest morphology
// covers the bulk of the feature range while the far placements need longer
// links, and so the initial pose never overlaps a sampled object.
inline ScenarioConfig default_config(Scenario tag) {
  ScenarioConfig c;
  c.tag = tag;
  switch (tag) {
    case Scenario::reach:
      c.feature_ranges = {{-5, 25}, {-25, 25}, {-5, 25}, {-25, 25},
                          {-5, 25}, {-25, 25}, {-5, 25}, {-25, 25}};
      c.horizon = 480;
      c.effort_weight = 1e-4;
      c.robot.base_position = {0.0, 0.0};
      c.robot.rest_link_length = 6.5;
      c.robot.rest_link_width = 1.2;
      c.robot.material_density = 0.006;
      c.q_init = {-0.6, 0.5, 0.4};
      break;
    case Scenario::flipbox:
      c.feature_ranges = {{-25, 25}, {-5, 5}, {2, 9}, {2, 9}};
      c.horizon = 240;
      c.effort_weight = 1e-3;
      c.robot.base_position = {0.0, 14.0};
      c.robot.rest_link_length = 6.5;
      c.robot.rest_link_width = 1.3;
      c.robot.material_density = 0.006;
      c.object_density = 0.01;
      c.q_init = {1.1, 2.2, -2.0};  // fallback pose; instances carry an aim
      break;
    case Scenario::rotateplank:
      c.feature_ranges = {{-5, 25}, {-10, 10}};
      c.horizon = 240;
      c.effort_weight = 1e-4;
      c.robot.base_position = {0.0, 16.0};
      c.robot.rest_link_length = 6.5;
      c.robot.rest_link_width = 1.2;
      c.robot.material_density = 0.006;
      c.object_density = 0.008;
      c.q_init = {1.3, 2.2, -2.0};
      break;
  }
  c.robot.control_horizon = c.horizon;
  return c;
}

inline nlohmann::json config_to_json(const ScenarioConfig& c) {
  nlohmann::json ranges = nlohmann::json::array();
  for (const auto& r : c.feature_ranges) ranges.push_back({r.lo, r.hi});
  nlohmann::json j{{"scenario", to_string(c.tag)},
                   {"feature_ranges", ranges},
                   {"horizon", c.horizon},
                   {"dt", c.dt},
                   {"loss_weights", {{"state", c.state_weight}, {"effort", c.effort_weight}}},
                   {"tau_max", c.tau_max},
                   {"gravity", c.gravity},
                   {"joint_damping", c.joint_damping},
                   {"contact",
                    {{"stiffness", c.contact_stiffness},
                     {"damping", c.contact_damping},
                     {"friction_mu", c.friction_mu},
                     {"friction_vreg", c.friction_vreg},
                     {"vsat", c.contact_vsat},
                     {"depth_cap", c.contact_depth_cap}}},
                   {"object_density", c.object_density},
                   {"q_init", c.q_init},
                   {"robot",
                    {{"rest_link_length", c.robot.rest_link_length},
                     {"rest_link_width", c.robot.rest_link_width},
                     {"material_density", c.robot.material_density},
                     {"base_position", {c.robot.base_position.x, c.robot.base_position.y}},
                     {"design_lo", c.robot.design_lo},
                     {"design_hi", c.robot.design_hi}}}};
  if (c.tag == Scenario::rotateplank)
    j["plank"] = {{"length", c.plank_length},
                  {"thickness", c.plank_thickness},
                  {"pivot_damping", c.plank_pivot_damping}};
  return j;
}

// Fields absent from the file keep their scenario defaults; CLI overrides
// are applied by the caller afterwards.
inline ScenarioConfig config_from_json(const nlohmann::json& j) {
  if (!j.contains("scenario")) throw std::invalid_argument("config missing 'scenario'");
  ScenarioConfig c = default_config(scenario_from_string(j.at("scenario").get<std::string>()));
  if (j.contains("feature_ranges")) {
    std::vector<FeatureRange> ranges;
    for (const auto& r : j.at("feature_ranges")) ranges.push_back({r.at(0), r.at(1)});
    if (static_cast<int>(ranges.size()) != feature_dim(c.tag))
      throw std::invalid_argument("feature_ranges has wrong dimension");
    c.feature_ranges = ranges;
  }
  if (j.contains("horizon")) {
    c.horizon = j.at("horizon");
    c.robot.control_horizon = c.horizon;
  }
  if (j.contains("dt")) c.dt = j.at("dt");
  if (j.contains("loss_weights")) {
    c.state_weight = j.at("loss_weights").value("state", c.state_weight);
    c.effort_weight = j.at("loss_weights").value("effort", c.effort_weight);
  }
  if (j.contains("tau_max")) c.tau_max = j.at("tau_max");
  if (j.contains("gravity")) c.gravity = j.at("gravity");
  if (j.contains("joint_damping")) c.joint_damping = j.at("joint_damping");
  if (j.contains("contact")) {
    const auto& cj = j.at("contact");
    c.contact_stiffness = cj.value("stiffness", c.contact_stiffness);
    c.contact_damping = cj.value("damping", c.contact_damping);
    c.friction_mu = cj.value("friction_mu", c.friction_mu);
    c.friction_vreg = cj.value("friction_vreg", c.friction_vreg);
    c.contact_vsat = cj.value("vsat", c.contact_vsat);
    c.contact_depth_cap = cj.value("depth_cap", c.contact_depth_cap);
  }
  if (j.contains("object_density")) c.object_density = j.at("object_density");
  if (j.contains("q_init")) {
    for (int i = 0; i < 3; ++i) c.q_init[static_cast<std::size_t>(i)] = j.at("q_init").at(i);
  }
  if (j.contains("robot")) {
    const auto& rj = j.at("robot");
    c.robot.rest_link_length = rj.value("rest_link_length", c.robot.rest_link_length);
    c.robot.rest_link_width = rj.value("rest_link_width", c.robot.rest_link_width);
    c.robot.material_density = rj.value("material_density", c.robot.material_density);
    if (rj.contains("base_position"))
      c.robot.base_position = {rj.at("base_position").at(0), rj.at("base_position").at(1)};
    c.robot.design_lo = rj.value("design_lo", c.robot.design_lo);
    c.robot.design_hi = rj.value("design_hi", c.robot.design_hi);
  }
  if (j.contains("plank")) {
    c.plank_length = j.at("plank").value("length", c.plank_length);
    c.plank_thickness = j.at("plank").value("thickness", c.plank_thickness);
    c.plank_pivot_damping = j.at("plank").value("pivot_damping", c.plank_pivot_damping);
  }
  return c;
}

// Extract the performance-related features from a raw scene description,
// dropping everything else (colors, labels, ...).
inline TaskFeatures abstract_task(const nlohmann::json& scene) {
  if (!scene.contains("scenario")) throw MissingFeature("scene missing 'scenario'");
  TaskFeatures t;
  t.tag = scenario_from_string(scene.at("scenario").get<std::string>());
  t.values.resize(feature_dim(t.tag));
  switch (t.tag) {
    case Scenario::reach: {
      if (!scene.contains("targets")) throw MissingFeature("reach scene missing 'targets'");
      const auto& targets = scene.at("targets");
      if (targets.size() != 4) throw MissingFeature("reach scene needs 4 targets");
      for (int k = 0; k < 4; ++k) {
        t.values[2 * k] = targets.at(k).at(0);
        t.values[2 * k + 1] = targets.at(k).at(1);
      }
      break;
    }
    case Scenario::flipbox: {
      if (!scene.contains("position")) throw MissingFeature("flipbox scene missing 'position'");
      if (!scene.contains("size")) throw MissingFeature("flipbox scene missing 'size'");
      t.values[0] = scene.at("position").at(0);
      t.values[1] = scene.at("position").at(1);
      t.values[2] = scene.at("size").at(0);
      t.values[3] = scene.at("size").at(1);
      break;
    }
    case Scenario::rotateplank: {
      if (!scene.contains("stake")) throw MissingFeature("rotateplank scene missing 'stake'");
      t.values[0] = scene.at("stake").at(0);
      t.values[1] = scene.at("stake").at(1);
      break;
    }
  }
  return t;
}

// Affine map of each feature into [-1, 1] by its declared range.
inline Eigen::VectorXd normalize_features(const ScenarioConfig& cfg, const Eigen::VectorXd& v) {
  Eigen::VectorXd out(v.size());
  for (int i = 0; i < v.size(); ++i) {
    const FeatureRange& r = cfg.feature_ranges[static_cast<std::size_t>(i)];
    out[i] = 2.0 * (v[i] - r.lo) / (r.hi - r.lo) - 1.0;
  }
  return out;
}

// One concrete task: features plus derived object geometry.
struct ScenarioInstance {
  ScenarioConfig cfg;
  TaskFeatures features;
  nlohmann::json scene;

  // reach
  std::array<Vec2d, 4> targets{};
  // flipbox
  Vec2d box_center0{};
  double box_hx = 0, box_hy = 0, box_mass = 0, box_inertia = 0;
  // rotateplank
  Vec2d stake{};
  double plank_hx = 0, plank_hy = 0, plank_inertia = 0;
  // initial-pose aim: the arm starts folded along the ray toward this point,
  // stopping aim_margin short of it (contact scenarios only)
  bool has_aim = false;
  Vec2d aim_point{};
  double aim_margin = 0.0;

  int object_dim() const {
    switch (cfg.tag) {
      case Scenario::reach: return 0;
      case Scenario::flipbox: return 6;  // x y th vx vy om
      case Scenario::rotateplank: return 2;  // th om
    }
    return 0;
  }

  // trajectory indices (state after the step) at 25/50/75/100% of the horizon
  std::array<int, 4> reach_checkpoints() const {
    std::array<int, 4> cp{};
    for (int k = 1; k <= 4; ++k) cp[static_cast<std::size_t>(k - 1)] = (cfg.horizon * k) / 4 - 1;
    return cp;
  }
};

inline ScenarioInstance make_instance(const ScenarioConfig& cfg, const TaskFeatures& t,
                                      nlohmann::json scene = {}) {
  if (t.tag != cfg.tag) throw std::invalid_argument("feature/config scenario mismatch");
  if (t.values.size() != feature_dim(cfg.tag))
    throw std::invalid_argument("feature dimension mismatch");
  ScenarioInstance inst;
  inst.cfg = cfg;
  inst.features = t;
  inst.scene = std::move(scene);
  switch (cfg.tag) {
    case Scenario::reach:
      for (int k = 0; k < 4; ++k)
        inst.targets[static_cast<std::size_t>(k)] = {t.values[2 * k], t.values[2 * k + 1]};
      break;
    case Scenario::flipbox: {
      const double a = t.values[2], b = t.values[3];
      inst.box_hx = 0.5 * a;
      inst.box_hy = 0.5 * b;
      // y offset reads as a horizontal shift of the resting position
      inst.box_center0 = {t.values[0] + t.values[1], inst.box_hy};
      inst.box_mass = cfg.object_density * a * b;
      inst.box_inertia = inst.box_mass * (a * a + b * b) / 12.0;
      // the counterclockwise flip is driven by pushing the right face
      // leftward, so the arm starts beside the top of that face
      inst.has_aim = true;
      inst.aim_point = {inst.box_center0.x + inst.box_hx + 0.35, 0.8 * b};
      inst.aim_margin = 0.8;
      break;
    }
    case Scenario::rotateplank: {
      inst.stake = {t.values[0], t.values[1]};
      inst.plank_hx = 0.5 * cfg.plank_length;
      inst.plank_hy = 0.5 * cfg.plank_thickness;
      const double m = cfg.object_density * cfg.plank_length * cfg.plank_thickness;
      inst.plank_inertia =
          m * (cfg.plank_length * cfg.plank_length + cfg.plank_thickness * cfg.plank_thickness) /
          12.0;
      // pressing the left half downward spins the plank counterclockwise
      inst.has_aim = true;
      inst.aim_point = {inst.stake.x - 0.6 * inst.plank_hx, inst.stake.y + inst.plank_hy};
      inst.aim_margin = 0.7;
      break;
    }
  }
  return inst;
}

inline nlohmann::json sample_scene(const ScenarioConfig& cfg, Rng& rng) {
  const Scenario tag = cfg.tag;
  Eigen::VectorXd v(feature_dim(tag));
  for (int i = 0; i < v.size(); ++i) {
    const FeatureRange& r = cfg.feature_ranges[static_cast<std::size_t>(i)];
    v[i] = rng.uniform(r.lo, r.hi);
  }
  static const char* colors[] = {"red", "green", "blue", "yellow"};
  const char* color = colors[rng.uniform_int(4)];
  nlohmann::json scene;
  scene["scenario"] = to_string(tag);
  switch (tag) {
    case Scenario::reach: {
      nlohmann::json targets = nlohmann::json::array();
      for (int k = 0; k < 4; ++k) targets.push_back({v[2 * k], v[2 * k + 1]});
      scene["targets"] = targets;
      scene["marker_color"] = color;
      break;
    }
    case Scenario::flipbox:
      scene["object"] = "box";
      scene["position"] = {v[0], v[1]};
      scene["size"] = {v[2], v[3]};
      scene["color"] = color;
      break;
    case Scenario::rotateplank:
      scene["stake"] = {v[0], v[1]};
      scene["plank_color"] = color;
      break;
  }
  return scene;
}

inline ScenarioInstance sample_task(const ScenarioConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, hash_str("task")));
  nlohmann::json scene = sample_scene(cfg, rng);
  TaskFeatures t = abstract_task(scene);
  return make_instance(cfg, t, std::move(scene));
}

inline ScenarioInstance sample_task(Scenario tag, std::uint64_t seed) {
  return sample_task(default_config(tag), seed);
}

}  // namespace morphco::scen
