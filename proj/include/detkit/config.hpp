#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include "detkit/assign.hpp"
#include "detkit/stats.hpp"
#include "detkit/synth.hpp"

namespace detkit {

/// Settings for the memory-dynamics simulation (`memory-sim` subcommand).
struct MemorySimConfig {
  int dim = 64;
  int n_classes = 3;
  double momentum = 0.01;
  int features_per_class = 8;
  double cluster_sigma = 0.05;  // within-cluster spread
  double cluster_scale = 1.0;   // norm scale of the cluster means
  double init_scale = 0.0;      // 0 means 1/sqrt(dim)

  void validate() const {
    if (dim < 1 || n_classes < 1 || features_per_class < 1)
      throw std::invalid_argument("MemorySimConfig: dims and counts must be >= 1");
    if (!(momentum >= 0.0 && momentum <= 1.0))
      throw std::invalid_argument("MemorySimConfig: momentum must be in [0,1]");
    if (cluster_sigma < 0.0 || cluster_scale <= 0.0 || init_scale < 0.0)
      throw std::invalid_argument("MemorySimConfig: bad cluster parameters");
  }
};

/// Everything a harness run can configure, parsed from a `key = value` text
/// file (one pair per line, '#' comments). Command-line flags override file
/// values. The full key set is documented in the README.
struct HarnessConfig {
  SynthConfig synth;
  AssignConfig assign;
  BaselineConfig baselines;
  MemorySimConfig memory_sim;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' has non-numeric value '" +
                                v + "'");
  }
}

inline std::int64_t parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' has non-integer value '" +
                                v + "'");
  }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: key '" + key + "' must be true or false");
}

}  // namespace detail

inline void apply_config_entry(HarnessConfig& cfg, const std::string& key,
                               const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  auto as_int = [&](int& dst) { dst = static_cast<int>(parse_int(value, key)); };
  auto as_double = [&](double& dst) { dst = parse_double(value, key); };

  if (key == "synth.seed") cfg.synth.seed = static_cast<std::uint64_t>(parse_int(value, key));
  else if (key == "synth.image_w") as_double(cfg.synth.image_w);
  else if (key == "synth.image_h") as_double(cfg.synth.image_h);
  else if (key == "synth.n_gt") as_int(cfg.synth.n_gt);
  else if (key == "synth.size_min") as_double(cfg.synth.size_min);
  else if (key == "synth.size_max") as_double(cfg.synth.size_max);
  else if (key == "synth.preds_per_gt") as_int(cfg.synth.preds_per_gt);
  else if (key == "synth.center_jitter_sigma") as_double(cfg.synth.center_jitter_sigma);
  else if (key == "synth.center_jitter_floor_px")
    as_double(cfg.synth.center_jitter_floor_px);
  else if (key == "synth.scale_jitter_sigma") as_double(cfg.synth.scale_jitter_sigma);
  else if (key == "synth.score_noise_sigma") as_double(cfg.synth.score_noise_sigma);
  else if (key == "synth.n_classes") as_int(cfg.synth.n_classes);
  else if (key == "synth.max_attempts") as_int(cfg.synth.max_attempts);
  else if (key == "assign.k") as_int(cfg.assign.k);
  else if (key == "assign.alpha") as_double(cfg.assign.alpha);
  else if (key == "assign.beta") as_double(cfg.assign.beta);
  else if (key == "assign.s_max") as_double(cfg.assign.s_max);
  else if (key == "assign.gamma_cap") as_double(cfg.assign.gamma_cap);
  else if (key == "assign.scores_are_probabilities")
    cfg.assign.scores_are_probabilities = parse_bool(value, key);
  else if (key == "assign.beta_mode") {
    if (value == "cap") cfg.assign.beta_mode = BetaMode::kCap;
    else if (value == "floor") cfg.assign.beta_mode = BetaMode::kFloor;
    else throw std::invalid_argument("config: assign.beta_mode must be cap or floor");
  }
  else if (key == "iou_max.pos_thresh") as_double(cfg.baselines.iou_pos_thresh);
  else if (key == "iou_max.neg_thresh") as_double(cfg.baselines.iou_neg_thresh);
  else if (key == "center.radius_factor") as_double(cfg.baselines.center_radius_factor);
  else if (key == "memory.dim") as_int(cfg.memory_sim.dim);
  else if (key == "memory.n_classes") as_int(cfg.memory_sim.n_classes);
  else if (key == "memory.momentum") as_double(cfg.memory_sim.momentum);
  else if (key == "memory.features_per_class") as_int(cfg.memory_sim.features_per_class);
  else if (key == "memory.cluster_sigma") as_double(cfg.memory_sim.cluster_sigma);
  else if (key == "memory.cluster_scale") as_double(cfg.memory_sim.cluster_scale);
  else if (key == "memory.init_scale") as_double(cfg.memory_sim.init_scale);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline HarnessConfig load_harness_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
  HarnessConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not 'key = value'");
    apply_config_entry(cfg, detail::trim(line.substr(0, eq)),
                       detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

}  // namespace detkit
