#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtzf/common.hpp"
#include "dtzf/netgeom.hpp"
#include "dtzf/neuralpredict.hpp"
#include "dtzf/simkernel.hpp"

// JSON configuration with three flat sections (system, training, simulation),
// strict about unknown keys, and a manifest describing one command invocation
// precisely enough that equal manifest hashes imply byte-equal outputs.
namespace dtzf::config {

using nlohmann::json;

struct TrainingConfig {
  int layers = 2;
  int hidden = 25;
  std::string cell = "lstm";  // or "gru"
  int window = 20;
  int batch = 64;
  int epochs = 200;
  int training_length = 5000;
  double pilot_snr_db = 30.0;
  double horizon_ms = 1.0;
  int num_traces = 64;    // anonymous training links
  int trace_length = 128; // samples per training link
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double target_mse = 0.0;
  double plateau_rel = 0.0;
  int plateau_window = 5;
  int min_epochs = 8;
  std::string sharing = "shared";  // one parameter set reused per user, or "per_user"
  bool noisy_targets = false;
};

struct SimulationConfig {
  std::string mode = "perfect";  // perfect | outdated | predicted | noisy-predicted
  int drops = 200;
  int warmup_steps = 20;
  int power_control_draws = 200;
  int redraw_limit = 10;
  double pilot_snr_db = 30.0;
  bool physical_estimation = false;
  bool gaussian_symbols = false;
  int jobs = 1;
};

struct Config {
  netgeom::SystemConfig system;
  TrainingConfig training;
  SimulationConfig simulation;
};

namespace detail {

class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object())
      throw invalid_parameter("config: section " + name_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw invalid_parameter("config: bad value for " + name_ + "." + key);
    }
  }

  void finish() const {
    for (const auto& el : j_.items())
      if (!seen_.count(el.key()))
        throw invalid_parameter("config: unknown key " + name_ + "." + el.key());
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline void parse_system(const json& j, netgeom::SystemConfig& c) {
  detail::Section s(j, "system");
  s.get("num_aps", c.num_aps);
  s.get("num_ues", c.num_ues);
  s.get("area_side", c.area_side);
  s.get("break_d0", c.break_d0);
  s.get("break_d1", c.break_d1);
  s.get("carrier_freq", c.carrier_freq);
  s.get("ap_height", c.ap_height);
  s.get("ue_height", c.ue_height);
  s.get("shadow_sigma", c.shadow_sigma);
  s.get("ap_power", c.ap_power);
  s.get("ue_power", c.ue_power);
  s.get("bandwidth", c.bandwidth);
  s.get("temperature", c.temperature);
  s.get("noise_figure", c.noise_figure);
  s.get("boltzmann", c.boltzmann);
  s.get("doppler", c.doppler);
  s.get("frame_duration", c.frame_duration);
  s.get("delay", c.delay);
  s.get("symbols_per_frame", c.symbols_per_frame);
  s.get("rng_seed", c.rng_seed);
  s.finish();
}

inline void parse_training(const json& j, TrainingConfig& c) {
  detail::Section s(j, "training");
  s.get("layers", c.layers);
  s.get("hidden", c.hidden);
  s.get("cell", c.cell);
  s.get("window", c.window);
  s.get("batch", c.batch);
  s.get("epochs", c.epochs);
  s.get("training_length", c.training_length);
  s.get("pilot_snr_db", c.pilot_snr_db);
  s.get("horizon_ms", c.horizon_ms);
  s.get("num_traces", c.num_traces);
  s.get("trace_length", c.trace_length);
  s.get("learning_rate", c.learning_rate);
  s.get("adam_beta1", c.adam_beta1);
  s.get("adam_beta2", c.adam_beta2);
  s.get("adam_eps", c.adam_eps);
  s.get("target_mse", c.target_mse);
  s.get("plateau_rel", c.plateau_rel);
  s.get("plateau_window", c.plateau_window);
  s.get("min_epochs", c.min_epochs);
  s.get("sharing", c.sharing);
  s.get("noisy_targets", c.noisy_targets);
  s.finish();
  if (c.cell != "lstm" && c.cell != "gru")
    throw invalid_parameter("config: training.cell must be lstm or gru");
  if (c.sharing != "shared" && c.sharing != "per_user")
    throw invalid_parameter("config: training.sharing must be shared or per_user");
}

inline void parse_simulation(const json& j, SimulationConfig& c) {
  detail::Section s(j, "simulation");
  s.get("mode", c.mode);
  s.get("drops", c.drops);
  s.get("warmup_steps", c.warmup_steps);
  s.get("power_control_draws", c.power_control_draws);
  s.get("redraw_limit", c.redraw_limit);
  s.get("pilot_snr_db", c.pilot_snr_db);
  s.get("physical_estimation", c.physical_estimation);
  s.get("gaussian_symbols", c.gaussian_symbols);
  s.get("jobs", c.jobs);
  s.finish();
}

inline Config parse_config(const json& j) {
  if (!j.is_object()) throw invalid_parameter("config: root must be an object");
  static const std::set<std::string> sections{"system", "training", "simulation"};
  for (const auto& el : j.items())
    if (!sections.count(el.key()))
      throw invalid_parameter("config: unknown section " + el.key());
  Config c;
  if (j.contains("system")) parse_system(j.at("system"), c.system);
  if (j.contains("training")) parse_training(j.at("training"), c.training);
  if (j.contains("simulation")) parse_simulation(j.at("simulation"), c.simulation);
  c.system.validate();
  return c;
}

inline json to_json(const Config& c) {
  json sys{{"num_aps", c.system.num_aps},
           {"num_ues", c.system.num_ues},
           {"area_side", c.system.area_side},
           {"break_d0", c.system.break_d0},
           {"break_d1", c.system.break_d1},
           {"carrier_freq", c.system.carrier_freq},
           {"ap_height", c.system.ap_height},
           {"ue_height", c.system.ue_height},
           {"shadow_sigma", c.system.shadow_sigma},
           {"ap_power", c.system.ap_power},
           {"ue_power", c.system.ue_power},
           {"bandwidth", c.system.bandwidth},
           {"temperature", c.system.temperature},
           {"noise_figure", c.system.noise_figure},
           {"boltzmann", c.system.boltzmann},
           {"doppler", c.system.doppler},
           {"frame_duration", c.system.frame_duration},
           {"delay", c.system.delay},
           {"symbols_per_frame", c.system.symbols_per_frame},
           {"rng_seed", c.system.rng_seed}};
  json tr{{"layers", c.training.layers},
          {"hidden", c.training.hidden},
          {"cell", c.training.cell},
          {"window", c.training.window},
          {"batch", c.training.batch},
          {"epochs", c.training.epochs},
          {"training_length", c.training.training_length},
          {"pilot_snr_db", c.training.pilot_snr_db},
          {"horizon_ms", c.training.horizon_ms},
          {"num_traces", c.training.num_traces},
          {"trace_length", c.training.trace_length},
          {"learning_rate", c.training.learning_rate},
          {"adam_beta1", c.training.adam_beta1},
          {"adam_beta2", c.training.adam_beta2},
          {"adam_eps", c.training.adam_eps},
          {"target_mse", c.training.target_mse},
          {"plateau_rel", c.training.plateau_rel},
          {"plateau_window", c.training.plateau_window},
          {"min_epochs", c.training.min_epochs},
          {"sharing", c.training.sharing},
          {"noisy_targets", c.training.noisy_targets}};
  json sim{{"mode", c.simulation.mode},
           {"drops", c.simulation.drops},
           {"warmup_steps", c.simulation.warmup_steps},
           {"power_control_draws", c.simulation.power_control_draws},
           {"redraw_limit", c.simulation.redraw_limit},
           {"pilot_snr_db", c.simulation.pilot_snr_db},
           {"physical_estimation", c.simulation.physical_estimation},
           {"gaussian_symbols", c.simulation.gaussian_symbols},
           {"jobs", c.simulation.jobs}};
  return json{{"system", sys}, {"training", tr}, {"simulation", sim}};
}

inline std::uint64_t config_hash(const Config& c) {
  const std::string s = to_json(c).dump();
  return fnv1a64(s.data(), s.size());
}

// Physical-scenario identity: reports may only be merged when the system
// section agrees; mode and training knobs are allowed to differ.
inline std::uint64_t system_hash(const Config& c) {
  const std::string s = to_json(c).at("system").dump();
  return fnv1a64(s.data(), s.size());
}

// Bridges into the library option structs.

inline neuralpredict::TrainOptions training_options(const Config& c) {
  neuralpredict::TrainOptions o;
  o.layers = c.training.layers;
  o.hidden = c.training.hidden;
  o.cell = c.training.cell == "gru" ? neuralpredict::CellType::gru
                                    : neuralpredict::CellType::lstm;
  o.window = c.training.window;
  o.batch = c.training.batch;
  o.epochs = c.training.epochs;
  o.training_length = c.training.training_length;
  o.pilot_snr_db = c.training.pilot_snr_db;
  o.noisy_targets = c.training.noisy_targets;
  o.adam.lr = c.training.learning_rate;
  o.adam.beta1 = c.training.adam_beta1;
  o.adam.beta2 = c.training.adam_beta2;
  o.adam.eps = c.training.adam_eps;
  o.target_mse = c.training.target_mse;
  o.plateau_rel = c.training.plateau_rel;
  o.plateau_window = c.training.plateau_window;
  o.min_epochs = c.training.min_epochs;
  o.seed = c.system.rng_seed;
  return o;
}

inline simkernel::SimOptions sim_options(const Config& c) {
  simkernel::SimOptions o;
  o.drops = c.simulation.drops;
  o.warmup_steps = c.simulation.warmup_steps;
  o.power_control_draws = c.simulation.power_control_draws;
  o.redraw_limit = c.simulation.redraw_limit;
  o.physical_estimation = c.simulation.physical_estimation;
  o.gaussian_symbols = c.simulation.gaussian_symbols;
  o.jobs = c.simulation.jobs;
  return o;
}

inline simkernel::CsiKind parse_mode(const std::string& name) {
  if (name == "perfect") return simkernel::CsiKind::perfect;
  if (name == "outdated") return simkernel::CsiKind::outdated;
  if (name == "predicted") return simkernel::CsiKind::predicted;
  if (name == "noisy-predicted") return simkernel::CsiKind::noisy_predicted;
  throw invalid_parameter("unknown mode: " + name);
}

// One command invocation. The core (command, config, seed, modes, input
// content hashes) fixes every output byte, so hashing it gives the
// reproducibility token recorded by each output sidecar.
struct RunManifest {
  std::string command;
  json config_json;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> modes;
  std::string out_dir;
  std::map<std::string, std::string> inputs;   // path -> content hash
  std::map<std::string, std::string> outputs;  // path -> content hash

  json core() const {
    std::vector<std::string> in_hashes;
    for (const auto& [path, h] : inputs) in_hashes.push_back(h);
    std::sort(in_hashes.begin(), in_hashes.end());
    return json{{"command", command},
                {"config", config_json},
                {"seed", seed},
                {"modes", modes},
                {"inputs", in_hashes}};
  }

  std::uint64_t hash() const {
    const std::string s = core().dump();
    return fnv1a64(s.data(), s.size());
  }

  json full() const {
    json j = core();
    j["manifest_hash"] = hex64(hash());
    j["config_hash"] = hex64(config_hash);
    j["out_dir"] = out_dir;
    j["input_files"] = inputs;
    j["output_files"] = outputs;
    return j;
  }
};

}  // namespace dtzf::config
