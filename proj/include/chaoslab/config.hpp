#ifndef CHAOSLAB_CONFIG_HPP
#define CHAOSLAB_CONFIG_HPP

#include <string>

#include "chaoslab/chaos.hpp"
#include "chaoslab/constants.hpp"

namespace chaoslab {

// Parsed experiment configuration (JSON). See docs/config.example.json.
struct ExperimentConfig {
  std::string version = "1";

  // driver block
  std::vector<double> times;       // grid; uniform grid built from steps/horizon
  std::string diff_preset = "rademacher";
  double diff_scale = 1.0;
  std::string jump_preset = "none";  // "none" | "trinomial(p0)" | "rademacher"
  double jump_scale = 1.0;

  // generator / terminal
  std::string generator = "zero";
  std::string terminal_kind = "constant";
  double terminal_value = 1.0;
  double terminal_scale = 1.0;
  std::string terminal_eps = "zero";  // "zero" | "1/N" | "1/sqrtN"

  // solver block
  double beta_hat = 1.0;
  double tolerance = 1e-10;
  int max_iterations = 200;
  std::string mode = "instantaneous";  // or "path"
  bool left_limit = false;

  // experiment block
  std::string experiment = "solve";  // constants|validate|solve|chaos|rates
  std::string theorem = "instant-MV";
  std::vector<int> n_list{2, 4, 8};
  int particles = 1;
  double q = 6.0;
  std::size_t t_index = 0;  // 0 = terminal
  std::uint64_t seed = 1;
  std::size_t reps_cap = 64;

  std::string out_dir = ".";

  // derived objects
  DriverModel build_model() const;
  GeneratorSpec build_generator() const;
  TerminalFamily build_terminal() const;
  SolveOptions build_options() const;
  ChaosConfig build_chaos() const;
  TheoremId theorem_id() const { return theorem_from_string(theorem); }
};

ExperimentConfig parse_config_text(const std::string& json_text);   // throws ConfigError
ExperimentConfig parse_config_file(const std::string& path);        // throws ConfigError
std::string serialize_config(const ExperimentConfig& cfg);          // canonical JSON

}  // namespace chaoslab

#endif
