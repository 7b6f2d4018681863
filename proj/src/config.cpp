#include "chaoslab/config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "chaoslab/errors.hpp"

namespace chaoslab {

using nlohmann::json;

DriverModel ExperimentConfig::build_model() const {
  if (times.size() < 2) throw ConfigError("driver: need at least two grid times");
  const std::size_t K = times.size() - 1;
  std::vector<IncrementLaw> diff(K), jump(K);
  for (std::size_t k = 0; k < K; ++k) {
    diff[k] = increment_preset(diff_preset, diff_scale);
    jump[k] = jump_preset == "none" ? IncrementLaw::dirac_zero(1)
                                    : increment_preset(jump_preset, jump_scale);
  }
  return build_driver(times, diff, jump);
}

GeneratorSpec ExperimentConfig::build_generator() const {
  GeneratorSpec g = make_generator(generator);
  if (mode == "path" && g.mode != GenMode::path)
    throw ConfigError("solver.mode is 'path' but the generator preset is instantaneous");
  if (mode == "instantaneous" && g.mode == GenMode::path)
    throw ConfigError("solver.mode is 'instantaneous' but the generator preset is path-mode");
  return g;
}

TerminalFamily ExperimentConfig::build_terminal() const {
  TerminalFamily t = TerminalFamily::make(terminal_kind, terminal_value, terminal_scale);
  if (terminal_eps == "zero")
    t.eps = TerminalFamily::Eps::zero;
  else if (terminal_eps == "1/N")
    t.eps = TerminalFamily::Eps::inv_n;
  else if (terminal_eps == "1/sqrtN")
    t.eps = TerminalFamily::Eps::inv_sqrt_n;
  else
    throw ConfigError("terminal.eps must be one of zero, 1/N, 1/sqrtN");
  return t;
}

SolveOptions ExperimentConfig::build_options() const {
  if (!(beta_hat > 0.0)) throw ConfigError("solver.beta_hat must be positive");
  SolveOptions o;
  o.beta_hat = beta_hat;
  o.tol = tolerance;
  o.max_iter = max_iterations;
  o.left_limit = left_limit;
  return o;
}

ChaosConfig ExperimentConfig::build_chaos() const {
  ChaosConfig c;
  c.model = build_model();
  c.gen = build_generator();
  c.terminal = build_terminal();
  c.opts = build_options();
  c.n_list = n_list;
  c.seed = seed;
  c.t_index = t_index;
  c.q = q;
  c.reps_cap = reps_cap;
  return c;
}

namespace {

template <typename T>
void read_into(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  try {
    read_into(j, "version", cfg.version);
    if (j.contains("driver")) {
      const auto& d = j.at("driver");
      if (d.contains("times")) {
        cfg.times = d.at("times").get<std::vector<double>>();
      } else {
        const std::size_t steps = d.value("steps", 2);
        const double horizon = d.value("horizon", 1.0);
        cfg.times.resize(steps + 1);
        for (std::size_t k = 0; k <= steps; ++k)
          cfg.times[k] = horizon * static_cast<double>(k) / static_cast<double>(steps);
      }
      read_into(d, "diff_preset", cfg.diff_preset);
      read_into(d, "diff_scale", cfg.diff_scale);
      read_into(d, "jump_preset", cfg.jump_preset);
      read_into(d, "jump_scale", cfg.jump_scale);
    }
    read_into(j, "generator", cfg.generator);
    if (j.contains("terminal")) {
      const auto& t = j.at("terminal");
      read_into(t, "kind", cfg.terminal_kind);
      read_into(t, "value", cfg.terminal_value);
      read_into(t, "scale", cfg.terminal_scale);
      read_into(t, "eps", cfg.terminal_eps);
    }
    if (j.contains("solver")) {
      const auto& s = j.at("solver");
      read_into(s, "beta_hat", cfg.beta_hat);
      read_into(s, "tolerance", cfg.tolerance);
      read_into(s, "max_iterations", cfg.max_iterations);
      read_into(s, "mode", cfg.mode);
      read_into(s, "left_limit", cfg.left_limit);
    }
    if (j.contains("experiment")) {
      const auto& e = j.at("experiment");
      read_into(e, "kind", cfg.experiment);
      read_into(e, "theorem", cfg.theorem);
      read_into(e, "n_list", cfg.n_list);
      read_into(e, "particles", cfg.particles);
      read_into(e, "q", cfg.q);
      read_into(e, "t_index", cfg.t_index);
      read_into(e, "seed", cfg.seed);
      read_into(e, "reps_cap", cfg.reps_cap);
    }
    if (j.contains("output")) read_into(j.at("output"), "dir", cfg.out_dir);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: bad field: ") + e.what());
  }

  if (cfg.mode != "instantaneous" && cfg.mode != "path")
    throw ConfigError("solver.mode must be 'instantaneous' or 'path'");
  if (cfg.times.size() < 2) throw ConfigError("driver grid must have at least two times");
  for (std::size_t k = 1; k < cfg.times.size(); ++k)
    if (!(cfg.times[k] > cfg.times[k - 1]))
      throw ConfigError("driver grid times must be strictly increasing");
  static const char* kinds[] = {"constants", "validate", "solve", "chaos", "rates"};
  bool known = false;
  for (const char* k : kinds) known = known || cfg.experiment == k;
  if (!known) throw ConfigError("experiment.kind unknown: " + cfg.experiment);
  if ((cfg.experiment == "chaos" || cfg.experiment == "rates") && cfg.seed == 0)
    throw ConfigError("sampling experiments require a nonzero seed");
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  json j;
  j["version"] = cfg.version;
  j["driver"] = {{"times", cfg.times},
                 {"diff_preset", cfg.diff_preset},
                 {"diff_scale", cfg.diff_scale},
                 {"jump_preset", cfg.jump_preset},
                 {"jump_scale", cfg.jump_scale}};
  j["generator"] = cfg.generator;
  j["terminal"] = {{"kind", cfg.terminal_kind},
                   {"value", cfg.terminal_value},
                   {"scale", cfg.terminal_scale},
                   {"eps", cfg.terminal_eps}};
  j["solver"] = {{"beta_hat", cfg.beta_hat},
                 {"tolerance", cfg.tolerance},
                 {"max_iterations", cfg.max_iterations},
                 {"mode", cfg.mode},
                 {"left_limit", cfg.left_limit}};
  j["experiment"] = {{"kind", cfg.experiment}, {"theorem", cfg.theorem},
                     {"n_list", cfg.n_list},   {"particles", cfg.particles},
                     {"q", cfg.q},             {"t_index", cfg.t_index},
                     {"seed", cfg.seed},       {"reps_cap", cfg.reps_cap}};
  j["output"] = {{"dir", cfg.out_dir}};
  return j.dump(2) + "\n";
}

}  // namespace chaoslab
