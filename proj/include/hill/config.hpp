#pragma once

// Flat `key = value` run configuration with schema validation.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "hill/errors.hpp"

namespace hill {

struct RunConfig {
  // environment
  std::string env = "umaze";  // built-in name or path to a maze file
  int max_steps = 200;        // T
  double goal_tolerance = 0.5;
  int noise_dims = 0;

  // schedule
  std::int64_t total_steps = 300000;
  std::int64_t eval_interval = 10000;  // env steps between evaluations
  int eval_episodes = 10;
  int checkpoint_interval = 0;  // episodes; 0 writes only the final checkpoint

  // hierarchy
  int c = 10;
  double gamma = 0.95;
  double alpha = 0.05;       // low-level temperature
  double alpha_high = 0.1;   // student temperature
  double delta_z_fraction = 0.1;

  // representation
  int latent_dim = 2;  // d
  double beta = 0.1;
  double power = 1.0;  // n
  double epsilon = 1e-6;
  double stable_fraction = 0.3;  // k
  int repr_batch = 128;
  int repr_interval = 1;   // episodes
  int repr_steps = 10;     // optimizer steps per scheduled update
  int triplet_capacity = 10000;

  // graph
  int landmarks = 50;  // m
  int samples = 200;   // K
  int hash_bits = 16;  // b
  std::string novelty_mode = "exact";

  // mixing
  std::string mix_rule = "pseudocode";  // pseudocode: teacher iff 2q-1 <= p; text: teacher iff q <= p
  int p_interval = 100;
  int success_window = 100;
  double p_init = 0.5;
  std::string eval_policy = "student";  // student | teacher | mix

  // learners
  int hidden_units = 64;
  int hidden_layers = 2;
  double lr_repr = 1e-3;
  double lr_low = 1e-3;
  double lr_uvfa = 1e-3;
  double lr_high = 1e-3;
  double clip_norm = 10.0;
  double tau = 0.01;
  int batch_size = 128;
  int high_batch_size = 64;
  int updates_per_episode = 150;
  int high_updates_per_decision = 1;
  int episode_capacity = 500;

  // ablations
  bool use_graph = true;   // teacher built from landmark graphs
  bool use_her = true;
  bool learn_repr = true;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  void validate() const;
  std::string serialize() const;
  static RunConfig parse(std::istream& in);
  static RunConfig parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }
  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse(in);
  }

  // Switches off graphs, teacher, hindsight relabeling and representation
  // learning: plain bi-level soft-Q.
  void make_basic() {
    use_graph = false;
    use_her = false;
    learn_repr = false;
  }
};

namespace detail {

using Field = std::variant<int RunConfig::*, std::int64_t RunConfig::*, double RunConfig::*, bool RunConfig::*,
                           std::string RunConfig::*>;

struct FieldSpec {
  const char* name;
  Field field;
  std::function<bool(const RunConfig&)> valid;
  const char* rule;
};

inline const std::vector<FieldSpec>& schema() {
  using C = RunConfig;
  static const std::vector<FieldSpec> s{
      {"env", &C::env, [](const C& c) { return !c.env.empty(); }, "non-empty"},
      {"max_steps", &C::max_steps, [](const C& c) { return c.max_steps >= 1; }, ">= 1"},
      {"goal_tolerance", &C::goal_tolerance, [](const C& c) { return c.goal_tolerance > 0; }, "> 0"},
      {"noise_dims", &C::noise_dims, [](const C& c) { return c.noise_dims >= 0; }, ">= 0"},
      {"total_steps", &C::total_steps, [](const C& c) { return c.total_steps >= 0; }, ">= 0"},
      {"eval_interval", &C::eval_interval, [](const C& c) { return c.eval_interval >= 1; }, ">= 1"},
      {"eval_episodes", &C::eval_episodes, [](const C& c) { return c.eval_episodes >= 0; }, ">= 0"},
      {"checkpoint_interval", &C::checkpoint_interval, [](const C& c) { return c.checkpoint_interval >= 0; }, ">= 0"},
      {"c", &C::c, [](const C& c) { return c.c >= 1; }, ">= 1"},
      {"gamma", &C::gamma, [](const C& c) { return c.gamma >= 0 && c.gamma < 1; }, "in [0, 1)"},
      {"alpha", &C::alpha, [](const C& c) { return c.alpha > 0; }, "> 0"},
      {"alpha_high", &C::alpha_high, [](const C& c) { return c.alpha_high > 0; }, "> 0"},
      {"delta_z_fraction", &C::delta_z_fraction, [](const C& c) { return c.delta_z_fraction > 0; }, "> 0"},
      {"latent_dim", &C::latent_dim, [](const C& c) { return c.latent_dim >= 1; }, ">= 1"},
      {"beta", &C::beta, [](const C& c) { return c.beta > 0; }, "> 0"},
      {"power", &C::power, [](const C& c) { return c.power >= 1; }, ">= 1"},
      {"epsilon", &C::epsilon, [](const C& c) { return c.epsilon > 0; }, "> 0"},
      {"stable_fraction", &C::stable_fraction,
       [](const C& c) { return c.stable_fraction >= 0 && c.stable_fraction <= 1; }, "in [0, 1]"},
      {"repr_batch", &C::repr_batch, [](const C& c) { return c.repr_batch >= 1; }, ">= 1"},
      {"repr_interval", &C::repr_interval, [](const C& c) { return c.repr_interval >= 1; }, ">= 1"},
      {"repr_steps", &C::repr_steps, [](const C& c) { return c.repr_steps >= 0; }, ">= 0"},
      {"triplet_capacity", &C::triplet_capacity, [](const C& c) { return c.triplet_capacity >= 0; }, ">= 0"},
      {"landmarks", &C::landmarks, [](const C& c) { return c.landmarks >= 1; }, ">= 1"},
      {"samples", &C::samples, [](const C& c) { return c.samples >= 1; }, ">= 1"},
      {"hash_bits", &C::hash_bits, [](const C& c) { return c.hash_bits >= 1 && c.hash_bits <= 64; }, "in [1, 64]"},
      {"novelty_mode", &C::novelty_mode,
       [](const C& c) { return c.novelty_mode == "exact" || c.novelty_mode == "incremental"; }, "exact | incremental"},
      {"mix_rule", &C::mix_rule, [](const C& c) { return c.mix_rule == "pseudocode" || c.mix_rule == "text"; },
       "pseudocode | text"},
      {"p_interval", &C::p_interval, [](const C& c) { return c.p_interval >= 1; }, ">= 1"},
      {"success_window", &C::success_window, [](const C& c) { return c.success_window >= 1; }, ">= 1"},
      {"p_init", &C::p_init, [](const C& c) { return c.p_init >= 0.5 && c.p_init <= 1; }, "in [0.5, 1]"},
      {"eval_policy", &C::eval_policy,
       [](const C& c) { return c.eval_policy == "student" || c.eval_policy == "teacher" || c.eval_policy == "mix"; },
       "student | teacher | mix"},
      {"hidden_units", &C::hidden_units, [](const C& c) { return c.hidden_units >= 1; }, ">= 1"},
      {"hidden_layers", &C::hidden_layers, [](const C& c) { return c.hidden_layers >= 0; }, ">= 0"},
      {"lr_repr", &C::lr_repr, [](const C& c) { return c.lr_repr > 0; }, "> 0"},
      {"lr_low", &C::lr_low, [](const C& c) { return c.lr_low > 0; }, "> 0"},
      {"lr_uvfa", &C::lr_uvfa, [](const C& c) { return c.lr_uvfa > 0; }, "> 0"},
      {"lr_high", &C::lr_high, [](const C& c) { return c.lr_high > 0; }, "> 0"},
      {"clip_norm", &C::clip_norm, [](const C& c) { return c.clip_norm >= 0; }, ">= 0"},
      {"tau", &C::tau, [](const C& c) { return c.tau > 0 && c.tau <= 1; }, "in (0, 1]"},
      {"batch_size", &C::batch_size, [](const C& c) { return c.batch_size >= 1; }, ">= 1"},
      {"high_batch_size", &C::high_batch_size, [](const C& c) { return c.high_batch_size >= 1; }, ">= 1"},
      {"updates_per_episode", &C::updates_per_episode, [](const C& c) { return c.updates_per_episode >= 0; }, ">= 0"},
      {"high_updates_per_decision", &C::high_updates_per_decision,
       [](const C& c) { return c.high_updates_per_decision >= 0; }, ">= 0"},
      {"episode_capacity", &C::episode_capacity, [](const C& c) { return c.episode_capacity >= 1; }, ">= 1"},
      {"use_graph", &C::use_graph, [](const C&) { return true; }, "bool"},
      {"use_her", &C::use_her, [](const C&) { return true; }, "bool"},
      {"learn_repr", &C::learn_repr, [](const C&) { return true; }, "bool"},
  };
  return s;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

}  // namespace detail

inline void RunConfig::validate() const {
  for (const auto& f : detail::schema())
    if (!f.valid(*this)) throw ConfigError(std::string("config key '") + f.name + "' must be " + f.rule);
}

inline std::string RunConfig::serialize() const {
  std::ostringstream os;
  for (const auto& f : detail::schema()) {
    os << f.name << " = ";
    std::visit(
        [&](auto member) {
          using T = std::decay_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, double>) {
            os << std::setprecision(17) << this->*member;
          } else if constexpr (std::is_same_v<T, bool>) {
            os << (this->*member ? "true" : "false");
          } else {
            os << this->*member;
          }
        },
        f.field);
    os << "\n";
  }
  return os.str();
}

inline RunConfig RunConfig::parse(std::istream& in) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    const detail::FieldSpec* spec = nullptr;
    for (const auto& f : detail::schema())
      if (key == f.name) spec = &f;
    if (!spec) throw ConfigError(where + "unknown key '" + key + "'");
    std::visit(
        [&](auto member) {
          using T = std::decay_t<decltype(cfg.*member)>;
          auto bad = [&] { throw ConfigError(where + "cannot parse value '" + value + "' for key '" + key + "'"); };
          try {
            std::size_t used = 0;
            if constexpr (std::is_same_v<T, std::string>) {
              cfg.*member = value;
              used = value.size();
            } else if constexpr (std::is_same_v<T, bool>) {
              if (value == "true" || value == "1") cfg.*member = true;
              else if (value == "false" || value == "0") cfg.*member = false;
              else bad();
              used = value.size();
            } else if constexpr (std::is_same_v<T, double>) {
              cfg.*member = std::stod(value, &used);
            } else if constexpr (std::is_same_v<T, int>) {
              cfg.*member = std::stoi(value, &used);
            } else {
              cfg.*member = std::stoll(value, &used);
            }
            if (used != value.size()) bad();
          } catch (const std::logic_error&) {
            bad();
          }
        },
        spec->field);
  }
  cfg.validate();
  return cfg;
}

}  // namespace hill
