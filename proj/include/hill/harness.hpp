#pragma once

// Run orchestration: training loop with JSONL logs, evaluation, checkpoint
// files and plot-ready exports.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hill/agent.hpp"
#include "hill/config.hpp"
#include "hill/errors.hpp"
#include "hill/log.hpp"
#include "hill/serialize.hpp"

namespace hill {

using Json = nlohmann::json;

inline constexpr char kCheckpointMagic[] = "HILLCKPT";
inline constexpr char kCheckpointEnd[] = "HILLEND";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct EpisodeLogRecord {
  std::int64_t episode = 0;
  std::int64_t steps = 0;  // env steps so far, this episode included
  bool success = false;
  double ret = 0.0;
  int length = 0;
  double contrastive_loss = 0.0;
  double stability_loss = 0.0;
  double teacher_fraction = 0.0;
  double p = 0.5;
  std::int64_t graph_builds = 0;  // cumulative

  Json to_json() const {
    return Json{{"type", "episode"},
                {"episode", episode},
                {"steps", steps},
                {"success", success},
                {"return", ret},
                {"length", length},
                {"contrastive_loss", contrastive_loss},
                {"stability_loss", stability_loss},
                {"teacher_fraction", teacher_fraction},
                {"p", p},
                {"graph_builds", graph_builds}};
  }
};

struct EvalResult {
  double success_rate = 0.0;
  std::vector<EpisodeSummary> episodes;

  Json to_json() const {
    Json eps = Json::array();
    for (const auto& e : episodes) eps.push_back(Json{{"success", e.success}, {"return", e.ret}, {"length", e.length}});
    return Json{{"success_rate", success_rate}, {"episodes", eps}};
  }
};

struct EvalPoint {
  std::int64_t steps = 0;
  std::int64_t episode = 0;
  double success_rate = 0.0;
};

// Greedy rollouts from the fixed hardest start. The seed only feeds the
// sampling done while choosing subgoals.
inline EvalResult evaluate(Agent& agent, int episodes, std::uint64_t seed) {
  EvalResult r;
  if (episodes <= 0) return r;
  Rng rng = substream(seed, "eval");
  int wins = 0;
  for (int i = 0; i < episodes; ++i) {
    r.episodes.push_back(agent.eval_episode(rng));
    wins += r.episodes.back().success ? 1 : 0;
  }
  r.success_rate = static_cast<double>(wins) / episodes;
  return r;
}

// Checkpoint file: magic, version, config text, seed, agent state, end tag.
inline void save_checkpoint(const Agent& agent, std::ostream& os) {
  io::write_string(os, kCheckpointMagic);
  io::write<std::uint32_t>(os, kCheckpointVersion);
  io::write_string(os, agent.config().serialize());
  io::write<std::uint64_t>(os, agent.seed());
  agent.save(os);
  io::write_string(os, kCheckpointEnd);
}

inline void save_checkpoint(const Agent& agent, const std::filesystem::path& path) {
  // write then rename so a crash never leaves a half-written checkpoint
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write checkpoint " + tmp);
    save_checkpoint(agent, os);
    if (!os) throw CheckpointError("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::unique_ptr<Agent> load_checkpoint(std::istream& is) {
  try {
    if (io::read_string(is) != kCheckpointMagic) throw CheckpointError("not a checkpoint file (bad magic)");
    const auto version = io::read<std::uint32_t>(is);
    if (version != kCheckpointVersion)
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    const RunConfig cfg = RunConfig::parse_string(io::read_string(is));
    const auto seed = io::read<std::uint64_t>(is);
    auto agent = std::make_unique<Agent>(cfg, seed);
    agent->load_state(is);
    if (io::read_string(is) != kCheckpointEnd) throw CheckpointError("checkpoint is truncated or corrupt");
    return agent;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
}

inline std::unique_ptr<Agent> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  return load_checkpoint(is);
}

struct TrainOptions {
  bool resume = false;  // continue from out_dir/checkpoint.bin when present
  // Called after every evaluation; returning true ends the run early.
  std::function<bool(const EvalPoint&)> stop_when;
};

struct TrainResult {
  std::int64_t steps = 0;
  std::int64_t episodes = 0;
  std::vector<EvalPoint> evals;
  bool stopped_early = false;
};

namespace detail {

// Keeps the log lines written up to (and including) `episode`.
inline void truncate_log(const std::filesystem::path& path, std::int64_t episode) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    if (j.at("episode").get<std::int64_t>() <= episode) kept += line + "\n";
  }
  in.close();
  std::ofstream(path, std::ios::trunc) << kept;
}

inline std::vector<EvalPoint> read_evals(const std::filesystem::path& log) {
  std::vector<EvalPoint> out;
  std::ifstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    if (j.at("type") == "eval")
      out.push_back({j.at("steps").get<std::int64_t>(), j.at("episode").get<std::int64_t>(),
                     j.at("success_rate").get<double>()});
  }
  return out;
}

}  // namespace detail

// Trains until config.total_steps env steps. Writes out_dir/log.jsonl (one
// record per episode plus eval records), out_dir/timing.jsonl (wall-clock
// per episode, kept apart so the main log is reproducible byte for byte),
// out_dir/config.cfg and out_dir/checkpoint.bin.
inline TrainResult train(const RunConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir,
                         const TrainOptions& opts = {}) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const auto log_path = out_dir / "log.jsonl";
  const auto timing_path = out_dir / "timing.jsonl";
  const auto ckpt_path = out_dir / "checkpoint.bin";

  std::unique_ptr<Agent> agent;
  TrainResult result;
  if (opts.resume && std::filesystem::exists(ckpt_path)) {
    agent = load_checkpoint(ckpt_path);
    if (!(agent->config() == cfg) || agent->seed() != seed)
      throw ConfigError("checkpoint in " + out_dir.string() + " was written with a different config or seed");
    detail::truncate_log(log_path, agent->episodes());
    detail::truncate_log(timing_path, agent->episodes());
    result.evals = detail::read_evals(log_path);
    log::info("resuming at episode " + std::to_string(agent->episodes()) + ", step " +
              std::to_string(agent->env_steps()));
  } else {
    agent = std::make_unique<Agent>(cfg, seed);
    std::ofstream(log_path, std::ios::trunc);
    std::ofstream(timing_path, std::ios::trunc);
  }
  std::ofstream(out_dir / "config.cfg", std::ios::trunc) << cfg.serialize();

  std::ofstream log(log_path, std::ios::app);
  std::ofstream timing(timing_path, std::ios::app);
  if (!log || !timing) throw std::runtime_error("cannot write logs in " + out_dir.string());

  auto run_eval = [&]() {
    const std::int64_t steps = agent->env_steps();
    const EvalResult r = evaluate(*agent, cfg.eval_episodes, seed + static_cast<std::uint64_t>(steps));
    EvalPoint pt{steps, agent->episodes(), r.success_rate};
    result.evals.push_back(pt);
    Json j{{"type", "eval"}, {"episode", pt.episode}, {"steps", steps}, {"success_rate", r.success_rate},
           {"episodes", static_cast<int>(r.episodes.size())}};
    Json succ = Json::array();
    for (const auto& e : r.episodes) succ.push_back(e.success);
    j["successes"] = succ;
    log << j.dump() << "\n" << std::flush;
    log::info("eval at step " + std::to_string(steps) + ": success " + std::to_string(r.success_rate));
    return opts.stop_when && opts.stop_when(pt);
  };

  std::int64_t next_eval = (agent->env_steps() / cfg.eval_interval + 1) * cfg.eval_interval;
  while (agent->env_steps() < cfg.total_steps) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto budget = static_cast<int>(std::min<std::int64_t>(cfg.total_steps - agent->env_steps(), cfg.max_steps));
    const EpisodeSummary s = agent->train_episode(budget);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    EpisodeLogRecord rec;
    rec.episode = agent->episodes();
    rec.steps = agent->env_steps();
    rec.success = s.success;
    rec.ret = s.ret;
    rec.length = s.length;
    rec.contrastive_loss = s.contrastive_loss;
    rec.stability_loss = s.stability_loss;
    const int decisions = s.teacher_decisions + s.student_decisions;
    rec.teacher_fraction = decisions > 0 ? static_cast<double>(s.teacher_decisions) / decisions : 0.0;
    rec.p = s.p;
    rec.graph_builds = agent->graph_builds();
    log << rec.to_json().dump() << "\n";
    timing << Json{{"episode", rec.episode}, {"ms", ms}}.dump() << "\n";

    bool stop = false;
    if (agent->env_steps() >= next_eval) {
      stop = run_eval();
      next_eval = (agent->env_steps() / cfg.eval_interval + 1) * cfg.eval_interval;
    }
    if (cfg.checkpoint_interval > 0 && agent->episodes() % cfg.checkpoint_interval == 0) {
      log.flush();
      timing.flush();
      save_checkpoint(*agent, ckpt_path);
    }
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }
  log.flush();
  timing.flush();
  save_checkpoint(*agent, ckpt_path);
  result.steps = agent->env_steps();
  result.episodes = agent->episodes();
  return result;
}

// ---- exports ----

// Reads `x,y[,vx,vy,noise...]` rows (a header line is skipped if present).
// Missing trailing fields are zero.
inline std::vector<Observation> read_state_list(std::istream& in, int noise_dims) {
  std::vector<Observation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (out.empty() && lineno == 1) continue;  // header
      throw DimensionError("state list line " + std::to_string(lineno) + ": non-numeric field");
    }
    if (v.size() < 2) throw DimensionError("state list line " + std::to_string(lineno) + ": need at least x,y");
    Observation o;
    o.position = Vec2(v[0], v[1]);
    if (v.size() >= 4) o.velocity = Vec2(v[2], v[3]);
    o.noise = Eigen::VectorXd::Zero(noise_dims);
    for (int k = 0; k < noise_dims && 4 + k < static_cast<int>(v.size()); ++k) o.noise(k) = v[4 + static_cast<std::size_t>(k)];
    out.push_back(o);
  }
  return out;
}

// CSV rows `step,x,y,z_1..z_d`: the given states, or the newest stored
// episode when none are given.
inline void dump_latent(const Agent& agent, std::ostream& os, const std::optional<std::vector<Observation>>& states) {
  const int d = agent.config().latent_dim;
  os.precision(17);
  os << "step,x,y";
  for (int k = 1; k <= d; ++k) os << ",z_" << k;
  os << "\n";
  Matrix rows;
  if (states) {
    rows.resize(static_cast<Eigen::Index>(states->size()), agent.env().goal_observation().dim());
    for (std::size_t i = 0; i < states->size(); ++i) rows.row(static_cast<Eigen::Index>(i)) = (*states)[i].to_vector().transpose();
  } else if (!agent.buffer().empty()) {
    rows = agent.buffer()[agent.buffer().size() - 1].states;
  }
  if (rows.rows() == 0) return;
  const Matrix z = agent.phi().encode(rows);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    os << i << ',' << rows(i, 0) << ',' << rows(i, 1);
    for (Eigen::Index k = 0; k < z.cols(); ++k) os << ',' << z(i, k);
    os << "\n";
  }
}

// The last graph built while training; if the teacher never ran, one is
// built from the evaluation start.
inline void dump_graph(Agent& agent, std::ostream& os) {
  if (agent.last_graph()) {
    write_graph(os, *agent.last_graph());
    return;
  }
  if (agent.buffer().empty()) throw StateError("checkpoint has no stored episodes; no graph can be built");
  Rng rng = substream(agent.seed(), "dump.graph");
  const Vector start = agent.env().eval_start_observation().to_vector();
  write_graph(os, agent.build_graph_for(start, rng));
}

// CSV rows `bucket,count,occupancy`; counts sum to the recorded decision states.
inline void dump_counts(const Agent& agent, std::ostream& os) {
  os.precision(17);
  os << "bucket,count,occupancy\n";
  for (const auto& [key, count] : agent.table().counts()) {
    os << key << ',' << count << ',' << agent.table().occupancy(key).value_or(0.0) << "\n";
  }
}

inline void dump(Agent& agent, const std::string& what, std::ostream& os,
                 const std::optional<std::vector<Observation>>& states = std::nullopt) {
  if (what == "latent") dump_latent(agent, os, states);
  else if (what == "graph") dump_graph(agent, os);
  else if (what == "counts") dump_counts(agent, os);
  else throw ConfigError("unknown dump target '" + what + "' (latent | graph | counts)");
}

// Environment overrides: HILL_OUT_DIR replaces the output directory,
// HILL_LOG_LEVEL sets quiet | warn | info | debug.
inline std::filesystem::path out_dir_override(const std::filesystem::path& given) {
  const char* env = std::getenv("HILL_OUT_DIR");
  return env && *env ? std::filesystem::path(env) : given;
}

inline void apply_log_level_override() {
  const char* env = std::getenv("HILL_LOG_LEVEL");
  if (env && *env) log::set_level(log::parse_level(env));
}

}  // namespace hill
