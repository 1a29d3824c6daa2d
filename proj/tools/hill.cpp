// hill: train / eval / dump front end.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "hill/harness.hpp"

namespace {

int run_train(const std::string& config_path, std::uint64_t seed, const std::string& out, bool resume) {
  const hill::RunConfig cfg = hill::RunConfig::load(config_path);
  const auto dir = hill::out_dir_override(out);
  hill::TrainOptions opts;
  opts.resume = resume;
  const auto r = hill::train(cfg, seed, dir, opts);
  double last = 0.0;
  if (!r.evals.empty()) last = r.evals.back().success_rate;
  std::cout << hill::Json{{"out", dir.string()}, {"steps", r.steps}, {"episodes", r.episodes},
                          {"evals", static_cast<int>(r.evals.size())}, {"last_eval_success", last}}
                   .dump()
            << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, int episodes, std::uint64_t seed, const std::string& out) {
  auto agent = hill::load_checkpoint(checkpoint);
  const auto r = hill::evaluate(*agent, episodes, seed);
  hill::Json j = r.to_json();
  j["checkpoint"] = checkpoint;
  j["seed"] = seed;
  const std::string text = j.dump();
  std::cout << text << "\n";
  const std::string path = out.empty() ? checkpoint + ".eval.json" : out;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text << "\n";
  return 0;
}

int run_dump(const std::string& checkpoint, const std::string& what, const std::string& out,
             const std::string& states_path) {
  if (what != "latent" && what != "graph" && what != "counts")
    throw CLI::ValidationError("--what", "must be one of latent, graph, counts (got '" + what + "')");
  auto agent = hill::load_checkpoint(checkpoint);
  std::optional<std::vector<hill::Observation>> states;
  if (!states_path.empty()) {
    std::ifstream in(states_path);
    if (!in) throw std::runtime_error("cannot open state list " + states_path);
    states = hill::read_state_list(in, agent->config().noise_dims);
  }
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + out);
  hill::dump(*agent, what, f, states);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HILL: hierarchical RL with latent landmark graphs"};
  app.require_subcommand(1);

  std::string config_path, out, checkpoint, what, states_path, eval_out;
  std::uint64_t seed = 0;
  int episodes = 10;
  bool resume = false;

  auto* train = app.add_subcommand("train", "train an agent");
  train->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "root seed")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_flag("--resume", resume, "continue from OUT/checkpoint.bin when it exists");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint from the hardest start");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", episodes, "evaluation episodes")->required()->check(CLI::NonNegativeNumber);
  eval->add_option("--seed", seed, "evaluation seed")->required();
  eval->add_option("--out", eval_out, "summary file (default CHECKPOINT.eval.json)");

  auto* dump = app.add_subcommand("dump", "export latent trajectories, the last graph or counts");
  dump->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  dump->add_option("--what", what, "latent | graph | counts")->required();
  dump->add_option("--out", out, "output file")->required();
  dump->add_option("--states", states_path, "CSV of x,y[,vx,vy,noise..] rows for latent dumps")
      ->check(CLI::ExistingFile);

  try {
    hill::apply_log_level_override();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train(config_path, seed, out, resume);
    if (*eval) return run_eval(checkpoint, episodes, seed, eval_out);
    if (*dump) return run_dump(checkpoint, what, out, states_path);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const hill::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const hill::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
