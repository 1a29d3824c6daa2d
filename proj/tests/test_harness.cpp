#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hill/harness.hpp"

using namespace hill;
namespace fs = std::filesystem;

namespace {

RunConfig small_config() {
  RunConfig cfg;
  cfg.max_steps = 40;
  cfg.c = 5;
  cfg.hidden_units = 16;
  cfg.hidden_layers = 1;
  cfg.samples = 30;
  cfg.landmarks = 5;
  cfg.batch_size = 16;
  cfg.high_batch_size = 8;
  cfg.updates_per_episode = 5;
  cfg.repr_batch = 16;
  cfg.repr_steps = 1;
  cfg.p_interval = 2;
  cfg.total_steps = 400;
  cfg.eval_interval = 200;
  cfg.eval_episodes = 3;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hill_test_" + name + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Json> read_jsonl(const fs::path& p) {
  std::vector<Json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(Json::parse(line));
  return out;
}

std::string checkpoint_bytes(const Agent& a) {
  std::ostringstream os;
  save_checkpoint(a, os);
  return os.str();
}

}  // namespace

TEST(Config, RoundTrip) {
  RunConfig cfg = small_config();
  cfg.env = "four_rooms";
  cfg.gamma = 0.987654321;
  cfg.use_her = false;
  cfg.novelty_mode = "incremental";
  const RunConfig back = RunConfig::parse_string(cfg.serialize());
  EXPECT_EQ(back, cfg);
  EXPECT_EQ(back.serialize(), cfg.serialize());
}

TEST(Config, CommentsAndBlankLines) {
  const RunConfig cfg = RunConfig::parse_string("# header\n\nc = 7  # interval\nuse_graph = false\n");
  EXPECT_EQ(cfg.c, 7);
  EXPECT_FALSE(cfg.use_graph);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(RunConfig::parse_string("colour = red\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("c = 5\nc = 6\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("c = five\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("c = 5.5\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("gamma = 1.0\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("use_her = maybe\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse_string("just text\n"), ConfigError);
  EXPECT_THROW(RunConfig::load("/nonexistent/x.cfg"), ConfigError);
}

TEST(Config, ShippedConfigsLoad) {
  const fs::path dir = fs::path(HILL_SOURCE_DIR) / "configs";
  const RunConfig hill = RunConfig::load((dir / "umaze.cfg").string());
  const RunConfig basic = RunConfig::load((dir / "umaze_basic.cfg").string());
  EXPECT_TRUE(hill.use_graph && hill.use_her && hill.learn_repr);
  EXPECT_FALSE(basic.use_graph || basic.use_her || basic.learn_repr);
  EXPECT_EQ(hill.eval_episodes, 10);
}

TEST(Train, ZeroStepsGivesEmptyLog) {
  RunConfig cfg = small_config();
  cfg.total_steps = 0;
  const fs::path dir = fresh_dir("zero");
  const auto r = train(cfg, 1, dir);
  EXPECT_EQ(r.steps, 0);
  EXPECT_EQ(fs::file_size(dir / "log.jsonl"), 0u);
  EXPECT_TRUE(fs::exists(dir / "checkpoint.bin"));
  EXPECT_EQ(RunConfig::load((dir / "config.cfg").string()), cfg);
  fs::remove_all(dir);
}

TEST(Train, LogRecordsAndEvalCadence) {
  RunConfig cfg = small_config();
  cfg.eval_episodes = 10;
  const fs::path dir = fresh_dir("log");
  const auto r = train(cfg, 2, dir);
  EXPECT_EQ(r.steps, cfg.total_steps);
  std::int64_t last_steps = 0, episodes = 0;
  int evals = 0;
  for (const Json& j : read_jsonl(dir / "log.jsonl")) {
    if (j["type"] == "episode") {
      ++episodes;
      EXPECT_EQ(j["episode"].get<std::int64_t>(), episodes);
      EXPECT_GT(j["steps"].get<std::int64_t>(), last_steps);
      last_steps = j["steps"];
      for (const char* key : {"success", "return", "length", "contrastive_loss", "stability_loss", "teacher_fraction",
                              "p", "graph_builds"})
        EXPECT_TRUE(j.contains(key)) << key;
    } else {
      ++evals;
      ASSERT_EQ(j["type"], "eval");
      EXPECT_EQ(j["episodes"], 10);
      ASSERT_EQ(j["successes"].size(), 10u);
      double wins = 0;
      for (const auto& s : j["successes"]) wins += s.get<bool>() ? 1 : 0;
      EXPECT_DOUBLE_EQ(j["success_rate"].get<double>(), wins / 10.0);
    }
  }
  EXPECT_EQ(last_steps, cfg.total_steps);
  EXPECT_EQ(episodes, r.episodes);
  EXPECT_EQ(evals, 2);
  EXPECT_EQ(read_jsonl(dir / "timing.jsonl").size(), static_cast<std::size_t>(episodes));
  fs::remove_all(dir);
}

TEST(Train, RepeatRunIsByteIdentical) {
  const RunConfig cfg = small_config();
  const fs::path a = fresh_dir("rep_a"), b = fresh_dir("rep_b");
  train(cfg, 3, a);
  train(cfg, 3, b);
  EXPECT_EQ(slurp(a / "log.jsonl"), slurp(b / "log.jsonl"));
  EXPECT_EQ(slurp(a / "checkpoint.bin"), slurp(b / "checkpoint.bin"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Train, ResumeContinuesTheSameRun) {
  const RunConfig cfg = small_config();
  const fs::path straight = fresh_dir("straight"), split = fresh_dir("split");
  train(cfg, 4, straight);
  TrainOptions stop_first;
  stop_first.stop_when = [](const EvalPoint&) { return true; };
  const auto partial = train(cfg, 4, split, stop_first);
  EXPECT_TRUE(partial.stopped_early);
  EXPECT_LT(partial.steps, cfg.total_steps);
  TrainOptions resume;
  resume.resume = true;
  const auto rest = train(cfg, 4, split, resume);
  EXPECT_EQ(rest.steps, cfg.total_steps);
  EXPECT_EQ(slurp(split / "log.jsonl"), slurp(straight / "log.jsonl"));
  EXPECT_EQ(slurp(split / "checkpoint.bin"), slurp(straight / "checkpoint.bin"));

  RunConfig other = cfg;
  other.c = 4;
  EXPECT_THROW(train(other, 4, split, resume), ConfigError);
  EXPECT_THROW(train(cfg, 5, split, resume), ConfigError);
  fs::remove_all(straight);
  fs::remove_all(split);
}

TEST(Train, InvalidConfigIsRejected) {
  RunConfig cfg = small_config();
  cfg.c = 0;
  EXPECT_THROW(train(cfg, 1, fresh_dir("bad")), ConfigError);
}

TEST(Eval, ZeroEpisodes) {
  Agent a(small_config(), 5);
  const auto r = evaluate(a, 0, 1);
  EXPECT_EQ(r.success_rate, 0.0);
  EXPECT_TRUE(r.episodes.empty());
}

TEST(Eval, UntrainedAgentNeverReachesGoal) {
  RunConfig cfg;  // default umaze, T = 200
  Agent a(cfg, 6);
  const auto r = evaluate(a, 10, 1);
  EXPECT_EQ(r.episodes.size(), 10u);
  EXPECT_EQ(r.success_rate, 0.0);
}

TEST(Eval, RepeatedEvalOfCheckpointIsIdentical) {
  Agent a(small_config(), 7);
  for (int e = 0; e < 4; ++e) a.train_episode();
  std::istringstream in(checkpoint_bytes(a));
  auto b = load_checkpoint(in);
  const auto r1 = evaluate(*b, 5, 11);
  const auto r2 = evaluate(*b, 5, 11);
  EXPECT_EQ(r1.to_json().dump(), r2.to_json().dump());
  EXPECT_EQ(evaluate(a, 5, 11).to_json().dump(), r1.to_json().dump());
}

TEST(Checkpoint, FileRoundTrip) {
  Agent a(small_config(), 8);
  for (int e = 0; e < 3; ++e) a.train_episode();
  const fs::path dir = fresh_dir("ckpt");
  fs::create_directories(dir);
  save_checkpoint(a, dir / "c.bin");
  EXPECT_FALSE(fs::exists(dir / "c.bin.tmp"));
  const auto b = load_checkpoint(dir / "c.bin");
  EXPECT_EQ(checkpoint_bytes(*b), checkpoint_bytes(a));
  EXPECT_EQ(b->seed(), 8u);
  EXPECT_EQ(b->config(), a.config());
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  Agent a(small_config(), 9);
  a.train_episode();
  const std::string good = checkpoint_bytes(a);

  std::string bad_magic = good;
  bad_magic[8] = 'X';
  std::istringstream m(bad_magic);
  EXPECT_THROW(load_checkpoint(m), CheckpointError);

  std::string bad_version = good;
  bad_version[8 + sizeof(std::uint64_t)] = 7;  // first byte after the magic string
  std::istringstream v(bad_version);
  try {
    load_checkpoint(v);
    FAIL() << "expected a checkpoint error";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }

  for (std::size_t cut : {std::size_t{3}, good.size() / 2, good.size() - 2}) {
    std::istringstream t(good.substr(0, cut));
    EXPECT_THROW(load_checkpoint(t), CheckpointError) << "cut at " << cut;
  }
  EXPECT_THROW(load_checkpoint(fs::path("/nonexistent/ckpt.bin")), CheckpointError);
}

TEST(Dump, LatentRowsMatchRequestedStates) {
  Agent a(small_config(), 10);
  a.train_episode();
  std::istringstream list("x,y\n1.5,3.5\n3.5,3.5\n3.5,1.5\n1.5,1.5,0.1,0\n");
  const auto states = read_state_list(list, 0);
  ASSERT_EQ(states.size(), 4u);
  std::ostringstream os;
  dump(a, "latent", os, states);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,x,y,z_1,z_2");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);

  std::istringstream bad("1.0,2.0\n1.0,abc\n");
  EXPECT_THROW(read_state_list(bad, 0), DimensionError);
}

TEST(Dump, LatentDefaultsToNewestEpisode) {
  Agent a(small_config(), 11);
  a.train_episode();
  std::ostringstream os;
  dump(a, "latent", os);
  const std::string text = os.str();
  const auto lines = std::count(text.begin(), text.end(), '\n');
  EXPECT_EQ(lines, 1 + a.buffer()[0].length() + 1);
}

TEST(Dump, GraphHasCompleteEdgeSet) {
  RunConfig cfg = small_config();
  Agent a(cfg, 12);
  a.train_episode();
  std::ostringstream os;
  dump(a, "graph", os);
  std::istringstream in(os.str());
  std::string line;
  long nodes = -1, edges = -1, edge_rows = 0;
  bool in_edges = false;
  while (std::getline(in, line)) {
    if (line.rfind("nodes ", 0) == 0) nodes = std::stol(line.substr(6));
    else if (line.rfind("edges ", 0) == 0) {
      edges = std::stol(line.substr(6));
      in_edges = true;
    } else if (in_edges && line[0] != '#') ++edge_rows;
  }
  ASSERT_GT(nodes, 1);
  EXPECT_EQ(edges, nodes * (nodes - 1));
  EXPECT_EQ(edge_rows, edges);
}

TEST(Dump, CountsTotalMatchesRecordedDecisions) {
  Agent a(small_config(), 13);
  for (int e = 0; e < 4; ++e) a.train_episode();
  std::ostringstream os;
  dump(a, "counts", os);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "bucket,count,occupancy");
  double total = 0.0;
  while (std::getline(in, line)) {
    const auto a1 = line.find(','), a2 = line.find(',', a1 + 1);
    total += std::stod(line.substr(a1 + 1, a2 - a1 - 1));
  }
  double expected = 0.0;
  for (std::size_t e = 0; e < a.buffer().size(); ++e)
    expected += static_cast<double>(decision_indices(a.buffer()[e].length(), a.config().c).size());
  EXPECT_EQ(total, expected);
}

TEST(Dump, UnknownTargetIsAUsageError) {
  Agent a(small_config(), 14);
  std::ostringstream os;
  EXPECT_THROW(dump(a, "weights", os), ConfigError);
}

TEST(Overrides, LogLevelFromEnvironment) {
  const log::Level keep = log::level();
  ::setenv("HILL_LOG_LEVEL", "debug", 1);
  apply_log_level_override();
  EXPECT_EQ(log::level(), log::Level::Debug);
  ::setenv("HILL_LOG_LEVEL", "loud", 1);
  EXPECT_THROW(apply_log_level_override(), ConfigError);
  ::unsetenv("HILL_LOG_LEVEL");
  log::set_level(keep);
  ::setenv("HILL_OUT_DIR", "/tmp/elsewhere", 1);
  EXPECT_EQ(out_dir_override("runs/x"), fs::path("/tmp/elsewhere"));
  ::unsetenv("HILL_OUT_DIR");
  EXPECT_EQ(out_dir_override("runs/x"), fs::path("runs/x"));
}
