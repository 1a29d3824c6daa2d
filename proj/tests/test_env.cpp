#include <gtest/gtest.h>

#include <sstream>

#include "hill/env.hpp"

using namespace hill;

TEST(Reset, EvalStartIsFixed) {
  MazeEnv env(umaze());
  const auto a = env.reset(1, ResetMode::Eval).start.position;
  const auto b = env.reset(99, ResetMode::Eval).start.position;
  EXPECT_EQ(a, b);
  // hardest start: the start cell farthest from the goal
  EXPECT_EQ(umaze().cell_of(a), (Cell{3, 1}));
}

TEST(Reset, TrainStartIsSeeded) {
  MazeEnv env(umaze());
  const auto a = env.reset(42, ResetMode::Train).start.position;
  const auto b = env.reset(42, ResetMode::Train).start.position;
  EXPECT_EQ(a, b);
  EXPECT_NE(a, env.reset(43, ResetMode::Train).start.position);
}

TEST(Reset, TrainStartsStayInStartRegion) {
  for (const auto& spec : {umaze(), four_rooms()}) {
    MazeEnv env(spec);
    const auto region = spec.train_start_cells();
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      const Vec2 p = env.reset(seed, ResetMode::Train).start.position;
      ASSERT_TRUE(spec.is_free(p));
      const Cell c = spec.cell_of(p);
      ASSERT_NE(std::find(region.begin(), region.end(), c), region.end());
    }
  }
}

TEST(Reset, FixedStartRegionWhenNotRandomized) {
  MazeSpec spec = umaze();
  spec.randomize_train_start = false;
  MazeEnv env(spec);
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    EXPECT_EQ(spec.cell_of(env.reset(seed, ResetMode::Train).start.position), (Cell{3, 1}));
}

TEST(Reset, EmptyStartRegionIsASpecError) {
  MazeSpec spec = umaze();
  spec.start_cells.clear();
  EXPECT_THROW(MazeEnv{spec}, SpecError);
}

TEST(Reset, GoalIsAFullObservation) {
  MazeEnv env(umaze());
  const auto r = env.reset(0, ResetMode::Train);
  EXPECT_EQ(r.goal.position, umaze().goal);
  EXPECT_EQ(r.goal.dim(), r.start.dim());
}

TEST(Step, AtGoalWithZeroActionSucceeds) {
  MazeEnv env(umaze());
  env.reset(0, ResetMode::Eval);
  Observation at_goal;
  at_goal.position = umaze().goal;
  env.set_state(at_goal);
  const auto r = env.step(Vec2(0.0, 0.0));
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_TRUE(r.success);
  EXPECT_TRUE(r.done);
}

TEST(Step, ActionIntoWallClampsAtBoundary) {
  const MazeSpec spec = umaze();
  MazeEnv env(spec);
  env.reset(0, ResetMode::Eval);
  Observation o;
  o.position = Vec2(1.5, 3.1);  // row 3, wall above in row 2
  env.set_state(o);
  const auto r = env.step(Vec2(0.0, -0.2));
  EXPECT_DOUBLE_EQ(r.observation.position.y(), 3.0);
  EXPECT_DOUBLE_EQ(r.observation.position.x(), 1.5);
  EXPECT_EQ(r.reward, -1.0);
  EXPECT_TRUE(spec.is_free(r.observation.position));
  // moving down into the bottom wall stops just inside the cell
  o.position = Vec2(1.5, 3.9);
  env.set_state(o);
  const auto d = env.step(Vec2(0.0, 0.2));
  EXPECT_LT(d.observation.position.y(), 4.0);
  EXPECT_GT(d.observation.position.y(), 3.999);
  EXPECT_TRUE(spec.is_free(d.observation.position));
}

TEST(Step, ActionIsClippedToMaxMagnitude) {
  MazeEnv env(umaze());
  env.reset(0, ResetMode::Eval);
  const Vec2 before = env.observation().position;
  const auto r = env.step(Vec2(5.0, 0.0));
  EXPECT_NEAR((r.observation.position - before).norm(), umaze().max_action, 1e-12);
}

TEST(Step, EpisodeEndsAfterTSteps) {
  MazeSpec spec = umaze();
  spec.max_steps = 25;
  MazeEnv env(spec);
  env.reset(0, ResetMode::Eval);
  StepResult r;
  for (int t = 0; t < 25; ++t) {
    ASSERT_FALSE(r.done);
    r = env.step(0);
  }
  EXPECT_TRUE(r.done);
  EXPECT_FALSE(r.success);
}

TEST(Step, RandomWalkNeverEntersWallsAndRewardsStaySparse) {
  for (const auto& spec : {umaze(), four_rooms()}) {
    MazeEnv env(spec);
    Rng rng(5);
    std::uint64_t episode = 0;
    env.reset(episode, ResetMode::Train);
    double ret = 0.0;
    for (int i = 0; i < 100000; ++i) {
      const auto r = env.step(static_cast<int>(uniform_index(rng, kNumActions)));
      ASSERT_TRUE(spec.is_free(r.observation.position)) << "step " << i;
      ASSERT_TRUE(r.reward == 0.0 || r.reward == -1.0);
      ASSERT_EQ(r.reward == 0.0, r.success);
      ret += r.reward;
      if (r.done) {
        ASSERT_GE(ret, -spec.max_steps);
        ASSERT_LE(ret, 0.0);
        ret = 0.0;
        env.reset(++episode, ResetMode::Train);
      }
    }
  }
}

TEST(Step, SameSeedAndActionsGiveIdenticalTrajectory) {
  MazeSpec spec = four_rooms();
  spec.noise_dims = 3;
  auto run = [&] {
    MazeEnv env(spec);
    env.reset(77, ResetMode::Train);
    std::vector<Eigen::VectorXd> trace;
    for (int t = 0; t < 300; ++t) trace.push_back(env.step((t * 7) % kNumActions).observation.to_vector());
    return trace;
  };
  EXPECT_EQ(run(), run());
}

TEST(Actions, SeventeenDiscreteActions) {
  EXPECT_EQ(discrete_action(0, 0.2), Vec2::Zero());
  for (int a = 1; a <= 8; ++a) EXPECT_NEAR(discrete_action(a, 0.2).norm(), 0.2, 1e-12);
  for (int a = 9; a < kNumActions; ++a) EXPECT_NEAR(discrete_action(a, 0.2).norm(), 0.1, 1e-12);
  EXPECT_THROW(discrete_action(kNumActions, 0.2), DimensionError);
}

TEST(Parse, GridWithHeader) {
  std::istringstream in(
      "goal_tolerance = 0.3\n"
      "max_steps = 50\n"
      "#####\n"
      "#S.G#\n"
      "#####\n");
  const MazeSpec spec = parse_maze(in, "corridor");
  EXPECT_EQ(spec.rows, 3);
  EXPECT_EQ(spec.cols, 5);
  EXPECT_EQ(spec.max_steps, 50);
  EXPECT_DOUBLE_EQ(spec.goal_tolerance, 0.3);
  EXPECT_EQ(spec.start_cells.size(), 1u);
  EXPECT_EQ(spec.goal, Vec2(3.5, 1.5));
}

TEST(Parse, ErrorsCarryLineNumbers) {
  std::istringstream ragged("#####\n#S.G#\n####\n");
  try {
    parse_maze(ragged, "x");
    FAIL() << "expected a spec error";
  } catch (const SpecError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  std::istringstream no_goal("###\n#S#\n###\n");
  EXPECT_THROW(parse_maze(no_goal, "x"), SpecError);
  std::istringstream bad_key("speed = 3\n###\n#S#\n#G#\n###\n");
  EXPECT_THROW(parse_maze(bad_key, "x"), SpecError);
}

TEST(Parse, BuiltinsValidate) {
  EXPECT_NO_THROW(umaze().validate());
  EXPECT_NO_THROW(four_rooms().validate());
  EXPECT_THROW(builtin_maze("nope"), SpecError);
}
