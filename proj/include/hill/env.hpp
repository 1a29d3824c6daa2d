#pragma once

// Deterministic 2D point-mass mazes with sparse rewards.
//
// World coordinates: x grows with the column index, y with the row index;
// cell (r, c) covers [c*s, (c+1)*s) x [r*s, (r+1)*s) for cell size s.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hill/errors.hpp"
#include "hill/rng.hpp"

namespace hill {

using Vec2 = Eigen::Vector2d;

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct MazeSpec {
  std::string name = "custom";
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> walls;  // row-major, 1 = wall
  double cell_size = 1.0;
  std::vector<Cell> start_cells;
  Vec2 goal = Vec2::Zero();
  double goal_tolerance = 0.5;  // δ_g, length units
  double max_action = 0.2;      // length per step
  int max_steps = 200;          // T
  bool randomize_train_start = true;
  int noise_dims = 0;

  bool in_bounds(int r, int c) const { return r >= 0 && c >= 0 && r < rows && c < cols; }
  bool is_wall(int r, int c) const { return !in_bounds(r, c) || walls[static_cast<std::size_t>(r * cols + c)] != 0; }

  Cell cell_of(const Vec2& p) const {
    return {static_cast<int>(std::floor(p.y() / cell_size)), static_cast<int>(std::floor(p.x() / cell_size))};
  }
  bool is_free(const Vec2& p) const {
    const Cell c = cell_of(p);
    return !is_wall(c.row, c.col);
  }
  Vec2 cell_center(const Cell& c) const { return {(c.col + 0.5) * cell_size, (c.row + 0.5) * cell_size}; }

  std::vector<Cell> free_cells() const {
    std::vector<Cell> out;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        if (!is_wall(r, c)) out.push_back({r, c});
    return out;
  }

  // Cells a training episode may start in.
  std::vector<Cell> train_start_cells() const {
    if (!randomize_train_start) return start_cells;
    const Cell goal_cell = cell_of(goal);
    std::vector<Cell> out;
    for (const Cell& c : free_cells())
      if (!(c == goal_cell)) out.push_back(c);
    return out;
  }

  void validate() const {
    if (rows <= 0 || cols <= 0 || walls.size() != static_cast<std::size_t>(rows * cols))
      throw SpecError("maze grid is empty or inconsistent");
    if (!(cell_size > 0.0)) throw SpecError("cell size must be positive");
    if (!(goal_tolerance > 0.0)) throw SpecError("goal tolerance must be positive");
    if (max_steps < 1) throw SpecError("max episode steps must be at least 1");
    if (!(max_action > 0.0) || max_action >= cell_size) throw SpecError("max action must lie in (0, cell size)");
    if (noise_dims < 0) throw SpecError("noise dims must be non-negative");
    if (start_cells.empty()) throw SpecError("start region is empty");
    for (const Cell& c : start_cells)
      if (is_wall(c.row, c.col)) throw SpecError("start cell lies in a wall");
    if (!is_free(goal)) throw SpecError("goal lies in a wall");
  }
};

struct Observation {
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
  Eigen::VectorXd noise;  // optional auxiliary dims

  int dim() const { return 4 + static_cast<int>(noise.size()); }

  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd v(dim());
    v << position, velocity, noise;
    return v;
  }
};

struct StepResult {
  Observation observation;
  double reward = -1.0;
  bool done = false;
  bool success = false;
};

enum class ResetMode { Train, Eval };

struct ResetResult {
  Observation start;
  Observation goal;
};

// Discrete action set: no-op, then 8 compass directions at full and at half
// magnitude.
inline constexpr int kNumActions = 17;

inline Vec2 discrete_action(int index, double max_action) {
  if (index < 0 || index >= kNumActions) throw DimensionError("discrete action index out of range");
  if (index == 0) return Vec2::Zero();
  const int k = (index - 1) % 8;
  const double magnitude = index <= 8 ? max_action : 0.5 * max_action;
  const double angle = k * 3.14159265358979323846 / 4.0;
  return {magnitude * std::cos(angle), magnitude * std::sin(angle)};
}

// Breadth-first grid distance from `from` to every cell; -1 for unreachable.
inline std::vector<int> grid_distances(const MazeSpec& spec, const Cell& from) {
  std::vector<int> dist(static_cast<std::size_t>(spec.rows * spec.cols), -1);
  if (spec.is_wall(from.row, from.col)) return dist;
  std::deque<Cell> queue{from};
  dist[static_cast<std::size_t>(from.row * spec.cols + from.col)] = 0;
  constexpr std::array<std::array<int, 2>, 4> kSteps{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    const int d = dist[static_cast<std::size_t>(c.row * spec.cols + c.col)];
    for (const auto& s : kSteps) {
      const Cell n{c.row + s[0], c.col + s[1]};
      if (spec.is_wall(n.row, n.col)) continue;
      auto& nd = dist[static_cast<std::size_t>(n.row * spec.cols + n.col)];
      if (nd < 0) {
        nd = d + 1;
        queue.push_back(n);
      }
    }
  }
  return dist;
}

// The fixed evaluation start: centre of the start cell farthest (in grid
// steps) from the goal; ties go to the first cell listed.
inline Vec2 hardest_start(const MazeSpec& spec) {
  if (spec.start_cells.empty()) throw SpecError("start region is empty");
  const auto dist = grid_distances(spec, spec.cell_of(spec.goal));
  const Cell* best = &spec.start_cells.front();
  int best_d = std::numeric_limits<int>::min();
  for (const Cell& c : spec.start_cells) {
    const int d = dist[static_cast<std::size_t>(c.row * spec.cols + c.col)];
    if (d > best_d) {
      best_d = d;
      best = &c;
    }
  }
  return spec.cell_center(*best);
}

// Moves `from` by `delta`, one axis at a time; a move that would enter a wall
// cell stops just short of the shared boundary.
inline Vec2 integrate_position(const MazeSpec& spec, const Vec2& from, const Vec2& delta) {
  constexpr double kMargin = 1e-9;
  Vec2 p = from;
  for (int axis = 0; axis < 2; ++axis) {
    Vec2 q = p;
    q[axis] += delta[axis];
    if (!spec.is_free(q)) {
      const Cell c = spec.cell_of(p);
      const double lo = (axis == 0 ? c.col : c.row) * spec.cell_size;
      const double hi = lo + spec.cell_size;
      q[axis] = delta[axis] > 0.0 ? hi - kMargin * spec.cell_size : lo;
    }
    p = q;
  }
  return p;
}

class MazeEnv {
 public:
  explicit MazeEnv(MazeSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  const MazeSpec& spec() const { return spec_; }
  int steps_taken() const { return t_; }
  const Observation& observation() const { return obs_; }

  Observation goal_observation() const {
    Observation g;
    g.position = spec_.goal;
    g.noise = Eigen::VectorXd::Zero(spec_.noise_dims);
    return g;
  }

  Observation eval_start_observation() const {
    Observation o;
    o.position = hardest_start(spec_);
    o.noise = Eigen::VectorXd::Zero(spec_.noise_dims);
    return o;
  }

  ResetResult reset(std::uint64_t seed, ResetMode mode) {
    noise_rng_ = substream(seed, "env.noise");
    t_ = 0;
    obs_ = Observation{};
    if (mode == ResetMode::Eval) {
      obs_.position = hardest_start(spec_);
    } else {
      const auto cells = spec_.train_start_cells();
      if (cells.empty()) throw SpecError("start region is empty");
      Rng rng = substream(seed, "env.start");
      const Cell c = cells[uniform_index(rng, cells.size())];
      const double s = spec_.cell_size;
      obs_.position = {(c.col + uniform(rng, 0.05, 0.95)) * s, (c.row + uniform(rng, 0.05, 0.95)) * s};
    }
    obs_.noise = sample_noise();
    return {obs_, goal_observation()};
  }

  // Places the agent at an arbitrary free observation with `t` steps elapsed.
  void set_state(const Observation& obs, int t = 0) {
    if (!spec_.is_free(obs.position)) throw SpecError("observation lies in a wall");
    obs_ = obs;
    t_ = t;
  }

  StepResult step(const Vec2& action) {
    Vec2 a = action;
    const double norm = a.norm();
    if (norm > spec_.max_action) a *= spec_.max_action / norm;
    const Vec2 next = integrate_position(spec_, obs_.position, a);
    obs_.velocity = next - obs_.position;
    obs_.position = next;
    obs_.noise = sample_noise();
    ++t_;
    StepResult out;
    out.observation = obs_;
    out.success = (obs_.position - spec_.goal).norm() <= spec_.goal_tolerance;
    out.reward = out.success ? 0.0 : -1.0;
    out.done = out.success || t_ >= spec_.max_steps;
    return out;
  }

  StepResult step(int action_index) { return step(discrete_action(action_index, spec_.max_action)); }

 private:
  Eigen::VectorXd sample_noise() {
    Eigen::VectorXd n(spec_.noise_dims);
    for (int i = 0; i < spec_.noise_dims; ++i) n(i) = normal01(noise_rng_);
    return n;
  }

  MazeSpec spec_;
  Observation obs_;
  Rng noise_rng_;
  int t_ = 0;
};

// Parses a maze file: `key = value` header lines, then grid rows using
// `#` wall, `.` free, `S` start, `G` goal. Blank lines are ignored.
inline MazeSpec parse_maze(std::istream& in, const std::string& name = "custom") {
  MazeSpec spec;
  spec.name = name;
  std::map<std::string, std::string> header;
  std::vector<std::string> grid;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq != std::string::npos) {
      if (!grid.empty()) throw SpecError("line " + std::to_string(lineno) + ": header line after grid");
      header[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
      continue;
    }
    for (char ch : line)
      if (ch != '#' && ch != '.' && ch != 'S' && ch != 'G')
        throw SpecError("line " + std::to_string(lineno) + ": unexpected grid character '" + std::string(1, ch) + "'");
    if (!grid.empty() && line.size() != grid.front().size())
      throw SpecError("line " + std::to_string(lineno) + ": ragged grid row");
    grid.push_back(line);
  }
  if (grid.empty()) throw SpecError("maze file has no grid");
  spec.rows = static_cast<int>(grid.size());
  spec.cols = static_cast<int>(grid.front().size());
  spec.walls.assign(static_cast<std::size_t>(spec.rows * spec.cols), 0);

  auto number = [&](const std::string& key, double fallback) {
    const auto it = header.find(key);
    if (it == header.end()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw SpecError("header key '" + key + "' is not a number: " + it->second);
    }
  };
  for (const auto& [key, value] : header) {
    static const std::array<const char*, 6> kKnown{"cell_size", "goal_tolerance", "max_steps",
                                                   "max_action", "randomize_train_start", "noise_dims"};
    bool known = false;
    for (const char* k : kKnown) known = known || key == k;
    if (!known) throw SpecError("unknown maze header key '" + key + "'");
  }
  spec.cell_size = number("cell_size", 1.0);
  spec.goal_tolerance = number("goal_tolerance", 0.5 * spec.cell_size);
  spec.max_steps = static_cast<int>(number("max_steps", 200));
  spec.max_action = number("max_action", 0.2 * spec.cell_size);
  spec.randomize_train_start = number("randomize_train_start", 1) != 0.0;
  spec.noise_dims = static_cast<int>(number("noise_dims", 0));

  std::optional<Cell> goal;
  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      const char ch = grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      spec.walls[static_cast<std::size_t>(r * spec.cols + c)] = ch == '#' ? 1 : 0;
      if (ch == 'S') spec.start_cells.push_back({r, c});
      if (ch == 'G') {
        if (goal) throw SpecError("maze has more than one goal cell");
        goal = Cell{r, c};
      }
    }
  }
  if (!goal) throw SpecError("maze has no goal cell");
  spec.goal = spec.cell_center(*goal);
  spec.validate();
  return spec;
}

inline MazeSpec load_maze_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open maze file " + path);
  return parse_maze(in, path);
}

// ⊐-shaped maze: start bottom-left, goal top-left, wall in between.
inline MazeSpec umaze() {
  std::istringstream in(
      "max_steps = 200\n"
      "#####\n"
      "#G..#\n"
      "###.#\n"
      "#S..#\n"
      "#####\n");
  return parse_maze(in, "umaze");
}

inline MazeSpec four_rooms() {
  std::istringstream in(
      "max_steps = 400\n"
      "###########\n"
      "#S...#....#\n"
      "#....#....#\n"
      "#.........#\n"
      "#....#....#\n"
      "##.####.###\n"
      "#....#....#\n"
      "#....#....#\n"
      "#.........#\n"
      "#....#...G#\n"
      "###########\n");
  return parse_maze(in, "four_rooms");
}

inline MazeSpec builtin_maze(const std::string& name) {
  if (name == "umaze") return umaze();
  if (name == "four_rooms") return four_rooms();
  throw SpecError("unknown built-in maze '" + name + "'");
}

}  // namespace hill
