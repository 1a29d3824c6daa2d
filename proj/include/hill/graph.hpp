#pragma once

// Latent landmark graphs: count-based novelty on nodes, value-based utility
// on edges, relay propagation of utilities, and the balanced subgoal choice.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "hill/diffnet.hpp"
#include "hill/episode.hpp"
#include "hill/errors.hpp"
#include "hill/log.hpp"
#include "hill/repr.hpp"
#include "hill/rng.hpp"
#include "hill/serialize.hpp"

namespace hill {

using LatentPoint = Vector;
using BucketKey = std::uint64_t;

// SimHash visitation counts η over the latent space, plus the per-bucket
// discounted-occupancy accumulators used by the incremental novelty mode.
class CountTable {
 public:
  CountTable() = default;
  CountTable(int latent_dim, int bits, Rng& rng) : projection_(bits, latent_dim) {
    if (bits < 1 || bits > 64) throw DimensionError("hash bit width must lie in [1, 64]");
    for (int r = 0; r < bits; ++r)
      for (int c = 0; c < latent_dim; ++c) projection_(r, c) = normal01(rng);
  }
  explicit CountTable(Matrix projection) : projection_(std::move(projection)) {
    if (projection_.rows() < 1 || projection_.rows() > 64) throw DimensionError("hash bit width must lie in [1, 64]");
  }

  int bits() const { return static_cast<int>(projection_.rows()); }
  int latent_dim() const { return static_cast<int>(projection_.cols()); }
  const Matrix& projection() const { return projection_; }

  // Bit k is set iff the k-th projection of z is positive.
  BucketKey key(const LatentPoint& z) const {
    if (z.size() != projection_.cols()) throw DimensionError("latent point dimension does not match hash projection");
    const Vector proj = projection_ * z;
    BucketKey k = 0;
    for (Eigen::Index b = 0; b < proj.size(); ++b)
      if (proj(b) > 0.0) k |= (BucketKey{1} << b);
    return k;
  }

  double count(BucketKey k) const {
    const auto it = counts_.find(k);
    return it == counts_.end() ? 0.0 : it->second;
  }
  double count(const LatentPoint& z) const { return count(key(z)); }
  void increment(BucketKey k, double by = 1.0) { counts_[k] += by; }
  double total() const {
    double t = 0.0;
    for (const auto& [k, v] : counts_) t += v;
    return t;
  }
  const std::map<BucketKey, double>& counts() const { return counts_; }

  std::optional<double> occupancy(BucketKey k) const {
    const auto it = occupancy_.find(k);
    if (it == occupancy_.end()) return std::nullopt;
    return it->second;
  }
  void add_occupancy(BucketKey k, double v) { occupancy_[k] += v; }
  void set_occupancies(std::map<BucketKey, double> occ) { occupancy_ = std::move(occ); }
  const std::map<BucketKey, double>& occupancies() const { return occupancy_; }

  void save(std::ostream& os) const {
    io::write_matrix(os, projection_);
    auto write_map = [&](const std::map<BucketKey, double>& m) {
      io::write<std::uint64_t>(os, m.size());
      for (const auto& [k, v] : m) {
        io::write<std::uint64_t>(os, k);
        io::write<double>(os, v);
      }
    };
    write_map(counts_);
    write_map(occupancy_);
  }

  static CountTable load(std::istream& is) {
    CountTable t(io::read_matrix(is));
    auto read_map = [&](std::map<BucketKey, double>& m) {
      const auto n = io::read<std::uint64_t>(is);
      if (n > (1ull << 32)) throw CheckpointError("implausible count-table size");
      for (std::uint64_t i = 0; i < n; ++i) {
        const auto k = io::read<std::uint64_t>(is);
        m[k] = io::read<double>(is);
      }
    };
    read_map(t.counts_);
    read_map(t.occupancy_);
    return t;
  }

 private:
  Matrix projection_;
  std::map<BucketKey, double> counts_;
  std::map<BucketKey, double> occupancy_;
};

inline BucketKey simhash(const LatentPoint& z, const CountTable& table) { return table.key(z); }

// Buckets of φ(s_i) at the decision indices 0, c, 2c, ... of an episode.
inline std::vector<BucketKey> decision_buckets(const Episode& ep, const ReprFn& phi, const CountTable& table, int c) {
  const auto idx = decision_indices(ep.length(), c);
  std::vector<BucketKey> out;
  if (idx.empty()) return out;
  Matrix states(static_cast<Eigen::Index>(idx.size()), ep.state_dim());
  for (std::size_t i = 0; i < idx.size(); ++i) states.row(static_cast<Eigen::Index>(i)) = ep.states.row(idx[i]);
  const Matrix z = phi.encode(states);
  for (Eigen::Index r = 0; r < z.rows(); ++r) out.push_back(table.key(z.row(r).transpose()));
  return out;
}

// Counts every decision state of the episode, then adds each decision
// state's discounted future occupancy (under the updated counts) to its
// bucket's accumulator.
inline void record_episode(CountTable& table, const Episode& ep, const ReprFn& phi, int c, double gamma) {
  const auto buckets = decision_buckets(ep, phi, table, c);
  for (BucketKey k : buckets) table.increment(k);
  double tail = 0.0;
  std::vector<double> tails(buckets.size());
  for (std::size_t i = buckets.size(); i-- > 0;) {
    tail = table.count(buckets[i]) + gamma * tail;
    tails[i] = tail;
  }
  for (std::size_t i = 0; i < buckets.size(); ++i) table.add_occupancy(buckets[i], tails[i]);
}

// Exact novelty for every bucket that occurs at a decision index in the
// buffer: the sum over occurrences of the discounted future counts.
class NoveltyIndex {
 public:
  NoveltyIndex() = default;
  NoveltyIndex(const EpisodeBuffer& buffer, const ReprFn& phi, const CountTable& table, double gamma, int c) {
    for (std::size_t e = 0; e < buffer.size(); ++e) {
      const auto buckets = decision_buckets(buffer[e], phi, table, c);
      double tail = 0.0;
      for (std::size_t i = buckets.size(); i-- > 0;) {
        tail = table.count(buckets[i]) + gamma * tail;
        sums_[buckets[i]] += tail;
      }
    }
  }

  // Buckets never seen at a decision index fall back to their raw count.
  double novelty(BucketKey k, const CountTable& table) const {
    const auto it = sums_.find(k);
    return it == sums_.end() ? table.count(k) : it->second;
  }

  const std::map<BucketKey, double>& sums() const { return sums_; }

 private:
  std::map<BucketKey, double> sums_;
};

enum class NoveltyMode { Exact, Incremental };

inline double novelty(const LatentPoint& l, const EpisodeBuffer& buffer, const ReprFn& phi, const CountTable& table,
                      double gamma, int c, NoveltyMode mode) {
  const BucketKey k = table.key(l);
  if (mode == NoveltyMode::Incremental) return table.occupancy(k).value_or(table.count(k));
  return NoveltyIndex(buffer, phi, table, gamma, c).novelty(k, table);
}

// Resets the incremental accumulators to the exact values.
inline void rebuild_accumulators(CountTable& table, const EpisodeBuffer& buffer, const ReprFn& phi, double gamma,
                                 int c) {
  table.set_occupancies(NoveltyIndex(buffer, phi, table, gamma, c).sums());
}

// Greedy max-min selection seeded with `initial`. Returns indices into
// `points` of the chosen points, in selection order, excluding the seed;
// at most m-1 of them. Points already at distance 0 from the chosen set are
// never added. Ties go to the lowest index.
inline std::vector<std::size_t> fps_indices(const std::vector<LatentPoint>& points, int m, const LatentPoint& initial) {
  if (m < 1) throw DimensionError("farthest point sampling needs m >= 1");
  std::vector<std::size_t> chosen;
  std::vector<double> mind(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != initial.size()) throw DimensionError("point dimension mismatch in FPS");
    mind[i] = (points[i] - initial).norm();
  }
  while (static_cast<int>(chosen.size()) + 1 < m) {
    std::size_t best = points.size();
    double best_d = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (mind[i] > best_d) {
        best_d = mind[i];
        best = i;
      }
    }
    if (best == points.size()) break;  // everything covered
    chosen.push_back(best);
    for (std::size_t i = 0; i < points.size(); ++i) mind[i] = std::min(mind[i], (points[i] - points[best]).norm());
  }
  return chosen;
}

// FPS returning the selected points, `initial` first.
inline std::vector<LatentPoint> fps_sample(const std::vector<LatentPoint>& points, int m, const LatentPoint& initial) {
  if (points.empty()) throw DimensionError("farthest point sampling needs a non-empty point set");
  std::vector<LatentPoint> out{initial};
  for (std::size_t i : fps_indices(points, m, initial)) out.push_back(points[i]);
  return out;
}

// Largest distance from any point to its nearest center.
inline double coverage_radius(const std::vector<LatentPoint>& points, const std::vector<LatentPoint>& centers) {
  double r = 0.0;
  for (const auto& p : points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : centers) best = std::min(best, (p - c).norm());
    r = std::max(r, best);
  }
  return r;
}

enum class LandmarkKind : std::uint8_t { Sampled = 0, Goal = 1, Current = 2 };

inline const char* to_string(LandmarkKind k) {
  switch (k) {
    case LandmarkKind::Sampled: return "sampled";
    case LandmarkKind::Goal: return "goal";
    case LandmarkKind::Current: return "current";
  }
  return "?";
}

struct Landmark {
  LatentPoint latent;
  std::optional<Vector> source;  // state whose representation produced the landmark
  double novelty = 0.0;
  LandmarkKind kind = LandmarkKind::Sampled;
};

// Index of the nearest landmark to each latent row (L2; ties to lowest index).
inline std::vector<int> nearest_landmark(const Matrix& latents, const std::vector<Landmark>& nodes) {
  std::vector<int> out(static_cast<std::size_t>(latents.rows()), -1);
  for (Eigen::Index r = 0; r < latents.rows(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      const double d = (latents.row(r).transpose() - nodes[j].latent).squaredNorm();
      if (d < best) {
        best = d;
        out[static_cast<std::size_t>(r)] = static_cast<int>(j);
      }
    }
  }
  return out;
}

// Raw edge utilities: each sampled state is assigned to its nearest
// landmark, and U[i][j] is the mean over the states assigned to l_i of
// V(s, l_j). A landmark with no assigned state uses its own source state.
// `value` maps (states B x S, goals B x d) to B values. Diagonal is zero.
template <typename ValueFn>
Matrix edge_utility(const std::vector<Landmark>& nodes, const Matrix& sampled_states, const Matrix& sampled_latents,
                    ValueFn&& value) {
  const auto y = static_cast<Eigen::Index>(nodes.size());
  if (sampled_states.rows() != sampled_latents.rows()) throw DimensionError("sampled states and latents differ in count");
  const auto assign = nearest_landmark(sampled_latents, nodes);
  std::vector<std::vector<Eigen::Index>> cells(nodes.size());
  for (std::size_t r = 0; r < assign.size(); ++r) cells[static_cast<std::size_t>(assign[r])].push_back(static_cast<Eigen::Index>(r));

  const Eigen::Index latent_dim = nodes.empty() ? 0 : nodes.front().latent.size();
  Matrix goals(y, latent_dim);
  for (Eigen::Index j = 0; j < y; ++j) goals.row(j) = nodes[static_cast<std::size_t>(j)].latent.transpose();

  Matrix u = Matrix::Zero(y, y);
  for (Eigen::Index i = 0; i < y; ++i) {
    const auto& cell = cells[static_cast<std::size_t>(i)];
    Matrix members;
    if (cell.empty()) {
      const auto& src = nodes[static_cast<std::size_t>(i)].source;
      if (!src) throw StateError("landmark " + std::to_string(i) + " has neither assigned states nor a source state");
      members = src->transpose();
    } else {
      members.resize(static_cast<Eigen::Index>(cell.size()), sampled_states.cols());
      for (std::size_t k = 0; k < cell.size(); ++k) members.row(static_cast<Eigen::Index>(k)) = sampled_states.row(cell[k]);
    }
    const Eigen::Index n = members.rows();
    // every member against every other landmark, in one batch
    Matrix s(n * (y - 1), members.cols());
    Matrix g(n * (y - 1), latent_dim);
    Eigen::Index row = 0;
    for (Eigen::Index j = 0; j < y; ++j) {
      if (j == i) continue;
      for (Eigen::Index k = 0; k < n; ++k, ++row) {
        s.row(row) = members.row(k);
        g.row(row) = goals.row(j);
      }
    }
    const Vector v = value(s, g);
    if (!v.allFinite()) throw RejectedStep("non-finite value estimate while building edge utilities; graph build aborted");
    row = 0;
    for (Eigen::Index j = 0; j < y; ++j) {
      if (j == i) continue;
      u(i, j) = v.segment(row, n).mean();
      row += n;
    }
  }
  return u;
}

struct Propagation {
  Matrix utility;
  int rounds = 0;
  bool positive_cycle = false;
};

// Relay propagation: U[i][f] <- max(U[i][f], max_j U[i][j] + U[j][f]) for
// at most Y-1 rounds, stopping early once nothing changes. A change in an
// extra round means a positive cycle; the values are kept as they are.
// The diagonal stays zero, so relaying through i or f itself is a no-op and
// each row can be relaxed as a whole.
inline Propagation propagate_utility(const Matrix& raw) {
  if (raw.rows() != raw.cols()) throw DimensionError("utility matrix must be square");
  if (!raw.allFinite()) throw RejectedStep("non-finite raw utility");
  const Eigen::Index y = raw.rows();
  Propagation out{raw, 0, false};
  out.utility.diagonal().setZero();
  // column i of `t` is row i of U; columns are contiguous
  Matrix t = out.utility.transpose();
  auto relax_round = [&]() {
    bool changed = false;
    Vector before(y);
    for (Eigen::Index i = 0; i < y; ++i) {
      auto row = t.col(i);
      before = row;
      for (Eigen::Index j = 0; j < y; ++j) {
        if (j == i) continue;
        row = row.cwiseMax(t.col(j) + Vector::Constant(y, row(j)));
      }
      row(i) = 0.0;
      if ((row.array() != before.array()).any()) changed = true;
    }
    return changed;
  };
  bool changed = true;
  while (changed && out.rounds < std::max<Eigen::Index>(0, y - 1)) {
    changed = relax_round();
    ++out.rounds;
  }
  if (changed && y > 2) {
    const Matrix before = t;
    if (relax_round()) {
      out.positive_cycle = true;
      t = before;
      log::warn("positive utility cycle detected; propagation stopped after " + std::to_string(out.rounds) + " rounds");
    }
  }
  out.utility = t.transpose();
  return out;
}

// Max-shifted softmax.
inline Vector utility_softmax(const Vector& row) {
  if (row.size() == 0) return row;
  if (!row.allFinite()) throw RejectedStep("non-finite utility row");
  const Vector e = (row.array() - row.maxCoeff()).exp().matrix();
  return e / e.sum();
}

// argmin_j (1 - P_j) * N_j over the supplied candidates; lowest index on ties.
inline std::size_t balanced_argmin(const Vector& probability, const Vector& novelty) {
  if (probability.size() != novelty.size() || probability.size() == 0)
    throw DimensionError("balanced selection needs equally sized, non-empty inputs");
  std::size_t best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < probability.size(); ++j) {
    const double score = (1.0 - probability(j)) * novelty(j);
    if (score < best_score) {
      best_score = score;
      best = static_cast<std::size_t>(j);
    }
  }
  return best;
}

struct LandmarkGraph {
  std::vector<Landmark> nodes;
  Matrix u_raw;
  Matrix u_prop;
  std::int64_t timestamp = 0;
  int current = -1;
  int goal = -1;

  std::size_t size() const { return nodes.size(); }
  std::size_t edge_count() const { return nodes.size() * (nodes.empty() ? 0 : nodes.size() - 1); }
};

struct Selection {
  int node = -1;
  Vector probability;  // over candidates j != current, in node order
  Vector score;
};

// Balanced subgoal choice from the current node: softmax over the utilities
// of its outgoing edges, weighted against the candidates' novelty.
inline Selection select_subgoal(const LandmarkGraph& graph) {
  const auto y = static_cast<Eigen::Index>(graph.size());
  if (y < 2) throw StateError("subgoal selection needs at least one candidate besides the current node");
  if (graph.current < 0 || graph.current >= y) throw StateError("graph has no current node");
  Vector row(y - 1), nov(y - 1);
  std::vector<int> ids;
  for (Eigen::Index j = 0, k = 0; j < y; ++j) {
    if (j == graph.current) continue;
    row(k) = graph.u_prop(graph.current, j);
    nov(k) = graph.nodes[static_cast<std::size_t>(j)].novelty;
    ids.push_back(static_cast<int>(j));
    ++k;
  }
  Selection s;
  s.probability = utility_softmax(row);
  s.score = ((1.0 - s.probability.array()) * nov.array()).matrix();
  s.node = ids[balanced_argmin(s.probability, nov)];
  return s;
}

struct GraphConfig {
  int landmarks = 50;  // m
  int samples = 200;   // K
};

// Draws K distinct states uniformly from the buffer (with replacement, and
// a warning, when fewer than K are stored).
inline std::vector<StateRef> sample_states(const EpisodeBuffer& buffer, int k, Rng& rng) {
  std::vector<StateRef> out;
  const std::size_t total = buffer.total_states();
  if (total == 0) throw StateError("cannot sample landmarks from an empty buffer");
  if (static_cast<std::size_t>(k) > total) {
    log::warn("buffer holds " + std::to_string(total) + " states, fewer than K=" + std::to_string(k) + "; sampling with replacement");
    for (int i = 0; i < k; ++i) out.push_back(buffer.sample_state(rng));
    return out;
  }
  std::set<std::pair<std::size_t, int>> seen;
  while (static_cast<int>(out.size()) < k) {
    const StateRef r = buffer.sample_state(rng);
    if (seen.insert({r.episode, r.t}).second) out.push_back(r);
  }
  return out;
}

// Builds the graph for one high-level decision. `novelty_of` maps a latent
// point to N; `value` is the low-level UVFA as in edge_utility.
template <typename ValueFn, typename NoveltyFn>
LandmarkGraph build_graph(const EpisodeBuffer& buffer, const ReprFn& phi, ValueFn&& value, NoveltyFn&& novelty_of,
                          const GraphConfig& cfg, const Vector& current_state, const std::optional<Vector>& goal_state,
                          Rng& rng, std::int64_t timestamp = 0) {
  const auto refs = sample_states(buffer, cfg.samples, rng);
  // temporary buffer B_t: (state, representation) pairs, local to this build
  Matrix states(static_cast<Eigen::Index>(refs.size()), current_state.size());
  for (std::size_t i = 0; i < refs.size(); ++i) states.row(static_cast<Eigen::Index>(i)) = buffer.state(refs[i]);
  const Matrix latents = phi.encode(states);
  std::vector<LatentPoint> points;
  points.reserve(refs.size());
  for (Eigen::Index r = 0; r < latents.rows(); ++r) points.push_back(latents.row(r).transpose());

  LandmarkGraph g;
  g.timestamp = timestamp;
  const LatentPoint current = phi.encode(current_state);
  for (std::size_t i : fps_indices(points, cfg.landmarks + 1, current)) {
    g.nodes.push_back({points[i], Vector(states.row(static_cast<Eigen::Index>(i)).transpose()), 0.0, LandmarkKind::Sampled});
  }
  if (goal_state) {
    g.goal = static_cast<int>(g.nodes.size());
    g.nodes.push_back({phi.encode(*goal_state), *goal_state, 0.0, LandmarkKind::Goal});
  }
  g.current = static_cast<int>(g.nodes.size());
  g.nodes.push_back({current, current_state, 0.0, LandmarkKind::Current});
  for (auto& n : g.nodes) n.novelty = novelty_of(n.latent);
  g.u_raw = edge_utility(g.nodes, states, latents, value);
  g.u_prop = propagate_utility(g.u_raw).utility;
  return g;
}

// Plain-text export: a node table followed by both utility matrices.
inline void write_graph(std::ostream& os, const LandmarkGraph& g) {
  os.precision(17);
  os << "nodes " << g.size() << "\n";
  os << "# index kind novelty z_1..z_d\n";
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& n = g.nodes[i];
    os << i << ' ' << to_string(n.kind) << ' ' << n.novelty;
    for (Eigen::Index k = 0; k < n.latent.size(); ++k) os << ' ' << n.latent(k);
    os << "\n";
  }
  os << "edges " << g.edge_count() << "\n";
  os << "# from to u_raw u_prop\n";
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (i == j) continue;
      const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
      os << i << ' ' << j << ' ' << g.u_raw(a, b) << ' ' << g.u_prop(a, b) << "\n";
    }
}

}  // namespace hill
