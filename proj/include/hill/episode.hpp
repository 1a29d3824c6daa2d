#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <deque>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <vector>

#include "hill/errors.hpp"
#include "hill/rng.hpp"
#include "hill/serialize.hpp"

namespace hill {

// One stored episode. `states` has length()+1 rows: s_0 .. s_L.
// Per-step rows (actions, rewards, subgoals) have length() entries.
struct Episode {
  Eigen::MatrixXd states;
  std::vector<int> actions;
  Eigen::VectorXd env_rewards;
  Eigen::VectorXd intrinsic_rewards;  // as computed while acting
  Eigen::MatrixXd subgoals;           // latent subgoal in force at each step
  Eigen::MatrixXd subgoal_sources;    // state whose representation is the subgoal
  std::vector<std::uint8_t> teacher;  // per high-level decision: 1 teacher, 0 student
  bool success = false;

  int length() const { return static_cast<int>(actions.size()); }
  int state_dim() const { return static_cast<int>(states.cols()); }

  void validate() const {
    const auto n = static_cast<Eigen::Index>(actions.size());
    if (states.rows() != n + 1 || env_rewards.size() != n || intrinsic_rewards.size() != n ||
        subgoals.rows() != n || subgoal_sources.rows() != n)
      throw DimensionError("episode fields have inconsistent lengths");
  }

  void save(std::ostream& os) const {
    io::write_matrix(os, states);
    io::write<std::uint64_t>(os, actions.size());
    for (int a : actions) io::write<std::int32_t>(os, a);
    io::write_vector(os, env_rewards);
    io::write_vector(os, intrinsic_rewards);
    io::write_matrix(os, subgoals);
    io::write_matrix(os, subgoal_sources);
    io::write<std::uint64_t>(os, teacher.size());
    for (auto t : teacher) io::write<std::uint8_t>(os, t);
    io::write<std::uint8_t>(os, success ? 1 : 0);
  }

  static Episode load(std::istream& is) {
    Episode e;
    e.states = io::read_matrix(is);
    const auto n = io::read<std::uint64_t>(is);
    if (n > (1u << 24)) throw CheckpointError("implausible episode length");
    e.actions.resize(n);
    for (auto& a : e.actions) a = io::read<std::int32_t>(is);
    e.env_rewards = io::read_vector(is);
    e.intrinsic_rewards = io::read_vector(is);
    e.subgoals = io::read_matrix(is);
    e.subgoal_sources = io::read_matrix(is);
    const auto nt = io::read<std::uint64_t>(is);
    if (nt > (1u << 24)) throw CheckpointError("implausible decision count");
    e.teacher.resize(nt);
    for (auto& t : e.teacher) t = io::read<std::uint8_t>(is);
    e.success = io::read<std::uint8_t>(is) != 0;
    try {
      e.validate();
    } catch (const DimensionError& err) {
      throw CheckpointError(std::string("corrupt episode: ") + err.what());
    }
    return e;
  }
};

struct StateRef {
  std::size_t episode = 0;
  int t = 0;
};

// FIFO store of whole episodes (B_l). Stored episodes are never mutated.
class EpisodeBuffer {
 public:
  explicit EpisodeBuffer(std::size_t capacity = 500) : capacity_(capacity) {
    if (capacity_ == 0) throw DimensionError("episode buffer capacity must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return episodes_.size(); }
  bool empty() const { return episodes_.empty(); }
  const Episode& operator[](std::size_t i) const { return *episodes_[i]; }
  std::shared_ptr<const Episode> share(std::size_t i) const { return episodes_[i]; }

  std::size_t total_states() const { return prefix_.empty() ? 0 : prefix_.back(); }

  void push(Episode e) {
    e.validate();
    episodes_.push_back(std::make_shared<const Episode>(std::move(e)));
    if (episodes_.size() > capacity_) episodes_.pop_front();
    rebuild_prefix();
  }

  const Eigen::MatrixXd::ConstRowXpr state(const StateRef& r) const { return episodes_[r.episode]->states.row(r.t); }

  // Uniform over every stored state s_0..s_L of every episode.
  StateRef sample_state(Rng& rng) const {
    if (empty()) throw StateError("sampling from an empty episode buffer");
    const std::size_t k = uniform_index(rng, total_states());
    const auto it = std::upper_bound(prefix_.begin(), prefix_.end(), k);
    const auto e = static_cast<std::size_t>(it - prefix_.begin());
    const std::size_t before = e == 0 ? 0 : prefix_[e - 1];
    return {e, static_cast<int>(k - before)};
  }

  // Uniform over (episode, t) with t + offset <= L, i.e. s_{t+offset} exists.
  // Returns nothing when no episode is long enough.
  std::optional<StateRef> sample_with_offset(Rng& rng, int offset) const {
    std::vector<std::size_t> cum;
    cum.reserve(episodes_.size());
    std::size_t total = 0;
    for (const auto& ep : episodes_) {
      total += static_cast<std::size_t>(std::max(0, ep->length() + 1 - offset));
      cum.push_back(total);
    }
    if (total == 0) return std::nullopt;
    const std::size_t k = uniform_index(rng, total);
    const auto it = std::upper_bound(cum.begin(), cum.end(), k);
    const auto e = static_cast<std::size_t>(it - cum.begin());
    const std::size_t before = e == 0 ? 0 : cum[e - 1];
    return StateRef{e, static_cast<int>(k - before)};
  }

  void save(std::ostream& os) const {
    io::write<std::uint64_t>(os, capacity_);
    io::write<std::uint64_t>(os, episodes_.size());
    for (const auto& e : episodes_) e->save(os);
  }

  static EpisodeBuffer load(std::istream& is) {
    const auto cap = io::read<std::uint64_t>(is);
    if (cap == 0 || cap > (1u << 24)) throw CheckpointError("implausible buffer capacity");
    EpisodeBuffer b(cap);
    const auto n = io::read<std::uint64_t>(is);
    if (n > cap) throw CheckpointError("buffer holds more episodes than its capacity");
    for (std::uint64_t i = 0; i < n; ++i) b.push(Episode::load(is));
    return b;
  }

 private:
  void rebuild_prefix() {
    prefix_.clear();
    std::size_t total = 0;
    for (const auto& ep : episodes_) {
      total += static_cast<std::size_t>(ep->length() + 1);
      prefix_.push_back(total);
    }
  }

  std::size_t capacity_;
  std::deque<std::shared_ptr<const Episode>> episodes_;
  std::vector<std::size_t> prefix_;
};

// Decision indices 0, c, 2c, ... strictly below the episode length.
inline std::vector<int> decision_indices(int length, int c) {
  std::vector<int> out;
  for (int i = 0; i < length; i += c) out.push_back(i);
  return out;
}

}  // namespace hill
