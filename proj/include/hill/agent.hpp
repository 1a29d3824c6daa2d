#pragma once

// Bi-level goal-conditioned agent: a graph-based teacher and a learned
// student choose latent subgoals every c steps; a discrete soft-Q learner
// pursues them with intrinsic rewards; a UVFA tracks the low-level values.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <vector>

#include "hill/config.hpp"
#include "hill/diffnet.hpp"
#include "hill/env.hpp"
#include "hill/episode.hpp"
#include "hill/errors.hpp"
#include "hill/log.hpp"
#include "hill/graph.hpp"
#include "hill/repr.hpp"
#include "hill/rng.hpp"

namespace hill {

// -D(g, z) with D the L2 distance.
inline double intrinsic_reward(const Vector& goal, const Vector& latent) {
  if (goal.size() != latent.size()) throw DimensionError("goal and latent differ in dimension");
  return -(goal - latent).norm();
}

enum class PolicyChoice { Teacher, Student };
enum class MixRule { Pseudocode, Text };

inline MixRule parse_mix_rule(const std::string& s) { return s == "text" ? MixRule::Text : MixRule::Pseudocode; }

// Pseudocode rule: teacher iff 2q - 1 <= p, so P(teacher) = (1 + p) / 2.
// Text rule: teacher iff q <= p.
inline PolicyChoice choose_policy(double p, double q, MixRule rule = MixRule::Pseudocode) {
  const bool teacher = rule == MixRule::Pseudocode ? (2.0 * q - 1.0 <= p) : (q <= p);
  return teacher ? PolicyChoice::Teacher : PolicyChoice::Student;
}

struct MixSchedule {
  double p = 0.5;
  std::size_t window = 100;
  std::deque<std::uint8_t> recent;  // newest training outcomes

  void record(bool success) {
    recent.push_back(success ? 1 : 0);
    while (recent.size() > window) recent.pop_front();
  }

  double success_rate() const {
    if (recent.empty()) return 0.0;
    double s = 0.0;
    for (auto r : recent) s += r;
    return s / static_cast<double>(recent.size());
  }
};

// p <- max(p, clamp(rate, 0.5, 1)): never below 0.5 and never decreasing.
inline void update_p(MixSchedule& schedule, double recent_success_rate) {
  schedule.p = std::max(schedule.p, std::clamp(recent_success_rate, 0.5, 1.0));
}

struct Uvfa {
  Trainable model;
  double gamma = 0.95;
  double delta_z = 0.1;

  // Pseudo-discount: 0 once the subgoal is reached, γ otherwise.
  double sigma(const Vector& goal, const Vector& latent) const {
    return (goal - latent).norm() <= delta_z ? 0.0 : gamma;
  }

  Vector value(const Matrix& states, const Matrix& goals) const {
    return model.net.forward(hcat(states, goals)).col(0);
  }
};

struct LowLevelPolicy {
  Trainable q;
  Mlp target;
  double alpha = 0.05;

  int num_actions() const { return q.net.output_dim(); }

  Vector probabilities(const Vector& state, const Vector& goal) const {
    Matrix x(1, state.size() + goal.size());
    x << state.transpose(), goal.transpose();
    const Vector qv = q.net.forward(x).row(0).transpose();
    return utility_softmax(qv / alpha);
  }
};

inline int argmax_lowest(const Vector& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

inline int sample_categorical(const Vector& probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

// Explore: sample from softmax(Q/α). Otherwise greedy, lowest index on ties.
inline int low_level_act(const LowLevelPolicy& policy, const Vector& state, const Vector& goal, bool explore, Rng& rng) {
  if (explore) return sample_categorical(policy.probabilities(state, goal), rng);
  Matrix x(1, state.size() + goal.size());
  x << state.transpose(), goal.transpose();
  return argmax_lowest(policy.q.net.forward(x).row(0).transpose());
}

struct Transition {
  Vector state;
  int action = 0;
  Vector next_state;
  Vector next_latent;  // φ(next_state)
  Vector goal;         // latent subgoal
  double reward = 0.0;
};

inline Transition relabel(const Transition& t, const Vector& achieved) {
  Transition r = t;
  r.goal = achieved;
  r.reward = intrinsic_reward(achieved, t.next_latent);
  return r;
}

// Hindsight relabeling of one c-step segment: the original transitions
// followed by one copy of each whose goal is the representation of the
// segment's final state, with rewards recomputed against it.
inline std::vector<Transition> her_relabel(const std::vector<Transition>& segment, const ReprFn& phi) {
  std::vector<Transition> out = segment;
  if (segment.empty()) return out;
  const Vector achieved = phi.encode(segment.back().next_state);
  for (const auto& t : segment) out.push_back(relabel(t, achieved));
  return out;
}

struct LowLevelBatch {
  Matrix states, next_states, goals;
  std::vector<int> actions;
  Vector rewards;
  Vector discounts;  // σ(s') per row
};

inline LowLevelBatch make_low_level_batch(const std::vector<Transition>& ts, const Uvfa& uvfa) {
  LowLevelBatch b;
  const auto n = static_cast<Eigen::Index>(ts.size());
  if (n == 0) return b;
  b.states.resize(n, ts.front().state.size());
  b.next_states.resize(n, ts.front().next_state.size());
  b.goals.resize(n, ts.front().goal.size());
  b.rewards.resize(n);
  b.discounts.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = ts[static_cast<std::size_t>(i)];
    b.states.row(i) = t.state.transpose();
    b.next_states.row(i) = t.next_state.transpose();
    b.goals.row(i) = t.goal.transpose();
    b.actions.push_back(t.action);
    b.rewards(i) = t.reward;
    b.discounts(i) = uvfa.sigma(t.goal, t.next_latent);
  }
  return b;
}

struct TdStats {
  double q_loss = 0.0;
  double v_loss = 0.0;
};

struct LossGrad {
  double loss = 0.0;
  Gradients grads;
};

// Soft TD targets r + σ(s') · α log Σ_a exp(Q_target(s', g, a) / α).
inline Vector low_level_targets(const LowLevelPolicy& policy, const LowLevelBatch& batch) {
  const Vector soft_next = row_logsumexp(policy.target.forward(hcat(batch.next_states, batch.goals)), policy.alpha);
  const Vector target = batch.rewards + batch.discounts.cwiseProduct(soft_next);
  if (!target.allFinite()) throw RejectedStep("non-finite low-level TD target; batch rejected");
  return target;
}

// Mean of ½(Q(s, g, a) - target)² and its parameter gradient.
inline LossGrad low_level_q_loss(const LowLevelPolicy& policy, const LowLevelBatch& batch, const Vector& target) {
  const Eigen::Index n = batch.states.rows();
  Tape tape;
  const Matrix q = policy.q.net.forward(hcat(batch.states, batch.goals), tape);
  Matrix upstream = Matrix::Zero(n, q.cols());
  LossGrad out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = batch.actions[static_cast<std::size_t>(i)];
    if (a < 0 || a >= q.cols()) throw DimensionError("action index out of range in batch");
    const double diff = q(i, a) - target(i);
    out.loss += 0.5 * diff * diff;
    upstream(i, a) = diff / static_cast<double>(n);
  }
  out.loss /= static_cast<double>(n);
  out.grads = policy.q.net.backward(tape, upstream);
  return out;
}

// UVFA regression target: the soft value of the target Q at (s, g).
inline Vector uvfa_targets(const LowLevelPolicy& policy, const LowLevelBatch& batch) {
  return row_logsumexp(policy.target.forward(hcat(batch.states, batch.goals)), policy.alpha);
}

inline LossGrad uvfa_loss(const Uvfa& uvfa, const LowLevelBatch& batch, const Vector& target) {
  const auto n = static_cast<double>(batch.states.rows());
  Tape tape;
  const Matrix v = uvfa.model.net.forward(hcat(batch.states, batch.goals), tape);
  const Vector diff = v.col(0) - target;
  return {0.5 * diff.squaredNorm() / n, uvfa.model.net.backward(tape, diff / n)};
}

// Soft-Q step, UVFA regression step, then Polyak update of the target Q.
inline TdStats low_level_update(LowLevelPolicy& policy, Uvfa& uvfa, const LowLevelBatch& batch, double tau) {
  TdStats stats;
  if (batch.states.rows() == 0) return stats;
  const Vector target = low_level_targets(policy, batch);
  const LossGrad q = low_level_q_loss(policy, batch, target);
  policy.q.step(q.grads);
  stats.q_loss = q.loss;
  const LossGrad v = uvfa_loss(uvfa, batch, uvfa_targets(policy, batch));
  uvfa.model.step(v.grads);
  stats.v_loss = v.loss;
  policy.target.soft_update(policy.q.net, tau);
  return stats;
}

struct HighLevelStudent {
  Trainable q;
  Mlp target;
  double alpha = 0.1;

  // Q(s, z) for every candidate row z.
  Vector scores(const Vector& state, const Matrix& candidates) const {
    Matrix s = state.transpose().replicate(candidates.rows(), 1);
    return q.net.forward(hcat(s, candidates)).col(0);
  }
};

inline int student_act(const HighLevelStudent& student, const Vector& state, const Matrix& candidates, bool explore,
                       Rng& rng) {
  if (candidates.rows() == 0) throw StateError("student needs at least one candidate subgoal");
  const Vector s = student.scores(state, candidates);
  if (!explore) return argmax_lowest(s);
  return sample_categorical(utility_softmax(s / student.alpha), rng);
}

// A decision at step `start` whose subgoal stayed in force until `end`.
struct HighLevelTransition {
  int start = 0;
  int end = 0;
  double reward = 0.0;  // summed environmental reward over [start, end)
  bool terminal = false;
};

inline std::vector<HighLevelTransition> extract_high_level(const Episode& ep, int c) {
  std::vector<HighLevelTransition> out;
  for (int i : decision_indices(ep.length(), c)) {
    HighLevelTransition h;
    h.start = i;
    h.end = std::min(i + c, ep.length());
    h.reward = ep.env_rewards.segment(i, h.end - i).sum();
    h.terminal = h.end == ep.length() && ep.success;
    out.push_back(h);
  }
  return out;
}

struct HighLevelBatch {
  Matrix states, goals, next_states;
  Vector rewards;
  Vector discounts;  // γ^(steps elapsed), 0 at terminal transitions
  Matrix candidates;  // subgoal choices available at s'
};

// Decision-timescale targets R + γ^k · α log Σ_z exp(Q_target(s', z) / α),
// the soft value taken over the candidate set at s'.
inline Vector high_level_targets(const HighLevelStudent& student, const HighLevelBatch& batch) {
  const Eigen::Index n = batch.states.rows();
  const Eigen::Index m = batch.candidates.rows();
  if (m == 0) throw StateError("student update needs candidate subgoals");
  Matrix xs(n * m, batch.next_states.cols() + batch.candidates.cols());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) xs.row(i * m + j) << batch.next_states.row(i), batch.candidates.row(j);
  const Vector qn = student.target.forward(xs).col(0);
  const Matrix per_row = Eigen::Map<const Matrix>(qn.data(), m, n).transpose();
  const Vector target = batch.rewards + batch.discounts.cwiseProduct(row_logsumexp(per_row, student.alpha));
  if (!target.allFinite()) throw RejectedStep("non-finite high-level TD target; batch rejected");
  return target;
}

inline LossGrad high_level_q_loss(const HighLevelStudent& student, const HighLevelBatch& batch, const Vector& target) {
  const auto n = static_cast<double>(batch.states.rows());
  Tape tape;
  const Matrix q = student.q.net.forward(hcat(batch.states, batch.goals), tape);
  const Vector diff = q.col(0) - target;
  return {0.5 * diff.squaredNorm() / n, student.q.net.backward(tape, diff / n)};
}

inline TdStats high_level_student_update(HighLevelStudent& student, const HighLevelBatch& batch, double tau) {
  TdStats stats;
  if (batch.states.rows() == 0) return stats;
  const LossGrad q = high_level_q_loss(student, batch, high_level_targets(student, batch));
  student.q.step(q.grads);
  stats.q_loss = q.loss;
  student.target.soft_update(student.q.net, tau);
  return stats;
}

// Sampled landmarks for one decision: K buffer states reduced by FPS to m
// points (seeded at `initial`), each with its source state.
struct CandidateSet {
  Matrix latents;
  Matrix sources;
};

inline CandidateSet candidate_landmarks(const EpisodeBuffer& buffer, const ReprFn& phi, int m, int k,
                                        const Vector& initial, Rng& rng) {
  const auto refs = sample_states(buffer, k, rng);
  const int sdim = buffer[0].state_dim();
  Matrix states(static_cast<Eigen::Index>(refs.size()), sdim);
  for (std::size_t i = 0; i < refs.size(); ++i) states.row(static_cast<Eigen::Index>(i)) = buffer.state(refs[i]);
  const Matrix z = phi.encode(states);
  std::vector<LatentPoint> pts;
  for (Eigen::Index r = 0; r < z.rows(); ++r) pts.push_back(z.row(r).transpose());
  const auto idx = fps_indices(pts, m + 1, initial);
  CandidateSet out;
  out.latents.resize(static_cast<Eigen::Index>(idx.size()), z.cols());
  out.sources.resize(static_cast<Eigen::Index>(idx.size()), sdim);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.latents.row(static_cast<Eigen::Index>(i)) = z.row(static_cast<Eigen::Index>(idx[i]));
    out.sources.row(static_cast<Eigen::Index>(i)) = states.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

struct Subgoal {
  Vector latent;
  Vector source;
  bool teacher = false;
};

struct EpisodeSummary {
  bool success = false;
  double ret = 0.0;
  int length = 0;
  std::uint64_t seed = 0;
  int teacher_decisions = 0;
  int student_decisions = 0;
  int graph_builds = 0;
  double contrastive_loss = 0.0;  // mean over this episode's representation steps
  double stability_loss = 0.0;
  int repr_steps = 0;
  double p = 0.5;
};

inline std::vector<int> hidden_dims(const RunConfig& cfg) { return std::vector<int>(static_cast<std::size_t>(cfg.hidden_layers), cfg.hidden_units); }

inline std::vector<int> net_dims(int in, const RunConfig& cfg, int out) {
  std::vector<int> d{in};
  for (int h : hidden_dims(cfg)) d.push_back(h);
  d.push_back(out);
  return d;
}

inline MazeSpec maze_for(const RunConfig& cfg) {
  MazeSpec spec = (cfg.env.find('/') != std::string::npos || cfg.env.find('.') != std::string::npos)
                      ? load_maze_file(cfg.env)
                      : builtin_maze(cfg.env);
  spec.max_steps = cfg.max_steps;
  spec.goal_tolerance = cfg.goal_tolerance;
  spec.noise_dims = cfg.noise_dims;
  spec.validate();
  return spec;
}

class Agent {
 public:
  Agent(const RunConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed), env_(maze_for(cfg)), buffer_(static_cast<std::size_t>(cfg.episode_capacity)),
        triplets_(static_cast<std::size_t>(cfg.triplet_capacity)) {
    cfg_.validate();
    const int sdim = env_.goal_observation().dim();
    const int d = cfg_.latent_dim;
    Rng init = substream(seed_, "init");
    auto adam = [&](double lr) { return AdamConfig{lr, 0.9, 0.999, 1e-8, cfg_.clip_norm}; };
    phi_ = ReprFn(sdim, d, hidden_dims(cfg_), adam(cfg_.lr_repr), init);
    low_.q = Trainable(Mlp(net_dims(sdim + d, cfg_, kNumActions), Activation::Relu, init), adam(cfg_.lr_low));
    low_.target = low_.q.net;
    low_.alpha = cfg_.alpha;
    uvfa_.model = Trainable(Mlp(net_dims(sdim + d, cfg_, 1), Activation::Relu, init), adam(cfg_.lr_uvfa));
    uvfa_.gamma = cfg_.gamma;
    student_.q = Trainable(Mlp(net_dims(sdim + d, cfg_, 1), Activation::Relu, init), adam(cfg_.lr_high));
    student_.target = student_.q.net;
    student_.alpha = cfg_.alpha_high;
    Rng hash = substream(seed_, "hash");
    table_ = CountTable(d, cfg_.hash_bits, hash);
    schedule_.p = cfg_.p_init;
    schedule_.window = static_cast<std::size_t>(cfg_.success_window);
    env_rng_ = substream(seed_, "env");
    policy_rng_ = substream(seed_, "policy");
    sample_rng_ = substream(seed_, "sampling");
    update_delta_z();
  }

  const RunConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  const MazeEnv& env() const { return env_; }
  const ReprFn& phi() const { return phi_; }
  ReprFn& phi() { return phi_; }
  const Uvfa& uvfa() const { return uvfa_; }
  const LowLevelPolicy& low() const { return low_; }
  const HighLevelStudent& student() const { return student_; }
  const CountTable& table() const { return table_; }
  const EpisodeBuffer& buffer() const { return buffer_; }
  const TripletBuffer& triplets() const { return triplets_; }
  const MixSchedule& schedule() const { return schedule_; }
  MixSchedule& schedule() { return schedule_; }
  const std::optional<LandmarkGraph>& last_graph() const { return last_graph_; }
  std::int64_t env_steps() const { return env_steps_; }
  std::int64_t episodes() const { return episodes_; }
  std::int64_t graph_builds() const { return graph_builds_; }
  double latent_diameter() const { return latent_diameter_; }

  Vector encode(const Vector& state) const { return phi_.encode(state); }

  // One training episode: act, store, count, learn. `budget` caps the number
  // of steps (the episode is stored truncated).
  EpisodeSummary train_episode(int budget = std::numeric_limits<int>::max()) {
    EpisodeSummary s;
    s.seed = env_rng_();
    env_.reset(s.seed, ResetMode::Train);
    Episode ep = rollout(s, true, policy_rng_, std::min(budget, env_.spec().max_steps));
    env_steps_ += ep.length();
    ++episodes_;
    schedule_.record(ep.success);
    record_episode(table_, ep, phi_, cfg_.c, cfg_.gamma);
    buffer_.push(std::move(ep));
    novelty_.reset();
    if (latent_diameter_ <= 0.0) update_delta_z();

    train_low_level();
    if (cfg_.learn_repr && episodes_ % cfg_.repr_interval == 0) train_representation(s);
    if (episodes_ % cfg_.p_interval == 0) update_p(schedule_, schedule_.success_rate());
    s.p = schedule_.p;
    return s;
  }

  // One evaluation episode from the fixed hardest start, greedy low level.
  EpisodeSummary eval_episode(Rng& rng, Episode* trace = nullptr) {
    EpisodeSummary s;
    env_.reset(0, ResetMode::Eval);
    Episode ep = rollout(s, false, rng, env_.spec().max_steps);
    if (trace) *trace = std::move(ep);
    s.p = schedule_.p;
    return s;
  }

  // Builds a landmark graph for `state` against the current learners.
  LandmarkGraph build_graph_for(const Vector& state, Rng& rng) {
    const Vector goal = env_.goal_observation().to_vector();
    // True values are <= 0 (intrinsic rewards are); clipping keeps an
    // undertrained UVFA from creating positive relay cycles.
    auto value = [&](const Matrix& s, const Matrix& g) -> Vector { return uvfa_.value(s, g).cwiseMin(0.0); };
    auto nov = [&](const LatentPoint& z) { return novelty_of(z); };
    GraphConfig gc{cfg_.landmarks, cfg_.samples};
    return build_graph(buffer_, phi_, value, nov, gc, state, std::optional<Vector>(goal), rng, env_steps_);
  }

  double novelty_of(const LatentPoint& z) {
    const BucketKey k = table_.key(z);
    if (cfg_.novelty_mode == "incremental") return table_.occupancy(k).value_or(table_.count(k));
    if (!novelty_) novelty_.emplace(buffer_, phi_, table_, cfg_.gamma, cfg_.c);
    return novelty_->novelty(k, table_);
  }

  // Checkpoint plumbing.
  void save(std::ostream& os) const;
  void load_state(std::istream& is);

 private:
  Subgoal decide(const Vector& state, bool train, Rng& rng, EpisodeSummary& s) {
    const Vector goal_state = env_.goal_observation().to_vector();
    if (buffer_.empty()) return {phi_.encode(goal_state), goal_state, false};
    bool teacher = false;
    if (train || cfg_.eval_policy == "mix") {
      teacher = cfg_.use_graph &&
                choose_policy(schedule_.p, uniform01(rng), parse_mix_rule(cfg_.mix_rule)) == PolicyChoice::Teacher;
    } else {
      teacher = cfg_.use_graph && cfg_.eval_policy == "teacher";
    }
    if (teacher) {
      LandmarkGraph g = build_graph_for(state, rng);
      ++graph_builds_;
      ++s.graph_builds;
      ++s.teacher_decisions;
      const Selection sel = select_subgoal(g);
      const Landmark& l = g.nodes[static_cast<std::size_t>(sel.node)];
      Subgoal out{l.latent, *l.source, true};
      last_graph_ = std::move(g);
      return out;
    }
    ++s.student_decisions;
    const CandidateSet cands = student_candidates(state, goal_state, rng);
    const int pick = student_act(student_, state, cands.latents, train, rng);
    return {cands.latents.row(pick).transpose(), cands.sources.row(pick).transpose(), false};
  }

  CandidateSet student_candidates(const Vector& state, const Vector& goal_state, Rng& rng) const {
    CandidateSet c = candidate_landmarks(buffer_, phi_, cfg_.landmarks, cfg_.samples, phi_.encode(state), rng);
    const Eigen::Index n = c.latents.rows();
    c.latents.conservativeResize(n + 1, Eigen::NoChange);
    c.sources.conservativeResize(n + 1, Eigen::NoChange);
    c.latents.row(n) = phi_.encode(goal_state).transpose();
    c.sources.row(n) = goal_state.transpose();
    return c;
  }

  Episode rollout(EpisodeSummary& s, bool train, Rng& rng, int max_steps) {
    const int sdim = env_.observation().dim();
    const int d = cfg_.latent_dim;
    std::vector<Vector> states{env_.observation().to_vector()};
    Episode ep;
    std::vector<double> env_r, intr;
    std::vector<Vector> goals, sources;
    Subgoal current;
    for (int t = 0; t < max_steps; ++t) {
      const Vector& st = states.back();
      if (t % cfg_.c == 0) {
        current = decide(st, train, rng, s);
        if (train) {
          ep.teacher.push_back(current.teacher ? 1 : 0);
          for (int u = 0; u < cfg_.high_updates_per_decision; ++u) train_student(rng);
        }
      }
      const int a = low_level_act(low_, st, current.latent, train, rng);
      const StepResult r = env_.step(a);
      const Vector next = r.observation.to_vector();
      ep.actions.push_back(a);
      env_r.push_back(r.reward);
      intr.push_back(intrinsic_reward(current.latent, phi_.encode(next)));
      goals.push_back(current.latent);
      sources.push_back(current.source);
      states.push_back(next);
      s.ret += r.reward;
      if (r.done) {
        s.success = r.success;
        break;
      }
    }
    const auto n = static_cast<Eigen::Index>(ep.actions.size());
    s.length = static_cast<int>(n);
    ep.success = s.success;
    ep.states.resize(n + 1, sdim);
    for (Eigen::Index i = 0; i <= n; ++i) ep.states.row(i) = states[static_cast<std::size_t>(i)].transpose();
    ep.env_rewards = Eigen::Map<const Vector>(env_r.data(), n);
    ep.intrinsic_rewards = Eigen::Map<const Vector>(intr.data(), n);
    ep.subgoals.resize(n, d);
    ep.subgoal_sources.resize(n, sdim);
    for (Eigen::Index i = 0; i < n; ++i) {
      ep.subgoals.row(i) = goals[static_cast<std::size_t>(i)].transpose();
      ep.subgoal_sources.row(i) = sources[static_cast<std::size_t>(i)].transpose();
    }
    return ep;
  }

  // Low-level batch: original transitions with goals re-encoded from their
  // source states, plus (with HER) one relabeled copy each.
  std::vector<Transition> sample_low_level(int count) {
    std::vector<Transition> out;
    const int originals = cfg_.use_her ? std::max(1, count / 2) : count;
    std::vector<StateRef> refs;
    Matrix src(originals, phi_.model.net.input_dim());
    Matrix nxt(originals, src.cols());
    Matrix end(originals, src.cols());
    for (int i = 0; i < originals; ++i) {
      const auto ref = buffer_.sample_with_offset(sample_rng_, 1);
      if (!ref) return out;
      refs.push_back(*ref);
      const Episode& ep = buffer_[ref->episode];
      src.row(i) = ep.subgoal_sources.row(ref->t);
      nxt.row(i) = ep.states.row(ref->t + 1);
      const int seg_end = std::min((ref->t / cfg_.c) * cfg_.c + cfg_.c, ep.length());
      end.row(i) = ep.states.row(seg_end);
    }
    const Matrix g = phi_.encode(src);
    const Matrix zn = phi_.encode(nxt);
    const Matrix za = cfg_.use_her ? phi_.encode(end) : Matrix();
    for (int i = 0; i < originals; ++i) {
      const Episode& ep = buffer_[refs[static_cast<std::size_t>(i)].episode];
      const int t = refs[static_cast<std::size_t>(i)].t;
      Transition tr;
      tr.state = ep.states.row(t).transpose();
      tr.action = ep.actions[static_cast<std::size_t>(t)];
      tr.next_state = nxt.row(i).transpose();
      tr.next_latent = zn.row(i).transpose();
      tr.goal = g.row(i).transpose();
      tr.reward = intrinsic_reward(tr.goal, tr.next_latent);
      out.push_back(tr);
      if (cfg_.use_her) out.push_back(relabel(tr, za.row(i).transpose()));
    }
    return out;
  }

  void train_low_level() {
    for (int u = 0; u < cfg_.updates_per_episode; ++u) {
      const auto ts = sample_low_level(cfg_.batch_size);
      if (ts.empty()) return;
      try {
        low_level_update(low_, uvfa_, make_low_level_batch(ts, uvfa_), cfg_.tau);
      } catch (const RejectedStep& e) {
        log::warn(e.what());
      }
    }
  }

  void train_student(Rng& rng) {
    if (buffer_.empty()) return;
    HighLevelBatch b;
    const int n = cfg_.high_batch_size;
    const int sdim = phi_.model.net.input_dim();
    b.states.resize(n, sdim);
    b.next_states.resize(n, sdim);
    Matrix src(n, sdim);
    b.rewards.resize(n);
    b.discounts.resize(n);
    for (int i = 0; i < n; ++i) {
      const std::size_t e = uniform_index(sample_rng_, buffer_.size());
      const Episode& ep = buffer_[e];
      if (ep.length() == 0) return;
      const auto hl = extract_high_level(ep, cfg_.c);
      const HighLevelTransition& h = hl[uniform_index(sample_rng_, hl.size())];
      b.states.row(i) = ep.states.row(h.start);
      b.next_states.row(i) = ep.states.row(h.end);
      src.row(i) = ep.subgoal_sources.row(h.start);
      b.rewards(i) = h.reward;
      b.discounts(i) = h.terminal ? 0.0 : std::pow(cfg_.gamma, h.end - h.start);
    }
    b.goals = phi_.encode(src);
    const Vector goal_state = env_.goal_observation().to_vector();
    b.candidates = student_candidates(b.next_states.row(0).transpose(), goal_state, rng).latents;
    try {
      high_level_student_update(student_, b, cfg_.tau);
    } catch (const RejectedStep& e) {
      log::warn(e.what());
    }
  }

  void train_representation(EpisodeSummary& s) {
    phi_.snapshot();
    ReprUpdateConfig rc;
    rc.loss = {cfg_.beta, cfg_.power, cfg_.epsilon};
    rc.c = cfg_.c;
    rc.stable_fraction = cfg_.stable_fraction;
    rc.batch_size = cfg_.repr_batch;
    rc.stable_batch_size = cfg_.repr_batch;
    for (int i = 0; i < cfg_.repr_steps; ++i) {
      const auto st = repr_update(phi_, buffer_, triplets_, rc, sample_rng_);
      if (st.skipped) break;
      s.contrastive_loss += st.contrastive;
      s.stability_loss += st.stability;
      ++s.repr_steps;
    }
    if (s.repr_steps > 0) {
      s.contrastive_loss /= s.repr_steps;
      s.stability_loss /= s.repr_steps;
    }
    novelty_.reset();
    update_delta_z();
  }

  // δ_z = fraction × diameter of the representations of up to 256 stored states.
  void update_delta_z() {
    if (buffer_.empty()) {
      latent_diameter_ = 0.0;
      uvfa_.delta_z = 0.0;
      return;
    }
    Rng rng = substream(seed_ + static_cast<std::uint64_t>(episodes_), "diameter");
    const int n = static_cast<int>(std::min<std::size_t>(256, buffer_.total_states()));
    Matrix states(n, phi_.model.net.input_dim());
    for (int i = 0; i < n; ++i) states.row(i) = buffer_.state(buffer_.sample_state(rng));
    const Matrix z = phi_.encode(states);
    double diam = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) diam = std::max(diam, (z.row(i) - z.row(j)).norm());
    latent_diameter_ = diam;
    uvfa_.delta_z = cfg_.delta_z_fraction * diam;
  }

  RunConfig cfg_;
  std::uint64_t seed_;
  MazeEnv env_;
  ReprFn phi_;
  LowLevelPolicy low_;
  Uvfa uvfa_;
  HighLevelStudent student_;
  CountTable table_;
  EpisodeBuffer buffer_;
  TripletBuffer triplets_;
  MixSchedule schedule_;
  Rng env_rng_, policy_rng_, sample_rng_;
  std::optional<NoveltyIndex> novelty_;
  std::optional<LandmarkGraph> last_graph_;
  std::int64_t env_steps_ = 0;
  std::int64_t episodes_ = 0;
  std::int64_t graph_builds_ = 0;
  double latent_diameter_ = 0.0;
};

namespace detail {

inline void save_graph(std::ostream& os, const LandmarkGraph& g) {
  io::write<std::uint64_t>(os, g.nodes.size());
  for (const auto& n : g.nodes) {
    io::write_vector(os, n.latent);
    io::write<std::uint8_t>(os, n.source ? 1 : 0);
    if (n.source) io::write_vector(os, *n.source);
    io::write<double>(os, n.novelty);
    io::write<std::uint8_t>(os, static_cast<std::uint8_t>(n.kind));
  }
  io::write_matrix(os, g.u_raw);
  io::write_matrix(os, g.u_prop);
  io::write<std::int64_t>(os, g.timestamp);
  io::write<std::int32_t>(os, g.current);
  io::write<std::int32_t>(os, g.goal);
}

inline LandmarkGraph load_graph(std::istream& is) {
  LandmarkGraph g;
  const auto n = io::read<std::uint64_t>(is);
  if (n > (1u << 20)) throw CheckpointError("implausible graph size");
  for (std::uint64_t i = 0; i < n; ++i) {
    Landmark l;
    l.latent = io::read_vector(is);
    if (io::read<std::uint8_t>(is) != 0) l.source = io::read_vector(is);
    l.novelty = io::read<double>(is);
    const auto kind = io::read<std::uint8_t>(is);
    if (kind > 2) throw CheckpointError("unknown landmark kind");
    l.kind = static_cast<LandmarkKind>(kind);
    g.nodes.push_back(std::move(l));
  }
  g.u_raw = io::read_matrix(is);
  g.u_prop = io::read_matrix(is);
  g.timestamp = io::read<std::int64_t>(is);
  g.current = io::read<std::int32_t>(is);
  g.goal = io::read<std::int32_t>(is);
  return g;
}

inline void save_trainable(std::ostream& os, const Trainable& t) {
  t.net.save(os);
  t.optim.save(os);
}

inline Trainable load_trainable(std::istream& is) {
  Trainable t;
  t.net = Mlp::load(is);
  t.optim = OptimState::load(is);
  return t;
}

}  // namespace detail

// Everything after the header is agent state; the header carries the config
// and seed needed to reconstruct the agent before the state is read.
inline void Agent::save(std::ostream& os) const {
  io::write<std::int64_t>(os, env_steps_);
  io::write<std::int64_t>(os, episodes_);
  io::write<std::int64_t>(os, graph_builds_);
  io::write<double>(os, latent_diameter_);
  detail::save_trainable(os, phi_.model);
  phi_.old.save(os);
  detail::save_trainable(os, low_.q);
  low_.target.save(os);
  detail::save_trainable(os, uvfa_.model);
  io::write<double>(os, uvfa_.delta_z);
  detail::save_trainable(os, student_.q);
  student_.target.save(os);
  table_.save(os);
  buffer_.save(os);
  triplets_.save(os);
  io::write<double>(os, schedule_.p);
  io::write<std::uint64_t>(os, schedule_.recent.size());
  for (auto r : schedule_.recent) io::write<std::uint8_t>(os, r);
  io::write_string(os, rng_state(env_rng_));
  io::write_string(os, rng_state(policy_rng_));
  io::write_string(os, rng_state(sample_rng_));
  io::write<std::uint8_t>(os, last_graph_ ? 1 : 0);
  if (last_graph_) detail::save_graph(os, *last_graph_);
}

inline void Agent::load_state(std::istream& is) {
  env_steps_ = io::read<std::int64_t>(is);
  episodes_ = io::read<std::int64_t>(is);
  graph_builds_ = io::read<std::int64_t>(is);
  latent_diameter_ = io::read<double>(is);
  auto check = [](const Mlp& loaded, const Mlp& expected, const char* what) {
    if (loaded.layer_dims() != expected.layer_dims())
      throw CheckpointError(std::string("checkpoint network '") + what + "' does not match the configured shape");
  };
  Trainable phi = detail::load_trainable(is);
  check(phi.net, phi_.model.net, "phi");
  phi_.model = std::move(phi);
  phi_.old = Mlp::load(is);
  Trainable q = detail::load_trainable(is);
  check(q.net, low_.q.net, "low-level Q");
  low_.q = std::move(q);
  low_.target = Mlp::load(is);
  Trainable v = detail::load_trainable(is);
  check(v.net, uvfa_.model.net, "uvfa");
  uvfa_.model = std::move(v);
  uvfa_.delta_z = io::read<double>(is);
  Trainable h = detail::load_trainable(is);
  check(h.net, student_.q.net, "student");
  student_.q = std::move(h);
  student_.target = Mlp::load(is);
  table_ = CountTable::load(is);
  buffer_ = EpisodeBuffer::load(is);
  triplets_ = TripletBuffer::load(is);
  schedule_.p = io::read<double>(is);
  const auto n = io::read<std::uint64_t>(is);
  if (n > (1u << 24)) throw CheckpointError("implausible schedule window");
  schedule_.recent.clear();
  for (std::uint64_t i = 0; i < n; ++i) schedule_.recent.push_back(io::read<std::uint8_t>(is));
  restore_rng_state(env_rng_, io::read_string(is));
  restore_rng_state(policy_rng_, io::read_string(is));
  restore_rng_state(sample_rng_, io::read_string(is));
  if (io::read<std::uint8_t>(is) != 0) last_graph_ = detail::load_graph(is);
  else last_graph_.reset();
  novelty_.reset();
}

}  // namespace hill
