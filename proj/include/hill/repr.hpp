#pragma once

// Subgoal representation learning: a negative-power contrastive objective
// over (s_t, s_{t+1}, s_{t+c}) triplets plus a stability term that anchors
// well-fitted triplets to a frozen snapshot of the encoder.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <iostream>
#include <numeric>
#include <vector>

#include "hill/diffnet.hpp"
#include "hill/episode.hpp"
#include "hill/errors.hpp"
#include "hill/log.hpp"
#include "hill/rng.hpp"

namespace hill {

struct ContrastiveParams {
  double beta = 0.1;
  double power = 1.0;  // n
  double epsilon = 1e-6;
};

struct TripletGrad {
  Vector anchor, positive, negative;  // d/dz_t, d/dz_{t+1}, d/dz_{t+c}
};

inline double contrastive_loss(const Vector& anchor, const Vector& positive, const Vector& negative,
                               const ContrastiveParams& p) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size())
    throw DimensionError("triplet points differ in dimension");
  const double dist = (anchor - negative).norm();
  return (anchor - positive).squaredNorm() + p.beta / (std::pow(dist, p.power) + p.epsilon);
}

// Closed-form gradient. At a coincident negative pair the norm has no
// gradient and the repulsive term contributes zero.
inline TripletGrad contrastive_gradient(const Vector& anchor, const Vector& positive, const Vector& negative,
                                        const ContrastiveParams& p) {
  TripletGrad g;
  const Vector pull = 2.0 * (anchor - positive);
  g.anchor = pull;
  g.positive = -pull;
  const Vector diff = anchor - negative;
  const double dist = diff.norm();
  g.negative = Vector::Zero(anchor.size());
  if (dist > 0.0) {
    const double denom = std::pow(dist, p.power) + p.epsilon;
    const double coeff = -p.beta * p.power * std::pow(dist, p.power - 2.0) / (denom * denom);
    g.anchor += coeff * diff;
    g.negative = -coeff * diff;
  }
  return g;
}

// Mean of ||z - z_old|| over rows; 0 for an empty batch.
inline double stability_loss(const Matrix& latents, const Matrix& old_latents) {
  if (latents.rows() != old_latents.rows() || latents.cols() != old_latents.cols())
    throw DimensionError("stability loss inputs differ in shape");
  if (latents.rows() == 0) return 0.0;
  return (latents - old_latents).rowwise().norm().mean();
}

inline Matrix stability_gradient(const Matrix& latents, const Matrix& old_latents) {
  Matrix g = Matrix::Zero(latents.rows(), latents.cols());
  if (latents.rows() == 0) return g;
  for (Eigen::Index r = 0; r < latents.rows(); ++r) {
    const Vector diff = (latents.row(r) - old_latents.row(r)).transpose();
    const double n = diff.norm();
    if (n > 0.0) g.row(r) = diff.transpose() / n;
  }
  return g / static_cast<double>(latents.rows());
}

// φ together with its frozen snapshot φ_old.
struct ReprFn {
  Trainable model;
  Mlp old;

  ReprFn() = default;
  ReprFn(int state_dim, int latent_dim, std::vector<int> hidden, AdamConfig optim, Rng& rng) {
    std::vector<int> dims{state_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(latent_dim);
    model = Trainable(Mlp(dims, Activation::Tanh, rng), optim);
    old = model.net;
  }

  int dim() const { return model.net.output_dim(); }
  Matrix encode(const Matrix& states) const { return model.net.forward(states); }
  Vector encode(const Vector& state) const { return model.net.forward(state.transpose()).row(0).transpose(); }
  void snapshot() { old = model.net; }
};

struct TripletRecord {
  Vector anchor, positive, negative;  // s_t, s_{t+1}, s_{t+c}
  double loss = 0.0;
  std::uint64_t seq = 0;  // insertion order
};

// Bounded FIFO of triplets with their newest contrastive losses (B_p).
class TripletBuffer {
 public:
  explicit TripletBuffer(std::size_t capacity = 10000) : capacity_(capacity) {}

  std::size_t size() const { return records_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return records_.empty(); }
  const TripletRecord& operator[](std::size_t i) const { return records_[i]; }
  TripletRecord& operator[](std::size_t i) { return records_[i]; }

  void push(TripletRecord r) {
    if (capacity_ == 0) return;
    r.seq = next_seq_++;
    records_.push_back(std::move(r));
    while (records_.size() > capacity_) records_.pop_front();
  }

  void save(std::ostream& os) const {
    io::write<std::uint64_t>(os, capacity_);
    io::write<std::uint64_t>(os, next_seq_);
    io::write<std::uint64_t>(os, records_.size());
    for (const auto& r : records_) {
      io::write_vector(os, r.anchor);
      io::write_vector(os, r.positive);
      io::write_vector(os, r.negative);
      io::write<double>(os, r.loss);
      io::write<std::uint64_t>(os, r.seq);
    }
  }

  static TripletBuffer load(std::istream& is) {
    TripletBuffer b(io::read<std::uint64_t>(is));
    b.next_seq_ = io::read<std::uint64_t>(is);
    const auto n = io::read<std::uint64_t>(is);
    if (n > b.capacity_) throw CheckpointError("triplet buffer holds more records than its capacity");
    for (std::uint64_t i = 0; i < n; ++i) {
      TripletRecord r;
      r.anchor = io::read_vector(is);
      r.positive = io::read_vector(is);
      r.negative = io::read_vector(is);
      r.loss = io::read<double>(is);
      r.seq = io::read<std::uint64_t>(is);
      b.records_.push_back(std::move(r));
    }
    return b;
  }

 private:
  std::size_t capacity_;
  std::uint64_t next_seq_ = 0;
  std::deque<TripletRecord> records_;
};

// Indices of the ceil(k * |B_p|) records with the smallest losses, ascending,
// ties broken by insertion order.
inline std::vector<std::size_t> topk_stable(const TripletBuffer& buffer, double k) {
  if (k < 0.0 || k > 1.0) throw DimensionError("stable fraction k must lie in [0, 1]");
  const auto n = buffer.size();
  // guard against k * n landing a hair above an integer (0.3 * 10)
  const auto take = std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(k * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (buffer[a].loss != buffer[b].loss) return buffer[a].loss < buffer[b].loss;
    return buffer[a].seq < buffer[b].seq;
  });
  idx.resize(take);
  return idx;
}

struct TripletBatch {
  Matrix anchor, positive, negative;  // B x state_dim each
  Eigen::Index size() const { return anchor.rows(); }
};

// Combined objective: mean contrastive loss over `triplets` plus mean
// stability loss over `stable_states`. Gradients are summed term by term.
struct ReprLoss {
  double contrastive = 0.0;
  double stability = 0.0;
  Vector per_triplet;  // contrastive loss of each triplet
  Gradients grads;
  double total() const { return contrastive + stability; }
};

inline ReprLoss representation_loss(const ReprFn& phi, const TripletBatch& triplets, const Matrix& stable_states,
                                    const ContrastiveParams& params) {
  const Mlp& net = phi.model.net;
  ReprLoss out;
  out.grads = net.zero_gradients();
  const Eigen::Index b = triplets.size();
  out.per_triplet = Vector::Zero(b);
  if (b > 0) {
    Matrix stacked(3 * b, triplets.anchor.cols());
    stacked << triplets.anchor, triplets.positive, triplets.negative;
    Tape tape;
    const Matrix z = net.forward(stacked, tape);
    Matrix upstream(3 * b, z.cols());
    for (Eigen::Index i = 0; i < b; ++i) {
      const Vector za = z.row(i).transpose();
      const Vector zp = z.row(b + i).transpose();
      const Vector zn = z.row(2 * b + i).transpose();
      out.per_triplet(i) = contrastive_loss(za, zp, zn, params);
      const TripletGrad g = contrastive_gradient(za, zp, zn, params);
      upstream.row(i) = g.anchor.transpose();
      upstream.row(b + i) = g.positive.transpose();
      upstream.row(2 * b + i) = g.negative.transpose();
    }
    out.contrastive = out.per_triplet.mean();
    upstream /= static_cast<double>(b);
    out.grads += net.backward(tape, upstream);
  }
  if (stable_states.rows() > 0) {
    Tape tape;
    const Matrix z = net.forward(stable_states, tape);
    const Matrix z_old = phi.old.forward(stable_states);
    out.stability = stability_loss(z, z_old);
    out.grads += net.backward(tape, stability_gradient(z, z_old));
  }
  return out;
}

inline Vector contrastive_losses(const ReprFn& phi, const TripletBatch& t, const ContrastiveParams& params) {
  Vector out(t.size());
  if (t.size() == 0) return out;
  const Matrix za = phi.encode(t.anchor);
  const Matrix zp = phi.encode(t.positive);
  const Matrix zn = phi.encode(t.negative);
  for (Eigen::Index i = 0; i < t.size(); ++i)
    out(i) = contrastive_loss(za.row(i).transpose(), zp.row(i).transpose(), zn.row(i).transpose(), params);
  return out;
}

struct ReprUpdateConfig {
  ContrastiveParams loss;
  int c = 10;
  double stable_fraction = 0.3;  // k
  int batch_size = 128;
  int stable_batch_size = 128;  // stable triplets drawn from the top-k set per step
};

struct ReprUpdateStats {
  bool skipped = false;
  double contrastive = 0.0;
  double stability = 0.0;
};

// One optimizer step on the combined objective. Sampled triplets are written
// into B_p with their losses re-evaluated after the step; the stable records
// used for regularization get their losses refreshed too.
inline ReprUpdateStats repr_update(ReprFn& phi, const EpisodeBuffer& episodes, TripletBuffer& triplets,
                                   const ReprUpdateConfig& cfg, Rng& rng) {
  ReprUpdateStats stats;
  const int state_dim = episodes.empty() ? 0 : episodes[0].state_dim();
  TripletBatch batch;
  batch.anchor.resize(cfg.batch_size, state_dim);
  batch.positive.resize(cfg.batch_size, state_dim);
  batch.negative.resize(cfg.batch_size, state_dim);
  for (int i = 0; i < cfg.batch_size; ++i) {
    const auto ref = episodes.sample_with_offset(rng, cfg.c);
    if (!ref) {
      log::warn("no stored episode is longer than c=" + std::to_string(cfg.c) + "; representation update skipped");
      stats.skipped = true;
      return stats;
    }
    const Episode& ep = episodes[ref->episode];
    batch.anchor.row(i) = ep.states.row(ref->t);
    batch.positive.row(i) = ep.states.row(ref->t + 1);
    batch.negative.row(i) = ep.states.row(ref->t + cfg.c);
  }

  std::vector<std::size_t> stable = topk_stable(triplets, cfg.stable_fraction);
  if (static_cast<int>(stable.size()) > cfg.stable_batch_size) {
    // partial Fisher-Yates: a uniform subset of the stable set
    for (int i = 0; i < cfg.stable_batch_size; ++i) {
      const std::size_t j = static_cast<std::size_t>(i) + uniform_index(rng, stable.size() - static_cast<std::size_t>(i));
      std::swap(stable[static_cast<std::size_t>(i)], stable[j]);
    }
    stable.resize(static_cast<std::size_t>(cfg.stable_batch_size));
  }
  Matrix stable_states(static_cast<Eigen::Index>(stable.size()), state_dim);
  for (std::size_t i = 0; i < stable.size(); ++i) stable_states.row(static_cast<Eigen::Index>(i)) = triplets[stable[i]].anchor.transpose();

  const ReprLoss loss = representation_loss(phi, batch, stable_states, cfg.loss);
  stats.contrastive = loss.contrastive;
  stats.stability = loss.stability;
  phi.model.step(loss.grads);

  if (!stable.empty()) {
    TripletBatch used;
    used.anchor.resize(static_cast<Eigen::Index>(stable.size()), state_dim);
    used.positive.resizeLike(used.anchor);
    used.negative.resizeLike(used.anchor);
    for (std::size_t i = 0; i < stable.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      used.anchor.row(r) = triplets[stable[i]].anchor.transpose();
      used.positive.row(r) = triplets[stable[i]].positive.transpose();
      used.negative.row(r) = triplets[stable[i]].negative.transpose();
    }
    const Vector fresh = contrastive_losses(phi, used, cfg.loss);
    for (std::size_t i = 0; i < stable.size(); ++i) triplets[stable[i]].loss = fresh(static_cast<Eigen::Index>(i));
  }
  const Vector fresh = contrastive_losses(phi, batch, cfg.loss);
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    TripletRecord r;
    r.anchor = batch.anchor.row(i).transpose();
    r.positive = batch.positive.row(i).transpose();
    r.negative = batch.negative.row(i).transpose();
    r.loss = fresh(i);
    triplets.push(std::move(r));
  }
  return stats;
}

}  // namespace hill
