#pragma once

// Independent reference computations the library is checked against.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "hill/agent.hpp"

namespace oracle {

using hill::Matrix;
using hill::Vector;

// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

// Central differences of `loss` with respect to every parameter of `net`.
inline std::vector<double> numeric_gradient(hill::Mlp& net, const std::function<double()>& loss, double h = 1e-5) {
  std::vector<double> p = net.parameters();
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    net.set_parameters(p);
    const double up = loss();
    p[i] = keep - h;
    net.set_parameters(p);
    const double down = loss();
    p[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  net.set_parameters(p);
  return g;
}

// Best total utility over simple relay paths i -> ... -> f.
inline double best_simple_path(const Matrix& u, int i, int f) {
  const int y = static_cast<int>(u.rows());
  double best = -std::numeric_limits<double>::infinity();
  std::vector<char> used(static_cast<std::size_t>(y), 0);
  std::function<void(int, double)> walk = [&](int at, double acc) {
    if (at == f) {
      best = std::max(best, acc);
      return;
    }
    used[static_cast<std::size_t>(at)] = 1;
    for (int nx = 0; nx < y; ++nx)
      if (!used[static_cast<std::size_t>(nx)]) walk(nx, acc + u(at, nx));
    used[static_cast<std::size_t>(at)] = 0;
  };
  walk(i, 0.0);
  return best;
}

// Optimal k-center radius with centers drawn from the points themselves.
inline double optimal_k_center(const std::vector<Vector>& pts, int m) {
  const int n = static_cast<int>(pts.size());
  const int k = std::min(m, n);
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> pick(static_cast<std::size_t>(k));
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == k) {
      std::vector<Vector> centers;
      for (int i : pick) centers.push_back(pts[static_cast<std::size_t>(i)]);
      best = std::min(best, hill::coverage_radius(pts, centers));
      return;
    }
    for (int i = start; i < n; ++i) {
      pick[static_cast<std::size_t>(depth)] = i;
      rec(i + 1, depth + 1);
    }
  };
  rec(0, 0);
  return best;
}

// η recount: every decision-index state of every episode, bucketed.
inline std::map<hill::BucketKey, double> recount(const std::vector<hill::Episode>& episodes, const hill::ReprFn& phi,
                                                 const hill::CountTable& table, int c) {
  std::map<hill::BucketKey, double> out;
  for (const auto& ep : episodes)
    for (int i = 0; i < ep.length(); i += c) out[table.key(phi.encode(Vector(ep.states.row(i).transpose())))] += 1.0;
  return out;
}

// Novelty written out term by term: for each trajectory and each decision
// index i whose bucket matches, sum_j γ^j η(bucket(φ(s_{i+jc}))) over the
// decision indices i + jc < T. Falls back to η(bucket(l)) when nothing matches.
inline double literal_novelty(const Vector& landmark, const hill::EpisodeBuffer& buffer, const hill::ReprFn& phi,
                              const hill::CountTable& table, double gamma, int c) {
  const auto target = table.key(landmark);
  double n = 0.0;
  bool any = false;
  for (std::size_t e = 0; e < buffer.size(); ++e) {
    const auto& ep = buffer[e];
    const int len = ep.length();
    for (int i = 0; i < len; i += c) {
      if (table.key(phi.encode(Vector(ep.states.row(i).transpose()))) != target) continue;
      any = true;
      for (int j = 0; i + j * c < len; ++j) {
        const Vector z = phi.encode(Vector(ep.states.row(i + j * c).transpose()));
        n += std::pow(gamma, j) * table.count(table.key(z));
      }
    }
  }
  return any ? n : table.count(target);
}

// A random episode of `len` steps with states of dimension `sdim`.
inline hill::Episode random_episode(int len, int sdim, int d, hill::Rng& rng) {
  hill::Episode ep;
  ep.states.resize(len + 1, sdim);
  for (int r = 0; r <= len; ++r)
    for (int k = 0; k < sdim; ++k) ep.states(r, k) = hill::uniform(rng, -2.0, 2.0);
  ep.actions.resize(static_cast<std::size_t>(len));
  for (auto& a : ep.actions) a = static_cast<int>(hill::uniform_index(rng, hill::kNumActions));
  ep.env_rewards = Vector::Constant(len, -1.0);
  ep.intrinsic_rewards = Vector::Zero(len);
  ep.subgoals = Matrix::Zero(len, d);
  ep.subgoal_sources = Matrix::Zero(len, sdim);
  return ep;
}

// Soft value iteration on a deterministic tabular MDP: next[s][a], reward[s][a],
// terminal[s][a] (σ = 0). V(s) = α log Σ_a exp(Q(s,a)/α).
inline std::vector<std::vector<double>> soft_value_iteration(const std::vector<std::vector<int>>& next,
                                                             const std::vector<std::vector<double>>& reward,
                                                             const std::vector<std::vector<char>>& terminal,
                                                             double gamma, double alpha, int iters = 5000) {
  const std::size_t ns = next.size();
  const std::size_t na = next[0].size();
  std::vector<std::vector<double>> q(ns, std::vector<double>(na, 0.0));
  for (int it = 0; it < iters; ++it) {
    std::vector<double> v(ns);
    for (std::size_t s = 0; s < ns; ++s) {
      const double mx = *std::max_element(q[s].begin(), q[s].end());
      double acc = 0.0;
      for (double x : q[s]) acc += std::exp((x - mx) / alpha);
      v[s] = mx + alpha * std::log(acc);
    }
    for (std::size_t s = 0; s < ns; ++s)
      for (std::size_t a = 0; a < na; ++a)
        q[s][a] = reward[s][a] + (terminal[s][a] ? 0.0 : gamma * v[static_cast<std::size_t>(next[s][a])]);
  }
  return q;
}

}  // namespace oracle
