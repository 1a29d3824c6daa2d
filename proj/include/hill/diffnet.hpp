#pragma once

// Small multilayer perceptrons with reverse-mode gradients and an Adam
// optimizer. Rows of a batch matrix are samples.

#include <Eigen/Core>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hill/errors.hpp"
#include "hill/rng.hpp"
#include "hill/serialize.hpp"

namespace hill {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation : std::uint8_t { Identity = 0, Tanh = 1, Relu = 2 };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
  }
  return "?";
}

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Identity;
};

// Parameter gradients, laid out like the network's layers.
struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;  // d loss / d input, B x in

  Gradients& operator+=(const Gradients& o) {
    if (o.weight.size() != weight.size()) throw DimensionError("gradient layouts differ");
    for (std::size_t l = 0; l < weight.size(); ++l) {
      weight[l] += o.weight[l];
      bias[l] += o.bias[l];
    }
    return *this;
  }

  Gradients& operator*=(double s) {
    for (std::size_t l = 0; l < weight.size(); ++l) {
      weight[l] *= s;
      bias[l] *= s;
    }
    return *this;
  }

  std::vector<double> flat() const {
    std::vector<double> out;
    for (std::size_t l = 0; l < weight.size(); ++l) {
      for (Eigen::Index r = 0; r < weight[l].rows(); ++r)
        for (Eigen::Index c = 0; c < weight[l].cols(); ++c) out.push_back(weight[l](r, c));
      for (Eigen::Index i = 0; i < bias[l].size(); ++i) out.push_back(bias[l](i));
    }
    return out;
  }
};

class Mlp;

// Activations recorded by a forward pass, consumed by backward.
class Tape {
 public:
  bool empty() const { return inputs_.empty(); }
  Eigen::Index batch() const { return empty() ? 0 : inputs_.front().rows(); }

 private:
  friend class Mlp;
  std::uint64_t net_id_ = 0;
  std::uint64_t net_version_ = 0;
  std::vector<Matrix> inputs_;   // input of each layer
  std::vector<Matrix> outputs_;  // post-activation output of each layer
};

class Mlp {
 public:
  Mlp() : id_(next_id()) {}

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; output layer is linear.
  Mlp(std::vector<int> layer_dims, Activation hidden, Rng& rng) : id_(next_id()) {
    if (layer_dims.size() < 2) throw DimensionError("an Mlp needs at least an input and an output dimension");
    for (int d : layer_dims)
      if (d <= 0) throw DimensionError("layer dimensions must be positive");
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
      const int in = layer_dims[l];
      const int out = layer_dims[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      Layer layer;
      layer.weight.resize(out, in);
      layer.bias.resize(out);
      for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) layer.weight(r, c) = uniform(rng, -bound, bound);
      for (int r = 0; r < out; ++r) layer.bias(r) = uniform(rng, -bound, bound);
      layer.activation = (l + 2 == layer_dims.size()) ? Activation::Identity : hidden;
      layers_.push_back(std::move(layer));
    }
  }

  explicit Mlp(std::vector<Layer> layers) : id_(next_id()), layers_(std::move(layers)) {
    if (layers_.empty()) throw DimensionError("an Mlp needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].bias.size() != layers_[l].weight.rows())
        throw DimensionError("bias length does not match weight rows");
      if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows())
        throw DimensionError("consecutive layer shapes do not chain");
    }
  }

  Mlp(const Mlp& o) : id_(next_id()), version_(o.version_), layers_(o.layers_) {}
  Mlp& operator=(const Mlp& o) {
    if (this != &o) {
      layers_ = o.layers_;
      ++version_;
    }
    return *this;
  }
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  int input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers_.back().weight.rows()); }

  std::vector<int> layer_dims() const {
    std::vector<int> dims{input_dim()};
    for (const auto& l : layers_) dims.push_back(static_cast<int>(l.weight.rows()));
    return dims;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  const std::vector<Layer>& layers() const { return layers_; }
  std::uint64_t version() const { return version_; }

  Matrix forward(const Matrix& input) const {
    check_input(input);
    Matrix x = input;
    for (const auto& layer : layers_) x = apply(layer, x);
    return x;
  }

  Matrix forward(const Matrix& input, Tape& tape) const {
    check_input(input);
    tape.net_id_ = id_;
    tape.net_version_ = version_;
    tape.inputs_.clear();
    tape.outputs_.clear();
    Matrix x = input;
    for (const auto& layer : layers_) {
      tape.inputs_.push_back(x);
      x = apply(layer, x);
      tape.outputs_.push_back(x);
    }
    return x;
  }

  // Gradient of sum_b <upstream_b, output_b> with respect to every parameter
  // and to the input. Does not modify the network.
  Gradients backward(const Tape& tape, const Matrix& upstream) const {
    if (tape.empty()) throw StateError("backward called without a recorded forward pass");
    if (tape.net_id_ != id_ || tape.net_version_ != version_)
      throw StateError("tape was recorded on a different network or parameter version");
    if (upstream.rows() != tape.batch() || upstream.cols() != output_dim())
      throw DimensionError("upstream gradient shape does not match the recorded forward pass");
    Gradients g;
    g.weight.resize(layers_.size());
    g.bias.resize(layers_.size());
    Matrix delta = upstream;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const Layer& layer = layers_[i];
      const Matrix& out = tape.outputs_[i];
      switch (layer.activation) {
        case Activation::Identity: break;
        case Activation::Tanh: delta.array() *= (1.0 - out.array().square()); break;
        case Activation::Relu: delta.array() *= (out.array() > 0.0).cast<double>(); break;
      }
      g.weight[i] = delta.transpose() * tape.inputs_[i];
      g.bias[i] = delta.colwise().sum().transpose();
      delta = delta * layer.weight;
    }
    g.input = std::move(delta);
    return g;
  }

  Gradients zero_gradients() const {
    Gradients g;
    for (const auto& l : layers_) {
      g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
  }

  // Parameters flattened layer by layer: weights row-major, then bias.
  std::vector<double> parameters() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out.push_back(l.weight(r, c));
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) out.push_back(l.bias(i));
    }
    return out;
  }

  void set_parameters(const std::vector<double>& p) {
    if (p.size() != parameter_count()) throw DimensionError("parameter vector has the wrong length");
    std::size_t k = 0;
    for (auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = p[k++];
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = p[k++];
    }
    ++version_;
  }

  // Mutable access for optimizers; bumps the version so stale tapes are refused.
  std::vector<Layer>& mutable_layers() {
    ++version_;
    return layers_;
  }

  // Polyak averaging toward `source`: this <- (1 - tau) this + tau source.
  void soft_update(const Mlp& source, double tau) {
    if (source.layer_dims() != layer_dims()) throw DimensionError("soft_update between differently shaped networks");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].weight = (1.0 - tau) * layers_[l].weight + tau * source.layers_[l].weight;
      layers_[l].bias = (1.0 - tau) * layers_[l].bias + tau * source.layers_[l].bias;
    }
    ++version_;
  }

  static constexpr const char* kMagic = "HILLMLP";
  static constexpr std::uint32_t kFormatVersion = 1;

  void save(std::ostream& os) const {
    os.write(kMagic, 7);
    io::write<std::uint32_t>(os, kFormatVersion);
    io::write<std::uint32_t>(os, static_cast<std::uint32_t>(layers_.size()));
    for (const auto& l : layers_) {
      io::write<std::uint8_t>(os, static_cast<std::uint8_t>(l.activation));
      io::write_matrix(os, l.weight);
      io::write_vector(os, l.bias);
    }
  }

  static Mlp load(std::istream& is) {
    io::expect_magic(is, kMagic);
    const auto version = io::read<std::uint32_t>(is);
    if (version != kFormatVersion)
      throw CheckpointError("unsupported Mlp format version " + std::to_string(version));
    const auto n = io::read<std::uint32_t>(is);
    if (n == 0 || n > 64) throw CheckpointError("implausible layer count");
    std::vector<Layer> layers(n);
    for (auto& l : layers) {
      const auto act = io::read<std::uint8_t>(is);
      if (act > 2) throw CheckpointError("unknown activation code");
      l.activation = static_cast<Activation>(act);
      l.weight = io::read_matrix(is);
      l.bias = io::read_vector(is);
    }
    try {
      return Mlp(std::move(layers));
    } catch (const DimensionError& e) {
      throw CheckpointError(std::string("inconsistent Mlp in stream: ") + e.what());
    }
  }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  void check_input(const Matrix& input) const {
    if (input.cols() != input_dim()) {
      std::ostringstream msg;
      msg << "input has " << input.cols() << " columns, network expects " << input_dim();
      throw DimensionError(msg.str());
    }
  }

  static Matrix apply(const Layer& layer, const Matrix& x) {
    Matrix y = x * layer.weight.transpose();
    y.rowwise() += layer.bias.transpose();
    switch (layer.activation) {
      case Activation::Identity: break;
      case Activation::Tanh: y = y.array().tanh().matrix(); break;
      case Activation::Relu: y = y.cwiseMax(0.0); break;
    }
    return y;
  }

  std::uint64_t id_;
  std::uint64_t version_ = 0;
  std::vector<Layer> layers_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

struct OptimState {
  AdamConfig config;
  std::vector<Matrix> m_weight, v_weight;
  std::vector<Vector> m_bias, v_bias;
  std::uint64_t step = 0;

  OptimState() = default;
  OptimState(const Mlp& net, AdamConfig cfg) : config(cfg) {
    for (const auto& l : net.layers()) {
      m_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      v_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      m_bias.push_back(Vector::Zero(l.bias.size()));
      v_bias.push_back(Vector::Zero(l.bias.size()));
    }
  }

  void save(std::ostream& os) const {
    io::write(os, config);
    io::write<std::uint64_t>(os, step);
    io::write<std::uint32_t>(os, static_cast<std::uint32_t>(m_weight.size()));
    for (std::size_t l = 0; l < m_weight.size(); ++l) {
      io::write_matrix(os, m_weight[l]);
      io::write_matrix(os, v_weight[l]);
      io::write_vector(os, m_bias[l]);
      io::write_vector(os, v_bias[l]);
    }
  }

  static OptimState load(std::istream& is) {
    OptimState s;
    s.config = io::read<AdamConfig>(is);
    s.step = io::read<std::uint64_t>(is);
    const auto n = io::read<std::uint32_t>(is);
    if (n > 64) throw CheckpointError("implausible optimizer layer count");
    for (std::uint32_t l = 0; l < n; ++l) {
      s.m_weight.push_back(io::read_matrix(is));
      s.v_weight.push_back(io::read_matrix(is));
      s.m_bias.push_back(io::read_vector(is));
      s.v_bias.push_back(io::read_vector(is));
    }
    return s;
  }
};

inline double gradient_norm(const Gradients& g) {
  double sq = 0.0;
  for (std::size_t l = 0; l < g.weight.size(); ++l) sq += g.weight[l].squaredNorm() + g.bias[l].squaredNorm();
  return std::sqrt(sq);
}

// One Adam update of `net` against `grads`, in place.
inline void optim_step(Mlp& net, const Gradients& grads, OptimState& state) {
  const auto& layers = net.layers();
  if (grads.weight.size() != layers.size() || state.m_weight.size() != layers.size())
    throw DimensionError("gradients or optimizer state do not match the network layout");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads.weight[l].rows() != layers[l].weight.rows() || grads.weight[l].cols() != layers[l].weight.cols() ||
        grads.bias[l].size() != layers[l].bias.size())
      throw DimensionError("gradient shape mismatch at layer " + std::to_string(l));
    if (!grads.weight[l].allFinite() || !grads.bias[l].allFinite())
      throw RejectedStep("non-finite gradient at layer " + std::to_string(l) + "; step rejected");
  }
  const AdamConfig& c = state.config;
  double scale = 1.0;
  if (c.clip_norm > 0.0) {
    const double norm = gradient_norm(grads);
    if (norm > c.clip_norm) scale = c.clip_norm / norm;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  auto& mut = net.mutable_layers();
  for (std::size_t l = 0; l < mut.size(); ++l) {
    state.m_weight[l] = c.beta1 * state.m_weight[l] + (1.0 - c.beta1) * scale * grads.weight[l];
    state.v_weight[l] = c.beta2 * state.v_weight[l] + (1.0 - c.beta2) * (scale * grads.weight[l]).cwiseAbs2();
    state.m_bias[l] = c.beta1 * state.m_bias[l] + (1.0 - c.beta1) * scale * grads.bias[l];
    state.v_bias[l] = c.beta2 * state.v_bias[l] + (1.0 - c.beta2) * (scale * grads.bias[l]).cwiseAbs2();
    mut[l].weight.array() -= c.learning_rate * (state.m_weight[l].array() / bc1) /
                             ((state.v_weight[l].array() / bc2).sqrt() + c.epsilon);
    mut[l].bias.array() -=
        c.learning_rate * (state.m_bias[l].array() / bc1) / ((state.v_bias[l].array() / bc2).sqrt() + c.epsilon);
  }
}

// A network with its optimizer, the unit every learner trains.
struct Trainable {
  Mlp net;
  OptimState optim;

  Trainable() = default;
  Trainable(Mlp n, AdamConfig cfg) : net(std::move(n)), optim(net, cfg) {}

  void step(const Gradients& g) { optim_step(net, g, optim); }
};

// Row-wise helpers shared by the learners.
inline Matrix hcat(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("hcat row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

inline Vector row_logsumexp(const Matrix& x, double temperature) {
  Vector out(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    out(r) = mx + temperature * std::log(((x.row(r).array() - mx) / temperature).exp().sum());
  }
  return out;
}

}  // namespace hill
