#include <gtest/gtest.h>

#include <sstream>

#include "hill/diffnet.hpp"
#include "oracles.hpp"

using namespace hill;

namespace {

Mlp linear(Matrix w, Vector b) {
  Layer l;
  l.weight = std::move(w);
  l.bias = std::move(b);
  return Mlp({l});
}

}  // namespace

TEST(Forward, ZeroParametersGiveZeroOutput) {
  Rng rng(1);
  Mlp net({3, 5, 2}, Activation::Tanh, rng);
  net.set_parameters(std::vector<double>(net.parameter_count(), 0.0));
  Matrix x = Matrix::Random(4, 3);
  EXPECT_TRUE(net.forward(x).isZero(0.0));
}

TEST(Forward, HandMatrixProduct) {
  Matrix w(2, 2);
  w << 2, 0, 0, 3;
  Mlp net = linear(w, Vector::Zero(2));
  Matrix x(1, 2);
  x << 1, 1;
  const Matrix y = net.forward(x);
  EXPECT_EQ(y(0, 0), 2.0);
  EXPECT_EQ(y(0, 1), 3.0);
}

TEST(Forward, DuplicatedRowsGiveIdenticalOutputs) {
  Rng rng(2);
  Mlp net({4, 16, 16, 3}, Activation::Relu, rng);
  Matrix x(2, 4);
  x.row(0) << 0.1, -0.4, 2.0, 0.7;
  x.row(1) = x.row(0);
  const Matrix y = net.forward(x);
  EXPECT_EQ(y.row(0), y.row(1));
}

TEST(Forward, RejectsWrongInputWidth) {
  Rng rng(3);
  Mlp net({3, 4, 1}, Activation::Tanh, rng);
  EXPECT_THROW(net.forward(Matrix::Zero(2, 5)), DimensionError);
}

TEST(Forward, ShapeFollowsLayerDims) {
  Rng rng(4);
  Mlp net({6, 8, 8, 17}, Activation::Relu, rng);
  EXPECT_EQ(net.layer_dims(), (std::vector<int>{6, 8, 8, 17}));
  EXPECT_EQ(net.forward(Matrix::Zero(9, 6)).rows(), 9);
  EXPECT_EQ(net.forward(Matrix::Zero(9, 6)).cols(), 17);
  EXPECT_EQ(net.parameter_count(), std::size_t(6 * 8 + 8 + 8 * 8 + 8 + 8 * 17 + 17));
  EXPECT_THROW(Mlp({3}, Activation::Relu, rng), DimensionError);
}

TEST(Backward, OneByOneAnalyticCase) {
  Matrix w(1, 1);
  w << 1.0;
  Mlp net = linear(w, Vector::Zero(1));
  Matrix x(1, 1);
  x << 2.0;
  Tape tape;
  const Matrix y = net.forward(x, tape);
  // loss = ½ y², upstream = y
  const Gradients g = net.backward(tape, y);
  EXPECT_DOUBLE_EQ(g.weight[0](0, 0), 4.0);
}

TEST(Backward, MatchesFiniteDifferencesOnTanhNet) {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    Mlp net({3, 7, 5, 2}, Activation::Tanh, rng);
    Matrix x = Matrix::Random(6, 3);
    Matrix target = Matrix::Random(6, 2);
    auto loss = [&] { return 0.5 * (net.forward(x) - target).squaredNorm(); };
    Tape tape;
    const Matrix y = net.forward(x, tape);
    const auto analytic = net.backward(tape, y - target).flat();
    const auto numeric = oracle::numeric_gradient(net, loss);
    EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-4) << "seed " << seed;
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(5);
  Mlp net({3, 4, 2}, Activation::Tanh, rng);
  Tape tape;
  net.forward(Matrix::Random(5, 3), tape);
  for (double v : net.backward(tape, Matrix::Zero(5, 2)).flat()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, WithoutForwardIsAStateError) {
  Rng rng(6);
  Mlp net({2, 3, 1}, Activation::Tanh, rng);
  Tape tape;
  EXPECT_THROW(net.backward(tape, Matrix::Zero(1, 1)), StateError);
  Mlp other({2, 3, 1}, Activation::Tanh, rng);
  other.forward(Matrix::Zero(1, 2), tape);
  EXPECT_THROW(net.backward(tape, Matrix::Zero(1, 1)), StateError);
}

TEST(Backward, StaleTapeAfterUpdateIsRefused) {
  Rng rng(7);
  Trainable t(Mlp({2, 3, 1}, Activation::Tanh, rng), AdamConfig{});
  Tape tape;
  const Matrix y = t.net.forward(Matrix::Ones(1, 2), tape);
  t.step(t.net.backward(tape, y));
  EXPECT_THROW(t.net.backward(tape, y), StateError);
}

TEST(Backward, IsPureInTheWeights) {
  Rng rng(8);
  Mlp net({3, 4, 2}, Activation::Relu, rng);
  const auto before = net.parameters();
  Tape tape;
  const Matrix y = net.forward(Matrix::Random(3, 3), tape);
  net.backward(tape, y);
  EXPECT_EQ(net.parameters(), before);
}

TEST(Optim, ZeroGradientsLeaveParametersUnchanged) {
  Rng rng(9);
  Trainable t(Mlp({3, 4, 2}, Activation::Tanh, rng), AdamConfig{});
  const auto before = t.net.parameters();
  t.step(t.net.zero_gradients());
  EXPECT_EQ(t.net.parameters(), before);
  EXPECT_EQ(t.optim.step, 1u);
}

TEST(Optim, FirstStepMovesByLearningRateAgainstGradient) {
  Mlp net = linear(Matrix::Constant(1, 1, 0.5), Vector::Zero(1));
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  OptimState st(net, cfg);
  Gradients g = net.zero_gradients();
  g.weight[0](0, 0) = 3.0;
  optim_step(net, g, st);
  // bias-corrected first step: lr * g / (|g| + eps)
  EXPECT_NEAR(net.layers()[0].weight(0, 0), 0.5 - 0.01 * 3.0 / (3.0 + 1e-8), 1e-15);
  g.weight[0](0, 0) = -2.0;
  Mlp net2 = linear(Matrix::Constant(1, 1, 0.5), Vector::Zero(1));
  OptimState st2(net2, cfg);
  optim_step(net2, g, st2);
  EXPECT_GT(net2.layers()[0].weight(0, 0), 0.5);
}

TEST(Optim, ConvergesOnConvexQuadratic) {
  Mlp net = linear(Matrix::Zero(1, 1), Vector::Zero(1));
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  OptimState st(net, cfg);
  for (int i = 0; i < 5000; ++i) {
    Gradients g = net.zero_gradients();
    g.weight[0](0, 0) = net.layers()[0].weight(0, 0) - 3.0;  // d/dw ½(w-3)²
    optim_step(net, g, st);
  }
  EXPECT_NEAR(net.layers()[0].weight(0, 0), 3.0, 1e-3);
}

TEST(Optim, NonFiniteGradientIsRejected) {
  Rng rng(10);
  Trainable t(Mlp({2, 2, 1}, Activation::Tanh, rng), AdamConfig{});
  const auto before = t.net.parameters();
  Gradients g = t.net.zero_gradients();
  g.bias[0](1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(t.step(g), RejectedStep);
  EXPECT_EQ(t.net.parameters(), before);
  EXPECT_EQ(t.optim.step, 0u);
}

TEST(Optim, StepCounterIncreases) {
  Rng rng(11);
  Trainable t(Mlp({2, 2, 1}, Activation::Tanh, rng), AdamConfig{});
  for (std::uint64_t i = 1; i <= 5; ++i) {
    t.step(t.net.zero_gradients());
    EXPECT_EQ(t.optim.step, i);
  }
}

TEST(Checkpoint, SaveLoadForwardIsBitIdentical) {
  Rng rng(12);
  Mlp net({5, 9, 9, 3}, Activation::Relu, rng);
  std::stringstream ss;
  net.save(ss);
  Mlp back = Mlp::load(ss);
  EXPECT_EQ(back.parameters(), net.parameters());
  const Matrix x = Matrix::Random(7, 5);
  EXPECT_EQ(back.forward(x), net.forward(x));
}

TEST(Checkpoint, OptimStateRoundTrips) {
  Rng rng(13);
  Trainable t(Mlp({3, 4, 1}, Activation::Tanh, rng), AdamConfig{});
  Tape tape;
  const Matrix y = t.net.forward(Matrix::Random(4, 3), tape);
  t.step(t.net.backward(tape, y));
  std::stringstream ss;
  t.optim.save(ss);
  OptimState back = OptimState::load(ss);
  EXPECT_EQ(back.step, t.optim.step);
  EXPECT_EQ(back.m_weight[0], t.optim.m_weight[0]);
  EXPECT_EQ(back.v_bias[1], t.optim.v_bias[1]);
}

TEST(Checkpoint, BadMagicAndVersionAreRejected) {
  std::stringstream bad("NOTANET.....");
  EXPECT_THROW(Mlp::load(bad), CheckpointError);
  Rng rng(14);
  Mlp net({2, 2}, Activation::Tanh, rng);
  std::stringstream ss;
  net.save(ss);
  std::string bytes = ss.str();
  bytes[7] = 9;  // version field
  std::stringstream tampered(bytes);
  EXPECT_THROW(Mlp::load(tampered), CheckpointError);
  std::stringstream truncated(ss.str().substr(0, 20));
  EXPECT_THROW(Mlp::load(truncated), CheckpointError);
}

TEST(Helpers, SoftUpdateInterpolates) {
  Mlp a = linear(Matrix::Constant(1, 1, 0.0), Vector::Zero(1));
  Mlp b = linear(Matrix::Constant(1, 1, 10.0), Vector::Constant(1, 2.0));
  a.soft_update(b, 0.25);
  EXPECT_DOUBLE_EQ(a.layers()[0].weight(0, 0), 2.5);
  EXPECT_DOUBLE_EQ(a.layers()[0].bias(0), 0.5);
}

TEST(Helpers, RowLogSumExpIsSoftMax) {
  Matrix x(1, 2);
  x << 0.0, std::log(3.0);
  EXPECT_NEAR(row_logsumexp(x, 1.0)(0), std::log(4.0), 1e-12);
  x << 1000.0, 1000.0;
  EXPECT_NEAR(row_logsumexp(x, 0.5)(0), 1000.0 + 0.5 * std::log(2.0), 1e-9);
}
