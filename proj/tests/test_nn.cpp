#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "memlab/data.hpp"
#include "memlab/nn.hpp"

namespace memlab::nn {
namespace {

MlpParams reference_net() {
  MlpParams p;
  p.layer_sizes = {3, 2, 3};
  MatrixXd w1(2, 3), w2(3, 2);
  w1 << 0.5, -0.3, 0.2, -0.1, 0.4, 0.7;
  w2 << 0.3, -0.6, 0.8, 0.1, -0.5, 0.9;
  VectorXd b1(2), b2(3);
  b1 << 0.05, -0.2;
  b2 << 0.0, 0.1, -0.1;
  p.weights = {w1, w2};
  p.biases = {b1, b2};
  return p;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

// Central-difference gradient of the batch loss with respect to one scalar.
double fd_param(MlpParams p, std::size_t layer, bool bias, Eigen::Index r, Eigen::Index c,
                const MatrixXd& x, const std::vector<std::size_t>& y, double h = 1e-5) {
  double& v = bias ? p.biases[layer](r) : p.weights[layer](r, c);
  const double keep = v;
  v = keep + h;
  const double up = loss_and_param_grads(p, x, y).loss;
  v = keep - h;
  const double down = loss_and_param_grads(p, x, y).loss;
  return (up - down) / (2 * h);
}

TEST(Init, ShapesAndDeterminism) {
  const std::size_t sizes[] = {4, 3};
  RandomStream a(1), b(1);
  const MlpParams p = init_params(sizes, a);
  EXPECT_EQ(p.weights[0].rows(), 3);
  EXPECT_EQ(p.weights[0].cols(), 4);
  EXPECT_EQ(p.biases[0].size(), 3);
  EXPECT_TRUE(p == init_params(sizes, b));
}

TEST(Init, WeightVarianceIsInverseFanIn) {
  const std::size_t sizes[] = {50, 200};
  RandomStream rng(2);
  const MlpParams p = init_params(sizes, rng);
  const double mean = p.weights[0].mean();
  const double var = (p.weights[0].array() - mean).square().mean();
  EXPECT_NEAR(var, 1.0 / 50.0, 0.2 / 50.0);
}

TEST(Forward, ZeroWeightsGiveUniform) {
  const std::size_t sizes[] = {5, 4, 3};
  RandomStream rng(3);
  const MlpParams z = init_params(sizes, rng).zeros_like();
  const Output o = forward(z, VectorXd::Random(5));
  for (Eigen::Index k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(o.probs(k), 1.0 / 3.0);
  EXPECT_EQ(o.predicted, 0u);
}

TEST(Forward, ProbabilitiesNormalizedAndShiftInvariant) {
  RandomStream rng(4);
  const std::size_t sizes[] = {6, 8, 5};
  const MlpParams p = init_params(sizes, rng);
  for (int t = 0; t < 20; ++t) {
    const Output o = forward(p, VectorXd::Random(6));
    EXPECT_NEAR(o.probs.sum(), 1.0, 1e-12);
  }
  VectorXd logits(3);
  logits << 1.0, -2.0, 0.5;
  EXPECT_TRUE(softmax(logits).isApprox(softmax((logits.array() + 100.0).matrix()), 1e-14));
}

TEST(Forward, DimensionMismatchThrows) {
  EXPECT_THROW(forward(reference_net(), VectorXd::Zero(4)), std::invalid_argument);
}

TEST(Forward, MatchesReferenceProbabilities) {
  VectorXd x(3);
  x << 0.2, 0.9, 0.4;
  const Output o = forward(reference_net(), x);
  EXPECT_NEAR(o.probs(0), 0.2391295955925056, 1e-14);
  EXPECT_NEAR(o.probs(1), 0.35460540850849837, 1e-14);
  EXPECT_NEAR(o.probs(2), 0.40626499589899595, 1e-14);
}

TEST(Loss, UniformOutputIsLogC) {
  const std::size_t sizes[] = {3, 4};
  RandomStream rng(5);
  const MlpParams z = init_params(sizes, rng).zeros_like();
  EXPECT_NEAR(loss(z, VectorXd::Ones(3), 2), std::log(4.0), 1e-14);
}

TEST(Loss, MatchesReferenceGradients) {
  MatrixXd x(3, 2);
  x << 0.2, 0.7, 0.9, 0.1, 0.4, 0.5;
  const std::vector<std::size_t> y{2, 0};
  const LossAndGrads g = loss_and_param_grads(reference_net(), x, y);
  EXPECT_NEAR(g.loss, 1.0418864270522268, 1e-13);
  MatrixXd w1(2, 3), w2(3, 2);
  w1 << 0.01771217760816197, 0.00253031108688028, 0.01265155543440141, 0.1695069330005405,
      -0.2556783090851299, 0.03848483097524302;
  w2 << -0.16300747507955032, 0.00859828526688141, 0.10946034013229046, 0.10241445667162478,
      0.05354713494725991, -0.11101274193850619;
  VectorXd b1(2), b2(3);
  b1 << 0.02530311086880282, 0.01273178993093033;
  b2 << -0.2272596172666203, 0.4101970449612502, -0.1829374276946299;
  EXPECT_LE((g.grads.weights[0] - w1).norm(), 1e-13);
  EXPECT_LE((g.grads.weights[1] - w2).norm(), 1e-13);
  EXPECT_LE((g.grads.biases[0] - b1).norm(), 1e-13);
  EXPECT_LE((g.grads.biases[1] - b2).norm(), 1e-13);

  VectorXd gx(3);
  gx << 0.06423787201955572, -0.2569514880782229, -0.44966510413689;
  EXPECT_LE((grad_input(reference_net(), x.col(0), 2) - gx).norm(), 1e-13);
}

TEST(Loss, LabelOutOfRangeThrows) {
  MatrixXd x = MatrixXd::Zero(3, 1);
  const std::vector<std::size_t> y{3};
  EXPECT_THROW(loss_and_param_grads(reference_net(), x, y), std::invalid_argument);
}

TEST(Loss, ParameterGradientsMatchFiniteDifferences) {
  RandomStream rng(6);
  const std::size_t sizes[] = {4, 2, 3};
  for (int net = 0; net < 10; ++net) {
    const MlpParams p = init_params(sizes, rng);
    MatrixXd x = MatrixXd::Random(4, 5);
    const std::vector<std::size_t> y{0, 1, 2, 1, 0};
    const LossAndGrads g = loss_and_param_grads(p, x, y);
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
      for (Eigen::Index r = 0; r < p.weights[l].rows(); ++r) {
        for (Eigen::Index c = 0; c < p.weights[l].cols(); ++c) {
          EXPECT_LE(rel(g.grads.weights[l](r, c), fd_param(p, l, false, r, c, x, y)), 1e-4);
        }
        EXPECT_LE(rel(g.grads.biases[l](r), fd_param(p, l, true, r, 0, x, y)), 1e-4);
      }
    }
  }
}

TEST(Loss, DuplicatedSampleGivesSameGradient) {
  RandomStream rng(7);
  const std::size_t sizes[] = {4, 3, 2};
  const MlpParams p = init_params(sizes, rng);
  const VectorXd x = VectorXd::Random(4);
  MatrixXd twice(4, 2);
  twice << x, x;
  const std::vector<std::size_t> y1{1}, y2{1, 1};
  const LossAndGrads a = loss_and_param_grads(p, x, y1), b = loss_and_param_grads(p, twice, y2);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_LE((a.grads.weights[l] - b.grads.weights[l]).norm(), 1e-15);
    EXPECT_LE((a.grads.biases[l] - b.grads.biases[l]).norm(), 1e-15);
  }
}

TEST(GradInput, ZeroFirstLayerGivesZero) {
  MlpParams p = reference_net();
  p.weights[0].setZero();
  EXPECT_EQ(grad_input(p, VectorXd::Ones(3), 1), VectorXd::Zero(3));
}

TEST(GradInput, MatchesFiniteDifferences) {
  RandomStream rng(8);
  const std::size_t sizes[] = {5, 6, 4};
  for (int net = 0; net < 20; ++net) {
    const MlpParams p = init_params(sizes, rng);
    const VectorXd x = VectorXd::Random(5);
    const std::size_t y = net % 4;
    const VectorXd g = grad_input(p, x, y);
    ASSERT_EQ(g.size(), 5);
    for (Eigen::Index k = 0; k < 5; ++k) {
      VectorXd up = x, down = x;
      up(k) += 1e-5;
      down(k) -= 1e-5;
      EXPECT_LE(rel(g(k), (loss(p, up, y) - loss(p, down, y)) / 2e-5), 1e-4);
    }
  }
}

TEST(LogitJacobian, MatchesFiniteDifferences) {
  RandomStream rng(9);
  const std::size_t sizes[] = {4, 5, 3};
  const MlpParams p = init_params(sizes, rng);
  const VectorXd x = VectorXd::Random(4);
  const MatrixXd j = logit_jacobian(p, x);
  for (Eigen::Index k = 0; k < 4; ++k) {
    VectorXd up = x, down = x;
    up(k) += 1e-6;
    down(k) -= 1e-6;
    const VectorXd fd = (forward(p, up).logits - forward(p, down).logits) / 2e-6;
    EXPECT_LE((j.col(k) - fd).norm(), 1e-6);
  }
}

TEST(Hvp, QuadraticIsExact) {
  MatrixXd a(3, 3);
  a << 2, 1, 0, 1, 3, -1, 0, -1, 4;
  const InputGradient grad = [&](const VectorXd& x) -> VectorXd { return a * x; };
  const VectorXd x = VectorXd::Random(3), v = VectorXd::Random(3);
  const VectorXd hv = hvp_fd(grad, x, v, 1e-3);
  EXPECT_LE((hv - a * v).norm() / (a * v).norm(), 1e-3);
  EXPECT_LE((hvp_fd(grad, x, -v, 1e-3) + hv).norm(), 1e-6);
}

TEST(Hvp, RejectsZeroDirectionAndStep) {
  const InputGradient grad = [](const VectorXd& x) -> VectorXd { return x; };
  EXPECT_THROW(hvp_fd(grad, VectorXd::Ones(2), VectorXd::Zero(2), 1e-3), std::invalid_argument);
  EXPECT_THROW(hvp_fd(grad, VectorXd::Ones(2), VectorXd::Ones(2), 0.0), std::invalid_argument);
  EXPECT_THROW(hvp_input(reference_net(), VectorXd::Ones(3), 0, VectorXd::Zero(3)), std::invalid_argument);
}

TEST(Hvp, OddInDirectionOnNetwork) {
  RandomStream rng(10);
  const std::size_t sizes[] = {4, 8, 3};
  const MlpParams p = init_params(sizes, rng);
  const VectorXd x = VectorXd::Random(4), v = VectorXd::Random(4);
  EXPECT_LE((hvp_input(p, x, 1, v) + hvp_input(p, x, 1, -v)).norm(), 1e-6);
}

data::Dataset two_blobs(std::uint64_t seed) {
  RandomStream rng(seed);
  return data::synth_blobs(2, 4, 100, 0.1, rng);
}

TEST(Train, SeparableBlobsReachHighAccuracy) {
  const data::Dataset d = two_blobs(1);
  TrainConfig c;
  c.seed = 3;
  const std::size_t hidden[] = {16};
  const TrainResult r = train(d, layer_sizes_for(d, hidden), c);
  EXPECT_GE(accuracy(r.params, d), 0.95);
}

TEST(Train, DeterministicGivenSeed) {
  const data::Dataset d = two_blobs(2);
  TrainConfig c;
  c.seed = 9;
  c.epochs = 3;
  const std::size_t hidden[] = {8};
  const std::vector<std::size_t> tracked{0, 5, 17};
  const TrainResult a = train(d, layer_sizes_for(d, hidden), c, tracked);
  const TrainResult b = train(d, layer_sizes_for(d, hidden), c, tracked);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_TRUE(a.events == b.events);
  EXPECT_EQ(a.events.epochs(), 3u);
  c.seed = 10;
  EXPECT_FALSE(a.params == train(d, layer_sizes_for(d, hidden), c, tracked).params);
}

TEST(Train, RejectsBadConfig) {
  const data::Dataset d = two_blobs(3);
  TrainConfig c;
  c.epochs = 0;
  const std::size_t hidden[] = {4};
  EXPECT_THROW(train(d, layer_sizes_for(d, hidden), c), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(train(d, layer_sizes_for(d, hidden), c), std::invalid_argument);
}

TEST(Train, LossMostlyDecreases) {
  const data::Dataset d = two_blobs(4);
  TrainConfig c;
  c.seed = 1;
  c.epochs = 11;
  c.learning_rate = 5e-3;
  const std::size_t hidden[] = {16};
  const MatrixXd x = d.inputs();
  const std::vector<std::size_t> y = d.labels();
  std::vector<double> losses;
  train(d, layer_sizes_for(d, hidden), c, {},
        [&](std::size_t, const MlpParams& p) { losses.push_back(loss_and_param_grads(p, x, y).loss); });
  ASSERT_EQ(losses.size(), 11u);
  int down = 0;
  for (std::size_t t = 1; t < losses.size(); ++t) down += losses[t] <= losses[t - 1];
  EXPECT_GE(down, 8);
}

TEST(Events, BoundsHold) {
  const data::Dataset d = two_blobs(5);
  TrainConfig c;
  c.seed = 2;
  c.epochs = 4;
  const std::size_t hidden[] = {8};
  std::vector<std::size_t> tracked(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) tracked[i] = i;
  const TrainResult r = train(d, layer_sizes_for(d, hidden), c, tracked);
  for (const auto& epoch : r.events.per_epoch) {
    for (const LearningEvent& e : epoch) {
      EXPECT_GE(e.confidence, 0.0);
      EXPECT_LE(e.max_confidence, 1.0);
      EXPECT_GE(e.max_confidence, e.confidence);
      EXPECT_GE(e.entropy, 0.0);
      EXPECT_LE(e.entropy, std::log(2.0) + 1e-15);
      EXPECT_TRUE(e.correct == 0.0 || e.correct == 1.0);
    }
  }
}

}  // namespace
}  // namespace memlab::nn
