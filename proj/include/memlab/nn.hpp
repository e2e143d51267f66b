#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "memlab/data.hpp"
#include "memlab/linalg.hpp"
#include "memlab/random.hpp"

namespace memlab::nn {

using linalg::MatrixXd;
using linalg::VectorXd;

// Fully connected rectifier network; the last layer emits logits.
// weights[l] is sizes[l+1] x sizes[l].
struct MlpParams {
  std::vector<std::size_t> layer_sizes;
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t num_classes() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return weights.size(); }

  // Same shapes, all zeros.
  MlpParams zeros_like() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const MlpParams& a, const MlpParams& b);
};

struct TrainConfig {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

// The four per-epoch learning events of one tracked sample.
struct LearningEvent {
  double confidence = 0;      // softmax mass on the true label
  double max_confidence = 0;  // largest softmax mass
  double entropy = 0;         // natural log
  double correct = 0;         // 1 iff argmax equals the label

  friend bool operator==(const LearningEvent&, const LearningEvent&) = default;
};

struct EventRecord {
  std::vector<std::size_t> tracked;
  // per_epoch[t][k] belongs to tracked[k] after epoch t + 1.
  std::vector<std::vector<LearningEvent>> per_epoch;

  std::size_t epochs() const { return per_epoch.size(); }
  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct Output {
  VectorXd logits;
  VectorXd probs;
  std::size_t predicted = 0;  // argmax, lowest index on ties
};

// Hidden layers use weights ~ N(0, 1/fan_in); biases start at zero.
MlpParams init_params(std::span<const std::size_t> layer_sizes, RandomStream& rng);

// Numerically stable softmax (max subtracted first).
VectorXd softmax(const VectorXd& logits);
std::size_t argmax(const VectorXd& v);

Output forward(const MlpParams& params, const VectorXd& x);
std::size_t predict(const MlpParams& params, const VectorXd& x);
LearningEvent learning_event(const Output& out, std::size_t label);

struct LossAndGrads {
  double loss = 0;
  MlpParams grads;
};

// Mean cross-entropy over the batch (inputs: one column per sample) and its
// exact gradient with respect to every weight and bias.
LossAndGrads loss_and_param_grads(const MlpParams& params, const MatrixXd& inputs,
                                  std::span<const std::size_t> labels);

double loss(const MlpParams& params, const VectorXd& x, std::size_t label);

// d(cross-entropy)/dx.
VectorXd grad_input(const MlpParams& params, const VectorXd& x, std::size_t label);

// d(logits)/dx, num_classes x input_dim.
MatrixXd logit_jacobian(const MlpParams& params, const VectorXd& x);

using InputGradient = std::function<VectorXd(const VectorXd&)>;

inline double default_hvp_step(const VectorXd& x) {
  return 1e-3 * (1.0 + x.cwiseAbs().maxCoeff());
}

// Central difference of an input gradient along v:
// (g(x + h v) - g(x - h v)) / 2h. v must be non-zero, h positive.
VectorXd hvp_fd(const InputGradient& grad, const VectorXd& x, const VectorXd& v, double h);

// Hessian-of-loss (w.r.t. the input) times v. h <= 0 picks default_hvp_step.
VectorXd hvp_input(const MlpParams& params, const VectorXd& x, std::size_t label,
                   const VectorXd& v, double h = -1);

// Called after each completed epoch (1-based) with the current parameters.
using EpochHook = std::function<void(std::size_t epoch, const MlpParams&)>;

struct TrainResult {
  MlpParams params;
  EventRecord events;
};

// Shuffled mini-batch SGD with heavy-ball momentum (v <- mu v + g;
// p <- p - lr v). After every epoch the four learning events are recorded
// for each tracked index. Fully determined by (dataset, sizes, config,
// tracked).
TrainResult train(const data::Dataset& dataset, std::span<const std::size_t> layer_sizes,
                  const TrainConfig& config, std::span<const std::size_t> tracked = {},
                  const EpochHook& on_epoch = {});

// Same as above on pre-flattened inputs (one column per sample).
TrainResult train(const MatrixXd& inputs, std::span<const std::size_t> labels,
                  std::span<const std::size_t> layer_sizes, const TrainConfig& config,
                  std::span<const std::size_t> tracked = {}, const EpochHook& on_epoch = {});

double accuracy(const MlpParams& params, const data::Dataset& d);

// input_dim, hidden..., num_classes.
std::vector<std::size_t> layer_sizes_for(const data::Dataset& d,
                                         std::span<const std::size_t> hidden);

}  // namespace memlab::nn
