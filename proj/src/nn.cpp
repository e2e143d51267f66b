#include "memlab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace memlab::nn {

namespace {

void check_input(const MlpParams& params, const VectorXd& x) {
  if (static_cast<std::size_t>(x.size()) != params.input_dim()) {
    throw std::invalid_argument("nn: input has " + std::to_string(x.size()) +
                                " entries, network expects " + std::to_string(params.input_dim()));
  }
}

void check_label(const MlpParams& params, std::size_t label) {
  if (label >= params.num_classes()) {
    throw std::invalid_argument("nn: label " + std::to_string(label) + " outside [0, " +
                                std::to_string(params.num_classes()) + ")");
  }
}

// Per-layer pre-activations for one batch; zs[l] feeds layer l + 1.
struct Trace {
  std::vector<MatrixXd> activations;  // a_0 = inputs, ..., a_{L-1}
  std::vector<MatrixXd> pre;          // z_1 ... z_L (z_L are logits)
};

Trace run(const MlpParams& p, const MatrixXd& inputs) {
  Trace t;
  t.activations.reserve(p.layer_count());
  t.pre.reserve(p.layer_count());
  t.activations.push_back(inputs);
  for (std::size_t l = 0; l < p.layer_count(); ++l) {
    MatrixXd z = p.weights[l] * t.activations.back();
    z.colwise() += p.biases[l];
    if (l + 1 < p.layer_count()) t.activations.push_back(z.cwiseMax(0.0));
    t.pre.push_back(std::move(z));
  }
  return t;
}

void softmax_columns(MatrixXd& logits) {
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    auto col = logits.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
}

// Backpropagates d(loss)/d(logits) = delta; returns d(loss)/d(inputs) and,
// when grads is non-null, accumulates parameter gradients into it.
MatrixXd backprop(const MlpParams& p, const Trace& t, MatrixXd delta, MlpParams* grads) {
  for (std::size_t l = p.layer_count(); l-- > 0;) {
    if (grads != nullptr) {
      grads->weights[l].noalias() = delta * t.activations[l].transpose();
      grads->biases[l] = delta.rowwise().sum();
    }
    MatrixXd back = p.weights[l].transpose() * delta;
    if (l > 0) back.array() *= (t.pre[l - 1].array() > 0.0).cast<double>();
    delta = std::move(back);
  }
  return delta;
}

}  // namespace

MlpParams MlpParams::zeros_like() const {
  MlpParams z;
  z.layer_sizes = layer_sizes;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    z.weights.push_back(MatrixXd::Zero(weights[l].rows(), weights[l].cols()));
    z.biases.push_back(VectorXd::Zero(biases[l].size()));
  }
  return z;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

bool MlpParams::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return true;
}

bool operator==(const MlpParams& a, const MlpParams& b) {
  if (a.layer_sizes != b.layer_sizes) return false;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
  }
  return true;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("train: learning rate must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("train: momentum outside [0,1)");
  if (batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  if (epochs == 0) throw std::invalid_argument("train: epochs must be at least 1");
}

MlpParams init_params(std::span<const std::size_t> layer_sizes, RandomStream& rng) {
  if (layer_sizes.size() < 2) throw std::invalid_argument("init_params: need at least two layers");
  for (std::size_t s : layer_sizes) {
    if (s == 0) throw std::invalid_argument("init_params: layer sizes must be positive");
  }
  MlpParams p;
  p.layer_sizes.assign(layer_sizes.begin(), layer_sizes.end());
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const auto fan_in = static_cast<Eigen::Index>(layer_sizes[l]);
    const auto fan_out = static_cast<Eigen::Index>(layer_sizes[l + 1]);
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    MatrixXd w(fan_out, fan_in);
    for (Eigen::Index r = 0; r < fan_out; ++r) {
      for (Eigen::Index c = 0; c < fan_in; ++c) w(r, c) = scale * rng.normal();
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(VectorXd::Zero(fan_out));
  }
  return p;
}

VectorXd softmax(const VectorXd& logits) {
  VectorXd e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

std::size_t argmax(const VectorXd& v) {
  std::size_t best = 0;
  for (Eigen::Index k = 1; k < v.size(); ++k) {
    if (v(k) > v(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(k);
  }
  return best;
}

Output forward(const MlpParams& params, const VectorXd& x) {
  check_input(params, x);
  VectorXd a = x;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    VectorXd z = params.weights[l] * a + params.biases[l];
    a = (l + 1 < params.layer_count()) ? VectorXd(z.cwiseMax(0.0)) : z;
  }
  Output out;
  out.logits = std::move(a);
  out.probs = softmax(out.logits);
  out.predicted = argmax(out.logits);
  return out;
}

std::size_t predict(const MlpParams& params, const VectorXd& x) {
  return forward(params, x).predicted;
}

LearningEvent learning_event(const Output& out, std::size_t label) {
  LearningEvent e;
  e.confidence = out.probs(static_cast<Eigen::Index>(label));
  e.max_confidence = out.probs.maxCoeff();
  double h = 0.0;
  for (Eigen::Index k = 0; k < out.probs.size(); ++k) {
    const double p = out.probs(k);
    if (p > 0.0) h -= p * std::log(p);
  }
  e.entropy = std::clamp(h, 0.0, std::log(static_cast<double>(out.probs.size())));
  e.correct = out.predicted == label ? 1.0 : 0.0;
  return e;
}

LossAndGrads loss_and_param_grads(const MlpParams& params, const MatrixXd& inputs,
                                  std::span<const std::size_t> labels) {
  if (inputs.cols() == 0 || labels.empty()) throw std::invalid_argument("loss: empty batch");
  if (static_cast<std::size_t>(inputs.cols()) != labels.size()) {
    throw std::invalid_argument("loss: batch and label counts differ");
  }
  if (static_cast<std::size_t>(inputs.rows()) != params.input_dim()) {
    throw std::invalid_argument("loss: input dimension mismatch");
  }
  for (std::size_t y : labels) check_label(params, y);

  const Trace t = run(params, inputs);
  MatrixXd probs = t.pre.back();
  softmax_columns(probs);
  const double inv_b = 1.0 / static_cast<double>(labels.size());
  LossAndGrads out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const auto y = static_cast<Eigen::Index>(labels[i]);
    // log-softmax computed from logits to avoid log(0).
    const auto z = t.pre.back().col(c);
    const double m = z.maxCoeff();
    out.loss += (m + std::log((z.array() - m).exp().sum()) - z(y)) * inv_b;
    probs(y, c) -= 1.0;
  }
  probs *= inv_b;
  out.grads = params.zeros_like();
  backprop(params, t, std::move(probs), &out.grads);
  return out;
}

double loss(const MlpParams& params, const VectorXd& x, std::size_t label) {
  check_label(params, label);
  const Output out = forward(params, x);
  const double m = out.logits.maxCoeff();
  return m + std::log((out.logits.array() - m).exp().sum()) -
         out.logits(static_cast<Eigen::Index>(label));
}

VectorXd grad_input(const MlpParams& params, const VectorXd& x, std::size_t label) {
  check_input(params, x);
  check_label(params, label);
  const Trace t = run(params, x);
  MatrixXd delta = t.pre.back();
  softmax_columns(delta);
  delta(static_cast<Eigen::Index>(label), 0) -= 1.0;
  return backprop(params, t, std::move(delta), nullptr).col(0);
}

MatrixXd logit_jacobian(const MlpParams& params, const VectorXd& x) {
  check_input(params, x);
  const Trace t = run(params, x);
  const auto classes = static_cast<Eigen::Index>(params.num_classes());
  // Backpropagate every unit logit direction at once: column k of the seed
  // selects logit k; the ReLU masks are shared across columns.
  MatrixXd seed = MatrixXd::Identity(classes, classes);
  Trace wide = t;
  for (std::size_t l = 0; l < wide.pre.size(); ++l) {
    wide.pre[l] = t.pre[l].replicate(1, classes);
    if (l < wide.activations.size()) wide.activations[l] = t.activations[l].replicate(1, classes);
  }
  return backprop(params, wide, std::move(seed), nullptr).transpose();
}

VectorXd hvp_fd(const InputGradient& grad, const VectorXd& x, const VectorXd& v, double h) {
  if (!(v.norm() > 0.0)) throw std::invalid_argument("hvp: direction must be non-zero");
  if (!(h > 0.0)) throw std::invalid_argument("hvp: step must be positive");
  return (grad(x + h * v) - grad(x - h * v)) / (2.0 * h);
}

VectorXd hvp_input(const MlpParams& params, const VectorXd& x, std::size_t label,
                   const VectorXd& v, double h) {
  check_input(params, x);
  check_label(params, label);
  if (v.size() != x.size()) throw std::invalid_argument("hvp: direction dimension mismatch");
  if (h <= 0) h = default_hvp_step(x);
  return hvp_fd([&](const VectorXd& at) { return grad_input(params, at, label); }, x, v, h);
}

TrainResult train(const MatrixXd& inputs, std::span<const std::size_t> labels,
                  std::span<const std::size_t> layer_sizes, const TrainConfig& config,
                  std::span<const std::size_t> tracked, const EpochHook& on_epoch) {
  config.validate();
  const std::size_t n = labels.size();
  if (n == 0 || inputs.cols() == 0) throw std::invalid_argument("train: empty dataset");
  if (static_cast<std::size_t>(inputs.cols()) != n) {
    throw std::invalid_argument("train: input and label counts differ");
  }
  for (std::size_t i : tracked) {
    if (i >= n) throw std::invalid_argument("train: tracked index out of range");
  }

  RandomStream init_rng(config.seed, 0);
  RandomStream order_rng(config.seed, 1);
  TrainResult result{init_params(layer_sizes, init_rng), EventRecord{}};
  MlpParams& p = result.params;
  if (static_cast<std::size_t>(inputs.rows()) != p.input_dim()) {
    throw std::invalid_argument("train: input dimension does not match layer sizes");
  }
  result.events.tracked.assign(tracked.begin(), tracked.end());
  MlpParams velocity = p.zeros_like();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  MatrixXd batch;
  std::vector<std::size_t> batch_labels;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t k = n; k > 1; --k) {
      std::swap(order[k - 1], order[static_cast<std::size_t>(order_rng.uniform_index(k))]);
    }
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, n - start);
      batch.resize(inputs.rows(), static_cast<Eigen::Index>(len));
      batch_labels.resize(len);
      for (std::size_t j = 0; j < len; ++j) {
        batch.col(static_cast<Eigen::Index>(j)) = inputs.col(static_cast<Eigen::Index>(order[start + j]));
        batch_labels[j] = labels[order[start + j]];
      }
      const LossAndGrads lg = loss_and_param_grads(p, batch, batch_labels);
      for (std::size_t l = 0; l < p.layer_count(); ++l) {
        velocity.weights[l] = config.momentum * velocity.weights[l] + lg.grads.weights[l];
        velocity.biases[l] = config.momentum * velocity.biases[l] + lg.grads.biases[l];
        p.weights[l] -= config.learning_rate * velocity.weights[l];
        p.biases[l] -= config.learning_rate * velocity.biases[l];
      }
    }
    if (!tracked.empty()) {
      std::vector<LearningEvent> events;
      events.reserve(tracked.size());
      for (std::size_t i : tracked) {
        events.push_back(learning_event(forward(p, inputs.col(static_cast<Eigen::Index>(i))), labels[i]));
      }
      result.events.per_epoch.push_back(std::move(events));
    }
    if (on_epoch) on_epoch(epoch, p);
  }
  return result;
}

TrainResult train(const data::Dataset& dataset, std::span<const std::size_t> layer_sizes,
                  const TrainConfig& config, std::span<const std::size_t> tracked,
                  const EpochHook& on_epoch) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const std::vector<std::size_t> labels = dataset.labels();
  return train(dataset.inputs(), labels, layer_sizes, config, tracked, on_epoch);
}

double accuracy(const MlpParams& params, const data::Dataset& d) {
  std::size_t hits = 0;
  for (const data::Sample& s : d.samples()) {
    if (predict(params, s.image.flatten()) == s.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(d.size());
}

std::vector<std::size_t> layer_sizes_for(const data::Dataset& d, std::span<const std::size_t> hidden) {
  std::vector<std::size_t> sizes;
  sizes.push_back(static_cast<std::size_t>(d.input_dim()));
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(d.num_classes());
  return sizes;
}

}  // namespace memlab::nn
