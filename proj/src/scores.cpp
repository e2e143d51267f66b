#include "memlab/scores.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

namespace memlab::scores {

std::string_view to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::LabelMem: return "label-mem";
    case ScoreKind::Curvature: return "curvature";
    case ScoreKind::ConfEvent: return "conf-event";
    case ScoreKind::MaxConfEvent: return "maxconf-event";
    case ScoreKind::EntropyEvent: return "entropy-event";
    case ScoreKind::CorrectEvent: return "correct-event";
    case ScoreKind::PrivacyRisk: return "privacy-risk";
  }
  return "?";
}

ScoreKind parse_score_kind(std::string_view name) {
  for (ScoreKind k : {ScoreKind::LabelMem, ScoreKind::Curvature, ScoreKind::ConfEvent,
                      ScoreKind::MaxConfEvent, ScoreKind::EntropyEvent, ScoreKind::CorrectEvent,
                      ScoreKind::PrivacyRisk}) {
    if (name == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown score kind: " + std::string(name));
}

bool is_event(ScoreKind kind) {
  return kind == ScoreKind::ConfEvent || kind == ScoreKind::MaxConfEvent ||
         kind == ScoreKind::EntropyEvent || kind == ScoreKind::CorrectEvent;
}

double memorization_oriented(ScoreKind kind, double raw) {
  switch (kind) {
    case ScoreKind::ConfEvent:
    case ScoreKind::MaxConfEvent:
    case ScoreKind::CorrectEvent:
      return 1.0 - raw;
    default:
      return raw;
  }
}

double ScoreVector::mean() const {
  if (values.empty()) throw std::invalid_argument("ScoreVector::mean: no scores");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

void ScoreVector::write_csv(std::ostream& out) const {
  out << "index,kind,score\n";
  const auto old = out.precision(6);
  for (std::size_t k = 0; k < values.size(); ++k) {
    out << indices[k] << ',' << to_string(kind) << ',' << values[k] << '\n';
  }
  out.precision(old);
}

Trainer mlp_trainer(std::vector<std::size_t> hidden, nn::TrainConfig config) {
  return [hidden = std::move(hidden), config](const data::Dataset& d, std::uint64_t seed) -> Classifier {
    nn::TrainConfig c = config;
    c.seed = seed;
    const std::vector<std::size_t> sizes = nn::layer_sizes_for(d, hidden);
    auto params = std::make_shared<nn::MlpParams>(nn::train(d, sizes, c).params);
    return [params](const VectorXd& x) { return nn::predict(*params, x); };
  };
}

namespace {

constexpr std::uint64_t kWithStream = 0;

std::uint64_t model_seed(std::uint64_t seed, std::uint64_t group, std::size_t model) {
  return derive_seed(derive_seed(seed, group), model);
}

}  // namespace

ScoreVector label_mem_loo(const Trainer& trainer, const data::Dataset& d,
                          std::span<const std::size_t> indices, std::size_t n_models,
                          std::uint64_t seed) {
  if (n_models < 2) throw std::invalid_argument("label_mem_loo: need at least two models");
  for (std::size_t i : indices) {
    if (i >= d.size()) throw std::invalid_argument("label_mem_loo: index out of range");
  }
  std::vector<VectorXd> xs;
  for (std::size_t i : indices) xs.push_back(d[i].image.flatten());

  std::vector<double> with_hits(indices.size(), 0.0);
  for (std::size_t m = 0; m < n_models; ++m) {
    const Classifier h = trainer(d, model_seed(seed, kWithStream, m));
    for (std::size_t k = 0; k < indices.size(); ++k) {
      if (h(xs[k]) == d[indices[k]].label) with_hits[k] += 1.0;
    }
  }
  ScoreVector out{ScoreKind::LabelMem, {indices.begin(), indices.end()}, {}};
  const double n = static_cast<double>(n_models);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    const data::Dataset rest = d.without(i);
    double without_hits = 0.0;
    for (std::size_t m = 0; m < n_models; ++m) {
      const Classifier h = trainer(rest, model_seed(seed, 1 + i, m));
      if (h(xs[k]) == d[i].label) without_hits += 1.0;
    }
    out.values.push_back(with_hits[k] / n - without_hits / n);
  }
  return out;
}

double label_mem_loo(const Trainer& trainer, const data::Dataset& d, std::size_t i,
                     std::size_t n_models, std::uint64_t seed) {
  const std::size_t idx[] = {i};
  return label_mem_loo(trainer, d, idx, n_models, seed).values.front();
}

double mem_query(const Trainer& trainer, const data::Dataset& d,
                 std::span<const data::Sample> added, std::size_t n_models, std::uint64_t seed) {
  if (n_models < 2) throw std::invalid_argument("mem_query: need at least two models");
  if (added.empty()) return 0.0;
  const data::Dataset augmented = d.concat(added);
  std::vector<VectorXd> xs;
  for (const data::Sample& s : added) xs.push_back(s.image.flatten());
  auto all_correct = [&](const Classifier& h) {
    for (std::size_t k = 0; k < added.size(); ++k) {
      if (h(xs[k]) != added[k].label) return false;
    }
    return true;
  };
  double with = 0.0, without = 0.0;
  for (std::size_t m = 0; m < n_models; ++m) {
    if (all_correct(trainer(augmented, model_seed(seed, 0, m)))) with += 1.0;
    if (all_correct(trainer(d, model_seed(seed, 1, m)))) without += 1.0;
  }
  return (with - without) / static_cast<double>(n_models);
}

double hutchinson_trace(const nn::InputGradient& grad, const VectorXd& x, std::size_t probes,
                        double h, RandomStream& rng) {
  if (probes < 1) throw std::invalid_argument("hutchinson_trace: need at least one probe");
  double sum = 0.0;
  for (std::size_t j = 0; j < probes; ++j) {
    const VectorXd v = linalg::rademacher(x.size(), rng);
    sum += v.dot(nn::hvp_fd(grad, x, v, h));
  }
  return sum / static_cast<double>(probes);
}

double curvature_score(const nn::MlpParams& model, const data::Sample& z, std::size_t probes,
                       double h, RandomStream& rng) {
  const VectorXd x = z.image.flatten();
  if (h <= 0) h = nn::default_hvp_step(x);
  return hutchinson_trace(
      [&](const VectorXd& at) { return nn::grad_input(model, at, z.label); }, x, probes, h, rng);
}

ScoreVector event_scores(const nn::EventRecord& record, ScoreKind kind) {
  if (!is_event(kind)) {
    throw std::invalid_argument("event_scores: " + std::string(to_string(kind)) +
                                " is not a learning event");
  }
  if (record.per_epoch.empty()) throw std::invalid_argument("event_scores: empty record");
  ScoreVector out{kind, record.tracked, std::vector<double>(record.tracked.size(), 0.0)};
  for (const auto& epoch : record.per_epoch) {
    for (std::size_t k = 0; k < epoch.size(); ++k) {
      const nn::LearningEvent& e = epoch[k];
      double v = 0.0;
      switch (kind) {
        case ScoreKind::ConfEvent: v = e.confidence; break;
        case ScoreKind::MaxConfEvent: v = e.max_confidence; break;
        case ScoreKind::EntropyEvent: v = e.entropy; break;
        case ScoreKind::CorrectEvent: v = e.correct; break;
        default: break;
      }
      out.values[k] += v;
    }
  }
  for (double& v : out.values) v /= static_cast<double>(record.per_epoch.size());
  return out;
}

std::size_t ShadowEnsemble::bin_of(double confidence) const {
  const double scaled = std::clamp(confidence, 0.0, 1.0) * static_cast<double>(bins);
  return std::min(static_cast<std::size_t>(scaled), bins - 1);
}

double ShadowEnsemble::member_likelihood(std::size_t cls, std::size_t bin) const {
  const std::vector<double>& row = member.at(per_class ? cls : 0);
  const double total = std::accumulate(row.begin(), row.end(), 0.0);
  return (row.at(bin) + 1.0) / (total + static_cast<double>(bins));
}

double ShadowEnsemble::nonmember_likelihood(std::size_t cls, std::size_t bin) const {
  const std::vector<double>& row = nonmember.at(per_class ? cls : 0);
  const double total = std::accumulate(row.begin(), row.end(), 0.0);
  return (row.at(bin) + 1.0) / (total + static_cast<double>(bins));
}

ShadowEnsemble build_shadow_ensemble(const data::Dataset& shadow_data, const ShadowConfig& cfg,
                                     std::uint64_t seed) {
  if (cfg.shadow_count < 1) throw std::invalid_argument("shadows: need at least one shadow model");
  if (cfg.bins < 1) throw std::invalid_argument("shadows: need at least one bin");
  if (shadow_data.size() < 2) throw std::invalid_argument("shadows: need at least two samples");
  const std::size_t classes = shadow_data.num_classes();
  std::vector<std::vector<double>> member(classes, std::vector<double>(cfg.bins, 0.0));
  std::vector<std::vector<double>> nonmember = member;
  ShadowEnsemble ens;
  ens.bins = cfg.bins;
  ens.shadow_count = cfg.shadow_count;
  ens.num_classes = classes;

  for (std::size_t s = 0; s < cfg.shadow_count; ++s) {
    RandomStream rng(seed, s);
    std::vector<std::size_t> order(shadow_data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t k = order.size(); k > 1; --k) {
      std::swap(order[k - 1], order[static_cast<std::size_t>(rng.uniform_index(k))]);
    }
    const std::size_t half = order.size() / 2;
    const std::span<const std::size_t> in(order.data(), half);
    const std::span<const std::size_t> out(order.data() + half, order.size() - half);
    const data::Dataset members = shadow_data.subset(in);
    nn::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(seed, 1000 + s);
    const nn::MlpParams model =
        nn::train(members, nn::layer_sizes_for(shadow_data, cfg.hidden), tc).params;
    for (std::size_t i : in) {
      const data::Sample& z = shadow_data[i];
      const double conf = nn::forward(model, z.image.flatten()).probs(static_cast<Eigen::Index>(z.label));
      member[z.label][ens.bin_of(conf)] += 1.0;
    }
    for (std::size_t i : out) {
      const data::Sample& z = shadow_data[i];
      const double conf = nn::forward(model, z.image.flatten()).probs(static_cast<Eigen::Index>(z.label));
      nonmember[z.label][ens.bin_of(conf)] += 1.0;
    }
  }

  auto row_total = [](const std::vector<double>& r) { return std::accumulate(r.begin(), r.end(), 0.0); };
  ens.per_class = true;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto need = static_cast<double>(cfg.min_per_class);
    if (row_total(member[c]) < need || row_total(nonmember[c]) < need) ens.per_class = false;
  }
  if (ens.per_class) {
    ens.member = std::move(member);
    ens.nonmember = std::move(nonmember);
  } else {
    ens.member.assign(1, std::vector<double>(cfg.bins, 0.0));
    ens.nonmember.assign(1, std::vector<double>(cfg.bins, 0.0));
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t b = 0; b < cfg.bins; ++b) {
        ens.member[0][b] += member[c][b];
        ens.nonmember[0][b] += nonmember[c][b];
      }
    }
  }
  return ens;
}

double membership_posterior(double member_likelihood, double nonmember_likelihood, double prior) {
  const double num = member_likelihood * prior;
  const double den = num + nonmember_likelihood * (1.0 - prior);
  if (!(den > 0.0)) return prior;
  return num / den;
}

double privacy_risk(const nn::MlpParams& target, const ShadowEnsemble& shadows,
                    const data::Sample& z) {
  const double conf =
      nn::forward(target, z.image.flatten()).probs(static_cast<Eigen::Index>(z.label));
  const std::size_t bin = shadows.bin_of(conf);
  return membership_posterior(shadows.member_likelihood(z.label, bin),
                              shadows.nonmember_likelihood(z.label, bin));
}

}  // namespace memlab::scores
