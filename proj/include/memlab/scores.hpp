#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "memlab/data.hpp"
#include "memlab/nn.hpp"
#include "memlab/random.hpp"

namespace memlab::scores {

using linalg::VectorXd;

enum class ScoreKind {
  LabelMem,
  Curvature,
  ConfEvent,
  MaxConfEvent,
  EntropyEvent,
  CorrectEvent,
  PrivacyRisk,
};

std::string_view to_string(ScoreKind kind);
ScoreKind parse_score_kind(std::string_view name);
bool is_event(ScoreKind kind);

// Maps a raw score onto the "higher means more memorized" axis used when
// comparing attacks: 1 - confidence, 1 - max confidence and
// 1 - correctness for the events that fall as a sample gets learned;
// entropy and the remaining scores are already oriented that way.
double memorization_oriented(ScoreKind kind, double raw);

// Per-sample scores keyed by dataset index.
struct ScoreVector {
  ScoreKind kind = ScoreKind::LabelMem;
  std::vector<std::size_t> indices;
  std::vector<double> values;

  double mean() const;
  // `index,kind,score`, header included.
  void write_csv(std::ostream& out) const;
};

// A trained classifier, reduced to its decision rule.
using Classifier = std::function<std::size_t(const VectorXd&)>;
// Trains a fresh classifier on a dataset; the seed fixes all randomness.
using Trainer = std::function<Classifier(const data::Dataset&, std::uint64_t seed)>;

Trainer mlp_trainer(std::vector<std::size_t> hidden, nn::TrainConfig config);

// Label memorization of sample i: fraction of n_models classifiers trained
// on d that predict y_i on x_i, minus the same fraction for classifiers
// trained on d without sample i.
double label_mem_loo(const Trainer& trainer, const data::Dataset& d, std::size_t i,
                     std::size_t n_models, std::uint64_t seed);

// Batched form: the with-sample models are shared across all indices.
ScoreVector label_mem_loo(const Trainer& trainer, const data::Dataset& d,
                          std::span<const std::size_t> indices, std::size_t n_models,
                          std::uint64_t seed);

// Memorization of k added samples: Pr[all added samples classified
// correctly | trained on d + added] - Pr[same | trained on d]. Zero for an
// empty set.
double mem_query(const Trainer& trainer, const data::Dataset& d,
                 std::span<const data::Sample> added, std::size_t n_models, std::uint64_t seed);

// Hutchinson estimate of tr(H) from Rademacher probes v: mean of v^T H v,
// with H v taken by central differences of `grad`.
double hutchinson_trace(const nn::InputGradient& grad, const VectorXd& x, std::size_t probes,
                        double h, RandomStream& rng);

// Trace of the input Hessian of the cross-entropy loss at sample z.
// h <= 0 picks nn::default_hvp_step.
double curvature_score(const nn::MlpParams& model, const data::Sample& z, std::size_t probes,
                       double h, RandomStream& rng);

// Mean over epochs of one learning event per tracked sample.
ScoreVector event_scores(const nn::EventRecord& record, ScoreKind kind);

// Member / non-member histograms of the ground-truth-class confidence,
// gathered from shadow models.
struct ShadowEnsemble {
  std::size_t bins = 10;
  std::size_t shadow_count = 0;
  std::size_t num_classes = 0;
  bool per_class = false;
  // [class][bin]; a single pooled row when per_class is false.
  std::vector<std::vector<double>> member;
  std::vector<std::vector<double>> nonmember;

  std::size_t bin_of(double confidence) const;
  // Laplace-smoothed likelihoods of a bin.
  double member_likelihood(std::size_t cls, std::size_t bin) const;
  double nonmember_likelihood(std::size_t cls, std::size_t bin) const;
};

struct ShadowConfig {
  std::size_t shadow_count = 8;
  std::size_t bins = 10;
  // Per-class histograms need at least this many member and non-member
  // observations in every class; otherwise the histograms are pooled.
  std::size_t min_per_class = 20;
  std::vector<std::size_t> hidden{64};
  nn::TrainConfig train;
};

// Each shadow trains on a random half of `shadow_data` (members) and is
// evaluated on both halves.
ShadowEnsemble build_shadow_ensemble(const data::Dataset& shadow_data, const ShadowConfig& cfg,
                                     std::uint64_t seed);

// Bayes posterior of membership with the given prior.
double membership_posterior(double member_likelihood, double nonmember_likelihood,
                            double prior = 0.5);

// Privacy risk of z under the target model: membership posterior (prior
// 1/2) of the bin holding the model's confidence on z's label.
double privacy_risk(const nn::MlpParams& target, const ShadowEnsemble& shadows,
                    const data::Sample& z);

}  // namespace memlab::scores
