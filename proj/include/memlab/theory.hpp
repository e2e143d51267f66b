#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "memlab/random.hpp"

namespace memlab::theory {

// A database of reals in [0, 1].
using Database = std::vector<double>;

// Real-valued query on databases with a declared sensitivity: changing one
// entry should move the answer by at most `sensitivity`.
struct SensitiveQuery {
  std::function<double(std::span<const double>)> evaluate;
  double sensitivity = 0;

  double operator()(std::span<const double> z) const { return evaluate(z); }
};

// Releases the block verbatim with probability delta; otherwise the empty
// database (nullopt), independent of the input.
std::optional<Database> mechanism_b(std::span<const double> block, double delta,
                                    RandomStream& rng);

struct Block {
  std::size_t start = 0;
  std::size_t length = 0;
};

// Consecutive blocks of floor(gamma * n) entries; the remainder joins the
// last block. Requires gamma in (0, 1] and gamma * n >= 1.
std::vector<Block> partition_blocks(std::size_t n, double gamma);

// The counting query built from a sample: p(u) = 1 iff u is an element of
// some block that mechanism_b released, and q_p(z) = Delta * #{j : p(z_j)}.
struct PredicateQuery {
  SensitiveQuery query;
  std::vector<Block> blocks;
  std::vector<bool> kept;          // per block
  std::vector<double> released;    // sorted elements of the kept blocks

  bool predicate(double u) const;
  std::size_t kept_count() const;
};

PredicateQuery build_predicate_query(std::span<const double> z, double gamma, double delta,
                                     double sensitivity, RandomStream& rng);

struct SensitivityReport {
  double max_change = 0;
  double declared = 0;
  bool pass = false;
};

inline constexpr double kSensitivitySlack = 1e-12;

// Each trial moves one random coordinate of `base` to a fresh uniform value
// and records |q(z) - q(z')|.
SensitivityReport sensitivity_check(const SensitiveQuery& q, std::span<const double> base,
                                    std::size_t trials, RandomStream& rng);

// Every coordinate replaced by every value in `replacements`.
SensitivityReport exhaustive_sensitivity(const SensitiveQuery& q, std::span<const double> base,
                                         std::span<const double> replacements);

// ---- accuracy game -------------------------------------------------------

// A statistical query: its value on a sample and on the population.
struct GameQuery {
  std::function<double(std::span<const double>)> on_sample;
  double population_value = 0;
};

struct Round {
  double answer = 0;
  double population_value = 0;
  double error = 0;  // |answer - population value|
};

struct GameTranscript {
  std::vector<Round> rounds;

  double max_error() const;
  bool accurate(double alpha) const { return max_error() <= alpha; }
};

// Population over [0, 1] given by a sampler.
using Population = std::function<double(RandomStream&)>;
// Answers the newest query, seeing the sample and every query so far.
using Mechanism =
    std::function<double(std::span<const double> sample, std::span<const GameQuery> queries)>;
// Picks the next query from the transcript so far (adaptive).
using Adversary = std::function<GameQuery(const GameTranscript& so_far)>;

GameTranscript accuracy_game(const Mechanism& mechanism, const Adversary& adversary,
                             std::size_t n, std::size_t k, const Population& population,
                             RandomStream& rng);

// ---- Monte Carlo check of the accuracy/memorization trade-off -----------

struct TheoremParams {
  double delta = 0.1;
  double gamma = 0.2;
  std::size_t n = 20;
  double sensitivity = 1.0;
  std::size_t trials = 10000;

  void validate() const;
};

struct TheoremReport {
  double delta = 0, gamma = 0;
  std::size_t n = 0, trials = 0, blocks = 0;
  double empirical = 0;    // frequency of q_p(z) - q_p(P) >= gamma * Delta * n
  double exact = 0;        // probability of that event for this block layout
  double lower_bound = 0;  // delta / (2 gamma)
  double ci_low = 0, ci_high = 0;  // 95% Wilson interval of `empirical`
  bool pass = false;
};

// Closed form 1 - (1 - delta)^ceil(1/gamma).
double theorem_success_probability(double delta, double gamma);

// Probability that the kept blocks hold at least gamma * n entries.
double exact_success_probability(const std::vector<Block>& blocks, double delta, double gamma,
                                 std::size_t n);

std::pair<double, double> wilson_interval(std::size_t successes, std::size_t trials, double z = 1.959963984540054);

// The population must be atomless, so q_p(P) = 0. PASS iff the exact
// probability lies in the interval and the interval reaches the lower
// bound.
TheoremReport verify_theorem(const TheoremParams& params, const Population& population,
                             RandomStream& rng);

std::string to_json(const TheoremReport& r);

// ---- brute-force max-KL stability over a finite universe -----------------

// Databases are tuples over {0, ..., universe-1}; outputs are int tuples
// (the empty tuple stands for the empty database).
using Outcome = std::vector<int>;
using Distribution = std::map<Outcome, double>;
using FiniteMechanism = std::function<Distribution(std::span<const int> database)>;

inline constexpr std::size_t kMaxEnumeratedOutputs = 20;

struct StabilityReport {
  bool pass = false;
  // max over neighbours and events R of P[A(z) in R] - e^eps P[A(z') in R] - delta
  double worst_excess = 0;
  std::vector<int> worst_database, worst_neighbor;
  std::vector<Outcome> worst_event;
  std::size_t pairs_checked = 0;
};

// Enumerates every database of `db_size` entries, every neighbour differing
// in exactly one entry, and every subset of the joint output support.
// Throws CapacityError when a support exceeds kMaxEnumeratedOutputs.
StabilityReport stability_check(const FiniteMechanism& mechanism, std::size_t universe,
                                 std::size_t db_size, double epsilon, double delta);

double total_variation(const Distribution& a, const Distribution& b);

// mechanism_b's exact output distribution on a single block.
Distribution mechanism_b_distribution(std::span<const int> block, double delta);

// f applied to every outcome; masses of colliding images add up.
FiniteMechanism post_process(FiniteMechanism mechanism, std::function<Outcome(const Outcome&)> f);

}  // namespace memlab::theory
