#include "memlab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include <json.hpp>

#include "memlab/error.hpp"

namespace memlab::theory {

namespace {

constexpr double kCountSlack = 1e-9;

void check_probability(double delta, const char* who) {
  if (!(delta >= 0.0 && delta <= 1.0)) {
    throw std::invalid_argument(std::string(who) + ": delta must lie in [0, 1]");
  }
}

}  // namespace

std::optional<Database> mechanism_b(std::span<const double> block, double delta,
                                    RandomStream& rng) {
  check_probability(delta, "mechanism_b");
  if (rng.bernoulli(delta)) return Database(block.begin(), block.end());
  return std::nullopt;
}

std::vector<Block> partition_blocks(std::size_t n, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("partition_blocks: gamma must lie in (0, 1]");
  }
  const auto len = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(n) + kCountSlack));
  if (len == 0) throw std::invalid_argument("partition_blocks: gamma * n must be at least 1");
  std::vector<Block> blocks;
  for (std::size_t start = 0; start + len <= n; start += len) blocks.push_back({start, len});
  blocks.back().length = n - blocks.back().start;
  return blocks;
}

bool PredicateQuery::predicate(double u) const {
  return std::binary_search(released.begin(), released.end(), u);
}

std::size_t PredicateQuery::kept_count() const {
  return static_cast<std::size_t>(std::count(kept.begin(), kept.end(), true));
}

PredicateQuery build_predicate_query(std::span<const double> z, double gamma, double delta,
                                     double sensitivity, RandomStream& rng) {
  if (!(sensitivity > 0.0)) throw std::invalid_argument("build_predicate_query: Delta must be positive");
  PredicateQuery pq;
  pq.blocks = partition_blocks(z.size(), gamma);
  for (const Block& b : pq.blocks) {
    const std::optional<Database> out = mechanism_b(z.subspan(b.start, b.length), delta, rng);
    pq.kept.push_back(out.has_value());
    if (out) pq.released.insert(pq.released.end(), out->begin(), out->end());
  }
  std::sort(pq.released.begin(), pq.released.end());

  auto released = std::make_shared<const std::vector<double>>(pq.released);
  pq.query.sensitivity = sensitivity;
  pq.query.evaluate = [released, sensitivity](std::span<const double> db) {
    std::size_t hits = 0;
    for (double u : db) {
      if (std::binary_search(released->begin(), released->end(), u)) ++hits;
    }
    return sensitivity * static_cast<double>(hits);
  };
  return pq;
}

SensitivityReport sensitivity_check(const SensitiveQuery& q, std::span<const double> base,
                                    std::size_t trials, RandomStream& rng) {
  if (trials < 1) throw std::invalid_argument("sensitivity_check: trials must be positive");
  if (base.empty()) throw std::invalid_argument("sensitivity_check: empty database");
  SensitivityReport r;
  r.declared = q.sensitivity;
  const double at_base = q(base);
  Database neighbor(base.begin(), base.end());
  for (std::size_t t = 0; t < trials; ++t) {
    const auto j = static_cast<std::size_t>(rng.uniform_index(base.size()));
    neighbor[j] = rng.uniform();
    r.max_change = std::max(r.max_change, std::abs(at_base - q(neighbor)));
    neighbor[j] = base[j];
  }
  r.pass = r.max_change <= r.declared + kSensitivitySlack;
  return r;
}

SensitivityReport exhaustive_sensitivity(const SensitiveQuery& q, std::span<const double> base,
                                         std::span<const double> replacements) {
  SensitivityReport r;
  r.declared = q.sensitivity;
  const double at_base = q(base);
  Database neighbor(base.begin(), base.end());
  for (std::size_t j = 0; j < base.size(); ++j) {
    for (double v : replacements) {
      neighbor[j] = v;
      r.max_change = std::max(r.max_change, std::abs(at_base - q(neighbor)));
    }
    neighbor[j] = base[j];
  }
  r.pass = r.max_change <= r.declared + kSensitivitySlack;
  return r;
}

double GameTranscript::max_error() const {
  double worst = 0.0;
  for (const Round& r : rounds) worst = std::max(worst, r.error);
  return worst;
}

GameTranscript accuracy_game(const Mechanism& mechanism, const Adversary& adversary,
                             std::size_t n, std::size_t k, const Population& population,
                             RandomStream& rng) {
  if (n == 0) throw std::invalid_argument("accuracy_game: sample size must be positive");
  Database sample(n);
  for (double& v : sample) v = population(rng);
  GameTranscript transcript;
  std::vector<GameQuery> queries;
  queries.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    queries.push_back(adversary(transcript));
    const double answer = mechanism(sample, queries);
    const double truth = queries.back().population_value;
    transcript.rounds.push_back({answer, truth, std::abs(answer - truth)});
  }
  return transcript;
}

void TheoremParams::validate() const {
  check_probability(delta, "theorem");
  if (!(gamma > delta && gamma <= 1.0)) {
    throw std::invalid_argument("theorem: gamma must satisfy delta < gamma <= 1");
  }
  if (!(gamma * static_cast<double>(n) >= 1.0 - kCountSlack)) {
    throw std::invalid_argument("theorem: n * gamma must be at least 1");
  }
  if (!(sensitivity > 0.0)) throw std::invalid_argument("theorem: Delta must be positive");
  if (trials < 1) throw std::invalid_argument("theorem: trials must be positive");
}

double theorem_success_probability(double delta, double gamma) {
  const double blocks = std::ceil(1.0 / gamma - kCountSlack);
  return 1.0 - std::pow(1.0 - delta, blocks);
}

double exact_success_probability(const std::vector<Block>& blocks, double delta, double gamma,
                                 std::size_t n) {
  const double need = gamma * static_cast<double>(n) - kCountSlack;
  // dist[s] = probability that the kept blocks hold exactly s entries.
  std::vector<double> dist(n + 1, 0.0);
  dist[0] = 1.0;
  for (const Block& b : blocks) {
    std::vector<double> next(n + 1, 0.0);
    for (std::size_t s = 0; s <= n; ++s) {
      if (dist[s] == 0.0) continue;
      next[s] += dist[s] * (1.0 - delta);
      if (s + b.length <= n) next[s + b.length] += dist[s] * delta;
    }
    dist = std::move(next);
  }
  double p = 0.0;
  for (std::size_t s = 0; s <= n; ++s) {
    if (static_cast<double>(s) >= need) p += dist[s];
  }
  return p;
}

std::pair<double, double> wilson_interval(std::size_t successes, std::size_t trials, double z) {
  if (trials == 0) throw std::invalid_argument("wilson_interval: no trials");
  const double nt = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / nt;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nt;
  const double centre = (p + z2 / (2.0 * nt)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nt + z2 / (4.0 * nt * nt)) / denom;
  const double lo = successes == 0 ? 0.0 : std::max(0.0, centre - half);
  const double hi = successes == trials ? 1.0 : std::min(1.0, centre + half);
  return {lo, hi};
}

TheoremReport verify_theorem(const TheoremParams& params, const Population& population,
                             RandomStream& rng) {
  params.validate();
  TheoremReport r;
  r.delta = params.delta;
  r.gamma = params.gamma;
  r.n = params.n;
  r.trials = params.trials;
  const std::vector<Block> layout = partition_blocks(params.n, params.gamma);
  r.blocks = layout.size();
  r.exact = exact_success_probability(layout, params.delta, params.gamma, params.n);
  r.lower_bound = params.delta / (2.0 * params.gamma);

  const double threshold =
      params.gamma * params.sensitivity * static_cast<double>(params.n) - kCountSlack * params.sensitivity;
  std::size_t successes = 0;
  Database z(params.n);
  for (std::size_t t = 0; t < params.trials; ++t) {
    RandomStream trial = rng.split(t);
    for (double& v : z) v = population(trial);
    const PredicateQuery pq =
        build_predicate_query(z, params.gamma, params.delta, params.sensitivity, trial);
    // The predicate holds on finitely many points, so q_p(P) = 0.
    if (pq.query(z) >= threshold) ++successes;
  }
  r.empirical = static_cast<double>(successes) / static_cast<double>(params.trials);
  std::tie(r.ci_low, r.ci_high) = wilson_interval(successes, params.trials);
  r.pass = r.exact >= r.ci_low && r.exact <= r.ci_high && r.ci_high >= r.lower_bound;
  return r;
}

std::string to_json(const TheoremReport& r) {
  nlohmann::ordered_json j;
  j["delta"] = r.delta;
  j["gamma"] = r.gamma;
  j["n"] = r.n;
  j["trials"] = r.trials;
  j["empirical"] = r.empirical;
  j["exact"] = r.exact;
  j["lower_bound"] = r.lower_bound;
  j["ci_low"] = r.ci_low;
  j["ci_high"] = r.ci_high;
  j["pass"] = r.pass;
  return j.dump(2);
}

namespace {

double mass(const Distribution& d, const Outcome& o) {
  const auto it = d.find(o);
  return it == d.end() ? 0.0 : it->second;
}

}  // namespace

StabilityReport stability_check(const FiniteMechanism& mechanism, std::size_t universe,
                                 std::size_t db_size, double epsilon, double delta) {
  if (universe == 0 || db_size == 0) {
    throw std::invalid_argument("stability_check: empty universe or database");
  }
  if (!(epsilon >= 0.0) || !(delta >= 0.0)) {
    throw std::invalid_argument("stability_check: epsilon and delta must be non-negative");
  }
  double total = 1.0;
  for (std::size_t i = 0; i < db_size; ++i) {
    total *= static_cast<double>(universe);
    if (total > 1e6) throw CapacityError("stability_check: too many databases to enumerate");
  }
  const auto count = static_cast<std::size_t>(total);
  const double scale = std::exp(epsilon);

  auto decode = [&](std::size_t code) {
    std::vector<int> db(db_size);
    for (std::size_t i = 0; i < db_size; ++i) {
      db[i] = static_cast<int>(code % universe);
      code /= universe;
    }
    return db;
  };

  StabilityReport report;
  report.worst_excess = -std::numeric_limits<double>::infinity();
  std::vector<Distribution> cache(count);
  std::vector<bool> cached(count, false);
  auto dist_of = [&](std::size_t code) -> const Distribution& {
    if (!cached[code]) {
      const std::vector<int> db = decode(code);
      cache[code] = mechanism(db);
      cached[code] = true;
    }
    return cache[code];
  };

  for (std::size_t code = 0; code < count; ++code) {
    const std::vector<int> db = decode(code);
    std::size_t stride = 1;
    for (std::size_t pos = 0; pos < db_size; ++pos, stride *= universe) {
      for (std::size_t v = 0; v < universe; ++v) {
        if (static_cast<int>(v) == db[pos]) continue;
        const std::size_t other = code + (v - static_cast<std::size_t>(db[pos])) * stride;
        const Distribution& p = dist_of(code);
        const Distribution& q = dist_of(other);

        std::vector<Outcome> support;
        for (const auto& [o, m] : p) support.push_back(o);
        for (const auto& [o, m] : q) {
          if (!p.contains(o)) support.push_back(o);
        }
        if (support.size() > kMaxEnumeratedOutputs) {
          throw CapacityError("stability_check: more than " + std::to_string(kMaxEnumeratedOutputs) +
                              " outputs to enumerate");
        }
        std::vector<double> diff(support.size());
        for (std::size_t k = 0; k < support.size(); ++k) {
          diff[k] = mass(p, support[k]) - scale * mass(q, support[k]);
        }
        // Gray-code walk over every event R.
        const std::size_t subsets = std::size_t{1} << support.size();
        std::size_t mask = 0;
        double sum = 0.0;
        double best = -delta;
        std::size_t best_mask = 0;
        for (std::size_t g = 1; g < subsets; ++g) {
          const int bit = std::countr_zero(g);
          mask ^= std::size_t{1} << bit;
          sum += (mask >> bit & 1U) ? diff[bit] : -diff[bit];
          if (sum - delta > best) {
            best = sum - delta;
            best_mask = mask;
          }
        }
        ++report.pairs_checked;
        if (best > report.worst_excess) {
          report.worst_excess = best;
          report.worst_database = db;
          report.worst_neighbor = decode(other);
          report.worst_event.clear();
          for (std::size_t k = 0; k < support.size(); ++k) {
            if (best_mask >> k & 1U) report.worst_event.push_back(support[k]);
          }
        }
      }
    }
  }
  if (report.pairs_checked == 0) report.worst_excess = -delta;
  report.pass = report.worst_excess <= 1e-12;
  return report;
}

double total_variation(const Distribution& a, const Distribution& b) {
  double tv = 0.0;
  for (const auto& [o, m] : a) tv += std::abs(m - mass(b, o));
  for (const auto& [o, m] : b) {
    if (!a.contains(o)) tv += m;
  }
  return tv / 2.0;
}

Distribution mechanism_b_distribution(std::span<const int> block, double delta) {
  check_probability(delta, "mechanism_b_distribution");
  Distribution d;
  if (delta < 1.0) d[Outcome{}] += 1.0 - delta;
  if (delta > 0.0) d[Outcome(block.begin(), block.end())] += delta;
  return d;
}

FiniteMechanism post_process(FiniteMechanism mechanism, std::function<Outcome(const Outcome&)> f) {
  return [mechanism = std::move(mechanism), f = std::move(f)](std::span<const int> db) {
    Distribution out;
    for (const auto& [o, m] : mechanism(db)) out[f(o)] += m;
    return out;
  };
}

}  // namespace memlab::theory
