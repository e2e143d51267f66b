#include "memlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "memlab/error.hpp"

namespace memlab::harness {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config: bad value for " + key + ": '" + value + "'");
  }
  return out;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_number<std::size_t>(key, item));
  }
  return out;
}

template <class Parse>
auto wrap_config(const std::string& key, Parse parse) {
  try {
    return parse();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config: " + key + ": " + e.what());
  }
}

void set_key(ExperimentConfig& c, const std::string& key, const std::string& v,
             const std::filesystem::path& base_dir) {
  using std::size_t;
  if (key == "dataset") c.dataset = v;
  else if (key == "data_root") {
    std::filesystem::path p(v);
    c.data_root = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  }
  else if (key == "downsample") c.downsample = parse_number<size_t>(key, v);
  else if (key == "train_size") c.train_size = parse_number<size_t>(key, v);
  else if (key == "ood_pool") c.ood_pool = v;
  else if (key == "blob_classes") c.blob_classes = parse_number<size_t>(key, v);
  else if (key == "blob_dim") c.blob_dim = parse_number<size_t>(key, v);
  else if (key == "blob_per_class") c.blob_per_class = parse_number<size_t>(key, v);
  else if (key == "blob_test_per_class") c.blob_test_per_class = parse_number<size_t>(key, v);
  else if (key == "blob_spread") c.blob_spread = parse_number<double>(key, v);
  else if (key == "hidden") c.hidden = parse_list(key, v);
  else if (key == "lr") c.train.learning_rate = parse_number<double>(key, v);
  else if (key == "momentum") c.train.momentum = parse_number<double>(key, v);
  else if (key == "batch_size") c.train.batch_size = parse_number<size_t>(key, v);
  else if (key == "epochs") c.train.epochs = parse_number<size_t>(key, v);
  else if (key == "attack") c.attack.kind = wrap_config(key, [&] { return attacks::parse_attack_kind(v); });
  else if (key == "attack_size") c.attack_size = parse_number<size_t>(key, v);
  else if (key == "overshoot") c.attack.overshoot = parse_number<double>(key, v);
  else if (key == "emd_iterations") c.attack.emd_iterations = parse_number<size_t>(key, v);
  else if (key == "pinv_tol") c.attack.pinv_tolerance = parse_number<double>(key, v);
  else if (key == "deepfool_max_iterations") c.attack.deepfool_max_iterations = parse_number<size_t>(key, v);
  else if (key == "score") c.score = wrap_config(key, [&] { return scores::parse_score_kind(v); });
  else if (key == "n_models") c.n_models = parse_number<size_t>(key, v);
  else if (key == "probes") c.probes = parse_number<size_t>(key, v);
  else if (key == "hvp_step") c.hvp_step = parse_number<double>(key, v);
  else if (key == "curvature_epoch") c.curvature_epoch = parse_number<size_t>(key, v);
  else if (key == "shadow_models") c.shadow_models = parse_number<size_t>(key, v);
  else if (key == "bins") c.bins = parse_number<size_t>(key, v);
  else if (key == "trials") c.trials = parse_number<size_t>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "workers") c.workers = parse_number<size_t>(key, v);
  else throw ConfigError("config: unknown key '" + key + "'");
}

std::size_t effective_epoch(const ExperimentConfig& cfg) {
  if (cfg.curvature_epoch > 0) return cfg.curvature_epoch;
  return (cfg.train.epochs + 1) / 2;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset != "digits" && dataset != "blobs") {
    throw ConfigError("config: dataset must be digits or blobs, got '" + dataset + "'");
  }
  if (ood_pool != "auto" && ood_pool != "rotated-test" && ood_pool != "inverted-test") {
    throw ConfigError("config: ood_pool must be auto, rotated-test or inverted-test");
  }
  if (downsample < 1) throw ConfigError("config: downsample must be at least 1");
  if (trials < 1) throw ConfigError("config: trials must be at least 1");
  if (workers < 1) throw ConfigError("config: workers must be at least 1");
  if (n_models < 2) throw ConfigError("config: n_models must be at least 2");
  if (probes < 1) throw ConfigError("config: probes must be at least 1");
  if (bins < 1 || shadow_models < 1) throw ConfigError("config: bins and shadow_models must be positive");
  if (curvature_epoch > train.epochs) throw ConfigError("config: curvature_epoch exceeds epochs");
  if (!(blob_spread >= 0)) throw ConfigError("config: blob_spread must be non-negative");
  if (train_size > 0 && attack_size > train_size) {
    throw ConfigError("config: attack_size exceeds train_size");
  }
  try {
    train.validate();
    attack.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  if (!base_dir.empty()) cfg.data_root = base_dir / cfg.data_root;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    try {
      set_key(cfg, key, value, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  return parse_config(in, path.parent_path());
}

namespace {

data::Dataset invert(const data::Dataset& d) {
  std::vector<data::Sample> out = d.samples();
  for (data::Sample& s : out) {
    for (data::MatrixXd& c : s.image.channels) c = (1.0 - c.array()).matrix();
  }
  return data::Dataset(std::move(out), d.num_classes(), d.split());
}

}  // namespace

ExperimentData load_data(const ExperimentConfig& cfg) {
  ExperimentData out;
  if (cfg.dataset == "digits") {
    data::TrainTest tt = data::load_fixture(cfg.data_root, "digits");
    out.train = std::move(tt.train);
    out.test = std::move(tt.test);
  } else {
    RandomStream train_rng(cfg.seed, 0xb10b5);
    RandomStream test_rng(cfg.seed, 0xb10b6);
    out.train = data::synth_blobs(cfg.blob_classes, cfg.blob_dim, cfg.blob_per_class,
                                  cfg.blob_spread, train_rng, data::Split::Train);
    out.test = data::synth_blobs(cfg.blob_classes, cfg.blob_dim, cfg.blob_test_per_class,
                                 cfg.blob_spread, test_rng, data::Split::Test);
  }
  if (cfg.downsample > 1) {
    out.train = data::downsample(out.train, cfg.downsample);
    out.test = data::downsample(out.test, cfg.downsample);
  }
  if (cfg.train_size > 0) {
    if (cfg.train_size > out.train.size()) {
      throw ConfigError("config: train_size " + std::to_string(cfg.train_size) + " exceeds the " +
                        std::to_string(out.train.size()) + " available samples");
    }
    out.train = data::take(out.train, cfg.train_size);
  }
  if (cfg.attack_size > out.train.size()) throw ConfigError("config: attack_size exceeds dataset size");
  std::string pool = cfg.ood_pool;
  if (pool == "auto") pool = cfg.dataset == "digits" ? "rotated-test" : "inverted-test";
  out.ood_pool = pool == "rotated-test" ? data::rotate90(out.test) : invert(out.test);
  return out;
}

double eaa(std::span<const double> attacked, std::span<const double> baseline) {
  if (attacked.empty() || baseline.empty()) throw std::invalid_argument("eaa: empty score list");
  const double a = std::accumulate(attacked.begin(), attacked.end(), 0.0) / static_cast<double>(attacked.size());
  const double b = std::accumulate(baseline.begin(), baseline.end(), 0.0) / static_cast<double>(baseline.size());
  return a - b;
}

std::vector<double> score_indices(const ExperimentConfig& cfg, const data::Dataset& d,
                                  std::span<const std::size_t> indices,
                                  const data::Dataset& test, std::uint64_t seed) {
  using scores::ScoreKind;
  const std::vector<std::size_t> sizes = nn::layer_sizes_for(d, cfg.hidden);
  nn::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(seed, 1);
  std::vector<double> out;
  out.reserve(indices.size());

  switch (cfg.score) {
    case ScoreKind::LabelMem: {
      const scores::Trainer trainer = scores::mlp_trainer(cfg.hidden, cfg.train);
      return scores::label_mem_loo(trainer, d, indices, cfg.n_models, derive_seed(seed, 0)).values;
    }
    case ScoreKind::Curvature: {
      const std::size_t at = effective_epoch(cfg);
      nn::MlpParams snapshot;
      nn::train(d, sizes, tc, {}, [&](std::size_t epoch, const nn::MlpParams& p) {
        if (epoch == at) snapshot = p;
      });
      RandomStream rng(seed, 2);
      for (std::size_t i : indices) {
        out.push_back(scores::curvature_score(snapshot, d[i], cfg.probes, cfg.hvp_step, rng));
      }
      return out;
    }
    case ScoreKind::PrivacyRisk: {
      scores::ShadowConfig sc;
      sc.shadow_count = cfg.shadow_models;
      sc.bins = cfg.bins;
      sc.hidden = cfg.hidden;
      sc.train = cfg.train;
      const scores::ShadowEnsemble shadows = scores::build_shadow_ensemble(test, sc, derive_seed(seed, 3));
      const nn::MlpParams target = nn::train(d, sizes, tc).params;
      for (std::size_t i : indices) out.push_back(scores::privacy_risk(target, shadows, d[i]));
      return out;
    }
    default: {
      const nn::TrainResult r = nn::train(d, sizes, tc, indices);
      const scores::ScoreVector ev = scores::event_scores(r.events, cfg.score);
      for (double v : ev.values) out.push_back(scores::memorization_oriented(cfg.score, v));
      return out;
    }
  }
}

PreparedTrial prepare_trial(const ExperimentConfig& cfg, const ExperimentData& data,
                            std::size_t trial) {
  PreparedTrial p;
  p.seed = derive_seed(cfg.seed, trial);
  RandomStream select(p.seed, 0);
  p.attack_set = data::select_attack_set(data.train, cfg.attack_size, select);
  nn::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(p.seed, 2);
  p.clean_model = nn::train(data.train, nn::layer_sizes_for(data.train, cfg.hidden), tc).params;
  RandomStream attack_rng(p.seed, 1);
  attacks::AttackContext ctx{&data.ood_pool, &p.clean_model, &attack_rng};
  p.attacked = data::apply_attack(data.train, p.attack_set, cfg.attack, ctx);
  return p;
}

bool BaselineCache::lookup(const std::string& key, double& value) const {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto it = values_.find(key);
  if (it == values_.end()) return false;
  value = it->second;
  return true;
}

void BaselineCache::store(const std::string& key, double value) {
  std::lock_guard<std::mutex> lock(mutex_);
  values_[key] = value;
}

namespace {

// Everything the unattacked pipeline of one trial depends on.
std::string baseline_key(const ExperimentConfig& c, std::size_t trial) {
  std::ostringstream k;
  k << c.dataset << '|' << c.data_root.string() << '|' << c.downsample << '|' << c.train_size << '|'
    << c.blob_classes << '|' << c.blob_dim << '|' << c.blob_per_class << '|'
    << c.blob_test_per_class << '|' << std::hexfloat << c.blob_spread << '|';
  for (std::size_t h : c.hidden) k << h << ',';
  k << '|' << c.train.learning_rate << '|' << c.train.momentum << '|' << c.train.batch_size << '|'
    << c.train.epochs << '|' << c.attack_size << '|' << scores::to_string(c.score) << '|'
    << c.n_models << '|' << c.probes << '|' << c.hvp_step << '|' << c.curvature_epoch << '|'
    << c.shadow_models << '|' << c.bins << '|' << c.seed << '|' << trial;
  return k.str();
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

TrialResult run_trial(const ExperimentConfig& cfg, const ExperimentData& data, std::size_t trial,
                      BaselineCache* cache) {
  const PreparedTrial p = prepare_trial(cfg, data, trial);
  const std::uint64_t score_seed = derive_seed(p.seed, 3);
  const std::vector<std::size_t>& idx = p.attack_set.indices;

  TrialResult r;
  r.trial = trial;
  const std::vector<double> attacked = score_indices(cfg, p.attacked, idx, data.test, score_seed);
  r.mean_attacked = mean_of(attacked);

  const std::string key = baseline_key(cfg, trial);
  if (cfg.attack.kind == attacks::AttackKind::None) {
    r.mean_baseline = r.mean_attacked;
  } else if (cache == nullptr || !cache->lookup(key, r.mean_baseline)) {
    r.mean_baseline = mean_of(score_indices(cfg, data.train, idx, data.test, score_seed));
  }
  if (cache != nullptr) cache->store(key, r.mean_baseline);
  r.eaa = r.mean_attacked - r.mean_baseline;

  r.test_acc_before = nn::accuracy(p.clean_model, data.test);
  nn::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(p.seed, 2);
  const nn::MlpParams after =
      nn::train(p.attacked, nn::layer_sizes_for(p.attacked, cfg.hidden), tc).params;
  r.test_acc_after = nn::accuracy(after, data.test);
  return r;
}

template <class E>
[[noreturn]] void rethrow_as(const E&, const std::string& msg) {
  throw E(msg);
}

[[noreturn]] void rethrow_with_trial(std::exception_ptr ep, std::size_t trial) {
  const std::string prefix = "trial " + std::to_string(trial) + ": ";
  try {
    std::rethrow_exception(ep);
  } catch (const ConfigError& e) {
    rethrow_as(e, prefix + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  } catch (const FormatError& e) {
    rethrow_as(e, prefix + e.what());
  } catch (const CapacityError& e) {
    rethrow_as(e, prefix + e.what());
  } catch (const FileError& e) {
    rethrow_as(e, prefix + e.what());
  } catch (const std::invalid_argument& e) {
    rethrow_as(e, prefix + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(prefix + e.what());
  }
}

}  // namespace

std::size_t env_worker_cap() {
  const char* v = std::getenv("MEMLAB_WORKERS");
  if (v == nullptr) return 0;
  std::size_t out = 0;
  const std::string s(v);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size()) return 0;
  return out;
}

EAAReport run_experiment(const ExperimentConfig& cfg, BaselineCache* cache) {
  cfg.validate();
  return run_experiment(cfg, load_data(cfg), cache);
}

EAAReport run_experiment(const ExperimentConfig& cfg, const ExperimentData& data,
                         BaselineCache* cache) {
  cfg.validate();
  std::vector<TrialResult> results(cfg.trials);
  std::vector<std::exception_ptr> errors(cfg.trials);
  std::size_t workers = cfg.workers;
  if (const std::size_t cap = env_worker_cap(); cap > 0) workers = std::min(workers, cap);
  workers = std::max<std::size_t>(1, std::min(workers, cfg.trials));

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < cfg.trials; t = next++) {
      try {
        results[t] = run_trial(cfg, data, t, cache);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    if (errors[t]) rethrow_with_trial(errors[t], t);
  }

  EAAReport rep;
  rep.attack = std::string(attacks::to_string(cfg.attack.kind));
  rep.score_kind = std::string(scores::to_string(cfg.score));
  rep.trials = std::move(results);
  const double n = static_cast<double>(rep.trials.size());
  for (const TrialResult& r : rep.trials) {
    rep.eaa_mean += r.eaa / n;
    rep.attacked_mean += r.mean_attacked / n;
    rep.baseline_mean += r.mean_baseline / n;
  }
  if (rep.trials.size() > 1) {
    double ss = 0.0;
    for (const TrialResult& r : rep.trials) ss += (r.eaa - rep.eaa_mean) * (r.eaa - rep.eaa_mean);
    rep.eaa_variance = ss / (n - 1.0);
    rep.eaa_stderr = std::sqrt(rep.eaa_variance / n);
  }
  return rep;
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "csv") return ReportFormat::Csv;
  if (name == "json") return ReportFormat::Json;
  throw ConfigError("unknown report format: " + std::string(name));
}

namespace {

std::string sig6(double v) {
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s << std::setprecision(6) << v;
  return s.str();
}

double round6(double v) { return std::stod(sig6(v)); }

}  // namespace

void write_report(const EAAReport& report, ReportFormat format, std::ostream& out) {
  if (format == ReportFormat::Csv) {
    out << kCsvHeader << '\n';
    for (const TrialResult& r : report.trials) {
      out << r.trial << ',' << report.attack << ',' << report.score_kind << ','
          << sig6(r.mean_attacked) << ',' << sig6(r.mean_baseline) << ',' << sig6(r.eaa) << ','
          << sig6(r.test_acc_before) << ',' << sig6(r.test_acc_after) << '\n';
    }
    return;
  }
  nlohmann::ordered_json j;
  j["attack"] = report.attack;
  j["score_kind"] = report.score_kind;
  j["eaa_mean"] = round6(report.eaa_mean);
  j["eaa_variance"] = round6(report.eaa_variance);
  j["eaa_stderr"] = round6(report.eaa_stderr);
  j["attacked_mean"] = round6(report.attacked_mean);
  j["baseline_mean"] = round6(report.baseline_mean);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const TrialResult& r : report.trials) {
    rows.push_back({{"trial", r.trial},
                    {"mean_attacked", round6(r.mean_attacked)},
                    {"mean_baseline", round6(r.mean_baseline)},
                    {"eaa", round6(r.eaa)},
                    {"test_acc_before", round6(r.test_acc_before)},
                    {"test_acc_after", round6(r.test_acc_after)}});
  }
  j["trials"] = std::move(rows);
  out << j.dump(2) << '\n';
}

void emit_report(const EAAReport& report, ReportFormat format, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot open report file " + path.string());
  write_report(report, format, out);
  out.flush();
  if (!out) throw FileError("failed writing report file " + path.string());
}

}  // namespace memlab::harness
