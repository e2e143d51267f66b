#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memlab/attacks.hpp"
#include "memlab/data.hpp"
#include "memlab/nn.hpp"
#include "memlab/scores.hpp"

namespace memlab::harness {

struct ExperimentConfig {
  // data
  std::string dataset = "digits";  // digits | blobs
  std::filesystem::path data_root = "data";
  std::size_t downsample = 1;
  std::size_t train_size = 1500;  // 0 keeps everything
  std::string ood_pool = "auto";  // auto | rotated-test | inverted-test
  std::size_t blob_classes = 4;
  std::size_t blob_dim = 16;
  std::size_t blob_per_class = 150;
  std::size_t blob_test_per_class = 50;
  double blob_spread = 0.08;

  // model
  std::vector<std::size_t> hidden{64};
  nn::TrainConfig train;

  // attack
  attacks::AttackSpec attack;
  std::size_t attack_size = 10;

  // score
  scores::ScoreKind score = scores::ScoreKind::LabelMem;
  std::size_t n_models = 20;
  std::size_t probes = 10;
  double hvp_step = -1;
  std::size_t curvature_epoch = 0;  // 0 picks ceil(epochs / 2)
  std::size_t shadow_models = 8;
  std::size_t bins = 10;

  // protocol
  std::size_t trials = 3;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  // Throws ConfigError.
  void validate() const;
};

// `key = value` lines; '#' starts a comment. Relative data_root values are
// resolved against `base_dir`. Throws ConfigError naming the line.
ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// The training set, a held-out test set, and the OOD pool.
struct ExperimentData {
  data::Dataset train;
  data::Dataset test;
  data::Dataset ood_pool;
};

ExperimentData load_data(const ExperimentConfig& cfg);

// mean(attacked) - mean(baseline). Throws invalid_argument on empty input.
double eaa(std::span<const double> attacked, std::span<const double> baseline);

// Per-sample scores for `indices` of d, oriented so that larger means more
// memorized. `test` feeds the shadow models of the privacy-risk score.
std::vector<double> score_indices(const ExperimentConfig& cfg, const data::Dataset& d,
                                  std::span<const std::size_t> indices,
                                  const data::Dataset& test, std::uint64_t seed);

// One trial's attacked training set. The model trained on the clean set is
// the one DeepFool attacks and the one whose test accuracy is "before".
struct PreparedTrial {
  std::uint64_t seed = 0;
  data::AttackSet attack_set;
  data::Dataset attacked;
  nn::MlpParams clean_model;
};

PreparedTrial prepare_trial(const ExperimentConfig& cfg, const ExperimentData& data,
                            std::size_t trial);

struct TrialResult {
  std::size_t trial = 0;
  double mean_attacked = 0;
  double mean_baseline = 0;
  double eaa = 0;
  double test_acc_before = 0;
  double test_acc_after = 0;
};

struct EAAReport {
  std::string attack;
  std::string score_kind;
  std::vector<TrialResult> trials;
  double eaa_mean = 0;
  double eaa_variance = 0;  // unbiased; 0 for a single trial
  double eaa_stderr = 0;
  double attacked_mean = 0;  // raw mean attacked score over trials
  double baseline_mean = 0;
};

// Baseline score means keyed by everything that shapes the unattacked
// pipeline; lets several attacks share one baseline computation.
class BaselineCache {
 public:
  bool lookup(const std::string& key, double& value) const;
  void store(const std::string& key, double value);

 private:
  mutable std::mutex mutex_;
  std::map<std::string, double> values_;
};

// Runs cfg.trials trials, up to min(cfg.workers, MEMLAB_WORKERS) at a time.
// Trial k uses derive_seed(cfg.seed, k). Errors carry a "trial k: " prefix
// and keep their type.
EAAReport run_experiment(const ExperimentConfig& cfg, BaselineCache* cache = nullptr);
EAAReport run_experiment(const ExperimentConfig& cfg, const ExperimentData& data,
                         BaselineCache* cache = nullptr);

enum class ReportFormat { Csv, Json };
ReportFormat parse_report_format(std::string_view name);

void write_report(const EAAReport& report, ReportFormat format, std::ostream& out);
// Throws FileError naming the path.
void emit_report(const EAAReport& report, ReportFormat format, const std::filesystem::path& path);

inline constexpr std::string_view kCsvHeader =
    "trial,attack,score_kind,mean_attacked,mean_baseline,eaa,test_acc_before,test_acc_after";

// Worker cap from MEMLAB_WORKERS (0 when unset or invalid).
std::size_t env_worker_cap();

}  // namespace memlab::harness
