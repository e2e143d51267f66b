#include <cmath>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "memlab/attacks.hpp"
#include "memlab/data.hpp"
#include "memlab/error.hpp"
#include "memlab/harness.hpp"
#include "memlab/theory.hpp"

namespace {

using namespace memlab;

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

int cmd_run(const std::string& config, const std::string& output, const std::string& format) {
  const harness::ExperimentConfig cfg = harness::load_config(config);
  const harness::ReportFormat fmt = harness::parse_report_format(format);
  const harness::EAAReport rep = harness::run_experiment(cfg);
  if (output.empty() || output == "-") {
    harness::write_report(rep, fmt, std::cout);
  } else {
    harness::emit_report(rep, fmt, output);
  }
  return 0;
}

int cmd_theory_verify(double delta, double gamma, std::size_t n, std::size_t trials,
                      std::uint64_t seed) {
  theory::TheoremParams p;
  p.delta = delta;
  p.gamma = gamma;
  p.n = n > 0 ? n : static_cast<std::size_t>(std::ceil(4.0 / gamma - 1e-9));
  p.trials = trials;
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  RandomStream rng(seed, 0);
  const theory::TheoremReport r =
      theory::verify_theorem(p, [](RandomStream& s) { return s.uniform(); }, rng);
  std::cout << theory::to_json(r) << '\n';
  return 0;
}

struct ScoreArgs {
  std::string kind = "label-mem";
  std::string dataset = "digits";
  std::string attack = "PINV";
  std::size_t size = 10;
  std::uint64_t seed = 0;
  std::string data_root = "data";
  std::size_t n_models = 20;
  std::string output;
};

int cmd_score(const ScoreArgs& a) {
  harness::ExperimentConfig cfg;
  cfg.dataset = a.dataset;
  cfg.data_root = a.data_root;
  cfg.seed = a.seed;
  cfg.attack_size = a.size;
  cfg.n_models = a.n_models;
  cfg.trials = 1;
  try {
    cfg.score = scores::parse_score_kind(a.kind);
    cfg.attack.kind = attacks::parse_attack_kind(a.attack);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.dataset == "blobs") cfg.train_size = 0;
  cfg.validate();
  const harness::ExperimentData data = harness::load_data(cfg);
  const harness::PreparedTrial trial = harness::prepare_trial(cfg, data, 0);
  scores::ScoreVector sv;
  sv.kind = cfg.score;
  sv.indices = trial.attack_set.indices;
  sv.values = harness::score_indices(cfg, trial.attacked, sv.indices, data.test,
                                     derive_seed(trial.seed, 3));
  if (a.output.empty() || a.output == "-") {
    sv.write_csv(std::cout);
  } else {
    std::ofstream out(a.output, std::ios::binary);
    if (!out) throw FileError("cannot open " + a.output);
    sv.write_csv(out);
    if (!out) throw FileError("failed writing " + a.output);
  }
  return 0;
}

// Bytes for display: values already in [0, 1] scale by 255, anything else
// is min-max stretched per image.
data::Image displayable(const data::Image& img) {
  double lo = 0, hi = 0;
  bool first = true;
  for (const auto& c : img.channels) {
    if (first) {
      lo = c.minCoeff();
      hi = c.maxCoeff();
      first = false;
    }
    lo = std::min(lo, c.minCoeff());
    hi = std::max(hi, c.maxCoeff());
  }
  if (lo >= 0.0 && hi <= 1.0) return img;
  data::Image out = img;
  const double span = hi - lo;
  for (auto& c : out.channels) {
    if (span > 0) {
      c = ((c.array() - lo) / span).matrix();
    } else {
      c.setZero();
    }
  }
  return out;
}

int cmd_preview(const std::string& kind_name, const std::string& input, const std::string& labels,
                const std::string& output, std::uint64_t seed) {
  attacks::AttackSpec spec;
  try {
    spec.kind = attacks::parse_attack_kind(kind_name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  std::vector<data::Image> images = data::load_idx_images(input);
  RandomStream rng(seed, 0);
  std::vector<data::Image> out;
  out.reserve(images.size());

  if (spec.kind == attacks::AttackKind::OOD || spec.kind == attacks::AttackKind::DF) {
    if (labels.empty()) throw ConfigError("attack preview: " + kind_name + " needs --labels");
    const data::Dataset d = data::load_idx(input, labels);
    nn::MlpParams model;
    if (spec.kind == attacks::AttackKind::DF) {
      nn::TrainConfig tc;
      tc.seed = seed;
      const std::size_t hidden[] = {64};
      model = nn::train(d, nn::layer_sizes_for(d, hidden), tc).params;
    }
    const data::Dataset pool = data::rotate90(d);
    data::AttackSet all;
    for (std::size_t i = 0; i < d.size(); ++i) all.indices.push_back(i);
    const data::Dataset attacked = data::apply_attack(d, all, spec, {&pool, &model, &rng});
    for (const data::Sample& s : attacked.samples()) out.push_back(displayable(s.image));
  } else {
    for (const data::Image& img : images) {
      switch (spec.kind) {
        case attacks::AttackKind::PINV: out.push_back(displayable(attacks::pinv_attack(img))); break;
        case attacks::AttackKind::EMD: out.push_back(attacks::emd_attack(img, spec.emd_iterations)); break;
        default: out.push_back(img); break;
      }
    }
  }
  data::store_idx_images(out, output);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memlab: memorization scores, attacks on them, and the stability construction"};
  app.require_subcommand(1);

  std::string config, output, format = "csv";
  CLI::App* run = app.add_subcommand("run", "Run an experiment described by a config file");
  run->add_option("--config", config, "Config file (key = value)")->required();
  run->add_option("--output", output, "Report path (stdout when omitted)");
  run->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  CLI::App* theory_cmd = app.add_subcommand("theory", "Stability construction checks");
  theory_cmd->require_subcommand(1);
  double delta = 0.1, gamma = 0.2;
  std::size_t n = 0, trials = 10000;
  std::uint64_t theory_seed = 0;
  CLI::App* verify = theory_cmd->add_subcommand("verify", "Monte Carlo check of the success probability");
  verify->add_option("--delta", delta)->required();
  verify->add_option("--gamma", gamma)->required();
  verify->add_option("--n", n, "Database size (default ceil(4 / gamma))");
  verify->add_option("--trials", trials);
  verify->add_option("--seed", theory_seed);

  ScoreArgs sa;
  CLI::App* score = app.add_subcommand("score", "Score an attacked attack set");
  score->add_option("--kind", sa.kind)->required();
  score->add_option("--dataset", sa.dataset)->check(CLI::IsMember({"digits", "blobs"}));
  score->add_option("--attack", sa.attack)->required();
  score->add_option("--size", sa.size)->required();
  score->add_option("--seed", sa.seed);
  score->add_option("--data-root", sa.data_root);
  score->add_option("--n-models", sa.n_models);
  score->add_option("--output", sa.output);

  CLI::App* attack = app.add_subcommand("attack", "Attack utilities");
  attack->require_subcommand(1);
  std::string pkind, pin, plabels, pout;
  std::uint64_t pseed = 0;
  CLI::App* preview = attack->add_subcommand("preview", "Attack every image of an IDX file");
  preview->add_option("--kind", pkind)->required();
  preview->add_option("--input", pin, "IDX image file")->required();
  preview->add_option("--output", pout, "IDX image file")->required();
  preview->add_option("--labels", plabels, "IDX label file (OOD and DF)");
  preview->add_option("--seed", pseed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config, output, format);
    if (*verify) return cmd_theory_verify(delta, gamma, n, trials, theory_seed);
    if (*score) return cmd_score(sa);
    if (*preview) return cmd_preview(pkind, pin, plabels, pout, pseed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
