// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. `--only 4,7` restricts the run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "memlab/attacks.hpp"
#include "memlab/harness.hpp"
#include "memlab/linalg.hpp"
#include "memlab/nn.hpp"
#include "memlab/scores.hpp"
#include "memlab/theory.hpp"
#include "oracles.hpp"

namespace {

using namespace memlab;
using linalg::MatrixXd;
using linalg::VectorXd;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::string eaa_text(const harness::EAAReport& r) {
  return fmt(r.eaa_mean) + " (se " + fmt(r.eaa_stderr, 2) + ")";
}

// ---- desk setup shared by the experiment criteria -----------------------

harness::ExperimentConfig desk_config() {
  harness::ExperimentConfig c;
  c.dataset = "digits";
  c.data_root = MEMLAB_DATA_DIR;
  c.train_size = 1500;
  c.hidden = {64};
  c.train.epochs = 10;
  c.n_models = 20;
  c.trials = 3;
  c.seed = 2024;
  c.workers = 1;
  return c;
}

struct Desk {
  harness::ExperimentData data;
  harness::BaselineCache cache;
  std::map<std::string, harness::EAAReport> runs;

  const harness::EAAReport& run(attacks::AttackKind attack, std::size_t size, scores::ScoreKind score) {
    const std::string key = std::string(attacks::to_string(attack)) + "/" + std::to_string(size) + "/" +
                            std::string(scores::to_string(score));
    auto it = runs.find(key);
    if (it != runs.end()) return it->second;
    harness::ExperimentConfig c = desk_config();
    c.attack.kind = attack;
    c.attack_size = size;
    c.score = score;
    const auto t0 = std::chrono::steady_clock::now();
    harness::EAAReport r = harness::run_experiment(c, data, &cache);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "  ran " << key << " in " << fmt(secs, 3) << "s: EAA " << eaa_text(r) << '\n';
    return runs.emplace(key, std::move(r)).first->second;
  }
};

Desk& desk() {
  static Desk d{harness::load_data(desk_config()), {}, {}};
  return d;
}

const double kMonteCarlo = 1.0 / std::sqrt(20.0);

Verdict attack_ordering() {
  using attacks::AttackKind;
  const auto lm = scores::ScoreKind::LabelMem;
  const harness::EAAReport& none = desk().run(AttackKind::None, 10, lm);
  const harness::EAAReport& ood = desk().run(AttackKind::OOD, 10, lm);
  const harness::EAAReport& pinv = desk().run(AttackKind::PINV, 10, lm);
  Verdict o;
  o.pass = pinv.eaa_mean > ood.eaa_mean && ood.eaa_mean > none.eaa_mean && none.eaa_mean == 0.0 &&
           pinv.eaa_mean - ood.eaa_mean >= 0.1;
  o.detail = "EAA PINV " + eaa_text(pinv) + ", OOD " + eaa_text(ood) + ", None " + eaa_text(none) +
             "; per-sample Monte Carlo error ~" + fmt(kMonteCarlo, 2);
  return o;
}

Verdict size_decay() {
  const auto lm = scores::ScoreKind::LabelMem;
  const harness::EAAReport& small = desk().run(attacks::AttackKind::PINV, 10, lm);
  const harness::EAAReport& large = desk().run(attacks::AttackKind::PINV, 100, lm);
  Verdict o;
  o.pass = large.eaa_mean < small.eaa_mean;
  o.detail = "PINV label-mem EAA size 10 " + eaa_text(small) + " vs size 100 " + eaa_text(large);
  return o;
}

Verdict confidence_ordering() {
  const auto ce = scores::ScoreKind::ConfEvent;
  Verdict o{true, ""};
  for (std::size_t size : {10, 100}) {
    const harness::EAAReport& none = desk().run(attacks::AttackKind::None, size, ce);
    const harness::EAAReport& pinv = desk().run(attacks::AttackKind::PINV, size, ce);
    o.pass = o.pass && pinv.eaa_mean > none.eaa_mean;
    o.detail += "size " + std::to_string(size) + ": PINV " + eaa_text(pinv) + " vs None " + eaa_text(none) + "; ";
  }
  return o;
}

Verdict accuracy_neutrality() {
  using attacks::AttackKind;
  const std::size_t size = 30;  // 2% of 1500
  Verdict o{true, ""};
  for (AttackKind k : {AttackKind::OOD, AttackKind::PINV, AttackKind::EMD, AttackKind::DF}) {
    const harness::EAAReport& r = desk().run(k, size, scores::ScoreKind::ConfEvent);
    double worst = 0;
    for (const harness::TrialResult& t : r.trials) {
      worst = std::max(worst, std::abs(t.test_acc_before - t.test_acc_after));
    }
    o.pass = o.pass && worst <= 0.05;
    o.detail += std::string(attacks::to_string(k)) + " max |delta acc| " + fmt(100 * worst, 3) + "pp; ";
  }
  return o;
}

// ---- theory --------------------------------------------------------------

Verdict theorem_monte_carlo() {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict o{true, ""};
  for (auto [d, g] : {std::pair{0.1, 0.2}, std::pair{0.05, 0.5}, std::pair{0.2, 0.25}}) {
    theory::TheoremParams p;
    p.delta = d;
    p.gamma = g;
    p.n = static_cast<std::size_t>(std::ceil(4.0 / g - 1e-9));
    p.trials = 10000;
    RandomStream rng(7, static_cast<std::uint64_t>(d * 1000 + g * 10));
    const theory::TheoremReport r =
        theory::verify_theorem(p, [](RandomStream& s) { return s.uniform(); }, rng);
    const bool closed = std::abs(r.exact - theory::theorem_success_probability(d, g)) < 1e-12;
    o.pass = o.pass && r.pass && closed;
    o.detail += "(" + fmt(d) + "," + fmt(g) + ") empirical " + fmt(r.empirical) + " CI [" +
                fmt(r.ci_low) + "," + fmt(r.ci_high) + "] exact " + fmt(r.exact, 5) + " bound " +
                fmt(r.lower_bound) + "; ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.pass = o.pass && secs <= 60.0;
  o.detail += fmt(secs, 3) + "s";
  return o;
}

Verdict sensitivity_suite() {
  RandomStream rng(5);
  Verdict o{true, ""};
  double worst = 0;
  for (std::size_t n : {10, 25, 50, 100}) {
    theory::Database z(n);
    for (double& v : z) v = rng.uniform();
    const theory::PredicateQuery pq = theory::build_predicate_query(z, 0.2, 0.5, 1.0, rng);
    const theory::SensitivityReport r = theory::sensitivity_check(pq.query, z, 1000, rng);
    o.pass = o.pass && r.pass;
    worst = std::max(worst, r.max_change);
  }
  const theory::SensitiveQuery planted{[](std::span<const double> z) { return 2.0 * (z[0] > 0.5); }, 1.0};
  theory::Database base(10, 0.25);
  const theory::SensitivityReport bad = theory::sensitivity_check(planted, base, 1000, rng);
  o.pass = o.pass && !bad.pass;
  o.detail = "q_p max change " + fmt(worst) + " <= 1; planted 2-Delta query change " + fmt(bad.max_change) +
             (bad.pass ? " (not caught)" : " (caught)");
  return o;
}

Verdict stability_suite() {
  using theory::Distribution;
  using theory::Outcome;
  Verdict o{true, ""};
  for (double d : {0.1, 0.3}) {
    const theory::FiniteMechanism mb = [d](std::span<const int> db) {
      return theory::mechanism_b_distribution(db, d);
    };
    for (std::size_t n : {1, 2, 3}) {
      o.pass = o.pass && theory::stability_check(mb, 3, n, 0.0, d).pass;
    }
    const auto post = theory::post_process(mb, [](const Outcome& out) {
      return Outcome{out.empty() ? -1 : out.front()};
    });
    o.pass = o.pass && theory::stability_check(post, 3, 2, 0.0, d).pass;
  }
  const theory::FiniteMechanism identity = [](std::span<const int> db) {
    return Distribution{{Outcome(db.begin(), db.end()), 1.0}};
  };
  const theory::StabilityReport id = theory::stability_check(identity, 3, 2, 5.0, 0.99);
  o.pass = o.pass && !id.pass;
  o.detail = "mechanism B (0, delta)-stable for delta in {0.1, 0.3}; post-processed stable; identity excess " +
             fmt(id.worst_excess) + " at (5, 0.99)";
  return o;
}

// ---- numerical kernels --------------------------------------------------

double rel(const MatrixXd& a, const MatrixXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-300});
  return (a - b).norm() / scale;
}

Verdict numerical_kernels() {
  RandomStream rng(99);
  double penrose = 0;
  for (int t = 0; t < 100; ++t) {
    const auto r = static_cast<Eigen::Index>(1 + rng.uniform_index(12));
    const auto c = static_cast<Eigen::Index>(1 + rng.uniform_index(12));
    MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r * c; ++i) m(i / c, i % c) = rng.normal();
    if (t % 4 == 0 && c > 2) m.col(c - 1) = m.col(0) - 2 * m.col(1);
    const MatrixXd p = linalg::pinv(m);
    penrose = std::max({penrose, rel(m * p * m, m), rel(p * m * p, p), rel((m * p).transpose(), m * p),
                        rel((p * m).transpose(), p * m)});
  }

  double grad = 0;
  for (int t = 0; t < 100; ++t) {
    const std::vector<std::size_t> sizes{2 + rng.uniform_index(5), 2 + rng.uniform_index(6), 2 + rng.uniform_index(4)};
    const nn::MlpParams p = nn::init_params(sizes, rng);
    const auto dim = static_cast<Eigen::Index>(sizes[0]);
    MatrixXd x(dim, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
    std::vector<std::size_t> y(3);
    for (std::size_t& v : y) v = rng.uniform_index(sizes.back());
    const nn::LossAndGrads g = nn::loss_and_param_grads(p, x, y);
    const double h = 1e-5;
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
      MatrixXd fd(p.weights[l].rows(), p.weights[l].cols());
      for (Eigen::Index i = 0; i < fd.size(); ++i) {
        nn::MlpParams q = p;
        q.weights[l](i) += h;
        const double up = nn::loss_and_param_grads(q, x, y).loss;
        q.weights[l](i) -= 2 * h;
        fd(i) = (up - nn::loss_and_param_grads(q, x, y).loss) / (2 * h);
      }
      grad = std::max(grad, rel(g.grads.weights[l], fd));
      VectorXd fdb(p.biases[l].size());
      for (Eigen::Index i = 0; i < fdb.size(); ++i) {
        nn::MlpParams q = p;
        q.biases[l](i) += h;
        const double up = nn::loss_and_param_grads(q, x, y).loss;
        q.biases[l](i) -= 2 * h;
        fdb(i) = (up - nn::loss_and_param_grads(q, x, y).loss) / (2 * h);
      }
      grad = std::max(grad, rel(g.grads.biases[l], fdb));
    }
    const VectorXd x0 = x.col(0);
    VectorXd fdx(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      VectorXd up = x0, down = x0;
      up(i) += h;
      down(i) -= h;
      fdx(i) = (nn::loss(p, up, y[0]) - nn::loss(p, down, y[0])) / (2 * h);
    }
    grad = std::max(grad, rel(nn::grad_input(p, x0, y[0]), fdx));
  }

  double hutch = 0;
  for (int t = 0; t < 10; ++t) {
    const Eigen::Index dim = 10;
    MatrixXd b(dim, dim);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = 0.3 * rng.normal();
    VectorXd d(dim);
    for (Eigen::Index i = 0; i < dim; ++i) d(i) = 1.0 + 4.0 * rng.uniform();
    const MatrixXd a = b.transpose() * b + MatrixXd(d.asDiagonal());
    const nn::InputGradient g = [&](const VectorXd& v) -> VectorXd { return a * v; };
    const double est = scores::hutchinson_trace(g, VectorXd::Zero(dim), 1000, 1e-3, rng);
    hutch = std::max(hutch, std::abs(est - a.trace()) / a.trace());
  }

  double affine = 0;
  for (int t = 0; t < 50; ++t) {
    MatrixXd w(2, 6);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.normal();
    VectorXd bias(2);
    bias << rng.normal(), rng.normal();
    nn::MlpParams p;
    p.layer_sizes = {6, 2};
    p.weights = {w};
    p.biases = {bias};
    VectorXd x(6);
    for (Eigen::Index i = 0; i < 6; ++i) x(i) = rng.normal();
    const auto k0 = static_cast<Eigen::Index>(nn::predict(p, x));
    const VectorXd wd = (w.row(1 - k0) - w.row(k0)).transpose();
    const double f = wd.dot(x) + bias(1 - k0) - bias(k0);
    const VectorXd want = -(f / wd.squaredNorm()) * wd;
    const attacks::DeepFoolResult r = attacks::deepfool(p, x);
    affine = std::max(affine, r.iterations == 1 ? (r.perturbation - want).norm() : INFINITY);
  }

  std::size_t flips = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RandomStream data_rng(seed, 31);
    const data::Dataset d = data::synth_blobs(3, 8, 40, 0.06, data_rng);
    nn::TrainConfig c;
    c.seed = seed;
    const std::size_t hidden[] = {32};
    const nn::MlpParams p = nn::train(d, nn::layer_sizes_for(d, hidden), c).params;
    for (std::size_t i = 0; i < d.size(); i += 2) {
      const VectorXd x = d[i].image.flatten();
      const attacks::DeepFoolResult r = attacks::deepfool(p, x);
      ++total;
      if (nn::predict(p, x + 1.02 * r.perturbation) != nn::predict(p, x)) ++flips;
    }
  }
  const double flip_rate = static_cast<double>(flips) / static_cast<double>(total);

  Verdict o;
  o.pass = penrose <= 1e-8 && grad <= 1e-4 && hutch <= 0.05 && affine <= 1e-6 && flip_rate >= 0.95;
  o.detail = "Penrose " + fmt(penrose, 2) + ", gradient " + fmt(grad, 2) + ", Hutchinson " + fmt(hutch, 2) +
             ", DeepFool affine " + fmt(affine, 2) + ", flip rate " + fmt(flip_rate, 3);
  return o;
}

Verdict emd_oracle() {
  const double grid[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t mismatches = 0;
  std::string first;
  for (int code = 0; code < 625; ++code) {
    MatrixXd m(2, 2);
    int c = code;
    for (int p = 0; p < 4; ++p, c /= 5) m(p / 2, p % 2) = grid[c % 5];
    std::string why;
    if (!testing::emd_matches_exhaustive(data::Image{{m}}, 8, &why)) {
      if (mismatches++ == 0) first = why;
    }
  }
  return {mismatches == 0, "625 images, " + std::to_string(mismatches) + " mismatches" +
                               (first.empty() ? "" : "; first: " + first)};
}

// ---- CLI determinism ----------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

Verdict cli_determinism(const std::string& cli) {
  if (cli.empty()) return {false, "no --cli path given"};
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "memlab_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "blobs.conf");
    cfg << "dataset = blobs\ntrain_size = 0\nblob_classes = 4\nblob_dim = 16\nhidden = 32\n"
           "epochs = 4\nattack = PINV\nattack_size = 8\nscore = label-mem\nn_models = 3\n"
           "trials = 3\nworkers = 3\nseed = 11\n";
    std::ofstream desk(dir / "desk.conf");
    desk << "dataset = digits\ndata_root = " << MEMLAB_DATA_DIR << "\nattack = EMD\nattack_size = 20\n"
         << "score = curvature\nprobes = 5\ntrials = 2\nseed = 5\n";
  }
  const std::vector<std::pair<std::string, std::string>> commands{
      {"blobs", "run --config " + (dir / "blobs.conf").string() + " --output "},
      {"desk", "run --config " + (dir / "desk.conf").string() + " --output "},
      {"score", "score --kind conf-event --dataset digits --attack OOD --size 10 --seed 3 --data-root " +
                    std::string(MEMLAB_DATA_DIR) + " --output "},
  };
  std::string detail;
  bool pass = true;
  for (const auto& [name, args] : commands) {
    std::string outs[2];
    for (int k = 0; k < 2; ++k) {
      const fs::path out = dir / (name + std::to_string(k) + ".csv");
      const std::string cmd = cli + " " + args + out.string();
      const int rc = std::system(cmd.c_str());
      outs[k] = slurp(out);
      pass = pass && rc == 0 && !outs[k].empty();
    }
    const bool same = outs[0] == outs[1];
    pass = pass && same;
    detail += name + (same ? " identical" : " DIFFERENT") + " (" + std::to_string(outs[0].size()) + " bytes); ";
  }
  fs::remove_all(dir);
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) {
      cli = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: acceptance [--cli PATH] [--only 1,2,...]\n";
      return 2;
    }
  }

  const std::vector<std::pair<int, std::pair<std::string, std::function<Verdict()>>>> criteria{
      {4, {"theorem Monte Carlo", theorem_monte_carlo}},
      {5, {"sensitivity suite", sensitivity_suite}},
      {6, {"stability suite", stability_suite}},
      {7, {"numerical kernels", numerical_kernels}},
      {8, {"EMD oracle equivalence", emd_oracle}},
      {10, {"CLI determinism", [&] { return cli_determinism(cli); }}},
      {1, {"attack ordering (label-mem, size 10)", attack_ordering}},
      {3, {"confidence-event ordering", confidence_ordering}},
      {9, {"test-accuracy neutrality (2% corruption)", accuracy_neutrality}},
      {2, {"attack-size decay (PINV label-mem)", size_decay}},
  };

  std::vector<std::pair<int, std::string>> lines;
  int failures = 0;
  for (const auto& [id, entry] : criteria) {
    if (!only.empty() && !only.contains(id)) continue;
    const auto& [name, check] = entry;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << ": " << name << " | " << o.detail << " ["
         << fmt(secs, 3) << "s]";
    std::cout << line.str() << std::endl;
    lines.emplace_back(id, line.str());
    failures += !o.pass;
  }
  std::sort(lines.begin(), lines.end());
  std::cout << "\nsummary\n";
  for (const auto& [id, text] : lines) std::cout << text.substr(0, text.find(" | ")) << '\n';
  return failures == 0 ? 0 : 1;
}
