#include "memlab/attacks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace memlab::attacks {

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::None: return "None";
    case AttackKind::OOD: return "OOD";
    case AttackKind::PINV: return "PINV";
    case AttackKind::EMD: return "EMD";
    case AttackKind::DF: return "DF";
  }
  return "?";
}

AttackKind parse_attack_kind(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "NONE") return AttackKind::None;
  if (upper == "OOD") return AttackKind::OOD;
  if (upper == "PINV") return AttackKind::PINV;
  if (upper == "EMD") return AttackKind::EMD;
  if (upper == "DF" || upper == "DEEPFOOL") return AttackKind::DF;
  throw std::invalid_argument("unknown attack kind: " + std::string(name));
}

void AttackSpec::validate() const {
  if (!(overshoot >= 0)) throw std::invalid_argument("attack: overshoot must be non-negative");
  if (emd_iterations < 1) throw std::invalid_argument("attack: EMD iterations must be at least 1");
  if (deepfool_max_iterations < 1) {
    throw std::invalid_argument("attack: DeepFool iteration cap must be at least 1");
  }
}

Image ood_replace(const data::Sample& x, const data::Dataset& pool, RandomStream& rng) {
  if (pool.empty()) throw std::invalid_argument("ood_replace: empty pool");
  const data::Sample& pick = pool[static_cast<std::size_t>(rng.uniform_index(pool.size()))];
  if (!pick.image.same_shape(x.image)) {
    throw std::invalid_argument("ood_replace: pool image shape differs from the target");
  }
  return pick.image;
}

Image pinv_attack(const Image& x, double rel_tol) {
  Image out;
  out.channels.reserve(x.channels.size());
  for (const linalg::MatrixXd& channel : x.channels) {
    if (!channel.allFinite()) throw std::invalid_argument("pinv_attack: non-finite channel");
    linalg::MatrixXd inv = linalg::pinv(channel, rel_tol);
    const double mass = inv.cwiseAbs().sum();
    if (!(mass > 0.0)) {
      throw NumericalError("pinv_attack: pseudoinverse of channel is zero; cannot normalize");
    }
    inv /= mass;
    if (inv.rows() != channel.rows()) inv.transposeInPlace();
    out.channels.push_back(std::move(inv));
  }
  return out;
}

namespace {

std::vector<double> pixels(const Image& img, double scale) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(img.size()));
  for (const linalg::MatrixXd& c : img.channels) {
    for (Eigen::Index r = 0; r < c.rows(); ++r) {
      for (Eigen::Index q = 0; q < c.cols(); ++q) v.push_back(c(r, q) * scale);
    }
  }
  return v;
}

}  // namespace

double image_distance(const Image& a, const Image& b) {
  const std::vector<double> pa = pixels(a, 1.0), pb = pixels(b, 1.0);
  return linalg::wasserstein1d(pa, pb);
}

Image emd_attack(const Image& x, std::size_t iterations) {
  if (iterations < 1) throw std::invalid_argument("emd_attack: iterations must be positive");
  const std::vector<double> target = pixels(x, 255.0);
  std::vector<double> out(target.size(), 0.0);
  for (std::size_t p = 0; p < out.size(); ++p) {
    double l = 0.0, r = 255.0;
    for (std::size_t it = 0; it < iterations; ++it) {
      out[p] = l;
      const double at_l = linalg::wasserstein1d(out, target);
      out[p] = r;
      const double at_r = linalg::wasserstein1d(out, target);
      if (at_l < at_r) {
        l = (l + r) / 2.0;
      } else {
        r = (l + r) / 2.0;
      }
    }
    out[p] = l;
  }
  linalg::VectorXd flat(static_cast<Eigen::Index>(out.size()));
  for (std::size_t k = 0; k < out.size(); ++k) flat(static_cast<Eigen::Index>(k)) = out[k] / 255.0;
  return Image::unflatten(flat, x.channel_count(), x.rows(), x.cols());
}

DeepFoolResult deepfool(const nn::MlpParams& model, const VectorXd& x, double overshoot,
                        std::size_t max_iterations) {
  DeepFoolResult res;
  res.perturbation = VectorXd::Zero(x.size());
  const nn::Output start = nn::forward(model, x);
  res.original_class = start.predicted;
  res.final_class = start.predicted;
  const auto k0 = static_cast<Eigen::Index>(start.predicted);

  while (true) {
    res.final_class = nn::predict(model, x + (1.0 + overshoot) * res.perturbation);
    if (res.final_class != res.original_class) {
      res.converged = true;
      return res;
    }
    if (res.iterations >= max_iterations) return res;

    const VectorXd xi = x + res.perturbation;
    const VectorXd logits = nn::forward(model, xi).logits;
    const linalg::MatrixXd jac = nn::logit_jacobian(model, xi);
    double best_ratio = std::numeric_limits<double>::infinity();
    VectorXd best_w;
    double best_f = 0.0;
    for (Eigen::Index k = 0; k < logits.size(); ++k) {
      if (k == k0) continue;
      VectorXd w = (jac.row(k) - jac.row(k0)).transpose();
      const double f = logits(k) - logits(k0);
      const double wn = w.norm();
      if (!(wn > 0.0)) continue;
      const double ratio = std::abs(f) / wn;
      if (ratio < best_ratio) {
        best_ratio = ratio;
        best_w = std::move(w);
        best_f = f;
      }
    }
    // Every class boundary is flat here; no direction to move in.
    if (best_w.size() == 0) return res;
    res.perturbation += (std::abs(best_f) / best_w.squaredNorm()) * best_w;
    ++res.iterations;
  }
}

Image deepfool_attack(const nn::MlpParams& model, const Image& x, double overshoot,
                      std::size_t max_iterations) {
  const VectorXd flat = x.flatten();
  const DeepFoolResult res = deepfool(model, flat, overshoot, max_iterations);
  if (!res.converged) {
    throw DeepFoolConvergenceError("deepfool: predicted class unchanged after " +
                                       std::to_string(res.iterations) + " iterations",
                                   res.perturbation);
  }
  const VectorXd moved = (flat + (1.0 + overshoot) * res.perturbation).cwiseMax(0.0).cwiseMin(1.0);
  return Image::unflatten(moved, x.channel_count(), x.rows(), x.cols());
}

}  // namespace memlab::attacks

namespace memlab::data {

Dataset apply_attack(const Dataset& d, const AttackSet& s, const attacks::AttackSpec& attack,
                     const attacks::AttackContext& ctx) {
  using attacks::AttackKind;
  attack.validate();
  std::vector<bool> seen(d.size(), false);
  for (std::size_t i : s.indices) {
    if (i >= d.size()) throw std::invalid_argument("apply_attack: attack index out of range");
    if (seen[i]) throw std::invalid_argument("apply_attack: duplicate attack index");
    seen[i] = true;
  }
  if (attack.kind == AttackKind::None) return d;
  if (attack.kind == AttackKind::OOD && (ctx.ood_pool == nullptr || ctx.rng == nullptr)) {
    throw std::invalid_argument("apply_attack: OOD needs a pool and a random stream");
  }
  if (attack.kind == AttackKind::DF && ctx.model == nullptr) {
    throw std::invalid_argument("apply_attack: DF needs a trained model");
  }

  std::vector<Sample> samples = d.samples();
  for (std::size_t i : s.indices) {
    Image& img = samples[i].image;
    switch (attack.kind) {
      case AttackKind::OOD: img = attacks::ood_replace(samples[i], *ctx.ood_pool, *ctx.rng); break;
      case AttackKind::PINV: img = attacks::pinv_attack(img, attack.pinv_tolerance); break;
      case AttackKind::EMD: img = attacks::emd_attack(img, attack.emd_iterations); break;
      case AttackKind::DF:
        img = attacks::deepfool_attack(*ctx.model, img, attack.overshoot,
                                       attack.deepfool_max_iterations);
        break;
      case AttackKind::None: break;
    }
  }
  return Dataset(std::move(samples), d.num_classes(), d.split());
}

}  // namespace memlab::data
