#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "memlab/data.hpp"
#include "memlab/error.hpp"
#include "memlab/nn.hpp"
#include "memlab/random.hpp"

namespace memlab::attacks {

using data::Image;
using linalg::VectorXd;

enum class AttackKind { None, OOD, PINV, EMD, DF };

std::string_view to_string(AttackKind kind);
// Accepts the upper- or lower-case names ("pinv", "PINV", ...).
AttackKind parse_attack_kind(std::string_view name);

struct AttackSpec {
  AttackKind kind = AttackKind::None;
  double overshoot = 0.02;          // DF
  std::size_t emd_iterations = 8;   // EMD binary-search halvings
  double pinv_tolerance = -1;       // PINV; negative selects the default cutoff
  std::size_t deepfool_max_iterations = 50;

  void validate() const;
};

// Image of a uniformly drawn pool element.
Image ood_replace(const data::Sample& x, const data::Dataset& pool, RandomStream& rng);

// Per channel: Moore-Penrose pseudoinverse divided by its entrywise L1 norm.
// Non-square channels keep their shape by returning the transposed
// pseudoinverse. All-zero channels throw NumericalError.
Image pinv_attack(const Image& x, double rel_tol = -1);

// Earth mover's distance between two images, each read as the empirical
// distribution of its pixel intensities.
double image_distance(const Image& a, const Image& b);

// Greedy per-pixel binary search that pushes the output away from x in W1.
// The output starts at zero; pixels are visited channel-major then
// row-major; the search runs on the 0..255 scale and the result is divided
// by 255.
Image emd_attack(const Image& x, std::size_t iterations = 8);

struct DeepFoolResult {
  VectorXd perturbation;  // accumulated sum of steps
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t original_class = 0;
  std::size_t final_class = 0;
};

// DeepFool on the logits of an MLP. Each step moves to the linearized
// closest class boundary; the loop stops once x + (1 + overshoot) * r
// changes the predicted class or max_iterations is reached.
DeepFoolResult deepfool(const nn::MlpParams& model, const VectorXd& x, double overshoot = 0.02,
                        std::size_t max_iterations = 50);

class DeepFoolConvergenceError : public NumericalError {
 public:
  DeepFoolConvergenceError(const std::string& what, VectorXd partial)
      : NumericalError(what), partial_(std::move(partial)) {}
  const VectorXd& partial_perturbation() const { return partial_; }

 private:
  VectorXd partial_;
};

// x + (1 + overshoot) * r, clamped to [0, 1]. Throws
// DeepFoolConvergenceError carrying the partial perturbation when the
// label never flips.
Image deepfool_attack(const nn::MlpParams& model, const Image& x, double overshoot = 0.02,
                      std::size_t max_iterations = 50);

// Inputs an attack may need beyond the image itself.
struct AttackContext {
  const data::Dataset* ood_pool = nullptr;  // OOD
  const nn::MlpParams* model = nullptr;     // DF: classifier trained on the clean dataset
  RandomStream* rng = nullptr;              // OOD
};

}  // namespace memlab::attacks

namespace memlab::data {

// Replaces exactly the attack-set images with their attacked versions.
// Labels and every other sample are left untouched; the input is not
// modified.
Dataset apply_attack(const Dataset& d, const AttackSet& s, const attacks::AttackSpec& attack,
                     const attacks::AttackContext& ctx = {});

}  // namespace memlab::data
