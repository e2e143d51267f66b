#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "memlab/linalg.hpp"
#include "memlab/random.hpp"

namespace memlab::data {

using linalg::MatrixXd;
using linalg::VectorXd;

// One image: a stack of equally shaped channels.
struct Image {
  std::vector<MatrixXd> channels;

  Eigen::Index rows() const { return channels.front().rows(); }
  Eigen::Index cols() const { return channels.front().cols(); }
  std::size_t channel_count() const { return channels.size(); }
  Eigen::Index size() const {
    return static_cast<Eigen::Index>(channels.size()) * rows() * cols();
  }
  bool same_shape(const Image& other) const;
  bool all_finite() const;

  // Channel-major, then row-major.
  VectorXd flatten() const;
  static Image unflatten(const VectorXd& flat, std::size_t channels, Eigen::Index rows,
                         Eigen::Index cols);

  friend bool operator==(const Image& a, const Image& b);
};

struct Sample {
  Image image;
  std::size_t label = 0;
};

enum class Split { Train, Test };

// Ordered, uniformly shaped collection of labelled samples. Images produced
// by loaders and generators lie in [0, 1]; attacked images only need to be
// finite (a pseudoinverse channel has negative entries).
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<Sample> samples, std::size_t num_classes, Split split);

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  std::size_t num_classes() const { return num_classes_; }
  Split split() const { return split_; }
  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_.at(i); }

  Eigen::Index input_dim() const { return samples_.front().image.size(); }
  std::size_t channel_count() const { return samples_.front().image.channel_count(); }
  Eigen::Index rows() const { return samples_.front().image.rows(); }
  Eigen::Index cols() const { return samples_.front().image.cols(); }

  // input_dim x size, one flattened image per column.
  MatrixXd inputs() const;
  std::vector<std::size_t> labels() const;
  std::vector<std::size_t> class_histogram() const;

  // Copy with sample i's image replaced.
  Dataset with_image(std::size_t i, Image image) const;
  Dataset without(std::size_t i) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  // Appends extra samples (shapes must agree).
  Dataset concat(std::span<const Sample> extra) const;

  friend bool operator==(const Dataset& a, const Dataset& b);

 private:
  void validate() const;

  std::vector<Sample> samples_;
  std::size_t num_classes_ = 0;
  Split split_ = Split::Train;
};

// Distinct positions into a dataset.
struct AttackSet {
  std::vector<std::size_t> indices;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Reads an IDX image/label pair. Pixels are divided by 255. Throws
// FormatError naming the byte offset on bad magic, truncation or count
// mismatch. `num_classes` of 0 infers max label + 1.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Split split = Split::Train, std::size_t num_classes = 0);

// Raw IDX image file (rows x cols uint8 images).
std::vector<Image> load_idx_images(const std::filesystem::path& images);

// Writes single-channel images as IDX; values are rounded from [0,1]*255
// and clamped to the byte range.
void store_idx(const Dataset& d, const std::filesystem::path& images,
               const std::filesystem::path& labels);
void store_idx_images(std::span<const Image> images, const std::filesystem::path& path);

// Loads data/<name>/{train,test}-{images,labels}.idx under `root`.
struct TrainTest {
  Dataset train;
  Dataset test;
};
TrainTest load_fixture(const std::filesystem::path& root, const std::string& name);

// Block-mean pooling by `factor` in both directions, per channel.
Dataset downsample(const Dataset& d, std::size_t factor);

// First `count` samples (or all if count >= size).
Dataset take(const Dataset& d, std::size_t count);

// Gaussian clusters, one per class, stored as 1 x dim images. Class means
// sit on scaled standard basis directions (a simplex-like layout) inside
// [0,1]^dim; samples are clamped to [0,1].
Dataset synth_blobs(std::size_t num_classes, std::size_t dim, std::size_t per_class,
                    double spread, RandomStream& rng, Split split = Split::Train);

// Uniform sample without replacement (partial Fisher-Yates).
AttackSet select_attack_set(const Dataset& d, std::size_t size, RandomStream& rng);

// Each image rotated by 90 degrees counter-clockwise; a distribution-shifted
// pool built from held-out data.
Dataset rotate90(const Dataset& d);

}  // namespace memlab::data
