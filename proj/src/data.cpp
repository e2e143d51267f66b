#include "memlab/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "memlab/error.hpp"

namespace memlab::data {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(path.string() + ": truncated header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                 static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

unsigned char to_byte(double v) {
  const double scaled = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<unsigned char>(scaled);
}

struct IdxImages {
  std::uint32_t count, rows, cols;
  std::vector<unsigned char> bytes;
};

IdxImages parse_images(const std::filesystem::path& path) {
  IdxImages out;
  out.bytes = read_file(path);
  const std::uint32_t magic = read_be32(out.bytes, 0, path);
  if (magic != kIdxImageMagic) {
    std::ostringstream msg;
    msg << path.string() << ": bad magic 0x" << std::hex << magic << " at offset 0";
    throw FormatError(msg.str());
  }
  out.count = read_be32(out.bytes, 4, path);
  out.rows = read_be32(out.bytes, 8, path);
  out.cols = read_be32(out.bytes, 12, path);
  const std::size_t need = 16 + std::size_t{out.count} * out.rows * out.cols;
  if (out.bytes.size() < need) {
    throw FormatError(path.string() + ": truncated pixel data at offset " +
                      std::to_string(out.bytes.size()) + " (expected " + std::to_string(need) +
                      " bytes)");
  }
  return out;
}

}  // namespace

bool Image::same_shape(const Image& other) const {
  return channels.size() == other.channels.size() && rows() == other.rows() &&
         cols() == other.cols();
}

bool Image::all_finite() const {
  return std::all_of(channels.begin(), channels.end(),
                     [](const MatrixXd& c) { return c.allFinite(); });
}

VectorXd Image::flatten() const {
  VectorXd out(size());
  Eigen::Index k = 0;
  for (const MatrixXd& c : channels) {
    for (Eigen::Index r = 0; r < c.rows(); ++r) {
      for (Eigen::Index q = 0; q < c.cols(); ++q) out(k++) = c(r, q);
    }
  }
  return out;
}

Image Image::unflatten(const VectorXd& flat, std::size_t channels, Eigen::Index rows,
                       Eigen::Index cols) {
  if (flat.size() != static_cast<Eigen::Index>(channels) * rows * cols) {
    throw std::invalid_argument("unflatten: size mismatch");
  }
  Image out;
  Eigen::Index k = 0;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index q = 0; q < cols; ++q) m(r, q) = flat(k++);
    }
    out.channels.push_back(std::move(m));
  }
  return out;
}

bool operator==(const Image& a, const Image& b) {
  if (a.channels.size() != b.channels.size()) return false;
  for (std::size_t i = 0; i < a.channels.size(); ++i) {
    if (a.channels[i].rows() != b.channels[i].rows() ||
        a.channels[i].cols() != b.channels[i].cols() || a.channels[i] != b.channels[i]) {
      return false;
    }
  }
  return true;
}

Dataset::Dataset(std::vector<Sample> samples, std::size_t num_classes, Split split)
    : samples_(std::move(samples)), num_classes_(num_classes), split_(split) {
  validate();
}

void Dataset::validate() const {
  if (samples_.empty()) throw std::invalid_argument("dataset: no samples");
  if (num_classes_ < 2) throw std::invalid_argument("dataset: need at least two classes");
  const Image& first = samples_.front().image;
  if (first.channels.empty() || first.rows() == 0 || first.cols() == 0) {
    throw std::invalid_argument("dataset: empty image");
  }
  for (const Sample& s : samples_) {
    if (!s.image.same_shape(first)) throw std::invalid_argument("dataset: non-uniform shapes");
    for (const MatrixXd& c : s.image.channels) {
      if (c.rows() != first.rows() || c.cols() != first.cols()) {
        throw std::invalid_argument("dataset: channels differ in shape");
      }
    }
    if (s.label >= num_classes_) throw std::invalid_argument("dataset: label out of range");
    if (!s.image.all_finite()) throw std::invalid_argument("dataset: non-finite pixel");
  }
}

MatrixXd Dataset::inputs() const {
  MatrixXd out(input_dim(), static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = samples_[i].image.flatten();
  }
  return out;
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = samples_[i].label;
  return out;
}

std::vector<std::size_t> Dataset::class_histogram() const {
  std::vector<std::size_t> h(num_classes_, 0);
  for (const Sample& s : samples_) ++h[s.label];
  return h;
}

Dataset Dataset::with_image(std::size_t i, Image image) const {
  Dataset out = *this;
  if (!image.same_shape(samples_.at(i).image)) {
    throw std::invalid_argument("with_image: shape mismatch");
  }
  out.samples_[i].image = std::move(image);
  return out;
}

Dataset Dataset::without(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("without: index out of range");
  std::vector<Sample> rest;
  rest.reserve(size() - 1);
  for (std::size_t k = 0; k < size(); ++k) {
    if (k != i) rest.push_back(samples_[k]);
  }
  return Dataset(std::move(rest), num_classes_, split_);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  std::vector<Sample> picked;
  picked.reserve(indices.size());
  for (std::size_t i : indices) picked.push_back(samples_.at(i));
  return Dataset(std::move(picked), num_classes_, split_);
}

Dataset Dataset::concat(std::span<const Sample> extra) const {
  std::vector<Sample> all = samples_;
  all.insert(all.end(), extra.begin(), extra.end());
  return Dataset(std::move(all), num_classes_, split_);
}

bool operator==(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size() || a.num_classes_ != b.num_classes_ || a.split_ != b.split_) {
    return false;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.samples_[i].label != b.samples_[i].label || !(a.samples_[i].image == b.samples_[i].image)) {
      return false;
    }
  }
  return true;
}

std::vector<Image> load_idx_images(const std::filesystem::path& images) {
  const IdxImages raw = parse_images(images);
  std::vector<Image> out;
  out.reserve(raw.count);
  std::size_t offset = 16;
  for (std::uint32_t n = 0; n < raw.count; ++n) {
    MatrixXd m(raw.rows, raw.cols);
    for (std::uint32_t r = 0; r < raw.rows; ++r) {
      for (std::uint32_t c = 0; c < raw.cols; ++c) m(r, c) = raw.bytes[offset++] / 255.0;
    }
    out.push_back(Image{{std::move(m)}});
  }
  return out;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Split split, std::size_t num_classes) {
  std::vector<Image> imgs = load_idx_images(images);
  const std::vector<unsigned char> lbytes = read_file(labels);
  const std::uint32_t magic = read_be32(lbytes, 0, labels);
  if (magic != kIdxLabelMagic) {
    std::ostringstream msg;
    msg << labels.string() << ": bad magic 0x" << std::hex << magic << " at offset 0";
    throw FormatError(msg.str());
  }
  const std::uint32_t count = read_be32(lbytes, 4, labels);
  if (lbytes.size() < 8 + std::size_t{count}) {
    throw FormatError(labels.string() + ": truncated label data at offset " +
                      std::to_string(lbytes.size()));
  }
  if (count != imgs.size()) {
    throw FormatError(labels.string() + ": label count " + std::to_string(count) +
                      " at offset 4 does not match image count " + std::to_string(imgs.size()));
  }
  std::size_t max_label = 0;
  std::vector<Sample> samples(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    samples[i].image = std::move(imgs[i]);
    samples[i].label = lbytes[8 + i];
    max_label = std::max(max_label, samples[i].label);
  }
  if (num_classes == 0) num_classes = max_label + 1;
  return Dataset(std::move(samples), num_classes, split);
}

void store_idx_images(std::span<const Image> images, const std::filesystem::path& path) {
  if (images.empty()) throw std::invalid_argument("store_idx_images: nothing to write");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path.string());
  const Image& first = images.front();
  write_be32(out, kIdxImageMagic);
  write_be32(out, static_cast<std::uint32_t>(images.size()));
  write_be32(out, static_cast<std::uint32_t>(first.rows()));
  write_be32(out, static_cast<std::uint32_t>(first.cols()));
  for (const Image& img : images) {
    if (img.channel_count() != 1 || !img.same_shape(first)) {
      throw std::invalid_argument("store_idx_images: IDX holds uniform single-channel images");
    }
    const MatrixXd& m = img.channels.front();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) out.put(static_cast<char>(to_byte(m(r, c))));
    }
  }
  if (!out) throw FileError("write failed: " + path.string());
}

void store_idx(const Dataset& d, const std::filesystem::path& images,
               const std::filesystem::path& labels) {
  std::vector<Image> imgs;
  imgs.reserve(d.size());
  for (const Sample& s : d.samples()) imgs.push_back(s.image);
  store_idx_images(imgs, images);
  std::ofstream out(labels, std::ios::binary);
  if (!out) throw FileError("cannot write " + labels.string());
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(d.size()));
  for (const Sample& s : d.samples()) out.put(static_cast<char>(s.label));
  if (!out) throw FileError("write failed: " + labels.string());
}

TrainTest load_fixture(const std::filesystem::path& root, const std::string& name) {
  const std::filesystem::path dir = root / name;
  Dataset train = load_idx(dir / "train-images.idx", dir / "train-labels.idx", Split::Train);
  Dataset test = load_idx(dir / "test-images.idx", dir / "test-labels.idx", Split::Test);
  const std::size_t classes = std::max(train.num_classes(), test.num_classes());
  // Re-wrap so both splits agree on the class count.
  return {Dataset(train.samples(), classes, Split::Train),
          Dataset(test.samples(), classes, Split::Test)};
}

Dataset downsample(const Dataset& d, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("downsample: factor must be positive");
  const auto f = static_cast<Eigen::Index>(factor);
  if (d.rows() % f != 0 || d.cols() % f != 0) {
    throw std::invalid_argument("downsample: image shape not divisible by factor");
  }
  if (factor == 1) return d;
  std::vector<Sample> out;
  out.reserve(d.size());
  for (const Sample& s : d.samples()) {
    Sample pooled{Image{}, s.label};
    for (const MatrixXd& c : s.image.channels) {
      MatrixXd m(c.rows() / f, c.cols() / f);
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index q = 0; q < m.cols(); ++q) m(r, q) = c.block(r * f, q * f, f, f).mean();
      }
      pooled.image.channels.push_back(std::move(m));
    }
    out.push_back(std::move(pooled));
  }
  return Dataset(std::move(out), d.num_classes(), d.split());
}

Dataset take(const Dataset& d, std::size_t count) {
  if (count >= d.size()) return d;
  std::vector<Sample> head(d.samples().begin(), d.samples().begin() + static_cast<long>(count));
  return Dataset(std::move(head), d.num_classes(), d.split());
}

Dataset synth_blobs(std::size_t num_classes, std::size_t dim, std::size_t per_class, double spread,
                    RandomStream& rng, Split split) {
  if (num_classes < 2) throw std::invalid_argument("synth_blobs: need at least two classes");
  if (dim < 2) throw std::invalid_argument("synth_blobs: dim must be at least 2");
  if (per_class == 0) throw std::invalid_argument("synth_blobs: per_class must be positive");
  if (spread < 0) throw std::invalid_argument("synth_blobs: negative spread");
  // Class c is centred at 0.2 + 0.6 e_{c mod dim}, shifted along the next
  // axis when classes outnumber dimensions, so all means are distinct.
  std::vector<VectorXd> means(num_classes, VectorXd::Constant(static_cast<Eigen::Index>(dim), 0.2));
  for (std::size_t c = 0; c < num_classes; ++c) {
    means[c](static_cast<Eigen::Index>(c % dim)) += 0.6;
    const std::size_t wrap = c / dim;
    if (wrap > 0) means[c](static_cast<Eigen::Index>((c + 1) % dim)) += 0.3 * static_cast<double>(wrap);
  }
  std::vector<Sample> samples;
  samples.reserve(num_classes * per_class);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t k = 0; k < per_class; ++k) {
      MatrixXd m(1, static_cast<Eigen::Index>(dim));
      for (std::size_t j = 0; j < dim; ++j) {
        const double v = means[c](static_cast<Eigen::Index>(j)) + spread * rng.normal();
        m(0, static_cast<Eigen::Index>(j)) = std::clamp(v, 0.0, 1.0);
      }
      samples.push_back(Sample{Image{{std::move(m)}}, c});
    }
  }
  return Dataset(std::move(samples), num_classes, split);
}

AttackSet select_attack_set(const Dataset& d, std::size_t size, RandomStream& rng) {
  if (size > d.size()) {
    throw std::invalid_argument("select_attack_set: size " + std::to_string(size) +
                                " exceeds dataset size " + std::to_string(d.size()));
  }
  std::vector<std::size_t> pool(d.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t k = 0; k < size; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng.uniform_index(pool.size() - k));
    std::swap(pool[k], pool[j]);
  }
  pool.resize(size);
  return AttackSet{std::move(pool)};
}

Dataset rotate90(const Dataset& d) {
  std::vector<Sample> out;
  out.reserve(d.size());
  for (const Sample& s : d.samples()) {
    Sample r{Image{}, s.label};
    for (const MatrixXd& c : s.image.channels) {
      r.image.channels.push_back(c.transpose().colwise().reverse());
    }
    out.push_back(std::move(r));
  }
  return Dataset(std::move(out), d.num_classes(), d.split());
}

}  // namespace memlab::data
