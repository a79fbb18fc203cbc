#include "ddprune/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ddprune/io.hpp"
#include "ddprune/rng.hpp"

namespace ddprune {
namespace {

constexpr std::string_view kDatasetMagic = "DDS1";
constexpr std::string_view kDistilledMagic = "DDD1";
constexpr std::string_view kZcaMagic = "DDZ1";
constexpr std::uint16_t kFormatVersion = 1;

constexpr double kBlobBase = 0.5;
constexpr double kBlobScale = 0.15;

// Zero-mean, unit-RMS smooth pattern per channel.
std::vector<double> smooth_pattern(const ImageShape& shape, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(shape.size());
  if (shape.height == 1 && shape.width == 1) {
    for (auto& v : out) v = normal(rng);
  } else {
    const std::size_t gh = std::min<std::size_t>(4, shape.height), gw = std::min<std::size_t>(4, shape.width);
    for (std::size_t c = 0; c < shape.channels; ++c) {
      std::vector<double> grid(gh * gw);
      for (auto& v : grid) v = normal(rng);
      for (std::size_t y = 0; y < shape.height; ++y) {
        const double fy = shape.height > 1 ? static_cast<double>(y) * (gh - 1) / (shape.height - 1) : 0.0;
        const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(fy), gh - 1);
        const std::size_t y1 = std::min(y0 + 1, gh - 1);
        const double ty = fy - y0;
        for (std::size_t x = 0; x < shape.width; ++x) {
          const double fx = shape.width > 1 ? static_cast<double>(x) * (gw - 1) / (shape.width - 1) : 0.0;
          const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(fx), gw - 1);
          const std::size_t x1 = std::min(x0 + 1, gw - 1);
          const double tx = fx - x0;
          const double top = grid[y0 * gw + x0] * (1 - tx) + grid[y0 * gw + x1] * tx;
          const double bottom = grid[y1 * gw + x0] * (1 - tx) + grid[y1 * gw + x1] * tx;
          out[(c * shape.height + y) * shape.width + x] = top * (1 - ty) + bottom * ty;
        }
      }
    }
  }
  const std::size_t plane = shape.height * shape.width;
  for (std::size_t c = 0; c < shape.channels; ++c) {
    auto first = out.begin() + static_cast<std::ptrdiff_t>(c * plane);
    auto last = first + static_cast<std::ptrdiff_t>(plane);
    if (plane > 1) {
      const double mean = std::accumulate(first, last, 0.0) / static_cast<double>(plane);
      for (auto it = first; it != last; ++it) *it -= mean;
    }
  }
  const double rms = std::sqrt(std::inner_product(out.begin(), out.end(), out.begin(), 0.0) / out.size());
  if (rms > 0) {
    for (auto& v : out) v /= rms;
  }
  return out;
}

void write_images_header(io::ByteWriter& w, const Shape& shape) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
  for (const std::size_t d : shape) w.put<std::uint64_t>(d);
}

Shape read_images_header(io::ByteReader& r) {
  const auto ndim = r.get<std::uint32_t>();
  if (ndim != 4) throw FormatError(r.source() + ": expected a rank-4 image block, got rank " + std::to_string(ndim));
  Shape shape(ndim);
  for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
  return shape;
}

template <class T>
void read_payload(io::ByteReader& r, io::DType dtype, Tensor<T>& out) {
  if (dtype == io::dtype_of<T>()) {
    r.get_array(out.data(), out.size());
  } else if (dtype == io::DType::kF32) {
    std::vector<float> tmp(out.size());
    r.get_array(tmp.data(), tmp.size());
    std::copy(tmp.begin(), tmp.end(), out.data());
  } else if (dtype == io::DType::kF64) {
    std::vector<double> tmp(out.size());
    r.get_array(tmp.data(), tmp.size());
    std::transform(tmp.begin(), tmp.end(), out.data(), [](double v) { return static_cast<T>(v); });
  } else {
    throw FormatError(r.source() + ": unknown dtype tag " + std::to_string(static_cast<int>(dtype)));
  }
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    std::string_view cell = line.substr(start, pos - start);
    while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.front()))) cell.remove_prefix(1);
    while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.back()))) cell.remove_suffix(1);
    cells.push_back(cell);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

template <class U>
U parse_number(std::string_view cell, const std::string& where) {
  U value{};
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw FormatError(where + ": cannot parse '" + std::string(cell) + "'");
  }
  return value;
}

}  // namespace

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(classes, 0);
  for (const Label y : labels) ++counts.at(static_cast<std::size_t>(y));
  return counts;
}

void LabeledDataset::validate() const {
  if (images.rank() != 4) throw StructuralError("dataset images must be [N, C, H, W]");
  if (images.dim(0) != labels.size()) throw StructuralError("dataset has " + std::to_string(images.dim(0)) +
                                                            " images but " + std::to_string(labels.size()) + " labels");
  for (const Label y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

template <class T>
Tensor<T> LabeledDataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t stride = shape().size();
  Tensor<T> out({indices.size(), images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const float* src = images.data() + indices[k] * stride;
    std::copy(src, src + stride, out.data() + k * stride);
  }
  return out;
}

std::vector<Label> LabeledDataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<Label> out;
  out.reserve(indices.size());
  for (const std::size_t i : indices) out.push_back(labels[i]);
  return out;
}

template <class T>
void DistilledDataset<T>::validate() const {
  if (images.rank() != 4 || images.dim(0) != labels.size()) throw StructuralError("distilled images/labels mismatch");
  if (labels.size() != ipc * classes) throw StructuralError("distilled set must hold ipc * classes images");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != static_cast<Label>(i / ipc)) throw StructuralError("distilled labels must be class-major, ipc per class");
  }
  if (!(alpha > T{0})) throw DomainError("distilled learning rate must be positive");
}

template <class T>
std::string DistilledDataset<T>::digest() const {
  std::uint64_t h = fnv1a64(std::span(reinterpret_cast<const unsigned char*>(images.data()), images.size() * sizeof(T)));
  h = fnv1a64(std::span(reinterpret_cast<const unsigned char*>(labels.data()), labels.size() * sizeof(Label)), h);
  h = fnv1a64(std::span(reinterpret_cast<const unsigned char*>(&alpha), sizeof(T)), h);
  return hex64(h);
}

LabeledDataset make_blobs(std::size_t classes, std::size_t per_class, ImageShape shape, double separation,
                          std::uint64_t seed, Split split) {
  if (per_class < 1) throw DomainError("make_blobs: per_class must be >= 1");
  if (classes < 1) throw DomainError("make_blobs: need at least one class");
  if (!(separation > 0.0)) throw DomainError("make_blobs: separation must be positive");
  if (shape.size() == 0) throw DomainError("make_blobs: empty image shape");

  Rng mean_rng = make_rng(seed, "blobs.means");
  std::vector<std::vector<double>> patterns;
  for (std::size_t c = 0; c < classes; ++c) patterns.push_back(smooth_pattern(shape, mean_rng));

  Rng noise_rng = make_rng(seed, split == Split::kTrain ? "blobs.train" : "blobs.test");
  std::normal_distribution<double> normal(0.0, 1.0);
  LabeledDataset ds;
  ds.classes = classes;
  ds.split = split;
  ds.images = Tensor<float>({classes * per_class, shape.channels, shape.height, shape.width});
  const std::size_t d = shape.size();
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < per_class; ++k) {
      float* row = ds.images.data() + (c * per_class + k) * d;
      for (std::size_t i = 0; i < d; ++i) {
        row[i] = static_cast<float>(kBlobBase + kBlobScale * (separation * patterns[c][i] + normal(noise_rng)));
      }
      ds.labels.push_back(static_cast<Label>(c));
    }
  }
  return ds;
}

void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  io::ByteWriter w;
  w.put_magic(kDatasetMagic);
  w.put<std::uint16_t>(kFormatVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(io::DType::kF32));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(dataset.split));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dataset.classes));
  write_images_header(w, dataset.images.shape());
  w.put_array(dataset.images.data(), dataset.images.size());
  w.put_array(dataset.labels.data(), dataset.labels.size());
  io::write_file_atomic(path, w.bytes());
}

LabeledDataset load_dataset(const std::filesystem::path& path, DatasetFormat format, std::optional<ImageShape> shape,
                            Split split) {
  if (!std::filesystem::exists(path)) throw IoError("dataset file not found: '" + path.string() + "'");
  LabeledDataset ds;
  if (format == DatasetFormat::kRawBinary) {
    io::ByteReader r(io::read_file(path), path.string());
    r.expect_magic(kDatasetMagic);
    const auto version = r.get<std::uint16_t>();
    if (version != kFormatVersion) throw FormatError(path.string() + ": unsupported dataset version " + std::to_string(version));
    const auto dtype = static_cast<io::DType>(r.get<std::uint8_t>());
    ds.split = static_cast<Split>(r.get<std::uint8_t>());
    ds.classes = r.get<std::uint32_t>();
    ds.images = Tensor<float>(read_images_header(r));
    read_payload(r, dtype, ds.images);
    ds.labels.resize(ds.images.dim(0));
    r.get_array(ds.labels.data(), ds.labels.size());
    if (shape && !(*shape == ds.shape())) {
      throw StructuralError(path.string() + ": image shape " + ds.shape().str() + " does not match expected " + shape->str());
    }
  } else {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);  // header
    std::vector<float> pixels;
    std::size_t dim = 0, row = 1;
    Label max_label = -1;
    while (std::getline(in, line)) {
      ++row;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      const auto cells = split_csv(line);
      const std::string where = path.string() + ":" + std::to_string(row);
      if (cells.size() < 2) throw FormatError(where + ": expected label and at least one pixel");
      if (dim == 0) dim = cells.size() - 1;
      if (cells.size() - 1 != dim) throw FormatError(where + ": expected " + std::to_string(dim) + " pixels");
      const Label y = parse_number<Label>(cells[0], where);
      if (y < 0) throw FormatError(where + ": negative label");
      max_label = std::max(max_label, y);
      ds.labels.push_back(y);
      for (std::size_t i = 1; i < cells.size(); ++i) pixels.push_back(parse_number<float>(cells[i], where));
    }
    if (ds.labels.empty()) throw FormatError(path.string() + ": no data rows");
    const ImageShape s = shape.value_or(ImageShape{dim, 1, 1});
    if (s.size() != dim) throw StructuralError(path.string() + ": rows have " + std::to_string(dim) + " pixels, shape " + s.str());
    ds.images = Tensor<float>({ds.labels.size(), s.channels, s.height, s.width}, std::move(pixels));
    ds.classes = static_cast<std::size_t>(max_label) + 1;
    ds.split = split;
  }
  ds.validate();
  return ds;
}

ZcaStats zca_fit(const LabeledDataset& train, double lambda, bool standardize) {
  if (!(lambda > 0.0)) throw DomainError("zca_fit: lambda must be positive");
  const std::size_t n = train.size();
  if (n < 2) throw DomainError("zca_fit: need at least two examples");
  const std::size_t d = train.shape().size();
  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = train.images[i * d + j];
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  std::vector<double> scale(d, 1.0);
  if (standardize) {
    const std::size_t channels = train.shape().channels, hw = d / channels;
    for (std::size_t c = 0; c < channels; ++c) {
      const double var = x.middleCols(static_cast<Eigen::Index>(c * hw), static_cast<Eigen::Index>(hw)).squaredNorm() /
                         static_cast<double>(n * hw);
      // constant channels stay unscaled
      const double s = var > 0.0 ? std::sqrt(var) : 1.0;
      for (std::size_t j = c * hw; j < (c + 1) * hw; ++j) scale[j] = s;
    }
    for (std::size_t j = 0; j < d; ++j) x.col(static_cast<Eigen::Index>(j)) /= scale[j];
  }
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0).array() + lambda;
  const Eigen::MatrixXd& e = eig.eigenvectors();
  const Eigen::MatrixXd w = e * lam.cwiseSqrt().cwiseInverse().asDiagonal() * e.transpose();
  const Eigen::MatrixXd winv = e * lam.cwiseSqrt().asDiagonal() * e.transpose();

  ZcaStats stats;
  stats.dim = d;
  stats.lambda = lambda;
  stats.mean.assign(mean.data(), mean.data() + d);
  stats.scale = std::move(scale);
  stats.whiten.resize(d * d);
  stats.unwhiten.resize(d * d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      // exact symmetry
      const auto a = static_cast<Eigen::Index>(std::min(i, j)), b = static_cast<Eigen::Index>(std::max(i, j));
      stats.whiten[i * d + j] = w(a, b);
      stats.unwhiten[i * d + j] = winv(a, b);
    }
  }
  return stats;
}

template <class T>
Tensor<T> zca_apply(const ZcaStats& stats, const Tensor<T>& images) {
  const std::size_t d = stats.dim;
  if (images.rank() < 2 || images.size() / images.dim(0) != d) {
    throw StructuralError("zca_apply: images " + shape_string(images.shape()) + " do not have " + std::to_string(d) + " pixels");
  }
  Tensor<T> out(images.shape());
  std::vector<double> centered(d);
  for (std::size_t n = 0; n < images.dim(0); ++n) {
    for (std::size_t j = 0; j < d; ++j) centered[j] = (static_cast<double>(images[n * d + j]) - stats.mean[j]) / stats.scale[j];
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      const double* wrow = stats.whiten.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) acc += wrow[j] * centered[j];
      out[n * d + i] = static_cast<T>(acc);
    }
  }
  return out;
}

template <class T>
Tensor<T> zca_unapply(const ZcaStats& stats, const Tensor<T>& images) {
  const std::size_t d = stats.dim;
  if (images.rank() < 2 || images.size() / images.dim(0) != d) {
    throw StructuralError("zca_unapply: images " + shape_string(images.shape()) + " do not have " + std::to_string(d) + " pixels");
  }
  Tensor<T> out(images.shape());
  for (std::size_t n = 0; n < images.dim(0); ++n) {
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      const double* row = stats.unwhiten.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) acc += row[j] * static_cast<double>(images[n * d + j]);
      out[n * d + i] = static_cast<T>(acc * stats.scale[i] + stats.mean[i]);
    }
  }
  return out;
}

LabeledDataset zca_apply(const ZcaStats& stats, const LabeledDataset& dataset) {
  LabeledDataset out = dataset;
  out.images = zca_apply(stats, dataset.images);
  return out;
}

void save_zca(const ZcaStats& stats, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.put_magic(kZcaMagic);
  w.put<std::uint16_t>(kFormatVersion);
  w.put<std::uint64_t>(stats.dim);
  w.put<double>(stats.lambda);
  w.put_array(stats.mean.data(), stats.mean.size());
  w.put_array(stats.scale.data(), stats.scale.size());
  w.put_array(stats.whiten.data(), stats.whiten.size());
  w.put_array(stats.unwhiten.data(), stats.unwhiten.size());
  io::write_file_atomic(path, w.bytes());
}

ZcaStats load_zca(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("ZCA stats file not found: '" + path.string() + "'");
  io::ByteReader r(io::read_file(path), path.string());
  r.expect_magic(kZcaMagic);
  const auto version = r.get<std::uint16_t>();
  if (version != kFormatVersion) throw FormatError(path.string() + ": unsupported ZCA version " + std::to_string(version));
  ZcaStats stats;
  stats.dim = static_cast<std::size_t>(r.get<std::uint64_t>());
  stats.lambda = r.get<double>();
  stats.mean.resize(stats.dim);
  stats.scale.resize(stats.dim);
  stats.whiten.resize(stats.dim * stats.dim);
  stats.unwhiten.resize(stats.dim * stats.dim);
  r.get_array(stats.mean.data(), stats.mean.size());
  r.get_array(stats.scale.data(), stats.scale.size());
  r.get_array(stats.whiten.data(), stats.whiten.size());
  r.get_array(stats.unwhiten.data(), stats.unwhiten.size());
  return stats;
}

std::vector<std::size_t> sample_per_class(const LabeledDataset& source, std::size_t ipc, std::uint64_t seed) {
  if (ipc == 0) throw DomainError("ipc must be >= 1");
  std::vector<std::vector<std::size_t>> by_class(source.classes);
  for (std::size_t i = 0; i < source.size(); ++i) by_class[static_cast<std::size_t>(source.labels[i])].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < source.classes; ++c) {
    auto& pool = by_class[c];
    if (pool.size() < ipc) {
      throw DomainError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) + " examples, need " +
                        std::to_string(ipc));
    }
    // partial Fisher-Yates: first ipc slots are a uniform sample without replacement
    for (std::size_t k = 0; k < ipc; ++k) {
      std::uniform_int_distribution<std::size_t> dist(k, pool.size() - 1);
      std::swap(pool[k], pool[dist(rng)]);
      picked.push_back(pool[k]);
    }
  }
  return picked;
}

template <class T>
DistilledDataset<T> init_distilled(const LabeledDataset& source, std::size_t ipc, T alpha0, std::uint64_t seed) {
  if (!(alpha0 > T{0})) throw DomainError("alpha0 must be positive");
  const auto picked = sample_per_class(source, ipc, seed);
  DistilledDataset<T> out;
  out.images = source.gather<T>(picked);
  out.labels = source.gather_labels(picked);
  out.classes = source.classes;
  out.ipc = ipc;
  out.alpha = alpha0;
  return out;
}

template <class T>
void save_distilled(const DistilledDataset<T>& distilled, const std::filesystem::path& path) {
  distilled.validate();
  io::ByteWriter w;
  w.put_magic(kDistilledMagic);
  w.put<std::uint16_t>(kFormatVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(io::dtype_of<T>()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(distilled.classes));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(distilled.ipc));
  write_images_header(w, distilled.images.shape());
  w.put<T>(distilled.alpha);
  w.put<std::uint64_t>(distilled.steps);
  w.put_string(distilled.provenance);
  w.put_string(distilled.arch);
  w.put_array(distilled.images.data(), distilled.images.size());
  w.put_array(distilled.labels.data(), distilled.labels.size());
  io::write_file_atomic(path, w.bytes());
}

template <class T>
DistilledDataset<T> load_distilled(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("distilled file not found: '" + path.string() + "'");
  io::ByteReader r(io::read_file(path), path.string());
  r.expect_magic(kDistilledMagic);
  const auto version = r.get<std::uint16_t>();
  if (version != kFormatVersion) throw FormatError(path.string() + ": unsupported distilled-set version " + std::to_string(version));
  const auto dtype = static_cast<io::DType>(r.get<std::uint8_t>());
  DistilledDataset<T> out;
  out.classes = r.get<std::uint32_t>();
  out.ipc = r.get<std::uint32_t>();
  out.images = Tensor<T>(read_images_header(r));
  out.alpha = dtype == io::DType::kF32 ? static_cast<T>(r.get<float>()) : static_cast<T>(r.get<double>());
  out.steps = r.get<std::uint64_t>();
  out.provenance = r.get_string();
  out.arch = r.get_string();
  read_payload(r, dtype, out.images);
  out.labels.resize(out.images.dim(0));
  r.get_array(out.labels.data(), out.labels.size());
  out.validate();
  return out;
}

template <class T>
LabeledDataset as_dataset(const DistilledDataset<T>& distilled) {
  LabeledDataset ds;
  ds.images = distilled.images.template cast<float>();
  ds.labels = distilled.labels;
  ds.classes = distilled.classes;
  ds.split = Split::kTrain;
  return ds;
}

template Tensor<float> LabeledDataset::gather<float>(std::span<const std::size_t>) const;
template Tensor<double> LabeledDataset::gather<double>(std::span<const std::size_t>) const;
template struct DistilledDataset<float>;
template struct DistilledDataset<double>;
template Tensor<float> zca_apply(const ZcaStats&, const Tensor<float>&);
template Tensor<double> zca_apply(const ZcaStats&, const Tensor<double>&);
template Tensor<float> zca_unapply(const ZcaStats&, const Tensor<float>&);
template Tensor<double> zca_unapply(const ZcaStats&, const Tensor<double>&);
template DistilledDataset<float> init_distilled(const LabeledDataset&, std::size_t, float, std::uint64_t);
template DistilledDataset<double> init_distilled(const LabeledDataset&, std::size_t, double, std::uint64_t);
template void save_distilled(const DistilledDataset<float>&, const std::filesystem::path&);
template void save_distilled(const DistilledDataset<double>&, const std::filesystem::path&);
template DistilledDataset<float> load_distilled<float>(const std::filesystem::path&);
template DistilledDataset<double> load_distilled<double>(const std::filesystem::path&);
template LabeledDataset as_dataset(const DistilledDataset<float>&);
template LabeledDataset as_dataset(const DistilledDataset<double>&);

}  // namespace ddprune
