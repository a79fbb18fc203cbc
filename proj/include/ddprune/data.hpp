#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ddprune/engine.hpp"
#include "ddprune/models.hpp"
#include "ddprune/tensor.hpp"

namespace ddprune {

enum class Split : std::uint8_t { kTrain = 0, kTest = 1 };

struct LabeledDataset {
  Tensor<float> images;  // [N, C, H, W]
  std::vector<Label> labels;
  std::size_t classes = 0;
  Split split = Split::kTrain;

  std::size_t size() const { return labels.size(); }
  ImageShape shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  std::vector<std::size_t> class_counts() const;
  // Throws StructuralError/DomainError when shapes or labels are inconsistent.
  void validate() const;
  // Rows `indices` as a new [k, C, H, W] tensor.
  template <class T>
  Tensor<T> gather(std::span<const std::size_t> indices) const;
  std::vector<Label> gather_labels(std::span<const std::size_t> indices) const;
};

// Learnable distilled images, fixed labels (ipc per class, class-major) and the
// learnable inner learning rate.
template <class T>
struct DistilledDataset {
  Tensor<T> images;
  std::vector<Label> labels;
  std::size_t classes = 0;
  std::size_t ipc = 0;
  T alpha = T{0};
  std::string provenance;  // config digest
  std::uint64_t steps = 0;
  std::string arch;  // canonical spec of the generating architecture

  std::size_t size() const { return labels.size(); }
  ImageShape shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  void validate() const;
  std::string digest() const;

  template <class U>
  DistilledDataset<U> cast() const {
    return {images.template cast<U>(), labels, classes, ipc, static_cast<U>(alpha), provenance, steps, arch};
  }

  bool operator==(const DistilledDataset&) const = default;
};

struct ZcaStats {
  std::size_t dim = 0;
  std::vector<double> mean;
  std::vector<double> scale;     // per-pixel divisor applied after centering
  std::vector<double> whiten;    // dim x dim, symmetric
  std::vector<double> unwhiten;  // inverse of `whiten`
  double lambda = 0.1;
};

inline constexpr double kDefaultZcaLambda = 0.1;

// Gaussian class clusters. Class means depend only on (classes, shape, seed),
// so train and test splits drawn with the same seed share them; noise is an
// independent stream per split. Image shapes get spatially smooth class
// patterns (4x4 noise upsampled bilinearly); vector shapes get iid means.
LabeledDataset make_blobs(std::size_t classes, std::size_t per_class, ImageShape shape, double separation,
                          std::uint64_t seed, Split split = Split::kTrain);

enum class DatasetFormat { kRawBinary, kCsv };

// CSV rows "label,pix0,pix1,..." after one header row. Without `shape` the
// images come back as [N, D, 1, 1].
LabeledDataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                            std::optional<ImageShape> shape = std::nullopt, Split split = Split::kTrain);
void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path);

// W is fitted on centered pixels divided by their channel's standard
// deviation when `standardize` is set, on centered raw pixels otherwise.
ZcaStats zca_fit(const LabeledDataset& train, double lambda = kDefaultZcaLambda, bool standardize = true);
template <class T>
Tensor<T> zca_apply(const ZcaStats& stats, const Tensor<T>& images);
template <class T>
Tensor<T> zca_unapply(const ZcaStats& stats, const Tensor<T>& images);
LabeledDataset zca_apply(const ZcaStats& stats, const LabeledDataset& dataset);
void save_zca(const ZcaStats& stats, const std::filesystem::path& path);
ZcaStats load_zca(const std::filesystem::path& path);

// ipc real examples per class sampled without replacement, alpha = alpha0.
template <class T>
DistilledDataset<T> init_distilled(const LabeledDataset& source, std::size_t ipc, T alpha0, std::uint64_t seed);

// Class-major index selection of ipc examples per class.
std::vector<std::size_t> sample_per_class(const LabeledDataset& source, std::size_t ipc, std::uint64_t seed);

template <class T>
void save_distilled(const DistilledDataset<T>& distilled, const std::filesystem::path& path);
template <class T>
DistilledDataset<T> load_distilled(const std::filesystem::path& path);

// Distilled images and labels as an ordinary training set.
template <class T>
LabeledDataset as_dataset(const DistilledDataset<T>& distilled);

}  // namespace ddprune
