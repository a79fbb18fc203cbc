#pragma once

#include <string>
#include <vector>

#include "ddprune/autograd.hpp"
#include "ddprune/tensor.hpp"

namespace ddprune {

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
  Shape shape;

  bool operator==(const Segment&) const = default;
};

// Ordered per-layer segment table of a flattened parameter vector.
class ParamLayout {
 public:
  ParamLayout() = default;
  void append(std::string name, Shape shape);

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t total() const { return total_; }

  bool operator==(const ParamLayout&) const = default;

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

// All network parameters as one flat vector plus the layout that slices it
// back into layers.
template <class T>
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(ParamLayout layout)
      : layout_(std::move(layout)), values_(layout_.total(), T{0}) {}
  ParamVector(ParamLayout layout, std::vector<T> values);

  static ParamVector flatten(const ParamLayout& layout, std::span<const Tensor<T>> parts);
  std::vector<Tensor<T>> unflatten() const;
  // One differentiable leaf per segment.
  std::vector<ag::Var<T>> leaves() const;
  std::vector<ag::Var<T>> constants() const;

  const ParamLayout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }
  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  bool all_finite() const;

  template <class U>
  ParamVector<U> cast() const {
    return ParamVector<U>(layout_, std::vector<U>(values_.begin(), values_.end()));
  }

  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.layout_ == b.layout_ && a.values_ == b.values_;
  }

 private:
  ParamLayout layout_;
  std::vector<T> values_;
};

// Gradients returned per segment, concatenated in layout order.
template <class T>
ParamVector<T> gather_segments(const ParamLayout& layout, std::span<const ag::Var<T>> parts);

}  // namespace ddprune
