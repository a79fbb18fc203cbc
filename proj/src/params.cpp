#include "ddprune/params.hpp"

#include <algorithm>
#include <cmath>

namespace ddprune {

void ParamLayout::append(std::string name, Shape shape) {
  const std::size_t length = shape_size(shape);
  segments_.push_back(Segment{std::move(name), total_, length, std::move(shape)});
  total_ += length;
}

template <class T>
ParamVector<T>::ParamVector(ParamLayout layout, std::vector<T> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_.total()) {
    throw StructuralError("parameter vector has " + std::to_string(values_.size()) +
                          " values, layout expects " + std::to_string(layout_.total()));
  }
}

template <class T>
ParamVector<T> ParamVector<T>::flatten(const ParamLayout& layout, std::span<const Tensor<T>> parts) {
  if (parts.size() != layout.segments().size()) throw StructuralError("flatten: segment count mismatch");
  ParamVector out(layout);
  for (std::size_t s = 0; s < parts.size(); ++s) {
    const Segment& seg = layout.segments()[s];
    if (parts[s].size() != seg.length) throw StructuralError("flatten: segment '" + seg.name + "' has wrong size");
    std::copy(parts[s].values().begin(), parts[s].values().end(), out.values_.begin() + seg.offset);
  }
  return out;
}

template <class T>
std::vector<Tensor<T>> ParamVector<T>::unflatten() const {
  std::vector<Tensor<T>> parts;
  parts.reserve(layout_.segments().size());
  for (const Segment& seg : layout_.segments()) {
    auto first = values_.begin() + static_cast<std::ptrdiff_t>(seg.offset);
    parts.emplace_back(seg.shape, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(seg.length)));
  }
  return parts;
}

template <class T>
std::vector<ag::Var<T>> ParamVector<T>::leaves() const {
  std::vector<ag::Var<T>> out;
  for (auto& part : unflatten()) out.push_back(ag::Var<T>::leaf(std::move(part)));
  return out;
}

template <class T>
std::vector<ag::Var<T>> ParamVector<T>::constants() const {
  std::vector<ag::Var<T>> out;
  for (auto& part : unflatten()) out.push_back(ag::Var<T>::constant(std::move(part)));
  return out;
}

template <class T>
bool ParamVector<T>::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
ParamVector<T> gather_segments(const ParamLayout& layout, std::span<const ag::Var<T>> parts) {
  std::vector<Tensor<T>> tensors;
  tensors.reserve(parts.size());
  for (const auto& p : parts) tensors.push_back(p.value());
  return ParamVector<T>::flatten(layout, tensors);
}

template class ParamVector<float>;
template class ParamVector<double>;
template ParamVector<float> gather_segments(const ParamLayout&, std::span<const ag::Var<float>>);
template ParamVector<double> gather_segments(const ParamLayout&, std::span<const ag::Var<double>>);

}  // namespace ddprune
