#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "ddprune/autograd.hpp"
#include "ddprune/params.hpp"

namespace ddprune {

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const { return channels * height * width; }
  std::string str() const;
  bool operator==(const ImageShape&) const = default;
};

enum class ArchKind { kConvNet, kMlp };

// Desk-scale architecture family.
//   convnet: depth x [conv3x3(width) -> instance norm -> softplus -> avgpool2] -> linear
//   mlp:     depth linear layers, softplus between them (depth 2 = one hidden layer)
struct ArchSpec {
  ArchKind kind = ArchKind::kMlp;
  std::size_t depth = 2;
  std::size_t width = 16;
  ImageShape input;
  std::size_t classes = 2;

  // "convnet-d3-w32"
  std::string name() const;
  // name plus input shape and class count: "convnet-d3-w32-3x16x16-c10"
  std::string canonical() const;

  // Accepts a short name (input and classes supplied) or a canonical string.
  static ArchSpec parse(std::string_view name, ImageShape input, std::size_t classes);
  static ArchSpec parse_canonical(std::string_view canonical);

  // Throws StructuralError for zero depth/width or pooling that does not divide the input.
  void validate() const;

  bool operator==(const ArchSpec&) const = default;
};

inline constexpr double kInstanceNormEps = 1e-5;
inline constexpr std::string_view kActivationName = "softplus";

ParamLayout param_layout(const ArchSpec& spec);
std::size_t param_count(const ArchSpec& spec);

// Fan-in scaled uniform weights, zero biases; bit-identical per (spec, seed).
template <class T>
ParamVector<T> init_params(const ArchSpec& spec, std::uint64_t seed);

// images: [B, C, H, W]; returns logits [B, classes]. `params` holds one Var
// per layout segment.
template <class T>
ag::Var<T> forward(const ArchSpec& spec, std::span<const ag::Var<T>> params, const ag::Var<T>& images);

template <class T>
Tensor<T> forward(const ArchSpec& spec, const ParamVector<T>& params, const Tensor<T>& images);

}  // namespace ddprune
