#pragma once

// Differentiable augmentation for the student's inner updates. Every transform
// is linear in the pixels for a fixed draw, so it is represented as a sparse
// map and its gradient is the transpose map.

#include <string>

#include "ddprune/autograd.hpp"
#include "ddprune/models.hpp"
#include "ddprune/rng.hpp"

namespace ddprune {

struct AugmentConfig {
  bool flip = false;
  bool shift = false;
  bool cutout = false;
  std::size_t shift_max = 2;
  std::size_t cutout_size = 4;
  std::string stream = "augment";

  bool any() const { return flip || shift || cutout; }
  // shift_max < image side, cutout_size <= image side.
  void validate(const ImageShape& shape) const;
};

// One draw shared by every image of a minibatch.
struct AugmentParams {
  bool flip = false;
  int dx = 0;
  int dy = 0;
  bool cutout = false;
  std::size_t cutout_y = 0;  // top-left corner of the (clipped) square
  std::size_t cutout_x = 0;
  std::size_t cutout_size = 0;

  bool is_identity() const { return !flip && dx == 0 && dy == 0 && !cutout; }
  bool operator==(const AugmentParams&) const = default;
};

AugmentParams sample_params(const AugmentConfig& cfg, const ImageShape& shape, Rng& rng);

// The sparse map for a batch of [batch, C, H, W] images.
template <class T>
ag::MapPtr<T> augment_map(const AugmentParams& params, const ImageShape& shape, std::size_t batch);

template <class T>
Tensor<T> apply(const AugmentParams& params, const Tensor<T>& images);

template <class T>
ag::Var<T> apply(const AugmentParams& params, const ag::Var<T>& images);

}  // namespace ddprune
