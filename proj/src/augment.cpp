#include "ddprune/augment.hpp"

#include <random>

namespace ddprune {

void AugmentConfig::validate(const ImageShape& shape) const {
  const std::size_t side = std::min(shape.height, shape.width);
  if (shift && shift_max >= side) {
    throw ConfigError("augment: shift_max " + std::to_string(shift_max) + " must be below image side " + std::to_string(side));
  }
  if (cutout && (cutout_size == 0 || cutout_size > side)) {
    throw ConfigError("augment: cutout_size " + std::to_string(cutout_size) + " must be in [1, " + std::to_string(side) + "]");
  }
}

AugmentParams sample_params(const AugmentConfig& cfg, const ImageShape& shape, Rng& rng) {
  AugmentParams p;
  if (cfg.flip) p.flip = std::bernoulli_distribution(0.5)(rng);
  if (cfg.shift) {
    const int m = static_cast<int>(cfg.shift_max);
    std::uniform_int_distribution<int> dist(-m, m);
    p.dx = dist(rng);
    p.dy = dist(rng);
  }
  if (cfg.cutout) {
    p.cutout = true;
    p.cutout_size = cfg.cutout_size;
    std::uniform_int_distribution<std::size_t> ys(0, shape.height - 1), xs(0, shape.width - 1);
    const std::size_t cy = ys(rng), cx = xs(rng);
    const std::size_t half = cfg.cutout_size / 2;
    p.cutout_y = cy >= half ? cy - half : 0;
    p.cutout_x = cx >= half ? cx - half : 0;
  }
  return p;
}

template <class T>
ag::MapPtr<T> augment_map(const AugmentParams& params, const ImageShape& shape, std::size_t batch) {
  const std::size_t h = shape.height, w = shape.width, plane = h * w;
  std::vector<typename ag::SparseMap<T>::Entry> entries;
  entries.reserve(batch * shape.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (params.cutout && y >= params.cutout_y && y < params.cutout_y + params.cutout_size && x >= params.cutout_x &&
          x < params.cutout_x + params.cutout_size) {
        continue;
      }
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) - params.dy;
      std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) - params.dx;
      if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(h) || sx >= static_cast<std::ptrdiff_t>(w)) continue;
      if (params.flip) sx = static_cast<std::ptrdiff_t>(w) - 1 - sx;
      const std::size_t src = static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < shape.channels; ++c) {
          const std::size_t base = (b * shape.channels + c) * plane;
          entries.push_back({static_cast<std::uint32_t>(base + y * w + x), static_cast<std::uint32_t>(base + src), T{1}});
        }
      }
    }
  }
  const std::size_t n = batch * shape.size();
  return std::make_shared<const ag::SparseMap<T>>(n, n, std::move(entries));
}

template <class T>
Tensor<T> apply(const AugmentParams& params, const Tensor<T>& images) {
  ag::NoGradGuard no_grad;
  return apply<T>(params, ag::Var<T>::constant(images)).value();
}

template <class T>
ag::Var<T> apply(const AugmentParams& params, const ag::Var<T>& images) {
  if (params.is_identity()) return images;
  if (images.value().rank() != 4) throw StructuralError("augment: images must be [B, C, H, W]");
  const ImageShape shape{images.shape()[1], images.shape()[2], images.shape()[3]};
  return ag::linear_map(augment_map<T>(params, shape, images.shape()[0]), images, images.shape());
}

template ag::MapPtr<float> augment_map<float>(const AugmentParams&, const ImageShape&, std::size_t);
template ag::MapPtr<double> augment_map<double>(const AugmentParams&, const ImageShape&, std::size_t);
template Tensor<float> apply(const AugmentParams&, const Tensor<float>&);
template Tensor<double> apply(const AugmentParams&, const Tensor<double>&);
template ag::Var<float> apply(const AugmentParams&, const ag::Var<float>&);
template ag::Var<double> apply(const AugmentParams&, const ag::Var<double>&);

}  // namespace ddprune
