#include "ddprune/models.hpp"

#include <charconv>
#include <map>
#include <mutex>
#include <random>
#include <tuple>

#include "ddprune/rng.hpp"

namespace ddprune {
namespace {

std::size_t parse_uint(std::string_view text, std::string_view what) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("cannot parse " + std::string(what) + " from '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    out.push_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Per-layer spatial geometry of a convnet block.
struct ConvGeom {
  std::size_t in_channels;
  std::size_t height;
  std::size_t width;
};

std::vector<ConvGeom> conv_geometry(const ArchSpec& spec) {
  std::vector<ConvGeom> geoms;
  std::size_t c = spec.input.channels, h = spec.input.height, w = spec.input.width;
  for (std::size_t l = 0; l < spec.depth; ++l) {
    geoms.push_back({c, h, w});
    c = spec.width;
    h /= 2;
    w /= 2;
  }
  return geoms;
}

// Structural maps for one (architecture, batch size) pair.
template <class T>
struct ConvPlan {
  struct Layer {
    ag::MapPtr<T> im2col;
    ag::MapPtr<T> group_sum;  // [B*HW*C] -> [B*C]
    ag::MapPtr<T> pool;
  };
  std::vector<Layer> layers;
};

template <class T>
ag::MapPtr<T> make_im2col(std::size_t batch, const ConvGeom& g, bool nchw_input) {
  const std::size_t hw = g.height * g.width;
  const std::size_t cols = g.in_channels * 9;
  std::vector<typename ag::SparseMap<T>::Entry> entries;
  entries.reserve(batch * hw * cols);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t y = 0; y < g.height; ++y) {
      for (std::size_t x = 0; x < g.width; ++x) {
        const std::size_t row = b * hw + y * g.width + x;
        for (std::size_t c = 0; c < g.in_channels; ++c) {
          for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
              if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(g.height) ||
                  sx >= static_cast<std::ptrdiff_t>(g.width)) {
                continue;
              }
              const std::size_t pos = static_cast<std::size_t>(sy) * g.width + static_cast<std::size_t>(sx);
              const std::size_t in = nchw_input ? (b * g.in_channels + c) * hw + pos
                                                : (b * hw + pos) * g.in_channels + c;
              entries.push_back({static_cast<std::uint32_t>(row * cols + c * 9 + ky * 3 + kx),
                                 static_cast<std::uint32_t>(in), T{1}});
            }
          }
        }
      }
    }
  }
  return std::make_shared<const ag::SparseMap<T>>(batch * hw * cols, batch * hw * g.in_channels,
                                                  std::move(entries));
}

template <class T>
ag::MapPtr<T> make_group_sum(std::size_t batch, std::size_t hw, std::size_t channels) {
  std::vector<typename ag::SparseMap<T>::Entry> entries;
  entries.reserve(batch * hw * channels);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t c = 0; c < channels; ++c) {
        entries.push_back({static_cast<std::uint32_t>(b * channels + c),
                           static_cast<std::uint32_t>((b * hw + p) * channels + c), T{1}});
      }
    }
  }
  return std::make_shared<const ag::SparseMap<T>>(batch * channels, batch * hw * channels, std::move(entries));
}

template <class T>
ag::MapPtr<T> make_pool(std::size_t batch, std::size_t h, std::size_t w, std::size_t channels) {
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<typename ag::SparseMap<T>::Entry> entries;
  entries.reserve(batch * h * w * channels);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t y = 0; y < oh * 2; ++y) {
      for (std::size_t x = 0; x < ow * 2; ++x) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t out = ((b * oh + y / 2) * ow + x / 2) * channels + c;
          const std::size_t in = ((b * h + y) * w + x) * channels + c;
          entries.push_back({static_cast<std::uint32_t>(out), static_cast<std::uint32_t>(in), T{0.25}});
        }
      }
    }
  }
  return std::make_shared<const ag::SparseMap<T>>(batch * oh * ow * channels, batch * h * w * channels,
                                                  std::move(entries));
}

template <class T>
std::shared_ptr<const ConvPlan<T>> conv_plan(const ArchSpec& spec, std::size_t batch) {
  static std::mutex mutex;
  static std::map<std::tuple<std::string, std::size_t>, std::shared_ptr<const ConvPlan<T>>> cache;
  const auto key = std::make_tuple(spec.canonical(), batch);
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  auto plan = std::make_shared<ConvPlan<T>>();
  const auto geoms = conv_geometry(spec);
  for (std::size_t l = 0; l < geoms.size(); ++l) {
    const ConvGeom& g = geoms[l];
    plan->layers.push_back({make_im2col<T>(batch, g, l == 0),
                            make_group_sum<T>(batch, g.height * g.width, spec.width),
                            make_pool<T>(batch, g.height, g.width, spec.width)});
  }
  std::lock_guard lock(mutex);
  return cache.emplace(key, std::move(plan)).first->second;
}

template <class T>
ag::Var<T> instance_norm(const ag::Var<T>& x, const ag::MapPtr<T>& group_sum, std::size_t hw) {
  const Shape groups{group_sum->out_size()};
  const T inv_n = T{1} / static_cast<T>(hw);
  const auto mean = ag::affine(ag::linear_map(group_sum, x, groups), inv_n, T{0});
  const auto centered = ag::sub(x, ag::linear_map(group_sum, mean, x.shape(), true));
  const auto var = ag::affine(ag::linear_map(group_sum, ag::mul(centered, centered), groups), inv_n, T{0});
  const auto inv_std = ag::rsqrt(var, static_cast<T>(kInstanceNormEps));
  return ag::mul(centered, ag::linear_map(group_sum, inv_std, x.shape(), true));
}

}  // namespace

std::string ImageShape::str() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

std::string ArchSpec::name() const {
  return std::string(kind == ArchKind::kConvNet ? "convnet" : "mlp") + "-d" + std::to_string(depth) +
         "-w" + std::to_string(width);
}

std::string ArchSpec::canonical() const { return name() + "-" + input.str() + "-c" + std::to_string(classes); }

ArchSpec ArchSpec::parse(std::string_view name, ImageShape input, std::size_t classes) {
  const auto parts = split(name, '-');
  if (parts.size() != 3 && parts.size() != 5) throw ConfigError("bad architecture name '" + std::string(name) + "'");
  ArchSpec spec;
  if (parts[0] == "convnet") {
    spec.kind = ArchKind::kConvNet;
  } else if (parts[0] == "mlp") {
    spec.kind = ArchKind::kMlp;
  } else {
    throw ConfigError("unknown architecture kind '" + std::string(parts[0]) + "'");
  }
  if (parts[1].size() < 2 || parts[1][0] != 'd' || parts[2].size() < 2 || parts[2][0] != 'w') {
    throw ConfigError("bad architecture name '" + std::string(name) + "'");
  }
  spec.depth = parse_uint(parts[1].substr(1), "depth");
  spec.width = parse_uint(parts[2].substr(1), "width");
  spec.input = input;
  spec.classes = classes;
  if (parts.size() == 5) {
    const auto dims = split(parts[3], 'x');
    if (dims.size() != 3 || parts[4].size() < 2 || parts[4][0] != 'c') {
      throw ConfigError("bad canonical architecture '" + std::string(name) + "'");
    }
    spec.input = {parse_uint(dims[0], "channels"), parse_uint(dims[1], "height"), parse_uint(dims[2], "width")};
    spec.classes = parse_uint(parts[4].substr(1), "classes");
  }
  return spec;
}

ArchSpec ArchSpec::parse_canonical(std::string_view canonical) {
  if (split(canonical, '-').size() != 5) throw FormatError("not a canonical architecture string: '" + std::string(canonical) + "'");
  return parse(canonical, {}, 0);
}

void ArchSpec::validate() const {
  if (depth == 0 || width == 0) throw StructuralError(name() + ": depth and width must be positive");
  if (classes < 2) throw StructuralError(name() + ": need at least two classes");
  if (input.size() == 0) throw StructuralError(name() + ": empty input shape");
  if (kind == ArchKind::kConvNet) {
    const std::size_t div = std::size_t{1} << depth;
    if (input.height % div != 0 || input.width % div != 0) {
      throw StructuralError(name() + ": input " + input.str() + " not divisible by 2^depth");
    }
  }
}

ParamLayout param_layout(const ArchSpec& spec) {
  spec.validate();
  ParamLayout layout;
  if (spec.kind == ArchKind::kConvNet) {
    const auto geoms = conv_geometry(spec);
    for (std::size_t l = 0; l < geoms.size(); ++l) {
      layout.append("conv" + std::to_string(l) + ".weight", {spec.width, geoms[l].in_channels * 9});
      layout.append("conv" + std::to_string(l) + ".bias", {spec.width});
    }
    const std::size_t feat = spec.width * (spec.input.height >> spec.depth) * (spec.input.width >> spec.depth);
    layout.append("head.weight", {spec.classes, feat});
    layout.append("head.bias", {spec.classes});
  } else {
    std::size_t in = spec.input.size();
    for (std::size_t l = 0; l < spec.depth; ++l) {
      const std::size_t out = l + 1 == spec.depth ? spec.classes : spec.width;
      layout.append("fc" + std::to_string(l) + ".weight", {out, in});
      layout.append("fc" + std::to_string(l) + ".bias", {out});
      in = out;
    }
  }
  return layout;
}

std::size_t param_count(const ArchSpec& spec) { return param_layout(spec).total(); }

template <class T>
ParamVector<T> init_params(const ArchSpec& spec, std::uint64_t seed) {
  ParamVector<T> params(param_layout(spec));
  Rng rng(seed);
  for (const Segment& seg : params.layout().segments()) {
    if (seg.shape.size() != 2) continue;  // biases stay zero
    const double bound = 1.0 / std::sqrt(static_cast<double>(seg.shape[1]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < seg.length; ++i) params[seg.offset + i] = static_cast<T>(dist(rng));
  }
  return params;
}

template <class T>
ag::Var<T> forward(const ArchSpec& spec, std::span<const ag::Var<T>> params, const ag::Var<T>& images) {
  const std::size_t expected_segments = 2 * spec.depth + (spec.kind == ArchKind::kConvNet ? 2 : 0);
  if (params.size() != expected_segments) throw StructuralError(spec.name() + ": wrong number of parameter segments");
  if (images.value().rank() != 4 || images.shape()[1] != spec.input.channels ||
      images.shape()[2] != spec.input.height || images.shape()[3] != spec.input.width) {
    throw StructuralError(spec.name() + ": image batch " + shape_string(images.shape()) +
                          " does not match input " + spec.input.str());
  }
  const std::size_t batch = images.shape()[0];
  if (spec.kind == ArchKind::kMlp) {
    ag::Var<T> h = ag::reshape(images, {batch, spec.input.size()});
    for (std::size_t l = 0; l < spec.depth; ++l) {
      h = ag::add_row_bias(ag::matmul(h, params[2 * l], false, true), params[2 * l + 1]);
      if (l + 1 < spec.depth) h = ag::softplus(h);
    }
    return h;
  }

  const auto plan = conv_plan<T>(spec, batch);
  const auto geoms = conv_geometry(spec);
  ag::Var<T> h = images;
  for (std::size_t l = 0; l < spec.depth; ++l) {
    const ConvGeom& g = geoms[l];
    const auto& layer = plan->layers[l];
    const std::size_t rows = batch * g.height * g.width;
    const auto cols = ag::linear_map(layer.im2col, h, {rows, g.in_channels * 9});
    auto z = ag::add_row_bias(ag::matmul(cols, params[2 * l], false, true), params[2 * l + 1]);
    z = ag::softplus(instance_norm(z, layer.group_sum, g.height * g.width));
    h = ag::linear_map(layer.pool, z, {batch * (g.height / 2) * (g.width / 2), spec.width});
  }
  const std::size_t feat = h.size() / batch;
  h = ag::reshape(h, {batch, feat});
  return ag::add_row_bias(ag::matmul(h, params[2 * spec.depth], false, true), params[2 * spec.depth + 1]);
}

template <class T>
Tensor<T> forward(const ArchSpec& spec, const ParamVector<T>& params, const Tensor<T>& images) {
  if (params.size() != param_count(spec)) throw StructuralError(spec.name() + ": parameter count mismatch");
  ag::NoGradGuard no_grad;
  const auto vars = params.constants();
  return forward<T>(spec, vars, ag::Var<T>::constant(images)).value();
}

template ParamVector<float> init_params<float>(const ArchSpec&, std::uint64_t);
template ParamVector<double> init_params<double>(const ArchSpec&, std::uint64_t);
template ag::Var<float> forward(const ArchSpec&, std::span<const ag::Var<float>>, const ag::Var<float>&);
template ag::Var<double> forward(const ArchSpec&, std::span<const ag::Var<double>>, const ag::Var<double>&);
template Tensor<float> forward(const ArchSpec&, const ParamVector<float>&, const Tensor<float>&);
template Tensor<double> forward(const ArchSpec&, const ParamVector<double>&, const Tensor<double>&);

}  // namespace ddprune
