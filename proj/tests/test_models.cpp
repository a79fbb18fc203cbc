#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "ddprune/errors.hpp"
#include "ddprune/models.hpp"
#include "test_util.hpp"

using namespace ddprune;
using ddprune::testing::random_tensor;

namespace {

ArchSpec mlp(std::size_t d, std::size_t width, std::size_t classes, std::size_t depth) {
  return {ArchKind::kMlp, depth, width, {d, 1, 1}, classes};
}

ArchSpec convnet(std::size_t depth, std::size_t width, ImageShape in, std::size_t classes) {
  return {ArchKind::kConvNet, depth, width, in, classes};
}

// Independent closed-form count: conv blocks then the head on the pooled map.
std::size_t convnet_count(std::size_t depth, std::size_t w, std::size_t c, std::size_t h, std::size_t wd,
                          std::size_t classes) {
  std::size_t total = w * c * 9 + w;
  for (std::size_t l = 1; l < depth; ++l) total += w * w * 9 + w;
  const std::size_t feat = w * (h >> depth) * (wd >> depth);
  return total + classes * feat + classes;
}

}  // namespace

TEST_CASE("mlp parameter count") {
  CHECK(param_count(mlp(4, 8, 3, 2)) == 67);
  CHECK(init_params<float>(mlp(4, 8, 3, 2), 1).size() == 67);
  CHECK(param_count(mlp(4, 8, 3, 3)) == 4 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3);
}

TEST_CASE("convnet parameter count matches closed form") {
  for (std::size_t depth : {1, 2, 3}) {
    for (std::size_t w : {4, 16}) {
      const auto spec = convnet(depth, w, {3, 16, 16}, 10);
      CHECK(param_count(spec) == convnet_count(depth, w, 3, 16, 16, 10));
      CHECK(init_params<float>(spec, 9).size() == param_count(spec));
      CHECK(init_params<float>(spec, 10).size() == param_count(spec));
    }
  }
}

TEST_CASE("init is deterministic per seed") {
  const auto spec = convnet(2, 8, {1, 8, 8}, 3);
  CHECK(init_params<float>(spec, 42) == init_params<float>(spec, 42));
  CHECK(init_params<double>(spec, 42) == init_params<double>(spec, 42));
}

TEST_CASE("different seeds differ in almost every slot") {
  const auto spec = convnet(2, 32, {3, 16, 16}, 10);
  const auto a = init_params<float>(spec, 1), b = init_params<float>(spec, 2);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.size(); ++i) differ += a[i] != b[i];
  CHECK(static_cast<double>(differ) >= 0.99 * static_cast<double>(a.size()));

  // Biases are zero under every seed, so count weights only on a small net.
  const auto small = mlp(4, 8, 3, 2);
  const auto c = init_params<float>(small, 1), d = init_params<float>(small, 2);
  std::size_t weights = 0, wdiff = 0;
  for (const auto& seg : c.layout().segments()) {
    if (seg.name.ends_with(".bias")) continue;
    for (std::size_t i = seg.offset; i < seg.offset + seg.length; ++i) {
      ++weights;
      wdiff += c[i] != d[i];
    }
  }
  CHECK(static_cast<double>(wdiff) >= 0.99 * static_cast<double>(weights));
}

TEST_CASE("init is fan-in scaled uniform with zero biases") {
  const auto spec = mlp(16, 8, 3, 2);
  const auto p = init_params<double>(spec, 5);
  for (const auto& seg : p.layout().segments()) {
    const double bound = seg.name.ends_with(".bias") ? 0.0 : 1.0 / std::sqrt(double(seg.shape[1]));
    for (std::size_t i = seg.offset; i < seg.offset + seg.length; ++i) CHECK(std::abs(p[i]) <= bound);
  }
}

TEST_CASE("zero params give zero logits") {
  for (const auto& spec : {mlp(6, 5, 4, 3), convnet(2, 4, {2, 8, 8}, 4)}) {
    const ParamVector<double> zero(param_layout(spec));
    const auto x = random_tensor<double>({3, spec.input.channels, spec.input.height, spec.input.width}, 3);
    const auto logits = forward<double>(spec, zero, x);
    CHECK(logits.shape() == Shape{3, spec.classes});
    for (double v : logits.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("batch permutation permutes logits") {
  const auto spec = convnet(2, 4, {2, 8, 8}, 3);
  const auto params = init_params<double>(spec, 11);
  const std::size_t b = 5, d = spec.input.size();
  const auto x = random_tensor<double>({b, 2, 8, 8}, 12);
  const std::size_t perm[] = {3, 0, 4, 1, 2};
  Tensor<double> xp(x.shape());
  for (std::size_t i = 0; i < b; ++i)
    std::copy_n(x.data() + perm[i] * d, d, xp.data() + i * d);
  const auto y = forward<double>(spec, params, x), yp = forward<double>(spec, params, xp);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK(yp[i * 3 + c] == doctest::Approx(y[perm[i] * 3 + c]).epsilon(1e-12));
}

TEST_CASE("two-layer mlp against hand arithmetic") {
  // D=2, hidden=2, classes=2; layout fc0.weight[2x2], fc0.bias, fc1.weight[2x2], fc1.bias
  const auto spec = mlp(2, 2, 2, 2);
  ParamVector<double> p(param_layout(spec), {0.5, -1.0, 2.0, 0.25, 0.1, -0.2, 1.0, -1.0, 0.5, 3.0, 0.05, -0.05});
  const Tensor<double> x({1, 2, 1, 1}, std::vector<double>{1.0, 2.0});
  // h = softplus(W0 x + b0) = softplus([-1.4, 2.3])
  const double h0 = std::log1p(std::exp(-1.4)), h1 = std::log1p(std::exp(2.3));
  const auto y = forward<double>(spec, p, x);
  CHECK(y[0] == doctest::Approx(h0 - h1 + 0.05).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(0.5 * h0 + 3.0 * h1 - 0.05).epsilon(1e-14));
}

TEST_CASE("forward rejects a wrong input shape") {
  const auto spec = convnet(2, 4, {1, 8, 8}, 3);
  const auto params = init_params<float>(spec, 1);
  CHECK_THROWS_AS(forward<float>(spec, params, Tensor<float>({2, 1, 8, 4})), StructuralError);
}

TEST_CASE("invalid specs are structural errors") {
  CHECK_THROWS_AS(param_count(mlp(4, 0, 3, 2)), StructuralError);
  CHECK_THROWS_AS(init_params<float>(mlp(4, 8, 3, 0), 1), StructuralError);
  CHECK_THROWS_AS(param_count(convnet(3, 4, {1, 4, 4}, 3)), StructuralError);
}

TEST_CASE("canonical names round trip") {
  const auto spec = convnet(3, 32, {3, 16, 16}, 10);
  CHECK(spec.name() == "convnet-d3-w32");
  CHECK(spec.canonical() == "convnet-d3-w32-3x16x16-c10");
  CHECK(ArchSpec::parse_canonical(spec.canonical()) == spec);
  CHECK(ArchSpec::parse("convnet-d3-w32", {3, 16, 16}, 10) == spec);
  CHECK(ArchSpec::parse("mlp-d2-w8", {4, 1, 1}, 3) == mlp(4, 8, 3, 2));
  CHECK_THROWS(ArchSpec::parse("resnet-d2-w8", {4, 1, 1}, 3));
}

TEST_CASE("flatten and unflatten round trip") {
  const auto spec = convnet(2, 4, {1, 8, 8}, 3);
  const auto p = init_params<float>(spec, 3);
  const auto parts = p.unflatten();
  CHECK(parts.size() == p.layout().segments().size());
  CHECK(ParamVector<float>::flatten(p.layout(), parts) == p);
}
