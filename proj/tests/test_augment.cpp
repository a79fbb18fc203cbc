#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ddprune/augment.hpp"
#include "ddprune/errors.hpp"
#include "test_util.hpp"

using namespace ddprune;
using ddprune::testing::random_tensor;

namespace {

const ImageShape kShape{2, 6, 5};

AugmentConfig all_on() {
  AugmentConfig cfg;
  cfg.flip = cfg.shift = cfg.cutout = true;
  cfg.shift_max = 2;
  cfg.cutout_size = 3;
  return cfg;
}

}  // namespace

TEST_CASE("disabled config draws identity") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) CHECK(sample_params(AugmentConfig{}, kShape, rng).is_identity());
}

TEST_CASE("identity params leave images unchanged") {
  const auto x = random_tensor<double>({3, 2, 6, 5}, 1);
  CHECK(apply(AugmentParams{}, x) == x);
}

TEST_CASE("flip is an involution") {
  const auto x = random_tensor<float>({3, 2, 6, 5}, 2);
  AugmentParams p;
  p.flip = true;
  const auto once = apply(p, x);
  CHECK(!(once == x));
  CHECK(apply(p, once) == x);
  // rows are mirrored
  CHECK(once[0] == x[4]);
}

TEST_CASE("shift translates with zero fill and cutout zeroes a square") {
  Tensor<double> x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  AugmentParams p;
  p.dx = 1;
  p.dy = -1;
  CHECK(apply(p, x).values() == std::vector<double>{0, 4, 5, 0, 7, 8, 0, 0, 0});
  AugmentParams c;
  c.cutout = true;
  c.cutout_size = 2;
  c.cutout_y = 1;
  c.cutout_x = 0;
  CHECK(apply(c, x).values() == std::vector<double>{1, 2, 3, 0, 0, 6, 0, 0, 9});
}

TEST_CASE("gradient through augmentation matches finite differences") {
  const auto x0 = random_tensor<double>({2, 2, 6, 5}, 3);
  Rng rng(9);
  const auto cfg = all_on();
  for (int trial = 0; trial < 8; ++trial) {
    const auto p = sample_params(cfg, kShape, rng);
    const auto weights = random_tensor<double>(x0.shape(), 50 + trial);
    auto f = [&](const std::vector<double>& v) {
      const auto y = apply(p, Tensor<double>(x0.shape(), v));
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += weights[i] * y[i];
      return s / double(y.size());
    };
    const auto leaf = ag::Var<double>::leaf(x0);
    const auto y = apply(p, leaf);
    const auto out = ag::affine(ag::dot_constant(y, weights), 1.0 / double(x0.size()), 0.0);
    const ag::Var<double> inputs[] = {leaf};
    const auto g = ag::grad<double>(out, inputs, false)[0].value().values();
    CHECK(testing::max_rel_err(g, testing::fd_gradient(f, x0.values())) <= 1e-5);
  }
}

TEST_CASE("draws respect config bounds") {
  const auto cfg = all_on();
  Rng rng(5);
  bool saw_flip = false, saw_noflip = false;
  for (int i = 0; i < 10000; ++i) {
    const auto p = sample_params(cfg, kShape, rng);
    CHECK(std::abs(p.dx) <= 2);
    CHECK(std::abs(p.dy) <= 2);
    CHECK(p.cutout_y < kShape.height);
    CHECK(p.cutout_x < kShape.width);
    CHECK(p.cutout_size == 3);
    saw_flip |= p.flip;
    saw_noflip |= !p.flip;
  }
  CHECK(saw_flip);
  CHECK(saw_noflip);
}

TEST_CASE("draws are seeded") {
  Rng a(77), b(77);
  for (int i = 0; i < 50; ++i) CHECK(sample_params(all_on(), kShape, a) == sample_params(all_on(), kShape, b));
}

TEST_CASE("config validation") {
  AugmentConfig cfg;
  cfg.shift = true;
  cfg.shift_max = 5;
  CHECK_THROWS_AS(cfg.validate(kShape), ConfigError);
  cfg.shift_max = 4;
  CHECK_NOTHROW(cfg.validate(kShape));
  cfg.cutout = true;
  cfg.cutout_size = 6;
  CHECK_THROWS_AS(cfg.validate(kShape), ConfigError);
}
