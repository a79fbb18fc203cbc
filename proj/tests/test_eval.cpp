#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ddprune/errors.hpp"
#include "ddprune/eval.hpp"
#include "test_util.hpp"

using namespace ddprune;

namespace {

const ImageShape kShape{1, 4, 4};
const ArchSpec kMlp{ArchKind::kMlp, 2, 8, kShape, 3};
const ArchSpec kConv{ArchKind::kConvNet, 1, 4, kShape, 3};

const LabeledDataset& train() {
  static const auto ds = make_blobs(3, 40, kShape, 3.0, 6);
  return ds;
}
const LabeledDataset& test() {
  static const auto ds = make_blobs(3, 100, kShape, 3.0, 6, Split::kTest);
  return ds;
}

EvalConfig quick() {
  EvalConfig cfg;
  cfg.epochs = 30;
  cfg.lr = 0.02;
  return cfg;
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

}  // namespace

TEST_CASE("untrained networks sit near chance") {
  auto cfg = quick();
  cfg.epochs = 0;
  double mean = 0.0;
  for (std::uint64_t s = 1; s <= 20; ++s) mean += train_from_scratch(kMlp, train(), test(), 0.01, cfg, s).test_accuracy / 20;
  CHECK(mean == doctest::Approx(1.0 / 3.0).epsilon(0.25));
}

TEST_CASE("training is deterministic per seed") {
  const auto a = train_from_scratch(kConv, train(), test(), 0.02, quick(), 4);
  const auto b = train_from_scratch(kConv, train(), test(), 0.02, quick(), 4);
  CHECK(a.params == b.params);
  CHECK(a.test_accuracy == b.test_accuracy);
}

TEST_CASE("full training set beats a one-per-class set") {
  const auto full = train_from_scratch(kMlp, train(), test(), 0.02, quick(), 1).test_accuracy;
  const auto one = random_baseline(train(), 1, test(), kMlp, kSeeds, quick());
  CHECK(full >= one.mean);
  CHECK(full > 0.9);
}

TEST_CASE("seed validation") {
  const auto dd = init_distilled<float>(train(), 1, 0.02f, 1);
  CHECK_THROWS_AS(evaluate_distilled(dd, test(), kMlp, {1}, quick()), ConfigError);
  CHECK_THROWS_AS(evaluate_distilled(dd, test(), kMlp, {3, 3, 4}, quick()), ConfigError);
  CHECK_THROWS_AS(random_baseline(train(), 1, test(), kMlp, {}, quick()), ConfigError);
}

TEST_CASE("summary statistics use the unbiased estimator") {
  EvalRow row;
  row.accuracies = {0.5, 0.7, 0.9};
  summarize(row);
  CHECK(row.mean == doctest::Approx(0.7));
  CHECK(row.std == doctest::Approx(0.2));
  row.accuracies = {0.6, 0.6};
  summarize(row);
  CHECK(row.std == 0.0);
}

TEST_CASE("distilled evaluation uses alpha* on every architecture") {
  auto dd = init_distilled<float>(train(), 2, 0.037f, 1);
  dd.arch = kMlp.canonical();
  const auto before = dd.digest();
  const auto report = cross_architecture_eval(dd, test(), {kMlp, kConv}, kSeeds, quick());
  CHECK(dd.digest() == before);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].lr_source == "alpha*");
  CHECK(report.rows[0].lr == doctest::Approx(0.037));
  CHECK(report.rows[1].lr_source == "alpha*");
  CHECK(report.rows[1].lr == doctest::Approx(0.037));
  for (const auto& r : report.rows) {
    CHECK(r.accuracies.size() == 5);
    CHECK(r.mean >= *std::min_element(r.accuracies.begin(), r.accuracies.end()));
    CHECK(r.mean <= *std::max_element(r.accuracies.begin(), r.accuracies.end()));
    const bool all_equal = std::equal(r.accuracies.begin() + 1, r.accuracies.end(), r.accuracies.begin());
    CHECK((r.std == 0.0) == all_equal);
  }
  // a single-architecture evaluation reproduces its cross-architecture row
  const auto single = evaluate_distilled(dd, test(), kConv, kSeeds, quick());
  CHECK(single.rows[0].accuracies == report.rows[1].accuracies);

  auto changed = dd;
  changed.images[0] += 0.5f;
  CHECK(evaluate_distilled(changed, test(), kMlp, {1, 2}, quick()).provenance != report.provenance);
}

TEST_CASE("incompatible architecture is named") {
  const auto dd = init_distilled<float>(train(), 1, 0.02f, 1);
  const ArchSpec wrong{ArchKind::kConvNet, 2, 4, {1, 8, 8}, 3};
  CHECK_THROWS_WITH_AS(cross_architecture_eval(dd, test(), {kMlp, wrong}, kSeeds, quick()),
                       doctest::Contains("convnet-d2-w4-1x8x8-c3"), StructuralError);
}

TEST_CASE("random baseline") {
  const auto a = random_baseline(train(), 1, test(), kMlp, kSeeds, quick());
  const auto b = random_baseline(train(), 1, test(), kMlp, kSeeds, quick());
  CHECK(a.accuracies == b.accuracies);
  CHECK(a.method == "Random");
  CHECK(a.mean > 1.0 / 3.0);
  // selecting every example is training on the full set
  const auto all = random_baseline(train(), 40, test(), kMlp, {1, 2}, quick());
  CHECK(all.accuracies[0] >= 0.9);
  CHECK_THROWS_AS(random_baseline(train(), 41, test(), kMlp, kSeeds, quick()), DomainError);
}

TEST_CASE("report rendering") {
  EvalReport report;
  report.rows.push_back({"Distilled", "convnet-d2-w16", "alpha*", 0.01, {1, 2}, {0.9, 0.8}, 0.85, 0.0707});
  report.rows.push_back({"Distilled", "mlp-d2-w16", "alpha*", 0.01, {1, 2}, {0.7, 0.8}, 0.75, 0.0707});
  report.rows.push_back({"Random", "convnet-d2-w16", "fixed", 0.01, {1, 2}, {0.6, 0.6}, 0.6, 0.0});
  const auto table = report.table();
  CHECK(table.find("Method     convnet-d2-w16  mlp-d2-w16") != std::string::npos);
  CHECK(table.find("Distilled  85.0±7.1        75.0±7.1") != std::string::npos);
  CHECK(table.find("Random     60.0±0.0        -") != std::string::npos);
  const auto csv = report.csv();
  CHECK(csv.starts_with("method,arch,lr_source,lr,n,mean,std_unbiased,accuracies"));
  CHECK(csv.find("Random,convnet-d2-w16,fixed,0.01,2,0.600000,0.000000,0.600000;0.600000") != std::string::npos);
}
