#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <set>

#include "ddprune/data.hpp"
#include "ddprune/errors.hpp"
#include "ddprune/teacher.hpp"
#include "test_util.hpp"

using namespace ddprune;
using ddprune::testing::TempDir;

namespace {

double one_nn_accuracy(const LabeledDataset& train, const LabeledDataset& test) {
  const std::size_t d = train.shape().size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Label pred = -1;
    for (std::size_t j = 0; j < train.size(); ++j) {
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = double(test.images[i * d + k]) - double(train.images[j * d + k]);
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        pred = train.labels[j];
      }
    }
    correct += pred == test.labels[i];
  }
  return double(correct) / double(test.size());
}

LabeledDataset from_rows(const std::vector<std::vector<double>>& rows, std::vector<Label> labels, std::size_t classes) {
  LabeledDataset ds;
  ds.classes = classes;
  const std::size_t d = rows[0].size();
  ds.images = Tensor<float>({rows.size(), d, 1, 1});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) ds.images[i * d + j] = static_cast<float>(rows[i][j]);
  ds.labels = std::move(labels);
  return ds;
}

// Covariance of the rows of a whitened dataset.
std::vector<double> covariance(const LabeledDataset& ds) {
  const std::size_t n = ds.size(), d = ds.shape().size();
  std::vector<double> mean(d, 0.0), cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += ds.images[i * d + j] / double(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        cov[a * d + b] += (ds.images[i * d + a] - mean[a]) * (ds.images[i * d + b] - mean[b]) / double(n);
  return cov;
}

}  // namespace

TEST_CASE("blobs are deterministic with exact class histogram") {
  const auto a = make_blobs(4, 25, {2, 8, 8}, 1.5, 3);
  const auto b = make_blobs(4, 25, {2, 8, 8}, 1.5, 3);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(a.class_counts() == std::vector<std::size_t>(4, 25));
  CHECK(!(make_blobs(4, 25, {2, 8, 8}, 1.5, 4).images == a.images));
  // test split shares class means but not noise
  const auto t = make_blobs(4, 25, {2, 8, 8}, 1.5, 3, Split::kTest);
  CHECK(t.split == Split::kTest);
  CHECK(!(t.images == a.images));
  CHECK_THROWS_AS(make_blobs(3, 10, {1, 4, 4}, 0.0, 1), DomainError);
  CHECK_THROWS_AS(make_blobs(3, 0, {1, 4, 4}, 1.0, 1), DomainError);
}

TEST_CASE("large separation makes 1-NN exact") {
  const auto train = make_blobs(3, 20, {1, 4, 4}, 50.0, 9);
  const auto test = make_blobs(3, 20, {1, 4, 4}, 50.0, 9, Split::kTest);
  CHECK(one_nn_accuracy(train, test) == 1.0);
  const auto train_v = make_blobs(3, 20, {6, 1, 1}, 50.0, 9);
  const auto test_v = make_blobs(3, 20, {6, 1, 1}, 50.0, 9, Split::kTest);
  CHECK(one_nn_accuracy(train_v, test_v) == 1.0);
}

TEST_CASE("raw dataset round trip and corruption") {
  TempDir dir("data");
  const auto ds = make_blobs(3, 5, {2, 4, 4}, 1.0, 1, Split::kTest);
  save_dataset(ds, dir / "d.bin");
  const auto back = load_dataset(dir / "d.bin", DatasetFormat::kRawBinary);
  CHECK(back.images == ds.images);
  CHECK(back.labels == ds.labels);
  CHECK(back.classes == 3);
  CHECK(back.split == Split::kTest);

  auto bytes = testing::read_bytes(dir / "d.bin");
  auto bad = bytes;
  bad[0] = 'X';
  testing::write_bytes(dir / "bad.bin", bad);
  CHECK_THROWS_AS(load_dataset(dir / "bad.bin", DatasetFormat::kRawBinary), FormatError);
  bad = bytes;
  bad[4] = 9;
  testing::write_bytes(dir / "ver.bin", bad);
  CHECK_THROWS_AS(load_dataset(dir / "ver.bin", DatasetFormat::kRawBinary), FormatError);
  bytes.resize(bytes.size() - 7);
  testing::write_bytes(dir / "short.bin", bytes);
  CHECK_THROWS_WITH_AS(load_dataset(dir / "short.bin", DatasetFormat::kRawBinary), doctest::Contains("truncated"),
                       FormatError);
  CHECK_THROWS_AS(load_dataset(dir / "missing.bin", DatasetFormat::kRawBinary), IoError);
}

TEST_CASE("csv fixture parses") {
  TempDir dir("csv");
  testing::write_text(dir / "toy.csv",
                      "label,p0,p1,p2\n"
                      "0,0.1,0.2,0.3\n"
                      "1,1.0,1.5,2.0\n"
                      "2,-1,0,1\n"
                      "1,0.5,0.5,0.5\n");
  const auto ds = load_dataset(dir / "toy.csv", DatasetFormat::kCsv);
  CHECK(ds.size() == 4);
  CHECK(ds.shape().size() == 3);
  CHECK(ds.images.shape() == Shape{4, 3, 1, 1});
  CHECK(ds.labels == std::vector<Label>{0, 1, 2, 1});
  CHECK(ds.classes == 3);
  CHECK(ds.images[4] == 1.5f);

  testing::write_text(dir / "ragged.csv", "label,p0,p1\n0,1,2\n1,3\n");
  CHECK_THROWS_AS(load_dataset(dir / "ragged.csv", DatasetFormat::kCsv), FormatError);
  testing::write_text(dir / "junk.csv", "label,p0\n0,abc\n");
  CHECK_THROWS_AS(load_dataset(dir / "junk.csv", DatasetFormat::kCsv), FormatError);
}

TEST_CASE("zca of white noise shrinks the identity") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal;
  const std::size_t n = 10000, d = 4;
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (auto& r : rows)
    for (auto& v : r) v = normal(rng);
  const auto ds = from_rows(rows, std::vector<Label>(n, 0), 1);
  const auto stats = zca_fit(ds, 0.1, false);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double expected = i == j ? 1.0 / std::sqrt(1.1) : 0.0;
      CHECK(std::abs(stats.whiten[i * d + j] - expected) <= 0.05);
      CHECK(stats.whiten[i * d + j] == stats.whiten[j * d + i]);
    }
  }
  CHECK_THROWS_AS(zca_fit(ds, 0.0), DomainError);
}

TEST_CASE("zca survives a constant pixel") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> rows(50, std::vector<double>(3));
  for (auto& r : rows) r = {normal(rng), 0.25, normal(rng)};
  const auto ds = from_rows(rows, std::vector<Label>(50, 0), 1);
  for (bool standardize : {false, true}) {
    const auto stats = zca_fit(ds, 0.1, standardize);
    const auto w = zca_apply(stats, ds);
    CHECK(w.images.all_finite());
    for (std::size_t i = 0; i < 50; ++i) CHECK(std::abs(w.images[i * 3 + 1]) < 1e-6);
  }
}

TEST_CASE("whitened blobs are decorrelated") {
  const auto ds = make_blobs(3, 500, {1, 8, 8}, 1.0, 7);
  const auto w = zca_apply(zca_fit(ds), ds);
  const auto cov = covariance(w);
  const std::size_t d = 64;
  double worst = 0.0;
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b)
      if (a != b) worst = std::max(worst, std::abs(cov[a * d + b]) / std::sqrt(cov[a * d + a] * cov[b * d + b]));
  CHECK(worst < 0.05);
  // centered
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) m += w.images[i * d + j];
    CHECK(std::abs(m / double(w.size())) < 1e-4);
  }
}

TEST_CASE("zca apply and unapply are inverse") {
  const auto ds = make_blobs(3, 40, {3, 4, 4}, 1.0, 5);
  const auto stats = zca_fit(ds);
  const auto x = ds.images.cast<double>();
  const auto back = zca_unapply(stats, zca_apply(stats, x));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - x[i]) <= 1e-4);
  CHECK_THROWS_AS(zca_apply(stats, Tensor<double>({2, 3, 4, 3})), StructuralError);
}

TEST_CASE("zca hand-computed two-pixel case") {
  // Covariance eigenpairs: 1 along (1,1)/sqrt2, 0.25 along (1,-1)/sqrt2.
  const auto ds = from_rows({{1, 1}, {-1, -1}, {0.5, -0.5}, {-0.5, 0.5}}, {0, 0, 0, 0}, 1);
  const auto stats = zca_fit(ds, 0.1, false);
  const double a = 1 / std::sqrt(1.1), b = 1 / std::sqrt(0.35);
  CHECK(stats.whiten[0] == doctest::Approx(0.5 * (a + b)).epsilon(1e-12));
  CHECK(stats.whiten[1] == doctest::Approx(0.5 * (a - b)).epsilon(1e-12));
  CHECK(stats.whiten[2] == doctest::Approx(0.5 * (a - b)).epsilon(1e-12));
  CHECK(stats.whiten[3] == doctest::Approx(0.5 * (a + b)).epsilon(1e-12));
  CHECK(stats.mean == std::vector<double>{0.0, 0.0});
}

TEST_CASE("zca is affine-linear on random pairs") {
  const auto ds = make_blobs(2, 30, {1, 4, 4}, 1.0, 8);
  const auto stats = zca_fit(ds);
  const Tensor<double> zero({1, 1, 4, 4});
  const auto f0 = zca_apply(stats, zero);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = testing::random_tensor<double>({1, 1, 4, 4}, 100 + trial);
    const auto y = testing::random_tensor<double>({1, 1, 4, 4}, 200 + trial);
    const double a = normal(rng), b = normal(rng);
    Tensor<double> mix(x.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
    const auto fm = zca_apply(stats, mix), fx = zca_apply(stats, x), fy = zca_apply(stats, y);
    for (std::size_t i = 0; i < mix.size(); ++i)
      CHECK(fm[i] - f0[i] == doctest::Approx(a * (fx[i] - f0[i]) + b * (fy[i] - f0[i])).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("zca stats round trip") {
  TempDir dir("zca");
  const auto stats = zca_fit(make_blobs(2, 10, {1, 4, 4}, 1.0, 8));
  save_zca(stats, dir / "z.bin");
  const auto back = load_zca(dir / "z.bin");
  CHECK(back.mean == stats.mean);
  CHECK(back.scale == stats.scale);
  CHECK(back.whiten == stats.whiten);
  CHECK(back.unwhiten == stats.unwhiten);
  CHECK(back.lambda == stats.lambda);
}

TEST_CASE("init_distilled samples real examples per class") {
  const auto src = make_blobs(3, 10, {1, 4, 4}, 1.0, 2);
  const auto dd = init_distilled<double>(src, 1, 0.01, 5);
  CHECK(dd.size() == 3);
  CHECK(dd.labels == std::vector<Label>{0, 1, 2});
  CHECK(dd.alpha == 0.01);
  const std::size_t d = 16;
  for (std::size_t i = 0; i < dd.size(); ++i) {
    bool found = false;
    for (std::size_t j = 0; j < src.size() && !found; ++j) {
      bool same = src.labels[j] == dd.labels[i];
      for (std::size_t k = 0; k < d && same; ++k) same = double(src.images[j * d + k]) == dd.images[i * d + k];
      found = same;
    }
    CHECK(found);
  }
  CHECK(init_distilled<double>(src, 1, 0.01, 5) == dd);

  const auto idx = sample_per_class(src, 10, 3);
  CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 30);
  CHECK_THROWS_AS(init_distilled<float>(src, 11, 0.01f, 5), DomainError);
  CHECK_THROWS_AS(init_distilled<float>(src, 1, 0.0f, 5), DomainError);
}

TEST_CASE("distilled set round trip and magic checks") {
  TempDir dir("dd");
  auto dd = init_distilled<float>(make_blobs(3, 4, {1, 4, 4}, 1.0, 2), 2, 0.0123f, 1);
  dd.alpha = std::nextafter(0.0123f, 1.0f);
  dd.provenance = "abc123 steps";
  dd.steps = 77;
  dd.arch = "convnet-d2-w8-1x4x4-c3";
  save_distilled(dd, dir / "dd.bin");
  const auto back = load_distilled<float>(dir / "dd.bin");
  CHECK(back == dd);
  CHECK(std::memcmp(&back.alpha, &dd.alpha, sizeof(float)) == 0);
  CHECK(back.digest() == dd.digest());
  // widening on load keeps every value
  const auto wide = load_distilled<double>(dir / "dd.bin");
  CHECK(wide.images == dd.images.cast<double>());
  CHECK(wide.alpha == double(dd.alpha));

  const ArchSpec spec{ArchKind::kMlp, 2, 2, {2, 1, 1}, 2};
  const TrajectoryBuffer buf(spec, 1, 0, std::vector<float>(param_count(spec), 0.5f), "digest");
  save_buffer(buf, dir / "buf.bin");
  CHECK_THROWS_WITH_AS(load_distilled<float>(dir / "buf.bin"), doctest::Contains("magic"), FormatError);

  auto bytes = testing::read_bytes(dir / "dd.bin");
  bytes[4] = 2;
  testing::write_bytes(dir / "v2.bin", bytes);
  CHECK_THROWS_AS(load_distilled<float>(dir / "v2.bin"), FormatError);
}

TEST_CASE("distilled validation") {
  auto dd = init_distilled<float>(make_blobs(2, 4, {1, 4, 4}, 1.0, 2), 2, 0.01f, 1);
  CHECK_NOTHROW(dd.validate());
  auto swapped = dd;
  std::swap(swapped.labels[0], swapped.labels[3]);
  CHECK_THROWS_AS(swapped.validate(), StructuralError);
  dd.alpha = -1.0f;
  CHECK_THROWS_AS(dd.validate(), DomainError);
  const auto as = as_dataset(init_distilled<float>(make_blobs(2, 4, {1, 4, 4}, 1.0, 2), 2, 0.01f, 1));
  CHECK(as.size() == 4);
  CHECK(as.classes == 2);
}
