#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ddprune/cli.hpp"
#include "ddprune/errors.hpp"
#include "test_util.hpp"

using namespace ddprune;
using namespace ddprune::testing;

namespace {

std::string small_config(const std::filesystem::path& out, std::size_t steps = 6) {
  return "seed = 3\n"
         "output_dir = " + out.string() + "\n"
         "[data]\nclasses = 2\nper_class = 12\ntest_per_class = 8\nheight = 4\nwidth = 4\nseparation = 2\n"
         "[model]\narch = mlp-d2-w8\n"
         "[teacher]\nteachers = 2\nepochs = 3\nbatch_size = 8\nthreads = 2\n"
         "[distill]\nsteps = " + std::to_string(steps) + "\ninner_steps = 2\nexpert_epochs = 1\nmax_start_epoch = 1\n"
         "batch_size = 2\nipc = 2\nlog_every = 0\n"
         "[eval]\nepochs = 3\nseeds = 1,2\nbatch_size = 4\n";
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "ddprune");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::filesystem::path& p) {
  const auto b = read_bytes(p);
  return {b.begin(), b.end()};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("config: defaults, overrides and unknown keys") {
  auto cfg = cli::RunConfig::parse("seed = 9\n[distill]\nsteps = 12\nepsilon = 0.25 \n", "t.ini");
  CHECK(cfg.seed() == 9);
  CHECK(cfg.get_uint("distill.steps") == 12);
  CHECK(cfg.get_double("distill.epsilon") == 0.25);
  CHECK(cfg.get_double("distill.prune_floor") == 0.5);
  CHECK(cli::distill_config(cfg).epsilon == 0.25);

  CHECK_THROWS_AS(cli::RunConfig::parse("[distill]\nstepz = 1\n", "t.ini"), ConfigError);
  CHECK_THROWS_AS(cli::RunConfig::parse("[distil]\nsteps = 1\n", "t.ini"), ConfigError);
  CHECK_THROWS_AS(cli::RunConfig::parse("bogus = 1\n", "t.ini"), ConfigError);
  CHECK_THROWS_AS(cli::RunConfig::parse("[distill]\nsteps = -1\n", "t.ini").get_uint("distill.steps"), ConfigError);
  CHECK_THROWS_AS(cli::RunConfig::parse("[distill]\nprune = maybe\n", "t.ini").get_bool("distill.prune"), ConfigError);
  CHECK_THROWS_AS(cli::distill_config(cli::RunConfig::parse("[distill]\nprecision = f16\n", "t.ini")), ConfigError);
  CHECK_THROWS_AS(cli::model_spec(cli::RunConfig::parse("[model]\nactivation = relu\n", "t.ini"),
                                  cli::prepare_data(cli::RunConfig::defaults()).train),
                  ConfigError);
}

TEST_CASE("config: resolved form reparses to the same values") {
  const auto cfg = cli::RunConfig::parse("seed = 4\n[eval]\nseeds = 7, 8\n[export]\nscale = 3\n", "t.ini");
  const auto again = cli::RunConfig::parse(cfg.resolved_ini(), "resolved");
  for (const auto& k : cli::RunConfig::known_keys()) CHECK(again.get(k) == cfg.get(k));
  CHECK(again.get_list("eval.seeds") == std::vector<std::string>{"7", "8"});
}

TEST_CASE("cli: missing config exits 2 naming the path") {
  TempDir dir("cli-missing");
  const auto missing = (dir / "nope.ini").string();
  std::stringstream err;
  auto* old = std::cerr.rdbuf(err.rdbuf());
  const int rc = run({"distill", "--config", missing});
  std::cerr.rdbuf(old);
  CHECK(rc == 2);
  CHECK(err.str().find(missing) != std::string::npos);
}

TEST_CASE("cli: bad usage and unknown key exit 2") {
  TempDir dir("cli-usage");
  write_text(dir / "bad.ini", "[teacher]\nteacherz = 2\n");
  std::stringstream sink;
  auto* old_err = std::cerr.rdbuf(sink.rdbuf());
  auto* old_out = std::cout.rdbuf(sink.rdbuf());
  CHECK(run({"distill"}) == 2);
  CHECK(run({"frobnicate", "--config", (dir / "bad.ini").string()}) == 2);
  CHECK(run({"train-teachers", "--config", (dir / "bad.ini").string()}) == 2);
  std::cerr.rdbuf(old_err);
  std::cout.rdbuf(old_out);
  CHECK(sink.str().find("teacherz") != std::string::npos);
}

TEST_CASE("cli: full pipeline is reproducible and complete") {
  TempDir a("cli-a"), b("cli-b");
  for (auto* d : {&a, &b}) write_text(*d / "run.ini", small_config(d->path / "out"));
  std::stringstream sink;
  auto* old_err = std::cerr.rdbuf(sink.rdbuf());
  auto* old_out = std::cout.rdbuf(sink.rdbuf());
  for (auto* d : {&a, &b}) {
    const auto ini = (*d / "run.ini").string();
    REQUIRE(run({"train-teachers", "--config", ini}) == 0);
    REQUIRE(run({"distill", "--config", ini}) == 0);
    REQUIRE(run({"eval", "--config", ini}) == 0);
    REQUIRE(run({"export-images", "--config", ini}) == 0);
  }
  std::cerr.rdbuf(old_err);
  std::cout.rdbuf(old_out);

  for (const char* f : {"teachers.ddtb", "teachers_summary.csv", "zca.ddz", "distilled.ddd", "distill_report.csv",
                        "eval_report.csv", "eval_report.txt", "distilled.pgm", "train-teachers.resolved.ini",
                        "distill.resolved.ini", "eval.resolved.ini", "export-images.resolved.ini"}) {
    const std::string name = f;
    CAPTURE(name);
    REQUIRE(std::filesystem::exists(a.path / "out" / f));
    auto text_a = slurp(a.path / "out" / f), text_b = slurp(b.path / "out" / f);
    // resolved configs record their own output_dir
    if (name.find("resolved") != std::string::npos) {
      text_a.replace(text_a.find(a.path.string()), a.path.string().size(), "");
      text_b.replace(text_b.find(b.path.string()), b.path.string().size(), "");
    }
    CHECK(text_a == text_b);
  }
  const auto out = a.path / "out";
  CHECK(count_lines(slurp(out / "teachers_summary.csv")) == 1 + 2);
  CHECK(count_lines(slurp(out / "distill_report.csv")) == 1 + 6);
  const auto csv = slurp(out / "eval_report.csv");
  CHECK(csv.find("\nDistilled,mlp-d2-w8,") != std::string::npos);
  CHECK(csv.find("\nRandom,mlp-d2-w8,") != std::string::npos);

  const auto buffer = load_buffer(out / "teachers.ddtb");
  CHECK(buffer.teachers() == 2);
  CHECK(buffer.epochs() == 3);
  const auto distilled = load_distilled<float>(out / "distilled.ddd");
  CHECK(distilled.size() == 4);

  // 2 classes x 2 per class of 4x4 images
  const auto pgm = slurp(out / "distilled.pgm");
  CHECK(pgm.rfind("P5\n8 8\n255\n", 0) == 0);
  CHECK(pgm.size() == std::string("P5\n8 8\n255\n").size() + 64);
}

TEST_CASE("cli: seed override changes results, zero steps is a smoke run") {
  TempDir dir("cli-seed");
  write_text(dir / "run.ini", small_config(dir.path / "out", 0));
  const auto ini = (dir / "run.ini").string();
  std::stringstream sink;
  auto* old_err = std::cerr.rdbuf(sink.rdbuf());
  REQUIRE(run({"train-teachers", "--config", ini}) == 0);
  const auto first = read_bytes(dir.path / "out" / "teachers.ddtb");
  REQUIRE(run({"distill", "--config", ini}) == 0);
  CHECK(count_lines(slurp(dir.path / "out" / "distill_report.csv")) == 1);
  REQUIRE(run({"train-teachers", "--config", ini, "--seed", "11"}) == 0);
  std::cerr.rdbuf(old_err);
  CHECK(read_bytes(dir.path / "out" / "teachers.ddtb") != first);
  CHECK(slurp(dir.path / "out" / "train-teachers.resolved.ini").find("seed = 11\n") != std::string::npos);
}

TEST_CASE("cli: output dir from the environment") {
  TempDir dir("cli-env");
  write_text(dir / "run.ini", small_config(dir.path / "ignored"));
  ::setenv("DDPRUNE_OUTPUT_DIR", (dir.path / "env").c_str(), 1);
  std::stringstream sink;
  auto* old_err = std::cerr.rdbuf(sink.rdbuf());
  const int rc = run({"train-teachers", "--config", (dir / "run.ini").string()});
  std::cerr.rdbuf(old_err);
  ::unsetenv("DDPRUNE_OUTPUT_DIR");
  CHECK(rc == 0);
  CHECK(std::filesystem::exists(dir.path / "env" / "teachers.ddtb"));
  CHECK_FALSE(std::filesystem::exists(dir.path / "ignored"));
}

TEST_CASE("export: grid layout, clamping and missing stats") {
  DistilledDataset<float> d;
  d.classes = 2;
  d.ipc = 2;
  d.images = Tensor<float>({4, 1, 2, 2});
  d.labels = {0, 0, 1, 1};
  d.arch = "mlp-d2-w8-1x2x2-c2";
  d.alpha = 0.01f;
  const float values[4] = {-0.5f, 0.5f, 1.5f, 0.25f};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 4; ++k) d.images[i * 4 + k] = values[i];
  const auto grid = cli::render_grid(d, nullptr, 2);
  const std::string header = "P5\n8 8\n255\n";
  REQUIRE(grid.size() == header.size() + 64);
  auto px = [&](std::size_t y, std::size_t x) { return static_cast<unsigned char>(grid[header.size() + y * 8 + x]); };
  CHECK(px(0, 0) == 0);     // clamped below
  CHECK(px(3, 7) == 128);   // class 0, slot 1
  CHECK(px(4, 0) == 255);   // class 1 row, clamped above
  CHECK(px(7, 4) == 64);

  TempDir dir("cli-export");
  write_text(dir / "x.ini", "output_dir = " + dir.path.string() + "\n[export]\nunwhiten = true\n");
  save_distilled(d, dir / "distilled.ddd");
  std::stringstream err;
  auto* old = std::cerr.rdbuf(err.rdbuf());
  CHECK(run({"export-images", "--config", (dir / "x.ini").string()}) == 2);
  std::cerr.rdbuf(old);
  CHECK(err.str().find("zca.ddz") != std::string::npos);
}
