#include "ddprune/cli.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "ddprune/errors.hpp"
#include "ddprune/io.hpp"

namespace ddprune::cli {
namespace {

struct KeyDef {
  const char* key;
  const char* value;
};

// Schema order is the order of the resolved config.
const KeyDef kSchema[] = {
    {"seed", "0"},
    {"output_dir", "out"},

    {"data.source", "blobs"},  // blobs | raw | csv
    {"data.train_path", ""},
    {"data.test_path", ""},
    {"data.seed", "0"},
    {"data.classes", "3"},
    {"data.per_class", "500"},
    {"data.test_per_class", "500"},
    {"data.channels", "1"},
    {"data.height", "16"},
    {"data.width", "16"},
    {"data.separation", "0.5"},
    {"data.zca", "true"},
    {"data.zca_lambda", "0.1"},
    {"data.zca_standardize", "true"},
    {"data.zca_stats", "zca.ddz"},

    {"model.arch", "convnet-d2-w16"},
    {"model.activation", "softplus"},

    {"teacher.teachers", "10"},
    {"teacher.epochs", "20"},
    {"teacher.lr", "0.01"},
    {"teacher.momentum", "0.9"},
    {"teacher.batch_size", "64"},
    {"teacher.threads", "0"},
    {"teacher.buffer", "teachers.ddtb"},
    {"teacher.summary", "teachers_summary.csv"},

    {"distill.steps", "1000"},
    {"distill.inner_steps", "10"},
    {"distill.expert_epochs", "2"},
    {"distill.max_start_epoch", "5"},
    {"distill.epsilon", "0.1"},
    {"distill.prune_floor", "0.5"},
    {"distill.prune", "true"},
    {"distill.alpha0", "0.01"},
    {"distill.lr_pixels", "0.1"},
    {"distill.lr_alpha", "1e-4"},
    {"distill.momentum", "0.5"},
    {"distill.batch_size", "256"},
    {"distill.ipc", "1"},
    {"distill.precision", "f32"},  // f32 | f64
    {"distill.augment_flip", "false"},
    {"distill.augment_shift", "false"},
    {"distill.augment_cutout", "false"},
    {"distill.augment_shift_max", "2"},
    {"distill.augment_cutout_size", "4"},
    {"distill.log_every", "50"},
    {"distill.output", "distilled.ddd"},
    {"distill.report", "distill_report.csv"},

    {"eval.epochs", "100"},
    {"eval.lr", "0.01"},
    {"eval.momentum", "0.9"},
    {"eval.batch_size", "256"},
    {"eval.seeds", "1,2,3,4,5"},
    {"eval.archs", ""},  // empty: model.arch only
    {"eval.baseline", "true"},
    {"eval.distilled", "distilled.ddd"},
    {"eval.csv", "eval_report.csv"},
    {"eval.table", "eval_report.txt"},

    {"export.distilled", "distilled.ddd"},
    {"export.output", "distilled.pgm"},
    {"export.unwhiten", "auto"},  // auto | true | false
    {"export.scale", "1"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

void log(const std::string& line) { std::cerr << line << "\n"; }

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

void write_resolved(const RunConfig& cfg, const std::string& command) {
  io::write_text_atomic(cfg.output_dir() / (command + ".resolved.ini"), cfg.resolved_ini());
}

void maybe_save_zca(const RunConfig& cfg, const PreparedData& data) {
  if (data.zca) save_zca(*data.zca, cfg.output_path("data.zca_stats"));
}

std::vector<std::uint64_t> eval_seeds(const RunConfig& cfg) {
  std::vector<std::uint64_t> raw;
  for (const auto& s : cfg.get_list("eval.seeds")) {
    try {
      std::size_t used = 0;
      raw.push_back(std::stoull(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError("eval.seeds: '" + s + "' is not a non-negative integer");
    }
  }
  validate_seeds(raw);
  std::vector<std::uint64_t> out;
  for (auto s : raw) out.push_back(derive_seed(cfg.seed(), "eval.seed." + std::to_string(s)));
  return out;
}

template <class T>
int distill_as(const RunConfig& cfg, const PreparedData& data, const ArchSpec& spec, const TrajectoryBuffer& buffer) {
  const auto dcfg = distill_config(cfg);
  const std::size_t every = cfg.get_uint("distill.log_every");
  for (const auto& w : dcfg.validate(spec, buffer, &data.train)) log("[distill] warning: " + w);
  log("[distill] " + spec.canonical() + " T=" + std::to_string(dcfg.steps) + " J=" + std::to_string(dcfg.inner_steps) +
      " K=" + std::to_string(dcfg.expert_epochs) + " epsilon=" + fmt("%g", dcfg.epsilon));
  const auto result = run<T>(data.train, buffer, spec, dcfg, [&](const StepRecord& r) {
    if (every && (r.t % every == 0 || r.t == dcfg.steps)) {
      log("[distill] t=" + std::to_string(r.t) + " L=" + fmt("%.5f", r.loss) + " u/p=" + std::to_string(r.u) + "/" +
          std::to_string(r.p) + (r.floor_triggered ? " floor" : "") + " alpha=" + fmt("%.6g", r.alpha));
    }
  });
  save_distilled(result.distilled, cfg.output_path("distill.output"));
  write_report_csv(result.history, cfg.output_path("distill.report"));
  return 0;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  for (const auto& k : kSchema) cfg.values_[k.key] = k.value;
  return cfg;
}

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& k : kSchema) out.emplace_back(k.key);
    return out;
  }();
  return keys;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ": line " + std::to_string(e.line()) + ": " + e.message());
  }
  static const std::set<std::string> sections{"data", "model", "teacher", "distill", "eval", "export"};
  RunConfig cfg = defaults();
  auto assign = [&](const std::string& key, const std::string& value) {
    if (!cfg.values_.count(key)) throw ConfigError(source + ": unknown key '" + key + "'");
    cfg.values_[key] = trim(value);
  };
  for (const auto& [name, node] : tree) {
    if (node.empty() && !sections.count(name)) {
      assign(name, node.data());
      continue;
    }
    if (!sections.count(name)) throw ConfigError(source + ": unknown section [" + name + "]");
    for (const auto& [key, leaf] : node) assign(name + "." + key, leaf.data());
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: '" + path.string() + "'");
  std::ifstream in(path);
  std::stringstream text;
  text << in.rdbuf();
  return parse(text.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ConfigError("unknown key '" + key + "'");
  values_[key] = value;
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

double RunConfig::get_double(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

std::uint64_t RunConfig::get_uint(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const auto u = std::stoull(v, &used);
      if (used == v.size()) return u;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream s(get(key));
  std::string item;
  while (std::getline(s, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::filesystem::path RunConfig::output_dir() const {
  if (const char* env = std::getenv("DDPRUNE_OUTPUT_DIR"); env && *env) return env;
  return get("output_dir");
}

std::filesystem::path RunConfig::output_path(const std::string& key) const {
  const std::filesystem::path p = get(key);
  if (p.empty()) throw ConfigError(key + " must name a file");
  return p.is_absolute() ? p : output_dir() / p;
}

std::string RunConfig::resolved_ini() const {
  std::string out = "; resolved configuration\n";
  std::string section;
  for (const auto& k : kSchema) {
    const std::string key = k.key;
    const auto dot = key.find('.');
    const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += (dot == std::string::npos ? key : key.substr(dot + 1)) + " = " + values_.at(key) + "\n";
  }
  return out;
}

PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData d;
  const ImageShape shape{cfg.get_uint("data.channels"), cfg.get_uint("data.height"), cfg.get_uint("data.width")};
  const auto& source = cfg.get("data.source");
  if (source == "blobs") {
    const auto classes = cfg.get_uint("data.classes");
    const auto sep = cfg.get_double("data.separation");
    const auto seed = cfg.get_uint("data.seed");
    d.train = make_blobs(classes, cfg.get_uint("data.per_class"), shape, sep, seed, Split::kTrain);
    d.test = make_blobs(classes, cfg.get_uint("data.test_per_class"), shape, sep, seed, Split::kTest);
  } else if (source == "raw" || source == "csv") {
    const auto fmt_kind = source == "raw" ? DatasetFormat::kRawBinary : DatasetFormat::kCsv;
    const std::optional<ImageShape> expect = source == "csv" ? std::optional(shape) : std::nullopt;
    d.train = load_dataset(cfg.get("data.train_path"), fmt_kind, expect, Split::kTrain);
    d.test = load_dataset(cfg.get("data.test_path"), fmt_kind, expect, Split::kTest);
    const auto classes = std::max(d.train.classes, d.test.classes);
    d.train.classes = d.test.classes = classes;
    if (!(d.train.shape() == d.test.shape())) {
      throw StructuralError("train images " + d.train.shape().str() + " and test images " + d.test.shape().str() +
                            " differ in shape");
    }
  } else {
    throw ConfigError("data.source must be blobs, raw or csv, got '" + source + "'");
  }
  if (cfg.get_bool("data.zca")) {
    d.zca = zca_fit(d.train, cfg.get_double("data.zca_lambda"), cfg.get_bool("data.zca_standardize"));
    d.train = zca_apply(*d.zca, d.train);
    d.test = zca_apply(*d.zca, d.test);
  }
  return d;
}

ArchSpec model_spec(const RunConfig& cfg, const LabeledDataset& data) {
  if (cfg.get("model.activation") != kActivationName) {
    throw ConfigError("model.activation: only '" + std::string(kActivationName) + "' is supported");
  }
  try {
    auto spec = ArchSpec::parse(cfg.get("model.arch"), data.shape(), data.classes);
    spec.validate();
    return spec;
  } catch (const StructuralError& e) {
    throw ConfigError(std::string("model.arch: ") + e.what());
  }
}

TeacherConfig teacher_config(const RunConfig& cfg) {
  TeacherConfig t;
  t.teachers = cfg.get_uint("teacher.teachers");
  t.epochs = cfg.get_uint("teacher.epochs");
  t.lr = cfg.get_double("teacher.lr");
  t.momentum = cfg.get_double("teacher.momentum");
  t.batch_size = cfg.get_uint("teacher.batch_size");
  t.threads = cfg.get_uint("teacher.threads");
  t.seed = cfg.seed();
  if (t.teachers == 0 || t.epochs == 0) throw ConfigError("teacher.teachers and teacher.epochs must be >= 1");
  return t;
}

DistillConfig distill_config(const RunConfig& cfg) {
  DistillConfig d;
  d.steps = cfg.get_uint("distill.steps");
  d.inner_steps = cfg.get_uint("distill.inner_steps");
  d.expert_epochs = cfg.get_uint("distill.expert_epochs");
  d.max_start_epoch = cfg.get_uint("distill.max_start_epoch");
  d.epsilon = cfg.get_double("distill.epsilon");
  d.prune_floor = cfg.get_double("distill.prune_floor");
  d.prune = cfg.get_bool("distill.prune");
  d.alpha0 = cfg.get_double("distill.alpha0");
  d.lr_pixels = cfg.get_double("distill.lr_pixels");
  d.lr_alpha = cfg.get_double("distill.lr_alpha");
  d.momentum = cfg.get_double("distill.momentum");
  d.batch_size = cfg.get_uint("distill.batch_size");
  d.ipc = cfg.get_uint("distill.ipc");
  d.seed = cfg.seed();
  d.augment.flip = cfg.get_bool("distill.augment_flip");
  d.augment.shift = cfg.get_bool("distill.augment_shift");
  d.augment.cutout = cfg.get_bool("distill.augment_cutout");
  d.augment.shift_max = cfg.get_uint("distill.augment_shift_max");
  d.augment.cutout_size = cfg.get_uint("distill.augment_cutout_size");
  const auto& precision = cfg.get("distill.precision");
  if (precision != "f32" && precision != "f64") throw ConfigError("distill.precision must be f32 or f64");
  return d;
}

EvalConfig eval_config(const RunConfig& cfg) {
  EvalConfig e;
  e.epochs = cfg.get_uint("eval.epochs");
  e.lr = cfg.get_double("eval.lr");
  e.momentum = cfg.get_double("eval.momentum");
  e.batch_size = cfg.get_uint("eval.batch_size");
  if (e.batch_size == 0) throw ConfigError("eval.batch_size must be >= 1");
  return e;
}

int cmd_train_teachers(const RunConfig& cfg) {
  const auto data = prepare_data(cfg);
  const auto spec = model_spec(cfg, data.train);
  const auto tcfg = teacher_config(cfg);
  log("[train-teachers] " + spec.canonical() + " N=" + std::to_string(tcfg.teachers) + " E=" + std::to_string(tcfg.epochs));
  const auto run = train_teachers(data.train, spec, tcfg);
  save_buffer(run.buffer, cfg.output_path("teacher.buffer"));
  std::string summary = "teacher,final_train_accuracy\n";
  for (std::size_t n = 0; n < run.train_accuracy.size(); ++n) {
    summary += std::to_string(n) + "," + fmt("%.6f", run.train_accuracy[n]) + "\n";
    log("[train-teachers] teacher " + std::to_string(n) + " train accuracy " + fmt("%.4f", run.train_accuracy[n]));
  }
  io::write_text_atomic(cfg.output_path("teacher.summary"), summary);
  maybe_save_zca(cfg, data);
  write_resolved(cfg, "train-teachers");
  return 0;
}

int cmd_distill(const RunConfig& cfg) {
  const auto data = prepare_data(cfg);
  const auto spec = model_spec(cfg, data.train);
  distill_config(cfg);
  const auto buffer = load_buffer(cfg.output_path("teacher.buffer"), spec);
  const int rc = cfg.get("distill.precision") == "f64" ? distill_as<double>(cfg, data, spec, buffer)
                                                         : distill_as<float>(cfg, data, spec, buffer);
  maybe_save_zca(cfg, data);
  write_resolved(cfg, "distill");
  return rc;
}

int cmd_eval(const RunConfig& cfg) {
  const auto data = prepare_data(cfg);
  const auto ecfg = eval_config(cfg);
  const auto seeds = eval_seeds(cfg);
  const auto distilled = load_distilled<float>(cfg.output_path("eval.distilled"));
  std::vector<ArchSpec> specs;
  auto names = cfg.get_list("eval.archs");
  if (names.empty()) names.push_back(cfg.get("model.arch"));
  for (const auto& name : names) {
    try {
      specs.push_back(ArchSpec::parse(name, data.train.shape(), data.train.classes));
    } catch (const StructuralError& e) {
      throw ConfigError("eval.archs: '" + name + "': " + e.what());
    }
  }
  log("[eval] " + std::to_string(specs.size()) + " architecture(s), " + std::to_string(seeds.size()) + " seeds");
  auto report = cross_architecture_eval(distilled, data.test, specs, seeds, ecfg);
  if (cfg.get_bool("eval.baseline")) {
    for (const auto& spec : specs) report.rows.push_back(random_baseline(data.train, distilled.ipc, data.test, spec, seeds, ecfg));
  }
  report.write(cfg.output_path("eval.csv"), cfg.output_path("eval.table"));
  std::cout << report.table();
  write_resolved(cfg, "eval");
  return 0;
}

std::string render_grid(const DistilledDataset<float>& distilled, const ZcaStats* zca, std::size_t scale) {
  const ImageShape shape = distilled.shape();
  if (shape.channels != 1 && shape.channels != 3) {
    throw ConfigError("image export supports 1 or 3 channels, got " + std::to_string(shape.channels));
  }
  if (scale == 0) throw ConfigError("export.scale must be >= 1");
  const Tensor<float> pixels = zca ? zca_unapply(*zca, distilled.images) : distilled.images;
  const std::size_t rows = distilled.classes, cols = distilled.ipc;
  const std::size_t h = shape.height * scale, w = shape.width * scale, c = shape.channels;
  const std::size_t width = cols * w, height = rows * h, plane = shape.height * shape.width;
  std::string out = (c == 1 ? "P5\n" : "P6\n") + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + width * height * c);
  for (std::size_t img = 0; img < distilled.size(); ++img) {
    // labels are class-major, so image img sits at (class, slot)
    const std::size_t r = img / cols, col = img % cols;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const float v = pixels[img * shape.size() + ch * plane + (y / scale) * shape.width + x / scale];
          const double q = std::isfinite(v) ? std::clamp(std::round(255.0 * v), 0.0, 255.0) : 0.0;
          out[header + ((r * h + y) * width + col * w + x) * c + ch] = static_cast<char>(static_cast<unsigned char>(q));
        }
      }
    }
  }
  return out;
}

int cmd_export_images(const RunConfig& cfg) {
  const auto distilled = load_distilled<float>(cfg.output_path("export.distilled"));
  const auto& mode = cfg.get("export.unwhiten");
  if (mode != "auto" && mode != "true" && mode != "false") throw ConfigError("export.unwhiten must be auto, true or false");
  const bool unwhiten = mode == "auto" ? cfg.get_bool("data.zca") : mode == "true";
  std::optional<ZcaStats> zca;
  if (unwhiten) {
    const auto path = cfg.output_path("data.zca_stats");
    if (!std::filesystem::exists(path)) {
      throw ConfigError("unwhitening requested but ZCA stats file '" + path.string() + "' does not exist");
    }
    zca = load_zca(path);
  }
  const auto bytes = render_grid(distilled, zca ? &*zca : nullptr, cfg.get_uint("export.scale"));
  io::write_text_atomic(cfg.output_path("export.output"), bytes);
  log("[export-images] wrote " + cfg.output_path("export.output").string());
  write_resolved(cfg, "export-images");
  return 0;
}

int main(int argc, const char* const* argv) {
  CLI::App app{"Trajectory-matching dataset distillation with difficult-to-match parameter pruning", "ddprune"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string input, output;
  struct Command {
    const char* name;
    const char* help;
    int (*fn)(const RunConfig&);
  };
  const Command commands[] = {
      {"train-teachers", "train teacher networks and write the trajectory buffer", cmd_train_teachers},
      {"distill", "distill a synthetic set by trajectory matching", cmd_distill},
      {"eval", "train fresh networks on the distilled set and report accuracy", cmd_eval},
      {"export-images", "write the distilled images as a PGM/PPM grid", cmd_export_images},
  };
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "INI config file")->required();
    sub->add_option("--seed", seed, "override the root seed");
    if (std::string_view(c.name) == "export-images") {
      sub->add_option("--input", input, "distilled set file (overrides export.distilled)");
      sub->add_option("--output", output, "image file (overrides export.output)");
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    RunConfig cfg = RunConfig::load(config_path);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (!input.empty()) cfg.set("export.distilled", input);
    if (!output.empty()) cfg.set("export.output", output);
    for (const auto& c : commands) {
      if (app.got_subcommand(c.name)) return c.fn(cfg);
    }
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const StructuralError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ddprune::cli
