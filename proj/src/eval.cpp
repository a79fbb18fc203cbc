#include "ddprune/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "ddprune/io.hpp"

namespace ddprune {
namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

void check_compatible(const ArchSpec& spec, const ImageShape& shape, std::size_t classes) {
  spec.validate();
  if (!(spec.input == shape) || spec.classes != classes) {
    throw StructuralError("architecture " + spec.canonical() + " is incompatible with " + shape.str() + " images over " +
                          std::to_string(classes) + " classes");
  }
}

}  // namespace

std::string EvalConfig::describe() const {
  return "epochs=" + std::to_string(epochs) + " lr=" + fmt("%.17g", lr) + " momentum=" + fmt("%.17g", momentum) +
         " batch_size=" + std::to_string(batch_size);
}

TrainResult train_from_scratch(const ArchSpec& spec, const LabeledDataset& train, const LabeledDataset& test,
                               double lr, const EvalConfig& cfg, std::uint64_t seed) {
  if (train.size() == 0) throw DomainError("train_from_scratch: empty training set");
  check_compatible(spec, train.shape(), train.classes);
  auto params = init_params<float>(spec, derive_seed(seed, "eval.init"));
  Rng rng = make_rng(seed, "eval.shuffle");
  params = sgd_train(spec, std::move(params), train, {lr, cfg.momentum, cfg.batch_size, cfg.epochs}, rng);
  const double acc = accuracy(spec, params, test);
  return {std::move(params), acc};
}

void validate_seeds(const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 2) throw ConfigError("evaluation needs at least two seeds, got " + std::to_string(seeds.size()));
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("evaluation seeds must be distinct");
  }
}

void summarize(EvalRow& row) {
  const double n = static_cast<double>(row.accuracies.size());
  row.mean = 0.0;
  for (double a : row.accuracies) row.mean += a;
  row.mean /= n;
  double ss = 0.0;
  for (double a : row.accuracies) ss += (a - row.mean) * (a - row.mean);
  row.std = row.accuracies.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

template <class T>
EvalReport cross_architecture_eval(const DistilledDataset<T>& distilled, const LabeledDataset& test,
                                   const std::vector<ArchSpec>& specs, const std::vector<std::uint64_t>& seeds,
                                   const EvalConfig& cfg) {
  validate_seeds(seeds);
  distilled.validate();
  if (specs.empty()) throw ConfigError("no architectures to evaluate");
  for (const auto& spec : specs) check_compatible(spec, distilled.shape(), distilled.classes);
  const LabeledDataset train = as_dataset(distilled);
  EvalReport report;
  report.provenance = distilled.digest();
  std::string seed_list;
  for (auto s : seeds) seed_list += " " + std::to_string(s);
  report.config_digest = hex64(fnv1a64(cfg.describe() + " seeds=" + seed_list));
  for (const auto& spec : specs) {
    EvalRow row;
    row.method = "Distilled";
    row.arch = spec.name();
    row.lr_source = "alpha*";
    row.lr = static_cast<double>(distilled.alpha);
    row.seeds = seeds;
    for (auto seed : seeds) row.accuracies.push_back(train_from_scratch(spec, train, test, row.lr, cfg, seed).test_accuracy);
    summarize(row);
    report.rows.push_back(std::move(row));
  }
  return report;
}

template <class T>
EvalReport evaluate_distilled(const DistilledDataset<T>& distilled, const LabeledDataset& test, const ArchSpec& spec,
                              const std::vector<std::uint64_t>& seeds, const EvalConfig& cfg) {
  return cross_architecture_eval(distilled, test, {spec}, seeds, cfg);
}

EvalRow random_baseline(const LabeledDataset& source, std::size_t ipc, const LabeledDataset& test,
                        const ArchSpec& spec, const std::vector<std::uint64_t>& seeds, const EvalConfig& cfg) {
  validate_seeds(seeds);
  check_compatible(spec, source.shape(), source.classes);
  EvalRow row;
  row.method = "Random";
  row.arch = spec.name();
  row.lr_source = "fixed";
  row.lr = cfg.lr;
  row.seeds = seeds;
  for (auto seed : seeds) {
    const auto idx = sample_per_class(source, ipc, derive_seed(seed, "random.select"));
    LabeledDataset subset;
    subset.images = source.gather<float>(idx);
    subset.labels = source.gather_labels(idx);
    subset.classes = source.classes;
    row.accuracies.push_back(train_from_scratch(spec, subset, test, cfg.lr, cfg, seed).test_accuracy);
  }
  summarize(row);
  return row;
}

std::string EvalReport::csv() const {
  std::ostringstream out;
  out << "method,arch,lr_source,lr,n,mean,std_unbiased,accuracies,config_digest,provenance\n";
  for (const auto& r : rows) {
    std::string accs;
    for (std::size_t i = 0; i < r.accuracies.size(); ++i) accs += (i ? ";" : "") + fmt("%.6f", r.accuracies[i]);
    out << r.method << ',' << r.arch << ',' << r.lr_source << ',' << fmt("%.9g", r.lr) << ',' << r.accuracies.size()
        << ',' << fmt("%.6f", r.mean) << ',' << fmt("%.6f", r.std) << ',' << accs << ',' << config_digest << ','
        << provenance << '\n';
  }
  return out.str();
}

std::string EvalReport::table() const {
  std::vector<std::string> methods, archs;
  std::map<std::pair<std::string, std::string>, std::string> cells;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(archs.begin(), archs.end(), r.arch) == archs.end()) archs.push_back(r.arch);
    cells[{r.method, r.arch}] = fmt("%.1f", 100.0 * r.mean) + "±" + fmt("%.1f", 100.0 * r.std);
    n = std::max(n, r.accuracies.size());
  }
  std::size_t first = 6;
  for (const auto& m : methods) first = std::max(first, m.size());
  std::vector<std::size_t> width;
  for (const auto& a : archs) {
    std::size_t w = a.size();
    for (const auto& m : methods) {
      auto it = cells.find({m, a});
      // "±" is two bytes but one column
      if (it != cells.end()) w = std::max(w, it->second.size() - 1);
    }
    width.push_back(w);
  }
  auto pad = [](const std::string& s, std::size_t w, std::size_t bytes_extra = 0) {
    return s + std::string(w + bytes_extra > s.size() ? w + bytes_extra - s.size() : 0, ' ');
  };
  std::ostringstream out;
  out << "test accuracy (%), mean±std over " << n << " seeds (std unbiased, n-1)\n";
  out << pad("Method", first);
  for (std::size_t i = 0; i < archs.size(); ++i) out << "  " << pad(archs[i], width[i]);
  out << '\n';
  for (const auto& m : methods) {
    out << pad(m, first);
    for (std::size_t i = 0; i < archs.size(); ++i) {
      auto it = cells.find({m, archs[i]});
      out << "  " << (it == cells.end() ? pad("-", width[i]) : pad(it->second, width[i], 1));
    }
    out << '\n';
  }
  return out.str();
}

void EvalReport::write(const std::filesystem::path& csv_path, const std::filesystem::path& table_path) const {
  io::write_text_atomic(csv_path, csv());
  io::write_text_atomic(table_path, table());
}

template EvalReport evaluate_distilled(const DistilledDataset<float>&, const LabeledDataset&, const ArchSpec&,
                                       const std::vector<std::uint64_t>&, const EvalConfig&);
template EvalReport evaluate_distilled(const DistilledDataset<double>&, const LabeledDataset&, const ArchSpec&,
                                       const std::vector<std::uint64_t>&, const EvalConfig&);
template EvalReport cross_architecture_eval(const DistilledDataset<float>&, const LabeledDataset&,
                                            const std::vector<ArchSpec>&, const std::vector<std::uint64_t>&,
                                            const EvalConfig&);
template EvalReport cross_architecture_eval(const DistilledDataset<double>&, const LabeledDataset&,
                                            const std::vector<ArchSpec>&, const std::vector<std::uint64_t>&,
                                            const EvalConfig&);

}  // namespace ddprune
