#pragma once

// Train fresh networks on distilled or selected data and report test
// accuracy as mean and unbiased standard deviation over seeds.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddprune/data.hpp"
#include "ddprune/models.hpp"
#include "ddprune/training.hpp"

namespace ddprune {

struct EvalConfig {
  std::size_t epochs = 100;
  double lr = 0.01;  // baselines; distilled sets train at their own alpha*
  double momentum = 0.9;
  std::size_t batch_size = 256;

  std::string describe() const;
};

struct TrainResult {
  ParamVector<float> params;
  double test_accuracy = 0.0;
};

// Initialization and shuffling come from `seed` alone.
TrainResult train_from_scratch(const ArchSpec& spec, const LabeledDataset& train, const LabeledDataset& test,
                               double lr, const EvalConfig& cfg, std::uint64_t seed);

struct EvalRow {
  std::string method;  // "Distilled" or "Random"
  std::string arch;    // short architecture name
  std::string lr_source;  // "alpha*" or "fixed"
  double lr = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;
  double mean = 0.0;
  double std = 0.0;  // unbiased (n - 1)
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string config_digest;
  std::string provenance;  // digest of the evaluated distilled set

  std::string csv() const;
  // Methods as rows, architectures as columns, "mean±std" cells in percent.
  std::string table() const;
  void write(const std::filesystem::path& csv_path, const std::filesystem::path& table_path) const;
};

// Throws ConfigError for fewer than two seeds or repeated seeds.
void validate_seeds(const std::vector<std::uint64_t>& seeds);

void summarize(EvalRow& row);

// Every architecture trains at the set's alpha*.
template <class T>
EvalReport evaluate_distilled(const DistilledDataset<T>& distilled, const LabeledDataset& test, const ArchSpec& spec,
                              const std::vector<std::uint64_t>& seeds, const EvalConfig& cfg);

// Specs are checked for compatibility before any training; StructuralError names the first bad one.
template <class T>
EvalReport cross_architecture_eval(const DistilledDataset<T>& distilled, const LabeledDataset& test,
                                   const std::vector<ArchSpec>& specs, const std::vector<std::uint64_t>& seeds,
                                   const EvalConfig& cfg);

// Fresh uniform ipc-per-class selection per seed, trained with cfg.lr.
EvalRow random_baseline(const LabeledDataset& source, std::size_t ipc, const LabeledDataset& test,
                        const ArchSpec& spec, const std::vector<std::uint64_t>& seeds, const EvalConfig& cfg);

}  // namespace ddprune
