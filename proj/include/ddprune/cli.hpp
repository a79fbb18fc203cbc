#pragma once

// Config-driven command layer behind the `ddprune` executable.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ddprune/distill.hpp"
#include "ddprune/eval.hpp"

namespace ddprune::cli {

// Flat INI config: root keys plus [data], [model], [teacher], [distill],
// [eval] and [export] sections. Every key has a default; unknown keys are
// rejected.
class RunConfig {
 public:
  static RunConfig defaults();
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& text, const std::string& source = "<config>");

  // "section.key", or a bare key for the root section.
  const std::string& get(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
  bool get_bool(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  std::uint64_t seed() const { return get_uint("seed"); }
  std::filesystem::path output_dir() const;
  // Relative paths resolve against output_dir.
  std::filesystem::path output_path(const std::string& key) const;

  // Every key with its effective value, in schema order.
  std::string resolved_ini() const;

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string> values_;
};

struct PreparedData {
  LabeledDataset train;
  LabeledDataset test;
  std::optional<ZcaStats> zca;
};

// Loads or generates the data and applies ZCA when configured.
PreparedData prepare_data(const RunConfig& cfg);
ArchSpec model_spec(const RunConfig& cfg, const LabeledDataset& data);
TeacherConfig teacher_config(const RunConfig& cfg);
DistillConfig distill_config(const RunConfig& cfg);
EvalConfig eval_config(const RunConfig& cfg);

int cmd_train_teachers(const RunConfig& cfg);
int cmd_distill(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_export_images(const RunConfig& cfg);

// Grid image, rows = classes and columns = ipc, each tile scaled by `scale`.
// Binary PGM for one channel, PPM for three. Pixels are unwhitened when
// `zca` is given, then mapped x -> round(255 x) and clamped to [0, 255].
std::string render_grid(const DistilledDataset<float>& distilled, const ZcaStats* zca, std::size_t scale = 1);

// Parses arguments, runs a subcommand and maps errors to exit codes:
// 0 success, 1 internal or numeric failure, 2 usage or config error.
int main(int argc, const char* const* argv);

}  // namespace ddprune::cli
