#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ddprune/data.hpp"
#include "ddprune/models.hpp"
#include "ddprune/rng.hpp"
#include "ddprune/training.hpp"

namespace ddprune {

struct TeacherConfig {
  std::size_t teachers = 10;
  std::size_t epochs = 20;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0 = hardware concurrency
};

// Per-epoch parameter snapshots of N independently seeded teachers.
// snapshot(n, 0) is the initialization, snapshot(n, E) the final weights.
class TrajectoryBuffer {
 public:
  TrajectoryBuffer() = default;
  TrajectoryBuffer(ArchSpec spec, std::size_t teachers, std::size_t epochs, std::vector<float> data, std::string digest);

  const ArchSpec& spec() const { return spec_; }
  std::size_t teachers() const { return teachers_; }
  std::size_t epochs() const { return epochs_; }
  std::size_t param_count() const { return params_; }
  const std::string& digest() const { return digest_; }
  const std::vector<float>& data() const { return data_; }

  ParamVector<float> snapshot(std::size_t teacher, std::size_t epoch) const;

  bool operator==(const TrajectoryBuffer&) const = default;

 private:
  ArchSpec spec_;
  std::size_t teachers_ = 0;
  std::size_t epochs_ = 0;
  std::size_t params_ = 0;
  std::vector<float> data_;  // teacher-major, epoch-minor
  std::string digest_;
};

struct TeacherRun {
  TrajectoryBuffer buffer;
  std::vector<double> train_accuracy;  // per teacher, after the final epoch
};

// Initialization seed of teacher n under root seed `seed`.
std::uint64_t teacher_init_seed(std::uint64_t seed, std::size_t teacher);

// Digest line stored in buffer files: content hash followed by the training
// settings, e.g. "9c1e... seed=7 teachers=10 epochs=20 lr=0.01 ...".
std::string teacher_digest(const LabeledDataset& train, const ArchSpec& spec, const TeacherConfig& cfg);
std::optional<std::uint64_t> digest_seed(const std::string& digest);

TeacherRun train_teachers(const LabeledDataset& train, const ArchSpec& spec, const TeacherConfig& cfg);

void save_buffer(const TrajectoryBuffer& buffer, const std::filesystem::path& path);
// `expected` (canonical spec) is checked against the header when given.
TrajectoryBuffer load_buffer(const std::filesystem::path& path, const std::optional<ArchSpec>& expected = std::nullopt);
// Reads only the header and the snapshots of one teacher.
std::vector<ParamVector<float>> load_teacher(const std::filesystem::path& path, std::size_t teacher);

struct StartSample {
  std::size_t teacher = 0;
  std::size_t epoch = 0;
  ParamVector<float> start;   // theta_i
  ParamVector<float> target;  // theta_{i+K}
};

// Throws ConfigError unless 1 <= max_start and max_start + K <= E.
void validate_segment(const TrajectoryBuffer& buffer, std::size_t max_start, std::size_t k);

// Fresh (teacher, i) with i uniform in [0, max_start).
StartSample sample_start(const TrajectoryBuffer& buffer, std::size_t max_start, std::size_t k, Rng& rng);

}  // namespace ddprune
