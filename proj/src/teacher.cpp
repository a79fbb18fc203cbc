#include "ddprune/teacher.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "ddprune/io.hpp"

namespace ddprune {
namespace {

constexpr std::string_view kBufferMagic = "DDTB";
constexpr std::uint16_t kBufferVersion = 1;

struct BufferHeader {
  ArchSpec spec;
  std::size_t teachers = 0;
  std::size_t epochs = 0;
  std::size_t params = 0;
  std::size_t payload_offset = 0;
};

BufferHeader read_header(io::ByteReader& r) {
  r.expect_magic(kBufferMagic);
  const auto version = r.get<std::uint16_t>();
  if (version != kBufferVersion) throw FormatError(r.source() + ": unsupported buffer version " + std::to_string(version));
  BufferHeader h;
  h.spec = ArchSpec::parse_canonical(r.get_string());
  h.teachers = r.get<std::uint32_t>();
  h.epochs = r.get<std::uint32_t>();
  h.params = static_cast<std::size_t>(r.get<std::uint64_t>());
  h.payload_offset = r.position();
  if (h.params != param_count(h.spec)) {
    throw FormatError(r.source() + ": header p=" + std::to_string(h.params) + " disagrees with " + h.spec.canonical());
  }
  return h;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

TrajectoryBuffer::TrajectoryBuffer(ArchSpec spec, std::size_t teachers, std::size_t epochs, std::vector<float> data,
                                   std::string digest)
    : spec_(std::move(spec)),
      teachers_(teachers),
      epochs_(epochs),
      params_(ddprune::param_count(spec_)),
      data_(std::move(data)),
      digest_(std::move(digest)) {
  if (data_.size() != teachers_ * (epochs_ + 1) * params_) throw StructuralError("trajectory buffer payload size mismatch");
}

ParamVector<float> TrajectoryBuffer::snapshot(std::size_t teacher, std::size_t epoch) const {
  if (teacher >= teachers_ || epoch > epochs_) {
    throw DomainError("snapshot (" + std::to_string(teacher) + ", " + std::to_string(epoch) + ") outside buffer of " +
                      std::to_string(teachers_) + " teachers x " + std::to_string(epochs_ + 1) + " epochs");
  }
  const auto first = data_.begin() + static_cast<std::ptrdiff_t>((teacher * (epochs_ + 1) + epoch) * params_);
  return ParamVector<float>(param_layout(spec_), std::vector<float>(first, first + static_cast<std::ptrdiff_t>(params_)));
}

std::uint64_t teacher_init_seed(std::uint64_t seed, std::size_t teacher) {
  return derive_seed(seed, "teacher." + std::to_string(teacher) + ".init");
}

std::string teacher_digest(const LabeledDataset& train, const ArchSpec& spec, const TeacherConfig& cfg) {
  std::ostringstream settings;
  settings << "seed=" << cfg.seed << " teachers=" << cfg.teachers << " epochs=" << cfg.epochs
           << " lr=" << format_double(cfg.lr) << " momentum=" << format_double(cfg.momentum)
           << " batch=" << cfg.batch_size << " arch=" << spec.canonical() << " optimizer=sgd-momentum augment=off";
  std::uint64_t h = fnv1a64(std::span(reinterpret_cast<const unsigned char*>(train.images.data()),
                                      train.images.size() * sizeof(float)));
  h = fnv1a64(std::span(reinterpret_cast<const unsigned char*>(train.labels.data()), train.labels.size() * sizeof(Label)), h);
  h = fnv1a64(settings.str(), h);
  return hex64(h) + " " + settings.str();
}

std::optional<std::uint64_t> digest_seed(const std::string& digest) {
  const auto pos = digest.find(" seed=");
  if (pos == std::string::npos) return std::nullopt;
  try {
    return std::stoull(digest.substr(pos + 6));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

TeacherRun train_teachers(const LabeledDataset& train, const ArchSpec& spec, const TeacherConfig& cfg) {
  if (train.size() == 0) throw DomainError("train_teachers: empty training set");
  if (cfg.teachers == 0) throw ConfigError("train_teachers: need at least one teacher");
  train.validate();
  if (!(train.shape() == spec.input)) {
    throw StructuralError(spec.name() + ": dataset shape " + train.shape().str() + " does not match " + spec.input.str());
  }
  const std::size_t p = param_count(spec);
  const std::size_t per_teacher = (cfg.epochs + 1) * p;
  std::vector<float> data(cfg.teachers * per_teacher);
  std::vector<double> acc(cfg.teachers, 0.0);
  const SgdConfig sgd{cfg.lr, cfg.momentum, cfg.batch_size, cfg.epochs};

  auto run_one = [&](std::size_t n) {
    auto params = init_params<float>(spec, teacher_init_seed(cfg.seed, n));
    float* out = data.data() + n * per_teacher;
    std::copy(params.values().begin(), params.values().end(), out);
    Rng rng = make_rng(cfg.seed, "teacher." + std::to_string(n) + ".shuffle");
    try {
      params = sgd_train(spec, std::move(params), train, sgd, rng, [&](std::size_t epoch, const ParamVector<float>& cur) {
        std::copy(cur.values().begin(), cur.values().end(), out + epoch * p);
      });
    } catch (const NumericError& e) {
      throw NumericError("teacher " + std::to_string(n) + ": " + e.what());
    }
    acc[n] = accuracy(spec, params, train);
  };

  std::size_t threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, cfg.teachers);
  if (threads <= 1) {
    for (std::size_t n = 0; n < cfg.teachers; ++n) run_one(n);
  } else {
    // Teachers write disjoint slices; the merge order is the teacher index.
    std::mutex mutex;
    std::exception_ptr failure;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        while (true) {
          std::size_t n;
          {
            std::lock_guard lock(mutex);
            if (next >= cfg.teachers || failure) return;
            n = next++;
          }
          try {
            run_one(n);
          } catch (...) {
            std::lock_guard lock(mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }
  return {TrajectoryBuffer(spec, cfg.teachers, cfg.epochs, std::move(data), teacher_digest(train, spec, cfg)), std::move(acc)};
}

void save_buffer(const TrajectoryBuffer& buffer, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.put_magic(kBufferMagic);
  w.put<std::uint16_t>(kBufferVersion);
  w.put_string(buffer.spec().canonical());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(buffer.teachers()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(buffer.epochs()));
  w.put<std::uint64_t>(buffer.param_count());
  w.put_array(buffer.data().data(), buffer.data().size());
  w.put_string(buffer.digest());
  io::write_file_atomic(path, w.bytes());
}

TrajectoryBuffer load_buffer(const std::filesystem::path& path, const std::optional<ArchSpec>& expected) {
  if (!std::filesystem::exists(path)) throw IoError("buffer file not found: '" + path.string() + "'");
  io::ByteReader r(io::read_file(path), path.string());
  const BufferHeader h = read_header(r);
  if (expected && !(h.spec == *expected)) {
    throw FormatError(path.string() + ": buffer architecture " + h.spec.canonical() + " does not match expected " +
                      expected->canonical());
  }
  std::vector<float> data(h.teachers * (h.epochs + 1) * h.params);
  r.get_array(data.data(), data.size());
  std::string digest = r.get_string();
  if (r.remaining() != 0) throw FormatError(path.string() + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return TrajectoryBuffer(h.spec, h.teachers, h.epochs, std::move(data), std::move(digest));
}

std::vector<ParamVector<float>> load_teacher(const std::filesystem::path& path, std::size_t teacher) {
  if (!std::filesystem::exists(path)) throw IoError("buffer file not found: '" + path.string() + "'");
  // magic(4) + version(2) + arch length(4)
  io::ByteReader prefix(io::read_file_range(path, 0, 10), path.string());
  prefix.seek(6);
  const std::size_t header_size = 10 + prefix.get<std::uint32_t>() + 16;
  io::ByteReader r(io::read_file_range(path, 0, header_size), path.string());
  const BufferHeader h = read_header(r);
  if (teacher >= h.teachers) {
    throw DomainError("teacher " + std::to_string(teacher) + " not in buffer of " + std::to_string(h.teachers));
  }
  const std::size_t block = (h.epochs + 1) * h.params;
  const std::size_t offset = h.payload_offset + teacher * block * sizeof(float);
  io::ByteReader body(io::read_file_range(path, offset, block * sizeof(float)),
                      path.string() + " (teacher " + std::to_string(teacher) + " at byte " + std::to_string(offset) + ")");
  const ParamLayout layout = param_layout(h.spec);
  std::vector<ParamVector<float>> out;
  for (std::size_t e = 0; e <= h.epochs; ++e) {
    std::vector<float> values(h.params);
    body.get_array(values.data(), values.size());
    out.emplace_back(layout, std::move(values));
  }
  return out;
}

void validate_segment(const TrajectoryBuffer& buffer, std::size_t max_start, std::size_t k) {
  if (max_start < 1) throw ConfigError("max_start_epoch must be >= 1");
  if (max_start + k > buffer.epochs()) {
    throw ConfigError("max_start_epoch (" + std::to_string(max_start) + ") + K (" + std::to_string(k) +
                      ") exceeds teacher epochs (" + std::to_string(buffer.epochs()) + ")");
  }
}

StartSample sample_start(const TrajectoryBuffer& buffer, std::size_t max_start, std::size_t k, Rng& rng) {
  validate_segment(buffer, max_start, k);
  std::uniform_int_distribution<std::size_t> teacher(0, buffer.teachers() - 1), epoch(0, max_start - 1);
  StartSample s;
  s.teacher = teacher(rng);
  s.epoch = epoch(rng);
  s.start = buffer.snapshot(s.teacher, s.epoch);
  s.target = buffer.snapshot(s.teacher, s.epoch + k);
  return s;
}

}  // namespace ddprune
