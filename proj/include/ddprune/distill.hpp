#pragma once

// Outer loop of trajectory matching with difficult-to-match parameter
// pruning: sample a teacher segment, unroll the student on the distilled set,
// mask, score the normalized matching loss and update pixels and alpha.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ddprune/augment.hpp"
#include "ddprune/data.hpp"
#include "ddprune/engine.hpp"
#include "ddprune/pruning.hpp"
#include "ddprune/teacher.hpp"

namespace ddprune {

struct DistillConfig {
  std::size_t steps = 1000;         // T
  std::size_t inner_steps = 10;     // J
  std::size_t expert_epochs = 2;    // K
  std::size_t max_start_epoch = 5;  // I+
  double epsilon = kDefaultEpsilon;
  double prune_floor = kDefaultPruneFloor;
  bool prune = true;
  double alpha0 = 0.01;
  double lr_pixels = 0.1;
  double lr_alpha = 1e-4;
  double momentum = 0.5;
  std::size_t batch_size = 256;
  std::size_t ipc = 1;
  std::uint64_t seed = 0;
  AugmentConfig augment;

  // Throws ConfigError (or StructuralError for an incompatible buffer or
  // dataset) and returns non-fatal warnings.
  std::vector<std::string> validate(const ArchSpec& spec, const TrajectoryBuffer& buffer,
                                    const LabeledDataset* source = nullptr) const;
  // Canonical "key=value" listing of every field.
  std::string describe() const;
};

inline constexpr double kMatchDelta = 1e-12;
inline constexpr double kMinAlpha = 1e-7;

// Minibatch rows and augmentation of one student update.
struct InnerDraw {
  std::vector<std::size_t> indices;
  AugmentParams augment;
};

// All randomness of one distillation step, drawn before any computation.
struct StepPlan {
  std::size_t teacher = 0;
  std::size_t epoch = 0;
  ParamVector<float> start;
  ParamVector<float> target;
  std::vector<InnerDraw> draws;
};

// Full set when it fits in one batch, else a uniform subsample without replacement.
std::vector<InnerDraw> sample_draws(std::size_t set_size, std::size_t inner_steps, std::size_t batch_size,
                                    const AugmentConfig& augment, const ImageShape& shape, Rng& rng);

StepPlan plan_step(const TrajectoryBuffer& buffer, std::size_t set_size, const ImageShape& shape,
                   const DistillConfig& cfg, Rng& rng);

// Cross-entropy of the augmented minibatch as a function of the parameters
// and the whole distilled image block.
template <class T>
InnerLoss<T> inner_loss(const ArchSpec& spec, const DistilledDataset<T>& distilled, const InnerDraw& draw);

template <class T>
struct Unroll {
  std::vector<ParamVector<T>> states;  // theta_0 .. theta_J
  std::vector<InnerLoss<T>> losses;    // one per update

  const ParamVector<T>& final() const { return states.back(); }
};

// theta_{j+1} = theta_j - alpha grad l(A(b_j); theta_j) with the set's own alpha.
template <class T>
Unroll<T> student_unroll(const ArchSpec& spec, const ParamVector<T>& start, const DistilledDataset<T>& distilled,
                         std::span<const InnerDraw> draws);

template <class T>
Unroll<T> student_unroll(const ArchSpec& spec, const ParamVector<T>& start, const DistilledDataset<T>& distilled,
                         std::size_t inner_steps, std::size_t batch_size, const AugmentConfig& augment, Rng& rng);

// ||student - target||^2 / max(||start - target||^2, delta) on pruned vectors.
template <class T>
double matching_loss(std::span<const T> student, std::span<const T> target, std::span<const T> start);

template <class T>
struct MatchEval {
  double loss = 0.0;
  double denominator = 0.0;
  PruneMask mask;
  Unroll<T> unroll;
  ParamVector<T> start;
  ParamVector<T> target;
};

// Unroll and score a plan. The mask is recomputed unless `fixed_mask` is given.
template <class T>
MatchEval<T> evaluate_plan(const ArchSpec& spec, const DistilledDataset<T>& distilled, const StepPlan& plan,
                           const DistillConfig& cfg, const PruneMask* fixed_mask = nullptr);

// dL/d(pixels, alpha) of an evaluated plan, mask held fixed.
template <class T>
MetaGradients<T> meta_gradients(const MatchEval<T>& eval, const DistilledDataset<T>& distilled);

struct StepRecord {
  std::size_t t = 0;
  double loss = 0.0;
  std::size_t u = 0;
  std::size_t p = 0;
  bool floor_triggered = false;
  double alpha = 0.0;  // after the update

  bool operator==(const StepRecord&) const = default;
};

template <class T>
struct DistillState {
  DistilledDataset<T> distilled;
  Tensor<T> velocity_images;
  T velocity_alpha = T{0};
  std::size_t t = 0;
  std::vector<StepRecord> history;

  explicit DistillState(DistilledDataset<T> init);
};

// Executes one planned step and updates the state in place.
template <class T>
const StepRecord& apply_plan(DistillState<T>& state, const ArchSpec& spec, const StepPlan& plan,
                             const DistillConfig& cfg);

// Step t + 1 with randomness from the "distill.step.<t+1>" stream.
template <class T>
const StepRecord& distill_step(DistillState<T>& state, const ArchSpec& spec, const TrajectoryBuffer& buffer,
                               const DistillConfig& cfg);

template <class T>
struct DistillResult {
  DistilledDataset<T> distilled;
  std::vector<StepRecord> history;
  std::vector<std::string> warnings;
};

using StepCallback = std::function<void(const StepRecord&)>;

template <class T>
DistillResult<T> run(const LabeledDataset& source, const TrajectoryBuffer& buffer, const ArchSpec& spec,
                     const DistillConfig& cfg, const StepCallback& on_step = {});

std::string report_csv(std::span<const StepRecord> history);
void write_report_csv(std::span<const StepRecord> history, const std::filesystem::path& path);

// Mean loss over steps (t - window, t], 1-based t.
double smoothed_loss(std::span<const StepRecord> history, std::size_t t, std::size_t window = 50);

}  // namespace ddprune
