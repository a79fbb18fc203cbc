#include "ddprune/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "ddprune/io.hpp"
#include "ddprune/kernels.hpp"

namespace ddprune {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class T>
double squared_distance(std::span<const T> a, std::span<const T> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

template <class T>
std::span<const T> view(const ParamVector<T>& p) {
  return p.values();
}

}  // namespace

std::vector<std::string> DistillConfig::validate(const ArchSpec& spec, const TrajectoryBuffer& buffer,
                                                 const LabeledDataset* source) const {
  if (inner_steps < 1) throw ConfigError("inner_steps (J) must be >= 1");
  if (expert_epochs < 1) throw ConfigError("expert_epochs (K) must be >= 1");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in [0, 1)");
  if (!(prune_floor >= 0.0 && prune_floor <= 1.0)) throw ConfigError("prune_floor must lie in [0, 1]");
  if (!(alpha0 > 0.0)) throw ConfigError("alpha0 must be positive");
  if (!(lr_pixels >= 0.0) || !(lr_alpha >= 0.0)) throw ConfigError("meta learning rates must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("meta momentum must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (ipc < 1) throw ConfigError("ipc must be >= 1");
  if (!(buffer.spec() == spec)) {
    throw StructuralError("buffer architecture " + buffer.spec().canonical() + " does not match " + spec.canonical());
  }
  validate_segment(buffer, max_start_epoch, expert_epochs);
  augment.validate(spec.input);
  if (source) {
    if (!(source->shape() == spec.input)) {
      throw StructuralError("dataset shape " + source->shape().str() + " does not match " + spec.canonical());
    }
    if (source->classes != spec.classes) {
      throw StructuralError("dataset has " + std::to_string(source->classes) + " classes, " + spec.canonical() +
                            " expects " + std::to_string(spec.classes));
    }
  }
  std::vector<std::string> warnings;
  if (inner_steps >= expert_epochs) {
    warnings.push_back("J (" + std::to_string(inner_steps) + ") >= K (" + std::to_string(expert_epochs) +
                       "): student updates are expected to be far fewer than teacher epochs");
  }
  return warnings;
}

std::string DistillConfig::describe() const {
  std::ostringstream s;
  s << "steps=" << steps << " inner_steps=" << inner_steps << " expert_epochs=" << expert_epochs
    << " max_start_epoch=" << max_start_epoch << " epsilon=" << fmt(epsilon) << " prune_floor=" << fmt(prune_floor)
    << " prune=" << prune << " alpha0=" << fmt(alpha0) << " lr_pixels=" << fmt(lr_pixels)
    << " lr_alpha=" << fmt(lr_alpha) << " momentum=" << fmt(momentum) << " batch_size=" << batch_size
    << " ipc=" << ipc << " seed=" << seed << " augment.flip=" << augment.flip << " augment.shift=" << augment.shift
    << " augment.cutout=" << augment.cutout << " augment.shift_max=" << augment.shift_max
    << " augment.cutout_size=" << augment.cutout_size << " augment.stream=" << augment.stream;
  return s.str();
}

std::vector<InnerDraw> sample_draws(std::size_t set_size, std::size_t inner_steps, std::size_t batch_size,
                                    const AugmentConfig& augment, const ImageShape& shape, Rng& rng) {
  if (set_size == 0) throw DomainError("empty distilled set");
  std::vector<InnerDraw> draws(inner_steps);
  std::vector<std::size_t> pool(set_size);
  for (auto& d : draws) {
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    if (set_size > batch_size) {
      for (std::size_t k = 0; k < batch_size; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, set_size - 1);
        std::swap(pool[k], pool[pick(rng)]);
      }
      d.indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(batch_size));
    } else {
      d.indices = pool;
    }
    d.augment = sample_params(augment, shape, rng);
  }
  return draws;
}

StepPlan plan_step(const TrajectoryBuffer& buffer, std::size_t set_size, const ImageShape& shape,
                   const DistillConfig& cfg, Rng& rng) {
  auto s = sample_start(buffer, cfg.max_start_epoch, cfg.expert_epochs, rng);
  StepPlan plan{s.teacher, s.epoch, std::move(s.start), std::move(s.target), {}};
  Rng aug_rng = make_rng(rng(), cfg.augment.stream);
  std::vector<InnerDraw> draws = sample_draws(set_size, cfg.inner_steps, cfg.batch_size, AugmentConfig{}, shape, rng);
  for (auto& d : draws) d.augment = sample_params(cfg.augment, shape, aug_rng);
  plan.draws = std::move(draws);
  return plan;
}

template <class T>
InnerLoss<T> inner_loss(const ArchSpec& spec, const DistilledDataset<T>& distilled, const InnerDraw& draw) {
  const std::size_t n = distilled.size(), b = draw.indices.size(), d = distilled.shape().size();
  const ImageShape shape = distilled.shape();
  std::vector<Label> labels(b);
  bool identity = b == n;
  for (std::size_t k = 0; k < b; ++k) {
    if (draw.indices[k] >= n) throw DomainError("minibatch index out of range");
    labels[k] = distilled.labels[draw.indices[k]];
    identity = identity && draw.indices[k] == k;
  }
  ag::MapPtr<T> gather;
  if (!identity) {
    std::vector<typename ag::SparseMap<T>::Entry> entries;
    entries.reserve(b * d);
    for (std::size_t k = 0; k < b; ++k)
      for (std::size_t i = 0; i < d; ++i)
        entries.push_back({static_cast<std::uint32_t>(k * d + i), static_cast<std::uint32_t>(draw.indices[k] * d + i), T{1}});
    gather = std::make_shared<const ag::SparseMap<T>>(b * d, n * d, std::move(entries));
  }
  ag::MapPtr<T> augment;
  if (!draw.augment.is_identity()) augment = augment_map<T>(draw.augment, shape, b);
  const Shape batch_shape{b, shape.channels, shape.height, shape.width};
  return [spec, labels = std::move(labels), gather, augment, batch_shape](std::span<const ag::Var<T>> params,
                                                                          const ag::Var<T>& images) {
    ag::Var<T> x = gather ? ag::linear_map(gather, images, batch_shape) : images;
    if (augment) x = ag::linear_map(augment, x, batch_shape);
    return cross_entropy<T>(forward<T>(spec, params, x), labels);
  };
}

template <class T>
Unroll<T> student_unroll(const ArchSpec& spec, const ParamVector<T>& start, const DistilledDataset<T>& distilled,
                         std::span<const InnerDraw> draws) {
  if (start.size() != param_count(spec)) throw StructuralError(spec.name() + ": start parameters have wrong length");
  if (distilled.size() == 0) throw DomainError("empty distilled set");
  const auto& kt = kernels::active<T>();
  Unroll<T> out;
  out.states.reserve(draws.size() + 1);
  out.states.push_back(start);
  const auto images = ag::Var<T>::constant(distilled.images);
  for (std::size_t j = 0; j < draws.size(); ++j) {
    out.losses.push_back(inner_loss<T>(spec, distilled, draws[j]));
    const ParamVector<T>& theta = out.states.back();
    ParamVector<T> next = theta;
    try {
      const auto leaves = theta.leaves();
      const auto value = out.losses.back()(leaves, images);
      const auto g = gather_segments<T>(theta.layout(), ag::grad<T>(value, leaves, false));
      kt.axpy(-distilled.alpha, g.values().data(), next.values().data(), next.size());
      if (!next.all_finite()) throw NumericError("student parameters became non-finite");
    } catch (const NumericError& e) {
      throw NumericError("inner step " + std::to_string(j) + ": " + e.what());
    }
    out.states.push_back(std::move(next));
  }
  return out;
}

template <class T>
Unroll<T> student_unroll(const ArchSpec& spec, const ParamVector<T>& start, const DistilledDataset<T>& distilled,
                         std::size_t inner_steps, std::size_t batch_size, const AugmentConfig& augment, Rng& rng) {
  const auto draws = sample_draws(distilled.size(), inner_steps, batch_size, augment, distilled.shape(), rng);
  return student_unroll<T>(spec, start, distilled, draws);
}

template <class T>
double matching_loss(std::span<const T> student, std::span<const T> target, std::span<const T> start) {
  if (student.size() != target.size() || start.size() != target.size()) {
    throw StructuralError("matching_loss: vectors differ in length");
  }
  if (student.empty()) throw DomainError("matching_loss: mask keeps no parameters (u == 0)");
  return squared_distance(student, target) / std::max(squared_distance(start, target), kMatchDelta);
}

template <class T>
MatchEval<T> evaluate_plan(const ArchSpec& spec, const DistilledDataset<T>& distilled, const StepPlan& plan,
                           const DistillConfig& cfg, const PruneMask* fixed_mask) {
  MatchEval<T> e;
  e.start = plan.start.template cast<T>();
  e.target = plan.target.template cast<T>();
  e.unroll = student_unroll<T>(spec, e.start, distilled, plan.draws);
  const std::span<const T> student = view(e.unroll.final()), target = view(e.target), start = view(e.start);
  if (fixed_mask) {
    e.mask = *fixed_mask;
  } else if (cfg.prune) {
    e.mask = compute_mask<T>(student, target, cfg.epsilon, cfg.prune_floor);
  } else {
    e.mask = all_keep(student.size());
  }
  const auto s = apply_mask<T>(e.mask, student), tg = apply_mask<T>(e.mask, target), st = apply_mask<T>(e.mask, start);
  e.loss = matching_loss<T>(s, tg, st);
  e.denominator = std::max(squared_distance<T>(st, tg), kMatchDelta);
  return e;
}

template <class T>
MetaGradients<T> meta_gradients(const MatchEval<T>& eval, const DistilledDataset<T>& distilled) {
  const auto& student = eval.unroll.final();
  ParamVector<T> upstream(student.layout());
  const double scale = 2.0 / eval.denominator;
  for (std::size_t x = 0; x < upstream.size(); ++x) {
    if (eval.mask.keep[x]) {
      upstream[x] = static_cast<T>(scale * (static_cast<double>(student[x]) - static_cast<double>(eval.target[x])));
    }
  }
  return backprop_through_training<T>(eval.unroll.losses, eval.unroll.states, distilled.alpha, distilled.images,
                                      upstream);
}

template <class T>
DistillState<T>::DistillState(DistilledDataset<T> init)
    : distilled(std::move(init)), velocity_images(distilled.images.shape()) {}

template <class T>
const StepRecord& apply_plan(DistillState<T>& state, const ArchSpec& spec, const StepPlan& plan,
                             const DistillConfig& cfg) {
  const std::size_t t = state.t + 1;
  try {
    const auto eval = evaluate_plan<T>(spec, state.distilled, plan, cfg);
    if (!std::isfinite(eval.loss)) throw NumericError("matching loss is non-finite");
    const auto grads = meta_gradients<T>(eval, state.distilled);

    const auto& kt = kernels::active<T>();
    const T mu = static_cast<T>(cfg.momentum);
    auto& vel = state.velocity_images.values();
    kt.affine(vel.data(), mu, T{0}, vel.data(), vel.size());
    kt.add(vel.data(), grads.d_images.data(), vel.data(), vel.size());
    kt.axpy(static_cast<T>(-cfg.lr_pixels), vel.data(), state.distilled.images.data(), vel.size());
    state.velocity_alpha = mu * state.velocity_alpha + grads.d_alpha;
    state.distilled.alpha -= static_cast<T>(cfg.lr_alpha) * state.velocity_alpha;
    state.distilled.alpha = std::max(state.distilled.alpha, static_cast<T>(kMinAlpha));
    if (!state.distilled.images.all_finite()) throw NumericError("distilled images became non-finite");

    state.t = t;
    state.distilled.steps = t;
    state.history.push_back({t, eval.loss, eval.mask.u, eval.mask.p(), eval.mask.floor_triggered,
                             static_cast<double>(state.distilled.alpha)});
  } catch (const NumericError& e) {
    throw NumericError("distillation step " + std::to_string(t) + ": " + e.what());
  } catch (const DomainError& e) {
    throw DomainError("distillation step " + std::to_string(t) + ": " + e.what());
  }
  return state.history.back();
}

template <class T>
const StepRecord& distill_step(DistillState<T>& state, const ArchSpec& spec, const TrajectoryBuffer& buffer,
                               const DistillConfig& cfg) {
  Rng rng = make_rng(cfg.seed, "distill.step." + std::to_string(state.t + 1));
  const StepPlan plan = plan_step(buffer, state.distilled.size(), state.distilled.shape(), cfg, rng);
  return apply_plan<T>(state, spec, plan, cfg);
}

template <class T>
DistillResult<T> run(const LabeledDataset& source, const TrajectoryBuffer& buffer, const ArchSpec& spec,
                     const DistillConfig& cfg, const StepCallback& on_step) {
  auto warnings = cfg.validate(spec, buffer, &source);
  auto init = init_distilled<T>(source, cfg.ipc, static_cast<T>(cfg.alpha0), derive_seed(cfg.seed, "distill.init"));
  init.arch = spec.canonical();
  init.provenance = hex64(fnv1a64(cfg.describe() + " buffer=" + buffer.digest()));
  DistillState<T> state(std::move(init));
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const auto& rec = distill_step<T>(state, spec, buffer, cfg);
    if (on_step) on_step(rec);
  }
  return {std::move(state.distilled), std::move(state.history), std::move(warnings)};
}

std::string report_csv(std::span<const StepRecord> history) {
  std::string out = "t,L,u,p,floor_triggered,alpha\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%zu,%zu,%d,%.9g\n", r.t, r.loss, r.u, r.p, r.floor_triggered ? 1 : 0,
                  r.alpha);
    out += buf;
  }
  return out;
}

void write_report_csv(std::span<const StepRecord> history, const std::filesystem::path& path) {
  io::write_text_atomic(path, report_csv(history));
}

double smoothed_loss(std::span<const StepRecord> history, std::size_t t, std::size_t window) {
  if (t == 0 || t > history.size()) throw DomainError("smoothed_loss: step " + std::to_string(t) + " not recorded");
  const std::size_t first = t > window ? t - window : 0;
  double s = 0.0;
  for (std::size_t k = first; k < t; ++k) s += history[k].loss;
  return s / static_cast<double>(t - first);
}

#define DDPRUNE_INSTANTIATE(T)                                                                                    \
  template InnerLoss<T> inner_loss(const ArchSpec&, const DistilledDataset<T>&, const InnerDraw&);               \
  template Unroll<T> student_unroll(const ArchSpec&, const ParamVector<T>&, const DistilledDataset<T>&,           \
                                    std::span<const InnerDraw>);                                                  \
  template Unroll<T> student_unroll(const ArchSpec&, const ParamVector<T>&, const DistilledDataset<T>&,           \
                                    std::size_t, std::size_t, const AugmentConfig&, Rng&);                        \
  template double matching_loss(std::span<const T>, std::span<const T>, std::span<const T>);                     \
  template MatchEval<T> evaluate_plan(const ArchSpec&, const DistilledDataset<T>&, const StepPlan&,               \
                                      const DistillConfig&, const PruneMask*);                                    \
  template MetaGradients<T> meta_gradients(const MatchEval<T>&, const DistilledDataset<T>&);                      \
  template struct DistillState<T>;                                                                                \
  template const StepRecord& apply_plan(DistillState<T>&, const ArchSpec&, const StepPlan&, const DistillConfig&); \
  template const StepRecord& distill_step(DistillState<T>&, const ArchSpec&, const TrajectoryBuffer&,             \
                                          const DistillConfig&);                                                  \
  template DistillResult<T> run(const LabeledDataset&, const TrajectoryBuffer&, const ArchSpec&,                  \
                                const DistillConfig&, const StepCallback&);

DDPRUNE_INSTANTIATE(float)
DDPRUNE_INSTANTIATE(double)

}  // namespace ddprune
