#include "ddprune/pruning.hpp"

#include <algorithm>
#include <string>

#include "ddprune/errors.hpp"

namespace ddprune {

double similarity(double a, double b) {
  if (a == 0.0 && b == 0.0) return 1.0;
  if (a == 0.0 || b == 0.0) return 0.0;
  return std::min(a / b, b / a);
}

PruneMask all_keep(std::size_t p) {
  PruneMask m;
  m.keep.assign(p, 1);
  m.u = p;
  return m;
}

template <class T>
PruneMask compute_mask(std::span<const T> student, std::span<const T> target, double epsilon, double floor) {
  if (student.size() != target.size()) {
    throw StructuralError("compute_mask: student has " + std::to_string(student.size()) + " parameters, target " +
                          std::to_string(target.size()));
  }
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw DomainError("prune threshold must lie in [0, 1)");
  if (!(floor >= 0.0 && floor <= 1.0)) throw DomainError("prune floor must lie in [0, 1]");
  const std::size_t p = student.size();
  PruneMask m;
  m.keep.resize(p);
  for (std::size_t x = 0; x < p; ++x) {
    const bool keep = similarity(static_cast<double>(student[x]), static_cast<double>(target[x])) >= epsilon;
    m.keep[x] = keep;
    if (keep) {
      ++m.u;
    } else {
      m.pruned_indices.push_back(x);
    }
  }
  if (static_cast<double>(m.u) < floor * static_cast<double>(p)) {
    m = all_keep(p);
    m.floor_triggered = true;
  }
  return m;
}

template <class T>
std::vector<T> apply_mask(const PruneMask& mask, std::span<const T> v) {
  if (v.size() != mask.p()) {
    throw StructuralError("apply_mask: mask covers " + std::to_string(mask.p()) + " slots, vector has " +
                          std::to_string(v.size()));
  }
  std::vector<T> out;
  out.reserve(mask.u);
  for (std::size_t x = 0; x < v.size(); ++x)
    if (mask.keep[x]) out.push_back(v[x]);
  return out;
}

template PruneMask compute_mask<float>(std::span<const float>, std::span<const float>, double, double);
template PruneMask compute_mask<double>(std::span<const double>, std::span<const double>, double, double);
template std::vector<float> apply_mask<float>(const PruneMask&, std::span<const float>);
template std::vector<double> apply_mask<double>(const PruneMask&, std::span<const double>);

}  // namespace ddprune
