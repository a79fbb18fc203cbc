#pragma once

// Ratio-similarity test for difficult-to-match parameters and the keep-mask
// applied to student, target and start vectors alike.

#include <cstdint>
#include <span>
#include <vector>

namespace ddprune {

inline constexpr double kDefaultEpsilon = 0.1;
inline constexpr double kDefaultPruneFloor = 0.5;

// min(a/b, b/a) with signed ratios; 1 when both are zero, 0 when exactly one is.
double similarity(double a, double b);

struct PruneMask {
  std::vector<std::uint8_t> keep;
  std::size_t u = 0;
  std::vector<std::size_t> pruned_indices;  // ascending
  bool floor_triggered = false;

  std::size_t p() const { return keep.size(); }
  bool operator==(const PruneMask&) const = default;
};

PruneMask all_keep(std::size_t p);

// keep[x] = similarity(student[x], target[x]) >= epsilon. A mask keeping less
// than `floor` of the slots is replaced by all_keep with floor_triggered set.
template <class T>
PruneMask compute_mask(std::span<const T> student, std::span<const T> target, double epsilon,
                       double floor = kDefaultPruneFloor);

// Order-preserving gather of the kept slots.
template <class T>
std::vector<T> apply_mask(const PruneMask& mask, std::span<const T> v);

}  // namespace ddprune
