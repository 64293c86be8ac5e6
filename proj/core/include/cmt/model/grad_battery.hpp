#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cmt {

struct GradBatteryEntry {
  std::string name;
  std::size_t instances = 0;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  /// Input index, coordinate and gradient pair of the largest error.
  std::string worst;
  bool passed() const { return max_rel_error <= tolerance; }
};

struct GradBatteryReport {
  std::vector<GradBatteryEntry> entries;
  double seconds = 0.0;
  bool passed() const;
};

/// Central-difference checks (64-bit, h = 1e-5) of every tape op, the
/// transformer block and the full 1-layer/1-head model on a 4-hour, 3-note
/// toy stay, each over `instances` random draws.
GradBatteryReport run_grad_battery(std::size_t instances = 100, std::uint64_t seed = 0);

}  // namespace cmt
