#pragma once

#include <string_view>

#include "cmt/data/stay.hpp"

namespace cmt {

enum class Task { kDecompensation, kInHospitalMortality, kPhenotyping };

std::string_view to_string(Task t);
Task parse_task(std::string_view name);
std::size_t task_outputs(Task t);

struct TaskTargets {
  Tensor<float> targets;
  Mask mask;
};

/// Decompensation: T x 1, hour t positive iff death falls in (t, t + 24].
/// In-hospital mortality: 1 x 1, death during the stay, masked when the stay
/// is shorter than 48 hours. Phenotyping: 1 x 25 at the end of the stay.
TaskTargets make_task_targets(const StayRecord& stay, Task task);

}  // namespace cmt
