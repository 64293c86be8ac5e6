#include "cmt/data/targets.hpp"

#include <stdexcept>
#include <string>

namespace cmt {

std::string_view to_string(Task t) {
  switch (t) {
    case Task::kDecompensation: return "decompensation";
    case Task::kInHospitalMortality: return "ihm";
    case Task::kPhenotyping: return "phenotyping";
  }
  return "decompensation";
}

Task parse_task(std::string_view name) {
  if (name == "decompensation" || name == "decomp") return Task::kDecompensation;
  if (name == "ihm" || name == "mortality") return Task::kInHospitalMortality;
  if (name == "phenotyping" || name == "pheno") return Task::kPhenotyping;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

std::size_t task_outputs(Task t) { return t == Task::kPhenotyping ? kPhenotypes : 1; }

TaskTargets make_task_targets(const StayRecord& stay, Task task) {
  const std::size_t hours = stay.hours();
  const auto& death = stay.outcome.death_hour;
  switch (task) {
    case Task::kDecompensation: {
      TaskTargets out{Tensor<float>::matrix(hours, 1), Mask(hours, 1, true)};
      if (death) {
        for (std::size_t t = 0; t < hours; ++t) {
          const double h = static_cast<double>(t);
          if (*death > h && *death <= h + kDecompHorizonHours) out.targets(t, 0) = 1.0f;
        }
      }
      return out;
    }
    case Task::kInHospitalMortality: {
      TaskTargets out{Tensor<float>::matrix(1, 1), Mask(1, 1, static_cast<double>(hours) >= kIhmHours)};
      out.targets(0, 0) = death ? 1.0f : 0.0f;
      return out;
    }
    case Task::kPhenotyping: {
      TaskTargets out{Tensor<float>::matrix(1, kPhenotypes), Mask(1, kPhenotypes, true)};
      for (std::size_t k = 0; k < kPhenotypes; ++k) out.targets(0, k) = stay.outcome.pheno[k];
      return out;
    }
  }
  throw std::invalid_argument("make_task_targets: unknown task");
}

}  // namespace cmt
