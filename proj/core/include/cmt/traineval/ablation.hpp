#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmt/traineval/train.hpp"

namespace cmt {

enum class AblationDirection { kIncreasing, kDecreasing };

std::string_view to_string(AblationDirection d);
AblationDirection parse_direction(std::string_view name);

struct AblationArm {
  std::string label;
  /// Cumulative set of note types the arm's model sees. An empty set runs the
  /// EHR-only model.
  NoteTypeSet types;
};

struct AblationPlan {
  AblationDirection direction = AblationDirection::kIncreasing;
  std::vector<AblationArm> arms;

  /// Throws unless every arm's set strictly contains the previous one.
  void validate() const;
};

/// Cumulative arms over the types present in `train_counts`, ordered by count
/// (ties by category order). With `ehr_baseline` the plan starts with an
/// EHR-only arm.
AblationPlan make_ablation_plan(const std::map<NoteType, std::size_t>& train_counts, AblationDirection direction,
                                bool ehr_baseline = true);

struct RunSummary {
  std::string arm;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricReport> reports;  // successful seeds only
  std::map<std::string, ConfidenceInterval> metrics;  // "auprc", "auroc", "macro", "micro"
};

struct AblationRow {
  std::size_t arm = 0;
  std::string label;
  std::uint64_t seed = 0;
  std::optional<MetricReport> report;
  std::string error;  // set when the run failed

  bool failed() const { return !report.has_value(); }
};

struct AblationTable {
  Task task = Task::kDecompensation;
  AblationPlan plan;
  std::vector<AblationRow> rows;  // arm-major, then seed order
  std::vector<RunSummary> summaries;
};

using AblationProgress = std::function<void(const AblationRow&)>;

/// One train + test evaluation per (arm, seed); jobs run on up to `threads`
/// workers and rows are merged in plan order. A failing run yields a failed
/// row and the remaining jobs continue.
AblationTable run_ablation(const ScaledCohort& cohort, Task task, const AblationPlan& plan,
                           const std::vector<std::uint64_t>& seeds, const CrossModalConfig& model_cfg,
                           const TrainConfig& train_cfg, std::size_t threads = 1,
                           const AblationProgress& progress = {});

/// Mean and 95% interval of each metric over the reports.
RunSummary summarize(std::string arm, const std::vector<std::uint64_t>& seeds,
                     const std::vector<MetricReport>& reports);

void to_json(nlohmann::json& j, const RunSummary& s);
void to_json(nlohmann::json& j, const AblationTable& t);

/// Columns arm, seed, auprc, auroc, macro, micro; failed rows carry "failed"
/// in the metric columns and absent metrics are empty.
std::string ablation_csv(const AblationTable& t);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace cmt
