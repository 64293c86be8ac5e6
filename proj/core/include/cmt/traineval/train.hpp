#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmt/data/cohort.hpp"
#include "cmt/model/model.hpp"
#include "cmt/traineval/metrics.hpp"

namespace cmt {

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr = 1e-5;
  std::size_t max_epochs = 50;
  /// Epochs without a validation improvement before stopping.
  std::size_t patience = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// One model input with its task targets.
struct Example {
  StayInput input;
  TaskTargets targets;
};

/// A cohort after scaling, type filtering and last-note masking, split into
/// task examples.
struct TaskDataset {
  Task task = Task::kDecompensation;
  ScalerStats scaler;
  NoteTypeSet allowed_types;
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<Example> test;

  const std::vector<Example>& split(Split s) const;
};

/// Scaled copies of every cohort stay plus the training-split scaler.
struct ScaledCohort {
  ScalerStats scaler;
  std::vector<StayRecord> stays;
  std::vector<Split> splits;
};

ScaledCohort scale_cohort(const Cohort& cohort);

/// Filters to `allowed`, masks the last surviving note and builds targets.
/// IHM stays shorter than 48 h are left out of every split.
TaskDataset make_dataset(const ScaledCohort& scaled, Task task, const NoteTypeSet& allowed);

Example make_example(const StayRecord& scaled_stay, Task task, const NoteTypeSet& allowed);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double train_loss = 0.0;
  std::optional<double> val_metric;
  bool improved = false;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainResult {
  ModelParams params;  // best on validation
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::uint64_t steps = 0;
};

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Called after every epoch with the current (not necessarily best) parameters.
using EpochCallback = std::function<void(const EpochRecord&, const ModelParams&)>;

/// Mini-batches of stays, each stay's loss the mean BCE over its labels and
/// the batch loss the mean over stays. Returns the parameters of the best
/// validation epoch (AUPRC, or macro AUC for phenotyping). A non-finite loss
/// throws TrainingDiverged.
TrainResult train(const TaskDataset& data, const CrossModalConfig& model_cfg, const TrainConfig& train_cfg,
                  const EpochCallback& on_epoch = {});

/// Plain optimisation on a fixed list of examples without validation or early
/// stopping; returns the mean loss of each step.
std::vector<double> fit_steps(ModelParams& params, std::span<const Example> examples, const TrainConfig& cfg,
                              std::size_t steps);

/// Mean training loss of one stay, dropout off.
double stay_loss(const ModelParams& params, const Example& ex);

struct EvalResult {
  MetricReport report;
  /// Per example: pooled probabilities, flattened.
  std::vector<std::vector<double>> probabilities;
};

/// Worker count from CMT_THREADS (default: hardware concurrency, at least 1).
std::size_t default_threads();

/// Decompensation pools every (stay, hour) into one stream; IHM uses one score
/// per stay; phenotyping reports macro/micro AUC and pooled AUROC/AUPRC.
EvalResult evaluate(const ModelParams& params, std::span<const Example> examples, Task task,
                    std::size_t threads = 1);

/// Selection metric used for early stopping.
std::optional<double> selection_metric(const MetricReport& r, Task task);

}  // namespace cmt
