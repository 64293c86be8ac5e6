#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmt/model/model.hpp"
#include "cmt/synthgen/synthgen.hpp"
#include "cmt/traineval/ablation.hpp"
#include "cmt/traineval/train.hpp"

namespace cmt::app {

/// Bad input from the user: malformed config, unknown names, missing paths.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class Command { kSynth, kTrain, kEval, kAblate, kExplain, kGradcheck };

std::string_view to_string(Command c);

struct RunConfig {
  Task task = Task::kDecompensation;
  Mode mode = Mode::kCrossModal;
  CrossModalConfig model;
  TrainConfig train;
  SynthConfig synth;
  std::filesystem::path cohort = "cohort";
  std::filesystem::path out = "out";
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  /// eval / explain: the cross-modal checkpoint. explain also needs the
  /// EHR-only one.
  std::filesystem::path checkpoint;
  std::filesystem::path ehr_checkpoint;
  Split split = Split::kTest;
  AblationDirection direction = AblationDirection::kIncreasing;
  std::string stay;
  double divergence_threshold = 0.1;
  /// explain: rollout-input containers.
  std::vector<std::filesystem::path> rollout;
  std::size_t cls_index = 0;
  /// 0 reads CMT_THREADS.
  std::size_t threads = 0;

  /// The model config with the run-level task and mode applied.
  CrossModalConfig model_config() const;
  std::size_t worker_count() const;
  /// Checks what `cmd` needs; throws ConfigError.
  void validate(Command cmd) const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Unknown keys are rejected; missing keys keep their defaults.
void from_json(const nlohmann::json& j, RunConfig& c);

/// Applies "a.b.c=value" to `j`. The value is parsed as JSON and taken as a
/// string when that fails.
void apply_override(nlohmann::json& j, std::string_view assignment);

/// Defaults, then the config file, then each override in order.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

}  // namespace cmt::app
