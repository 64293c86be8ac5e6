#pragma once

#include <iosfwd>

#include "cmt/app/run_config.hpp"
#include "cmt/interpret/interpret.hpp"
#include "cmt/model/grad_battery.hpp"

namespace cmt::app {

/// Writes the synthetic cohort to cfg.out.
PrevalenceReport cmd_synth(const RunConfig& cfg, std::ostream& log);

/// Trains one model with seed cfg.seeds.front(). Writes model.cmt (+ .json
/// metadata with scaler and history) and history.json under cfg.out.
TrainResult cmd_train(const RunConfig& cfg, std::ostream& log);

/// Evaluates cfg.checkpoint on cfg.split and writes metrics.json. A
/// checkpoint that does not fit the cohort's dimensions is a ConfigError.
MetricReport cmd_eval(const RunConfig& cfg, std::ostream& log);

/// Runs the note-type ablation over cfg.seeds; writes ablation.csv and
/// ablation.json.
AblationTable cmd_ablate(const RunConfig& cfg, std::ostream& log);

struct ExplainResult {
  CrossAttentionExport cross;
  DivergenceReport divergence;
  std::vector<WordImportance> rollouts;
};

/// Cross-attention heatmap and divergence report for cfg.stay, plus
/// attention rollout and word importance for each cfg.rollout input.
ExplainResult cmd_explain(const RunConfig& cfg, std::ostream& log);

GradBatteryReport cmd_gradcheck(std::ostream& log);

}  // namespace cmt::app
