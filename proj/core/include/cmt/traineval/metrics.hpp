#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmt/autodiff/tensor.hpp"

namespace cmt {

/// P(score_pos > score_neg) + 0.5 P(tie) via midranks. Absent unless both
/// classes occur.
std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Average precision: over positives in descending score order, the mean
/// precision at their rank; tied scores form one group scored at its end.
/// Absent without positives.
std::optional<double> auprc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct MacroMicro {
  std::optional<double> macro;
  std::optional<double> micro;
  /// Columns left out of the macro average for holding a single class.
  std::size_t excluded_columns = 0;
};

/// scores and labels are n x k (one column per condition).
MacroMicro macro_micro_auc(const Tensor<double>& scores, const Tensor<double>& labels);

struct ConfidenceInterval {
  double mean = 0.0;
  std::optional<double> halfwidth;  // 95%, Student t with n - 1 dof
};

ConfidenceInterval confidence_interval(std::span<const double> values);

struct MetricReport {
  std::optional<double> auprc;
  std::optional<double> auroc;
  std::optional<double> macro_auc;
  std::optional<double> micro_auc;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

}  // namespace cmt
