#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmt/model/model.hpp"

namespace cmt {

/// Attention stack of a text encoder for one note. Layers are n x n,
/// row-stochastic, heads already averaged.
struct RolloutInput {
  std::vector<Tensor<double>> layers;
  std::vector<std::string> tokens;
  /// Word index per token; -1 for tokens outside any word ([CLS], [SEP]).
  std::vector<int> word_groups;
  /// Token counts of consecutive chunks; empty for a single chunk.
  std::vector<std::size_t> chunk_tokens;

  std::size_t size() const { return layers.empty() ? 0 : layers.front().rows(); }
  /// Throws std::invalid_argument on non-square, mismatched or non-stochastic
  /// (row sums off by more than `tolerance`, or negative entries) layers.
  void validate(double tolerance = 1e-4) const;
};

/// Reads tensors "layer_0".."layer_<L-1>" from a tensor container and the
/// sidecar `path` + ".json" ({"tokens", "word_groups", "chunk_tokens"}).
/// Layers of shape heads x n x n are averaged over heads.
RolloutInput load_rollout_input(const std::filesystem::path& path);
void save_rollout_input(const std::filesystem::path& path, const RolloutInput& input);

/// Per layer A' = 0.5 A + 0.5 I, rows renormalised; R = A'_L ... A'_1.
Tensor<double> attention_rollout(const RolloutInput& input);

/// Continues a rollout: `prefix` (an already rolled-out product, used as is)
/// is multiplied on the left by each residual-augmented layer in turn.
Tensor<double> extend_rollout(const Tensor<double>& prefix, std::span<const Tensor<double>> layers);

struct WordImportance {
  std::vector<double> token_scores;  // R[cls, .]
  std::vector<double> word_scores;
  std::vector<double> chunk_scores;  // token-score sum over token count
};

/// Throws on an out-of-range cls_index, a word index with no tokens, or chunk
/// counts that do not cover every token.
WordImportance word_importance(const Tensor<double>& rollout, std::size_t cls_index, std::span<const int> word_groups,
                               std::span<const std::size_t> chunk_tokens);

struct CrossAttentionExport {
  std::string stay_id;
  /// EHR hours x all notes of the stay; hidden notes give zero columns.
  Tensor<float> matrix;
  std::vector<NoteType> note_types;
  std::vector<double> note_hours;
  std::vector<bool> note_visible;
};

/// Cross-attention of a cross-modal model over a preprocessed stay.
CrossAttentionExport cross_attention_map(const StayRecord& prepared, const ModelParams& params);

/// Writes `<out>.cmt` (tensor "cross_attention"), `<out>_heatmap.csv`
/// (hour,note,weight) and `<out>_notes.csv` (note,type,charttime_h,visible).
CrossAttentionExport export_cross_attention(const StayRecord& prepared, const ModelParams& params,
                                            const std::filesystem::path& out);

struct DivergenceHour {
  std::size_t hour = 0;
  double delta = 0.0;  // p_cross - p_ehr
  /// Index into the stay's notes of the most-attended visible note.
  std::optional<std::size_t> note;
  double max_attention = 0.0;
  double entropy = 0.0;  // of the attention row, nats
};

struct DivergenceReport {
  std::string stay_id;
  double threshold = 0.1;
  std::vector<double> p_ehr;
  std::vector<double> p_cross;
  std::vector<DivergenceHour> hours;  // ascending

  std::optional<std::size_t> first_hour() const {
    return hours.empty() ? std::nullopt : std::optional(hours.front().hour);
  }
};

void to_json(nlohmann::json& j, const DivergenceHour& h);
void to_json(nlohmann::json& j, const DivergenceReport& r);

inline constexpr double kDefaultDivergenceThreshold = 0.1;

/// Per-hour probabilities of both models (first output column, dropout off);
/// hours where they differ by more than `threshold` are attributed to the
/// argmax of the cross-attention row.
DivergenceReport divergence_report(const StayInput& input, const ModelParams& ehr_only, const ModelParams& cross,
                                   double threshold = kDefaultDivergenceThreshold);

}  // namespace cmt
