#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmt/autodiff/graph.hpp"
#include "cmt/data/preprocess.hpp"
#include "cmt/data/targets.hpp"

namespace cmt {

enum class Mode { kEhrOnly, kTextOnly, kCrossModal };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view name);

struct CrossModalConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 1;
  std::size_t n_heads = 1;
  double dropout = 0.2;
  Mode mode = Mode::kCrossModal;
  std::size_t d_ehr = kEhrFeatures;
  std::size_t d_cn = kNoteFeatures;
  /// Hidden width of the block feed-forward layer.
  std::size_t d_ff = 128;
  Task task = Task::kDecompensation;

  std::size_t n_outputs() const { return task_outputs(task); }
  bool uses_ehr() const { return mode != Mode::kTextOnly; }
  bool uses_notes() const { return mode != Mode::kEhrOnly; }
  void validate() const;
};

void to_json(nlohmann::json& j, const CrossModalConfig& c);
void from_json(const nlohmann::json& j, CrossModalConfig& c);

struct ModelParams {
  CrossModalConfig config;
  TensorMap<float> tensors;

  std::size_t parameter_count() const;
};

/// Names and shapes of every tensor the configured model reads.
std::map<std::string, std::vector<std::size_t>> parameter_shapes(const CrossModalConfig& cfg);

/// Weights uniform in +-1/sqrt(fan_in), biases 0, layer-norm gains 1.
ModelParams init_params(const CrossModalConfig& cfg, std::uint64_t seed);

/// A preprocessed stay reduced to what the model consumes.
struct StayInput {
  std::string stay_id;
  Tensor<float> ehr;                 // T x 42, scaled
  Tensor<float> notes;               // n_visible x 769 (may have 0 rows)
  std::vector<double> note_hours;
  std::vector<std::size_t> note_source;  // index into StayRecord::notes

  std::size_t hours() const { return ehr.rows(); }
};

StayInput make_stay_input(const StayRecord& stay);

/// mask[t, j] = visible_j && note_times[j] <= t, for t in [0, ehr_hours).
Mask build_cross_mask(std::size_t ehr_hours, std::span<const double> note_times, const std::vector<bool>& visible);

template <typename T>
struct AttentionRecord {
  std::string stay_id;
  std::optional<Tensor<T>> self_attn;   // T x T, last layer, heads averaged
  std::optional<Tensor<T>> cross_attn;  // T x n_visible
};

template <typename T>
struct ForwardOutput {
  Var logits;  // T x n_outputs
  AttentionRecord<T> attention;
};

using ParamVars = std::map<std::string, Var>;

/// Registers every tensor in `tensors` as a trainable leaf.
template <typename T>
ParamVars bind_parameters(Graph<T>& g, const TensorMap<T>& tensors);

/// Per-hour logits. Dropout is applied only when `dropout_rng` is non-null.
template <typename T>
ForwardOutput<T> forward(Graph<T>& g, const StayInput& input, const ParamVars& params, const CrossModalConfig& cfg,
                         Rng* dropout_rng);

/// Inference-only convenience: dropout off, float tape.
struct Prediction {
  Tensor<float> logits;
  AttentionRecord<float> attention;
};
Prediction predict(const ModelParams& params, const StayInput& input);

/// Decompensation: all rows. IHM: row 47 (absent for stays under 48 h).
/// Phenotyping: the final row.
template <typename T>
std::optional<Var> pool_for_task(Graph<T>& g, Var logits, Task task);
std::optional<Tensor<float>> pool_for_task(const Tensor<float>& logits, Task task);

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

/// Writes the parameter container at `path` and metadata at `path` + ".json".
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const CheckpointMeta& meta);
ModelParams load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace cmt
