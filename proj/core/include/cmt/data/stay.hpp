#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmt/autodiff/tensor.hpp"
#include "cmt/data/note_type.hpp"

namespace cmt {

inline constexpr std::size_t kEhrFeatures = 42;
inline constexpr std::size_t kNoteEmbeddingDim = 768;
inline constexpr std::size_t kNoteFeatures = kNoteEmbeddingDim + 1;  // + entry time
inline constexpr std::size_t kPhenotypes = 25;
inline constexpr double kIhmHours = 48.0;
inline constexpr double kDecompHorizonHours = 24.0;

struct NoteRecord {
  double charttime_h = 0.0;
  /// Calendar day relative to admission for date-only notes read from disk.
  std::optional<int> chart_day;
  NoteType type = NoteType::kNursing;
  std::vector<float> embedding;
  std::vector<std::vector<float>> chunk_embeddings;
  std::vector<int> chunk_token_counts;
  bool visible = true;
  /// Index of the source note; chunk-level records of one note share it.
  std::size_t group = 0;
  /// Set when a date-only note was dated before admission and clamped to 0.
  bool charttime_clamped = false;
  /// Standard-scaled entry time, filled by apply_scaler.
  float scaled_time = 0.0f;
};

struct Outcome {
  std::optional<double> death_hour;
  std::array<std::uint8_t, kPhenotypes> pheno{};
};

struct StayRecord {
  std::string stay_id;
  /// Hourly grid, T x 42. NaN marks a missing measurement before imputation.
  Tensor<float> ehr;
  /// Sorted by charttime_h (stable).
  std::vector<NoteRecord> notes;
  Outcome outcome;
  /// Hour of day at ICU admission, used to place date-only notes.
  double admit_hour = 0.0;
  bool scaled = false;
  bool last_note_masked = false;

  std::size_t hours() const { return ehr.rows(); }
  std::size_t visible_notes() const {
    std::size_t n = 0;
    for (const auto& note : notes) n += note.visible ? 1 : 0;
    return n;
  }
};

}  // namespace cmt
