#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmt/data/stay.hpp"

namespace cmt {

struct ChartTime {
  double hours = 0.0;
  bool clamped = false;
};

/// Date-only notes are placed at 24:00 of their chart date. `chart_day` is
/// the calendar day relative to the admission day (0 = admission day) and
/// `admit_hour` the hour of day at admission. Dates before admission clamp
/// to 0 with `clamped` set.
ChartTime assign_charttime(int chart_day, double admit_hour);

/// Carries each column's last observation forward. Entries before a column's
/// first observation take `leading_fill[col]` (the training mean, i.e. the
/// value that scales to 0). An empty `leading_fill` means 0.
Tensor<float> forward_impute(const Tensor<float>& ehr, std::span<const double> leading_fill = {});

struct ScalerStats {
  std::vector<double> ehr_mean;
  std::vector<double> ehr_std;
  double time_mean = 0.0;
  double time_std = 0.0;

  static constexpr double kStdFloor = 1e-6;
  double scale_ehr(std::size_t col, double x) const {
    return (x - ehr_mean[col]) / std::max(ehr_std[col], kStdFloor);
  }
  double scale_time(double t) const { return (t - time_mean) / std::max(time_std, kStdFloor); }
};

void to_json(nlohmann::json& j, const ScalerStats& s);
void from_json(const nlohmann::json& j, ScalerStats& s);

/// Population mean/std per EHR feature (observed values after forward fill)
/// and of note entry times. Call with training stays only.
ScalerStats fit_scaler(std::span<const StayRecord> train_stays);

/// Imputes and standard-scales the EHR grid and note entry times. Throws if
/// the stay is already scaled.
void apply_scaler(StayRecord& stay, const ScalerStats& stats);

/// Hides the chronologically last note (and its chunks); ties go to the note
/// latest in input order. All other notes become visible.
void mask_last_note(StayRecord& stay);

/// Removes notes whose type is not allowed. If last-note masking had been
/// applied it is recomputed on the surviving notes.
void filter_note_types(StayRecord& stay, const NoteTypeSet& allowed);

/// Replaces each note that carries chunk embeddings by one record per chunk
/// sharing the note's entry time and group.
void expand_chunks(StayRecord& stay);

/// Visible notes as model input: row i = [embedding_i || scaled entry time].
struct NoteMatrix {
  Tensor<float> features;  // n_visible x 769, or 0 x 769 when none
  std::vector<double> hours;
  std::vector<std::size_t> source_index;  // position in StayRecord::notes
  std::vector<NoteType> types;

  std::size_t size() const { return hours.size(); }
};

/// Requires a scaled stay.
NoteMatrix build_note_matrix(const StayRecord& stay);

/// Type invariants of a stay; empty when clean. With `preprocessed` set, NaN
/// anywhere is also reported.
std::vector<std::string> lint_stay(const StayRecord& stay, bool preprocessed);

}  // namespace cmt
