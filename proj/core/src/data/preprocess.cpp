#include "cmt/data/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cmt {

ChartTime assign_charttime(int chart_day, double admit_hour) {
  const double end_of_day = 24.0 * (static_cast<double>(chart_day) + 1.0) - admit_hour;
  if (chart_day < 0 || end_of_day < 0.0) return {0.0, true};
  return {end_of_day, false};
}

Tensor<float> forward_impute(const Tensor<float>& ehr, std::span<const double> leading_fill) {
  Tensor<float> out = ehr;
  const std::size_t rows = ehr.rows(), cols = ehr.cols();
  if (!leading_fill.empty() && leading_fill.size() != cols)
    throw std::invalid_argument("forward_impute: fill vector length differs from feature count");
  for (std::size_t c = 0; c < cols; ++c) {
    float carry = leading_fill.empty() ? 0.0f : static_cast<float>(leading_fill[c]);
    for (std::size_t r = 0; r < rows; ++r) {
      float& x = out(r, c);
      if (std::isnan(x)) x = carry;
      else carry = x;
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const ScalerStats& s) {
  j = nlohmann::json{{"ehr_mean", s.ehr_mean}, {"ehr_std", s.ehr_std}, {"time_mean", s.time_mean},
                     {"time_std", s.time_std}};
}

void from_json(const nlohmann::json& j, ScalerStats& s) {
  j.at("ehr_mean").get_to(s.ehr_mean);
  j.at("ehr_std").get_to(s.ehr_std);
  j.at("time_mean").get_to(s.time_mean);
  j.at("time_std").get_to(s.time_std);
}

ScalerStats fit_scaler(std::span<const StayRecord> train_stays) {
  ScalerStats stats;
  const std::size_t cols = train_stays.empty() ? kEhrFeatures : train_stays.front().ehr.cols();
  std::vector<double> sum(cols, 0.0), sum_sq(cols, 0.0);
  std::vector<std::size_t> count(cols, 0);
  double t_sum = 0.0, t_sq = 0.0;
  std::size_t t_count = 0;

  // Two passes (mean, then centered squares) keep the variance accurate.
  for (const auto& stay : train_stays) {
    if (stay.ehr.cols() != cols) throw std::invalid_argument("fit_scaler: inconsistent feature count");
    for (std::size_t c = 0; c < cols; ++c) {
      bool seen = false;
      float carry = 0.0f;
      for (std::size_t r = 0; r < stay.ehr.rows(); ++r) {
        const float x = stay.ehr(r, c);
        if (!std::isnan(x)) seen = true, carry = x;
        if (seen) sum[c] += carry, ++count[c];
      }
    }
    for (const auto& note : stay.notes) t_sum += note.charttime_h, ++t_count;
  }
  stats.ehr_mean.resize(cols);
  for (std::size_t c = 0; c < cols; ++c) stats.ehr_mean[c] = count[c] ? sum[c] / static_cast<double>(count[c]) : 0.0;
  stats.time_mean = t_count ? t_sum / static_cast<double>(t_count) : 0.0;

  for (const auto& stay : train_stays) {
    for (std::size_t c = 0; c < cols; ++c) {
      bool seen = false;
      float carry = 0.0f;
      for (std::size_t r = 0; r < stay.ehr.rows(); ++r) {
        const float x = stay.ehr(r, c);
        if (!std::isnan(x)) seen = true, carry = x;
        if (seen) {
          const double dv = static_cast<double>(carry) - stats.ehr_mean[c];
          sum_sq[c] += dv * dv;
        }
      }
    }
    for (const auto& note : stay.notes) t_sq += (note.charttime_h - stats.time_mean) * (note.charttime_h - stats.time_mean);
  }
  stats.ehr_std.resize(cols);
  for (std::size_t c = 0; c < cols; ++c)
    stats.ehr_std[c] = count[c] ? std::sqrt(sum_sq[c] / static_cast<double>(count[c])) : 0.0;
  stats.time_std = t_count ? std::sqrt(t_sq / static_cast<double>(t_count)) : 0.0;
  return stats;
}

void apply_scaler(StayRecord& stay, const ScalerStats& stats) {
  if (stay.scaled) throw std::logic_error("apply_scaler: stay '" + stay.stay_id + "' is already scaled");
  if (stats.ehr_mean.size() != stay.ehr.cols())
    throw std::invalid_argument("apply_scaler: scaler fitted on a different feature count");
  Tensor<float> ehr = forward_impute(stay.ehr, stats.ehr_mean);
  for (std::size_t r = 0; r < ehr.rows(); ++r)
    for (std::size_t c = 0; c < ehr.cols(); ++c)
      ehr(r, c) = static_cast<float>(stats.scale_ehr(c, static_cast<double>(ehr(r, c))));
  stay.ehr = std::move(ehr);
  for (auto& note : stay.notes) note.scaled_time = static_cast<float>(stats.scale_time(note.charttime_h));
  stay.scaled = true;
}

void mask_last_note(StayRecord& stay) {
  for (auto& note : stay.notes) note.visible = true;
  stay.last_note_masked = true;
  if (stay.notes.empty()) return;
  // Notes are kept sorted with a stable sort, so the last record is the
  // latest chart time and, among ties, the latest in input order.
  const std::size_t group = stay.notes.back().group;
  for (auto& note : stay.notes)
    if (note.group == group) note.visible = false;
}

void filter_note_types(StayRecord& stay, const NoteTypeSet& allowed) {
  std::erase_if(stay.notes, [&](const NoteRecord& n) { return !allowed.contains(n.type); });
  if (stay.last_note_masked) mask_last_note(stay);
}

void expand_chunks(StayRecord& stay) {
  std::vector<NoteRecord> out;
  out.reserve(stay.notes.size());
  for (auto& note : stay.notes) {
    if (note.chunk_embeddings.empty()) {
      out.push_back(std::move(note));
      continue;
    }
    for (auto& chunk : note.chunk_embeddings) {
      NoteRecord rec;
      rec.charttime_h = note.charttime_h;
      rec.type = note.type;
      rec.embedding = std::move(chunk);
      rec.visible = note.visible;
      rec.group = note.group;
      rec.charttime_clamped = note.charttime_clamped;
      rec.scaled_time = note.scaled_time;
      out.push_back(std::move(rec));
    }
  }
  stay.notes = std::move(out);
}

NoteMatrix build_note_matrix(const StayRecord& stay) {
  if (!stay.scaled) throw std::logic_error("build_note_matrix: stay '" + stay.stay_id + "' is not scaled");
  NoteMatrix m;
  for (std::size_t i = 0; i < stay.notes.size(); ++i) {
    if (!stay.notes[i].visible) continue;
    m.hours.push_back(stay.notes[i].charttime_h);
    m.source_index.push_back(i);
    m.types.push_back(stay.notes[i].type);
  }
  m.features = Tensor<float>::matrix(m.size(), kNoteFeatures);
  for (std::size_t r = 0; r < m.size(); ++r) {
    const auto& note = stay.notes[m.source_index[r]];
    if (note.embedding.size() != kNoteEmbeddingDim)
      throw std::invalid_argument("build_note_matrix: embedding is not 768-dimensional");
    std::copy(note.embedding.begin(), note.embedding.end(), m.features.data() + r * kNoteFeatures);
    m.features(r, kNoteEmbeddingDim) = note.scaled_time;
  }
  return m;
}

std::vector<std::string> lint_stay(const StayRecord& stay, bool preprocessed) {
  std::vector<std::string> issues;
  if (stay.ehr.rank() != 2 || stay.ehr.cols() != kEhrFeatures)
    issues.push_back("EHR grid is " + stay.ehr.shape_string() + ", expected T x 42");
  if (stay.ehr.rows() == 0) issues.push_back("EHR grid has no hours");
  if (preprocessed) {
    for (float x : stay.ehr.values())
      if (!std::isfinite(x)) {
        issues.push_back("non-finite EHR value after preprocessing");
        break;
      }
  }
  for (std::size_t i = 0; i < stay.notes.size(); ++i) {
    const auto& note = stay.notes[i];
    const std::string where = "note " + std::to_string(i) + ": ";
    if (!(note.charttime_h >= 0.0)) issues.push_back(where + "negative or NaN chart time");
    if (i > 0 && note.charttime_h < stay.notes[i - 1].charttime_h) issues.push_back(where + "notes not sorted by time");
    if (note.embedding.size() != kNoteEmbeddingDim) issues.push_back(where + "embedding is not 768-dimensional");
    for (float x : note.embedding)
      if (!std::isfinite(x)) {
        issues.push_back(where + "non-finite embedding value");
        break;
      }
    if (!note.chunk_token_counts.empty() && note.chunk_token_counts.size() != note.chunk_embeddings.size())
      issues.push_back(where + "chunk token counts do not match chunk count");
    if (!note.chunk_embeddings.empty() && note.embedding.size() == kNoteEmbeddingDim) {
      for (std::size_t d = 0; d < kNoteEmbeddingDim; ++d) {
        double mean = 0.0;
        for (const auto& c : note.chunk_embeddings) mean += c.size() == kNoteEmbeddingDim ? c[d] : NAN;
        mean /= static_cast<double>(note.chunk_embeddings.size());
        if (!(std::abs(mean - note.embedding[d]) <= 1e-6 * (1.0 + std::abs(mean)))) {
          issues.push_back(where + "embedding is not the mean of its chunk embeddings");
          break;
        }
      }
    }
  }
  return issues;
}

}  // namespace cmt
