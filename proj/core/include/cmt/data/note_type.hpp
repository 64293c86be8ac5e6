#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>

namespace cmt {

enum class NoteType : std::uint8_t {
  kNursing,
  kRadiology,
  kPhysician,
  kEcg,
  kDischargeSummary,
  kEcho,
  kRespiratory,
  kNutrition,
  kGeneral,
  kRehabServices,
  kSocialWork,
  kCaseManagement,
  kPharmacy,
  kConsult,
};

inline constexpr std::size_t kNumNoteTypes = 14;

using NoteTypeSet = std::set<NoteType>;

const std::array<NoteType, kNumNoteTypes>& all_note_types();
NoteTypeSet all_note_type_set();

/// Canonical category name ("Nursing", "Discharge summary", ...).
std::string_view to_string(NoteType type);
/// Throws std::invalid_argument on a name outside the closed set.
NoteType parse_note_type(std::string_view name);

/// Echo, ECG and discharge summaries carry only a chart date.
bool is_date_only(NoteType type);

}  // namespace cmt
