#include "cmt/data/note_type.hpp"

#include <stdexcept>
#include <string>

namespace cmt {

namespace {

constexpr std::array<std::string_view, kNumNoteTypes> kNames = {
    "Nursing", "Radiology",      "Physician",   "ECG",     "Discharge summary", "Echo",     "Respiratory",
    "Nutrition", "General",      "Rehab Services", "Social Work", "Case Management", "Pharmacy", "Consult",
};

}  // namespace

const std::array<NoteType, kNumNoteTypes>& all_note_types() {
  static const std::array<NoteType, kNumNoteTypes> types = [] {
    std::array<NoteType, kNumNoteTypes> t{};
    for (std::size_t i = 0; i < kNumNoteTypes; ++i) t[i] = static_cast<NoteType>(i);
    return t;
  }();
  return types;
}

NoteTypeSet all_note_type_set() { return {all_note_types().begin(), all_note_types().end()}; }

std::string_view to_string(NoteType type) { return kNames.at(static_cast<std::size_t>(type)); }

NoteType parse_note_type(std::string_view name) {
  for (std::size_t i = 0; i < kNumNoteTypes; ++i)
    if (kNames[i] == name) return static_cast<NoteType>(i);
  throw std::invalid_argument("unknown note type '" + std::string(name) + "'");
}

bool is_date_only(NoteType type) {
  return type == NoteType::kEcho || type == NoteType::kEcg || type == NoteType::kDischargeSummary;
}

}  // namespace cmt
