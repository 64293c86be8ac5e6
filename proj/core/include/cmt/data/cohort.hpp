#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cmt/data/stay.hpp"

namespace cmt {

enum class Split { kTrain, kVal, kTest };

std::string_view to_string(Split s);
Split parse_split(std::string_view name);

struct ManifestEntry {
  std::string id;
  Split split = Split::kTrain;
  std::string ehr;      // paths relative to the cohort root
  std::string notes;
  std::string outcome;
  double admit_hour = 0.0;
};

struct StayRejection {
  std::string id;
  std::string reason;
};

struct CohortManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> stays;
  std::map<NoteType, std::size_t> train_note_counts;
  std::size_t dropped_without_notes = 0;
  std::vector<StayRejection> rejected;
};

/// A loaded cohort. `stays[i]` belongs to `manifest.stays[i]`.
struct Cohort {
  CohortManifest manifest;
  std::vector<StayRecord> stays;

  std::vector<std::size_t> indices(Split split) const;
};

/// Reads and validates every stay listed in root/manifest.json. Stays that
/// fail validation are listed in `rejected`; stays without notes are dropped
/// and counted. Throws FormatError "no manifest" if the file is missing.
Cohort load_cohort(const std::filesystem::path& root);

/// Reads one stay without validation beyond parsing.
StayRecord read_stay(const std::filesystem::path& root, const ManifestEntry& entry);

/// Why a raw stay would be rejected; empty when valid.
std::string validate_stay(const StayRecord& stay);

/// Writes ehr.cmt, notes.jsonl and outcome.json at the entry's paths.
void write_stay(const std::filesystem::path& root, const ManifestEntry& entry, const StayRecord& stay);
void write_manifest(const std::filesystem::path& root, const std::vector<ManifestEntry>& entries);

/// One notes.jsonl line. Date-only notes carry chart_day instead of a time.
std::string note_to_json_line(const NoteRecord& note);
NoteRecord note_from_json_line(std::string_view line, double admit_hour);

}  // namespace cmt
