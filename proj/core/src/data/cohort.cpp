#include "cmt/data/cohort.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cmt/data/preprocess.hpp"
#include "cmt/data/tensor_io.hpp"

namespace cmt {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

std::vector<std::size_t> Cohort::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.stays.size(); ++i)
    if (manifest.stays[i].split == split) out.push_back(i);
  return out;
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void append_float(std::string& out, float x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  out.append(buf, res.ptr);
}

void append_double(std::string& out, double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  out.append(buf, res.ptr);
}

void append_vector(std::string& out, const std::vector<float>& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    append_float(out, v[i]);
  }
  out += ']';
}

std::vector<float> to_floats(const json& arr, const char* what) {
  if (!arr.is_array()) throw FormatError(std::string(what) + " is not an array");
  std::vector<float> v;
  v.reserve(arr.size());
  for (const auto& x : arr) {
    if (!x.is_number()) throw FormatError(std::string(what) + " holds a non-number");
    v.push_back(static_cast<float>(x.get<double>()));
  }
  return v;
}

}  // namespace

std::string note_to_json_line(const NoteRecord& note) {
  std::string out = "{\"charttime_h\":";
  if (note.chart_day) out += "null";
  else append_double(out, note.charttime_h);
  out += ",\"chartdate_day\":";
  out += note.chart_day ? std::to_string(*note.chart_day) : "null";
  out += ",\"type\":" + json(std::string(to_string(note.type))).dump();
  out += ",\"emb\":";
  append_vector(out, note.embedding);
  if (!note.chunk_embeddings.empty()) {
    out += ",\"chunks\":[";
    for (std::size_t i = 0; i < note.chunk_embeddings.size(); ++i) {
      if (i) out += ',';
      append_vector(out, note.chunk_embeddings[i]);
    }
    out += ']';
  }
  if (!note.chunk_token_counts.empty()) out += ",\"chunk_tokens\":" + json(note.chunk_token_counts).dump();
  out += '}';
  return out;
}

NoteRecord note_from_json_line(std::string_view line, double admit_hour) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed note record: ") + e.what());
  }
  NoteRecord note;
  note.type = parse_note_type(j.at("type").get<std::string>());
  const json& t = j.value("charttime_h", json());
  const json& day = j.value("chartdate_day", json());
  if (!t.is_null()) {
    note.charttime_h = t.get<double>();
  } else if (!day.is_null()) {
    note.chart_day = day.get<int>();
    const ChartTime ct = assign_charttime(*note.chart_day, admit_hour);
    note.charttime_h = ct.hours;
    note.charttime_clamped = ct.clamped;
  } else {
    throw FormatError("note has neither charttime_h nor chartdate_day");
  }
  note.embedding = to_floats(j.at("emb"), "emb");
  if (j.contains("chunks")) {
    for (const auto& c : j["chunks"]) note.chunk_embeddings.push_back(to_floats(c, "chunk"));
  }
  if (j.contains("chunk_tokens")) j["chunk_tokens"].get_to(note.chunk_token_counts);
  return note;
}

StayRecord read_stay(const fs::path& root, const ManifestEntry& entry) {
  StayRecord stay;
  stay.stay_id = entry.id;
  stay.admit_hour = entry.admit_hour;
  stay.ehr = load_tensor(root / entry.ehr);

  std::ifstream in(root / entry.notes, std::ios::binary);
  if (!in) throw FormatError("cannot open " + (root / entry.notes).string());
  std::string line;
  std::size_t group = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    NoteRecord note = note_from_json_line(line, entry.admit_hour);
    note.group = group++;
    stay.notes.push_back(std::move(note));
  }

  json o;
  try {
    o = json::parse(read_text(root / entry.outcome));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed outcome: ") + e.what());
  }
  if (!o.at("death_hour").is_null()) stay.outcome.death_hour = o["death_hour"].get<double>();
  const auto& pheno = o.at("pheno");
  if (!pheno.is_array() || pheno.size() != kPhenotypes) throw FormatError("pheno must hold 25 entries");
  for (std::size_t k = 0; k < kPhenotypes; ++k) {
    const int v = pheno[k].get<int>();
    if (v != 0 && v != 1) throw FormatError("pheno entries must be 0 or 1");
    stay.outcome.pheno[k] = static_cast<std::uint8_t>(v);
  }
  return stay;
}

std::string validate_stay(const StayRecord& stay) {
  if (stay.ehr.rank() != 2 || stay.ehr.cols() != kEhrFeatures)
    return "EHR tensor is " + stay.ehr.shape_string() + ", expected T x 42";
  if (stay.ehr.rows() == 0) return "EHR tensor has no hours";
  for (float x : stay.ehr.values())
    if (std::isinf(x)) return "EHR tensor holds an infinite value";
  if (stay.outcome.death_hour && !(*stay.outcome.death_hour >= 0.0)) return "death_hour is negative";
  auto issues = lint_stay(stay, false);
  return issues.empty() ? std::string() : issues.front();
}

Cohort load_cohort(const fs::path& root) {
  const fs::path manifest_path = root / "manifest.json";
  if (!fs::exists(manifest_path)) throw FormatError("no manifest");
  json m;
  try {
    m = json::parse(read_text(manifest_path));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }

  Cohort cohort;
  cohort.manifest.root = root;
  std::set<std::string> seen;
  for (const auto& s : m.at("stays")) {
    ManifestEntry entry;
    entry.id = s.at("id").get<std::string>();
    entry.split = parse_split(s.at("split").get<std::string>());
    entry.ehr = s.at("ehr").get<std::string>();
    entry.notes = s.at("notes").get<std::string>();
    entry.outcome = s.at("outcome").get<std::string>();
    entry.admit_hour = s.value("admit_hour", 0.0);
    if (!seen.insert(entry.id).second) {
      cohort.manifest.rejected.push_back({entry.id, "duplicate stay id"});
      continue;
    }

    StayRecord stay;
    try {
      stay = read_stay(root, entry);
    } catch (const std::exception& e) {
      cohort.manifest.rejected.push_back({entry.id, e.what()});
      continue;
    }
    if (auto reason = validate_stay(stay); !reason.empty()) {
      cohort.manifest.rejected.push_back({entry.id, reason});
      continue;
    }
    if (stay.notes.empty()) {
      ++cohort.manifest.dropped_without_notes;
      continue;
    }
    if (entry.split == Split::kTrain)
      for (const auto& note : stay.notes) ++cohort.manifest.train_note_counts[note.type];
    cohort.manifest.stays.push_back(std::move(entry));
    cohort.stays.push_back(std::move(stay));
  }
  return cohort;
}

void write_stay(const fs::path& root, const ManifestEntry& entry, const StayRecord& stay) {
  fs::create_directories((root / entry.ehr).parent_path());
  save_tensor(root / entry.ehr, stay.ehr);

  std::string notes;
  for (const auto& note : stay.notes) {
    notes += note_to_json_line(note);
    notes += '\n';
  }
  write_text(root / entry.notes, notes);

  json o;
  o["death_hour"] = stay.outcome.death_hour ? json(*stay.outcome.death_hour) : json(nullptr);
  o["pheno"] = json::array();
  for (auto v : stay.outcome.pheno) o["pheno"].push_back(static_cast<int>(v));
  write_text(root / entry.outcome, o.dump() + "\n");
}

void write_manifest(const fs::path& root, const std::vector<ManifestEntry>& entries) {
  json stays = json::array();
  for (const auto& e : entries) {
    stays.push_back({{"id", e.id},
                     {"split", std::string(to_string(e.split))},
                     {"ehr", e.ehr},
                     {"notes", e.notes},
                     {"outcome", e.outcome},
                     {"admit_hour", e.admit_hour}});
  }
  write_text(root / "manifest.json", json{{"stays", stays}}.dump(1) + "\n");
}

}  // namespace cmt
