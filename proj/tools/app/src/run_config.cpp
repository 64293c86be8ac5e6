#include "cmt/app/run_config.hpp"

#include <fstream>
#include <set>

namespace cmt::app {

using nlohmann::json;

std::string_view to_string(Command c) {
  switch (c) {
    case Command::kSynth: return "synth";
    case Command::kTrain: return "train";
    case Command::kEval: return "eval";
    case Command::kAblate: return "ablate";
    case Command::kExplain: return "explain";
    case Command::kGradcheck: return "gradcheck";
  }
  return "?";
}

CrossModalConfig RunConfig::model_config() const {
  CrossModalConfig m = model;
  m.task = task;
  m.mode = mode;
  return m;
}

std::size_t RunConfig::worker_count() const { return threads == 0 ? default_threads() : threads; }

namespace {

void require_file(const std::filesystem::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string(what) + " not set");
  if (!std::filesystem::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

void check(const auto& sub, const char* name) {
  try {
    sub.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  }
}

}  // namespace

void RunConfig::validate(Command cmd) const {
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (out.empty()) throw ConfigError("output directory not set");
  switch (cmd) {
    case Command::kSynth: check(synth, "synth"); break;
    case Command::kTrain:
    case Command::kAblate:
      check(model_config(), "model");
      check(train, "train");
      require_file(cohort / "manifest.json", "cohort manifest");
      break;
    case Command::kEval:
      require_file(checkpoint, "checkpoint");
      require_file(cohort / "manifest.json", "cohort manifest");
      break;
    case Command::kExplain:
      if (stay.empty()) throw ConfigError("explain needs --stay");
      require_file(checkpoint, "checkpoint");
      require_file(ehr_checkpoint, "ehr_checkpoint");
      require_file(cohort / "manifest.json", "cohort manifest");
      for (const auto& r : rollout) require_file(r, "rollout input");
      if (!(divergence_threshold > 0.0 && divergence_threshold < 1.0))
        throw ConfigError("divergence_threshold must lie in (0, 1)");
      break;
    case Command::kGradcheck: break;
  }
}

void to_json(json& j, const RunConfig& c) {
  std::vector<std::string> rollout;
  for (const auto& r : c.rollout) rollout.push_back(r.string());
  j = json{{"task", to_string(c.task)},
           {"mode", to_string(c.mode)},
           {"model", c.model},
           {"train", c.train},
           {"synth", c.synth},
           {"cohort", c.cohort.string()},
           {"out", c.out.string()},
           {"seeds", c.seeds},
           {"checkpoint", c.checkpoint.string()},
           {"ehr_checkpoint", c.ehr_checkpoint.string()},
           {"split", to_string(c.split)},
           {"direction", to_string(c.direction)},
           {"stay", c.stay},
           {"divergence_threshold", c.divergence_threshold},
           {"rollout", rollout},
           {"cls_index", c.cls_index},
           {"threads", c.threads}};
  j["model"].erase("task");
  j["model"].erase("mode");
}

void from_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{"task",       "mode",      "model",          "train",  "synth",
                                           "cohort",     "out",       "seeds",          "checkpoint",
                                           "ehr_checkpoint", "split", "direction",      "stay",
                                           "divergence_threshold",    "rollout",        "cls_index", "threads"};
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  try {
    if (j.contains("task")) c.task = parse_task(j["task"].get<std::string>());
    if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
    if (j.contains("model")) {
      json m = j["model"];
      if (m.contains("task") || m.contains("mode")) throw ConfigError("set task and mode at the top level");
      json base = c.model;
      base.update(m);
      c.model = base.get<CrossModalConfig>();
    }
    if (j.contains("train")) {
      json base = c.train;
      base.update(j["train"]);
      c.train = base.get<TrainConfig>();
    }
    if (j.contains("synth")) {
      json base = c.synth;
      base.update(j["synth"]);
      c.synth = base.get<SynthConfig>();
    }
    if (j.contains("cohort")) c.cohort = j["cohort"].get<std::string>();
    if (j.contains("out")) c.out = j["out"].get<std::string>();
    if (j.contains("seeds")) {
      const json& s = j["seeds"];
      c.seeds = s.is_array() ? s.get<std::vector<std::uint64_t>>() : std::vector{s.get<std::uint64_t>()};
    }
    if (j.contains("checkpoint")) c.checkpoint = j["checkpoint"].get<std::string>();
    if (j.contains("ehr_checkpoint")) c.ehr_checkpoint = j["ehr_checkpoint"].get<std::string>();
    if (j.contains("split")) c.split = parse_split(j["split"].get<std::string>());
    if (j.contains("direction")) c.direction = parse_direction(j["direction"].get<std::string>());
    if (j.contains("stay")) c.stay = j["stay"].get<std::string>();
    if (j.contains("divergence_threshold")) c.divergence_threshold = j["divergence_threshold"].get<double>();
    if (j.contains("rollout")) {
      c.rollout.clear();
      const json& r = j["rollout"];
      if (r.is_array()) {
        for (const auto& p : r) c.rollout.emplace_back(p.get<std::string>());
      } else {
        c.rollout.emplace_back(r.get<std::string>());
      }
    }
    if (j.contains("cls_index")) c.cls_index = j["cls_index"].get<std::size_t>();
    if (j.contains("threads")) c.threads = j["threads"].get<std::size_t>();
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void apply_override(json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("bad --set key '" + key + "'");
    if (!node->is_object()) throw ConfigError("--set key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config " + file->string());
    j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config " + file->string() + " is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c;
  from_json(j, c);
  return c;
}

}  // namespace cmt::app
