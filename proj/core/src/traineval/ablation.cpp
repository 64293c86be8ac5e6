#include "cmt/traineval/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace cmt {

using nlohmann::json;

std::string_view to_string(AblationDirection d) {
  return d == AblationDirection::kIncreasing ? "increasing" : "decreasing";
}

AblationDirection parse_direction(std::string_view name) {
  if (name == "increasing" || name == "inc") return AblationDirection::kIncreasing;
  if (name == "decreasing" || name == "dec") return AblationDirection::kDecreasing;
  throw std::invalid_argument("unknown ablation direction '" + std::string(name) + "'");
}

void AblationPlan::validate() const {
  if (arms.empty()) throw std::invalid_argument("ablation plan has no arms");
  for (std::size_t i = 1; i < arms.size(); ++i) {
    const auto& a = arms[i - 1].types;
    const auto& b = arms[i].types;
    if (b.size() <= a.size() || !std::includes(b.begin(), b.end(), a.begin(), a.end()))
      throw std::invalid_argument("ablation arm '" + arms[i].label + "' does not strictly extend '" +
                                  arms[i - 1].label + "'");
  }
}

AblationPlan make_ablation_plan(const std::map<NoteType, std::size_t>& train_counts, AblationDirection direction,
                                bool ehr_baseline) {
  std::vector<std::pair<NoteType, std::size_t>> present;
  for (const auto& [type, n] : train_counts)
    if (n > 0) present.emplace_back(type, n);
  std::stable_sort(present.begin(), present.end(), [&](const auto& a, const auto& b) {
    return direction == AblationDirection::kIncreasing ? a.second < b.second : a.second > b.second;
  });
  AblationPlan plan;
  plan.direction = direction;
  if (ehr_baseline) plan.arms.push_back({"EHR", {}});
  NoteTypeSet acc;
  for (const auto& [type, n] : present) {
    acc.insert(type);
    plan.arms.push_back({"+" + std::string(to_string(type)), acc});
  }
  plan.validate();
  return plan;
}

RunSummary summarize(std::string arm, const std::vector<std::uint64_t>& seeds,
                     const std::vector<MetricReport>& reports) {
  RunSummary s;
  s.arm = std::move(arm);
  s.seeds = seeds;
  s.reports = reports;
  auto collect = [&](const char* key, auto getter) {
    std::vector<double> v;
    for (const auto& r : reports)
      if (auto x = getter(r)) v.push_back(*x);
    if (!v.empty()) s.metrics[key] = confidence_interval(v);
  };
  collect("auprc", [](const MetricReport& r) { return r.auprc; });
  collect("auroc", [](const MetricReport& r) { return r.auroc; });
  collect("macro", [](const MetricReport& r) { return r.macro_auc; });
  collect("micro", [](const MetricReport& r) { return r.micro_auc; });
  return s;
}

AblationTable run_ablation(const ScaledCohort& cohort, Task task, const AblationPlan& plan,
                           const std::vector<std::uint64_t>& seeds, const CrossModalConfig& model_cfg,
                           const TrainConfig& train_cfg, std::size_t threads, const AblationProgress& progress) {
  plan.validate();
  if (seeds.empty()) throw std::invalid_argument("run_ablation: no seeds");
  AblationTable table;
  table.task = task;
  table.plan = plan;
  for (std::size_t a = 0; a < plan.arms.size(); ++a)
    for (std::uint64_t seed : seeds) table.rows.push_back({a, plan.arms[a].label, seed, std::nullopt, {}});

  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < table.rows.size(); i = next++) {
      AblationRow& row = table.rows[i];
      const AblationArm& arm = plan.arms[row.arm];
      try {
        CrossModalConfig mc = model_cfg;
        mc.task = task;
        if (arm.types.empty()) mc.mode = Mode::kEhrOnly;
        TrainConfig tc = train_cfg;
        tc.seed = row.seed;
        const TaskDataset data = make_dataset(cohort, task, arm.types);
        const TrainResult trained = train(data, mc, tc);
        row.report = evaluate(trained.params, data.test, task).report;
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(row);
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, table.rows.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n; ++w) pool.emplace_back(worker);
  }

  for (std::size_t a = 0; a < plan.arms.size(); ++a) {
    std::vector<std::uint64_t> ok_seeds;
    std::vector<MetricReport> reports;
    for (const auto& row : table.rows)
      if (row.arm == a && row.report) {
        ok_seeds.push_back(row.seed);
        reports.push_back(*row.report);
      }
    table.summaries.push_back(summarize(plan.arms[a].label, ok_seeds, reports));
  }
  return table;
}

namespace {

json types_json(const NoteTypeSet& s) {
  json j = json::array();
  for (NoteType t : s) j.push_back(std::string(to_string(t)));
  return j;
}

std::string number(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string cell(const std::optional<double>& v) { return v ? number(*v) : std::string(); }

}  // namespace

void to_json(json& j, const RunSummary& s) {
  j = json{{"arm", s.arm}, {"seeds", s.seeds}, {"reports", s.reports}};
  json m = json::object();
  for (const auto& [k, ci] : s.metrics)
    m[k] = json{{"mean", ci.mean}, {"ci_halfwidth", ci.halfwidth ? json(*ci.halfwidth) : json(nullptr)}};
  j["metrics"] = m;
}

void to_json(json& j, const AblationTable& t) {
  json arms = json::array();
  for (const auto& a : t.plan.arms) arms.push_back({{"label", a.label}, {"types", types_json(a.types)}});
  json rows = json::array();
  for (const auto& r : t.rows) {
    json row{{"arm", r.label}, {"seed", r.seed}};
    if (r.report) row["report"] = *r.report;
    else row["error"] = r.error;
    rows.push_back(row);
  }
  j = json{{"task", std::string(to_string(t.task))},
           {"direction", std::string(to_string(t.plan.direction))},
           {"auprc_definition", "average precision"},
           {"arms", arms},
           {"rows", rows},
           {"summaries", t.summaries}};
}

std::string ablation_csv(const AblationTable& t) {
  std::string out = "arm,seed,auprc,auroc,macro,micro\n";
  for (const auto& r : t.rows) {
    out += r.label + "," + std::to_string(r.seed);
    if (!r.report) {
      out += ",failed,failed,failed,failed\n";
      continue;
    }
    out += "," + cell(r.report->auprc) + "," + cell(r.report->auroc) + "," + cell(r.report->macro_auc) + "," +
           cell(r.report->micro_auc) + "\n";
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace cmt
