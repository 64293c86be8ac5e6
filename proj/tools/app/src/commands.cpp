#include "cmt/app/commands.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include "cmt/data/tensor_io.hpp"

namespace cmt::app {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

json type_list(const NoteTypeSet& types) {
  json a = json::array();
  for (NoteType t : types) a.push_back(std::string(to_string(t)));
  return a;
}

NoteTypeSet type_set(const json& a) {
  NoteTypeSet s;
  for (const auto& t : a) s.insert(parse_note_type(t.get<std::string>()));
  return s;
}

Cohort load_checked_cohort(const fs::path& root, std::ostream& log) {
  Cohort c = load_cohort(root);
  log << "cohort " << root.string() << ": " << c.stays.size() << " stays";
  if (!c.manifest.rejected.empty()) log << ", " << c.manifest.rejected.size() << " rejected";
  if (c.manifest.dropped_without_notes) log << ", " << c.manifest.dropped_without_notes << " without notes";
  log << "\n";
  return c;
}

struct LoadedModel {
  ModelParams params;
  ScalerStats scaler;
  NoteTypeSet allowed = all_note_type_set();
};

LoadedModel load_model(const fs::path& path, const Cohort& cohort, std::ostream& log) {
  CheckpointMeta meta;
  LoadedModel m;
  try {
    m.params = load_checkpoint(path, &meta);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("checkpoint " + path.string() + ": " + e.what());
  }
  const CrossModalConfig& mc = m.params.config;
  for (const auto& s : cohort.stays) {
    if (s.ehr.cols() != mc.d_ehr)
      throw ConfigError("checkpoint expects " + std::to_string(mc.d_ehr) + " EHR features, stay " + s.stay_id +
                        " has " + std::to_string(s.ehr.cols()));
    for (const auto& n : s.notes)
      if (n.embedding.size() + 1 != mc.d_cn)
        throw ConfigError("checkpoint expects " + std::to_string(mc.d_cn - 1) + "-dim note embeddings, stay " +
                          s.stay_id + " has " + std::to_string(n.embedding.size()));
  }
  if (meta.extra.contains("scaler")) {
    m.scaler = meta.extra["scaler"].get<ScalerStats>();
  } else {
    std::vector<StayRecord> train;
    for (std::size_t i : cohort.indices(Split::kTrain)) train.push_back(cohort.stays[i]);
    if (train.empty()) throw ConfigError("checkpoint carries no scaler and the cohort has no training stays");
    m.scaler = fit_scaler(train);
    log << "checkpoint carries no scaler; refitted on the training split\n";
  }
  if (meta.extra.contains("allowed_types")) m.allowed = type_set(meta.extra["allowed_types"]);
  return m;
}

const StayRecord& find_stay(const Cohort& cohort, const std::string& id) {
  for (const auto& s : cohort.stays)
    if (s.stay_id == id) return s;
  throw ConfigError("stay '" + id + "' not in cohort");
}

}  // namespace

PrevalenceReport cmd_synth(const RunConfig& cfg, std::ostream& log) {
  cfg.validate(Command::kSynth);
  const PrevalenceReport report = generate_cohort(cfg.synth, cfg.out);
  log << "wrote " << cfg.synth.n_stays() << " stays to " << cfg.out.string() << "\n" << report.to_string() << "\n";
  return report;
}

TrainResult cmd_train(const RunConfig& cfg, std::ostream& log) {
  cfg.validate(Command::kTrain);
  const Cohort cohort = load_checked_cohort(cfg.cohort, log);
  const ScaledCohort scaled = scale_cohort(cohort);
  const NoteTypeSet allowed = all_note_type_set();
  const TaskDataset data = make_dataset(scaled, cfg.task, allowed);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seeds.front();
  const CrossModalConfig mc = cfg.model_config();
  TrainResult result = train(data, mc, tc, [&](const EpochRecord& r, const ModelParams&) {
    log << "epoch " << r.epoch << " loss " << r.train_loss << " val "
        << (r.val_metric ? std::to_string(*r.val_metric) : std::string("n/a")) << (r.improved ? " *" : "") << "\n";
  });

  fs::create_directories(cfg.out);
  json history = json::array();
  for (const auto& r : result.history) history.push_back(r);
  CheckpointMeta meta;
  meta.seed = tc.seed;
  meta.step = result.steps;
  meta.extra = json{{"scaler", scaled.scaler},
                    {"allowed_types", type_list(allowed)},
                    {"train", tc},
                    {"best_epoch", result.best_epoch}};
  save_checkpoint(cfg.out / "model.cmt", result.params, meta);
  write_json(cfg.out / "history.json", json{{"best_epoch", result.best_epoch}, {"epochs", history}});
  log << "best epoch " << result.best_epoch << ", checkpoint " << (cfg.out / "model.cmt").string() << "\n";
  return result;
}

MetricReport cmd_eval(const RunConfig& cfg, std::ostream& log) {
  cfg.validate(Command::kEval);
  const Cohort cohort = load_checked_cohort(cfg.cohort, log);
  const LoadedModel m = load_model(cfg.checkpoint, cohort, log);
  const Task task = m.params.config.task;

  std::vector<Example> examples;
  const auto ids = cohort.indices(cfg.split);
  for (std::size_t i : ids) {
    StayRecord s = cohort.stays[i];
    if (task == Task::kInHospitalMortality && static_cast<double>(s.hours()) < kIhmHours) continue;
    apply_scaler(s, m.scaler);
    examples.push_back(make_example(s, task, m.allowed));
  }
  if (examples.empty()) throw ConfigError("split '" + std::string(to_string(cfg.split)) + "' has no usable stays");
  const EvalResult r = evaluate(m.params, examples, task, cfg.worker_count());

  fs::create_directories(cfg.out);
  write_json(cfg.out / "metrics.json", json{{"task", to_string(task)},
                                            {"mode", to_string(m.params.config.mode)},
                                            {"split", to_string(cfg.split)},
                                            {"stays", examples.size()},
                                            {"metrics", r.report}});
  log << "wrote " << (cfg.out / "metrics.json").string() << "\n";
  return r.report;
}

AblationTable cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  cfg.validate(Command::kAblate);
  const Cohort cohort = load_checked_cohort(cfg.cohort, log);
  const ScaledCohort scaled = scale_cohort(cohort);
  const AblationPlan plan = make_ablation_plan(cohort.manifest.train_note_counts, cfg.direction);
  log << "arms:";
  for (const auto& arm : plan.arms) log << " " << arm.label;
  log << "\n";

  AblationTable table = run_ablation(scaled, cfg.task, plan, cfg.seeds, cfg.model_config(), cfg.train,
                                     cfg.worker_count(), [&](const AblationRow& row) {
                                       log << row.label << " seed " << row.seed << ": "
                                           << (row.failed() ? "failed (" + row.error + ")" : std::string("done"))
                                           << "\n";
                                     });
  fs::create_directories(cfg.out);
  write_text_file(cfg.out / "ablation.csv", ablation_csv(table));
  write_json(cfg.out / "ablation.json", table);
  log << "wrote " << (cfg.out / "ablation.csv").string() << "\n";
  return table;
}

ExplainResult cmd_explain(const RunConfig& cfg, std::ostream& log) {
  cfg.validate(Command::kExplain);
  const Cohort cohort = load_checked_cohort(cfg.cohort, log);
  const LoadedModel cross = load_model(cfg.checkpoint, cohort, log);
  const LoadedModel ehr = load_model(cfg.ehr_checkpoint, cohort, log);
  if (!cross.params.config.uses_notes()) throw ConfigError("checkpoint does not read notes");
  if (ehr.params.config.task != cross.params.config.task) throw ConfigError("checkpoints were trained on different tasks");

  StayRecord stay = find_stay(cohort, cfg.stay);
  apply_scaler(stay, cross.scaler);
  filter_note_types(stay, cross.allowed);
  mask_last_note(stay);

  fs::create_directories(cfg.out);
  ExplainResult out;
  out.cross = export_cross_attention(stay, cross.params, cfg.out / (cfg.stay + "_cross"));
  out.divergence = divergence_report(make_stay_input(stay), ehr.params, cross.params, cfg.divergence_threshold);
  write_json(cfg.out / (cfg.stay + "_divergence.json"), out.divergence);
  if (auto h = out.divergence.first_hour()) {
    log << "first divergence at hour " << *h << "\n";
  } else {
    log << "no divergence above " << cfg.divergence_threshold << "\n";
  }

  for (std::size_t i = 0; i < cfg.rollout.size(); ++i) {
    const RolloutInput in = load_rollout_input(cfg.rollout[i]);
    const Tensor<double> r = attention_rollout(in);
    const WordImportance w = word_importance(r, cfg.cls_index, in.word_groups, in.chunk_tokens);
    json rows = json::array();
    for (std::size_t a = 0; a < r.rows(); ++a) {
      json row = json::array();
      for (std::size_t b = 0; b < r.cols(); ++b) row.push_back(r(a, b));
      rows.push_back(std::move(row));
    }
    write_json(cfg.out / ("rollout_" + std::to_string(i) + ".json"),
               json{{"source", cfg.rollout[i].filename().string()},
                    {"tokens", in.tokens},
                    {"rollout", rows},
                    {"token_scores", w.token_scores},
                    {"word_scores", w.word_scores},
                    {"chunk_scores", w.chunk_scores}});
    out.rollouts.push_back(w);
  }
  log << "wrote explanations for " << cfg.stay << " to " << cfg.out.string() << "\n";
  return out;
}

GradBatteryReport cmd_gradcheck(std::ostream& log) {
  const GradBatteryReport r = run_grad_battery();
  for (const auto& e : r.entries)
    log << (e.passed() ? "ok   " : "FAIL ") << e.name << " max rel err " << e.max_rel_error << " (" << e.instances
        << " instances)" << (e.passed() ? "" : " worst " + e.worst) << "\n";
  log << (r.passed() ? "all passed" : "FAILED") << " in " << r.seconds << " s\n";
  return r;
}

}  // namespace cmt::app
