// Runs every primary acceptance criterion and prints one PASS/FAIL line each.
// Exit status is the number of failed criteria (capped at 1).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "cmt/app/commands.hpp"
#include "cmt/data/preprocess.hpp"
#include "cmt/interpret/interpret.hpp"
#include "cmt/model/grad_battery.hpp"
#include "cmt/model/model.hpp"
#include "cmt/synthgen/synthgen.hpp"
#include "cmt/traineval/ablation.hpp"
#include "cmt/traineval/metrics.hpp"
#include "cmt/traineval/train.hpp"

namespace fs = std::filesystem;
using namespace cmt;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << x;
  return os.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("cmt_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Gradient correctness

Verdict gradients() {
  const GradBatteryReport r = run_grad_battery(100, 0);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& e : r.entries) {
    if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
    if (!e.passed()) std::cerr << "  grad " << e.name << " rel err " << e.max_rel_error << " at " << e.worst << "\n";
  }
  return {r.passed() && r.seconds < 60.0, std::to_string(r.entries.size()) + " checks x 100 instances, max rel err " +
                                              fmt(worst, 3) + " (" + worst_name + "), " + fmt(r.seconds, 3) + " s"};
}

// Metric oracles

double pair_count_auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

// Mean over positives of the precision among everything scored at least as high.
double threshold_ap(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double sum = 0, positives = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    positives += 1;
    double above = 0, tp = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[j] >= s[i]) {
        above += 1;
        tp += y[j];
      }
    }
    sum += tp / above;
  }
  return sum / positives;
}

Verdict metric_oracles() {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6};
  const std::vector<std::uint8_t> y{1, 0, 1, 0};
  const bool hand = *auroc(s, y) == 0.75 && *auprc(s, y) == (1.0 + 2.0 / 3.0) / 2.0;

  Rng rng(2024);
  double worst = 0.0;
  std::size_t done = 0;
  while (done < 1000) {
    const std::size_t n = 2 + rng.below(199);
    const std::size_t levels = 1 + rng.below(n);
    std::vector<double> scores(n);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(levels)) / static_cast<double>(levels);
      labels[i] = rng.uniform() < 0.3 ? 1 : 0;
    }
    const auto pos = std::count(labels.begin(), labels.end(), 1);
    if (pos == 0 || pos == static_cast<long>(n)) continue;
    worst = std::max(worst, std::abs(*auroc(scores, labels) - pair_count_auroc(scores, labels)));
    worst = std::max(worst, std::abs(*auprc(scores, labels) - threshold_ap(scores, labels)));
    ++done;
  }
  return {hand && worst <= 1e-12, "hand examples " + std::string(hand ? "exact" : "WRONG") +
                                      ", 1000 tied instances max |diff| " + fmt(worst, 3)};
}

// Masking invariants

StayInput random_input(Rng& rng, std::size_t hours, const std::vector<double>& note_hours) {
  StayInput in;
  in.stay_id = "probe";
  in.ehr = Tensor<float>::matrix(hours, kEhrFeatures);
  for (auto& x : in.ehr.values()) x = static_cast<float>(rng.normal());
  in.notes = Tensor<float>::matrix(note_hours.size(), kNoteFeatures);
  for (auto& x : in.notes.values()) x = static_cast<float>(rng.normal());
  in.note_hours = note_hours;
  for (std::size_t j = 0; j < note_hours.size(); ++j) in.note_source.push_back(j);
  return in;
}

Tensor<float> logits_with_dropout(const ModelParams& p, const StayInput& in, std::uint64_t seed) {
  Graph<float> g;
  auto vars = bind_parameters(g, p.tensors);
  Rng rng(seed);
  return g.value(forward(g, in, vars, p.config, &rng).logits);
}

bool same_rows(const Tensor<float>& a, const Tensor<float>& b, std::size_t rows) {
  return std::memcmp(a.data(), b.data(), rows * a.cols() * sizeof(float)) == 0;
}

Verdict masking() {
  Rng rng(11);
  std::size_t causal = 0, visibility = 0, last_note = 0, violations = 0;
  for (int trial = 0; trial < 10; ++trial) {
    CrossModalConfig cfg;
    cfg.n_layers = 1 + static_cast<std::size_t>(trial % 2);
    const ModelParams p = init_params(cfg, 100 + static_cast<std::uint64_t>(trial));
    const std::size_t hours = 10 + rng.below(10);
    std::vector<double> note_hours;
    for (std::size_t j = 0; j < 5; ++j) note_hours.push_back(std::round(rng.uniform(0.0, double(hours)) * 4.0) / 4.0);
    std::sort(note_hours.begin(), note_hours.end());
    const StayInput base = random_input(rng, hours, note_hours);
    const std::uint64_t dseed = 500 + static_cast<std::uint64_t>(trial);
    const Tensor<float> ref = logits_with_dropout(p, base, dseed);

    for (std::size_t t = 0; t < hours; ++t) {
      StayInput in = base;
      for (auto& x : in.ehr.row(t)) x = static_cast<float>(rng.normal(0.0, 10.0));
      violations += same_rows(logits_with_dropout(p, in, dseed), ref, t) ? 0 : 1;
      ++causal;
    }
    for (std::size_t j = 0; j < note_hours.size(); ++j) {
      StayInput in = base;
      for (auto& x : in.notes.row(j)) x = static_cast<float>(rng.normal(0.0, 10.0));
      const auto rows = std::min(hours, static_cast<std::size_t>(std::ceil(note_hours[j])));
      violations += same_rows(logits_with_dropout(p, in, dseed), ref, rows) ? 0 : 1;
      ++visibility;
    }

    StayRecord stay;
    stay.stay_id = "masked";
    stay.ehr = base.ehr;
    for (double h : note_hours) {
      NoteRecord n;
      n.charttime_h = h;
      n.embedding.resize(kNoteEmbeddingDim);
      for (auto& x : n.embedding) x = static_cast<float>(rng.normal());
      n.group = stay.notes.size();
      stay.notes.push_back(std::move(n));
    }
    ScalerStats stats = fit_scaler(std::span<const StayRecord>(&stay, 1));
    apply_scaler(stay, stats);
    mask_last_note(stay);
    const Tensor<float> masked_ref = logits_with_dropout(p, make_stay_input(stay), dseed);
    for (int k = 0; k < 3; ++k) {
      StayRecord changed = stay;
      for (auto& x : changed.notes.back().embedding) x = static_cast<float>(rng.normal(0.0, 100.0));
      changed.notes.back().scaled_time += 3.0f;
      violations += same_rows(logits_with_dropout(p, make_stay_input(changed), dseed), masked_ref, hours) ? 0 : 1;
      ++last_note;
    }
  }
  return {violations == 0, std::to_string(causal) + " causal, " + std::to_string(visibility) + " note-visibility, " +
                               std::to_string(last_note) + " last-note perturbations with dropout on, " +
                               std::to_string(violations) + " changed a protected bit"};
}

// Rollout invariants

Verdict rollout() {
  auto uniform = [] {
    Tensor<double> a = Tensor<double>::matrix(2, 2);
    for (auto& x : a.values()) x = 0.5;
    return a;
  };
  RolloutInput in;
  in.tokens = {"[CLS]", "a"};
  in.word_groups = {-1, 0};
  in.chunk_tokens = {2};

  Tensor<double> eye = Tensor<double>::matrix(5, 5);
  for (std::size_t i = 0; i < 5; ++i) eye(i, i) = 1.0;
  RolloutInput ident;
  ident.layers = {eye, eye, eye};
  ident.tokens.assign(5, "t");
  ident.word_groups = {-1, 0, 1, 2, 3};
  ident.chunk_tokens = {5};
  double err = 0.0;
  const Tensor<double> ri = attention_rollout(ident);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) err = std::max(err, std::abs(ri(i, j) - (i == j ? 1.0 : 0.0)));
  const bool identity_ok = err == 0.0;

  in.layers = {uniform()};
  const Tensor<double> r1 = attention_rollout(in);
  in.layers = {uniform(), uniform()};
  const Tensor<double> r2 = attention_rollout(in);
  double hand = 0.0;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      hand = std::max(hand, std::abs(r1(i, j) - (i == j ? 0.75 : 0.25)));
      hand = std::max(hand, std::abs(r2(i, j) - (i == j ? 0.625 : 0.375)));
    }

  Rng rng(77);
  double row_err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(30), layers = 1 + rng.below(12);
    RolloutInput r;
    for (std::size_t l = 0; l < layers; ++l) {
      Tensor<double> a = Tensor<double>::matrix(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a(i, j) = rng.uniform() < 0.2 ? 0.0 : std::exp(rng.normal(0.0, 2.0));
        if (s == 0.0) s += a(i, i) = 1.0;
        for (std::size_t j = 0; j < n; ++j) a(i, j) /= s;
      }
      r.layers.push_back(std::move(a));
    }
    r.tokens.assign(n, "t");
    r.word_groups.assign(n, 0);
    r.word_groups[0] = -1;
    r.chunk_tokens = {n};
    const Tensor<double> out = attention_rollout(r);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (out(i, j) < 0.0) row_err = std::max(row_err, -out(i, j));
        s += out(i, j);
      }
      row_err = std::max(row_err, std::abs(s - 1.0));
    }
  }
  return {identity_ok && hand <= 1e-12 && row_err <= 1e-6,
          std::string("identity ") + (identity_ok ? "exact" : "off") + ", hand values max |diff| " + fmt(hand, 3) +
              ", 200 random stacks max row-sum error " + fmt(row_err, 3)};
}

// Planted signal and divergence

struct PlantedRun {
  SynthConfig synth;
  Cohort cohort;
  ScaledCohort scaled;
  CrossModalConfig model;
  TrainConfig train;
};

TrainConfig acceptance_train_config() {
  TrainConfig tc;
  tc.lr = 3e-4;
  tc.max_epochs = 20;
  tc.patience = 5;
  return tc;
}

double mean_auprc(const AblationTable& t, std::size_t arm) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& row : t.rows) {
    if (row.arm != arm || row.failed() || !row.report->auprc) continue;
    s += *row.report->auprc;
    ++n;
  }
  return n ? s / static_cast<double>(n) : std::nan("");
}

Verdict planted_signal(const PlantedRun& run, double* elapsed) {
  const auto t0 = Clock::now();
  const AblationPlan plan = make_ablation_plan(run.cohort.manifest.train_note_counts, AblationDirection::kIncreasing);
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const AblationTable table =
      run_ablation(run.scaled, Task::kDecompensation, plan, seeds, run.model, run.train, default_threads(),
                   [](const AblationRow& r) {
                     std::cerr << "  " << r.label << " seed " << r.seed << " auprc "
                               << (r.failed() || !r.report->auprc ? std::string("n/a") : fmt(*r.report->auprc))
                               << "\n";
                   });
  *elapsed += seconds_since(t0);

  for (const auto& row : table.rows)
    if (row.failed()) return {false, "arm " + row.label + " seed " + std::to_string(row.seed) + " failed: " + row.error};

  const PlantedSignal planted = describe_planted_signal(run.synth);
  std::vector<double> means;
  std::ostringstream arms;
  for (std::size_t a = 0; a < plan.arms.size(); ++a) {
    means.push_back(mean_auprc(table, a));
    arms << (a ? ", " : "") << plan.arms[a].label << " " << fmt(means.back(), 3);
  }
  const double gap = means.back() - means.front();
  const bool a_ok = gap >= 0.05;

  std::size_t best_step = 1;
  double redundant_delta = 0.0;
  bool saw_redundant = false;
  for (std::size_t a = 1; a < plan.arms.size(); ++a) {
    const double d = means[a] - means[a - 1];
    if (d > means[best_step] - means[best_step - 1]) best_step = a;
    NoteTypeSet added;
    std::set_difference(plan.arms[a].types.begin(), plan.arms[a].types.end(), plan.arms[a - 1].types.begin(),
                        plan.arms[a - 1].types.end(), std::inserter(added, added.end()));
    for (NoteType t : added)
      if (planted.redundant.contains(t)) {
        saw_redundant = true;
        redundant_delta = std::max(redundant_delta, std::abs(d));
      }
  }
  bool best_informative = false;
  for (NoteType t : plan.arms[best_step].types)
    if (planted.informative.contains(t) && !plan.arms[best_step - 1].types.contains(t)) best_informative = true;
  const bool b_ok = best_informative && saw_redundant && redundant_delta < 0.02;
  const bool time_ok = *elapsed <= 30.0 * 60.0;

  std::cerr << "  arms: " << arms.str() << "\n";
  return {a_ok && b_ok && time_ok,
          "(a) cross-modal minus EHR-only AUPRC " + fmt(gap, 3) + (a_ok ? " >= 0.05" : " < 0.05") +
              "; (b) largest gain at " + plan.arms[best_step].label + (best_informative ? " (informative)" : " (not informative)") +
              ", redundant step |delta| " + fmt(redundant_delta, 3) + (redundant_delta < 0.02 ? " < 0.02" : " >= 0.02") +
              "; arms [" + arms.str() + "]; " + fmt(*elapsed / 60.0, 3) + " min"};
}

Verdict divergence(const PlantedRun& run, double* elapsed) {
  const auto t0 = Clock::now();
  const TaskDataset full = make_dataset(run.scaled, Task::kDecompensation, all_note_type_set());
  CrossModalConfig ehr_cfg = run.model;
  ehr_cfg.mode = Mode::kEhrOnly;
  TrainConfig tc = run.train;
  tc.seed = 0;
  const TrainResult ehr = train(full, ehr_cfg, tc);
  const TrainResult cross = train(full, run.model, tc);
  *elapsed += seconds_since(t0);

  const auto probes = generate_probe_stays(run.synth, 50, 4242);
  std::size_t hits = 0, early = 0, wrong_note = 0, none = 0;
  for (const auto& probe : probes) {
    StayRecord s = probe.stay;
    apply_scaler(s, run.scaled.scaler);
    const Example ex = make_example(s, Task::kDecompensation, all_note_type_set());
    const DivergenceReport r = divergence_report(ex.input, ehr.params, cross.params, kDefaultDivergenceThreshold);
    const auto first = r.first_hour();
    if (!first) {
      ++none;
    } else if (static_cast<double>(*first) < probe.planted_hour) {
      ++early;
    } else if (r.hours.front().note != probe.planted_note) {
      ++wrong_note;
    } else {
      ++hits;
    }
  }
  const double rate = static_cast<double>(hits) / static_cast<double>(probes.size());
  return {rate >= 0.8, std::to_string(hits) + "/" + std::to_string(probes.size()) + " probes attributed correctly (" +
                           std::to_string(none) + " never diverged, " + std::to_string(early) + " diverged early, " +
                           std::to_string(wrong_note) + " cited another note); need >= 80%"};
}

// Determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t compare_trees(const fs::path& a, const fs::path& b, std::size_t* files) {
  std::size_t diffs = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    ++*files;
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) {
      std::cerr << "  differs: " << rel.string() << "\n";
      ++diffs;
    }
  }
  return diffs;
}

Verdict determinism() {
  const fs::path root = scratch("determinism");
  std::ostringstream log;
  for (const char* run : {"a", "b"}) {
    app::RunConfig c;
    c.seeds = {3};
    c.train = acceptance_train_config();
    c.train.max_epochs = 2;
    c.out = root / run / "cohort";
    app::cmd_synth(c, log);
    c.cohort = c.out;
    c.out = root / run / "train";
    app::cmd_train(c, log);
    c.checkpoint = c.out / "model.cmt";
    c.out = root / run / "eval";
    app::cmd_eval(c, log);
  }
  std::size_t files = 0;
  const std::size_t diffs = compare_trees(root / "a", root / "b", &files);
  fs::remove_all(root);
  return {diffs == 0 && files > 0,
          std::to_string(files) + " files from synth/train/eval compared, " + std::to_string(diffs) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> only(argv + 1, argv + argc);
  auto wanted = [&](const std::string& key) {
    return only.empty() || std::find(only.begin(), only.end(), key) != only.end();
  };

  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Verdict()>& check) {
    const auto t0 = Clock::now();
    Verdict o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << fmt(seconds_since(t0), 3)
              << " s]" << std::endl;
  };

  if (wanted("gradients")) report("gradient correctness", gradients);
  if (wanted("metrics")) report("metric oracles", metric_oracles);
  if (wanted("masking")) report("masking invariants", masking);
  if (wanted("rollout")) report("rollout invariants", rollout);

  if (wanted("planted") || wanted("divergence")) {
    PlantedRun run;
    double elapsed = 0.0;
    const auto t0 = Clock::now();
    const fs::path dir = scratch("cohort");
    generate_cohort(run.synth, dir);
    run.cohort = load_cohort(dir);
    run.scaled = scale_cohort(run.cohort);
    run.train = acceptance_train_config();
    elapsed += seconds_since(t0);
    if (wanted("planted")) report("planted signal", [&] { return planted_signal(run, &elapsed); });
    if (wanted("divergence")) report("divergence attribution", [&] { return divergence(run, &elapsed); });
    fs::remove_all(dir);
  }
  if (wanted("determinism")) report("determinism", determinism);
  return failures == 0 ? 0 : 1;
}
