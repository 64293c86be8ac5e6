#include "cmt/traineval/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "cmt/autodiff/adam.hpp"
#include "cmt/util/rng.hpp"

namespace cmt {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train: lr must be a finite value >= 0");
  if (max_epochs == 0) throw std::invalid_argument("train: max_epochs must be >= 1");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"batch_size", c.batch_size}, {"lr", c.lr}, {"max_epochs", c.max_epochs}, {"patience", c.patience},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  static const std::set<std::string> known = {"batch_size", "lr", "max_epochs", "patience", "seed"};
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw std::invalid_argument("train config: unknown key '" + k + "'");
  TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.patience = j.value("patience", d.patience);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

const std::vector<Example>& TaskDataset::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  return test;
}

ScaledCohort scale_cohort(const Cohort& cohort) {
  std::vector<StayRecord> train_stays;
  for (std::size_t i : cohort.indices(Split::kTrain)) train_stays.push_back(cohort.stays[i]);
  if (train_stays.empty()) throw std::invalid_argument("cohort has no training stays");
  ScaledCohort out;
  out.scaler = fit_scaler(train_stays);
  out.stays = cohort.stays;
  for (std::size_t i = 0; i < out.stays.size(); ++i) {
    apply_scaler(out.stays[i], out.scaler);
    out.splits.push_back(cohort.manifest.stays[i].split);
  }
  return out;
}

Example make_example(const StayRecord& scaled_stay, Task task, const NoteTypeSet& allowed) {
  StayRecord s = scaled_stay;
  filter_note_types(s, allowed);
  mask_last_note(s);
  return Example{make_stay_input(s), make_task_targets(s, task)};
}

TaskDataset make_dataset(const ScaledCohort& scaled, Task task, const NoteTypeSet& allowed) {
  TaskDataset d;
  d.task = task;
  d.scaler = scaled.scaler;
  d.allowed_types = allowed;
  for (std::size_t i = 0; i < scaled.stays.size(); ++i) {
    const StayRecord& s = scaled.stays[i];
    if (task == Task::kInHospitalMortality && static_cast<double>(s.hours()) < kIhmHours) continue;
    Example ex = make_example(s, task, allowed);
    switch (scaled.splits[i]) {
      case Split::kTrain: d.train.push_back(std::move(ex)); break;
      case Split::kVal: d.val.push_back(std::move(ex)); break;
      case Split::kTest: d.test.push_back(std::move(ex)); break;
    }
  }
  return d;
}

void to_json(json& j, const EpochRecord& r) {
  j = json{{"epoch", r.epoch},
           {"steps", r.steps},
           {"train_loss", r.train_loss},
           {"val_metric", r.val_metric ? json(*r.val_metric) : json(nullptr)},
           {"improved", r.improved}};
}

namespace {

struct StayStep {
  double loss = 0.0;
  bool used = false;
};

/// Forward + backward of one stay on its own tape; gradients scaled by
/// `weight` are added into `accum`.
StayStep stay_backward(const ModelParams& params, const Example& ex, float weight, Rng* dropout_rng,
                       TensorMap<float>& accum) {
  Graph<float> g;
  ParamVars vars = bind_parameters(g, params.tensors);
  auto out = forward(g, ex.input, vars, params.config, dropout_rng);
  auto pooled = pool_for_task(g, out.logits, params.config.task);
  if (!pooled) return {};
  Var loss = g.bce_with_logits(*pooled, ex.targets.targets, ex.targets.mask);
  StayStep step{static_cast<double>(g.value(loss)[0]), true};
  g.backward(loss, weight);
  for (const auto& [name, v] : vars) {
    const auto& gr = g.grad(v);
    auto [it, inserted] = accum.try_emplace(name, gr);
    if (!inserted) {
      auto& dst = it->second;
      for (std::size_t i = 0; i < gr.size(); ++i) dst[i] += gr[i];
    }
  }
  return step;
}

void check_finite(double loss, std::size_t epoch, std::uint64_t step, const std::string& stay_id) {
  if (std::isfinite(loss)) return;
  std::ostringstream os;
  os << "training diverged: loss " << loss << " at epoch " << epoch << ", step " << step << ", stay " << stay_id;
  throw TrainingDiverged(os.str());
}

double run_batch(ModelParams& params, std::span<const Example* const> batch, AdamState<float>& adam, double lr,
                 std::uint64_t seed, std::uint64_t step, std::size_t epoch) {
  std::vector<const Example*> usable;
  for (const Example* ex : batch)
    if (std::any_of(ex->targets.mask.bits.begin(), ex->targets.mask.bits.end(), [](std::uint8_t b) { return b != 0; }))
      usable.push_back(ex);
  if (usable.empty()) return 0.0;
  const float weight = 1.0f / static_cast<float>(usable.size());
  TensorMap<float> grads;
  double total = 0.0;
  for (std::size_t k = 0; k < usable.size(); ++k) {
    Rng dropout(derive_seed(derive_seed(seed, "dropout"), step * 1000003ULL + k));
    const StayStep s = stay_backward(params, *usable[k], weight, &dropout, grads);
    check_finite(s.loss, epoch, step, usable[k]->input.stay_id);
    total += s.loss;
  }
  adam_step(params.tensors, grads, adam, lr);
  for (const auto& [name, t] : params.tensors) {
    const auto v = t.values();
    if (std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); })) continue;
    std::ostringstream os;
    os << "training diverged: parameter " << name << " became non-finite at epoch " << epoch << ", step " << step;
    throw TrainingDiverged(os.str());
  }
  return total / static_cast<double>(usable.size());
}

}  // namespace

double stay_loss(const ModelParams& params, const Example& ex) {
  Graph<float> g;
  ParamVars vars;
  for (const auto& [name, t] : params.tensors) vars.emplace(name, g.constant(t));
  auto out = forward(g, ex.input, vars, params.config, nullptr);
  auto pooled = pool_for_task(g, out.logits, params.config.task);
  if (!pooled) throw std::invalid_argument("stay_loss: stay has no label for this task");
  return g.value(g.bce_with_logits(*pooled, ex.targets.targets, ex.targets.mask))[0];
}

std::vector<double> fit_steps(ModelParams& params, std::span<const Example> examples, const TrainConfig& cfg,
                              std::size_t steps) {
  cfg.validate();
  if (examples.empty()) throw std::invalid_argument("fit_steps: no examples");
  AdamState<float> adam;
  std::vector<const Example*> order;
  for (const auto& e : examples) order.push_back(&e);
  std::vector<double> losses;
  std::size_t cursor = 0;
  for (std::uint64_t step = 0; step < steps; ++step) {
    std::vector<const Example*> batch;
    for (std::size_t k = 0; k < std::min(cfg.batch_size, order.size()); ++k) batch.push_back(order[cursor++ % order.size()]);
    losses.push_back(run_batch(params, batch, adam, cfg.lr, cfg.seed, step, 0));
  }
  return losses;
}

std::optional<double> selection_metric(const MetricReport& r, Task task) {
  return task == Task::kPhenotyping ? r.macro_auc : r.auprc;
}

TrainResult train(const TaskDataset& data, const CrossModalConfig& model_cfg, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  model_cfg.validate();
  if (model_cfg.task != data.task) throw std::invalid_argument("train: model task differs from dataset task");
  if (data.train.empty()) throw std::invalid_argument("train: no training examples");

  ModelParams params = init_params(model_cfg, cfg.seed);
  AdamState<float> adam;
  TrainResult result;
  result.params = params;
  std::optional<double> best;
  std::size_t since_best = 0;

  std::vector<const Example*> order;
  for (const auto& e : data.train) order.push_back(&e);
  Rng shuffle(derive_seed(cfg.seed, "shuffle"));

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::span<const Example* const> batch(order.data() + begin, end - begin);
      loss_sum += run_batch(params, batch, adam, cfg.lr, cfg.seed, result.steps, epoch);
      ++result.steps;
      ++rec.steps;
    }
    rec.train_loss = loss_sum / static_cast<double>(rec.steps);

    if (!data.val.empty()) rec.val_metric = selection_metric(evaluate(params, data.val, data.task).report, data.task);
    const bool first = result.history.empty();
    rec.improved = first || (rec.val_metric && (!best || *rec.val_metric > *best));
    if (rec.improved) {
      if (rec.val_metric) best = rec.val_metric;
      result.params = params;
      result.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec, params);
    if (since_best >= cfg.patience && cfg.patience > 0) break;
  }
  return result;
}

std::size_t default_threads() {
  if (const char* env = std::getenv("CMT_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n >= 1) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += threads) fn(i);
    });
}

}  // namespace

EvalResult evaluate(const ModelParams& params, std::span<const Example> examples, Task task, std::size_t threads) {
  EvalResult result;
  result.probabilities.resize(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    const Prediction p = predict(params, examples[i].input);
    auto pooled = pool_for_task(p.logits, task);
    if (!pooled) return;
    auto& probs = result.probabilities[i];
    for (float z : pooled->values()) probs.push_back(sigmoid(z));
  });

  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  std::vector<const Example*> kept;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& t = examples[i].targets;
    const auto& probs = result.probabilities[i];
    if (probs.empty()) continue;
    kept.push_back(&examples[i]);
    for (std::size_t k = 0; k < probs.size(); ++k) {
      if (!t.mask.bits[k]) continue;
      scores.push_back(probs[k]);
      labels.push_back(t.targets[k] > 0.5f ? 1 : 0);
    }
  }
  MetricReport& r = result.report;
  r.n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  r.n_neg = labels.size() - r.n_pos;
  r.auroc = auroc(scores, labels);
  r.auprc = auprc(scores, labels);
  if (task == Task::kPhenotyping && !kept.empty()) {
    const std::size_t k = kPhenotypes;
    Tensor<double> s = Tensor<double>::matrix(kept.size(), k);
    Tensor<double> l = Tensor<double>::matrix(kept.size(), k);
    std::size_t row = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto& probs = result.probabilities[i];
      if (probs.empty()) continue;
      for (std::size_t c = 0; c < k; ++c) {
        s(row, c) = probs[c];
        l(row, c) = examples[i].targets.targets[c];
      }
      ++row;
    }
    const MacroMicro mm = macro_micro_auc(s, l);
    r.macro_auc = mm.macro;
    r.micro_auc = mm.micro;
  }
  return result;
}

}  // namespace cmt
