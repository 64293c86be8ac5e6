#include <benchmark/benchmark.h>

#include <vector>

#include "cmt/autodiff/graph.hpp"
#include "cmt/model/model.hpp"
#include "cmt/traineval/metrics.hpp"

namespace {

using namespace cmt;

Tensor<float> random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Tensor<float> t = Tensor<float>::matrix(r, c);
  for (auto& x : t.values()) x = static_cast<float>(rng.normal());
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor<float> a = random_matrix(rng, n, n), b = random_matrix(rng, n, n);
  for (auto _ : state) {
    Graph<float> g;
    Var out = g.matmul(g.constant(a), g.constant(b));
    benchmark::DoNotOptimize(g.value(out).data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

StayInput stay_input(Rng& rng, std::size_t hours, std::size_t notes) {
  StayInput in;
  in.stay_id = "bench";
  in.ehr = random_matrix(rng, hours, kEhrFeatures);
  in.notes = random_matrix(rng, notes, kNoteFeatures);
  for (std::size_t j = 0; j < notes; ++j) {
    in.note_hours.push_back(static_cast<double>(j * hours) / static_cast<double>(notes));
    in.note_source.push_back(j);
  }
  return in;
}

void BM_Forward(benchmark::State& state) {
  Rng rng(2);
  CrossModalConfig cfg;
  cfg.mode = static_cast<Mode>(state.range(1));
  const ModelParams p = init_params(cfg, 3);
  const StayInput in = stay_input(rng, static_cast<std::size_t>(state.range(0)), 30);
  for (auto _ : state) benchmark::DoNotOptimize(predict(p, in).logits.data());
}
BENCHMARK(BM_Forward)->ArgsProduct({{48, 96}, {static_cast<int>(Mode::kEhrOnly), static_cast<int>(Mode::kCrossModal)}});

void BM_ForwardBackward(benchmark::State& state) {
  Rng rng(4);
  CrossModalConfig cfg;
  const ModelParams p = init_params(cfg, 5);
  const auto hours = static_cast<std::size_t>(state.range(0));
  const StayInput in = stay_input(rng, hours, 30);
  Tensor<float> targets = Tensor<float>::matrix(hours, 1);
  Mask mask(hours, 1, true);
  for (auto _ : state) {
    Graph<float> g;
    auto vars = bind_parameters(g, p.tensors);
    Rng dropout(6);
    auto out = forward(g, in, vars, cfg, &dropout);
    Var loss = g.bce_with_logits(out.logits, targets, mask);
    g.backward(loss);
    benchmark::DoNotOptimize(g.grad(vars.begin()->second).data());
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(48)->Arg(96);

void BM_Metrics(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  std::vector<double> scores(n);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = rng.uniform();
    labels[i] = rng.uniform() < 0.05 ? 1 : 0;
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(auroc(scores, labels));
    benchmark::DoNotOptimize(auprc(scores, labels));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Metrics)->Arg(7000)->Arg(70000);

}  // namespace

BENCHMARK_MAIN();
