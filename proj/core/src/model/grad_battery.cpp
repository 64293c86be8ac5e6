#include "cmt/model/grad_battery.hpp"

#include <chrono>
#include <cstdio>
#include <functional>

#include "cmt/autodiff/grad_check.hpp"
#include "cmt/autodiff/layers.hpp"
#include "cmt/model/model.hpp"

namespace cmt {

bool GradBatteryReport::passed() const {
  for (const auto& e : entries)
    if (!e.passed()) return false;
  return !entries.empty();
}

namespace {

Tensor<double> uniform(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(-scale, scale);
  return t;
}

Mask random_mask(Rng& rng, std::size_t rows, std::size_t cols, bool ensure_row) {
  Mask m(rows, cols, false);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) m.set(i, j, rng.uniform() < 0.6);
    if (ensure_row && !m.row_any(i)) m.set(i, rng.below(cols), true);
  }
  return m;
}

/// One randomly drawn case: a scalar function and its inputs.
struct Case {
  ScalarFn f;
  std::vector<Tensor<double>> inputs;
  std::size_t max_coords = 0;
};

using CaseMaker = std::function<Case(Rng&)>;

/// Reduces a tensor-valued op to a scalar with a fixed random weighting.
ScalarFn weighted(std::function<Var(Graph<double>&, std::span<const Var>)> op, Tensor<double> w) {
  return [op = std::move(op), w = std::move(w)](Graph<double>& g, std::span<const Var> v) {
    return g.sum(g.mul(op(g, v), g.constant(w)));
  };
}

std::vector<std::pair<std::string, CaseMaker>> op_cases() {
  std::vector<std::pair<std::string, CaseMaker>> cases;
  cases.emplace_back("matmul", [](Rng& r) {
    return Case{weighted([](auto& g, auto v) { return g.matmul(v[0], v[1]); }, uniform(r, {3, 5})),
                {uniform(r, {3, 4}), uniform(r, {4, 5})}};
  });
  cases.emplace_back("matmul_nt", [](Rng& r) {
    return Case{weighted([](auto& g, auto v) { return g.matmul_nt(v[0], v[1]); }, uniform(r, {3, 5})),
                {uniform(r, {3, 4}), uniform(r, {5, 4})}};
  });
  cases.emplace_back("add", [](Rng& r) {
    return Case{weighted([](auto& g, auto v) { return g.add(v[0], v[1]); }, uniform(r, {3, 4})),
                {uniform(r, {3, 4}), uniform(r, {3, 4})}};
  });
  cases.emplace_back("add_bias", [](Rng& r) {
    return Case{weighted([](auto& g, auto v) { return g.add_bias(v[0], v[1]); }, uniform(r, {3, 4})),
                {uniform(r, {3, 4}), uniform(r, {4})}};
  });
  cases.emplace_back("scale", [](Rng& r) {
    const double c = r.uniform(-2.0, 2.0);
    return Case{weighted([c](auto& g, auto v) { return g.scale(v[0], c); }, uniform(r, {3, 4})), {uniform(r, {3, 4})}};
  });
  cases.emplace_back("mul", [](Rng& r) {
    return Case{weighted([](auto& g, auto v) { return g.mul(v[0], v[1]); }, uniform(r, {3, 4})),
                {uniform(r, {3, 4}), uniform(r, {3, 4})}};
  });
  cases.emplace_back("relu", [](Rng& r) {
    Tensor<double> x = uniform(r, {4, 5});
    // Keep inputs clear of the kink so central differences stay one-sided.
    for (auto& v : x.values()) v += v >= 0 ? 0.01 : -0.01;
    return Case{weighted([](auto& g, auto v) { return g.relu(v[0]); }, uniform(r, {4, 5})), {x}};
  });
  cases.emplace_back("dropout", [](Rng& r) {
    const std::uint64_t mask_seed = r.next();
    return Case{weighted(
                    [mask_seed](auto& g, auto v) {
                      Rng fixed(mask_seed);
                      return g.dropout(v[0], 0.3, &fixed);
                    },
                    uniform(r, {4, 5})),
                {uniform(r, {4, 5})}};
  });
  cases.emplace_back("layer_norm", [](Rng& r) {
    return Case{weighted([](auto& g, auto v) { return g.layer_norm(v[0], v[1], v[2]); }, uniform(r, {3, 6})),
                {uniform(r, {3, 6}), uniform(r, {6}, 1.5), uniform(r, {6})}};
  });
  cases.emplace_back("masked_softmax", [](Rng& r) {
    const Mask m = random_mask(r, 4, 5, r.below(4) != 0);
    return Case{weighted([m](auto& g, auto v) { return g.masked_softmax(v[0], m); }, uniform(r, {4, 5})),
                {uniform(r, {4, 5}, 2.0)}};
  });
  cases.emplace_back("zero_rows", [](Rng& r) {
    std::vector<std::uint8_t> keep{1, 0, 1};
    return Case{weighted([keep](auto& g, auto v) { return g.zero_rows(v[0], keep); }, uniform(r, {3, 4})),
                {uniform(r, {3, 4})}};
  });
  cases.emplace_back("select_row", [](Rng& r) {
    const std::size_t row = r.below(3);
    return Case{weighted([row](auto& g, auto v) { return g.select_row(v[0], row); }, uniform(r, {1, 4})),
                {uniform(r, {3, 4})}};
  });
  cases.emplace_back("slice_concat_cols", [](Rng& r) {
    return Case{weighted(
                    [](auto& g, auto v) {
                      std::vector<Var> parts{g.slice_cols(v[0], 2, 3), v[1], g.slice_cols(v[0], 0, 2)};
                      return g.concat_cols(parts);
                    },
                    uniform(r, {3, 7})),
                {uniform(r, {3, 5}), uniform(r, {3, 2})}};
  });
  cases.emplace_back("bce_with_logits", [](Rng& r) {
    Tensor<double> y({4, 3});
    for (auto& v : y.values()) v = r.below(2) ? 1.0 : 0.0;
    const Mask m = random_mask(r, 4, 3, true);
    return Case{[y, m](Graph<double>& g, std::span<const Var> v) { return g.bce_with_logits(v[0], y, m); },
                {uniform(r, {4, 3}, 3.0)}};
  });
  cases.emplace_back("linear_embed", [](Rng& r) {
    return Case{weighted([](auto& g, auto v) { return linear_embed(g, v[0], v[1], v[2]); }, uniform(r, {5, 6})),
                {uniform(r, {5, 4}), uniform(r, {4, 6}), uniform(r, {6})}};
  });
  cases.emplace_back("attention", [](Rng& r) {
    const Mask m = random_mask(r, 3, 4, r.below(4) != 0);
    return Case{weighted([m](auto& g, auto v) { return attention(g, v[0], v[1], v[2], m).out; }, uniform(r, {3, 3})),
                {uniform(r, {3, 3}), uniform(r, {4, 3}), uniform(r, {4, 3})}};
  });
  cases.emplace_back("transformer_block", [](Rng& r) {
    const std::size_t n = 3, m = 4, d = 4, hidden = 8;
    std::vector<Tensor<double>> in;
    for (int i = 0; i < 4; ++i) in.push_back(uniform(r, {d, d}, 0.8));
    for (int i = 0; i < 3; ++i) in.push_back(uniform(r, {d}, 0.3));  // bq, bv, bo
    in.push_back(Tensor<double>({d}, 1.0));
    in.push_back(uniform(r, {d}, 0.1));
    in.push_back(uniform(r, {d, hidden}, 0.8));
    in.push_back(uniform(r, {hidden}, 0.3));
    in.push_back(uniform(r, {hidden, d}, 0.8));
    in.push_back(uniform(r, {d}, 0.3));
    in.push_back(Tensor<double>({d}, 1.0));
    in.push_back(uniform(r, {d}, 0.1));
    in.push_back(uniform(r, {n, d}));
    in.push_back(uniform(r, {m, d}));
    const Mask mask = random_mask(r, n, m, true);
    return Case{weighted(
                    [mask](Graph<double>& g, std::span<const Var> v) {
                      BlockVars p{v[0], v[4], v[1], Var{}, v[2],  v[5],  v[3],  v[6],
                                  v[7], v[8], v[9], v[10], v[11], v[12], v[13], v[14]};
                      return transformer_block(g, v[15], v[16], mask, p, {}, nullptr).out;
                    },
                    uniform(r, {n, d})),
                in};
  });
  cases.emplace_back("full_model", [](Rng& r) {
    CrossModalConfig cfg;
    cfg.dropout = 0.0;
    ModelParams params = init_params(cfg, r.next());
    // Twice the initialization scale keeps attention away from uniform.
    for (auto& [name, t] : params.tensors)
      if (t.rank() == 2)
        for (auto& x : t.values()) x *= 2.0f;
    auto input = std::make_shared<StayInput>();
    input->stay_id = "toy";
    input->ehr = Tensor<float>::matrix(4, kEhrFeatures);
    for (auto& x : input->ehr.values()) x = static_cast<float>(r.normal());
    input->notes = Tensor<float>::matrix(3, kNoteFeatures);
    for (auto& x : input->notes.values()) x = static_cast<float>(r.normal());
    input->note_hours = {0.0, r.uniform(0.0, 2.0), r.uniform(2.0, 3.0)};
    std::sort(input->note_hours.begin(), input->note_hours.end());
    input->note_source = {0, 1, 2};
    Tensor<double> y({4, 1});
    for (auto& v : y.values()) v = r.below(2) ? 1.0 : 0.0;

    auto names = std::make_shared<std::vector<std::string>>();
    Case c;
    for (const auto& [name, t] : params.tensors) {
      names->push_back(name);
      c.inputs.push_back(t.cast<double>());
    }
    c.f = [cfg, input, names, y](Graph<double>& g, std::span<const Var> v) {
      ParamVars vars;
      for (std::size_t i = 0; i < names->size(); ++i) vars.emplace((*names)[i], v[i]);
      return g.bce_with_logits(forward(g, *input, vars, cfg, nullptr).logits, y, Mask(4, 1, true));
    };
    c.max_coords = 4;
    return c;
  });
  return cases;
}

}  // namespace

GradBatteryReport run_grad_battery(std::size_t instances, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  GradBatteryReport report;
  for (const auto& [name, make] : op_cases()) {
    GradBatteryEntry entry;
    entry.name = name;
    Rng rng(derive_seed(seed, name));
    for (std::size_t i = 0; i < instances; ++i) {
      Case c = make(rng);
      GradCheckOptions opts;
      opts.max_coords_per_input = c.max_coords;
      opts.sample_seed = rng.next();
      const GradCheckResult r = grad_check(c.f, c.inputs, opts);
      if (r.max_rel_error > entry.max_rel_error) {
        entry.max_rel_error = r.max_rel_error;
        char buf[160];
        std::snprintf(buf, sizeof buf, "instance %zu input %zu[%zu] analytic %.6g numeric %.6g", i, r.worst_input,
                      r.worst_index, r.worst_analytic, r.worst_numeric);
        entry.worst = buf;
      }
      entry.coords += r.coords_checked;
      ++entry.instances;
    }
    report.entries.push_back(entry);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace cmt
