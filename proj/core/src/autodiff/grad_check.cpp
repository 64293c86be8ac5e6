#include "cmt/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmt/util/rng.hpp"

namespace cmt {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor<double>>& inputs) {
  Graph<double> g;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(g.constant(t));
  return g.value(f(g, vars))[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& opts) {
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.parameter(t));
    Var loss = f(g, vars);
    g.backward(loss);
    for (Var v : vars) analytic.push_back(g.grad(v));
  }

  GradCheckResult result;
  Rng rng(opts.sample_seed);
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> coords(inputs[k].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords_per_input > 0 && coords.size() > opts.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng.engine());
      coords.resize(opts.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double original = probe[k][i];
      probe[k][i] = original + opts.step;
      const double up = evaluate(f, probe);
      probe[k][i] = original - opts.step;
      const double down = evaluate(f, probe);
      probe[k][i] = original;

      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++result.coords_checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = k;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace cmt
