#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cmt/autodiff/graph.hpp"

namespace cmt {

/// Builds a scalar loss from the given parameter handles. Must be
/// deterministic (no dropout).
using ScalarFn = std::function<Var(Graph<double>&, std::span<const Var>)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded random subset per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

/// Compares reverse-mode gradients against central differences. The error
/// per coordinate is |a - n| / max(1e-8, |a| + |n|); the maximum is returned.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& opts = {});

}  // namespace cmt
