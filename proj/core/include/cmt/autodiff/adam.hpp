#pragma once

#include <cstdint>

#include "cmt/autodiff/tensor.hpp"

namespace cmt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  TensorMap<T> first_moment;
  TensorMap<T> second_moment;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every tensor in `params` that has a
/// gradient in `grads`. Moments are created on first use. lr must be >= 0.
template <typename T>
void adam_step(TensorMap<T>& params, const TensorMap<T>& grads, AdamState<T>& state, double lr);

}  // namespace cmt
