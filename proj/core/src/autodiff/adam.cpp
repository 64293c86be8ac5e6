#include "cmt/autodiff/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace cmt {

template <typename T>
void adam_step(TensorMap<T>& params, const TensorMap<T>& grads, AdamState<T>& state, double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("adam_step: learning rate must be >= 0");
  state.step += 1;
  const double b1 = state.config.beta1, b2 = state.config.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (auto& [name, param] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor<T>& g = it->second;
    if (!g.same_shape(param))
      throw std::invalid_argument("adam_step: gradient shape for '" + name + "' differs from parameter");
    auto& m = state.first_moment.try_emplace(name, param.shape()).first->second;
    auto& v = state.second_moment.try_emplace(name, param.shape()).first->second;
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / correction1) / (std::sqrt(vi / correction2) + state.config.eps);
      param[i] = static_cast<T>(static_cast<double>(param[i]) - update);
    }
  }
}

template void adam_step(TensorMap<float>&, const TensorMap<float>&, AdamState<float>&, double);
template void adam_step(TensorMap<double>&, const TensorMap<double>&, AdamState<double>&, double);

}  // namespace cmt
