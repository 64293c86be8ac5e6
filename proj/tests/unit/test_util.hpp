#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "cmt/autodiff/tensor.hpp"
#include "cmt/util/rng.hpp"

namespace cmt::testing {

template <typename T = double>
Tensor<T> random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& x : t.values()) x = static_cast<T>(rng.uniform(-scale, scale));
  return t;
}

inline Mask random_mask(Rng& rng, std::size_t rows, std::size_t cols, double p_allow, bool ensure_row) {
  Mask m(rows, cols, false);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) m.set(i, j, rng.uniform() < p_allow);
    if (ensure_row && cols > 0 && !m.row_any(i)) m.set(i, rng.below(cols), true);
  }
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cmt_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace cmt::testing
