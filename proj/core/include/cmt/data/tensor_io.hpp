#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "cmt/autodiff/tensor.hpp"

namespace cmt {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Single tensor ("CMT1"): magic, u32 ndim, ndim u32 extents, f32 payload;
// all little-endian, row-major. NaN encodes a missing value.
void write_tensor(std::ostream& out, const Tensor<float>& t);
Tensor<float> read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_tensor(const std::filesystem::path& path);

// Named tensors ("CMTC"): magic, u32 count, then per entry u32 name length,
// UTF-8 name bytes and one CMT1 record. Entries are written in name order.
void save_tensor_map(const std::filesystem::path& path, const TensorMap<float>& tensors);
TensorMap<float> load_tensor_map(const std::filesystem::path& path);

}  // namespace cmt
