#include "cmt/data/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace cmt {

namespace {

constexpr std::array<char, 4> kTensorMagic = {'C', 'M', 'T', '1'};
constexpr std::array<char, 4> kMapMagic = {'C', 'M', 'T', 'C'};
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(std::string("truncated ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void expect_magic(std::istream& in, const std::array<char, 4>& magic) {
  char got[4];
  if (!in.read(got, 4) || std::memcmp(got, magic.data(), 4) != 0)
    throw FormatError("bad magic, expected '" + std::string(magic.data(), 4) + "'");
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor<float>& t) {
  out.write(kTensorMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  for (float x : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(x));
}

Tensor<float> read_tensor(std::istream& in) {
  expect_magic(in, kTensorMagic);
  const std::uint32_t rank = get_u32(in, "tensor header");
  if (rank == 0 || rank > kMaxRank) throw FormatError("bad tensor rank " + std::to_string(rank));
  std::vector<std::size_t> shape(rank);
  for (auto& e : shape) e = get_u32(in, "tensor extents");
  const std::size_t n = Tensor<float>::count(shape);
  if (n > (std::size_t{1} << 28)) throw FormatError("tensor payload too large");
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(get_u32(in, "tensor payload"));
  return Tensor<float>(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_tensor(out, t);
}

Tensor<float> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  Tensor<float> t = read_tensor(in);
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path.string());
  return t;
}

void save_tensor_map(const std::filesystem::path& path, const TensorMap<float>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMapMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, t);
  }
}

TensorMap<float> load_tensor_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  expect_magic(in, kMapMagic);
  const std::uint32_t count = get_u32(in, "container header");
  TensorMap<float> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = get_u32(in, "entry name length");
    if (len > 4096) throw FormatError("entry name too long");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("truncated entry name");
    if (!out.emplace(name, read_tensor(in)).second) throw FormatError("duplicate entry '" + name + "'");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path.string());
  return out;
}

}  // namespace cmt
