#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cmt/autodiff/tensor.hpp"
#include "cmt/util/rng.hpp"

namespace cmt {

/// Handle to a node in a Graph.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatMul,
  kMatMulNT,
  kAdd,
  kAddBias,
  kScale,
  kMul,
  kRelu,
  kDropout,
  kLayerNorm,
  kMaskedSoftmax,
  kZeroRows,
  kSelectRow,
  kSliceCols,
  kConcatCols,
  kSum,
  kBceWithLogits,
};

/// Reverse-mode tape. Nodes are appended in creation order, which is a
/// topological order; backward() walks it in reverse. One graph per forward
/// pass; graphs are not shared between threads.
template <typename T>
class Graph {
 public:
  Graph() { nodes_.reserve(128); }

  /// Leaf that never receives a gradient (data, positional encodings).
  Var constant(Tensor<T> value);
  /// Leaf that accumulates a gradient.
  Var parameter(Tensor<T> value);

  Var matmul(Var a, Var b);     // (n x k) . (k x m)
  Var matmul_nt(Var a, Var b);  // (n x k) . (m x k)^T
  Var add(Var a, Var b);
  Var add_bias(Var a, Var bias);  // rows of a (n x m) plus bias (m)
  Var scale(Var a, T factor);
  Var mul(Var a, Var b);  // elementwise
  Var relu(Var a);
  /// Inverted dropout. rate == 0 or rng == nullptr returns `a` unchanged.
  Var dropout(Var a, T rate, Rng* rng);
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5));
  /// Row softmax over allowed positions. Masked entries are exactly 0 and a
  /// row with no allowed position is all zeros.
  Var masked_softmax(Var logits, const Mask& mask);
  /// Rows with keep[r] == 0 become exactly 0.
  Var zero_rows(Var a, std::vector<std::uint8_t> keep);
  Var select_row(Var a, std::size_t row);
  Var slice_cols(Var a, std::size_t begin, std::size_t count);
  Var concat_cols(std::span<const Var> parts);
  Var sum(Var a);
  /// Mean binary cross-entropy over positions where mask is true.
  Var bce_with_logits(Var logits, const Tensor<T>& targets, const Mask& mask);

  /// Accumulates d(loss)/d(node) for every node; `seed` scales the output
  /// gradient (used for averaging per-stay losses inside a batch).
  void backward(Var loss, T seed = T(1));

  const Tensor<T>& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  /// Gradient of `v`; zeros if nothing flowed into it.
  const Tensor<T>& grad(Var v);
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }
  OpKind kind(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).kind; }
  std::span<const std::int32_t> inputs(Var v) const {
    return nodes_.at(static_cast<std::size_t>(v.id)).inputs;
  }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::int32_t> inputs;
    bool requires_grad = false;
    std::function<void(Graph&, std::size_t)> backprop;
  };

  Var push(OpKind kind, Tensor<T> value, std::vector<std::int32_t> inputs,
           std::function<void(Graph&, std::size_t)> backprop);
  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
  Tensor<T>& grad_buffer(std::int32_t id);

  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

namespace kernels {

// c (n x m) += a (n x k) . b (k x m)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m);
// c (k x m) += a^T . b with a (n x k), b (n x m)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

}  // namespace kernels

}  // namespace cmt
