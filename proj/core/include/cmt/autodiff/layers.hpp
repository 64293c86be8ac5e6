#pragma once

#include <cstddef>
#include <vector>

#include "cmt/autodiff/graph.hpp"
#include "cmt/autodiff/tensor.hpp"

namespace cmt {

/// Per-timestep linear map: out[t] = x[t] . W + b. This is a temporal
/// convolution of width 1 whose kernel spans the whole feature axis.
template <typename T>
Var linear_embed(Graph<T>& g, Var x, Var weight, Var bias);

/// Sinusoidal encoding: PE[t, 2i] = sin(t / 10000^(2i/width)), PE[t, 2i+1] = cos(.).
/// Throws on odd width or zero length.
template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t width);

struct AttentionVars {
  Var out;
  Var weights;
};

/// Scaled dot-product attention: weights = masked_softmax(Q K^T / sqrt(d), mask),
/// out = weights . V. Query rows with no visible key yield a zero output row.
template <typename T>
AttentionVars attention(Graph<T>& g, Var q, Var k, Var v, const Mask& mask);

/// Learnable tensors of one post-norm transformer block, as graph handles.
/// `bk` may be left invalid: a key bias shifts every logit of a row equally,
/// so softmax removes it.
struct BlockVars {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
  Var ln1_gain, ln1_bias;
  Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Var ln2_gain, ln2_bias;
};

template <typename T>
struct BlockOutput {
  Var out;
  /// One weights node per head (n x m).
  std::vector<Var> head_weights;
  /// Head-averaged attention weights, copied out for capture.
  Tensor<T> weights;
};

struct BlockOptions {
  std::size_t n_heads = 1;
  double dropout = 0.0;
};

/// y = LN(x_q + Dropout(Attn(x_q Wq, x_kv Wk, x_kv Wv) Wo));
/// y = LN(y + Dropout(FFN(y))), FFN = ReLU(y W1 + b1) W2 + b2.
/// Dropout is active only when `rng` is non-null.
template <typename T>
BlockOutput<T> transformer_block(Graph<T>& g, Var x_q, Var x_kv, const Mask& mask, const BlockVars& p,
                                 const BlockOptions& opts, Rng* rng);

}  // namespace cmt
