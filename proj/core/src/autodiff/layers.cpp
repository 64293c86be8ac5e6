#include "cmt/autodiff/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cmt {

template <typename T>
Var linear_embed(Graph<T>& g, Var x, Var weight, Var bias) {
  const auto& X = g.value(x);
  const auto& W = g.value(weight);
  if (X.rank() != 2 || W.rank() != 2 || X.cols() != W.rows()) {
    throw std::invalid_argument("linear_embed: input " + X.shape_string() + " cannot be mapped by weight " +
                                W.shape_string());
  }
  return g.add_bias(g.matmul(x, weight), bias);
}

template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t width) {
  if (length == 0) throw std::invalid_argument("positional_encoding: length must be >= 1");
  if (width % 2 != 0) throw std::invalid_argument("positional_encoding: width must be even, got " + std::to_string(width));
  Tensor<T> pe = Tensor<T>::matrix(length, width);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < width / 2; ++i) {
      const double angle =
          static_cast<double>(t) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(width));
      pe(t, 2 * i) = static_cast<T>(std::sin(angle));
      pe(t, 2 * i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

template <typename T>
AttentionVars attention(Graph<T>& g, Var q, Var k, Var v, const Mask& mask) {
  const auto& Q = g.value(q);
  const auto& K = g.value(k);
  const auto& V = g.value(v);
  if (Q.cols() != K.cols() || K.cols() != V.cols() || K.rows() != V.rows()) {
    throw std::invalid_argument("attention: incompatible Q " + Q.shape_string() + ", K " + K.shape_string() +
                                ", V " + V.shape_string());
  }
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(Q.cols()));
  Var logits = g.scale(g.matmul_nt(q, k), inv_sqrt_d);
  Var weights = g.masked_softmax(logits, mask);
  return {g.matmul(weights, v), weights};
}

template <typename T>
BlockOutput<T> transformer_block(Graph<T>& g, Var x_q, Var x_kv, const Mask& mask, const BlockVars& p,
                                 const BlockOptions& opts, Rng* rng) {
  const std::size_t d = g.value(x_q).cols();
  if (g.value(x_kv).cols() != d)
    throw std::invalid_argument("transformer_block: query and key/value widths differ");
  const std::size_t heads = opts.n_heads == 0 ? 1 : opts.n_heads;
  if (d % heads != 0) throw std::invalid_argument("transformer_block: width not divisible by head count");
  const T rate = static_cast<T>(opts.dropout);

  Var q = linear_embed(g, x_q, p.wq, p.bq);
  Var k = p.bk.valid() ? linear_embed(g, x_kv, p.wk, p.bk) : g.matmul(x_kv, p.wk);
  Var v = linear_embed(g, x_kv, p.wv, p.bv);

  BlockOutput<T> result;
  Var context;
  if (heads == 1) {
    auto att = attention(g, q, k, v, mask);
    context = att.out;
    result.head_weights.push_back(att.weights);
    result.weights = g.value(att.weights);
  } else {
    const std::size_t dh = d / heads;
    std::vector<Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      auto att = attention(g, g.slice_cols(q, h * dh, dh), g.slice_cols(k, h * dh, dh), g.slice_cols(v, h * dh, dh),
                           mask);
      outs.push_back(att.out);
      result.head_weights.push_back(att.weights);
    }
    context = g.concat_cols(outs);
    result.weights = g.value(result.head_weights[0]);
    for (std::size_t h = 1; h < heads; ++h) {
      const auto& w = g.value(result.head_weights[h]);
      for (std::size_t i = 0; i < w.size(); ++i) result.weights[i] += w[i];
    }
    for (auto& x : result.weights.values()) x /= static_cast<T>(heads);
  }

  Var attn_out = g.dropout(linear_embed(g, context, p.wo, p.bo), rate, rng);
  Var y = g.layer_norm(g.add(x_q, attn_out), p.ln1_gain, p.ln1_bias);
  Var hidden = g.relu(linear_embed(g, y, p.ffn_w1, p.ffn_b1));
  Var ffn = g.dropout(linear_embed(g, hidden, p.ffn_w2, p.ffn_b2), rate, rng);
  result.out = g.layer_norm(g.add(y, ffn), p.ln2_gain, p.ln2_bias);
  return result;
}

template Var linear_embed(Graph<float>&, Var, Var, Var);
template Var linear_embed(Graph<double>&, Var, Var, Var);
template Tensor<float> positional_encoding(std::size_t, std::size_t);
template Tensor<double> positional_encoding(std::size_t, std::size_t);
template AttentionVars attention(Graph<float>&, Var, Var, Var, const Mask&);
template AttentionVars attention(Graph<double>&, Var, Var, Var, const Mask&);
template BlockOutput<float> transformer_block(Graph<float>&, Var, Var, const Mask&, const BlockVars&,
                                              const BlockOptions&, Rng*);
template BlockOutput<double> transformer_block(Graph<double>&, Var, Var, const Mask&, const BlockVars&,
                                               const BlockOptions&, Rng*);

}  // namespace cmt
