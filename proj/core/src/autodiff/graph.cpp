#include "cmt/autodiff/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cmt {

namespace kernels {

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* crow = c + i * m;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      // Exact zeros (masked attention weights, dead ReLUs) contribute nothing.
      if (aip == T(0)) continue;
      const T* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t p = 0; p < n; ++p) {
    const T* arow = a + p * k;
    const T* brow = b + p * m;
    for (std::size_t i = 0; i < k; ++i) {
      const T api = arow[i];
      if (api == T(0)) continue;
      T* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += api * brow[j];
    }
  }
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  const std::size_t n = a.rows(), m = a.cols();
  Tensor<T> out = Tensor<T>::matrix(m, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(j, i) = a(i, j);
  return out;
}

template void gemm_nn<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void gemm_nn<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
template void gemm_tn<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void gemm_tn<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
template Tensor<float> transpose(const Tensor<float>&);
template Tensor<double> transpose(const Tensor<double>&);

}  // namespace kernels

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

template <typename T>
void require_matrix(const char* op, const Tensor<T>& t, const char* name) {
  if (t.rank() != 2) shape_error(op, std::string(name) + " must be a matrix, got " + t.shape_string());
}

template <typename T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

template <typename T>
Var Graph<T>::push(OpKind kind, Tensor<T> value, std::vector<std::int32_t> inputs,
                   std::function<void(Graph&, std::size_t)> backprop) {
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  n.requires_grad = false;
  for (auto id : inputs) n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(id)].requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(std::int32_t id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
const Tensor<T>& Graph<T>::grad(Var v) {
  return grad_buffer(v.id);
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  return push(OpKind::kLeaf, std::move(value), {}, nullptr);
}

template <typename T>
Var Graph<T>::parameter(Tensor<T> value) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require_matrix("matmul", A, "lhs");
  require_matrix("matmul", B, "rhs");
  if (A.cols() != B.rows())
    shape_error("matmul", "inner extents differ: " + A.shape_string() + " . " + B.shape_string());
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Tensor<T> out = Tensor<T>::matrix(n, m);
  kernels::gemm_nn(A.data(), B.data(), out.data(), n, k, m);
  return push(OpKind::kMatMul, std::move(out), {a.id, b.id}, [a, b, n, k, m](Graph& g, std::size_t self) {
    const Tensor<T>& dC = g.nodes_[self].grad;
    if (g.nodes_[a.id].requires_grad) {
      Tensor<T> Bt = kernels::transpose(g.nodes_[b.id].value);
      kernels::gemm_nn(dC.data(), Bt.data(), g.grad_buffer(a.id).data(), n, m, k);
    }
    if (g.nodes_[b.id].requires_grad) {
      kernels::gemm_tn(g.nodes_[a.id].value.data(), dC.data(), g.grad_buffer(b.id).data(), n, k, m);
    }
  });
}

template <typename T>
Var Graph<T>::matmul_nt(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require_matrix("matmul_nt", A, "lhs");
  require_matrix("matmul_nt", B, "rhs");
  if (A.cols() != B.cols())
    shape_error("matmul_nt", "inner extents differ: " + A.shape_string() + " . " + B.shape_string() + "^T");
  const std::size_t n = A.rows(), k = A.cols(), m = B.rows();
  Tensor<T> out = Tensor<T>::matrix(n, m);
  Tensor<T> Bt = kernels::transpose(B);
  kernels::gemm_nn(A.data(), Bt.data(), out.data(), n, k, m);
  return push(OpKind::kMatMulNT, std::move(out), {a.id, b.id}, [a, b, n, k, m](Graph& g, std::size_t self) {
    const Tensor<T>& dC = g.nodes_[self].grad;
    if (g.nodes_[a.id].requires_grad) {
      kernels::gemm_nn(dC.data(), g.nodes_[b.id].value.data(), g.grad_buffer(a.id).data(), n, m, k);
    }
    if (g.nodes_[b.id].requires_grad) {
      kernels::gemm_tn(dC.data(), g.nodes_[a.id].value.data(), g.grad_buffer(b.id).data(), n, m, k);
    }
  });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (!A.same_shape(B)) shape_error("add", A.shape_string() + " vs " + B.shape_string());
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return push(OpKind::kAdd, std::move(out), {a.id, b.id}, [a, b](Graph& g, std::size_t self) {
    const Tensor<T>& d = g.nodes_[self].grad;
    for (Var v : {a, b}) {
      if (!g.nodes_[v.id].requires_grad) continue;
      auto& dst = g.grad_buffer(v.id);
      for (std::size_t i = 0; i < d.size(); ++i) dst[i] += d[i];
    }
  });
}

template <typename T>
Var Graph<T>::add_bias(Var a, Var bias) {
  const auto& A = value(a);
  const auto& b = value(bias);
  require_matrix("add_bias", A, "input");
  if (b.size() != A.cols())
    shape_error("add_bias", "bias " + b.shape_string() + " does not match width of " + A.shape_string());
  Tensor<T> out = A;
  const std::size_t n = A.rows(), m = A.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += b[j];
  return push(OpKind::kAddBias, std::move(out), {a.id, bias.id}, [a, bias, n, m](Graph& g, std::size_t self) {
    const Tensor<T>& d = g.nodes_[self].grad;
    if (g.nodes_[a.id].requires_grad) {
      auto& dst = g.grad_buffer(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) dst[i] += d[i];
    }
    if (g.nodes_[bias.id].requires_grad) {
      auto& db = g.grad_buffer(bias.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) db[j] += d[i * m + j];
    }
  });
}

template <typename T>
Var Graph<T>::scale(Var a, T factor) {
  Tensor<T> out = value(a);
  for (auto& x : out.values()) x *= factor;
  return push(OpKind::kScale, std::move(out), {a.id}, [a, factor](Graph& g, std::size_t self) {
    const Tensor<T>& d = g.nodes_[self].grad;
    auto& dst = g.grad_buffer(a.id);
    for (std::size_t i = 0; i < d.size(); ++i) dst[i] += factor * d[i];
  });
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (!A.same_shape(B)) shape_error("mul", A.shape_string() + " vs " + B.shape_string());
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return push(OpKind::kMul, std::move(out), {a.id, b.id}, [a, b](Graph& g, std::size_t self) {
    const Tensor<T>& d = g.nodes_[self].grad;
    if (g.nodes_[a.id].requires_grad) {
      auto& da = g.grad_buffer(a.id);
      const auto& bv = g.nodes_[b.id].value;
      for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i] * bv[i];
    }
    if (g.nodes_[b.id].requires_grad) {
      auto& db = g.grad_buffer(b.id);
      const auto& av = g.nodes_[a.id].value;
      for (std::size_t i = 0; i < d.size(); ++i) db[i] += d[i] * av[i];
    }
  });
}

template <typename T>
Var Graph<T>::relu(Var a) {
  Tensor<T> out = value(a);
  for (auto& x : out.values()) x = x > T(0) ? x : T(0);
  return push(OpKind::kRelu, std::move(out), {a.id}, [a](Graph& g, std::size_t self) {
    const Tensor<T>& d = g.nodes_[self].grad;
    const Tensor<T>& y = g.nodes_[self].value;
    auto& dst = g.grad_buffer(a.id);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (y[i] > T(0)) dst[i] += d[i];
  });
}

template <typename T>
Var Graph<T>::dropout(Var a, T rate, Rng* rng) {
  if (rng == nullptr || rate <= T(0)) return a;
  if (rate >= T(1)) throw std::invalid_argument("dropout: rate must be < 1");
  const T keep_scale = T(1) / (T(1) - rate);
  Tensor<T> out = value(a);
  std::vector<T> factors(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    factors[i] = rng->uniform() < static_cast<double>(rate) ? T(0) : keep_scale;
    out[i] *= factors[i];
  }
  return push(OpKind::kDropout, std::move(out), {a.id},
              [a, factors = std::move(factors)](Graph& g, std::size_t self) {
                const Tensor<T>& d = g.nodes_[self].grad;
                auto& dst = g.grad_buffer(a.id);
                for (std::size_t i = 0; i < d.size(); ++i) dst[i] += d[i] * factors[i];
              });
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gain, Var bias, T eps) {
  const auto& X = value(x);
  const auto& G = value(gain);
  const auto& B = value(bias);
  require_matrix("layer_norm", X, "input");
  const std::size_t n = X.rows(), m = X.cols();
  if (G.size() != m || B.size() != m)
    shape_error("layer_norm", "gain/bias width must be " + std::to_string(m));
  Tensor<T> out = Tensor<T>::matrix(n, m);
  Tensor<T> xhat = Tensor<T>::matrix(n, m);
  std::vector<T> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = X.data() + i * m;
    T mean = 0;
    for (std::size_t j = 0; j < m; ++j) mean += row[j];
    mean /= static_cast<T>(m);
    T var = 0;
    for (std::size_t j = 0; j < m; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(m);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      const T h = (row[j] - mean) * inv_std[i];
      xhat[i * m + j] = h;
      out[i * m + j] = G[j] * h + B[j];
    }
  }
  return push(OpKind::kLayerNorm, std::move(out), {x.id, gain.id, bias.id},
              [x, gain, bias, n, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g,
                                                                                         std::size_t self) {
                const Tensor<T>& d = g.nodes_[self].grad;
                if (g.nodes_[gain.id].requires_grad) {
                  auto& dg = g.grad_buffer(gain.id);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) dg[j] += d[i * m + j] * xhat[i * m + j];
                }
                if (g.nodes_[bias.id].requires_grad) {
                  auto& db = g.grad_buffer(bias.id);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) db[j] += d[i * m + j];
                }
                if (g.nodes_[x.id].requires_grad) {
                  const auto& G = g.nodes_[gain.id].value;
                  auto& dx = g.grad_buffer(x.id);
                  std::vector<T> dh(m);
                  for (std::size_t i = 0; i < n; ++i) {
                    T mean_dh = 0, mean_dh_h = 0;
                    for (std::size_t j = 0; j < m; ++j) {
                      dh[j] = d[i * m + j] * G[j];
                      mean_dh += dh[j];
                      mean_dh_h += dh[j] * xhat[i * m + j];
                    }
                    mean_dh /= static_cast<T>(m);
                    mean_dh_h /= static_cast<T>(m);
                    for (std::size_t j = 0; j < m; ++j)
                      dx[i * m + j] += inv_std[i] * (dh[j] - mean_dh - xhat[i * m + j] * mean_dh_h);
                  }
                }
              });
}

template <typename T>
Var Graph<T>::masked_softmax(Var logits, const Mask& mask) {
  const auto& L = value(logits);
  require_matrix("masked_softmax", L, "logits");
  const std::size_t n = L.rows(), m = L.cols();
  if (mask.rows != n || mask.cols != m)
    shape_error("masked_softmax", "mask (" + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                                      ") does not match logits " + L.shape_string());
  Tensor<T> out = Tensor<T>::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    T row_max = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask(i, j)) continue;
      any = true;
      row_max = std::max(row_max, L(i, j));
    }
    if (!any) continue;
    T total = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask(i, j)) continue;
      const T e = std::exp(L(i, j) - row_max);
      out(i, j) = e;
      total += e;
    }
    for (std::size_t j = 0; j < m; ++j)
      if (mask(i, j)) out(i, j) /= total;
  }
  return push(OpKind::kMaskedSoftmax, std::move(out), {logits.id}, [logits, n, m](Graph& g, std::size_t self) {
    const Tensor<T>& d = g.nodes_[self].grad;
    const Tensor<T>& y = g.nodes_[self].value;
    auto& dst = g.grad_buffer(logits.id);
    for (std::size_t i = 0; i < n; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < m; ++j) dot += y[i * m + j] * d[i * m + j];
      // Masked entries have y == 0, so their gradient is exactly 0.
      for (std::size_t j = 0; j < m; ++j) {
        const T yij = y[i * m + j];
        if (yij != T(0)) dst[i * m + j] += yij * (d[i * m + j] - dot);
      }
    }
  });
}

template <typename T>
Var Graph<T>::zero_rows(Var a, std::vector<std::uint8_t> keep) {
  const auto& A = value(a);
  require_matrix("zero_rows", A, "input");
  if (keep.size() != A.rows()) shape_error("zero_rows", "keep vector length differs from row count");
  Tensor<T> out = A;
  const std::size_t m = A.cols();
  for (std::size_t i = 0; i < A.rows(); ++i)
    if (!keep[i]) std::fill_n(out.data() + i * m, m, T(0));
  return push(OpKind::kZeroRows, std::move(out), {a.id}, [a, m, keep = std::move(keep)](Graph& g, std::size_t self) {
    const Tensor<T>& d = g.nodes_[self].grad;
    auto& dst = g.grad_buffer(a.id);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (!keep[i]) continue;
      for (std::size_t j = 0; j < m; ++j) dst[i * m + j] += d[i * m + j];
    }
  });
}

template <typename T>
Var Graph<T>::select_row(Var a, std::size_t row) {
  const auto& A = value(a);
  require_matrix("select_row", A, "input");
  if (row >= A.rows())
    shape_error("select_row", "row " + std::to_string(row) + " out of range for " + A.shape_string());
  const std::size_t m = A.cols();
  Tensor<T> out = Tensor<T>::matrix(1, m);
  std::copy_n(A.data() + row * m, m, out.data());
  return push(OpKind::kSelectRow, std::move(out), {a.id}, [a, row, m](Graph& g, std::size_t self) {
    const Tensor<T>& d = g.nodes_[self].grad;
    auto& dst = g.grad_buffer(a.id);
    for (std::size_t j = 0; j < m; ++j) dst[row * m + j] += d[j];
  });
}

template <typename T>
Var Graph<T>::slice_cols(Var a, std::size_t begin, std::size_t count) {
  const auto& A = value(a);
  require_matrix("slice_cols", A, "input");
  if (begin + count > A.cols()) shape_error("slice_cols", "column range exceeds " + A.shape_string());
  const std::size_t n = A.rows(), m = A.cols();
  Tensor<T> out = Tensor<T>::matrix(n, count);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(A.data() + i * m + begin, count, out.data() + i * count);
  return push(OpKind::kSliceCols, std::move(out), {a.id}, [a, begin, count, n, m](Graph& g, std::size_t self) {
    const Tensor<T>& d = g.nodes_[self].grad;
    auto& dst = g.grad_buffer(a.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < count; ++j) dst[i * m + begin + j] += d[i * count + j];
  });
}

template <typename T>
Var Graph<T>::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) shape_error("concat_cols", "no inputs");
  const std::size_t n = value(parts[0]).rows();
  std::size_t width = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    const auto& P = value(p);
    require_matrix("concat_cols", P, "part");
    if (P.rows() != n) shape_error("concat_cols", "row counts differ");
    ids.push_back(p.id);
    widths.push_back(P.cols());
    width += P.cols();
  }
  Tensor<T> out = Tensor<T>::matrix(n, width);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& P = value(parts[k]);
    for (std::size_t i = 0; i < n; ++i) std::copy_n(P.data() + i * widths[k], widths[k], out.data() + i * width + offset);
    offset += widths[k];
  }
  return push(OpKind::kConcatCols, std::move(out), ids, [ids, widths, n, width](Graph& g, std::size_t self) {
    const Tensor<T>& d = g.nodes_[self].grad;
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.nodes_[ids[k]].requires_grad) {
        auto& dst = g.grad_buffer(ids[k]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) dst[i * widths[k] + j] += d[i * width + off + j];
      }
      off += widths[k];
    }
  });
}

template <typename T>
Var Graph<T>::sum(Var a) {
  T total = 0;
  for (T x : value(a).values()) total += x;
  return push(OpKind::kSum, Tensor<T>({1}, std::vector<T>{total}), {a.id}, [a](Graph& g, std::size_t self) {
    const T d = g.nodes_[self].grad[0];
    auto& dst = g.grad_buffer(a.id);
    for (auto& x : dst.values()) x += d;
  });
}

template <typename T>
Var Graph<T>::bce_with_logits(Var logits, const Tensor<T>& targets, const Mask& mask) {
  const auto& Z = value(logits);
  if (!Z.same_shape(targets))
    shape_error("bce_with_logits", "logits " + Z.shape_string() + " vs targets " + targets.shape_string());
  if (mask.bits.size() != Z.size()) shape_error("bce_with_logits", "mask size differs from logits");
  std::size_t count = 0;
  T total = 0;
  for (std::size_t i = 0; i < Z.size(); ++i) {
    if (!mask.bits[i]) continue;
    ++count;
    total += softplus(-Z[i]) + Z[i] * (T(1) - targets[i]);
  }
  if (count == 0) throw std::invalid_argument("bce_with_logits: no unmasked positions");
  const T inv = T(1) / static_cast<T>(count);
  return push(OpKind::kBceWithLogits, Tensor<T>({1}, std::vector<T>{total * inv}), {logits.id},
              [logits, targets, bits = mask.bits, inv](Graph& g, std::size_t self) {
                const T d = g.nodes_[self].grad[0];
                const auto& z = g.nodes_[logits.id].value;
                auto& dst = g.grad_buffer(logits.id);
                for (std::size_t i = 0; i < z.size(); ++i) {
                  if (!bits[i]) continue;
                  const T sig = T(1) / (T(1) + std::exp(-z[i]));
                  dst[i] += d * inv * (sig - targets[i]);
                }
              });
}

template <typename T>
void Graph<T>::backward(Var loss, T seed) {
  Node& out = node(loss);
  if (out.value.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + out.value.shape_string());
  if (!out.requires_grad) return;
  grad_buffer(loss.id)[0] += seed;
  for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backprop || n.grad.size() != n.value.size()) continue;
    n.backprop(*this, i);
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace cmt
