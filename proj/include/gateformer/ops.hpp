#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gateformer/error.hpp"
#include "gateformer/rng.hpp"
#include "gateformer/tape.hpp"
#include "gateformer/tensor.hpp"

namespace gateformer {

namespace kernel {

// C[m×n] += A[m×k] · B[k×n]. Row i of C depends only on row i of A, with a
// fixed accumulation order, so results never depend on which rows share a call.
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k×n] += Aᵀ · G with A[m×k], G[m×n].
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* g, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

template <typename T>
std::vector<T> transpose(std::size_t rows, std::size_t cols, const T* a) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
  return out;
}

/// Sum whose result does not depend on the order of `terms` (sorted first).
template <typename T>
T order_invariant_sum(std::span<T> terms) {
  std::sort(terms.begin(), terms.end());
  T s{0};
  for (T v : terms) s += v;
  return s;
}

/// Softmax of one slice with max subtraction. With `order_invariant`, the
/// normalizer is a sorted sum, so permuting the slice permutes the output bitwise.
template <typename T>
void softmax_row(std::span<const T> in, std::span<T> out, bool order_invariant = false) {
  const T mx = *std::max_element(in.begin(), in.end());
  for (std::size_t j = 0; j < in.size(); ++j) out[j] = std::exp(in[j] - mx);
  T denom{0};
  if (order_invariant) {
    std::vector<T> tmp(out.begin(), out.end());
    denom = order_invariant_sum<T>(tmp);
  } else {
    for (T v : out) denom += v;
  }
  for (T& v : out) v /= denom;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
T gelu_scalar(T x) {
  return T{0.5} * x * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad_scalar(T x) {
  const T cdf = T{0.5} * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T{-0.5} * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

}  // namespace kernel

namespace detail {

template <typename T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void accumulate(Tape<T>& t, Var<T> v, std::span<const T> g) {
  if (!t.requires_grad(v)) return;
  auto gv = t.grad(v);
  for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
}

}  // namespace detail

/// a[..., k] · b[k, n] -> [..., n]. Leading dimensions of `a` act as rows.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() < 1 || bv.rank() != 2 || av.cols() != bv.dim(0)) {
    throw ShapeError("matmul: " + shape_str(av.shape()) + " · " + shape_str(bv.shape()));
  }
  const std::size_t m = av.rows(), k = bv.dim(0), n = bv.dim(1);
  Shape out_shape = av.shape();
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  kernel::gemm_nn(m, k, n, av.data().data(), bv.data().data(), out.data().data());
  return a.tape->record("matmul", std::move(out), {a, b},
                        [a, b, m, k, n](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
                          if (t.requires_grad(a)) {
                            const auto bt = kernel::transpose(k, n, t.value(b.id).data().data());
                            kernel::gemm_nn(m, n, k, g.data(), bt.data(), t.grad(a).data());
                          }
                          if (t.requires_grad(b)) {
                            kernel::gemm_tn(m, k, n, t.value(a.id).data().data(), g.data(), t.grad(b).data());
                          }
                        });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record("sub", std::move(out), {a, b}, [a, b](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    detail::accumulate(t, a, g);
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

/// Elementwise (Hadamard) product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    const auto& av = t.value(a.id);
    const auto& bv = t.value(b.id);
    if (t.requires_grad(a)) {
      auto ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

/// x + bias where bias.shape is a trailing block of x.shape. This is the only
/// broadcast the engine supports.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  const Shape& xs = x.shape();
  const Shape& bs = bias.shape();
  if (bs.size() > xs.size() || !std::equal(bs.rbegin(), bs.rend(), xs.rbegin())) {
    throw ShapeError("add_bias: bias " + shape_str(bs) + " is not a trailing block of " + shape_str(xs));
  }
  const std::size_t block = bias.value().size();
  Tensor<T> out = x.value();
  const auto& bv = bias.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % block];
  return x.tape->record("add_bias", std::move(out), {x, bias},
                        [x, bias, block](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
                          detail::accumulate(t, x, g);
                          if (t.requires_grad(bias)) {
                            auto gb = t.grad(bias);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i % block] += g[i];
                          }
                        });
}

template <typename T>
Var<T> scale(Var<T> x, T c) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v *= c;
  return x.tape->record("scale", std::move(out), {x}, [x, c](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

/// Elementwise logistic function. Values only reach exactly 0 or 1 where the
/// scalar type cannot represent the gap to the bound (|x| > ~17 in f32).
template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = kernel::sigmoid_scalar(v);
  return x.tape->record("sigmoid", std::move(out), {x}, [x](Tape<T>& t, std::span<const T> g, const Tensor<T>& y) {
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T{1} - y[i]);
  });
}

/// Exact (erf-based) GELU.
template <typename T>
Var<T> gelu(Var<T> x) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = kernel::gelu_scalar(v);
  return x.tape->record("gelu", std::move(out), {x}, [x](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    const auto& xv = t.value(x.id);
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * kernel::gelu_grad_scalar(xv[i]);
  });
}

template <typename T>
Var<T> softmax_lastdim(Var<T> x) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() == 0 || xv.cols() == 0) throw ShapeError("softmax_lastdim: empty last dimension");
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < xv.rows(); ++r) kernel::softmax_row<T>(xv.row(r), out.row(r));
  return x.tape->record("softmax", std::move(out), {x}, [x](Tape<T>& t, std::span<const T> g, const Tensor<T>& y) {
    auto gx = t.grad(x);
    const std::size_t n = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

/// Normalizes each last-dim slice to zero mean and unit (population) variance,
/// then applies the affine gamma/beta. Statistics use two passes.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.cols();
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw ShapeError("layer_norm: affine params must be [" + std::to_string(n) + "]");
  }
  if (!(eps > T{0})) throw ConfigError("layer_norm: eps must be positive");
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  const std::size_t rows = xv.rows();
  Tensor<T> out(xv.shape());
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = xv.row(r);
    T mean{0};
    for (T v : row) mean += v;
    mean /= static_cast<T>(n);
    T var{0};
    for (T v : row) var += (v - mean) * (v - mean);
    var /= static_cast<T>(n);
    inv_std[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (row[j] - mean) * inv_std[r];
      out[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
    }
  }
  return x.tape->record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
        const auto& gv = t.value(gamma.id);
        if (t.requires_grad(gamma)) {
          auto gg = t.grad(gamma);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % n] += g[i] * xhat[i];
        }
        if (t.requires_grad(beta)) {
          auto gb = t.grad(beta);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
        }
        if (t.requires_grad(x)) {
          auto gx = t.grad(x);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d{0}, mean_dx{0};
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g[r * n + j] * gv[j];
              mean_d += d;
              mean_dx += d * xhat[r * n + j];
            }
            mean_d /= static_cast<T>(n);
            mean_dx /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g[r * n + j] * gv[j];
              gx[r * n + j] += inv_std[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
            }
          }
        }
      });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape->record("reshape", std::move(out), {x}, [x](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    detail::accumulate(t, x, g);
  });
}

/// b + gate ⊙ (a − b): the convex combination gate⊙a + (1−gate)⊙b, written so
/// that a == b yields b exactly.
template <typename T>
Var<T> gated_mix(Var<T> gate, Var<T> a, Var<T> b) {
  detail::require_same_shape("gated_mix", gate, a);
  detail::require_same_shape("gated_mix", a, b);
  const auto& gv = gate.value();
  const auto& av = a.value();
  Tensor<T> out = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += gv[i] * (av[i] - out[i]);
  return gate.tape->record(
      "gated_mix", std::move(out), {gate, a, b}, [gate, a, b](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
        const auto& gv = t.value(gate.id);
        const auto& av = t.value(a.id);
        const auto& bv = t.value(b.id);
        if (t.requires_grad(gate)) {
          auto gg = t.grad(gate);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i] += g[i] * (av[i] - bv[i]);
        }
        if (t.requires_grad(a)) {
          auto ga = t.grad(a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gv[i];
        }
        if (t.requires_grad(b)) {
          auto gb = t.grad(b);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (T{1} - gv[i]);
        }
      });
}

/// y[r, :] = x[r, :] * row_scale[r] + row_shift[r] with constant per-row factors.
template <typename T>
Var<T> affine_rows(Var<T> x, std::vector<T> row_scale, std::vector<T> row_shift) {
  const Tensor<T>& xv = x.value();
  if (row_scale.size() != xv.rows() || row_shift.size() != xv.rows()) {
    throw ShapeError("affine_rows: " + std::to_string(row_scale.size()) + " factors for " +
                     std::to_string(xv.rows()) + " rows");
  }
  Tensor<T> out = xv;
  const std::size_t n = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = out[r * n + j] * row_scale[r] + row_shift[r];
  return x.tape->record("affine_rows", std::move(out), {x},
                        [x, n, row_scale = std::move(row_scale)](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
                          auto gx = t.grad(x);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * row_scale[i / n];
                        });
}

/// Inverted dropout. Identity when p == 0.
template <typename T>
Var<T> dropout(Var<T> x, T p, std::mt19937_64& rng) {
  if (p <= T{0}) return x;
  if (p >= T{1}) throw ConfigError("dropout probability must be < 1");
  std::vector<T> mask(x.value().size());
  for (T& m : mask) m = uniform01(rng) >= static_cast<double>(p) ? T{1} / (T{1} - p) : T{0};
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape->record("dropout", std::move(out), {x},
                        [x, mask = std::move(mask)](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
                          auto gx = t.grad(x);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                        });
}

/// Multi-head scaled dot-product self-attention over the middle axis.
///
/// q, k, v are [batch, seq, d_model]; head h owns columns [h·d_k, (h+1)·d_k).
/// Scores are scaled by 1/sqrt(d_k). With `order_invariant`, every reduction
/// over the key axis is a sorted sum, so permuting the sequence permutes the
/// output bitwise. Probabilities are appended to the tape's attention log when
/// one is attached.
template <typename T>
Var<T> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t n_heads, bool order_invariant,
                            const char* stage = "attention") {
  detail::require_same_shape("attention", q, k);
  detail::require_same_shape("attention", k, v);
  const Shape& s = q.shape();
  if (s.size() != 3) throw ShapeError("attention expects [batch, seq, d_model], got " + shape_str(s));
  const std::size_t batch = s[0], seq = s[1], d = s[2];
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("attention: d_model " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) +
                     " heads");
  }
  const std::size_t dk = d / n_heads;
  const T sc = T{1} / std::sqrt(static_cast<T>(dk));
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();

  Tensor<T> probs({batch, n_heads, seq, seq});
  Tensor<T> out({batch, seq, d});
  std::vector<T> scores(seq), terms(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * seq * d;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = h * dk;
      for (std::size_t i = 0; i < seq; ++i) {
        for (std::size_t j = 0; j < seq; ++j) {
          T acc{0};
          for (std::size_t c = 0; c < dk; ++c) acc += qv[base + i * d + off + c] * kv[base + j * d + off + c];
          scores[j] = acc * sc;
        }
        std::span<T> prow = probs.data().subspan(((b * n_heads + h) * seq + i) * seq, seq);
        kernel::softmax_row<T>(scores, prow, order_invariant);
        for (std::size_t c = 0; c < dk; ++c) {
          T acc{0};
          if (order_invariant) {
            for (std::size_t j = 0; j < seq; ++j) terms[j] = prow[j] * vv[base + j * d + off + c];
            acc = kernel::order_invariant_sum<T>(terms);
          } else {
            for (std::size_t j = 0; j < seq; ++j) acc += prow[j] * vv[base + j * d + off + c];
          }
          out[base + i * d + off + c] = acc;
        }
      }
    }
  }
  if (auto* log = q.tape->attention_log()) log->push_back({stage, probs});

  return q.tape->record(
      "attention", std::move(out), {q, k, v},
      [q, k, v, batch, seq, d, dk, n_heads, sc, probs = std::move(probs)](Tape<T>& t, std::span<const T> g,
                                                                           const Tensor<T>&) {
        const auto& qv = t.value(q.id);
        const auto& kv = t.value(k.id);
        const auto& vv = t.value(v.id);
        const bool need_q = t.requires_grad(q), need_k = t.requires_grad(k), need_v = t.requires_grad(v);
        std::span<T> gq = need_q ? t.grad(q) : std::span<T>{};
        std::span<T> gk = need_k ? t.grad(k) : std::span<T>{};
        std::span<T> gv = need_v ? t.grad(v) : std::span<T>{};
        std::vector<T> dp(seq), ds(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = b * seq * d;
          for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t off = h * dk;
            for (std::size_t i = 0; i < seq; ++i) {
              const T* prow = &probs[((b * n_heads + h) * seq + i) * seq];
              const T* go = &g[base + i * d + off];
              T dot{0};
              for (std::size_t j = 0; j < seq; ++j) {
                T acc{0};
                for (std::size_t c = 0; c < dk; ++c) acc += go[c] * vv[base + j * d + off + c];
                dp[j] = acc;
                dot += acc * prow[j];
                if (need_v) {
                  for (std::size_t c = 0; c < dk; ++c) gv[base + j * d + off + c] += prow[j] * go[c];
                }
              }
              for (std::size_t j = 0; j < seq; ++j) ds[j] = prow[j] * (dp[j] - dot) * sc;
              for (std::size_t j = 0; j < seq; ++j) {
                for (std::size_t c = 0; c < dk; ++c) {
                  if (need_q) gq[base + i * d + off + c] += ds[j] * kv[base + j * d + off + c];
                  if (need_k) gk[base + j * d + off + c] += ds[j] * qv[base + i * d + off + c];
                }
              }
            }
          }
        }
      });
}

/// Mean squared error against a constant target; returns a scalar node.
template <typename T>
Var<T> mse_loss(Var<T> pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const auto& pv = pred.value();
  const std::size_t n = pv.size();
  if (n == 0) throw ShapeError("mse_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = static_cast<double>(pv[i]) - static_cast<double>(target[i]);
    acc += e * e;
  }
  Tensor<T> out({1}, static_cast<T>(acc / static_cast<double>(n)));
  return pred.tape->record("mse_loss", std::move(out), {pred},
                           [pred, target, n](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
                             const auto& pv = t.value(pred.id);
                             auto gp = t.grad(pred);
                             const T c = T{2} * g[0] / static_cast<T>(n);
                             for (std::size_t i = 0; i < n; ++i) gp[i] += c * (pv[i] - target[i]);
                           });
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  return x.tape->record("sum", Tensor<T>({1}, acc), {x}, [x](Tape<T>& t, std::span<const T> g, const Tensor<T>&) {
    auto gx = t.grad(x);
    for (T& v : gx) v += g[0];
  });
}

}  // namespace gateformer
