#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "defo/numcore/tape.hpp"

namespace defo {

namespace detail {

template <class T>
void require_same_tape(const basic_var<T>& a, const basic_var<T>& b, const char* op) {
  if (a.tape != b.tape) throw dimension_error(std::string(op) + ": operands on different tapes");
}

template <class T>
void require_matrix(const basic_var<T>& a, const char* op) {
  if (a.value().rank() != 2) {
    throw dimension_error(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

}  // namespace detail

/// C = A·B for A[r×s], B[s×t].
template <class T>
basic_var<T> matmul(basic_var<T> a, basic_var<T> b) {
  detail::require_same_tape(a, b, "matmul");
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const auto& A = a.value();
  const auto& B = b.value();
  const std::size_t r = A.dim(0), s = A.dim(1), t = B.dim(1);
  if (B.dim(0) != s) {
    throw dimension_error("matmul: inner dimensions disagree: " + shape_str(A.shape()) + " x " +
                          shape_str(B.shape()));
  }
  basic_tensor<T> C({r, t});
  const T* pa = A.data();
  const T* pb = B.data();
  T* pc = C.data();
  for (std::size_t i = 0; i < r; ++i) {
    T* crow = pc + i * t;
    for (std::size_t k = 0; k < s; ++k) {
      const T aik = pa[i * s + k];
      if (aik == T{0}) continue;
      const T* brow = pb + k * t;
      for (std::size_t j = 0; j < t; ++j) crow[j] += aik * brow[j];
    }
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record("matmul", std::move(C), {ia, ib}, [=](basic_tape<T>& tp, std::size_t self) {
    const auto& dC = tp.grad(self);
    const T* pA = tp.node_at(ia).value().data();
    const T* pB = tp.node_at(ib).value().data();
    if (tp.needs_grad(ia)) {
      auto& dA = tp.grad(ia);
      for (std::size_t i = 0; i < r; ++i) {
        const T* dcrow = dC.data() + i * t;
        for (std::size_t k = 0; k < s; ++k) {
          const T* brow = pB + k * t;
          T acc{0};
          for (std::size_t j = 0; j < t; ++j) acc += dcrow[j] * brow[j];
          dA[i * s + k] += acc;
        }
      }
    }
    if (tp.needs_grad(ib)) {
      auto& dB = tp.grad(ib);
      for (std::size_t i = 0; i < r; ++i) {
        const T* dcrow = dC.data() + i * t;
        for (std::size_t k = 0; k < s; ++k) {
          const T aik = pA[i * s + k];
          T* dbrow = dB.data() + k * t;
          for (std::size_t j = 0; j < t; ++j) dbrow[j] += aik * dcrow[j];
        }
      }
    }
  });
}

template <class T>
basic_var<T> transpose(basic_var<T> a) {
  detail::require_matrix(a, "transpose");
  const auto& A = a.value();
  const std::size_t r = A.dim(0), c = A.dim(1);
  basic_tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = A.at(i, j);
  const std::size_t ia = a.id;
  return a.tape->record("transpose", std::move(out), {ia}, [=](basic_tape<T>& tp, std::size_t self) {
    const auto& d = tp.grad(self);
    auto& da = tp.grad(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) da[i * c + j] += d[j * r + i];
  });
}

template <class T>
basic_var<T> add(basic_var<T> a, basic_var<T> b) {
  detail::require_same_tape(a, b, "add");
  if (a.shape() != b.shape()) {
    throw dimension_error("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  basic_tensor<T> out = a.value();
  out.grad.clear();
  out.requires_grad = false;
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record("add", std::move(out), {ia, ib}, [=](basic_tape<T>& tp, std::size_t self) {
    const auto& d = tp.grad(self);
    for (auto id : {ia, ib}) {
      if (!tp.needs_grad(id)) continue;
      auto& g = tp.grad(id);
      for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i];
    }
  });
}

/// Adds `bias` (length = cols) to every row of `a`.
template <class T>
basic_var<T> add_rowwise(basic_var<T> a, basic_var<T> bias) {
  detail::require_same_tape(a, bias, "add_rowwise");
  const std::size_t R = a.rows(), C = a.cols();
  if (bias.size() != C) {
    throw dimension_error("add_rowwise: bias " + shape_str(bias.shape()) + " vs rows of " +
                          shape_str(a.shape()));
  }
  basic_tensor<T> out(a.shape());
  const auto& A = a.value();
  const auto& b = bias.value();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = A[r * C + c] + b[c];
  const std::size_t ia = a.id, ib = bias.id;
  return a.tape->record("add_rowwise", std::move(out), {ia, ib},
                        [=](basic_tape<T>& tp, std::size_t self) {
                          const auto& d = tp.grad(self);
                          if (tp.needs_grad(ia)) {
                            auto& g = tp.grad(ia);
                            for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i];
                          }
                          if (tp.needs_grad(ib)) {
                            auto& g = tp.grad(ib);
                            for (std::size_t r = 0; r < R; ++r)
                              for (std::size_t c = 0; c < C; ++c) g[c] += d[r * C + c];
                          }
                        });
}

template <class T>
basic_var<T> scale(basic_var<T> a, T factor) {
  basic_tensor<T> out(a.shape());
  const auto& A = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * factor;
  const std::size_t ia = a.id;
  return a.tape->record("scale", std::move(out), {ia}, [=](basic_tape<T>& tp, std::size_t self) {
    const auto& d = tp.grad(self);
    auto& g = tp.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * factor;
  });
}

/// tanh-approximated GELU.
template <class T>
basic_var<T> gelu(basic_var<T> a) {
  constexpr T k0 = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k1 = T(0.044715);
  const auto& A = a.value();
  basic_tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = A[i];
    out[i] = T(0.5) * x * (T(1) + std::tanh(k0 * (x + k1 * x * x * x)));
  }
  const std::size_t ia = a.id;
  return a.tape->record("gelu", std::move(out), {ia}, [=](basic_tape<T>& tp, std::size_t self) {
    const auto& d = tp.grad(self);
    const auto& X = tp.node_at(ia).value();
    auto& g = tp.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T x = X[i];
      const T th = std::tanh(k0 * (x + k1 * x * x * x));
      const T dydx = T(0.5) * (T(1) + th) +
                     T(0.5) * x * (T(1) - th * th) * k0 * (T(1) + T(3) * k1 * x * x);
      g[i] += d[i] * dydx;
    }
  });
}

/// Row-wise layer normalization with population variance and epsilon 1e-5.
template <class T>
basic_var<T> layer_norm(basic_var<T> x, basic_var<T> gain, basic_var<T> bias) {
  detail::require_same_tape(x, gain, "layer_norm");
  detail::require_same_tape(x, bias, "layer_norm");
  const std::size_t R = x.rows(), C = x.cols();
  if (C < 2) throw dimension_error("layer_norm: needs at least 2 features");
  if (gain.size() != C || bias.size() != C) {
    throw dimension_error("layer_norm: gain/bias must have " + std::to_string(C) + " entries");
  }
  constexpr T eps = T(1e-5);
  const auto& X = x.value();
  const auto& G = gain.value();
  const auto& Bv = bias.value();
  basic_tensor<T> out(x.shape());
  std::vector<T> xhat(X.size());
  std::vector<T> rstd(R);
  for (std::size_t r = 0; r < R; ++r) {
    const T* xr = X.data() + r * C;
    T mean{0};
    for (std::size_t c = 0; c < C; ++c) mean += xr[c];
    mean /= T(C);
    T var{0};
    for (std::size_t c = 0; c < C; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= T(C);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < C; ++c) {
      xhat[r * C + c] = (xr[c] - mean) * rstd[r];
      out[r * C + c] = G[c] * xhat[r * C + c] + Bv[c];
    }
  }
  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  return x.tape->record(
      "layer_norm", std::move(out), {ix, ig, ib},
      [=, xhat = std::move(xhat), rstd = std::move(rstd)](basic_tape<T>& tp, std::size_t self) {
        const auto& d = tp.grad(self);
        const auto& Gv = tp.node_at(ig).value();
        if (tp.needs_grad(ig)) {
          auto& gg = tp.grad(ig);
          for (std::size_t i = 0; i < d.size(); ++i) gg[i % C] += d[i] * xhat[i];
        }
        if (tp.needs_grad(ib)) {
          auto& gb = tp.grad(ib);
          for (std::size_t i = 0; i < d.size(); ++i) gb[i % C] += d[i];
        }
        if (tp.needs_grad(ix)) {
          auto& gx = tp.grad(ix);
          for (std::size_t r = 0; r < R; ++r) {
            T m1{0}, m2{0};
            for (std::size_t c = 0; c < C; ++c) {
              const T dxh = d[r * C + c] * Gv[c];
              m1 += dxh;
              m2 += dxh * xhat[r * C + c];
            }
            m1 /= T(C);
            m2 /= T(C);
            for (std::size_t c = 0; c < C; ++c) {
              const T dxh = d[r * C + c] * Gv[c];
              gx[r * C + c] += rstd[r] * (dxh - m1 - xhat[r * C + c] * m2);
            }
          }
        }
      });
}

namespace detail {

template <class T>
void softmax_row(const T* z, T* y, std::size_t n) {
  T mx = z[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, z[i]);
  T sum{0};
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::exp(z[i] - mx);
    sum += y[i];
  }
  for (std::size_t i = 0; i < n; ++i) y[i] /= sum;
}

}  // namespace detail

/// Row-wise softmax with max subtraction.
template <class T>
basic_var<T> softmax(basic_var<T> z) {
  const std::size_t R = z.rows(), C = z.cols();
  basic_tensor<T> out(z.shape());
  for (std::size_t r = 0; r < R; ++r) {
    detail::softmax_row(z.value().data() + r * C, out.data() + r * C, C);
  }
  const std::size_t iz = z.id;
  return z.tape->record("softmax", std::move(out), {iz}, [=](basic_tape<T>& tp, std::size_t self) {
    const auto& d = tp.grad(self);
    const auto& Y = tp.node_at(self).value();
    auto& g = tp.grad(iz);
    for (std::size_t r = 0; r < R; ++r) {
      T dot{0};
      for (std::size_t c = 0; c < C; ++c) dot += d[r * C + c] * Y[r * C + c];
      for (std::size_t c = 0; c < C; ++c) g[r * C + c] += Y[r * C + c] * (d[r * C + c] - dot);
    }
  });
}

inline constexpr double kNormEpsilon = 1e-12;

/// Row-wise unit ℓ2 normalization. Rows with norm ≤ 1e-12 are rejected.
template <class T>
basic_var<T> l2_normalize(basic_var<T> v) {
  const std::size_t R = v.rows(), C = v.cols();
  const auto& V = v.value();
  basic_tensor<T> out(v.shape());
  std::vector<T> norms(R);
  for (std::size_t r = 0; r < R; ++r) {
    T ss{0};
    for (std::size_t c = 0; c < C; ++c) ss += V[r * C + c] * V[r * C + c];
    norms[r] = std::sqrt(ss);
    if (!(norms[r] > T(kNormEpsilon))) {
      throw degenerate_vector_error("l2_normalize: row " + std::to_string(r) +
                                    " has near-zero norm");
    }
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = V[r * C + c] / norms[r];
  }
  const std::size_t iv = v.id;
  return v.tape->record("l2_normalize", std::move(out), {iv},
                        [=, norms = std::move(norms)](basic_tape<T>& tp, std::size_t self) {
                          const auto& d = tp.grad(self);
                          const auto& Y = tp.node_at(self).value();
                          auto& g = tp.grad(iv);
                          for (std::size_t r = 0; r < R; ++r) {
                            T dot{0};
                            for (std::size_t c = 0; c < C; ++c) dot += d[r * C + c] * Y[r * C + c];
                            for (std::size_t c = 0; c < C; ++c) {
                              g[r * C + c] += (d[r * C + c] - Y[r * C + c] * dot) / norms[r];
                            }
                          }
                        });
}

/// Bidirectional scaled dot-product attention.
///
/// q, k, v are [(B·seq_len) × D]: B independent sequences stacked row-wise,
/// each split column-wise into `heads` heads of width D/heads. With the
/// defaults this is plain single-head softmax(q·kᵀ/√d)·v over all rows.
template <class T>
basic_var<T> attention(basic_var<T> q, basic_var<T> k, basic_var<T> v, std::size_t heads = 1,
                       std::size_t seq_len = 0) {
  detail::require_same_tape(q, k, "attention");
  detail::require_same_tape(q, v, "attention");
  detail::require_matrix(q, "attention");
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw dimension_error("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                          ", v " + shape_str(v.shape()));
  }
  const std::size_t R = q.rows(), D = q.cols();
  const std::size_t L = seq_len == 0 ? R : seq_len;
  if (heads == 0 || D % heads != 0 || R % L != 0) {
    throw dimension_error("attention: " + shape_str(q.shape()) + " not divisible into " +
                          std::to_string(heads) + " heads of sequences of " + std::to_string(L));
  }
  const std::size_t B = R / L, dh = D / heads;
  const T inv = T(1) / std::sqrt(T(dh));
  const T* Q = q.value().data();
  const T* K = k.value().data();
  const T* V = v.value().data();
  basic_tensor<T> out({R, D});
  std::vector<T> probs(B * heads * L * L);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* P = probs.data() + (b * heads + h) * L * L;
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < L; ++i) {
        const T* qi = Q + (b * L + i) * D + off;
        for (std::size_t j = 0; j < L; ++j) {
          const T* kj = K + (b * L + j) * D + off;
          T s{0};
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          P[i * L + j] = s * inv;
        }
        detail::softmax_row(P + i * L, P + i * L, L);
        T* oi = out.data() + (b * L + i) * D + off;
        for (std::size_t j = 0; j < L; ++j) {
          const T p = P[i * L + j];
          const T* vj = V + (b * L + j) * D + off;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  const std::size_t iq = q.id, ik = k.id, iv = v.id;
  return q.tape->record(
      "attention", std::move(out), {iq, ik, iv},
      [=, probs = std::move(probs)](basic_tape<T>& tp, std::size_t self) {
        const auto& dO = tp.grad(self);
        const T* Qv = tp.node_at(iq).value().data();
        const T* Kv = tp.node_at(ik).value().data();
        const T* Vv = tp.node_at(iv).value().data();
        const bool gq = tp.needs_grad(iq), gk = tp.needs_grad(ik), gv = tp.needs_grad(iv);
        T* dQ = gq ? tp.grad(iq).data() : nullptr;
        T* dK = gk ? tp.grad(ik).data() : nullptr;
        T* dV = gv ? tp.grad(iv).data() : nullptr;
        std::vector<T> dS(L * L);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const T* P = probs.data() + (b * heads + h) * L * L;
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < L; ++i) {
              const T* doi = dO.data() + (b * L + i) * D + off;
              T rowdot{0};
              for (std::size_t j = 0; j < L; ++j) {
                const T* vj = Vv + (b * L + j) * D + off;
                T dp{0};
                for (std::size_t c = 0; c < dh; ++c) dp += doi[c] * vj[c];
                dS[i * L + j] = dp;
                rowdot += dp * P[i * L + j];
                if (dV) {
                  T* dvj = dV + (b * L + j) * D + off;
                  const T p = P[i * L + j];
                  for (std::size_t c = 0; c < dh; ++c) dvj[c] += p * doi[c];
                }
              }
              for (std::size_t j = 0; j < L; ++j) {
                dS[i * L + j] = P[i * L + j] * (dS[i * L + j] - rowdot) * inv;
              }
            }
            for (std::size_t i = 0; i < L; ++i) {
              for (std::size_t j = 0; j < L; ++j) {
                const T s = dS[i * L + j];
                if (s == T{0}) continue;
                if (dQ) {
                  T* dqi = dQ + (b * L + i) * D + off;
                  const T* kj = Kv + (b * L + j) * D + off;
                  for (std::size_t c = 0; c < dh; ++c) dqi[c] += s * kj[c];
                }
                if (dK) {
                  T* dkj = dK + (b * L + j) * D + off;
                  const T* qi = Qv + (b * L + i) * D + off;
                  for (std::size_t c = 0; c < dh; ++c) dkj[c] += s * qi[c];
                }
              }
            }
          }
        }
      });
}

/// Mean over rows of −log softmax(logits[r])[labels[r]]. A rank-1 input is one row.
template <class T>
basic_var<T> cross_entropy(basic_var<T> logits, std::span<const std::size_t> labels) {
  const std::size_t R = logits.rows(), C = logits.cols();
  if (labels.size() != R) {
    throw dimension_error("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(R) + " rows");
  }
  std::vector<T> probs(R * C);
  T loss{0};
  for (std::size_t r = 0; r < R; ++r) {
    if (labels[r] >= C) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[r]) +
                              " out of range for " + std::to_string(C) + " classes");
    }
    const T* z = logits.value().data() + r * C;
    T mx = z[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, z[c]);
    T sum{0};
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(z[c] - mx);
    const T lse = mx + std::log(sum);
    loss += lse - z[labels[r]];
    for (std::size_t c = 0; c < C; ++c) probs[r * C + c] = std::exp(z[c] - lse);
  }
  loss /= T(R);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  const std::size_t il = logits.id;
  return logits.tape->record(
      "cross_entropy", basic_tensor<T>({1}, {loss}), {il},
      [=, probs = std::move(probs), lab = std::move(lab)](basic_tape<T>& tp, std::size_t self) {
        const T d = tp.grad(self)[0] / T(R);
        auto& g = tp.grad(il);
        for (std::size_t r = 0; r < R; ++r) {
          for (std::size_t c = 0; c < C; ++c) {
            const T onehot = c == lab[r] ? T(1) : T(0);
            g[r * C + c] += d * (probs[r * C + c] - onehot);
          }
        }
      });
}

template <class T>
basic_var<T> cross_entropy(basic_var<T> logits, std::size_t label) {
  return cross_entropy(logits, std::span<const std::size_t>(&label, 1));
}

template <class T>
basic_var<T> sum(basic_var<T> a) {
  T s{0};
  for (auto v : a.value().values()) s += v;
  const std::size_t ia = a.id;
  return a.tape->record("sum", basic_tensor<T>({1}, {s}), {ia},
                        [=](basic_tape<T>& tp, std::size_t self) {
                          const T d = tp.grad(self)[0];
                          for (auto& g : tp.grad(ia)) g += d;
                        });
}

/// Averages consecutive groups of `group` rows: [(B·group)×C] → [B×C].
template <class T>
basic_var<T> mean_pool_rows(basic_var<T> x, std::size_t group) {
  const std::size_t R = x.rows(), C = x.cols();
  if (group == 0 || R % group != 0) {
    throw dimension_error("mean_pool_rows: " + std::to_string(R) + " rows not divisible by " +
                          std::to_string(group));
  }
  const std::size_t B = R / group;
  basic_tensor<T> out({B, C});
  const auto& X = x.value();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[(r / group) * C + c] += X[r * C + c];
  for (auto& o : out.values()) o /= T(group);
  const std::size_t ix = x.id;
  return x.tape->record("mean_pool_rows", std::move(out), {ix},
                        [=](basic_tape<T>& tp, std::size_t self) {
                          const auto& d = tp.grad(self);
                          auto& g = tp.grad(ix);
                          for (std::size_t r = 0; r < R; ++r)
                            for (std::size_t c = 0; c < C; ++c)
                              g[r * C + c] += d[(r / group) * C + c] / T(group);
                        });
}

/// Row gather; repeated indices accumulate gradient (embedding lookup, readout).
template <class T>
basic_var<T> gather_rows(basic_var<T> x, std::span<const std::size_t> index) {
  const std::size_t R = x.rows(), C = x.cols();
  if (index.empty()) throw dimension_error("gather_rows: empty index");
  basic_tensor<T> out({index.size(), C});
  const auto& X = x.value();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= R) {
      throw dimension_error("gather_rows: row " + std::to_string(index[i]) + " outside " +
                            shape_str(x.shape()));
    }
    std::copy_n(X.data() + index[i] * C, C, out.data() + i * C);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t ix = x.id;
  return x.tape->record("gather_rows", std::move(out), {ix},
                        [=, idx = std::move(idx)](basic_tape<T>& tp, std::size_t self) {
                          const auto& d = tp.grad(self);
                          auto& g = tp.grad(ix);
                          for (std::size_t i = 0; i < idx.size(); ++i)
                            for (std::size_t c = 0; c < C; ++c) g[idx[i] * C + c] += d[i * C + c];
                        });
}

template <class T>
basic_var<T> concat_rows(std::span<const basic_var<T>> parts) {
  if (parts.empty()) throw dimension_error("concat_rows: nothing to concatenate");
  const std::size_t C = parts[0].cols();
  std::size_t R = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p, "concat_rows");
    if (p.cols() != C) {
      throw dimension_error("concat_rows: " + shape_str(parts[0].shape()) + " vs " +
                            shape_str(p.shape()));
    }
    R += p.rows();
  }
  basic_tensor<T> out({R, C});
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.size(), out.data() + off);
    ids.push_back(p.id);
    offsets.push_back(off);
    off += p.size();
  }
  return parts[0].tape->record("concat_rows", std::move(out), ids,
                               [=](basic_tape<T>& tp, std::size_t self) {
                                 const auto& d = tp.grad(self);
                                 for (std::size_t i = 0; i < ids.size(); ++i) {
                                   if (!tp.needs_grad(ids[i])) continue;
                                   auto& g = tp.grad(ids[i]);
                                   for (std::size_t j = 0; j < g.size(); ++j)
                                     g[j] += d[offsets[i] + j];
                                 }
                               });
}

template <class T>
basic_var<T> reshape(basic_var<T> x, shape_t shape) {
  basic_tensor<T> out(std::move(shape));
  if (out.size() != x.size()) {
    throw dimension_error("reshape: " + shape_str(x.shape()) + " -> " + shape_str(out.shape()));
  }
  std::copy_n(x.value().data(), x.size(), out.data());
  const std::size_t ix = x.id;
  return x.tape->record("reshape", std::move(out), {ix}, [=](basic_tape<T>& tp, std::size_t self) {
    const auto& d = tp.grad(self);
    auto& g = tp.grad(ix);
    for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i];
  });
}

/// Identity in the forward pass; gradient passes only where `mask` is nonzero.
template <class T>
basic_var<T> mask_grad(basic_var<T> x, std::span<const std::uint8_t> mask) {
  if (mask.size() != x.size()) {
    throw dimension_error("mask_grad: mask of " + std::to_string(mask.size()) + " for " +
                          shape_str(x.shape()));
  }
  basic_tensor<T> out(x.shape());
  std::copy_n(x.value().data(), x.size(), out.data());
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  const std::size_t ix = x.id;
  return x.tape->record("mask_grad", std::move(out), {ix},
                        [=, m = std::move(m)](basic_tape<T>& tp, std::size_t self) {
                          const auto& d = tp.grad(self);
                          auto& g = tp.grad(ix);
                          for (std::size_t i = 0; i < d.size(); ++i)
                            if (m[i]) g[i] += d[i];
                        });
}

}  // namespace defo
