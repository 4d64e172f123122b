#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "posterpp/tensor.hpp"

/// Forward operations with their reverse-mode rules.
///
/// Every op takes the evaluation Context first. An output is recorded on the
/// tape only when the context has one and at least one operand requires grad.
namespace posterpp::ops {

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ins) {
  for (const Tensor* t : ins) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

inline Tensor make_output(const Context& ctx, Shape shape, std::vector<double> values,
                          std::initializer_list<const Tensor*> ins) {
  const bool rg = ctx.recording() && any_requires_grad(ins);
  return Tensor(std::move(shape), std::move(values), rg);
}

template <class Rule>
void record(Context& ctx, std::string_view op, const Tensor& out,
            std::vector<std::shared_ptr<TensorNode>> ins, Rule&& rule) {
  if (!out.requires_grad()) return;
  ctx.tape->record(Tape::Entry{op, out.node(), std::move(ins), std::forward<Rule>(rule)});
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

/// C[P x R] += A[P x Q] B[Q x R], four rows of C at a time. Every C element
/// accumulates over k in increasing order.
inline void gemm_acc(double* C, const double* A, const double* B, std::size_t P, std::size_t Q, std::size_t R) {
  std::size_t i = 0;
  for (; i + 4 <= P; i += 4) {
    double* __restrict c0 = C + i * R;
    double* __restrict c1 = c0 + R;
    double* __restrict c2 = c1 + R;
    double* __restrict c3 = c2 + R;
    for (std::size_t k = 0; k < Q; ++k) {
      const double a0 = A[i * Q + k], a1 = A[(i + 1) * Q + k], a2 = A[(i + 2) * Q + k], a3 = A[(i + 3) * Q + k];
      const double* __restrict b = B + k * R;
      for (std::size_t j = 0; j < R; ++j) {
        const double bj = b[j];
        c0[j] += a0 * bj;
        c1[j] += a1 * bj;
        c2[j] += a2 * bj;
        c3[j] += a3 * bj;
      }
    }
  }
  for (; i < P; ++i) {
    double* __restrict c = C + i * R;
    for (std::size_t k = 0; k < Q; ++k) {
      const double a = A[i * Q + k];
      const double* __restrict b = B + k * R;
      for (std::size_t j = 0; j < R; ++j) c[j] += a * b[j];
    }
  }
}

/// Row-major transpose of a [rows x cols] block into `out` ([cols x rows]).
inline void transpose_into(std::vector<double>& out, const double* in, std::size_t rows, std::size_t cols) {
  out.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul

/// Batched matrix product [..,P,Q] x [..,Q,R] -> [..,P,R]. Batch prefixes must
/// agree dimension-wise or be 1 (broadcast).
inline Tensor matmul(Context& ctx, const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const auto names = [&] { return "matmul " + shape_str(as) + " x " + shape_str(bs); };
  if (as.size() < 2 || bs.size() < 2) throw ShapeError(names() + ": operands must have rank >= 2");
  const std::size_t P = as[as.size() - 2], Q = as.back();
  const std::size_t Q2 = bs[bs.size() - 2], R = bs.back();
  if (Q != Q2) throw ShapeError(names() + ": inner dimensions differ");

  const std::size_t batch_rank = std::max(as.size(), bs.size()) - 2;
  Shape a_batch(batch_rank, 1), b_batch(batch_rank, 1), out_batch(batch_rank, 1);
  std::copy(as.begin(), as.end() - 2, a_batch.begin() + (batch_rank - (as.size() - 2)));
  std::copy(bs.begin(), bs.end() - 2, b_batch.begin() + (batch_rank - (bs.size() - 2)));
  for (std::size_t i = 0; i < batch_rank; ++i) {
    if (a_batch[i] != b_batch[i] && a_batch[i] != 1 && b_batch[i] != 1) {
      throw ShapeError(names() + ": batch dimensions do not broadcast");
    }
    out_batch[i] = std::max(a_batch[i], b_batch[i]);
  }
  const std::size_t nbatch = shape_numel(out_batch);

  // (a offset, b offset) per output batch element.
  std::vector<std::pair<std::size_t, std::size_t>> offsets(nbatch);
  for (std::size_t flat = 0; flat < nbatch; ++flat) {
    std::size_t rem = flat, ai = 0, bi = 0, astride = 1, bstride = 1;
    for (std::size_t d = batch_rank; d-- > 0;) {
      const std::size_t idx = rem % out_batch[d];
      rem /= out_batch[d];
      if (a_batch[d] != 1) ai += idx * astride;
      if (b_batch[d] != 1) bi += idx * bstride;
      astride *= a_batch[d];
      bstride *= b_batch[d];
    }
    offsets[flat] = {ai * P * Q, bi * Q * R};
  }

  Shape out_shape = out_batch;
  out_shape.push_back(P);
  out_shape.push_back(R);
  std::vector<double> out(nbatch * P * R, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t n = 0; n < nbatch; ++n) {
    detail::gemm_acc(out.data() + n * P * R, A + offsets[n].first, B + offsets[n].second, P, Q, R);
  }
  ctx.count(static_cast<std::uint64_t>(nbatch) * P * Q * R);

  Tensor result = detail::make_output(ctx, std::move(out_shape), std::move(out), {&a, &b});
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  detail::record(ctx, "matmul", result, {a.node(), b.node()},
                 [an, bn, offsets, P, Q, R](std::span<const double> g) {
                   std::vector<double> tmp;
                   if (an->requires_grad) {
                     auto& ga = an->grad_buffer();
                     for (std::size_t n = 0; n < offsets.size(); ++n) {
                       detail::transpose_into(tmp, bn->values.data() + offsets[n].second, Q, R);
                       detail::gemm_acc(ga.data() + offsets[n].first, g.data() + n * P * R, tmp.data(), P, R, Q);
                     }
                   }
                   if (bn->requires_grad) {
                     auto& gb = bn->grad_buffer();
                     for (std::size_t n = 0; n < offsets.size(); ++n) {
                       detail::transpose_into(tmp, an->values.data() + offsets[n].first, P, Q);
                       detail::gemm_acc(gb.data() + offsets[n].second, tmp.data(), g.data() + n * P * R, Q, P, R);
                     }
                   }
                 });
  return result;
}

// ---------------------------------------------------------------------------
// layout ops

inline Tensor reshape(Context& ctx, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                     ": element counts differ");
  }
  std::vector<double> v(x.values().begin(), x.values().end());
  Tensor out = detail::make_output(ctx, std::move(shape), std::move(v), {&x});
  TensorNode* xn = x.node().get();
  detail::record(ctx, "reshape", out, {x.node()},
                 [xn](std::span<const double> g) { xn->accumulate_grad(g); });
  return out;
}

/// General axis permutation: output axis i is input axis `axes[i]`.
inline Tensor permute(Context& ctx, const Tensor& x, const std::vector<std::size_t>& axes) {
  const auto& s = x.shape();
  if (axes.size() != s.size()) {
    throw ShapeError("permute of " + shape_str(s) + ": expected " + std::to_string(s.size()) + " axes");
  }
  std::vector<bool> seen(s.size(), false);
  for (std::size_t a : axes) {
    if (a >= s.size() || seen[a]) throw ShapeError("permute of " + shape_str(s) + ": invalid axes");
    seen[a] = true;
  }
  std::vector<std::size_t> in_strides(s.size(), 1);
  for (std::size_t d = s.size(); d-- > 1;) in_strides[d - 1] = in_strides[d] * s[d];
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = s[axes[i]];

  // src[k] = input flat index of output flat index k
  const std::size_t n = x.size();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < axes.size(); ++i) off += idx[i] * in_strides[axes[i]];
    src[k] = off;
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<double> v(n);
  const auto xv = x.values();
  for (std::size_t k = 0; k < n; ++k) v[k] = xv[src[k]];
  Tensor out = detail::make_output(ctx, std::move(out_shape), std::move(v), {&x});
  TensorNode* xn = x.node().get();
  detail::record(ctx, "permute", out, {x.node()},
                 [xn, src = std::move(src)](std::span<const double> g) {
                   auto& gx = xn->grad_buffer();
                   for (std::size_t k = 0; k < src.size(); ++k) gx[src[k]] += g[k];
                 });
  return out;
}

/// Swaps the last two axes.
inline Tensor transpose_last2(Context& ctx, const Tensor& x) {
  detail::require(x.rank() >= 2, "transpose_last2 of " + shape_str(x.shape()) + ": rank < 2");
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(ctx, x, axes);
}

/// Stacks [N_i x D] token matrices along the token axis.
inline Tensor concat_tokens(Context& ctx, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_tokens: no inputs");
  const std::size_t D = parts.front().shape().back();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != D) {
      throw ShapeError("concat_tokens: " + shape_str(p.shape()) + " incompatible with width " +
                       std::to_string(D));
    }
    rows += p.dim(0);
  }
  std::vector<double> v;
  v.reserve(rows * D);
  bool rg = false;
  for (const auto& p : parts) {
    v.insert(v.end(), p.values().begin(), p.values().end());
    rg = rg || p.requires_grad();
  }
  Tensor out(Shape{rows, D}, std::move(v), ctx.recording() && rg);
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    std::vector<TensorNode*> raw;
    for (const auto& p : parts) raw.push_back(p.node().get());
    detail::record(ctx, "concat_tokens", out, std::move(nodes),
                   [raw](std::span<const double> g) {
                     std::size_t off = 0;
                     for (TensorNode* n : raw) {
                       const std::size_t len = n->values.size();
                       if (n->requires_grad) n->accumulate_grad(g.subspan(off, len));
                       off += len;
                     }
                   });
  }
  return out;
}

/// Rows [begin, begin + count) of an [N x D] matrix.
inline Tensor slice_tokens(Context& ctx, const Tensor& x, std::size_t begin, std::size_t count) {
  if (x.rank() != 2 || count == 0 || begin + count > x.dim(0)) {
    throw ShapeError("slice_tokens [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") out of " + shape_str(x.shape()));
  }
  const std::size_t D = x.dim(1);
  std::vector<double> v(x.values().begin() + static_cast<std::ptrdiff_t>(begin * D),
                        x.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * D));
  Tensor out = detail::make_output(ctx, {count, D}, std::move(v), {&x});
  TensorNode* xn = x.node().get();
  detail::record(ctx, "slice_tokens", out, {x.node()},
                 [xn, begin, D](std::span<const double> g) {
                   auto& gx = xn->grad_buffer();
                   for (std::size_t i = 0; i < g.size(); ++i) gx[begin * D + i] += g[i];
                 });
  return out;
}

// ---------------------------------------------------------------------------
// elementwise

/// a + b where b has the same shape as a or matches a trailing suffix of a's
/// shape (broadcast over the leading axes).
inline Tensor add(Context& ctx, const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const bool suffix = bs.size() <= as.size() && std::equal(bs.begin(), bs.end(), as.end() - static_cast<std::ptrdiff_t>(bs.size()));
  if (!suffix) throw ShapeError("add " + shape_str(as) + " + " + shape_str(bs) + ": shapes incompatible");
  const std::size_t nb = b.size();
  std::vector<double> v(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i % nb];
  Tensor out = detail::make_output(ctx, as, std::move(v), {&a, &b});
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  detail::record(ctx, "add", out, {a.node(), b.node()}, [an, bn, nb](std::span<const double> g) {
    if (an->requires_grad) an->accumulate_grad(g);
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
    }
  });
  return out;
}

/// Elementwise product of equally shaped tensors.
inline Tensor mul(Context& ctx, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul " + shape_str(a.shape()) + " * " + shape_str(b.shape()) + ": shapes differ");
  }
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  Tensor out = detail::make_output(ctx, a.shape(), std::move(v), {&a, &b});
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  detail::record(ctx, "mul", out, {a.node(), b.node()}, [an, bn](std::span<const double> g) {
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->values[i];
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->values[i];
    }
  });
  return out;
}

inline Tensor scale(Context& ctx, const Tensor& x, double s) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * s;
  Tensor out = detail::make_output(ctx, x.shape(), std::move(v), {&x});
  TensorNode* xn = x.node().get();
  detail::record(ctx, "scale", out, {x.node()}, [xn, s](std::span<const double> g) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
  });
  return out;
}

/// Sum of all elements as a [1] tensor.
inline Tensor sum(Context& ctx, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = detail::make_output(ctx, {1}, {acc}, {&x});
  TensorNode* xn = x.node().get();
  detail::record(ctx, "sum", out, {x.node()}, [xn](std::span<const double> g) {
    auto& gx = xn->grad_buffer();
    for (double& v : gx) v += g[0];
  });
  return out;
}

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline Tensor gelu(Context& ctx, const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double t = x[i];
    v[i] = 0.5 * t * (1.0 + std::tanh(c * (t + k * t * t * t)));
  }
  Tensor out = detail::make_output(ctx, x.shape(), std::move(v), {&x});
  TensorNode* xn = x.node().get();
  detail::record(ctx, "gelu", out, {x.node()}, [xn](std::span<const double> g) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double t = xn->values[i];
      const double u = c * (t + k * t * t * t);
      const double th = std::tanh(u);
      const double du = c * (1.0 + 3.0 * k * t * t);
      gx[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * t * (1.0 - th * th) * du);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// normalisation

/// Max-stabilised softmax over the last axis.
inline Tensor softmax_lastdim(Context& ctx, const Tensor& x) {
  const std::size_t C = x.shape().back();
  const std::size_t rows = x.size() / C;
  std::vector<double> v(x.size());
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * C;
    double* o = v.data() + r * C;
    double mx = in[0];
    for (std::size_t j = 0; j < C; ++j) {
      if (std::isnan(in[j])) throw NumericError("softmax_lastdim: NaN input");
      mx = std::max(mx, in[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < C; ++j) o[j] /= z;
  }
  Tensor out = detail::make_output(ctx, x.shape(), std::move(v), {&x});
  TensorNode* xn = x.node().get();
  TensorNode* on = out.node().get();
  detail::record(ctx, "softmax_lastdim", out, {x.node()},
                 [xn, on, C, rows](std::span<const double> g) {
                   auto& gx = xn->grad_buffer();
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* y = on->values.data() + r * C;
                     const double* gy = g.data() + r * C;
                     double dot = 0.0;
                     for (std::size_t j = 0; j < C; ++j) dot += gy[j] * y[j];
                     for (std::size_t j = 0; j < C; ++j) gx[r * C + j] += y[j] * (gy[j] - dot);
                   }
                 });
  return out;
}

/// Per-row normalisation over the last axis followed by gamma/beta affine.
inline Tensor layer_norm(Context& ctx, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  const std::size_t D = x.shape().back();
  if (gamma.size() != D || beta.size() != D) {
    throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                     shape_str(beta.shape()) + " must match last dim of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / D;
  std::vector<double> xhat(x.size()), inv_std(rows), v(x.size());
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * D;
    double mean = 0.0;
    for (std::size_t j = 0; j < D; ++j) mean += in[j];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t j = 0; j < D; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(D);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < D; ++j) {
      xhat[r * D + j] = (in[j] - mean) * inv_std[r];
      v[r * D + j] = xhat[r * D + j] * gamma[j] + beta[j];
    }
  }
  Tensor out = detail::make_output(ctx, x.shape(), std::move(v), {&x, &gamma, &beta});
  TensorNode* xn = x.node().get();
  TensorNode* gn = gamma.node().get();
  TensorNode* bn = beta.node().get();
  detail::record(ctx, "layer_norm", out, {x.node(), gamma.node(), beta.node()},
                 [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), D,
                  rows](std::span<const double> g) {
                   if (gn->requires_grad || bn->requires_grad) {
                     std::vector<double> dg(D, 0.0), db(D, 0.0);
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t j = 0; j < D; ++j) {
                         dg[j] += g[r * D + j] * xhat[r * D + j];
                         db[j] += g[r * D + j];
                       }
                     }
                     if (gn->requires_grad) gn->accumulate_grad(dg);
                     if (bn->requires_grad) bn->accumulate_grad(db);
                   }
                   if (xn->requires_grad) {
                     auto& gx = xn->grad_buffer();
                     const double invD = 1.0 / static_cast<double>(D);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double mean_d = 0.0, mean_dx = 0.0;
                       for (std::size_t j = 0; j < D; ++j) {
                         const double d = g[r * D + j] * gn->values[j];
                         mean_d += d;
                         mean_dx += d * xhat[r * D + j];
                       }
                       mean_d *= invD;
                       mean_dx *= invD;
                       for (std::size_t j = 0; j < D; ++j) {
                         const double d = g[r * D + j] * gn->values[j];
                         gx[r * D + j] += inv_std[r] * (d - mean_d - xhat[r * D + j] * mean_dx);
                       }
                     }
                   }
                 });
  return out;
}

// ---------------------------------------------------------------------------
// layers and reductions

/// x [N x in] * w [in x out] + b [out]; `b` may be undefined.
inline Tensor linear(Context& ctx, const Tensor& x, const Tensor& w, const Tensor& b = {}) {
  if (x.rank() != 2 || w.rank() != 2 || (b.defined() && b.size() != w.dim(1))) {
    throw ShapeError("linear: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()) +
                     (b.defined() ? ", b " + shape_str(b.shape()) : std::string()));
  }
  Tensor y = matmul(ctx, x, w);
  return b.defined() ? add(ctx, y, b) : y;
}

/// Mean over the token axis: [N x D] -> [D].
inline Tensor mean_pool_tokens(Context& ctx, const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("mean_pool_tokens of " + shape_str(x.shape()) + ": rank != 2");
  const std::size_t N = x.dim(0), D = x.dim(1);
  std::vector<double> v(D, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < D; ++j) v[j] += x[i * D + j];
  }
  for (double& e : v) e /= static_cast<double>(N);
  Tensor out = detail::make_output(ctx, {D}, std::move(v), {&x});
  TensorNode* xn = x.node().get();
  detail::record(ctx, "mean_pool_tokens", out, {x.node()}, [xn, N, D](std::span<const double> g) {
    auto& gx = xn->grad_buffer();
    const double inv = 1.0 / static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < D; ++j) gx[i * D + j] += g[j] * inv;
    }
  });
  return out;
}

/// Mean over the batch of -log softmax(logits)[label].
inline Tensor cross_entropy(Context& ctx, const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  std::vector<double> prob(B * C);
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= C) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[b]) + " outside [0, " +
                       std::to_string(C) + ")");
    }
    const double* row = logits.values().data() + b * C;
    double mx = row[0];
    for (std::size_t j = 0; j < C; ++j) {
      if (std::isnan(row[j])) throw NumericError("cross_entropy: NaN logit");
      mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < C; ++j) prob[b * C + j] = std::exp(row[j] - mx) / z;
    loss += (mx + std::log(z)) - row[labels[b]];
  }
  loss /= static_cast<double>(B);
  Tensor out = detail::make_output(ctx, {1}, {loss}, {&logits});
  TensorNode* ln = logits.node().get();
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  detail::record(ctx, "cross_entropy", out, {logits.node()},
                 [ln, prob = std::move(prob), lab = std::move(lab), B, C](std::span<const double> g) {
                   auto& gl = ln->grad_buffer();
                   const double s = g[0] / static_cast<double>(B);
                   for (std::size_t b = 0; b < B; ++b) {
                     for (std::size_t j = 0; j < C; ++j) {
                       gl[b * C + j] += s * (prob[b * C + j] - (j == lab[b] ? 1.0 : 0.0));
                     }
                   }
                 });
  return out;
}

/// Average pooling of a [C x H x W] map down to [C x out_h x out_w].
inline Tensor avg_pool2d(Context& ctx, const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3) throw ShapeError("avg_pool2d of " + shape_str(x.shape()) + ": expected [C x H x W]");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (out_h == 0 || out_w == 0 || H % out_h != 0 || W % out_w != 0) {
    throw LayoutError("avg_pool2d: " + std::to_string(H) + "x" + std::to_string(W) +
                      " not divisible into " + std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const std::size_t kh = H / out_h, kw = W / out_w;
  const double inv = 1.0 / static_cast<double>(kh * kw);
  std::vector<double> v(C * out_h * out_w, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) {
        v[(c * out_h + y / kh) * out_w + xx / kw] += x[(c * H + y) * W + xx];
      }
    }
  }
  for (double& e : v) e *= inv;
  Tensor out = detail::make_output(ctx, {C, out_h, out_w}, std::move(v), {&x});
  TensorNode* xn = x.node().get();
  detail::record(ctx, "avg_pool2d", out, {x.node()},
                 [xn, C, H, W, kh, kw, out_h, out_w, inv](std::span<const double> g) {
                   auto& gx = xn->grad_buffer();
                   for (std::size_t c = 0; c < C; ++c) {
                     for (std::size_t y = 0; y < H; ++y) {
                       for (std::size_t xx = 0; xx < W; ++xx) {
                         gx[(c * H + y) * W + xx] += g[(c * out_h + y / kh) * out_w + xx / kw] * inv;
                       }
                     }
                   }
                 });
  return out;
}

/// Groups p x p spatial neighbourhoods of a token grid into single tokens:
/// [H*W x C] -> [(H/p)*(W/p) x p*p*C]. Feature order within a token is
/// (dy, dx, channel).
inline Tensor space_to_depth(Context& ctx, const Tensor& x, std::size_t H, std::size_t W, std::size_t p) {
  if (x.rank() != 2 || x.dim(0) != H * W) {
    throw ShapeError("space_to_depth: " + shape_str(x.shape()) + " is not a " + std::to_string(H) +
                     "x" + std::to_string(W) + " token grid");
  }
  if (p == 0 || H % p != 0 || W % p != 0) {
    throw LayoutError("space_to_depth: grid " + std::to_string(H) + "x" + std::to_string(W) +
                      " not divisible by " + std::to_string(p));
  }
  const std::size_t C = x.dim(1), oh = H / p, ow = W / p, oc = p * p * C;
  std::vector<std::size_t> src(x.size());
  for (std::size_t ty = 0; ty < oh; ++ty) {
    for (std::size_t tx = 0; tx < ow; ++tx) {
      for (std::size_t dy = 0; dy < p; ++dy) {
        for (std::size_t dx = 0; dx < p; ++dx) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t o = (ty * ow + tx) * oc + (dy * p + dx) * C + c;
            src[o] = ((ty * p + dy) * W + tx * p + dx) * C + c;
          }
        }
      }
    }
  }
  std::vector<double> v(x.size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = x[src[k]];
  Tensor out = detail::make_output(ctx, {oh * ow, oc}, std::move(v), {&x});
  TensorNode* xn = x.node().get();
  detail::record(ctx, "space_to_depth", out, {x.node()},
                 [xn, src = std::move(src)](std::span<const double> g) {
                   auto& gx = xn->grad_buffer();
                   for (std::size_t k = 0; k < src.size(); ++k) gx[src[k]] += g[k];
                 });
  return out;
}

}  // namespace posterpp::ops
