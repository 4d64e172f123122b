#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "posterpp/ops.hpp"
#include "posterpp/tensor.hpp"

namespace posterpp {

/// Projection weights of one attention kernel. All projections are D x D and
/// bias-free; `bias_table` (heads x M x M) exists only for windowed attention.
struct AttentionParams {
  Tensor w_q, w_k, w_v, w_o;
  std::optional<Tensor> bias_table;
  std::size_t heads = 1;
  std::size_t dim = 1;

  std::size_t head_dim() const { return dim / heads; }

  void validate() const {
    if (heads == 0 || dim == 0 || dim % heads != 0) {
      throw ConfigError("attention dim " + std::to_string(dim) + " not divisible by " +
                        std::to_string(heads) + " heads");
    }
    for (const Tensor* w : {&w_q, &w_k, &w_v, &w_o}) {
      if (!w->defined() || w->shape() != Shape{dim, dim}) {
        throw ShapeError("attention projection must be " + shape_str({dim, dim}));
      }
    }
    if (bias_table) {
      const auto& s = bias_table->shape();
      if (s.size() != 3 || s[0] != heads || s[1] != s[2]) {
        throw ShapeError("bias_table " + shape_str(s) + " must be heads x M x M");
      }
    }
  }
};

/// Non-overlapping contiguous windows over the token axis.
struct WindowLayout {
  std::size_t window_tokens = 1;
  std::size_t num_windows = 1;

  std::size_t total_tokens() const { return window_tokens * num_windows; }

  static WindowLayout for_tokens(std::size_t total, std::size_t window_tokens) {
    if (window_tokens == 0 || total % window_tokens != 0) {
      throw LayoutError(std::to_string(total) + " tokens not divisible into windows of " +
                        std::to_string(window_tokens));
    }
    return {window_tokens, total / window_tokens};
  }
};

/// [N x D] -> [N/M x M x D]; window w, row t is input row w*M + t.
inline Tensor window_partition(Context& ctx, const Tensor& x, std::size_t window_tokens) {
  if (x.rank() != 2) throw ShapeError("window_partition of " + shape_str(x.shape()) + ": rank != 2");
  const auto layout = WindowLayout::for_tokens(x.dim(0), window_tokens);
  return ops::reshape(ctx, x, {layout.num_windows, window_tokens, x.dim(1)});
}

/// Inverse of window_partition.
inline Tensor window_merge(Context& ctx, const Tensor& windows) {
  if (windows.rank() != 3) {
    throw ShapeError("window_merge of " + shape_str(windows.shape()) + ": expected [W x M x D]");
  }
  return ops::reshape(ctx, windows, {windows.dim(0) * windows.dim(1), windows.dim(2)});
}

/// Picks the pooled landmark grid (h, w) with h * w == window_tokens that
/// tiles an H x W map, preferring the most square shape.
inline std::pair<std::size_t, std::size_t> window_grid(std::size_t window_tokens, std::size_t H,
                                                       std::size_t W) {
  std::optional<std::pair<std::size_t, std::size_t>> best;
  for (std::size_t h = 1; h <= window_tokens; ++h) {
    if (window_tokens % h) continue;
    const std::size_t w = window_tokens / h;
    if (H % h || W % w) continue;
    const auto gap = [](std::size_t a, std::size_t b) { return a > b ? a - b : b - a; };
    if (!best || gap(h, w) < gap(best->first, best->second)) best = std::pair{h, w};
  }
  if (!best) {
    throw LayoutError("no " + std::to_string(window_tokens) + "-token grid tiles a " +
                      std::to_string(H) + "x" + std::to_string(W) + " map");
  }
  return *best;
}

/// Average-pools a landmark map [C x H x W] to [C x h x w] and lays it out
/// channel-last as [h*w x C].
inline Tensor downsample_landmark(Context& ctx, const Tensor& x_lm, std::size_t h, std::size_t w) {
  if (x_lm.rank() != 3) {
    throw ShapeError("downsample_landmark of " + shape_str(x_lm.shape()) + ": expected [C x H x W]");
  }
  const std::size_t C = x_lm.dim(0);
  Tensor pooled = ops::avg_pool2d(ctx, x_lm, h, w);
  Tensor flat = ops::reshape(ctx, pooled, {C, h * w});
  return ops::transpose_last2(ctx, flat);
}

namespace detail {

/// [N x D] -> [N/M x I x M x d] (window, head, token, feature).
inline Tensor split_heads(Context& ctx, const Tensor& x, std::size_t windows, std::size_t tokens,
                          std::size_t heads, std::size_t head_dim) {
  Tensor r = ops::reshape(ctx, x, {windows, tokens, heads, head_dim});
  return ops::permute(ctx, r, {0, 2, 1, 3});
}

/// Inverse of split_heads: concatenates heads and merges windows.
inline Tensor merge_heads(Context& ctx, const Tensor& x) {
  const std::size_t windows = x.dim(0), heads = x.dim(1), tokens = x.dim(2), hd = x.dim(3);
  Tensor p = ops::permute(ctx, x, {0, 2, 1, 3});
  return ops::reshape(ctx, p, {windows * tokens, heads * hd});
}

/// softmax(q k^T / sqrt(d) + bias) v over [W x I x M x d] operands.
inline Tensor attend(Context& ctx, std::string_view kernel, const Tensor& q, const Tensor& k,
                     const Tensor& v, const std::optional<Tensor>& bias, std::size_t head_dim) {
  Tensor logits = ops::matmul(ctx, q, ops::transpose_last2(ctx, k));
  logits = ops::scale(ctx, logits, 1.0 / std::sqrt(static_cast<double>(head_dim)));
  if (bias) logits = ops::add(ctx, logits, *bias);
  Tensor weights = ops::softmax_lastdim(ctx, logits);
  if (ctx.on_attention) ctx.on_attention(kernel, weights);
  return ops::matmul(ctx, weights, v);
}

inline void check_tokens(const Tensor& x, std::size_t dim, const char* what) {
  if (x.rank() != 2 || x.dim(1) != dim) {
    throw ShapeError(std::string(what) + " " + shape_str(x.shape()) + " does not have width " +
                     std::to_string(dim));
  }
}

}  // namespace detail

/// Vanilla multi-head cross-attention: queries from `q_src`, keys and values
/// from `kv_src`, over all N tokens.
inline Tensor mcsa(Context& ctx, const Tensor& q_src, const Tensor& kv_src, const AttentionParams& p,
                   std::string_view kernel = "mcsa") {
  p.validate();
  detail::check_tokens(q_src, p.dim, "mcsa query source");
  detail::check_tokens(kv_src, p.dim, "mcsa key/value source");
  if (q_src.dim(0) != kv_src.dim(0)) {
    throw ShapeError("mcsa: query source " + shape_str(q_src.shape()) + " and key/value source " +
                     shape_str(kv_src.shape()) + " differ in token count");
  }
  const std::size_t N = q_src.dim(0), I = p.heads, d = p.head_dim();
  Tensor q = detail::split_heads(ctx, ops::matmul(ctx, q_src, p.w_q), 1, N, I, d);
  Tensor k = detail::split_heads(ctx, ops::matmul(ctx, kv_src, p.w_k), 1, N, I, d);
  Tensor v = detail::split_heads(ctx, ops::matmul(ctx, kv_src, p.w_v), 1, N, I, d);
  Tensor o = detail::attend(ctx, kernel, q, k, v, std::nullopt, d);
  return ops::matmul(ctx, detail::merge_heads(ctx, o), p.w_o);
}

/// Multi-head self-attention.
inline Tensor msa(Context& ctx, const Tensor& x, const AttentionParams& p) {
  return mcsa(ctx, x, x, p, "msa");
}

/// Window-based multi-head cross-attention.
///
/// The image tokens are split into N/M contiguous windows of M tokens. Every
/// window is queried by the same pooled landmark tokens [M x D]; the query
/// projection is evaluated per window, so each window costs the same as an
/// M-token cross-attention.
inline Tensor w_mcsa(Context& ctx, const Tensor& x_img, const Tensor& x_lm_pooled,
                     const AttentionParams& p, const WindowLayout& layout) {
  p.validate();
  if (!p.bias_table) throw ConfigError("w_mcsa requires a relative position bias table");
  detail::check_tokens(x_img, p.dim, "w_mcsa image tokens");
  detail::check_tokens(x_lm_pooled, p.dim, "w_mcsa pooled landmark tokens");
  const std::size_t N = x_img.dim(0), M = layout.window_tokens;
  if (layout.total_tokens() != N || N % M != 0) {
    throw LayoutError("w_mcsa: " + std::to_string(N) + " image tokens do not fill " +
                      std::to_string(layout.num_windows) + " windows of " + std::to_string(M));
  }
  if (x_lm_pooled.dim(0) != M) {
    throw ShapeError("w_mcsa: pooled landmark has " + std::to_string(x_lm_pooled.dim(0)) +
                     " tokens, window holds " + std::to_string(M));
  }
  if (p.bias_table->dim(1) != M) {
    throw ShapeError("w_mcsa: bias_table " + shape_str(p.bias_table->shape()) +
                     " does not match window of " + std::to_string(M));
  }
  const std::size_t Wn = layout.num_windows, I = p.heads, d = p.head_dim();

  Tensor z_lm = ops::concat_tokens(ctx, std::vector<Tensor>(Wn, x_lm_pooled));
  Tensor q = detail::split_heads(ctx, ops::matmul(ctx, z_lm, p.w_q), Wn, M, I, d);
  Tensor k = detail::split_heads(ctx, ops::matmul(ctx, x_img, p.w_k), Wn, M, I, d);
  Tensor v = detail::split_heads(ctx, ops::matmul(ctx, x_img, p.w_v), Wn, M, I, d);
  Tensor o = detail::attend(ctx, "w_mcsa", q, k, v, p.bias_table, d);
  return ops::matmul(ctx, detail::merge_heads(ctx, o), p.w_o);
}

}  // namespace posterpp
