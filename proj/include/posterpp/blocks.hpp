#pragma once

#include <cstddef>
#include <utility>

#include "posterpp/attention.hpp"
#include "posterpp/ops.hpp"
#include "posterpp/rng.hpp"

namespace posterpp {

enum class Mode { train, eval };

struct MlpParams {
  Tensor fc1_w, fc1_b;  // D x rD, rD
  Tensor fc2_w, fc2_b;  // rD x D, D
};

struct NormParams {
  Tensor gamma, beta;
};

/// Attention plus the pre-normed MLP residual that follows it.
struct BlockParams {
  AttentionParams attention;
  MlpParams mlp;
  NormParams norm;
  double drop_path_rate = 0.0;
};

inline Tensor mlp(Context& ctx, const Tensor& x, const MlpParams& p) {
  Tensor h = ops::gelu(ctx, ops::linear(ctx, x, p.fc1_w, p.fc1_b));
  return ops::linear(ctx, h, p.fc2_w, p.fc2_b);
}

/// Stochastic depth on one residual branch of one sample. In train mode the
/// whole branch is dropped with probability `rate`, survivors are scaled by
/// 1 / (1 - rate). Eval mode and rate 0 are the identity and draw nothing.
inline Tensor drop_path(Context& ctx, const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (mode == Mode::eval || rate <= 0.0) return x;
  const bool keep = rng.uniform() >= rate;
  return ops::scale(ctx, x, keep ? 1.0 / (1.0 - rate) : 0.0);
}

/// x' = attn_out + x; out = MLP(Norm(x')) + x', both branches drop-pathed.
inline Tensor residual_mlp(Context& ctx, const Tensor& x, const Tensor& attn_out, const BlockParams& p,
                           Mode mode, Rng& rng) {
  Tensor x1 = ops::add(ctx, x, drop_path(ctx, attn_out, p.drop_path_rate, mode, rng));
  Tensor h = mlp(ctx, ops::layer_norm(ctx, x1, p.norm.gamma, p.norm.beta), p.mlp);
  return ops::add(ctx, x1, drop_path(ctx, h, p.drop_path_rate, mode, rng));
}

/// Vanilla transformer block used by the integration stack.
inline Tensor transformer_block(Context& ctx, const Tensor& x, const BlockParams& p, Mode mode, Rng& rng) {
  return residual_mlp(ctx, x, msa(ctx, x, p.attention), p, mode, rng);
}

/// Landmark-to-image cross-fusion with vanilla attention: landmark tokens
/// [N x D] query the image tokens [N x D].
inline Tensor cross_fusion_vanilla(Context& ctx, const Tensor& x_img, const Tensor& x_lm,
                                   const BlockParams& p, Mode mode, Rng& rng) {
  return residual_mlp(ctx, x_img, mcsa(ctx, x_lm, x_img, p.attention), p, mode, rng);
}

/// Window-based landmark-to-image cross-fusion. The landmark map
/// [C x H x W] (C == D) is pooled to the window size and queries every
/// window of image tokens.
inline Tensor cross_fusion_v2(Context& ctx, const Tensor& x_img, const Tensor& x_lm, const BlockParams& p,
                              const WindowLayout& layout, Mode mode, Rng& rng) {
  if (x_lm.rank() != 3 || x_lm.dim(0) != p.attention.dim) {
    throw ShapeError("cross_fusion_v2: landmark map " + shape_str(x_lm.shape()) + " needs " +
                     std::to_string(p.attention.dim) + " channels");
  }
  const auto [h, w] = window_grid(layout.window_tokens, x_lm.dim(1), x_lm.dim(2));
  Tensor z_lm = downsample_landmark(ctx, x_lm, h, w);
  return residual_mlp(ctx, x_img, w_mcsa(ctx, x_img, z_lm, p.attention, layout), p, mode, rng);
}

/// Which halves of the bidirectional encoder run.
struct V1Branches {
  bool lm_to_img = true;  // landmark queries attend to image tokens
  bool img_to_lm = true;  // image queries attend to landmark tokens
};

/// Bidirectional two-stream cross-fusion. Returns (image stream, landmark
/// stream); a disabled branch passes its stream through unchanged.
inline std::pair<Tensor, Tensor> cross_fusion_v1(Context& ctx, const Tensor& x_img, const Tensor& x_lm,
                                                 const BlockParams& p_img, const BlockParams& p_lm,
                                                 Mode mode, Rng& rng, V1Branches branches = {}) {
  if (x_img.shape() != x_lm.shape()) {
    throw ShapeError("cross_fusion_v1: image " + shape_str(x_img.shape()) + " vs landmark " +
                     shape_str(x_lm.shape()));
  }
  Tensor img_out = branches.lm_to_img ? cross_fusion_vanilla(ctx, x_img, x_lm, p_img, mode, rng) : x_img;
  Tensor lm_out = branches.img_to_lm ? cross_fusion_vanilla(ctx, x_lm, x_img, p_lm, mode, rng) : x_lm;
  return {img_out, lm_out};
}

}  // namespace posterpp
