#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "posterpp/attention.hpp"
#include "posterpp/blocks.hpp"
#include "posterpp/gradcheck.hpp"
#include "posterpp/model.hpp"

/// Registry of finite-difference checks over every differentiable op,
/// attention kernel, block and the assembled model.
namespace posterpp::gradcheck {

struct Case {
  std::string name;
  std::string scope;  // "ops", "blocks" or "model"
  std::function<GradCheckResult(double h)> run;
};

inline Tensor randn(Rng& rng, Shape shape, double sd = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& e : v) e = rng.normal(0.0, sd);
  return Tensor(std::move(shape), std::move(v));
}

/// Flattens block parameters into a tensor list (projections, optional bias
/// table, norm, MLP) so they can be perturbed by check_gradients.
inline std::vector<Tensor> block_tensors(const BlockParams& b) {
  std::vector<Tensor> t{b.attention.w_q, b.attention.w_k, b.attention.w_v, b.attention.w_o};
  if (b.attention.bias_table) t.push_back(*b.attention.bias_table);
  for (const Tensor& x : {b.norm.gamma, b.norm.beta, b.mlp.fc1_w, b.mlp.fc1_b, b.mlp.fc2_w, b.mlp.fc2_b}) {
    t.push_back(x);
  }
  return t;
}

/// Inverse of block_tensors starting at `offset`; advances `offset`.
inline BlockParams block_from(const std::vector<Tensor>& t, std::size_t& offset, const BlockParams& shape_of) {
  BlockParams b;
  b.attention.dim = shape_of.attention.dim;
  b.attention.heads = shape_of.attention.heads;
  b.attention.w_q = t[offset++];
  b.attention.w_k = t[offset++];
  b.attention.w_v = t[offset++];
  b.attention.w_o = t[offset++];
  if (shape_of.attention.bias_table) b.attention.bias_table = t[offset++];
  b.norm.gamma = t[offset++];
  b.norm.beta = t[offset++];
  b.mlp.fc1_w = t[offset++];
  b.mlp.fc1_b = t[offset++];
  b.mlp.fc2_w = t[offset++];
  b.mlp.fc2_b = t[offset++];
  b.drop_path_rate = shape_of.drop_path_rate;
  return b;
}

/// Random block with nonzero bias table and norm affine.
inline BlockParams random_block(Rng& rng, std::size_t dim, std::size_t heads, std::size_t window_tokens,
                                bool windowed, double drop_path_rate = 0.0) {
  ParamStore store;
  ParamBuilder pb(store, rng);
  BlockParams b = pb.block("b", dim, heads, 2, window_tokens, windowed, drop_path_rate);
  std::vector<Tensor> t = block_tensors(b);
  for (Tensor& x : t) {
    for (double& v : x.mutable_values()) v += rng.normal(0.0, 0.2);
  }
  return b;
}

/// Attention params with random weights; bias table when windowed.
inline AttentionParams random_attention(Rng& rng, std::size_t dim, std::size_t heads, std::size_t window_tokens,
                                        bool windowed) {
  AttentionParams p;
  p.dim = dim;
  p.heads = heads;
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  p.w_q = randn(rng, {dim, dim}, sd);
  p.w_k = randn(rng, {dim, dim}, sd);
  p.w_v = randn(rng, {dim, dim}, sd);
  p.w_o = randn(rng, {dim, dim}, sd);
  if (windowed) p.bias_table = randn(rng, {heads, window_tokens, window_tokens}, 0.5);
  return p;
}

inline std::vector<Tensor> attention_tensors(const AttentionParams& p) {
  std::vector<Tensor> t{p.w_q, p.w_k, p.w_v, p.w_o};
  if (p.bias_table) t.push_back(*p.bias_table);
  return t;
}

inline AttentionParams attention_from(const std::vector<Tensor>& t, std::size_t offset, const AttentionParams& s) {
  AttentionParams p;
  p.dim = s.dim;
  p.heads = s.heads;
  p.w_q = t[offset];
  p.w_k = t[offset + 1];
  p.w_v = t[offset + 2];
  p.w_o = t[offset + 3];
  if (s.bias_table) p.bias_table = t[offset + 4];
  return p;
}

template <class... Ts>
std::vector<Tensor> join(std::vector<Tensor> a, const Ts&... rest) {
  (a.insert(a.end(), rest.begin(), rest.end()), ...);
  return a;
}

/// Desk configuration used by the model-level check.
inline ModelConfig desk_model_config() { return ModelConfig{}; }

/// Samples `per_tensor` coordinates of every trainable parameter and
/// compares the tape gradient of the cross-entropy loss with central
/// differences taken in place on the parameter.
inline GradCheckResult check_model(const ModelConfig& cfg, double h, std::size_t per_tensor, std::uint64_t seed) {
  Model model = Model::build(cfg, seed);
  Rng rng(seed + 1);
  const Tensor image = randn(rng, {kImageChannels, cfg.input_height, cfg.input_width}, 0.5);
  const std::vector<std::size_t> label{seed % cfg.num_classes};
  auto loss = [&](Context& ctx) {
    Rng fwd(seed + 2);
    Tensor logits = model.forward(ctx, image, Mode::train, fwd);
    return ops::cross_entropy(ctx, ops::reshape(ctx, logits, {1, cfg.num_classes}), label);
  };
  Tape tape;
  Context ctx(&tape);
  backward(loss(ctx), tape);
  tape.clear();

  GradCheckResult res;
  for (const auto& e : model.params().entries()) {
    if (!e.trainable) continue;
    Tensor t = e.tensor;
    const auto analytic = t.grad();
    for (std::size_t k = 0; k < std::min(per_tensor, t.size()); ++k) {
      const std::size_t idx = rng.below(t.size());
      const double numeric = finite_diff_at(
          [&] {
            Context c;
            return loss(c).item();
          },
          t, idx, h);
      res.max_rel_err = std::max(res.max_rel_err, relative_error(analytic[idx], numeric));
      ++res.checked;
    }
  }
  return res;
}

inline std::vector<Case> cases() {
  std::vector<Case> out;
  auto add = [&](std::string name, std::string scope, std::function<GradCheckResult(double)> fn) {
    out.push_back({std::move(name), std::move(scope), std::move(fn)});
  };
  auto op = [&](std::string name, TensorFn f, std::function<std::vector<Tensor>(Rng&)> make) {
    add(name, "ops", [f, make](double h) {
      Rng rng(101);
      return check_gradients(f, make(rng), 7, h);
    });
  };

  op("matmul", [](Context& c, const auto& t) { return ops::matmul(c, t[0], t[1]); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {2, 3, 4}), randn(r, {1, 4, 2})}; });
  op("reshape", [](Context& c, const auto& t) { return ops::reshape(c, t[0], {3, 4}); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {2, 6})}; });
  op("permute", [](Context& c, const auto& t) { return ops::permute(c, t[0], {2, 0, 1}); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {2, 3, 4})}; });
  op("transpose_last2", [](Context& c, const auto& t) { return ops::transpose_last2(c, t[0]); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {3, 5})}; });
  op("add", [](Context& c, const auto& t) { return ops::add(c, t[0], t[1]); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {2, 3, 4}), randn(r, {3, 4})}; });
  op("mul", [](Context& c, const auto& t) { return ops::mul(c, t[0], t[1]); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {3, 4}), randn(r, {3, 4})}; });
  op("scale", [](Context& c, const auto& t) { return ops::scale(c, t[0], -1.7); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {5})}; });
  op("sum", [](Context& c, const auto& t) { return ops::sum(c, t[0]); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {2, 3})}; });
  op("gelu", [](Context& c, const auto& t) { return ops::gelu(c, t[0]); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {4, 5}, 2.0)}; });
  op("softmax_lastdim", [](Context& c, const auto& t) { return ops::softmax_lastdim(c, t[0]); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {3, 6})}; });
  op("layer_norm", [](Context& c, const auto& t) { return ops::layer_norm(c, t[0], t[1], t[2]); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {4, 6}), randn(r, {6}), randn(r, {6})}; });
  op("linear", [](Context& c, const auto& t) { return ops::linear(c, t[0], t[1], t[2]); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {3, 4}), randn(r, {4, 2}), randn(r, {2})}; });
  op("concat_tokens", [](Context& c, const auto& t) { return ops::concat_tokens(c, {t[0], t[1], t[0]}); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {2, 3}), randn(r, {1, 3})}; });
  op("slice_tokens", [](Context& c, const auto& t) { return ops::slice_tokens(c, t[0], 1, 2); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {4, 3})}; });
  op("mean_pool_tokens", [](Context& c, const auto& t) { return ops::mean_pool_tokens(c, t[0]); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {5, 3})}; });
  op("cross_entropy",
     [](Context& c, const auto& t) {
       const std::vector<std::size_t> y{1, 0, 3};
       return ops::cross_entropy(c, t[0], y);
     },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {3, 4})}; });
  op("avg_pool2d", [](Context& c, const auto& t) { return ops::avg_pool2d(c, t[0], 2, 3); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {2, 4, 6})}; });
  op("space_to_depth", [](Context& c, const auto& t) { return ops::space_to_depth(c, t[0], 4, 2, 2); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {8, 3})}; });
  op("window_partition", [](Context& c, const auto& t) { return window_partition(c, t[0], 3); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {6, 2})}; });
  op("window_merge", [](Context& c, const auto& t) { return window_merge(c, t[0]); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {2, 3, 2})}; });
  op("downsample_landmark", [](Context& c, const auto& t) { return downsample_landmark(c, t[0], 2, 2); },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {3, 4, 4})}; });
  op("drop_path",
     [](Context& c, const auto& t) {
       Rng rng(3);  // fixed draw: the same mask on every evaluation
       return drop_path(c, t[0], 0.3, Mode::train, rng);
     },
     [](Rng& r) { return std::vector<Tensor>{randn(r, {4, 3})}; });

  // Attention kernels at N = 8, D = 8, I = 2, M = 4.
  constexpr std::size_t N = 8, D = 8, I = 2, M = 4;
  add("msa", "ops", [](double h) {
    Rng rng(202);
    const auto p = random_attention(rng, D, I, M, false);
    return check_gradients(
        [p](Context& c, const auto& t) { return msa(c, t[0], attention_from(t, 1, p)); },
        join({randn(rng, {N, D})}, attention_tensors(p)), 9, h);
  });
  add("mcsa", "ops", [](double h) {
    Rng rng(203);
    const auto p = random_attention(rng, D, I, M, false);
    return check_gradients(
        [p](Context& c, const auto& t) { return mcsa(c, t[0], t[1], attention_from(t, 2, p)); },
        join({randn(rng, {N, D}), randn(rng, {N, D})}, attention_tensors(p)), 9, h);
  });
  add("w_mcsa", "ops", [](double h) {
    Rng rng(204);
    const auto p = random_attention(rng, D, I, M, true);
    const auto layout = WindowLayout::for_tokens(N, M);
    return check_gradients(
        [p, layout](Context& c, const auto& t) { return w_mcsa(c, t[0], t[1], attention_from(t, 2, p), layout); },
        join({randn(rng, {N, D}), randn(rng, {M, D})}, attention_tensors(p)), 9, h);
  });

  add("transformer_block", "blocks", [](double h) {
    Rng rng(301);
    const auto b = random_block(rng, D, I, 0, false, 0.2);
    return check_gradients(
        [b](Context& c, const auto& t) {
          std::size_t off = 1;
          Rng dp(5);
          return transformer_block(c, t[0], block_from(t, off, b), Mode::train, dp);
        },
        join({randn(rng, {N, D})}, block_tensors(b)), 11, h);
  });
  add("cross_fusion_v1", "blocks", [](double h) {
    Rng rng(302);
    const auto bi = random_block(rng, D, I, 0, false);
    const auto bl = random_block(rng, D, I, 0, false);
    return check_gradients(
        [bi, bl](Context& c, const auto& t) {
          std::size_t off = 2;
          const auto pi = block_from(t, off, bi);
          const auto pl = block_from(t, off, bl);
          Rng dp(5);
          auto [a, b] = cross_fusion_v1(c, t[0], t[1], pi, pl, Mode::eval, dp);
          return ops::concat_tokens(c, {a, b});
        },
        join({randn(rng, {N, D}), randn(rng, {N, D})}, block_tensors(bi), block_tensors(bl)), 11, h);
  });
  add("cross_fusion_v2", "blocks", [](double h) {
    Rng rng(303);
    const auto b = random_block(rng, D, I, M, true);
    const auto layout = WindowLayout::for_tokens(N, M);
    return check_gradients(
        [b, layout](Context& c, const auto& t) {
          std::size_t off = 2;
          Rng dp(5);
          return cross_fusion_v2(c, t[0], t[1], block_from(t, off, b), layout, Mode::eval, dp);
        },
        join({randn(rng, {N, D}), randn(rng, {D, 4, 4})}, block_tensors(b)), 11, h);
  });

  add("model", "model", [](double h) { return check_model(desk_model_config(), h, 3, 17); });
  return out;
}

}  // namespace posterpp::gradcheck
