#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "posterpp/attention.hpp"
#include "posterpp/blocks.hpp"
#include "posterpp/ops.hpp"
#include "posterpp/params.hpp"
#include "posterpp/rng.hpp"

namespace posterpp {

enum class Variant { v2, v1_reference };

inline const char* to_string(Variant v) { return v == Variant::v2 ? "v2" : "v1_reference"; }

struct Ablations {
  bool no_multiscale = false;   // fuse the last scale only
  bool no_vit = false;          // sum per-scale pooled features instead of the integration stack
  bool no_wmcsa = false;        // vanilla cross-attention over the full map
  bool no_crossfusion = false;  // merge image and landmark tokens without fusion
  bool no_img2lm = false;       // v1_reference: drop the image-to-landmark half
  bool no_lm2img = false;       // v1_reference: drop the landmark-to-image half
};

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kFirstStride = 8;

struct ModelConfig {
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::size_t num_scales = 3;
  std::vector<std::size_t> scale_dims{32, 64, 128};
  std::size_t d_model = 128;
  std::size_t heads = 4;
  std::vector<std::size_t> window_tokens{16, 4, 4};
  std::size_t vit_depth = 2;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 7;
  Variant variant = Variant::v2;
  Ablations ablations;
  double drop_path_max = 0.5;
  bool landmark_frozen = true;

  std::size_t stride(std::size_t scale) const { return kFirstStride << scale; }
  std::size_t grid_h(std::size_t scale) const { return input_height / stride(scale); }
  std::size_t grid_w(std::size_t scale) const { return input_width / stride(scale); }
  std::size_t tokens(std::size_t scale) const { return grid_h(scale) * grid_w(scale); }

  /// Scales that feed the fusion stage, in forward order.
  std::vector<std::size_t> active_scales() const {
    if (ablations.no_multiscale) return {num_scales - 1};
    std::vector<std::size_t> s(num_scales);
    for (std::size_t i = 0; i < num_scales; ++i) s[i] = i;
    return s;
  }

  bool has_fusion() const { return !ablations.no_crossfusion; }
  bool windowed() const { return variant == Variant::v2 && has_fusion() && !ablations.no_wmcsa; }
  bool v1_lm_to_img() const { return variant == Variant::v1_reference && !ablations.no_lm2img; }
  bool v1_img_to_lm() const { return variant == Variant::v1_reference && !ablations.no_img2lm; }

  /// Token groups handed to the merge step: (scale, from landmark stream).
  std::vector<std::pair<std::size_t, bool>> token_groups() const {
    std::vector<std::pair<std::size_t, bool>> g;
    for (std::size_t s : active_scales()) {
      if (!has_fusion()) {
        g.emplace_back(s, false);
        g.emplace_back(s, true);
      } else if (variant == Variant::v1_reference) {
        if (v1_lm_to_img()) g.emplace_back(s, false);
        if (v1_img_to_lm()) g.emplace_back(s, true);
      } else {
        g.emplace_back(s, false);
      }
    }
    return g;
  }

  std::size_t merged_tokens() const {
    std::size_t n = 0;
    for (auto [s, lm] : token_groups()) n += tokens(s);
    return n;
  }

  /// Drop-path rates over the attention-bearing blocks in forward order:
  /// fusion blocks of the active scales, then the integration layers.
  std::vector<double> drop_path_rates() const {
    const std::size_t n = (has_fusion() ? active_scales().size() : 0) + (ablations.no_vit ? 0 : vit_depth);
    std::vector<double> r(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) {
      r[i] = drop_path_max * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return r;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (num_scales == 0 || num_scales > 5) fail("num_scales must be in [1, 5]");
    if (scale_dims.size() != num_scales) fail("scale_dims needs one entry per scale");
    if (window_tokens.size() != num_scales) fail("window_tokens needs one entry per scale");
    const std::size_t coarsest = stride(num_scales - 1);
    if (input_height == 0 || input_width == 0 || input_height % coarsest || input_width % coarsest) {
      fail("input " + std::to_string(input_height) + "x" + std::to_string(input_width) +
           " not divisible by the coarsest stride " + std::to_string(coarsest));
    }
    if (heads == 0) fail("heads must be positive");
    for (std::size_t d : scale_dims) {
      if (d == 0 || d % heads) fail("scale dim " + std::to_string(d) + " not divisible by heads");
    }
    if (d_model == 0 || d_model % heads) fail("d_model not divisible by heads");
    if (vit_depth < 1) fail("vit_depth must be >= 1");
    if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (!(drop_path_max >= 0.0 && drop_path_max <= 0.5)) fail("drop_path_max must be in [0, 0.5]");
    if (variant == Variant::v2 && (ablations.no_img2lm || ablations.no_lm2img)) {
      fail("no_img2lm / no_lm2img apply to v1_reference only");
    }
    if (variant == Variant::v1_reference) {
      if (ablations.no_img2lm && ablations.no_lm2img) fail("cannot disable both v1 branches");
      if (ablations.no_wmcsa) fail("no_wmcsa does not apply to v1_reference");
    }
    if (windowed()) {
      for (std::size_t s : active_scales()) {
        const std::size_t m = window_tokens[s];
        if (m == 0 || tokens(s) % m) {
          fail("scale " + std::to_string(s) + ": " + std::to_string(tokens(s)) +
               " tokens not divisible into windows of " + std::to_string(m));
        }
        try {
          window_grid(m, grid_h(s), grid_w(s));
        } catch (const LayoutError& e) {
          fail(e.what());
        }
      }
    }
  }
};

/// Per-scale features of both streams: image tokens [N_i x D_i] and landmark
/// maps [D_i x H_i x W_i].
struct FeaturePyramid {
  std::vector<Tensor> image_feats;
  std::vector<Tensor> landmark_feats;
};

/// One patch-merging stage: space_to_depth then linear + GELU.
struct StageParams {
  Tensor weight, bias;
};

/// [C x H x W] map -> [H*W x C] tokens.
inline Tensor map_to_tokens(Context& ctx, const Tensor& map) {
  Tensor flat = ops::reshape(ctx, map, {map.dim(0), map.dim(1) * map.dim(2)});
  return ops::transpose_last2(ctx, flat);
}

/// [H*W x C] tokens -> [C x H x W] map.
inline Tensor tokens_to_map(Context& ctx, const Tensor& tokens, std::size_t H, std::size_t W) {
  Tensor t = ops::transpose_last2(ctx, tokens);
  return ops::reshape(ctx, t, {tokens.dim(1), H, W});
}

/// Strided patch-merging pyramid standing in for a pretrained backbone.
/// Returns one token matrix per scale, at strides 8, 16, 32, ...
inline std::vector<Tensor> run_stage_stack(Context& ctx, const Tensor& image, const ModelConfig& cfg,
                                           const std::vector<StageParams>& stages) {
  if (image.rank() != 3 || image.dim(0) != kImageChannels || image.dim(1) != cfg.input_height ||
      image.dim(2) != cfg.input_width) {
    throw ConfigError("input image " + shape_str(image.shape()) + " does not match configured " +
                      shape_str({kImageChannels, cfg.input_height, cfg.input_width}));
  }
  std::vector<Tensor> out;
  Tensor x = map_to_tokens(ctx, image);
  std::size_t h = cfg.input_height, w = cfg.input_width;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::size_t p = s == 0 ? kFirstStride : 2;
    x = ops::space_to_depth(ctx, x, h, w, p);
    h /= p;
    w /= p;
    x = ops::gelu(ctx, ops::linear(ctx, x, stages[s].weight, stages[s].bias));
    out.push_back(x);
  }
  return out;
}

/// Landmark-guided facial expression network over toy backbones.
class Model {
 public:
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  static Model build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m(cfg);
    Rng rng(seed);
    ParamBuilder pb(m.store_, rng);
    const bool lm_trainable = !cfg.landmark_frozen;

    auto stages = [&](const std::string& prefix, bool trainable, std::vector<StageParams>& dst) {
      std::size_t in = kImageChannels * kFirstStride * kFirstStride;
      for (std::size_t s = 0; s < cfg.num_scales; ++s) {
        const std::string p = prefix + "." + std::to_string(s);
        StageParams sp;
        sp.weight = pb.weight(p + ".weight", in, cfg.scale_dims[s], trainable);
        sp.bias = pb.constant(p + ".bias", {cfg.scale_dims[s]}, 0.0, trainable);
        dst.push_back(sp);
        in = 4 * cfg.scale_dims[s];
      }
    };
    stages("backbone", true, m.backbone_);
    stages("landmark", lm_trainable, m.landmark_);

    const auto rates = cfg.drop_path_rates();
    std::size_t block = 0;
    m.fusion_.resize(cfg.num_scales);
    m.fusion_lm_.resize(cfg.num_scales);
    if (cfg.has_fusion()) {
      for (std::size_t s : cfg.active_scales()) {
        const std::string p = "fusion." + std::to_string(s);
        const std::size_t D = cfg.scale_dims[s];
        const double rate = rates[block++];
        if (cfg.variant == Variant::v2) {
          m.fusion_[s] = pb.block(p, D, cfg.heads, cfg.mlp_ratio, cfg.window_tokens[s], cfg.windowed(), rate);
        } else {
          if (cfg.v1_lm_to_img()) m.fusion_[s] = pb.block(p + ".img", D, cfg.heads, cfg.mlp_ratio, 0, false, rate);
          if (cfg.v1_img_to_lm()) m.fusion_lm_[s] = pb.block(p + ".lm", D, cfg.heads, cfg.mlp_ratio, 0, false, rate);
        }
      }
    }

    m.proj_.resize(cfg.num_scales);
    m.lm_proj_.resize(cfg.num_scales);
    for (auto [s, from_lm] : cfg.token_groups()) {
      const std::string p = (from_lm ? "lm_proj." : "proj.") + std::to_string(s);
      StageParams sp;
      sp.weight = pb.weight(p + ".weight", cfg.scale_dims[s], cfg.d_model, true);
      sp.bias = pb.constant(p + ".bias", {cfg.d_model}, 0.0, true);
      (from_lm ? m.lm_proj_ : m.proj_)[s] = sp;
    }

    if (!cfg.ablations.no_vit) {
      for (std::size_t i = 0; i < cfg.vit_depth; ++i) {
        m.vit_.push_back(pb.block("vit." + std::to_string(i), cfg.d_model, cfg.heads, cfg.mlp_ratio, 0, false,
                                  rates[block++]));
      }
    }
    m.head_.weight = pb.weight("head.weight", cfg.d_model, cfg.num_classes, true, 0.1);
    m.head_.bias = pb.constant("head.bias", {cfg.num_classes}, 0.0, true);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const std::vector<BlockParams>& vit_blocks() const { return vit_; }
  const BlockParams& fusion_block(std::size_t scale) const { return fusion_.at(scale); }

  std::vector<Tensor> toy_backbone(Context& ctx, const Tensor& image) const {
    return run_stage_stack(ctx, image, cfg_, backbone_);
  }

  /// Landmark stream as [D_i x H_i x W_i] maps.
  std::vector<Tensor> toy_landmark_branch(Context& ctx, const Tensor& image) const {
    auto tokens = run_stage_stack(ctx, image, cfg_, landmark_);
    std::vector<Tensor> maps;
    for (std::size_t s = 0; s < tokens.size(); ++s) {
      maps.push_back(tokens_to_map(ctx, tokens[s], cfg_.grid_h(s), cfg_.grid_w(s)));
    }
    return maps;
  }

  FeaturePyramid features(Context& ctx, const Tensor& image) const {
    return {toy_backbone(ctx, image), toy_landmark_branch(ctx, image)};
  }

  /// Logits [num_classes] for one image [3 x H x W].
  Tensor forward(Context& ctx, const Tensor& image, Mode mode, Rng& rng) const {
    const FeaturePyramid pyr = features(ctx, image);
    const auto& ab = cfg_.ablations;
    std::vector<Tensor> groups;
    for (std::size_t s : cfg_.active_scales()) {
      Rng block_rng = rng.split();
      const Tensor& img = pyr.image_feats[s];
      const Tensor& lm_map = pyr.landmark_feats[s];
      auto project = [&](const Tensor& t, const StageParams& p) {
        groups.push_back(ops::linear(ctx, t, p.weight, p.bias));
      };
      if (!cfg_.has_fusion()) {
        project(img, proj_[s]);
        project(map_to_tokens(ctx, lm_map), lm_proj_[s]);
      } else if (cfg_.variant == Variant::v1_reference) {
        V1Branches br{cfg_.v1_lm_to_img(), cfg_.v1_img_to_lm()};
        const Tensor lm_tokens = map_to_tokens(ctx, lm_map);
        auto [img_o, lm_o] = cross_fusion_v1(ctx, img, lm_tokens, fusion_[s], fusion_lm_[s], mode, block_rng, br);
        if (br.lm_to_img) project(img_o, proj_[s]);
        if (br.img_to_lm) project(lm_o, lm_proj_[s]);
      } else if (ab.no_wmcsa) {
        project(cross_fusion_vanilla(ctx, img, map_to_tokens(ctx, lm_map), fusion_[s], mode, block_rng), proj_[s]);
      } else {
        const auto layout = WindowLayout::for_tokens(cfg_.tokens(s), cfg_.window_tokens[s]);
        project(cross_fusion_v2(ctx, img, lm_map, fusion_[s], layout, mode, block_rng), proj_[s]);
      }
    }

    Tensor pooled;
    if (ab.no_vit) {
      for (const Tensor& g : groups) {
        Tensor p = ops::mean_pool_tokens(ctx, g);
        pooled = pooled.defined() ? ops::add(ctx, pooled, p) : p;
      }
    } else {
      Tensor o = groups.size() == 1 ? groups.front() : ops::concat_tokens(ctx, groups);
      for (const auto& blk : vit_) {
        Rng block_rng = rng.split();
        o = transformer_block(ctx, o, blk, mode, block_rng);
      }
      pooled = ops::mean_pool_tokens(ctx, o);
    }
    Tensor row = ops::reshape(ctx, pooled, {1, cfg_.d_model});
    Tensor logits = ops::linear(ctx, row, head_.weight, head_.bias);
    for (double v : logits.values()) {
      if (!std::isfinite(v)) throw NumericError("forward produced a non-finite logit");
    }
    return ops::reshape(ctx, logits, {cfg_.num_classes});
  }

 private:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {}

  ModelConfig cfg_;
  ParamStore store_;
  std::vector<StageParams> backbone_, landmark_;
  std::vector<BlockParams> fusion_, fusion_lm_;
  std::vector<StageParams> proj_, lm_proj_;
  std::vector<BlockParams> vit_;
  StageParams head_;
};

/// Parameter census entry for one module path.
struct CensusEntry {
  std::string module;
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  std::size_t total() const { return trainable + frozen; }
};

/// Exhaustive enumeration of the model's parameter tensors grouped by module
/// path, in registration order.
inline std::vector<CensusEntry> count_units(const ParamStore& store) {
  std::vector<CensusEntry> out;
  std::map<std::string, std::size_t> where;
  for (const auto& e : store.entries()) {
    const std::string mod = module_of(e.path);
    auto it = where.find(mod);
    if (it == where.end()) {
      it = where.emplace(mod, out.size()).first;
      out.push_back({mod});
    }
    (e.trainable ? out[it->second].trainable : out[it->second].frozen) += e.tensor.size();
  }
  return out;
}

}  // namespace posterpp
