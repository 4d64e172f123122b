#pragma once

#include <string>
#include <vector>

#include "posterpp/model.hpp"

namespace posterpp {

/// Attention mass received by each token of one scale's grid.
struct ScaleMap {
  std::size_t scale = 0;
  std::size_t height = 0, width = 0;
  std::vector<double> mass;  // row-major over the scale grid
  std::string kernel;
};

/// Sums a [W x I x Mq x Mk] attention tensor over heads and queries, giving
/// the mass on each of the W * Mk key tokens in order.
inline std::vector<double> key_mass(const Tensor& weights) {
  if (weights.rank() != 4) throw ShapeError("key_mass expects [W x I x Mq x Mk], got " + shape_str(weights.shape()));
  const std::size_t W = weights.dim(0), I = weights.dim(1), Mq = weights.dim(2), Mk = weights.dim(3);
  std::vector<double> mass(W * Mk, 0.0);
  const auto v = weights.values();
  for (std::size_t w = 0; w < W; ++w)
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t q = 0; q < Mq; ++q)
        for (std::size_t k = 0; k < Mk; ++k) mass[w * Mk + k] += v[((w * I + i) * Mq + q) * Mk + k];
  return mass;
}

/// Runs one eval-mode forward and captures the fusion attention of every
/// active scale. With the bidirectional reference variant the
/// landmark-to-image half is used when it is enabled.
inline std::vector<ScaleMap> attention_maps(const Model& model, const Tensor& input) {
  const ModelConfig& cfg = model.config();
  if (!cfg.has_fusion()) throw ConfigError("attnmap needs the cross-fusion stage (no_crossfusion is set)");
  std::vector<std::pair<std::string, Tensor>> seen;
  Context ctx;
  ctx.on_attention = [&](std::string_view kernel, const Tensor& w) {
    if (kernel != "msa") seen.emplace_back(std::string(kernel), w);
  };
  Rng rng(0);
  model.forward(ctx, input, Mode::eval, rng);

  const std::size_t per_scale =
      cfg.variant == Variant::v1_reference ? (cfg.v1_lm_to_img() ? 1 : 0) + (cfg.v1_img_to_lm() ? 1 : 0) : 1;
  const auto scales = cfg.active_scales();
  if (seen.size() != scales.size() * per_scale) {
    throw ContractError("attnmap: expected " + std::to_string(scales.size() * per_scale) + " fusion maps, saw " +
                        std::to_string(seen.size()));
  }
  std::vector<ScaleMap> maps;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const auto& [kernel, w] = seen[i * per_scale];
    const std::size_t s = scales[i];
    ScaleMap m{s, cfg.grid_h(s), cfg.grid_w(s), key_mass(w), kernel};
    if (m.mass.size() != cfg.tokens(s)) throw ContractError("attnmap: token count mismatch at scale " + std::to_string(s));
    maps.push_back(std::move(m));
  }
  return maps;
}

}  // namespace posterpp
