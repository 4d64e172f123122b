#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "posterpp/attention.hpp"
#include "posterpp/model.hpp"
#include "posterpp/rng.hpp"

namespace posterpp {

using Macs = std::uint64_t;

/// 4ND^2 + 2N^2D: four D x D projections over N tokens plus the two N x N
/// attention contractions.
inline Macs analytic_mcsa_cost(Macs n, Macs d) { return 4 * n * d * d + 2 * n * n * d; }

/// 4ND^2 + 2MND for windows of M tokens (N/M windows of 2M^2D each). With
/// `literal_square` the window term is evaluated as 2M^2ND instead, which is
/// the same expression read with M as a window side length.
inline Macs analytic_wmcsa_cost(Macs n, Macs d, Macs window_tokens, bool literal_square = false) {
  if (window_tokens == 0 || n % window_tokens != 0) {
    throw LayoutError("analytic_wmcsa_cost: " + std::to_string(n) + " tokens not divisible into windows of " +
                      std::to_string(window_tokens));
  }
  const Macs window_term = literal_square ? 2 * window_tokens * window_tokens * n * d : 2 * window_tokens * n * d;
  return 4 * n * d * d + window_term;
}

struct CostEntry {
  std::string module;
  std::uint64_t params = 0;
  Macs macs = 0;
  bool frozen = false;
};

/// Parameter and MAC rollup. One MAC counts as two FLOPs.
struct CostReport {
  std::vector<CostEntry> entries;
  std::uint64_t total_params() const {
    std::uint64_t n = 0;
    for (const auto& e : entries) n += e.params;
    return n;
  }
  Macs total_macs() const {
    Macs n = 0;
    for (const auto& e : entries) n += e.macs;
    return n;
  }
  Macs total_flops() const { return 2 * total_macs(); }
};

namespace detail {

inline std::uint64_t block_params(std::uint64_t d, std::uint64_t heads, std::uint64_t ratio, std::uint64_t m,
                                  bool windowed) {
  const std::uint64_t hidden = d * ratio;
  return 4 * d * d + (windowed ? heads * m * m : 0) + 2 * d + (d * hidden + hidden) + (hidden * d + d);
}

inline Macs mlp_macs(Macs n, Macs d, Macs ratio) { return 2 * n * d * d * ratio; }

}  // namespace detail

/// Analytic per-module parameter and MAC counts for a configuration, derived
/// from layer shapes alone (independent of any built parameter store).
/// Softmax, normalisation, GELU, pooling and bias adds carry no MACs.
inline CostReport model_cost(const ModelConfig& cfg) {
  cfg.validate();
  CostReport r;
  const auto stack = [&](const std::string& name, bool frozen) {
    std::uint64_t in = kImageChannels * kFirstStride * kFirstStride;
    for (std::size_t s = 0; s < cfg.num_scales; ++s) {
      r.entries.push_back({name + "." + std::to_string(s), in * cfg.scale_dims[s] + cfg.scale_dims[s],
                           static_cast<Macs>(cfg.tokens(s)) * in * cfg.scale_dims[s], frozen});
      in = 4 * cfg.scale_dims[s];
    }
  };
  stack("backbone", false);
  stack("landmark", cfg.landmark_frozen);

  if (cfg.has_fusion()) {
    for (std::size_t s : cfg.active_scales()) {
      const Macs n = cfg.tokens(s), d = cfg.scale_dims[s], m = cfg.window_tokens[s];
      CostEntry e{"fusion." + std::to_string(s)};
      if (cfg.variant == Variant::v2) {
        e.params = detail::block_params(d, cfg.heads, cfg.mlp_ratio, m, cfg.windowed());
        e.macs = (cfg.windowed() ? analytic_wmcsa_cost(n, d, m) : analytic_mcsa_cost(n, d)) +
                 detail::mlp_macs(n, d, cfg.mlp_ratio);
      } else {
        const int halves = (cfg.v1_lm_to_img() ? 1 : 0) + (cfg.v1_img_to_lm() ? 1 : 0);
        e.params = halves * detail::block_params(d, cfg.heads, cfg.mlp_ratio, 0, false);
        e.macs = halves * (analytic_mcsa_cost(n, d) + detail::mlp_macs(n, d, cfg.mlp_ratio));
      }
      r.entries.push_back(e);
    }
  }
  for (auto [s, from_lm] : cfg.token_groups()) {
    const std::uint64_t d = cfg.scale_dims[s];
    r.entries.push_back({(from_lm ? "lm_proj." : "proj.") + std::to_string(s), d * cfg.d_model + cfg.d_model,
                         static_cast<Macs>(cfg.tokens(s)) * d * cfg.d_model, false});
  }
  if (!cfg.ablations.no_vit) {
    const Macs t = cfg.merged_tokens(), d = cfg.d_model;
    for (std::size_t i = 0; i < cfg.vit_depth; ++i) {
      r.entries.push_back({"vit." + std::to_string(i), detail::block_params(d, cfg.heads, cfg.mlp_ratio, 0, false),
                           analytic_mcsa_cost(t, d) + detail::mlp_macs(t, d, cfg.mlp_ratio), false});
    }
  }
  r.entries.push_back({"head", static_cast<std::uint64_t>(cfg.d_model) * cfg.num_classes + cfg.num_classes,
                       static_cast<Macs>(cfg.d_model) * cfg.num_classes, false});
  return r;
}

/// MACs actually executed by one eval-mode forward pass.
inline Macs instrumented_forward_macs(const Model& model, const Tensor& image) {
  MacCounter counter;
  Context ctx;
  ctx.counter = &counter;
  Rng rng(0);
  model.forward(ctx, image, Mode::eval, rng);
  return counter.macs;
}

enum class Kernel { mcsa, w_mcsa };

inline const char* to_string(Kernel k) { return k == Kernel::mcsa ? "mcsa" : "w_mcsa"; }

/// Random inputs and weights for timing or counting one attention kernel.
struct KernelFixture {
  Tensor x_img, x_lm;
  AttentionParams params;
  WindowLayout layout;

  static KernelFixture make(Kernel kernel, std::size_t n, std::size_t d, std::size_t heads,
                            std::size_t window_tokens, std::uint64_t seed) {
    Rng rng(seed);
    auto randn = [&](Shape s, double sd) {
      std::vector<double> v(shape_numel(s));
      for (double& e : v) e = rng.normal(0.0, sd);
      return Tensor(std::move(s), std::move(v));
    };
    KernelFixture f;
    const double wsd = 1.0 / std::sqrt(static_cast<double>(d));
    f.params.dim = d;
    f.params.heads = heads;
    f.params.w_q = randn({d, d}, wsd);
    f.params.w_k = randn({d, d}, wsd);
    f.params.w_v = randn({d, d}, wsd);
    f.params.w_o = randn({d, d}, wsd);
    f.x_img = randn({n, d}, 1.0);
    if (kernel == Kernel::w_mcsa) {
      f.layout = WindowLayout::for_tokens(n, window_tokens);
      f.params.bias_table = Tensor::zeros({heads, window_tokens, window_tokens});
      f.x_lm = randn({window_tokens, d}, 1.0);
    } else {
      f.layout = WindowLayout::for_tokens(n, n);
      f.x_lm = randn({n, d}, 1.0);
    }
    return f;
  }

  Tensor run(Context& ctx, Kernel kernel) const {
    return kernel == Kernel::mcsa ? mcsa(ctx, x_lm, x_img, params) : w_mcsa(ctx, x_img, x_lm, params, layout);
  }
};

inline Macs instrumented_kernel_macs(Kernel kernel, std::size_t n, std::size_t d, std::size_t heads,
                                     std::size_t window_tokens, std::uint64_t seed = 0) {
  const auto f = KernelFixture::make(kernel, n, d, heads, window_tokens, seed);
  MacCounter counter;
  Context ctx;
  ctx.counter = &counter;
  f.run(ctx, kernel);
  return counter.macs;
}

struct BenchPoint {
  std::size_t n = 0;
  double median_ns = 0.0;
  std::size_t reps = 0;
};

struct ScalingReport {
  Kernel kernel = Kernel::mcsa;
  std::vector<BenchPoint> points;
  double slope = 0.0;  // least-squares slope of log(median_ns) against log(n)
};

inline double loglog_slope(const std::vector<BenchPoint>& pts) {
  const double k = static_cast<double>(pts.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : pts) {
    const double x = std::log(static_cast<double>(p.n)), y = std::log(p.median_ns);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

/// Median wall time of `reps` eval-only kernel runs per size, plus the fitted
/// log-log slope over the sweep.
inline ScalingReport bench_scaling(Kernel kernel, const std::vector<std::size_t>& sizes, std::size_t reps,
                                   std::size_t d = 64, std::size_t heads = 1, std::size_t window_tokens = 16,
                                   std::uint64_t seed = 0) {
  ScalingReport report;
  report.kernel = kernel;
  for (std::size_t n : sizes) {
    const auto f = KernelFixture::make(kernel, n, d, heads, window_tokens, seed);
    std::vector<double> times;
    for (std::size_t r = 0; r < reps; ++r) {
      Context ctx;
      const auto t0 = std::chrono::steady_clock::now();
      Tensor out = f.run(ctx, kernel);
      const auto t1 = std::chrono::steady_clock::now();
      times.push_back(static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    }
    std::sort(times.begin(), times.end());
    report.points.push_back({n, times[times.size() / 2], reps});
  }
  report.slope = loglog_slope(report.points);
  return report;
}

}  // namespace posterpp
