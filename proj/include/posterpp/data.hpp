#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "posterpp/error.hpp"
#include "posterpp/rng.hpp"
#include "posterpp/tensor.hpp"

namespace posterpp {

inline constexpr std::array<const char*, 8> kExpressionNames{"Neutral", "Happy",   "Sad",   "Surprise",
                                                             "Fear",    "Disgust", "Anger", "Contempt"};

inline std::vector<std::string> class_names(std::size_t classes) {
  if (classes < 1 || classes > kExpressionNames.size()) {
    throw ConfigError("class count must be in [1, 8], got " + std::to_string(classes));
  }
  return {kExpressionNames.begin(), kExpressionNames.begin() + static_cast<std::ptrdiff_t>(classes)};
}

struct Sample {
  Tensor image;  // [3 x S x S]
  std::size_t label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t num_classes = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(num_classes, 0);
    for (const auto& s : samples) ++c[s.label];
    return c;
  }
};

/// Shape of one synthetic expression.
struct FaceStyle {
  double mouth_curve = 0.0;   // > 0 smiles, < 0 frowns
  double mouth_open = 0.0;    // 0 closed .. 1 wide open
  double eye_size = 1.0;      // vertical eye scale
  double brow_raise = 0.0;    // upward brow offset
  double brow_tilt = 0.0;     // > 0 inner ends up, < 0 inner ends down
  double mouth_skew = 0.0;    // one-sided corner lift
};

inline FaceStyle expression_style(std::size_t label) {
  switch (label) {
    case 0: return {};
    case 1: return {0.9, 0.25, 0.8, 0.0, 0.0, 0.0};
    case 2: return {-0.8, 0.0, 0.9, 0.0, 0.6, 0.0};
    case 3: return {0.0, 1.0, 1.6, 0.12, 0.0, 0.0};
    case 4: return {-0.3, 0.55, 1.4, 0.08, 0.5, 0.0};
    case 5: return {-0.4, 0.15, 0.55, -0.04, -0.3, 0.0};
    case 6: return {-0.3, 0.0, 0.7, -0.06, -0.8, 0.0};
    case 7: return {0.0, 0.0, 0.9, 0.0, 0.0, 0.9};
    default: throw IndexError("no expression style for label " + std::to_string(label));
  }
}

/// Offset subtracted from [0, 1] pixel intensities to form model inputs.
inline constexpr double kInputOffset = 0.4;

/// Maps a [C x H x W] image in [0, 1] to the model's input range.
inline Tensor to_model_input(const Tensor& image01) {
  std::vector<double> v(image01.values().begin(), image01.values().end());
  for (double& x : v) x -= kInputOffset;
  return Tensor(image01.shape(), std::move(v));
}

/// Renders one noisy face of the given style into [3 x S x S], centred so
/// values lie roughly in [-0.4, 0.4]. Face position, scale, tint and pixel
/// noise are drawn from `rng`.
inline Tensor render_face(const FaceStyle& st, std::size_t size, Rng& rng) {
  const double cx = rng.uniform(-0.06, 0.06), cy = rng.uniform(-0.06, 0.06);
  const double scale = rng.uniform(0.92, 1.08);
  const double skin = rng.uniform(0.55, 0.7);
  const std::array<double, 3> tint{rng.uniform(0.9, 1.1), rng.uniform(0.8, 1.0), rng.uniform(0.7, 0.9)};
  const double jitter_curve = rng.normal(0.0, 0.08);

  auto sq = [](double a) { return a * a; };
  std::vector<double> gray(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = ((x + 0.5) / size * 2.0 - 1.0 - cx) / scale;
      const double v = ((y + 0.5) / size * 2.0 - 1.0 - cy) / scale;
      double val = 0.15;
      if (sq(u / 0.78) + sq(v / 0.92) < 1.0) val = skin;

      const double au = std::abs(u);
      // eyes
      if (sq((au - 0.33) / 0.13) + sq((v + 0.18) / (0.06 * st.eye_size)) < 1.0) val = 0.08;
      // brows: thin bars above the eyes, tilted towards the nose
      if (au > 0.16 && au < 0.5) {
        const double bv = -0.38 - st.brow_raise - st.brow_tilt * 0.25 * (0.5 - au);
        if (std::abs(v - bv) < 0.035) val = 0.2;
      }
      // mouth: a parabola through the corners, thickened when open
      if (au < 0.32) {
        const double t = 1.0 - sq(u / 0.32);
        const double curve = st.mouth_curve + jitter_curve;
        const double corner = u > 0 ? st.mouth_skew * 0.12 * (1.0 - t) : 0.0;
        const double mv = 0.45 + curve * 0.12 * t - corner;
        const double half = 0.03 + st.mouth_open * 0.1 * t;
        if (std::abs(v - mv) < half) val = 0.3 * (1.0 - st.mouth_open) + 0.05;
      }
      gray[y * size + x] = val;
    }
  }
  std::vector<double> px(3 * size * size);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < size * size; ++i) {
      px[c * size * size + i] = gray[i] * tint[c] - kInputOffset + rng.normal(0.0, 0.04);
    }
  }
  return Tensor({3, size, size}, std::move(px));
}

/// Deterministic class-balanced synthetic expression set. Labels cycle
/// through the classes so any `count` is balanced to within one sample.
inline Dataset synth_dataset_total(std::uint64_t seed, std::size_t count, std::size_t classes, std::size_t size) {
  if (classes != 7 && classes != 8) throw ConfigError("classes must be 7 or 8, got " + std::to_string(classes));
  if (size < 8) throw ConfigError("image size must be at least 8");
  Dataset d;
  d.num_classes = classes;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % classes;
    Rng sample_rng = rng.split();
    d.samples.push_back({render_face(expression_style(label), size, sample_rng), label});
  }
  return d;
}

inline Dataset synth_dataset(std::uint64_t seed, std::size_t n_per_class, std::size_t classes, std::size_t size) {
  return synth_dataset_total(seed, n_per_class * classes, classes, size);
}

/// Seeded shuffle then split; the first round(n * (1 - val_fraction)) go to
/// the training set.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in [0, 1)");
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(d.size()) * (1.0 - val_fraction)));
  Dataset train, val;
  train.num_classes = val.num_classes = d.num_classes;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_train ? train : val).samples.push_back(d.samples[idx[i]]);
  return {train, val};
}

struct AugmentConfig {
  double flip_prob = 0.5;
  double erase_prob = 0.0;
  double erase_lo = 0.02;
  double erase_hi = 0.1;

  void validate() const {
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("flip_prob must be in [0, 1]");
    if (!(erase_prob >= 0.0 && erase_prob <= 1.0)) throw ConfigError("erase_prob must be in [0, 1]");
    if (!(erase_lo > 0.0 && erase_hi < 1.0 && erase_lo <= erase_hi)) {
      throw ConfigError("erase_scale must satisfy 0 < lo <= hi < 1");
    }
  }
};

struct Rect {
  std::size_t top = 0, left = 0, height = 0, width = 0;
  std::size_t area() const { return height * width; }
};

/// Picks an erase rectangle whose integer area lies in the scale range.
/// Aspect ratio is log-uniform in [0.3, 3.3]; after ten rejected draws the
/// most square admissible rectangle is used.
inline Rect erase_rect(std::size_t H, std::size_t W, double lo, double hi, Rng& rng) {
  const double total = static_cast<double>(H * W);
  auto amin = static_cast<std::size_t>(std::ceil(lo * total));
  auto amax = static_cast<std::size_t>(std::floor(hi * total));
  if (amin > amax) std::swap(amin, amax);  // range narrower than one pixel
  amin = std::max<std::size_t>(amin, 1);
  auto place = [&](std::size_t h, std::size_t w) {
    Rect r{0, 0, h, w};
    r.top = rng.below(H - h + 1);
    r.left = rng.below(W - w + 1);
    return r;
  };
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = rng.uniform(lo, hi) * total;
    const double ratio = std::exp(rng.uniform(std::log(0.3), std::log(3.3)));
    const auto h = static_cast<std::size_t>(std::llround(std::sqrt(target * ratio)));
    const auto w = static_cast<std::size_t>(std::llround(std::sqrt(target / ratio)));
    if (h == 0 || w == 0 || h > H || w > W) continue;
    if (h * w >= amin && h * w <= amax) return place(h, w);
  }
  for (auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(amin)))); h >= 1; --h) {
    const std::size_t w = (amin + h - 1) / h;
    if (h <= H && w <= W && h * w <= amax) return place(h, w);
  }
  return place(std::min<std::size_t>(H, 1), std::min<std::size_t>(W, amin));
}

inline Tensor flip_horizontal(const Tensor& img) {
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  std::vector<double> out(img.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) out[(c * H + y) * W + x] = img[(c * H + y) * W + (W - 1 - x)];
  return Tensor(img.shape(), std::move(out));
}

/// Random horizontal flip, then random erasing with uniform noise. Returns
/// the erased rectangle through `erased` when one was applied.
inline Tensor augment(const Tensor& img, const AugmentConfig& cfg, Rng& rng, Rect* erased = nullptr) {
  if (img.rank() != 3) throw ShapeError("augment expects [C x H x W], got " + shape_str(img.shape()));
  Tensor out = rng.bernoulli(cfg.flip_prob) ? flip_horizontal(img) : img.clone();
  if (erased) *erased = Rect{};
  if (rng.bernoulli(cfg.erase_prob)) {
    const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    const Rect r = erase_rect(H, W, cfg.erase_lo, cfg.erase_hi, rng);
    auto v = out.mutable_values();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = r.top; y < r.top + r.height; ++y)
        for (std::size_t x = r.left; x < r.left + r.width; ++x) v[(c * H + y) * W + x] = rng.uniform();
    if (erased) *erased = r;
  }
  return out;
}

}  // namespace posterpp
