#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "posterpp/error.hpp"
#include "posterpp/model.hpp"
#include "posterpp/train.hpp"

namespace posterpp {

using Json = nlohmann::ordered_json;

struct PathsConfig {
  std::string checkpoint = "out/model.ckpt";
  std::string out_dir = "out";
};

struct BenchConfig {
  std::string kernel = "both";  // mcsa | w_mcsa | both
  std::vector<std::size_t> sizes{256, 512, 1024, 2048, 4096};
  std::size_t dim = 64;
  std::size_t heads = 1;
  std::size_t window_tokens = 16;
  std::size_t reps = 3;
};

struct GradcheckConfig {
  std::string scope = "all";  // ops | blocks | model | all
  double h = 1e-5;
  double tolerance = 1e-4;
};

struct AttnmapConfig {
  std::string image;  // PGM/PPM path; empty renders a synthetic face
  std::size_t label = 1;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train = TrainConfig::preset_named("desk");
  PathsConfig paths;
  BenchConfig bench;
  GradcheckConfig gradcheck;
  AttnmapConfig attnmap;

  void validate() const {
    model.validate();
    train.validate();
    if (train.samples < 2) throw ConfigError("train config: samples must be >= 2");
    if (model.input_height != model.input_width) throw ConfigError("model config: synthetic data needs square inputs");
    if (bench.kernel != "mcsa" && bench.kernel != "w_mcsa" && bench.kernel != "both") {
      throw ConfigError("bench.kernel must be mcsa, w_mcsa or both");
    }
    if (bench.sizes.size() < 2) throw ConfigError("bench.sizes needs at least two sizes");
    if (bench.reps == 0) throw ConfigError("bench.reps must be positive");
    if (bench.heads == 0 || bench.dim % bench.heads) throw ConfigError("bench.dim must be divisible by bench.heads");
    for (std::size_t n : bench.sizes) {
      if (bench.window_tokens == 0 || n % bench.window_tokens) {
        throw ConfigError("bench size " + std::to_string(n) + " not divisible by window_tokens");
      }
    }
    if (gradcheck.scope != "ops" && gradcheck.scope != "blocks" && gradcheck.scope != "model" &&
        gradcheck.scope != "all") {
      throw ConfigError("gradcheck.scope must be ops, blocks, model or all");
    }
    if (!(gradcheck.h > 0.0) || !(gradcheck.tolerance > 0.0)) throw ConfigError("gradcheck.h and tolerance must be > 0");
    if (attnmap.label >= model.num_classes) throw ConfigError("attnmap.label out of range");
  }
};

namespace detail {

/// Strict object reader: every key must be consumed, types must match.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }
  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    check_type<T>(*it, key);
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  template <typename T>
  void check_type(const Json& v, const char* key) const {
    bool ok = true;
    if constexpr (std::is_same_v<T, bool>) {
      ok = v.is_boolean();
    } else if constexpr (std::is_integral_v<T>) {
      ok = v.is_number_unsigned() || (v.is_number_integer() && v.template get<std::int64_t>() >= 0);
    } else if constexpr (std::is_floating_point_v<T>) {
      ok = v.is_number();
    } else if constexpr (std::is_same_v<T, std::string>) {
      ok = v.is_string();
    } else {
      ok = v.is_array();
      if (ok) {
        for (const auto& e : v) {
          ok = ok && (e.is_number_unsigned() || (e.is_number_integer() && e.template get<std::int64_t>() >= 0));
        }
      }
    }
    if (!ok) throw ConfigError(where_ + "." + key + ": wrong type (" + v.type_name() + ")");
  }

  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline Variant variant_from(const std::string& s) {
  if (s == "v2") return Variant::v2;
  if (s == "v1_reference") return Variant::v1_reference;
  throw ConfigError("model.variant must be v2 or v1_reference, got '" + s + "'");
}

}  // namespace detail

inline Json to_json(const ModelConfig& m) {
  const auto& a = m.ablations;
  Json ab;
  ab["no_multiscale"] = a.no_multiscale;
  ab["no_vit"] = a.no_vit;
  ab["no_wmcsa"] = a.no_wmcsa;
  ab["no_crossfusion"] = a.no_crossfusion;
  ab["no_img2lm"] = a.no_img2lm;
  ab["no_lm2img"] = a.no_lm2img;
  Json j;
  j["input_height"] = m.input_height;
  j["input_width"] = m.input_width;
  j["num_scales"] = m.num_scales;
  j["scale_dims"] = m.scale_dims;
  j["d_model"] = m.d_model;
  j["heads"] = m.heads;
  j["window_tokens"] = m.window_tokens;
  j["vit_depth"] = m.vit_depth;
  j["mlp_ratio"] = m.mlp_ratio;
  j["num_classes"] = m.num_classes;
  j["variant"] = to_string(m.variant);
  j["drop_path_max"] = m.drop_path_max;
  j["landmark_frozen"] = m.landmark_frozen;
  j["ablations"] = ab;
  return j;
}

inline ModelConfig model_from_json(const Json& j) {
  ModelConfig m;
  detail::ObjectReader r(j, "model");
  r.get("input_height", m.input_height);
  r.get("input_width", m.input_width);
  r.get("num_scales", m.num_scales);
  r.get("scale_dims", m.scale_dims);
  r.get("d_model", m.d_model);
  r.get("heads", m.heads);
  r.get("window_tokens", m.window_tokens);
  r.get("vit_depth", m.vit_depth);
  r.get("mlp_ratio", m.mlp_ratio);
  r.get("num_classes", m.num_classes);
  std::string variant = to_string(m.variant);
  r.get("variant", variant);
  m.variant = detail::variant_from(variant);
  r.get("drop_path_max", m.drop_path_max);
  r.get("landmark_frozen", m.landmark_frozen);
  if (const Json* ab = r.child("ablations")) {
    detail::ObjectReader a(*ab, "model.ablations");
    a.get("no_multiscale", m.ablations.no_multiscale);
    a.get("no_vit", m.ablations.no_vit);
    a.get("no_wmcsa", m.ablations.no_wmcsa);
    a.get("no_crossfusion", m.ablations.no_crossfusion);
    a.get("no_img2lm", m.ablations.no_img2lm);
    a.get("no_lm2img", m.ablations.no_lm2img);
    a.finish();
  }
  r.finish();
  return m;
}

inline Json to_json(const TrainConfig& t) {
  Json aug;
  aug["flip_prob"] = t.aug.flip_prob;
  aug["erase_prob"] = t.aug.erase_prob;
  aug["erase_scale"] = Json::array({t.aug.erase_lo, t.aug.erase_hi});
  Json j;
  j["preset"] = t.preset;
  j["lr0"] = t.lr0;
  j["lr_alt"] = t.lr_alt;
  j["weight_decay"] = t.weight_decay;
  j["batch_size"] = t.batch_size;
  j["epochs"] = t.epochs;
  j["lr_gamma"] = t.lr_gamma;
  j["aug"] = aug;
  j["seed"] = t.seed;
  j["patience"] = t.patience;
  j["target_train_acc"] = t.target_train_acc;
  j["samples"] = t.samples;
  j["val_fraction"] = t.val_fraction;
  j["data_seed"] = t.data_seed;
  return j;
}

/// The preset is applied first; every other key present overrides it.
inline TrainConfig train_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("train: expected an object");
  std::string preset = "desk";
  if (auto it = j.find("preset"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("train.preset: wrong type (" + std::string(it->type_name()) + ")");
    preset = it->get<std::string>();
  }
  TrainConfig t = TrainConfig::preset_named(preset);
  detail::ObjectReader r(j, "train");
  r.get("preset", t.preset);
  r.get("lr0", t.lr0);
  r.get("lr_alt", t.lr_alt);
  r.get("weight_decay", t.weight_decay);
  r.get("batch_size", t.batch_size);
  r.get("epochs", t.epochs);
  r.get("lr_gamma", t.lr_gamma);
  if (const Json* aug = r.child("aug")) {
    detail::ObjectReader a(*aug, "train.aug");
    a.get("flip_prob", t.aug.flip_prob);
    a.get("erase_prob", t.aug.erase_prob);
    if (const Json* sc = a.child("erase_scale")) {
      if (!sc->is_array() || sc->size() != 2 || !(*sc)[0].is_number() || !(*sc)[1].is_number()) {
        throw ConfigError("train.aug.erase_scale must be [lo, hi]");
      }
      t.aug.erase_lo = (*sc)[0].get<double>();
      t.aug.erase_hi = (*sc)[1].get<double>();
    }
    a.finish();
  }
  r.get("seed", t.seed);
  r.get("patience", t.patience);
  r.get("target_train_acc", t.target_train_acc);
  r.get("samples", t.samples);
  r.get("val_fraction", t.val_fraction);
  r.get("data_seed", t.data_seed);
  r.finish();
  return t;
}

inline Json to_json(const RunConfig& c) {
  Json j;
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  j["paths"] = {{"checkpoint", c.paths.checkpoint}, {"out_dir", c.paths.out_dir}};
  Json bench;
  bench["kernel"] = c.bench.kernel;
  bench["sizes"] = c.bench.sizes;
  bench["dim"] = c.bench.dim;
  bench["heads"] = c.bench.heads;
  bench["window_tokens"] = c.bench.window_tokens;
  bench["reps"] = c.bench.reps;
  j["bench"] = bench;
  Json gc;
  gc["scope"] = c.gradcheck.scope;
  gc["h"] = c.gradcheck.h;
  gc["tolerance"] = c.gradcheck.tolerance;
  j["gradcheck"] = gc;
  Json am;
  am["image"] = c.attnmap.image;
  am["label"] = c.attnmap.label;
  j["attnmap"] = am;
  return j;
}

inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  detail::ObjectReader r(j, "config");
  if (const Json* m = r.child("model")) c.model = model_from_json(*m);
  if (const Json* t = r.child("train")) c.train = train_from_json(*t);
  if (const Json* p = r.child("paths")) {
    detail::ObjectReader pr(*p, "paths");
    pr.get("checkpoint", c.paths.checkpoint);
    pr.get("out_dir", c.paths.out_dir);
    pr.finish();
  }
  if (const Json* b = r.child("bench")) {
    detail::ObjectReader br(*b, "bench");
    br.get("kernel", c.bench.kernel);
    br.get("sizes", c.bench.sizes);
    br.get("dim", c.bench.dim);
    br.get("heads", c.bench.heads);
    br.get("window_tokens", c.bench.window_tokens);
    br.get("reps", c.bench.reps);
    br.finish();
  }
  if (const Json* g = r.child("gradcheck")) {
    detail::ObjectReader gr(*g, "gradcheck");
    gr.get("scope", c.gradcheck.scope);
    gr.get("h", c.gradcheck.h);
    gr.get("tolerance", c.gradcheck.tolerance);
    gr.finish();
  }
  if (const Json* a = r.child("attnmap")) {
    detail::ObjectReader ar(*a, "attnmap");
    ar.get("image", c.attnmap.image);
    ar.get("label", c.attnmap.label);
    ar.finish();
  }
  r.finish();
  c.validate();
  return c;
}

inline RunConfig parse_run_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

/// Canonical text form: fixed key order, two-space indent, trailing newline.
inline std::string dump_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Identity of a model architecture, stamped into checkpoints.
inline std::uint64_t config_digest(const ModelConfig& m) { return fnv1a64(to_json(m).dump()); }

}  // namespace posterpp
