#pragma once

#include <cctype>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "posterpp/blocks.hpp"
#include "posterpp/rng.hpp"
#include "posterpp/tensor.hpp"

namespace posterpp {

/// Ordered registry of named leaf tensors. Paths are dot-separated, e.g.
/// "fusion.0.attn.w_q"; the first two components name the owning module.
class ParamStore {
 public:
  struct Entry {
    std::string path;
    Tensor tensor;
    bool trainable = true;
  };

  Tensor add(const std::string& path, Tensor t, bool trainable) {
    if (index_.count(path)) throw ConfigError("duplicate parameter path " + path);
    t.set_requires_grad(trainable);
    index_[path] = entries_.size();
    entries_.push_back({path, t, trainable});
    return t;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  const Entry* find(const std::string& path) const {
    auto it = index_.find(path);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  std::size_t count(bool trainable) const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (e.trainable == trainable) n += e.tensor.size();
    }
    return n;
  }
  std::size_t total() const { return count(true) + count(false); }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Module path of a parameter: its first two dot components ("fusion.0"),
/// or the first alone for single-instance modules ("head").
inline std::string module_of(const std::string& path) {
  const auto first = path.find('.');
  if (first == std::string::npos) return path;
  const auto second = path.find('.', first + 1);
  const std::string head = path.substr(0, first);
  const std::string next = path.substr(first + 1, second == std::string::npos ? std::string::npos : second - first - 1);
  const bool indexed = !next.empty() && std::isdigit(static_cast<unsigned char>(next[0]));
  return indexed ? head + "." + next : head;
}

/// Builds parameters into a store with a fixed initialisation scheme.
class ParamBuilder {
 public:
  ParamBuilder(ParamStore& store, Rng& rng) : store_(store), rng_(rng) {}

  /// N(0, gain^2 / fan_in) weights of shape [in x out].
  Tensor weight(const std::string& path, std::size_t in, std::size_t out, bool trainable,
                double gain = 1.0) {
    std::vector<double> v(in * out);
    const double sd = gain / std::sqrt(static_cast<double>(in));
    for (double& e : v) e = rng_.normal(0.0, sd);
    return store_.add(path, Tensor({in, out}, std::move(v)), trainable);
  }

  Tensor constant(const std::string& path, Shape shape, double value, bool trainable) {
    return store_.add(path, Tensor::full(std::move(shape), value), trainable);
  }

  AttentionParams attention(const std::string& prefix, std::size_t dim, std::size_t heads,
                            std::size_t window_tokens, bool windowed, bool trainable = true) {
    AttentionParams p;
    p.dim = dim;
    p.heads = heads;
    p.w_q = weight(prefix + ".w_q", dim, dim, trainable);
    p.w_k = weight(prefix + ".w_k", dim, dim, trainable);
    p.w_v = weight(prefix + ".w_v", dim, dim, trainable);
    p.w_o = weight(prefix + ".w_o", dim, dim, trainable);
    if (windowed) {
      p.bias_table = constant(prefix + ".bias_table", {heads, window_tokens, window_tokens}, 0.0, trainable);
    }
    p.validate();
    return p;
  }

  BlockParams block(const std::string& prefix, std::size_t dim, std::size_t heads, std::size_t mlp_ratio,
                    std::size_t window_tokens, bool windowed, double drop_path_rate) {
    BlockParams b;
    b.attention = attention(prefix + ".attn", dim, heads, window_tokens, windowed);
    b.norm.gamma = constant(prefix + ".norm.gamma", {dim}, 1.0, true);
    b.norm.beta = constant(prefix + ".norm.beta", {dim}, 0.0, true);
    const std::size_t hidden = dim * mlp_ratio;
    b.mlp.fc1_w = weight(prefix + ".mlp.fc1.weight", dim, hidden, true);
    b.mlp.fc1_b = constant(prefix + ".mlp.fc1.bias", {hidden}, 0.0, true);
    b.mlp.fc2_w = weight(prefix + ".mlp.fc2.weight", hidden, dim, true);
    b.mlp.fc2_b = constant(prefix + ".mlp.fc2.bias", {dim}, 0.0, true);
    b.drop_path_rate = drop_path_rate;
    return b;
  }

 private:
  ParamStore& store_;
  Rng& rng_;
};

}  // namespace posterpp
