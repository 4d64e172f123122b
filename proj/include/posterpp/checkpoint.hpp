#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "posterpp/config.hpp"
#include "posterpp/model.hpp"

namespace posterpp {

// File layout, all integers little-endian:
//   "PPV2CKPT" | u32 version | u64 config digest | u32 record count
//   per record: u32 path length | path bytes | u32 rank | u64 dims[rank] | f64 values[numel]
inline constexpr char kCheckpointMagic[8] = {'P', 'P', 'V', '2', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::vector<unsigned char> b, std::string path) : bytes_(std::move(b)), path_(std::move(path)) {}

  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint '" + path_ + "' is truncated");
  }
  std::vector<unsigned char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> checkpoint_bytes(const Model& model) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint64_t>(config_digest(model.config()));
  const auto& entries = model.params().entries();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(e.path.size()));
    w.raw(e.path.data(), e.path.size());
    const Shape& s = e.tensor.shape();
    w.le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    for (std::size_t d : s) w.le<std::uint64_t>(d);
    for (double v : e.tensor.values()) w.f64(v);
  }
  return w.bytes();
}

inline void save_checkpoint(const Model& model, const std::string& path) {
  const auto bytes = checkpoint_bytes(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to checkpoint '" + path + "'");
}

/// Builds a model for `cfg` and overwrites every parameter from the file.
/// The stored digest must match `cfg`, and the records must cover exactly the
/// model's parameters with matching shapes.
inline Model load_checkpoint(const std::string& path, const ModelConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r(std::move(bytes), path);

  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw IoError("'" + path + "' is not a checkpoint");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint '" + path + "' has unsupported version " + std::to_string(version));
  }
  const auto digest = r.le<std::uint64_t>();
  if (digest != config_digest(cfg)) {
    throw ConfigError("checkpoint '" + path + "' was saved for a different model config");
  }

  Model model = Model::build(cfg, 0);
  auto& store = model.params();
  const auto count = r.le<std::uint32_t>();
  if (count != store.size()) {
    throw IoError("checkpoint '" + path + "' holds " + std::to_string(count) + " tensors, model has " +
                  std::to_string(store.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.le<std::uint32_t>(), '\0');
    r.raw(name.data(), name.size());
    const auto* e = store.find(name);
    if (!e) throw IoError("checkpoint '" + path + "': unknown parameter " + name);
    Shape shape(r.le<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.le<std::uint64_t>());
    if (shape != e->tensor.shape()) {
      throw IoError("checkpoint '" + path + "': " + name + " has shape " + shape_str(shape) + ", expected " +
                    shape_str(e->tensor.shape()));
    }
    Tensor t = e->tensor;
    for (double& v : t.mutable_values()) v = r.f64();
  }
  if (!r.at_end()) throw IoError("checkpoint '" + path + "' has trailing bytes");
  return model;
}

}  // namespace posterpp
