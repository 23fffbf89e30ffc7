#pragma once

// Binary container for model parameters and optimizer state.
//
//   "DSMSRBDL"  u32 format_version  str kind  str kv-block  u32 count
//   count x { str name  u8 dtype(1=f32, 2=f64)  u32 n c h w  payload }
//   u64 FNV-1a of every preceding byte
//
// str = u32 length + bytes. All integers and payloads are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dsmsr/error.hpp"
#include "dsmsr/kv.hpp"
#include "dsmsr/models/discriminator.hpp"
#include "dsmsr/models/generator.hpp"
#include "dsmsr/models/ndsm_net.hpp"
#include "dsmsr/models/params.hpp"
#include "dsmsr/util/files.hpp"

namespace dsmsr {

static_assert(std::endian::native == std::endian::little, "bundle IO assumes a little-endian host");

inline constexpr char kBundleMagic[8] = {'D', 'S', 'M', 'S', 'R', 'B', 'D', 'L'};
inline constexpr std::uint32_t kBundleFormatVersion = 1;

enum class BundleKind { generator, discriminator, ndsm, optimizer };

inline const char* to_string(BundleKind k) {
  switch (k) {
    case BundleKind::generator: return "generator";
    case BundleKind::discriminator: return "discriminator";
    case BundleKind::ndsm: return "ndsm";
    case BundleKind::optimizer: return "optimizer";
  }
  return "?";
}

inline BundleKind parse_bundle_kind(const std::string& s) {
  if (s == "generator") return BundleKind::generator;
  if (s == "discriminator") return BundleKind::discriminator;
  if (s == "ndsm") return BundleKind::ndsm;
  if (s == "optimizer") return BundleKind::optimizer;
  throw CheckpointError("unknown bundle kind '" + s + "'");
}

struct NamedTensor {
  std::string name;
  Tensor<float> f32;
  Tensor<double> f64;
  bool is_f64 = false;

  Shape shape() const { return is_f64 ? f64.shape() : f32.shape(); }
};

struct ModelBundle {
  BundleKind kind = BundleKind::generator;
  std::uint32_t format_version = kBundleFormatVersion;
  KeyValues config;  // model config
  KeyValues meta;    // training metadata: step count, pretrain MAE, ...
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string origin) : b_(bytes), origin_(std::move(origin)) {}
  void raw(void* p, std::size_t n) {
    if (pos_ + n > b_.size()) throw CheckpointError(origin_ + ": truncated file");
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const auto n = u32();
    if (pos_ + n > b_.size()) throw CheckpointError(origin_ + ": truncated file");
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return b_.size(); }

 private:
  std::string_view b_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a_bytes(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

inline std::string serialize_bundle(const ModelBundle& b) {
  detail::ByteWriter w;
  w.raw(kBundleMagic, 8);
  w.u32(b.format_version);
  w.str(to_string(b.kind));
  KeyValues kv = b.config;
  for (const auto& [k, v] : b.meta) kv["meta." + k] = v;
  w.str(format_kv(kv));
  w.u32(static_cast<std::uint32_t>(b.tensors.size()));
  for (const auto& t : b.tensors) {
    w.str(t.name);
    w.u8(t.is_f64 ? 2 : 1);
    const Shape s = t.shape();
    for (int d : {s.n, s.c, s.h, s.w}) w.u32(static_cast<std::uint32_t>(d));
    if (t.is_f64) {
      w.raw(t.f64.data(), t.f64.size() * sizeof(double));
    } else {
      w.raw(t.f32.data(), t.f32.size() * sizeof(float));
    }
  }
  w.u64(detail::fnv1a_bytes(w.bytes()));
  return std::move(w.bytes());
}

inline ModelBundle deserialize_bundle(std::string_view bytes, const std::string& origin = "bundle") {
  detail::ByteReader r(bytes, origin);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kBundleMagic, 8) != 0) throw CheckpointError(origin + ": not a model bundle");
  ModelBundle b;
  b.format_version = r.u32();
  if (b.format_version != kBundleFormatVersion) {
    throw CheckpointError(origin + ": unsupported bundle format_version " + std::to_string(b.format_version) +
                          " (expected " + std::to_string(kBundleFormatVersion) + ")");
  }
  b.kind = parse_bundle_kind(r.str());
  KeyValues kv;
  try {
    kv = parse_kv(r.str(), origin);
  } catch (const UsageError& e) {
    throw CheckpointError(e.what());
  }
  for (auto& [k, v] : kv) {
    if (k.rfind("meta.", 0) == 0) {
      b.meta[k.substr(5)] = v;
    } else {
      b.config[k] = v;
    }
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str();
    const auto dtype = r.u8();
    if (dtype != 1 && dtype != 2) throw CheckpointError(origin + ": unknown dtype in tensor " + t.name);
    t.is_f64 = dtype == 2;
    Shape s{static_cast<int>(r.u32()), static_cast<int>(r.u32()), static_cast<int>(r.u32()),
            static_cast<int>(r.u32())};
    const std::size_t elem = t.is_f64 ? 8 : 4;
    if (s.numel() * elem > r.size() - r.pos()) throw CheckpointError(origin + ": truncated file");
    if (t.is_f64) {
      t.f64 = Tensor<double>(s);
      r.raw(t.f64.data(), s.numel() * elem);
    } else {
      t.f32 = Tensor<float>(s);
      r.raw(t.f32.data(), s.numel() * elem);
    }
    b.tensors.push_back(std::move(t));
  }
  const std::size_t body = r.pos();
  const auto stored = r.u64();
  if (stored != detail::fnv1a_bytes(bytes.substr(0, body))) throw CheckpointError(origin + ": checksum mismatch");
  if (r.pos() != r.size()) throw CheckpointError(origin + ": trailing bytes after bundle");
  return b;
}

inline void save_bundle(const ModelBundle& b, const std::filesystem::path& path) {
  atomic_write<CheckpointError>(path, serialize_bundle(b));
}

inline ModelBundle load_bundle(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw CheckpointError("bundle '" + path.string() + "' does not exist");
  return deserialize_bundle(read_file<CheckpointError>(path), path.string());
}

template <typename T>
NamedTensor named_tensor(std::string name, const Tensor<T>& t) {
  NamedTensor nt;
  nt.name = std::move(name);
  if constexpr (std::is_same_v<T, double>) {
    nt.is_f64 = true;
    nt.f64 = t;
  } else {
    nt.f32 = t;
  }
  return nt;
}

template <typename T>
Tensor<T> tensor_of(const NamedTensor& nt) {
  if constexpr (std::is_same_v<T, double>) {
    return nt.is_f64 ? nt.f64 : nt.f32.template cast<double>();
  } else {
    return nt.is_f64 ? nt.f64.template cast<float>() : nt.f32;
  }
}

template <typename T>
void store_params(ModelBundle& b, const ParamSet<T>& ps) {
  for (const auto& e : ps.entries()) b.tensors.push_back(named_tensor(e.name, e.var->value));
}

// Copies every parameter from the bundle; names and shapes must match exactly.
template <typename T>
void restore_params(ParamSet<T>& ps, const ModelBundle& b) {
  if (b.tensors.size() != ps.size()) {
    throw CheckpointError(std::string(to_string(b.kind)) + " bundle holds " + std::to_string(b.tensors.size()) +
                          " tensors, model expects " + std::to_string(ps.size()));
  }
  for (const auto& e : ps.entries()) {
    const NamedTensor* t = b.find(e.name);
    if (!t) throw CheckpointError("bundle lacks parameter " + e.name);
    if (!(t->shape() == e.var->value.shape())) {
      throw CheckpointError("parameter " + e.name + " has shape " + t->shape().str() + ", model expects " +
                            e.var->value.shape().str());
    }
    e.var->value = tensor_of<T>(*t);
  }
}

inline void require_kind(const ModelBundle& b, BundleKind expected) {
  if (b.kind != expected) {
    throw BundleKindError(std::string("expected a ") + to_string(expected) + " bundle, found " + to_string(b.kind));
  }
}

template <typename T>
ModelBundle make_bundle(const Generator<T>& m, KeyValues meta = {}) {
  ModelBundle b{BundleKind::generator, kBundleFormatVersion, m.config().to_kv(), std::move(meta), {}};
  store_params(b, m.params());
  return b;
}

template <typename T>
ModelBundle make_bundle(const Discriminator<T>& m, KeyValues meta = {}) {
  ModelBundle b{BundleKind::discriminator, kBundleFormatVersion, m.config().to_kv(), std::move(meta), {}};
  store_params(b, m.params());
  return b;
}

template <typename T>
ModelBundle make_bundle(const NdsmNet<T>& m, KeyValues meta = {}) {
  ModelBundle b{BundleKind::ndsm, kBundleFormatVersion, m.config().to_kv(), std::move(meta), {}};
  store_params(b, m.params());
  return b;
}

namespace detail {
template <typename Config>
Config config_from_bundle(const ModelBundle& b) {
  try {
    return Config::from_kv(b.config);
  } catch (const std::out_of_range&) {
    throw CheckpointError(std::string(to_string(b.kind)) + " bundle config is incomplete");
  } catch (const UsageError& e) {
    throw CheckpointError(std::string(to_string(b.kind)) + " bundle config is invalid: " + e.what());
  }
}
}  // namespace detail

template <typename T = float>
Generator<T> generator_from(const ModelBundle& b) {
  require_kind(b, BundleKind::generator);
  Generator<T> m(detail::config_from_bundle<GeneratorConfig>(b));
  restore_params(m.params(), b);
  return m;
}

template <typename T = float>
Discriminator<T> discriminator_from(const ModelBundle& b) {
  require_kind(b, BundleKind::discriminator);
  Discriminator<T> m(detail::config_from_bundle<DiscriminatorConfig>(b));
  restore_params(m.params(), b);
  return m;
}

template <typename T = float>
NdsmNet<T> ndsm_net_from(const ModelBundle& b) {
  require_kind(b, BundleKind::ndsm);
  NdsmNet<T> m(detail::config_from_bundle<NdsmNetConfig>(b));
  restore_params(m.params(), b);
  return m;
}

}  // namespace dsmsr
