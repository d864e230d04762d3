#pragma once

// Flat binary checkpoints: a magic tag, a JSON header (kind, config digest,
// geometry, rng state), then length-prefixed named float32 records. Byte
// order is the host's (little-endian everywhere this runs).

#include <cstring>

#include "json.hpp"

#include "cloze/optim.hpp"

namespace cloze {

namespace detail {

constexpr char kCkptMagic[8] = {'C', 'K', 'P', 'T', '0', '0', '0', '1'};

template <typename T>
void put_raw(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take_raw(const std::string& in, size_t& at) {
  if (at + sizeof(T) > in.size()) throw CheckpointCorruptError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + at, sizeof v);
  at += sizeof v;
  return v;
}

}  // namespace detail

struct CheckpointHeader {
  std::string kind;          // "ocr" or "correction"
  std::string config_hash;   // hex digest of geometry-shaping config
  nlohmann::json geometry;   // free-form; informational
  std::string rng_state;
  uint32_t param_count = 0;
};

inline void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& hdr,
                            const ParameterStore& store) {
  nlohmann::json hj{{"kind", hdr.kind},
                    {"config_hash", hdr.config_hash},
                    {"geometry", hdr.geometry},
                    {"rng_state", hdr.rng_state},
                    {"param_count", store.size()}};
  std::string header = hj.dump();
  std::string out;
  out.append(detail::kCkptMagic, sizeof detail::kCkptMagic);
  detail::put_raw(out, uint32_t(header.size()));
  out += header;
  for (const auto& p : store.params()) {
    detail::put_raw(out, uint32_t(p.name.size()));
    out += p.name;
    const auto& shape = p.tensor.shape();
    detail::put_raw(out, uint32_t(shape.size()));
    for (int d : shape) detail::put_raw(out, uint32_t(d));
    const auto& v = p.tensor.values();
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
  }
  write_text_file(path, out);
}

inline CheckpointHeader read_checkpoint_header(const std::string& blob, size_t& at) {
  if (blob.size() < sizeof detail::kCkptMagic ||
      std::memcmp(blob.data(), detail::kCkptMagic, sizeof detail::kCkptMagic) != 0)
    throw CheckpointCorruptError("bad checkpoint magic");
  at = sizeof detail::kCkptMagic;
  uint32_t hlen = detail::take_raw<uint32_t>(blob, at);
  if (at + hlen > blob.size()) throw CheckpointCorruptError("checkpoint header truncated");
  nlohmann::json hj = nlohmann::json::parse(blob.substr(at, hlen), nullptr, false);
  if (hj.is_discarded()) throw CheckpointCorruptError("checkpoint header is not valid JSON");
  at += hlen;
  CheckpointHeader hdr;
  try {
    hdr.kind = hj.at("kind").get<std::string>();
    hdr.config_hash = hj.at("config_hash").get<std::string>();
    hdr.geometry = hj.value("geometry", nlohmann::json::object());
    hdr.rng_state = hj.value("rng_state", std::string());
    hdr.param_count = hj.at("param_count").get<uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointCorruptError(std::string("checkpoint header: ") + e.what());
  }
  return hdr;
}

inline CheckpointHeader peek_checkpoint(const std::filesystem::path& path) {
  std::string blob = read_text_file(path);
  size_t at = 0;
  return read_checkpoint_header(blob, at);
}

// Loads weights into an existing store; every record must match a registered
// parameter's shape, and kind/config digest must agree with expectations.
inline CheckpointHeader load_checkpoint(const std::filesystem::path& path,
                                        const std::string& expect_kind,
                                        const std::string& expect_hash, ParameterStore& store) {
  std::string blob = read_text_file(path);
  size_t at = 0;
  CheckpointHeader hdr = read_checkpoint_header(blob, at);
  if (hdr.kind != expect_kind)
    throw CheckpointCorruptError("checkpoint kind '" + hdr.kind + "', expected '" + expect_kind +
                                 "'");
  if (hdr.config_hash != expect_hash)
    throw CheckpointCorruptError("checkpoint config digest " + hdr.config_hash +
                                 " does not match current config " + expect_hash);
  size_t loaded = 0;
  for (uint32_t i = 0; i < hdr.param_count; ++i) {
    uint32_t nlen = detail::take_raw<uint32_t>(blob, at);
    if (at + nlen > blob.size()) throw CheckpointCorruptError("checkpoint name truncated");
    std::string name = blob.substr(at, nlen);
    at += nlen;
    uint32_t ndim = detail::take_raw<uint32_t>(blob, at);
    Shape shape;
    for (uint32_t d = 0; d < ndim; ++d) shape.push_back(int(detail::take_raw<uint32_t>(blob, at)));
    size_t numel = size_t(shape_numel(shape));
    if (at + numel * sizeof(float) > blob.size())
      throw CheckpointCorruptError("checkpoint payload truncated at '" + name + "'");
    if (!store.has(name))
      throw CheckpointCorruptError("checkpoint names unknown parameter '" + name + "'");
    auto& p = store.get(name);
    if (p.tensor.shape() != shape)
      throw CheckpointCorruptError("parameter '" + name + "' is " + shape_str(shape) +
                                   " in checkpoint, " + shape_str(p.tensor.shape()) + " in model");
    std::memcpy(p.tensor.values().data(), blob.data() + at, numel * sizeof(float));
    at += numel * sizeof(float);
    ++loaded;
  }
  if (loaded != store.size())
    throw CheckpointCorruptError("checkpoint has " + std::to_string(loaded) + " parameters, model has " +
                                 std::to_string(store.size()));
  return hdr;
}

// Loads only parameters under `prefix` (e.g. a pretrained backbone into a
// larger model); other records are skipped.
inline CheckpointHeader load_checkpoint_prefix(const std::filesystem::path& path,
                                               const std::string& expect_kind,
                                               const std::string& prefix, ParameterStore& store,
                                               int* loaded_out = nullptr) {
  std::string blob = read_text_file(path);
  size_t at = 0;
  CheckpointHeader hdr = read_checkpoint_header(blob, at);
  if (hdr.kind != expect_kind)
    throw CheckpointCorruptError("checkpoint kind '" + hdr.kind + "', expected '" + expect_kind +
                                 "'");
  int loaded = 0;
  for (uint32_t i = 0; i < hdr.param_count; ++i) {
    uint32_t nlen = detail::take_raw<uint32_t>(blob, at);
    if (at + nlen > blob.size()) throw CheckpointCorruptError("checkpoint name truncated");
    std::string name = blob.substr(at, nlen);
    at += nlen;
    uint32_t ndim = detail::take_raw<uint32_t>(blob, at);
    Shape shape;
    for (uint32_t d = 0; d < ndim; ++d) shape.push_back(int(detail::take_raw<uint32_t>(blob, at)));
    size_t numel = size_t(shape_numel(shape));
    if (at + numel * sizeof(float) > blob.size())
      throw CheckpointCorruptError("checkpoint payload truncated at '" + name + "'");
    if (name.rfind(prefix, 0) == 0) {
      if (!store.has(name))
        throw CheckpointCorruptError("checkpoint names unknown parameter '" + name + "'");
      auto& p = store.get(name);
      if (p.tensor.shape() != shape)
        throw CheckpointCorruptError("parameter '" + name + "' is " + shape_str(shape) +
                                     " in checkpoint, " + shape_str(p.tensor.shape()) +
                                     " in model");
      std::memcpy(p.tensor.values().data(), blob.data() + at, numel * sizeof(float));
      ++loaded;
    }
    at += numel * sizeof(float);
  }
  if (loaded == 0)
    throw CheckpointCorruptError("checkpoint holds nothing under prefix '" + prefix + "'");
  if (loaded_out) *loaded_out = loaded;
  return hdr;
}

inline std::string rng_state_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void rng_state_restore(Rng& rng, const std::string& state) {
  if (state.empty()) return;
  std::istringstream is(state);
  is >> rng;
  if (is.fail()) throw CheckpointCorruptError("bad rng state in checkpoint");
}

}  // namespace cloze
