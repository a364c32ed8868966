#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "gateformer/config.hpp"
#include "gateformer/error.hpp"
#include "gateformer/params.hpp"

namespace gateformer {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
static_assert(std::numeric_limits<float>::is_iec559);

inline constexpr char kCheckpointMagic[4] = {'G', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  GateformerParams<float> params;
  double best_val_loss = 0.0;
  std::size_t epoch = 0;  // 1-based epoch the parameters come from (0 = untrained)
};

namespace detail {

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <typename U>
  U get(const char* what) {
    U v;
    std::memcpy(&v, take(sizeof(U), what), sizeof(U));
    return v;
  }
  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(source_ + ": truncated while reading " + what + " at byte " + std::to_string(pos_));
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  KeyValues kv;
  ck.config.to_kv(kv);
  kv.set("ckpt.best_val_loss", detail::format_double(ck.best_val_loss));
  kv.set("ckpt.epoch", std::to_string(ck.epoch));
  const std::string block = kv.serialize();

  std::string out(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(block.size()));
  out += block;
  for (const auto& p : ck.params.all()) {
    detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(p.value.data().data()), p.value.size() * sizeof(float));
  }
  return out;
}

/// Parses and validates a checkpoint image: magic, version, and every array's
/// name and dimensions against the layout implied by the embedded config.
inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source = "<checkpoint>") {
  detail::Reader in(bytes, source);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError(source + ": bad magic (not a checkpoint file)");
  }
  in.take(4, "magic");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto block_len = in.get<std::uint32_t>("config length");
  const std::string block(in.take(block_len, "config block"), block_len);

  Checkpoint ck;
  try {
    const KeyValues kv = KeyValues::parse_string(block, source + " config");
    std::vector<std::string> known = ModelConfig::keys();
    known.push_back("ckpt.best_val_loss");
    known.push_back("ckpt.epoch");
    kv.reject_unknown(known);
    ck.config = ModelConfig::from_kv(kv);
    ck.best_val_loss = kv.get_double("ckpt.best_val_loss", 0.0);
    ck.epoch = kv.get_size("ckpt.epoch", 0);
  } catch (const Error& e) {
    throw FormatError(source + ": bad config block: " + e.what());
  }

  for (const ParamSpec& spec : parameter_layout(ck.config)) {
    const auto name_len = in.get<std::uint16_t>("name length");
    const std::string name(in.take(name_len, "parameter name"), name_len);
    if (name != spec.name) throw FormatError(source + ": expected parameter " + spec.name + ", found " + name);
    const auto rank = in.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint32_t>("dimension");
    if (shape != spec.shape) {
      throw FormatError(source + ": parameter " + name + " has dims " + shape_str(shape) + " but config implies " +
                        shape_str(spec.shape));
    }
    Tensor<float> value(shape);
    std::memcpy(value.data().data(), in.take(value.size() * sizeof(float), "parameter data"),
                value.size() * sizeof(float));
    ck.params.push_back(Parameter<float>(name, std::move(value)));
  }
  if (!in.at_end()) throw FormatError(source + ": trailing bytes after last parameter");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str(), path);
}

}  // namespace gateformer
