#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "gateformer/error.hpp"

namespace gateformer {

/// Ordered key=value pairs. Lines are `key = value`; `#` starts a comment.
class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& source = "<config>") {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string_view t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string_view::npos) {
        throw ParseError(source + ":" + std::to_string(lineno) + ": expected key=value");
      }
      const std::string key(trim(t.substr(0, eq)));
      if (key.empty()) throw ParseError(source + ":" + std::to_string(lineno) + ": empty key");
      if (kv.values_.count(key)) throw ParseError(source + ":" + std::to_string(lineno) + ": duplicate key " + key);
      kv.values_[key] = std::string(trim(t.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValues parse_string(const std::string& text, const std::string& source = "<config>") {
    std::istringstream in(text);
    return parse(in, source);
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& entries() const noexcept { return values_; }

  const std::string& require(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing key " + key);
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    return parse_size(key, require(key));
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = require(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("key " + key + ": not an integer: " + s);
    return v;
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return parse_double(key, require(key));
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = require(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("key " + key + ": expected true/false, got " + s);
  }

  /// Comma-separated doubles.
  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    const std::string& s = require(key);
    std::size_t start = 0;
    while (start <= s.size()) {
      const auto comma = s.find(',', start);
      out.push_back(parse_double(key, std::string(trim(s.substr(start, comma - start)))));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  }

  /// Rejects any key not in `known`, naming the first offender.
  void reject_unknown(const std::vector<std::string>& known) const {
    for (const auto& [k, v] : values_) {
      bool ok = false;
      for (const auto& kn : known) ok = ok || kn == k;
      if (!ok) throw ConfigError("unknown key " + k);
    }
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }

  static std::size_t parse_size(const std::string& key, const std::string& s) {
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ConfigError("key " + key + ": not a non-negative integer: " + s);
    }
    return v;
  }

  static double parse_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
      throw ConfigError("key " + key + ": not a number: " + s);
    }
    return v;
  }

  std::map<std::string, std::string> values_;
};

/// Architecture hyperparameters and ablation switches.
struct ModelConfig {
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t patch_len = 16;
  std::size_t d_model = 64;
  std::size_t n_heads = 8;
  std::size_t n_temporal_blocks = 1;
  std::size_t n_variate_blocks = 1;
  std::size_t ffn_hidden = 0;  // 0 selects 2·d_model
  double dropout = 0.0;
  bool use_temporal_attn = true;
  bool use_global_embed = true;
  bool use_variate_gate = true;
  bool use_variate_attn = true;

  std::size_t n_patches() const { return (lookback + patch_len - 1) / patch_len; }
  std::size_t ffn_dim() const { return ffn_hidden == 0 ? 2 * d_model : ffn_hidden; }

  void validate() const {
    if (lookback < 2) throw ConfigError("model.lookback must be >= 2");
    if (horizon < 1) throw ConfigError("model.horizon must be >= 1");
    if (patch_len < 1) throw ConfigError("model.patch_len must be >= 1");
    if (patch_len > lookback) throw ConfigError("model.patch_len exceeds model.lookback");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
      throw ConfigError("model.d_model must be a positive multiple of model.n_heads");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
    if (!use_temporal_attn && !use_global_embed) {
      throw ConfigError("at least one of model.use_temporal_attn / model.use_global_embed must be true");
    }
    if (use_temporal_attn && n_temporal_blocks < 1) throw ConfigError("model.n_temporal_blocks must be >= 1");
    if (use_variate_attn && n_variate_blocks < 1) throw ConfigError("model.n_variate_blocks must be >= 1");
  }

  static std::vector<std::string> keys() {
    return {"model.lookback",          "model.horizon",          "model.patch_len",        "model.d_model",
            "model.n_heads",           "model.n_temporal_blocks", "model.n_variate_blocks", "model.ffn_hidden",
            "model.dropout",           "model.use_temporal_attn", "model.use_global_embed", "model.use_variate_gate",
            "model.use_variate_attn"};
  }

  static ModelConfig from_kv(const KeyValues& kv) {
    ModelConfig c;
    c.lookback = kv.get_size("model.lookback", c.lookback);
    c.horizon = kv.get_size("model.horizon", c.horizon);
    c.patch_len = kv.get_size("model.patch_len", c.patch_len);
    c.d_model = kv.get_size("model.d_model", c.d_model);
    c.n_heads = kv.get_size("model.n_heads", c.n_heads);
    c.n_temporal_blocks = kv.get_size("model.n_temporal_blocks", c.n_temporal_blocks);
    c.n_variate_blocks = kv.get_size("model.n_variate_blocks", c.n_variate_blocks);
    c.ffn_hidden = kv.get_size("model.ffn_hidden", 0);
    c.dropout = kv.get_double("model.dropout", c.dropout);
    c.use_temporal_attn = kv.get_bool("model.use_temporal_attn", c.use_temporal_attn);
    c.use_global_embed = kv.get_bool("model.use_global_embed", c.use_global_embed);
    c.use_variate_gate = kv.get_bool("model.use_variate_gate", c.use_variate_gate);
    c.use_variate_attn = kv.get_bool("model.use_variate_attn", c.use_variate_attn);
    c.validate();
    return c;
  }

  /// Writes every field, with ffn_hidden resolved, so the output is self-contained.
  void to_kv(KeyValues& kv) const {
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    kv.set("model.lookback", std::to_string(lookback));
    kv.set("model.horizon", std::to_string(horizon));
    kv.set("model.patch_len", std::to_string(patch_len));
    kv.set("model.d_model", std::to_string(d_model));
    kv.set("model.n_heads", std::to_string(n_heads));
    kv.set("model.n_temporal_blocks", std::to_string(n_temporal_blocks));
    kv.set("model.n_variate_blocks", std::to_string(n_variate_blocks));
    kv.set("model.ffn_hidden", std::to_string(ffn_dim()));
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, dropout);
    kv.set("model.dropout", std::string(buf, res.ptr));
    kv.set("model.use_temporal_attn", b(use_temporal_attn));
    kv.set("model.use_global_embed", b(use_global_embed));
    kv.set("model.use_variate_gate", b(use_variate_gate));
    kv.set("model.use_variate_attn", b(use_variate_attn));
  }

  /// Field-wise equality with ffn_hidden compared after resolving the 0 default.
  friend bool operator==(const ModelConfig& a, const ModelConfig& b) {
    auto tie = [](const ModelConfig& c) {
      return std::tuple(c.lookback, c.horizon, c.patch_len, c.d_model, c.n_heads, c.n_temporal_blocks,
                        c.n_variate_blocks, c.ffn_dim(), c.dropout, c.use_temporal_attn, c.use_global_embed,
                        c.use_variate_gate, c.use_variate_attn);
    };
    return tie(a) == tie(b);
  }
};

struct TrainConfig {
  double lr = 5e-4;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  std::uint64_t seed = 2024;
  double variate_sample_ratio = 1.0;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    if (!(variate_sample_ratio > 0.0 && variate_sample_ratio <= 1.0)) {
      throw ConfigError("train.variate_sample_ratio must be in (0, 1]");
    }
  }

  static std::vector<std::string> keys() {
    return {"train.lr", "train.batch_size", "train.max_epochs", "train.patience", "train.seed",
            "train.variate_sample_ratio"};
  }

  static TrainConfig from_kv(const KeyValues& kv) {
    TrainConfig c;
    c.lr = kv.get_double("train.lr", c.lr);
    c.batch_size = kv.get_size("train.batch_size", c.batch_size);
    c.max_epochs = kv.get_size("train.max_epochs", c.max_epochs);
    c.patience = kv.get_size("train.patience", c.patience);
    c.seed = kv.get_u64("train.seed", c.seed);
    c.variate_sample_ratio = kv.get_double("train.variate_sample_ratio", c.variate_sample_ratio);
    c.validate();
    return c;
  }
};

}  // namespace gateformer
