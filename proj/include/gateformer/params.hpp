#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gateformer/config.hpp"
#include "gateformer/error.hpp"
#include "gateformer/rng.hpp"
#include "gateformer/tensor.hpp"

namespace gateformer {

/// Name and shape of one learnable array.
struct ParamSpec {
  std::string name;
  Shape shape;
  enum class Init { kGlorot, kZeros, kOnes } init = Init::kGlorot;
};

namespace detail {

inline void add_linear(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t in, std::size_t dim_out) {
  out.push_back({prefix + ".weight", {in, dim_out}, ParamSpec::Init::kGlorot});
  out.push_back({prefix + ".bias", {dim_out}, ParamSpec::Init::kZeros});
}

inline void add_norm(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
  out.push_back({prefix + ".gamma", {d}, ParamSpec::Init::kOnes});
  out.push_back({prefix + ".beta", {d}, ParamSpec::Init::kZeros});
}

inline void add_encoder_block(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d, std::size_t ffn) {
  add_norm(out, prefix + ".ln1", d);
  add_linear(out, prefix + ".attn.q", d, d);
  add_linear(out, prefix + ".attn.k", d, d);
  add_linear(out, prefix + ".attn.v", d, d);
  add_linear(out, prefix + ".attn.o", d, d);
  add_norm(out, prefix + ".ln2", d);
  add_linear(out, prefix + ".ffn.1", d, ffn);
  add_linear(out, prefix + ".ffn.2", ffn, d);
}

}  // namespace detail

/// Declared parameter layout. Depends only on the config (never on the number
/// of variates); disabled ablation paths contribute no parameters.
inline std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model, ffn = cfg.ffn_dim(), p = cfg.n_patches();
  std::vector<ParamSpec> out;
  if (cfg.use_temporal_attn) {
    detail::add_linear(out, "patch.proj", cfg.patch_len, d);
    out.push_back({"patch.pos", {p, d}, ParamSpec::Init::kGlorot});
    for (std::size_t b = 0; b < cfg.n_temporal_blocks; ++b) {
      detail::add_encoder_block(out, "temporal." + std::to_string(b), d, ffn);
    }
    detail::add_norm(out, "temporal.norm", d);
    detail::add_linear(out, "temporal.head.1", p * d, d);
    detail::add_linear(out, "temporal.head.2", d, d);
  }
  if (cfg.use_global_embed) {
    detail::add_linear(out, "global.1", cfg.lookback, d);
    detail::add_linear(out, "global.2", d, d);
  }
  if (cfg.use_temporal_attn && cfg.use_global_embed) {
    out.push_back({"fusion.w_temporal", {d, d}, ParamSpec::Init::kGlorot});
    out.push_back({"fusion.w_global", {d, d}, ParamSpec::Init::kGlorot});
    out.push_back({"fusion.bias", {d}, ParamSpec::Init::kZeros});
  }
  if (cfg.use_variate_attn) {
    for (std::size_t b = 0; b < cfg.n_variate_blocks; ++b) {
      detail::add_encoder_block(out, "variate." + std::to_string(b), d, ffn);
    }
    detail::add_norm(out, "variate.norm", d);
    if (cfg.use_variate_gate) {
      out.push_back({"variate_gate.w_attn", {d, d}, ParamSpec::Init::kGlorot});
      out.push_back({"variate_gate.w_input", {d, d}, ParamSpec::Init::kGlorot});
      out.push_back({"variate_gate.bias", {d}, ParamSpec::Init::kZeros});
    }
  }
  detail::add_linear(out, "head", d, cfg.horizon);
  return out;
}

/// Coarse grouping of parameters by the architectural component they belong to.
inline std::string parameter_group(const std::string& name) {
  auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
  if (starts("patch.")) return "patch_embed";
  if (starts("temporal.head.")) return "temporal_head";
  if (starts("temporal.")) return "temporal_attention";
  if (starts("global.")) return "global_mlp";
  if (starts("fusion.")) return "fusion_gate";
  if (starts("variate_gate.")) return "variate_gate";
  if (starts("variate.")) return "variate_attention";
  if (starts("head.")) return "projection";
  return "other";
}

/// The ordered, named collection of learnable arrays for one ModelConfig.
/// Parameters are never added or removed after construction, so addresses stay
/// stable for the lifetime of the object (tapes hold raw pointers to them).
template <typename T>
class GateformerParams {
 public:
  GateformerParams() = default;

  /// Zero-initialised storage matching the layout.
  explicit GateformerParams(const ModelConfig& cfg) {
    for (const ParamSpec& spec : parameter_layout(cfg)) {
      index_.emplace(spec.name, params_.size());
      params_.emplace_back(spec.name, Tensor<T>(spec.shape));
    }
  }

  /// Glorot-uniform weights (limit sqrt(6 / (fan_in + fan_out))), zero biases,
  /// unit norm gains. Deterministic in `seed`.
  static GateformerParams initialized(const ModelConfig& cfg, std::uint64_t seed) {
    GateformerParams out(cfg);
    auto rng = make_rng(seed, RngStream::kInit);
    const auto layout = parameter_layout(cfg);
    for (std::size_t i = 0; i < layout.size(); ++i) {
      auto& value = out.params_[i].value;
      switch (layout[i].init) {
        case ParamSpec::Init::kZeros: value.fill(T{0}); break;
        case ParamSpec::Init::kOnes: value.fill(T{1}); break;
        case ParamSpec::Init::kGlorot: {
          const double limit = std::sqrt(6.0 / static_cast<double>(layout[i].shape[0] + layout[i].shape[1]));
          for (T& v : value.data()) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * limit);
          break;
        }
      }
    }
    return out;
  }

  GateformerParams(const GateformerParams& other) : params_(other.params_), index_(other.index_) {}
  GateformerParams& operator=(const GateformerParams& other) {
    params_ = other.params_;
    index_ = other.index_;
    return *this;
  }
  GateformerParams(GateformerParams&&) noexcept = default;
  GateformerParams& operator=(GateformerParams&&) noexcept = default;

  Parameter<T>& operator[](const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("no parameter named '" + name + "'");
    return params_[it->second];
  }
  const Parameter<T>& operator[](const std::string& name) const {
    return const_cast<GateformerParams&>(*this)[name];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const noexcept { return params_.size(); }
  std::vector<Parameter<T>>& all() noexcept { return params_; }
  const std::vector<Parameter<T>>& all() const noexcept { return params_; }

  std::vector<Parameter<T>*> pointers() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Element-type conversion (e.g. f32 checkpoint -> f64 gradient check).
  template <typename U>
  GateformerParams<U> cast() const {
    GateformerParams<U> out;
    for (const auto& p : params_) out.push_back(Parameter<U>(p.name, p.value.template cast<U>()));
    return out;
  }

  void push_back(Parameter<T> p) {
    index_.emplace(p.name, params_.size());
    params_.push_back(std::move(p));
  }

  /// Bitwise equality of every name, shape and value.
  friend bool operator==(const GateformerParams& a, const GateformerParams& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value)) return false;
    }
    return true;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace gateformer
