#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "gateformer/config.hpp"
#include "gateformer/error.hpp"
#include "gateformer/ops.hpp"
#include "gateformer/params.hpp"
#include "gateformer/revin.hpp"
#include "gateformer/tape.hpp"
#include "gateformer/tensor.hpp"

namespace gateformer {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kRevinEps = 1e-5;

/// Intermediate values captured by a forward pass when requested.
template <typename T>
struct ForwardTrace {
  std::vector<AttentionRecord<T>> attention;  // stage "temporal" or "variate", one per block
  Tensor<T> temporal_embedding;               // v_T, [B, N, d] (empty when path disabled)
  Tensor<T> global_embedding;                 // v_G, [B, N, d] (empty when path disabled)
  Tensor<T> fusion_gate;                      // [B, N, d] (empty unless both paths on)
  Tensor<T> fused;                            // S, [B, N, d]
  Tensor<T> variate_gate;                     // [B, N, d] (empty unless gated variate attention)
  Tensor<T> variate_output;                   // o, [B, N, d]
  Tensor<T> normalized_prediction;            // before de-normalization, [B, N, F]
};

template <typename T>
struct ForwardOptions {
  bool training = false;             // enables dropout
  std::mt19937_64* rng = nullptr;    // dropout randomness; required when training with dropout > 0
  ForwardTrace<T>* trace = nullptr;  // optional capture of intermediates
};

/// Binds a parameter set to one tape. With gradients disabled, parameters enter
/// the tape as constants and no backward closures are built.
template <typename T>
class ModelGraph {
 public:
  ModelGraph(Tape<T>& tape, GateformerParams<T>& params, const ModelConfig& cfg, ForwardOptions<T> opts = {},
             bool grad_enabled = true)
      : tape_(tape), params_(params), cfg_(cfg), opts_(opts), grad_enabled_(grad_enabled) {
    if (opts_.trace) tape_.set_attention_log(&opts_.trace->attention);
  }

  Tape<T>& tape() { return tape_; }
  const ModelConfig& config() const { return cfg_; }

  Var<T> p(const std::string& name) {
    Parameter<T>& param = params_[name];
    return grad_enabled_ ? tape_.param(param) : tape_.constant(param.value, param.name.c_str());
  }

  Var<T> linear(Var<T> x, const std::string& prefix) {
    return add_bias(matmul(x, p(prefix + ".weight")), p(prefix + ".bias"));
  }

  Var<T> maybe_dropout(Var<T> x) {
    if (!opts_.training || cfg_.dropout <= 0.0) return x;
    if (opts_.rng == nullptr) throw UsageError("dropout during training needs an RNG");
    return dropout(x, static_cast<T>(cfg_.dropout), *opts_.rng);
  }

  /// Pre-norm transformer encoder block over axis 1 of x [B, S, d].
  Var<T> encoder_block(Var<T> x, const std::string& prefix, bool order_invariant, const char* stage) {
    const T eps = static_cast<T>(kLayerNormEps);
    Var<T> h = layer_norm(x, p(prefix + ".ln1.gamma"), p(prefix + ".ln1.beta"), eps);
    Var<T> q = linear(h, prefix + ".attn.q");
    Var<T> k = linear(h, prefix + ".attn.k");
    Var<T> v = linear(h, prefix + ".attn.v");
    Var<T> a = multi_head_attention(q, k, v, cfg_.n_heads, order_invariant, stage);
    x = add(x, maybe_dropout(linear(a, prefix + ".attn.o")));
    h = layer_norm(x, p(prefix + ".ln2.gamma"), p(prefix + ".ln2.beta"), eps);
    Var<T> f = linear(gelu(linear(h, prefix + ".ffn.1")), prefix + ".ffn.2");
    return add(x, maybe_dropout(f));
  }

  /// Patch tokens [R, P, d] from normalized series rows [R, L].
  Var<T> patch_embed(const Tensor<T>& x_norm) {
    Var<T> patches = tape_.constant(make_patches(x_norm, cfg_.patch_len), "patches");
    return add_bias(linear(patches, "patch.proj"), p("patch.pos"));
  }

  /// v_T [R, d]: temporal encoder blocks over the patch axis, final norm,
  /// flatten P·d, then a two-layer FFN down to d.
  Var<T> temporal_encode(Var<T> tokens) {
    const std::size_t rows = tokens.shape()[0], patches = tokens.shape()[1], d = cfg_.d_model;
    for (std::size_t b = 0; b < cfg_.n_temporal_blocks; ++b) {
      tokens = encoder_block(tokens, "temporal." + std::to_string(b), false, "temporal");
    }
    tokens = layer_norm(tokens, p("temporal.norm.gamma"), p("temporal.norm.beta"), static_cast<T>(kLayerNormEps));
    Var<T> flat = reshape(tokens, {rows, patches * d});
    return linear(gelu(linear(flat, "temporal.head.1")), "temporal.head.2");
  }

  /// v_G [R, d]: shared two-layer MLP over the whole normalized look-back.
  Var<T> global_embed(Var<T> x_norm) { return linear(gelu(linear(x_norm, "global.1")), "global.2"); }

  /// s = Gate ⊙ v_T + (1 − Gate) ⊙ v_G with Gate = σ(v_T W_t + v_G W_g + b).
  Var<T> gated_fuse(Var<T> v_temporal, Var<T> v_global) {
    Var<T> pre = add(matmul(v_temporal, p("fusion.w_temporal")), matmul(v_global, p("fusion.w_global")));
    Var<T> gate = sigmoid(add_bias(pre, p("fusion.bias")));
    if (opts_.trace) opts_.trace->fusion_gate = gate.value();
    return gated_mix(gate, v_temporal, v_global);
  }

  /// o [B, N, d] from S [B, N, d]: variate-axis encoder blocks (no positional
  /// information on this axis), final norm, then the second gate against S.
  Var<T> variate_encode(Var<T> s) {
    if (!cfg_.use_variate_attn) return s;
    Var<T> a = s;
    for (std::size_t b = 0; b < cfg_.n_variate_blocks; ++b) {
      a = encoder_block(a, "variate." + std::to_string(b), true, "variate");
    }
    a = layer_norm(a, p("variate.norm.gamma"), p("variate.norm.beta"), static_cast<T>(kLayerNormEps));
    if (!cfg_.use_variate_gate) return add(a, s);
    Var<T> pre = add(matmul(a, p("variate_gate.w_attn")), matmul(s, p("variate_gate.w_input")));
    Var<T> gate = sigmoid(add_bias(pre, p("variate_gate.bias")));
    if (opts_.trace) opts_.trace->variate_gate = gate.value();
    return gated_mix(gate, a, s);
  }

  /// Shared linear head d -> F applied to every variate row.
  Var<T> project(Var<T> o) { return linear(o, "head"); }

  /// x [B, N, L] (or [N, L]) -> de-normalized forecast of the same leading shape with last dim F.
  Var<T> forward(const Tensor<T>& x) {
    const bool batched = x.rank() == 3;
    if (!batched && x.rank() != 2) throw ShapeError("forward expects [B, N, L] or [N, L], got " + shape_str(x.shape()));
    if (x.cols() != cfg_.lookback) {
      throw ShapeError("forward: look-back " + std::to_string(x.cols()) + " but model expects " +
                       std::to_string(cfg_.lookback));
    }
    const std::size_t batch = batched ? x.dim(0) : 1;
    const std::size_t n = batched ? x.dim(1) : x.dim(0);
    if (n == 0) throw ShapeError("forward: no variates");
    const std::size_t rows = batch * n, d = cfg_.d_model;

    auto [x_norm, stats] = revin_normalize(x.reshaped({rows, cfg_.lookback}), static_cast<T>(kRevinEps));

    Var<T> fused;
    Var<T> v_temporal, v_global;
    if (cfg_.use_temporal_attn) v_temporal = temporal_encode(patch_embed(x_norm));
    if (cfg_.use_global_embed) v_global = global_embed(tape_.constant(x_norm, "revin"));
    if (cfg_.use_temporal_attn && cfg_.use_global_embed) {
      fused = gated_fuse(v_temporal, v_global);
    } else {
      fused = cfg_.use_temporal_attn ? v_temporal : v_global;
    }
    if (opts_.trace) {
      if (cfg_.use_temporal_attn) opts_.trace->temporal_embedding = v_temporal.value().reshaped({batch, n, d});
      if (cfg_.use_global_embed) opts_.trace->global_embedding = v_global.value().reshaped({batch, n, d});
      opts_.trace->fused = fused.value().reshaped({batch, n, d});
    }

    Var<T> o = variate_encode(reshape(fused, {batch, n, d}));
    if (opts_.trace) opts_.trace->variate_output = o.value();
    Var<T> y_norm = project(o);
    if (opts_.trace) opts_.trace->normalized_prediction = y_norm.value();

    std::vector<T> row_scale(rows), row_shift(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      row_scale[r] = stats.scale(r);
      row_shift[r] = stats.mean[r];
    }
    Var<T> y = affine_rows(y_norm, std::move(row_scale), std::move(row_shift));
    return batched ? y : reshape(y, {n, cfg_.horizon});
  }

  /// Splits each row of x_norm [R, L] into P = ceil(L / patch_len) patches,
  /// right-padding the last one by repeating the final observed value.
  static Tensor<T> make_patches(const Tensor<T>& x_norm, std::size_t patch_len) {
    const std::size_t rows = x_norm.rows(), len = x_norm.cols();
    if (patch_len < 1 || patch_len > len) throw ConfigError("patch_len must be in [1, lookback]");
    const std::size_t n_patches = (len + patch_len - 1) / patch_len;
    Tensor<T> out({rows, n_patches, patch_len});
    for (std::size_t r = 0; r < rows; ++r) {
      const auto src = x_norm.row(r);
      T* dst = &out[r * n_patches * patch_len];
      for (std::size_t i = 0; i < n_patches * patch_len; ++i) dst[i] = src[std::min(i, len - 1)];
    }
    return out;
  }

 private:
  Tape<T>& tape_;
  GateformerParams<T>& params_;
  const ModelConfig& cfg_;
  ForwardOptions<T> opts_;
  bool grad_enabled_;
};

/// Inference without gradient bookkeeping. x is [B, N, L] or [N, L].
template <typename T>
Tensor<T> predict(GateformerParams<T>& params, const ModelConfig& cfg, const Tensor<T>& x,
                  ForwardTrace<T>* trace = nullptr) {
  Tape<T> tape;
  ForwardOptions<T> opts;
  opts.trace = trace;
  ModelGraph<T> graph(tape, params, cfg, opts, /*grad_enabled=*/false);
  return graph.forward(x).value();
}

}  // namespace gateformer
