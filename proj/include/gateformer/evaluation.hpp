#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gateformer/checkpoint.hpp"
#include "gateformer/config.hpp"
#include "gateformer/data.hpp"
#include "gateformer/error.hpp"
#include "gateformer/model.hpp"
#include "gateformer/training.hpp"

namespace gateformer {

/// Metrics over every element of every window of a split. The aggregate is the
/// mean over all (window, variate, step) elements, not a mean of window means.
struct ForecastReport {
  std::string dataset;
  std::string split;
  std::string variant;
  std::size_t horizon = 0;
  std::size_t n_windows = 0;
  std::size_t n_variates = 0;
  double mse = 0.0;
  double mae = 0.0;
  std::vector<double> mse_by_step, mae_by_step;        // length F
  std::vector<double> mse_by_variate, mae_by_variate;  // length N
};

/// Accumulates squared and absolute errors in double, in the order added.
class MetricAccumulator {
 public:
  MetricAccumulator(std::size_t n_variates, std::size_t horizon)
      : n_(n_variates), f_(horizon), se_step_(horizon), ae_step_(horizon), se_var_(n_variates), ae_var_(n_variates) {}

  /// pred and target are one window, [N, F] row-major.
  void add_window(std::span<const float> pred, std::span<const float> target) {
    if (pred.size() != n_ * f_ || target.size() != n_ * f_) throw ShapeError("metric window size mismatch");
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t t = 0; t < f_; ++t) {
        const double e = static_cast<double>(pred[i * f_ + t]) - static_cast<double>(target[i * f_ + t]);
        se_ += e * e;
        ae_ += std::abs(e);
        se_step_[t] += e * e;
        ae_step_[t] += std::abs(e);
        se_var_[i] += e * e;
        ae_var_[i] += std::abs(e);
      }
    }
    ++windows_;
  }

  ForecastReport report() const {
    if (windows_ == 0) throw UsageError("no windows were evaluated");
    ForecastReport r;
    r.horizon = f_;
    r.n_windows = windows_;
    r.n_variates = n_;
    const double w = static_cast<double>(windows_);
    r.mse = se_ / (w * static_cast<double>(n_ * f_));
    r.mae = ae_ / (w * static_cast<double>(n_ * f_));
    for (std::size_t t = 0; t < f_; ++t) {
      r.mse_by_step.push_back(se_step_[t] / (w * static_cast<double>(n_)));
      r.mae_by_step.push_back(ae_step_[t] / (w * static_cast<double>(n_)));
    }
    for (std::size_t i = 0; i < n_; ++i) {
      r.mse_by_variate.push_back(se_var_[i] / (w * static_cast<double>(f_)));
      r.mae_by_variate.push_back(ae_var_[i] / (w * static_cast<double>(f_)));
    }
    return r;
  }

 private:
  std::size_t n_, f_;
  std::size_t windows_ = 0;
  double se_ = 0.0, ae_ = 0.0;
  std::vector<double> se_step_, ae_step_, se_var_, ae_var_;
};

/// Maps a batch of inputs x [B, N, L] to forecasts [B, N, F]. The targets are
/// passed too so that reference fixtures (oracle, offset) can be expressed;
/// real predictors must ignore them.
using Predictor = std::function<Tensor<float>(const Tensor<float>& x, const Tensor<float>& y)>;

inline Predictor model_predictor(GateformerParams<float>& params, const ModelConfig& cfg) {
  return [&params, cfg](const Tensor<float>& x, const Tensor<float>&) { return predict(params, cfg, x); };
}

/// ŷ[i, t] = x[i, L-1] for every step.
inline Predictor repeat_last_predictor() {
  return [](const Tensor<float>& x, const Tensor<float>& y) {
    Tensor<float> out(y.shape());
    const std::size_t rows = x.size() / x.cols(), l = x.cols(), f = y.cols();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t t = 0; t < f; ++t) out[r * f + t] = x[r * l + l - 1];
    return out;
  };
}

/// ŷ := y. A fixture for checking the metric plumbing.
inline Predictor oracle_predictor() {
  return [](const Tensor<float>&, const Tensor<float>& y) { return y; };
}

/// ŷ := y + c. A fixture for checking the metric plumbing.
inline Predictor offset_predictor(float c) {
  return [c](const Tensor<float>&, const Tensor<float>& y) {
    Tensor<float> out = y;
    for (float& v : out.data()) v += c;
    return out;
  };
}

/// Runs `predictor` over all windows of `split` in chronological order.
inline ForecastReport evaluate_predictor(const TimeSeriesDataset& ds, Split split, const Predictor& predictor,
                                         std::size_t batch_size = 32) {
  const auto windows = ds.windows(split);
  const std::size_t n = ds.n_variates(), f = ds.horizon();
  MetricAccumulator acc(n, f);
  for (std::size_t i = 0; i < windows.size(); i += batch_size) {
    const std::size_t b = std::min(batch_size, windows.size() - i);
    const Batch<float> batch = gather_batch<float>(ds, std::span(windows).subspan(i, b));
    const Tensor<float> pred = predictor(batch.x, batch.y);
    if (pred.shape() != batch.y.shape()) {
      throw ShapeError("predictor returned " + shape_str(pred.shape()) + ", expected " + shape_str(batch.y.shape()));
    }
    for (std::size_t w = 0; w < b; ++w) {
      acc.add_window(pred.data().subspan(w * n * f, n * f), batch.y.data().subspan(w * n * f, n * f));
    }
  }
  ForecastReport r = acc.report();
  r.split = split_name(split);
  return r;
}

inline void require_compatible(const ModelConfig& cfg, const TimeSeriesDataset& ds) {
  if (cfg.lookback != ds.lookback() || cfg.horizon != ds.horizon()) {
    throw ConfigError("checkpoint expects L=" + std::to_string(cfg.lookback) + ", F=" + std::to_string(cfg.horizon) +
                      " but the dataset is set up for L=" + std::to_string(ds.lookback()) +
                      ", F=" + std::to_string(ds.horizon()));
  }
}

/// Evaluates a checkpoint without modifying it.
inline ForecastReport evaluate(const Checkpoint& ck, const TimeSeriesDataset& ds, Split split) {
  require_compatible(ck.config, ds);
  GateformerParams<float> params = ck.params;  // predict() never writes, but keep the input const
  ForecastReport r = evaluate_predictor(ds, split, model_predictor(params, ck.config));
  r.variant = "model";
  return r;
}

inline ForecastReport baseline_repeat_last(const TimeSeriesDataset& ds, Split split) {
  ForecastReport r = evaluate_predictor(ds, split, repeat_last_predictor());
  r.variant = "repeat_last";
  return r;
}

/// One row of a forecast dump.
struct ForecastPoint {
  std::size_t window_id;
  std::size_t variate;
  std::size_t step;
  float y_true;
  float y_pred;
};

/// Prediction vs target for one window of a split (all N variates, F steps).
inline std::vector<ForecastPoint> forecast_window(const Predictor& predictor, const TimeSeriesDataset& ds,
                                                  Split split, std::size_t window_index) {
  const auto windows = ds.windows(split);
  if (window_index >= windows.size()) {
    throw ConfigError("window index " + std::to_string(window_index) + " out of range (split has " +
                      std::to_string(windows.size()) + " windows)");
  }
  const Batch<float> b = gather_batch<float>(ds, std::span(windows).subspan(window_index, 1));
  const Tensor<float> pred = predictor(b.x, b.y);
  const std::size_t n = ds.n_variates(), f = ds.horizon();
  std::vector<ForecastPoint> out;
  out.reserve(n * f);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < f; ++t) out.push_back({window_index, i, t, b.y[i * f + t], pred[i * f + t]});
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationVariant {
  std::string id;     // CSV value
  std::string label;  // display label
  void (*apply)(ModelConfig&);
};

inline const std::vector<AblationVariant>& ablation_variants() {
  static const std::vector<AblationVariant> v = {
      {"full", "Gateformer", [](ModelConfig&) {}},
      {"no_temporal_attn", "w/o Temporal-wise Attn.", [](ModelConfig& c) { c.use_temporal_attn = false; }},
      {"no_variate_gate", "w/o Gate in Variate-wise Attn.", [](ModelConfig& c) { c.use_variate_gate = false; }},
      {"no_global_embed", "w/o Global Temporal Embeddings", [](ModelConfig& c) { c.use_global_embed = false; }},
  };
  return v;
}

struct ReferenceValue {
  double mse, mae;
};

/// Reference ablation numbers at L = 96, horizon 96, for annotation only.
inline std::optional<ReferenceValue> reference_value(const std::string& dataset, std::size_t horizon,
                                                     const std::string& variant_id) {
  struct Row {
    const char* dataset;
    ReferenceValue full, no_temporal, no_gate, no_global;
  };
  static constexpr Row kRows[] = {
      {"ETTh1", {0.383, 0.398}, {0.393, 0.404}, {0.385, 0.400}, {0.381, 0.397}},
      {"ETTm1", {0.320, 0.360}, {0.327, 0.361}, {0.327, 0.362}, {0.323, 0.362}},
      {"ETTh2", {0.306, 0.351}, {0.325, 0.360}, {0.334, 0.367}, {0.343, 0.367}},
      {"ETTm2", {0.176, 0.260}, {0.179, 0.261}, {0.182, 0.264}, {0.179, 0.262}},
      {"Exchange", {0.081, 0.199}, {0.084, 0.203}, {0.082, 0.200}, {0.084, 0.200}},
      {"Electricity", {0.146, 0.238}, {0.147, 0.239}, {0.144, 0.239}, {0.146, 0.241}},
      {"Traffic", {0.390, 0.261}, {0.395, 0.266}, {0.387, 0.261}, {0.392, 0.261}},
      {"Weather", {0.168, 0.208}, {0.176, 0.217}, {0.168, 0.208}, {0.172, 0.212}},
  };
  if (horizon != 96) return std::nullopt;
  for (const Row& r : kRows) {
    if (dataset != r.dataset) continue;
    if (variant_id == "full") return r.full;
    if (variant_id == "no_temporal_attn") return r.no_temporal;
    if (variant_id == "no_variate_gate") return r.no_gate;
    if (variant_id == "no_global_embed") return r.no_global;
  }
  return std::nullopt;
}

struct AblationRow {
  AblationVariant variant;
  ForecastReport report;
  std::optional<ReferenceValue> reference;
};

/// Trains and tests the four variants with identical seeds and hyperparameters.
/// `on_variant` is called before each run (for progress logging).
inline std::vector<AblationRow> ablation_suite(const TimeSeriesDataset& ds, const std::string& dataset_name,
                                               const ModelConfig& base, const TrainConfig& tc,
                                               const std::function<void(const AblationVariant&)>& on_variant = {},
                                               const TrainObserver& observer = {}) {
  std::vector<AblationRow> rows;
  for (const AblationVariant& v : ablation_variants()) {
    if (on_variant) on_variant(v);
    ModelConfig cfg = base;
    v.apply(cfg);
    const TrainResult tr = train(cfg, tc, ds, observer);
    ForecastReport r = evaluate(tr.checkpoint, ds, Split::kTest);
    r.dataset = dataset_name;
    r.variant = v.id;
    rows.push_back({v, std::move(r), reference_value(dataset_name, cfg.horizon, v.id)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Transfer

enum class TransferMode { kZeroShot, kFineTune };

struct TransferResult {
  ForecastReport report;
  std::vector<EpochRecord> history;  // empty for zero-shot
};

/// Zero-shot evaluates `ck` as-is. Fine-tune trains `k_epochs` on the target
/// (starting from the checkpoint, validation-based snapshot) and then tests.
/// The checkpoint is never modified.
inline TransferResult transfer_eval(const Checkpoint& ck, const TimeSeriesDataset& target, TransferMode mode,
                                   std::size_t k_epochs = 0, TrainConfig tc = {}, const TrainObserver& observer = {}) {
  require_compatible(ck.config, target);
  TransferResult out;
  if (mode == TransferMode::kZeroShot) {
    out.report = evaluate(ck, target, Split::kTest);
    out.report.variant = "zero_shot";
    return out;
  }
  if (k_epochs == 0) throw ConfigError("fine-tune needs at least one epoch");
  tc.max_epochs = k_epochs;
  tc.patience = k_epochs;
  const TrainResult tr = train(ck.config, tc, target, observer, &ck.params);
  out.history = tr.history;
  out.report = evaluate(tr.checkpoint, target, Split::kTest);
  out.report.variant = "fine_tune_" + std::to_string(k_epochs);
  return out;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string report_csv_header() { return "dataset,split,horizon,variant,mse,mae,ref_mse,ref_mae\n"; }

inline std::string report_csv_row(const ForecastReport& r, std::optional<ReferenceValue> ref = std::nullopt) {
  char buf[256];
  std::string refs = ",";
  if (ref) {
    std::snprintf(buf, sizeof buf, "%.3f,%.3f", ref->mse, ref->mae);
    refs = buf;
  }
  std::snprintf(buf, sizeof buf, "%s,%s,%zu,%s,%.9g,%.9g,", r.dataset.c_str(), r.split.c_str(), r.horizon,
                r.variant.c_str(), r.mse, r.mae);
  return buf + refs + "\n";
}

inline std::string forecast_csv(const std::vector<ForecastPoint>& points) {
  std::string out = "window_id,variate,step,y_true,y_pred\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.9g,%.9g\n", p.window_id, p.variate, p.step, p.y_true, p.y_pred);
    out += buf;
  }
  return out;
}

}  // namespace gateformer
