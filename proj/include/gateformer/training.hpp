#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gateformer/adam.hpp"
#include "gateformer/checkpoint.hpp"
#include "gateformer/config.hpp"
#include "gateformer/data.hpp"
#include "gateformer/error.hpp"
#include "gateformer/model.hpp"
#include "gateformer/params.hpp"
#include "gateformer/rng.hpp"

namespace gateformer {

/// Patience rule: an epoch improves only if its loss is strictly below every
/// earlier one. Training stops once `patience` consecutive epochs fail to improve.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience == 0) throw ConfigError("patience must be >= 1");
  }

  /// Records the loss of the next epoch; returns true if it is a new best.
  bool observe(double loss) {
    ++epochs_;
    if (loss < best_loss_) {
      best_loss_ = loss;
      best_epoch_ = epochs_;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const noexcept { return stale_ >= patience_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }  // 1-based, 0 before any epoch
  double best_loss() const noexcept { return best_loss_; }
  std::size_t epochs_seen() const noexcept { return epochs_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

/// ceil(ratio·N) distinct variates per subsampled batch, at least one.
inline std::size_t sampled_variate_count(double ratio, std::size_t n_variates) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("variate sample ratio must be in (0, 1]");
  const auto k = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n_variates) - 1e-9));
  return std::clamp<std::size_t>(k, 1, n_variates);
}

struct BatchInfo {
  std::size_t epoch = 0;  // 1-based
  std::size_t batch = 0;  // 0-based within the epoch
  std::size_t n_windows = 0;
  std::vector<std::size_t> variates;  // rows fed to the model this batch
  Shape variate_attention_shape;      // [B, heads, n, n] of the first variate block; empty if none
  double loss = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean of batch losses
  double val_loss = 0.0;    // full-variate validation MSE
  bool improved = false;
  double seconds = 0.0;
};

struct TrainObserver {
  std::function<void(const BatchInfo&)> on_batch;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;  // best-validation snapshot
  std::vector<EpochRecord> history;
  bool stopped_early = false;
};

/// Mean squared error of the model over every window and variate of a split,
/// accumulated in double in window order.
inline double split_mse(GateformerParams<float>& params, const ModelConfig& cfg, const TimeSeriesDataset& ds,
                        Split split, std::size_t batch_size = 32) {
  const auto windows = ds.windows(split);
  if (windows.empty()) throw ConfigError(std::string(split_name(split)) + " split has no windows");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < windows.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, windows.size() - i);
    const Batch<float> b = gather_batch<float>(ds, std::span(windows).subspan(i, n));
    const Tensor<float> pred = predict(params, cfg, b.x);
    for (std::size_t j = 0; j < pred.size(); ++j) {
      const double e = static_cast<double>(pred[j]) - static_cast<double>(b.y[j]);
      sum += e * e;
    }
    count += pred.size();
  }
  return sum / static_cast<double>(count);
}

/// Trains with Adam on MSE, validating on all variates after every epoch and
/// returning the best-validation snapshot. `initial` (if given) replaces the
/// seeded initialization, e.g. for fine-tuning a pre-trained checkpoint.
inline TrainResult train(const ModelConfig& cfg, const TrainConfig& tc, const TimeSeriesDataset& ds,
                         const TrainObserver& observer = {}, const GateformerParams<float>* initial = nullptr) {
  cfg.validate();
  tc.validate();
  if (ds.lookback() != cfg.lookback || ds.horizon() != cfg.horizon) {
    throw ConfigError("dataset windows (L=" + std::to_string(ds.lookback()) + ", F=" + std::to_string(ds.horizon()) +
                      ") do not match model (L=" + std::to_string(cfg.lookback) +
                      ", F=" + std::to_string(cfg.horizon) + ")");
  }
  const auto train_windows = ds.windows(Split::kTrain);
  if (train_windows.empty()) throw ConfigError("train split has no windows");

  GateformerParams<float> params = initial ? *initial : GateformerParams<float>::initialized(cfg, tc.seed);
  if (initial && parameter_layout(cfg).size() != params.size()) {
    throw ConfigError("initial parameters do not match the model config");
  }
  auto ptrs = params.pointers();
  AdamOptions adam_opts;
  adam_opts.lr = tc.lr;
  AdamState<float> adam(ptrs, adam_opts);

  auto variate_rng = make_rng(tc.seed, RngStream::kVariateSampling);
  auto dropout_rng = make_rng(tc.seed, RngStream::kDropout);
  const std::size_t n_all = ds.n_variates();
  const bool subsample = tc.variate_sample_ratio < 1.0;
  const std::size_t k = sampled_variate_count(tc.variate_sample_ratio, n_all);

  TrainResult result;
  result.checkpoint.config = cfg;
  result.checkpoint.params = params;
  EarlyStopping stopper(tc.patience);

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batches = make_batches(train_windows.size(), tc.batch_size, true, tc.seed, epoch);
    double loss_sum = 0.0;
    std::vector<Window> picked;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      picked.clear();
      for (std::size_t w : batches[bi]) picked.push_back(train_windows[w]);
      std::vector<std::size_t> variates;
      if (subsample) variates = sample_without_replacement(variate_rng, n_all, k);
      const Batch<float> batch = gather_batch<float>(ds, picked, variates);

      std::vector<AttentionRecord<float>> attn_log;
      double loss_value = 0.0;
      try {
        params.zero_grad();
        Tape<float> tape;
        if (observer.on_batch) tape.set_attention_log(&attn_log);
        ForwardOptions<float> fo;
        fo.training = true;
        fo.rng = &dropout_rng;
        ModelGraph<float> graph(tape, params, cfg, fo);
        Var<float> loss = mse_loss(graph.forward(batch.x), batch.y);
        loss_value = loss.value()[0];
        tape.backward(loss);
        adam.step(ptrs);
        for (const auto& p : params.all()) {
          if (!p.value.all_finite()) throw NonFiniteError("parameter '" + p.name + "' after optimizer step");
        }
      } catch (const NonFiniteError& e) {
        const std::string cause = std::string(e.what()).substr(std::string_view("non-finite: ").size());
        throw NonFiniteError("epoch " + std::to_string(epoch) + " batch " + std::to_string(bi) + ": " + cause);
      }
      loss_sum += loss_value;

      if (observer.on_batch) {
        BatchInfo info;
        info.epoch = epoch;
        info.batch = bi;
        info.n_windows = picked.size();
        info.variates = subsample ? variates : std::vector<std::size_t>{};
        if (!subsample) {
          info.variates.resize(n_all);
          for (std::size_t i = 0; i < n_all; ++i) info.variates[i] = i;
        }
        for (const auto& rec : attn_log) {
          if (rec.stage == "variate") {
            info.variate_attention_shape = rec.probs.shape();
            break;
          }
        }
        info.loss = loss_value;
        observer.on_batch(info);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches.size());
    rec.val_loss = split_mse(params, cfg, ds, Split::kVal);
    rec.improved = stopper.observe(rec.val_loss);
    if (rec.improved) {
      result.checkpoint.params = params;
      result.checkpoint.best_val_loss = rec.val_loss;
      result.checkpoint.epoch = epoch;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (observer.on_epoch) observer.on_epoch(rec);
    if (stopper.should_stop()) {
      result.stopped_early = epoch < tc.max_epochs;
      break;
    }
  }
  return result;
}

/// epoch,train_loss,val_loss,improved (timing is left out so reruns compare equal).
inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_loss,improved\n";
  char buf[64];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%d\n", r.epoch, r.train_loss, r.val_loss, r.improved ? 1 : 0);
    out += buf;
  }
  return out;
}

}  // namespace gateformer
