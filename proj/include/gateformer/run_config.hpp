#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gateformer/config.hpp"
#include "gateformer/data.hpp"
#include "gateformer/error.hpp"
#include "gateformer/synthetic.hpp"

namespace gateformer {

/// Where the series comes from and how it is split.
///
/// data.path is a CSV path, or `synthetic` to generate a synthetic_family()
/// member from the synthetic.* keys. data.split_mode is one of `ratio`,
/// `borders` (explicit data.borders), `ett_hourly` or `ett_minute`.
struct DataConfig {
  std::string path;
  std::string name;  // label in reports; defaults to the file stem
  SplitSpec split;
  bool standardize = true;
  std::size_t synthetic_variates = 8;
  std::size_t synthetic_length = 2000;
  std::uint64_t synthetic_seed = 1;
  double synthetic_noise = 0.1;

  bool is_synthetic() const { return path == "synthetic"; }

  static std::vector<std::string> keys() {
    return {"data.path",         "data.name",          "data.split_mode",       "data.ratios",
            "data.borders",      "data.standardize",   "data.lookback_overlap", "synthetic.n_variates",
            "synthetic.length",  "synthetic.seed",     "synthetic.noise"};
  }

  static DataConfig from_kv(const KeyValues& kv) {
    DataConfig d;
    d.path = kv.require("data.path");
    const std::string mode = kv.get_string("data.split_mode", "ratio");
    if (mode == "ratio") {
      d.split.mode = SplitMode::kRatio;
      if (kv.has("data.ratios")) {
        const auto r = kv.get_doubles("data.ratios");
        if (r.size() != 3) throw ConfigError("data.ratios needs three values (train,val,test)");
        d.split.ratios = {r[0], r[1], r[2]};
      }
    } else if (mode == "borders") {
      d.split.mode = SplitMode::kFixedBorders;
      const auto b = kv.get_doubles("data.borders");
      if (b.size() != 3) throw ConfigError("data.borders needs three values (train_end,val_end,test_end)");
      for (std::size_t i = 0; i < 3; ++i) {
        if (b[i] < 0 || b[i] != static_cast<double>(static_cast<std::size_t>(b[i]))) {
          throw ConfigError("data.borders must be non-negative integers");
        }
        d.split.borders[i] = static_cast<std::size_t>(b[i]);
      }
    } else if (mode == "ett_hourly") {
      d.split = SplitSpec::ett_hourly();
    } else if (mode == "ett_minute") {
      d.split = SplitSpec::ett_minute();
    } else {
      throw ConfigError("data.split_mode must be ratio, borders, ett_hourly or ett_minute, got " + mode);
    }
    d.split.lookback_overlap = kv.get_bool("data.lookback_overlap", true);
    d.standardize = kv.get_bool("data.standardize", true);
    d.synthetic_variates = kv.get_size("synthetic.n_variates", d.synthetic_variates);
    d.synthetic_length = kv.get_size("synthetic.length", d.synthetic_length);
    d.synthetic_seed = kv.get_u64("synthetic.seed", d.synthetic_seed);
    d.synthetic_noise = kv.get_double("synthetic.noise", d.synthetic_noise);
    d.name = kv.get_string("data.name", d.is_synthetic() ? "synthetic" : std::filesystem::path(d.path).stem().string());
    return d;
  }

  RawSeries load() const {
    if (is_synthetic()) {
      return make_synthetic(synthetic_family(synthetic_variates, synthetic_length, synthetic_seed, synthetic_noise));
    }
    return load_csv(path);
  }
};

/// Everything one CLI invocation reads from its config file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::string output_dir = "out";

  static RunConfig from_kv(const KeyValues& kv) {
    std::vector<std::string> known = ModelConfig::keys();
    for (auto& k : TrainConfig::keys()) known.push_back(k);
    for (auto& k : DataConfig::keys()) known.push_back(k);
    known.push_back("output.dir");
    kv.reject_unknown(known);
    RunConfig rc;
    rc.model = ModelConfig::from_kv(kv);
    rc.train = TrainConfig::from_kv(kv);
    rc.data = DataConfig::from_kv(kv);
    rc.output_dir = kv.get_string("output.dir", rc.output_dir);
    return rc;
  }

  static RunConfig load(const std::string& path) { return from_kv(KeyValues::load(path)); }

  TimeSeriesDataset dataset() const {
    DatasetOptions opts;
    opts.split = data.split;
    opts.standardize = data.standardize;
    return TimeSeriesDataset(data.load(), model.lookback, model.horizon, opts);
  }
};

}  // namespace gateformer
