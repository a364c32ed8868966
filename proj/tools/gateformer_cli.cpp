// gateformer: train, evaluate, forecast, ablate, transfer, gradcheck.
//
// stdout carries only CSV payloads; progress goes to stderr. Errors print one
// line `error: <kind>: <reason>` and exit 2 for configuration problems, 1 otherwise.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gateformer/gateformer.hpp"

namespace gf = gateformer;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

gf::RunConfig load_run(const Common& c) {
  if (c.config.empty()) throw gf::ConfigError("--config is required");
  gf::KeyValues kv = gf::KeyValues::load(c.config);
  if (c.seed) kv.set("train.seed", std::to_string(*c.seed));
  if (c.out) kv.set("output.dir", *c.out);
  return gf::RunConfig::from_kv(kv);
}

gf::Split parse_split(const std::string& s) {
  if (s == "train") return gf::Split::kTrain;
  if (s == "val") return gf::Split::kVal;
  if (s == "test") return gf::Split::kTest;
  throw gf::ConfigError("--split must be train, val or test, got " + s);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw gf::IoError("cannot write '" + path.string() + "'");
  out << text;
}

void log_epoch(const gf::EpochRecord& r) {
  std::fprintf(stderr, "epoch %zu train %.6f val %.6f%s (%.1fs)\n", r.epoch, r.train_loss, r.val_loss,
               r.improved ? " *" : "", r.seconds);
}

int cmd_train(const Common& c) {
  const gf::RunConfig rc = load_run(c);
  const gf::TimeSeriesDataset ds = rc.dataset();
  std::fprintf(stderr, "dataset %s: N=%zu T=%zu, windows train/val/test %zu/%zu/%zu\n", rc.data.name.c_str(),
               ds.n_variates(), ds.series().length(), ds.windows(gf::Split::kTrain).size(),
               ds.windows(gf::Split::kVal).size(), ds.windows(gf::Split::kTest).size());
  gf::TrainObserver obs;
  obs.on_epoch = log_epoch;
  const gf::TrainResult tr = gf::train(rc.model, rc.train, ds, obs);

  fs::create_directories(rc.output_dir);
  const fs::path dir(rc.output_dir);
  gf::save_checkpoint(tr.checkpoint, (dir / "checkpoint.gfck").string());
  const std::string history = gf::history_csv(tr.history);
  write_file(dir / "history.csv", history);

  gf::ForecastReport test = gf::evaluate(tr.checkpoint, ds, gf::Split::kTest);
  gf::ForecastReport naive = gf::baseline_repeat_last(ds, gf::Split::kTest);
  test.dataset = naive.dataset = rc.data.name;
  write_file(dir / "report.csv", gf::report_csv_header() + gf::report_csv_row(test) + gf::report_csv_row(naive));
  std::fprintf(stderr, "best epoch %zu (val %.6f); test mse %.6f mae %.6f; repeat-last mse %.6f mae %.6f\n",
               tr.checkpoint.epoch, tr.checkpoint.best_val_loss, test.mse, test.mae, naive.mse, naive.mae);
  std::cout << history;
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& ckpt_path, const std::string& split, const std::string& which,
                 double offset) {
  const gf::RunConfig rc = load_run(c);
  const gf::TimeSeriesDataset ds = rc.dataset();
  gf::ForecastReport r;
  if (which == "model") {
    if (ckpt_path.empty()) throw gf::ConfigError("--checkpoint is required for --predictor model");
    r = gf::evaluate(gf::load_checkpoint(ckpt_path), ds, parse_split(split));
  } else if (which == "repeat_last") {
    r = gf::baseline_repeat_last(ds, parse_split(split));
  } else if (which == "oracle") {
    r = gf::evaluate_predictor(ds, parse_split(split), gf::oracle_predictor());
    r.variant = "oracle";
  } else if (which == "offset") {
    r = gf::evaluate_predictor(ds, parse_split(split), gf::offset_predictor(static_cast<float>(offset)));
    r.variant = "offset";
  } else {
    throw gf::ConfigError("--predictor must be model, repeat_last, oracle or offset, got " + which);
  }
  r.dataset = rc.data.name;
  std::cout << gf::report_csv_header() << gf::report_csv_row(r);
  return 0;
}

int cmd_forecast(const Common& c, const std::string& ckpt_path, const std::string& split, std::size_t index) {
  const gf::RunConfig rc = load_run(c);
  const gf::TimeSeriesDataset ds = rc.dataset();
  gf::Checkpoint ck = gf::load_checkpoint(ckpt_path);
  gf::require_compatible(ck.config, ds);
  const auto points = gf::forecast_window(gf::model_predictor(ck.params, ck.config), ds, parse_split(split), index);
  std::cout << gf::forecast_csv(points);
  return 0;
}

int cmd_ablate(const Common& c) {
  const gf::RunConfig rc = load_run(c);
  const gf::TimeSeriesDataset ds = rc.dataset();
  gf::TrainObserver obs;
  obs.on_epoch = log_epoch;
  const auto rows = gf::ablation_suite(
      ds, rc.data.name, rc.model, rc.train,
      [](const gf::AblationVariant& v) { std::fprintf(stderr, "variant %s\n", v.id.c_str()); }, obs);
  std::string csv = gf::report_csv_header();
  for (const auto& row : rows) csv += gf::report_csv_row(row.report, row.reference);
  fs::create_directories(rc.output_dir);
  write_file(fs::path(rc.output_dir) / "ablation.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_transfer(const Common& c, const std::string& ckpt_path, const std::string& mode, std::size_t epochs) {
  const gf::RunConfig rc = load_run(c);
  gf::TransferMode m;
  if (mode == "zero-shot") {
    m = gf::TransferMode::kZeroShot;
  } else if (mode == "fine-tune") {
    m = gf::TransferMode::kFineTune;
    if (epochs == 0) throw gf::ConfigError("--epochs must be >= 1 for fine-tune");
  } else {
    throw gf::ConfigError("--mode must be zero-shot or fine-tune, got " + mode);
  }
  const gf::Checkpoint ck = gf::load_checkpoint(ckpt_path);
  const gf::TimeSeriesDataset ds = rc.dataset();
  gf::TrainObserver obs;
  obs.on_epoch = log_epoch;
  gf::TransferResult res = gf::transfer_eval(ck, ds, m, epochs, rc.train, obs);
  res.report.dataset = rc.data.name;
  std::cout << gf::report_csv_header() << gf::report_csv_row(res.report);
  return 0;
}

int cmd_gradcheck(const Common& c, const std::string& size, const std::string& fault) {
  if (size != "tiny") throw gf::ConfigError("--size supports only tiny");
  gf::GradcheckOptions opts;
  if (c.seed) opts.seed = *c.seed;
  opts.corrupt_group = fault;
  const gf::GradcheckReport r = gf::gradcheck(gf::tiny_gradcheck_config(), opts);
  std::cout << "group,arrays,scalars,max_rel_err,worst_param,status\n";
  for (const auto& g : r.groups) {
    std::printf("%s,%zu,%zu,%.3e,%s[%zu],%s\n", g.group.c_str(), g.n_params, g.n_scalars, g.max_rel_error,
                g.worst_param.c_str(), g.worst_index, g.pass ? "pass" : "fail");
  }
  std::fflush(stdout);
  std::fprintf(stderr, "gradcheck %s: max rel err %.3e (tolerance %.0e) in %.2fs\n", r.pass ? "passed" : "FAILED",
               r.max_rel_error, opts.tolerance, r.seconds);
  return r.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gateformer multivariate forecasting"};
  app.require_subcommand(1);
  Common common;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", common.config, "key=value run config");
    if (needs_config) opt->required();
    sub->add_option("--seed", common.seed, "override train.seed");
    sub->add_option("--out", common.out, "override output.dir");
  };

  std::string checkpoint, split = "test", predictor = "model", mode, size = "tiny", fault;
  double offset = 1.0;
  std::size_t window_index = 0, epochs = 0;

  auto* train = app.add_subcommand("train", "train a model, write checkpoint and history");
  add_common(train, true);

  auto* evaluate = app.add_subcommand("evaluate", "report MSE/MAE on a split");
  add_common(evaluate, true);
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file");
  evaluate->add_option("--split", split, "train|val|test");
  evaluate->add_option("--predictor", predictor, "model|repeat_last|oracle|offset");
  evaluate->add_option("--offset", offset, "constant for the offset predictor");

  auto* forecast = app.add_subcommand("forecast", "dump one window's forecast as CSV");
  add_common(forecast, true);
  forecast->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  forecast->add_option("--split", split, "train|val|test");
  forecast->add_option("--window-index", window_index, "window within the split");

  auto* ablate = app.add_subcommand("ablate", "train and test the four ablation variants");
  add_common(ablate, true);

  auto* transfer = app.add_subcommand("transfer", "evaluate a checkpoint on another dataset");
  add_common(transfer, true);
  transfer->add_option("--checkpoint", checkpoint, "source checkpoint")->required();
  transfer->add_option("--mode", mode, "zero-shot|fine-tune")->required();
  transfer->add_option("--epochs", epochs, "fine-tune epochs");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every parameter group");
  add_common(gradcheck, false);
  gradcheck->add_option("--size", size, "tiny");
  gradcheck->add_option("--inject-fault", fault, "corrupt the analytic gradient of this group (test hook)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  try {
    if (*train) return cmd_train(common);
    if (*evaluate) return cmd_evaluate(common, checkpoint, split, predictor, offset);
    if (*forecast) return cmd_forecast(common, checkpoint, split, window_index);
    if (*ablate) return cmd_ablate(common);
    if (*transfer) return cmd_transfer(common, checkpoint, mode, epochs);
    if (*gradcheck) return cmd_gradcheck(common, size, fault);
  } catch (const gf::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
