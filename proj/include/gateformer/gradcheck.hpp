#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gateformer/config.hpp"
#include "gateformer/model.hpp"
#include "gateformer/ops.hpp"
#include "gateformer/params.hpp"
#include "gateformer/rng.hpp"

namespace gateformer {

/// N=3, L=32, F=8, d_model=16, patch_len=8, one temporal and one variate block.
inline ModelConfig tiny_gradcheck_config() {
  ModelConfig c;
  c.lookback = 32;
  c.horizon = 8;
  c.patch_len = 8;
  c.d_model = 16;
  c.n_heads = 4;
  c.n_temporal_blocks = 1;
  c.n_variate_blocks = 1;
  return c;
}

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero up to
/// rounding from being judged on noise.
inline double gradcheck_rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradcheckOptions {
  std::size_t n_variates = 3;
  std::size_t batch = 2;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
  std::string corrupt_group;  // test hook: perturb the analytic gradient of this group
};

struct GradcheckGroup {
  std::string group;
  std::size_t n_params = 0;   // arrays
  std::size_t n_scalars = 0;  // entries checked
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  bool pass = true;
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;  // in parameter-layout order
  double max_rel_error = 0.0;
  bool pass = true;
  double seconds = 0.0;
};

/// Checks every scalar of every parameter: analytic MSE-loss gradient (f64)
/// against the central difference (L(θ+h) - L(θ-h)) / 2h.
inline GradcheckReport gradcheck(const ModelConfig& cfg, const GradcheckOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  auto params = GateformerParams<float>::initialized(cfg, opts.seed).cast<double>();
  // Non-trivial norm affines and biases so that every path carries gradient.
  auto rng = make_rng(opts.seed, RngStream::kSynthetic, 99);
  for (auto& p : params.all()) {
    const bool zero_init = p.name.ends_with(".bias") || p.name.ends_with(".beta");
    const bool unit_init = p.name.ends_with(".gamma");
    if (zero_init) for (double& v : p.value.data()) v = 0.1 * standard_normal(rng);
    if (unit_init) for (double& v : p.value.data()) v = 1.0 + 0.1 * standard_normal(rng);
  }
  Tensor<double> x({opts.batch, opts.n_variates, cfg.lookback});
  Tensor<double> y({opts.batch, opts.n_variates, cfg.horizon});
  for (double& v : x.data()) v = standard_normal(rng);
  for (double& v : y.data()) v = standard_normal(rng);

  auto loss_at = [&]() {
    Tape<double> tape;
    ModelGraph<double> g(tape, params, cfg, {}, false);
    return mse_loss(g.forward(x), y).value()[0];
  };

  params.zero_grad();
  {
    Tape<double> tape;
    ModelGraph<double> g(tape, params, cfg);
    tape.backward(mse_loss(g.forward(x), y));
  }

  GradcheckReport report;
  std::map<std::string, std::size_t> group_index;
  for (auto& p : params.all()) {
    const std::string group = parameter_group(p.name);
    if (!group_index.count(group)) {
      group_index[group] = report.groups.size();
      GradcheckGroup fresh;
      fresh.group = group;
      report.groups.push_back(fresh);
    }
    GradcheckGroup& gr = report.groups[group_index[group]];
    if (group == opts.corrupt_group && gr.n_params == 0) p.grad[0] = p.grad[0] * 1.5 + 1e-3;
    ++gr.n_params;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + opts.step;
      const double up = loss_at();
      p.value[i] = saved - opts.step;
      const double down = loss_at();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double err = gradcheck_rel_error(p.grad[i], numeric);
      ++gr.n_scalars;
      if (err > gr.max_rel_error) {
        gr.max_rel_error = err;
        gr.worst_param = p.name;
        gr.worst_index = i;
      }
    }
  }
  for (auto& gr : report.groups) {
    gr.pass = gr.max_rel_error < opts.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, gr.max_rel_error);
    report.pass = report.pass && gr.pass;
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace gateformer
