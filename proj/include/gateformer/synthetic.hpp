#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "gateformer/data.hpp"
#include "gateformer/error.hpp"
#include "gateformer/rng.hpp"
#include "gateformer/tensor.hpp"

namespace gateformer {

/// One sinusoid a·sin(2π t / period + phase).
struct Sinusoid {
  double amplitude = 1.0;
  double period = 24.0;
  double phase = 0.0;
};

/// Sum-of-sinusoids generator. Each latent variate is its own sinusoids plus an
/// optional AR(1) component; the latents are mixed by `mixing` (identity when
/// empty), then i.i.d. Gaussian noise is added. With `lag_copy`, variate
/// `target` is overwritten by variate `source` delayed by `lag` steps, so its
/// future is readable from another variate's past.
struct SyntheticSpec {
  std::size_t n_variates = 4;
  std::size_t length = 2000;
  std::vector<std::vector<Sinusoid>> components;  // per variate; size must be n_variates
  std::vector<std::vector<double>> mixing;        // n x n, row i = weights of latent j in output i
  double ar_phi = 0.0;
  double ar_sigma = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  struct LagCopy {
    std::size_t source = 1;
    std::size_t target = 0;
    std::size_t lag = 0;  // 0 disables
  } lag_copy;
};

inline RawSeries make_synthetic(const SyntheticSpec& spec) {
  const std::size_t n = spec.n_variates, len = spec.length;
  if (n == 0 || len == 0) throw ConfigError("synthetic series needs n_variates >= 1 and length >= 1");
  if (!spec.components.empty() && spec.components.size() != n) {
    throw ConfigError("synthetic components must list one entry per variate");
  }
  if (!spec.mixing.empty()) {
    if (spec.mixing.size() != n) throw ConfigError("synthetic mixing matrix must be n x n");
    for (const auto& row : spec.mixing) {
      if (row.size() != n) throw ConfigError("synthetic mixing matrix must be n x n");
    }
  }
  if (spec.lag_copy.lag > 0 && (spec.lag_copy.source >= n || spec.lag_copy.target >= n)) {
    throw ConfigError("synthetic lag_copy variate out of range");
  }

  auto ar_rng = make_rng(spec.seed, RngStream::kSynthetic, 0);
  auto noise_rng = make_rng(spec.seed, RngStream::kSynthetic, 1);

  std::vector<double> latent(n * len, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!spec.components.empty()) {
      for (const Sinusoid& s : spec.components[i]) {
        for (std::size_t t = 0; t < len; ++t) {
          latent[i * len + t] +=
              s.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / s.period + s.phase);
        }
      }
    }
    if (spec.ar_sigma > 0.0) {
      double state = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        state = spec.ar_phi * state + spec.ar_sigma * standard_normal(ar_rng);
        latent[i * len + t] += state;
      }
    }
  }

  RawSeries out;
  out.values = Tensor<float>({n, len});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < len; ++t) {
      double v = 0.0;
      if (spec.mixing.empty()) {
        v = latent[i * len + t];
      } else {
        for (std::size_t j = 0; j < n; ++j) v += spec.mixing[i][j] * latent[j * len + t];
      }
      out.values(i, t) = static_cast<float>(v);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < len; ++t) {
      if (spec.noise_sigma > 0.0) out.values(i, t) += static_cast<float>(spec.noise_sigma * standard_normal(noise_rng));
    }
  }
  if (spec.lag_copy.lag > 0) {
    const auto [src, dst, lag] = spec.lag_copy;
    for (std::size_t t = len; t-- > 0;) {
      out.values(dst, t) = t >= lag ? out.values(src, t - lag) : out.values(src, 0);
    }
  }
  for (std::size_t i = 0; i < n; ++i) out.variate_names.push_back("v" + std::to_string(i));
  return out;
}

/// A member of a family of related series: every variate draws two or three
/// sinusoids from a shared set of periods with seed-dependent amplitudes and
/// phases, mixed with a weak random cross-variate matrix. Members with
/// different seeds or variate counts share structure but not values.
inline SyntheticSpec synthetic_family(std::size_t n_variates, std::size_t length, std::uint64_t seed,
                                      double noise_sigma = 0.1) {
  static constexpr double kPeriods[] = {12.0, 24.0, 48.0, 96.0, 168.0};
  SyntheticSpec spec;
  spec.n_variates = n_variates;
  spec.length = length;
  spec.noise_sigma = noise_sigma;
  spec.seed = seed;
  auto rng = make_rng(seed, RngStream::kSynthetic, 2);
  spec.components.resize(n_variates);
  for (auto& comps : spec.components) {
    const std::size_t k = 2 + uniform_index(rng, 2);
    for (std::size_t c = 0; c < k; ++c) {
      Sinusoid s;
      s.period = kPeriods[uniform_index(rng, std::size(kPeriods))];
      s.amplitude = 0.5 + uniform01(rng);
      s.phase = 2.0 * std::numbers::pi * uniform01(rng);
      comps.push_back(s);
    }
  }
  spec.mixing.assign(n_variates, std::vector<double>(n_variates, 0.0));
  for (std::size_t i = 0; i < n_variates; ++i) {
    for (std::size_t j = 0; j < n_variates; ++j) {
      spec.mixing[i][j] = (i == j ? 1.0 : 0.0) + 0.2 * (uniform01(rng) - 0.5) / std::sqrt(double(n_variates));
    }
  }
  return spec;
}

}  // namespace gateformer
