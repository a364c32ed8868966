#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "gateformer/error.hpp"
#include "gateformer/tensor.hpp"

namespace gateformer {

/// Per-row statistics saved by revin_normalize for the matching denormalize.
template <typename T>
struct RevinStats {
  std::vector<T> mean;
  std::vector<T> stdev;  // population standard deviation
  T eps = T{1e-5};

  /// The factor applied on the way back out: stdev + eps.
  T scale(std::size_t row) const { return stdev[row] + eps; }
};

/// Non-affine reversible instance normalization over the last axis: every row
/// (one variate of one window) is centred by its own mean and divided by
/// (stdev + eps). Statistics accumulate in double.
template <typename T>
std::pair<Tensor<T>, RevinStats<T>> revin_normalize(const Tensor<T>& x, T eps = T{1e-5}) {
  const std::size_t len = x.cols();
  if (len < 2) throw ConfigError("revin_normalize needs a look-back of at least 2 points");
  const std::size_t rows = x.rows();
  RevinStats<T> stats;
  stats.eps = eps;
  stats.mean.resize(rows);
  stats.stdev.resize(rows);
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = x.row(r);
    double m = 0.0;
    for (T v : row) m += static_cast<double>(v);
    m /= static_cast<double>(len);
    double var = 0.0;
    for (T v : row) var += (static_cast<double>(v) - m) * (static_cast<double>(v) - m);
    var /= static_cast<double>(len);
    stats.mean[r] = static_cast<T>(m);
    stats.stdev[r] = static_cast<T>(std::sqrt(var));
    const T denom = stats.scale(r);
    auto dst = out.row(r);
    for (std::size_t j = 0; j < len; ++j) dst[j] = (row[j] - stats.mean[r]) / denom;
  }
  return {std::move(out), std::move(stats)};
}

template <typename T>
Tensor<T> revin_denormalize(const Tensor<T>& y, const RevinStats<T>& stats) {
  if (y.rows() != stats.mean.size()) {
    throw ShapeError("revin_denormalize: " + std::to_string(y.rows()) + " rows but stats for " +
                     std::to_string(stats.mean.size()));
  }
  Tensor<T> out(y.shape());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const auto src = y.row(r);
    auto dst = out.row(r);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j] * stats.scale(r) + stats.mean[r];
  }
  return out;
}

}  // namespace gateformer
