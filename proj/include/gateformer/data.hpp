#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "gateformer/error.hpp"
#include "gateformer/rng.hpp"
#include "gateformer/tensor.hpp"

namespace gateformer {

/// Multivariate series stored variate-major: values is [N, T_total].
struct RawSeries {
  Tensor<float> values;
  std::vector<std::string> variate_names;
  std::vector<std::string> timestamps;  // empty when the file had no date column

  std::size_t n_variates() const { return values.rank() == 2 ? values.dim(0) : 0; }
  std::size_t length() const { return values.rank() == 2 ? values.dim(1) : 0; }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

}  // namespace detail

/// Parses CSV text. The header row is mandatory; a first column named "date"
/// is kept as timestamps and every other cell must be a finite decimal number.
/// Errors name the 1-based data row (header excluded) and 1-based file column.
inline RawSeries parse_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source + ": empty file, header row required");
  const auto header = detail::split_commas(line);
  const bool has_date = !header.empty() && header.front() == "date";
  const std::size_t first = has_date ? 1 : 0;
  if (header.size() <= first) throw ParseError(source + ": header has no value columns");

  RawSeries out;
  for (std::size_t c = first; c < header.size(); ++c) out.variate_names.emplace_back(header[c]);
  const std::size_t n = out.variate_names.size();

  std::vector<float> rows;  // time-major while reading
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size()) {
      throw ParseError(source + ": ragged row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(header.size()));
    }
    if (has_date) out.timestamps.emplace_back(cells[0]);
    for (std::size_t c = first; c < cells.size(); ++c) {
      const std::string_view cell = cells[c];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw ParseError(source + ": non-numeric cell at (" + std::to_string(row) + "," + std::to_string(c + 1) +
                         "): '" + std::string(cell) + "'");
      }
      rows.push_back(static_cast<float>(v));
    }
  }
  if (row == 0) throw ParseError(source + ": no data rows");

  out.values = Tensor<float>({n, row});
  for (std::size_t t = 0; t < row; ++t)
    for (std::size_t i = 0; i < n; ++i) out.values(i, t) = rows[t * n + i];
  return out;
}

inline RawSeries load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return parse_csv(in, path);
}

inline void save_csv(const RawSeries& series, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  const bool has_date = !series.timestamps.empty();
  if (has_date) out << "date";
  for (std::size_t i = 0; i < series.n_variates(); ++i) out << (has_date || i ? "," : "") << series.variate_names[i];
  out << '\n';
  char buf[32];
  for (std::size_t t = 0; t < series.length(); ++t) {
    if (has_date) out << series.timestamps[t];
    for (std::size_t i = 0; i < series.n_variates(); ++i) {
      const auto res = std::to_chars(buf, buf + sizeof buf, series.values(i, t));
      out << (has_date || i ? "," : "") << std::string_view(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

/// Half-open index range [begin, end) into the time axis.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

enum class SplitMode { kRatio, kFixedBorders };

struct SplitSpec {
  SplitMode mode = SplitMode::kRatio;
  std::array<double, 3> ratios{0.7, 0.1, 0.2};
  std::array<std::size_t, 3> borders{};  // exclusive end of train, val, test
  bool lookback_overlap = true;

  /// ETT hourly layout: 12/4/4 months of 30 days.
  static SplitSpec ett_hourly() {
    SplitSpec s;
    s.mode = SplitMode::kFixedBorders;
    s.borders = {12 * 30 * 24, 16 * 30 * 24, 20 * 30 * 24};
    return s;
  }
  /// ETT 15-minute layout.
  static SplitSpec ett_minute() {
    SplitSpec s = ett_hourly();
    for (auto& b : s.borders) b *= 4;
    return s;
  }
};

/// One split: `core` holds the points that belong to it; windows are drawn from
/// `extract`, which reaches back L points into the previous split when
/// lookback overlap is on. Targets always fall inside `core`.
struct Segment {
  IndexRange core;
  IndexRange extract;
};

struct SplitRanges {
  Segment train, val, test;
};

enum class Split { kTrain, kVal, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

/// Closed-form window count for a range of `length` points.
inline std::size_t window_count(std::size_t length, std::size_t lookback, std::size_t horizon, std::size_t stride = 1) {
  if (stride == 0) throw ConfigError("stride must be >= 1");
  if (length < lookback + horizon) return 0;
  return (length - lookback - horizon) / stride + 1;
}

/// Number of look-back start positions in a range, ignoring the horizon
/// (len - L + 1). This is the convention behind the commonly quoted split sizes
/// (8545, 2881, 2881) for ETTh at L = 96; it overcounts trainable windows by F - 1.
inline std::size_t lookback_positions(const IndexRange& r, std::size_t lookback) {
  return r.size() < lookback ? 0 : r.size() - lookback + 1;
}

/// Splits [0, total) chronologically into train < val < test. Ratio mode uses
/// train = floor(r_train·T), test = floor(r_test·T), val = the remainder.
inline SplitRanges chronological_split(std::size_t total, const SplitSpec& spec, std::size_t lookback,
                                       std::size_t horizon) {
  std::array<std::size_t, 3> ends{};
  if (spec.mode == SplitMode::kRatio) {
    double sum = 0.0;
    for (double r : spec.ratios) {
      if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
      sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    const auto n_train = static_cast<std::size_t>(std::floor(spec.ratios[0] * static_cast<double>(total) + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(spec.ratios[2] * static_cast<double>(total) + 1e-9));
    if (n_train + n_test > total) throw ConfigError("split ratios exceed series length");
    ends = {n_train, total - n_test, total};
  } else {
    ends = spec.borders;
    if (!(ends[0] > 0 && ends[0] < ends[1] && ends[1] < ends[2])) {
      throw ConfigError("split borders must be strictly increasing");
    }
    if (ends[2] > total) {
      throw ConfigError("split border " + std::to_string(ends[2]) + " exceeds series length " + std::to_string(total));
    }
  }
  auto make = [&](std::size_t begin, std::size_t end, bool overlap) {
    Segment s;
    s.core = {begin, end};
    s.extract = {overlap ? (begin > lookback ? begin - lookback : 0) : begin, end};
    return s;
  };
  SplitRanges out{make(0, ends[0], false), make(ends[0], ends[1], spec.lookback_overlap),
                  make(ends[1], ends[2], spec.lookback_overlap)};
  for (const auto* seg : {&out.train, &out.val, &out.test}) {
    if (seg->extract.size() < lookback + horizon) {
      throw ConfigError("split segment [" + std::to_string(seg->extract.begin) + "," +
                        std::to_string(seg->extract.end) + ") is shorter than L+F = " +
                        std::to_string(lookback + horizon));
    }
  }
  return out;
}

/// x = series[:, origin, origin+L), y = series[:, origin+L, origin+L+F).
struct Window {
  std::size_t origin = 0;
  std::size_t lookback = 0;
  std::size_t horizon = 0;

  IndexRange input_range() const { return {origin, origin + lookback}; }
  IndexRange target_range() const { return {origin + lookback, origin + lookback + horizon}; }
  friend bool operator==(const Window&, const Window&) = default;
};

inline std::vector<Window> make_windows(const IndexRange& range, std::size_t lookback, std::size_t horizon,
                                        std::size_t stride = 1) {
  if (lookback == 0 || horizon == 0) throw ConfigError("window lookback and horizon must be >= 1");
  const std::size_t n = window_count(range.size(), lookback, horizon, stride);
  std::vector<Window> out;
  out.reserve(n);
  for (std::size_t w = 0; w < n; ++w) out.push_back({range.begin + w * stride, lookback, horizon});
  return out;
}

/// Partitions [0, n) into batches. Shuffled order is a pure function of (seed, epoch).
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, bool shuffle,
                                                          std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    auto rng = make_rng(seed, RngStream::kShuffle, epoch);
    fisher_yates(order, rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

/// Per-variate z-score statistics (population standard deviation).
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stdev;

  static Standardizer fit(const Tensor<float>& values, const IndexRange& range) {
    Standardizer s;
    const std::size_t n = values.dim(0);
    s.mean.resize(n);
    s.stdev.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double m = 0.0;
      for (std::size_t t = range.begin; t < range.end; ++t) m += values(i, t);
      m /= static_cast<double>(range.size());
      double v = 0.0;
      for (std::size_t t = range.begin; t < range.end; ++t) v += (values(i, t) - m) * (values(i, t) - m);
      v /= static_cast<double>(range.size());
      s.mean[i] = m;
      s.stdev[i] = v > 0.0 ? std::sqrt(v) : 1.0;
    }
    return s;
  }

  void apply(Tensor<float>& values) const {
    for (std::size_t i = 0; i < values.dim(0); ++i)
      for (std::size_t t = 0; t < values.dim(1); ++t)
        values(i, t) = static_cast<float>((values(i, t) - mean[i]) / stdev[i]);
  }
};

struct DatasetOptions {
  SplitSpec split;
  bool standardize = true;  // z-score every variate with train-split statistics
};

/// A series bound to (L, F) and a chronological split. When standardization is
/// on, all values (and therefore all metrics) live in the train-fitted z-score space.
class TimeSeriesDataset {
 public:
  TimeSeriesDataset(RawSeries raw, std::size_t lookback, std::size_t horizon, DatasetOptions opts = {})
      : series_(std::move(raw)), lookback_(lookback), horizon_(horizon), opts_(opts) {
    if (series_.n_variates() == 0 || series_.length() == 0) throw ConfigError("dataset is empty");
    splits_ = chronological_split(series_.length(), opts_.split, lookback_, horizon_);
    if (opts_.standardize) {
      standardizer_ = Standardizer::fit(series_.values, splits_.train.core);
      standardizer_.apply(series_.values);
    }
  }

  const RawSeries& series() const noexcept { return series_; }
  const SplitRanges& splits() const noexcept { return splits_; }
  const Standardizer& standardizer() const noexcept { return standardizer_; }
  std::size_t n_variates() const noexcept { return series_.n_variates(); }
  std::size_t lookback() const noexcept { return lookback_; }
  std::size_t horizon() const noexcept { return horizon_; }

  const Segment& segment(Split s) const {
    switch (s) {
      case Split::kTrain: return splits_.train;
      case Split::kVal: return splits_.val;
      case Split::kTest: return splits_.test;
    }
    throw UsageError("unknown split");
  }

  std::vector<Window> windows(Split s) const { return make_windows(segment(s).extract, lookback_, horizon_); }

  /// Copies [origin + offset, origin + offset + len) of the listed variates into dst rows.
  void copy_slab(std::size_t begin, std::size_t len, std::span<const std::size_t> variates, std::span<float> dst) const {
    for (std::size_t r = 0; r < variates.size(); ++r) {
      const auto src = series_.values.row(variates[r]).subspan(begin, len);
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(r * len));
    }
  }

 private:
  RawSeries series_;
  std::size_t lookback_;
  std::size_t horizon_;
  DatasetOptions opts_;
  SplitRanges splits_;
  Standardizer standardizer_;
};

/// A batch gathered from windows: x is [B, n, L], y is [B, n, F].
template <typename T>
struct Batch {
  Tensor<T> x;
  Tensor<T> y;
};

/// Gathers the given windows restricted to `variates` (all variates when empty).
template <typename T>
Batch<T> gather_batch(const TimeSeriesDataset& ds, std::span<const Window> windows,
                      std::span<const std::size_t> variates = {}) {
  std::vector<std::size_t> all;
  if (variates.empty()) {
    all.resize(ds.n_variates());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    variates = all;
  }
  const std::size_t b = windows.size(), n = variates.size(), l = ds.lookback(), f = ds.horizon();
  Batch<T> out{Tensor<T>({b, n, l}), Tensor<T>({b, n, f})};
  std::vector<float> xs(n * l), ys(n * f);
  for (std::size_t w = 0; w < b; ++w) {
    ds.copy_slab(windows[w].input_range().begin, l, variates, xs);
    ds.copy_slab(windows[w].target_range().begin, f, variates, ys);
    std::copy(xs.begin(), xs.end(), out.x.data().begin() + static_cast<std::ptrdiff_t>(w * n * l));
    std::copy(ys.begin(), ys.end(), out.y.data().begin() + static_cast<std::ptrdiff_t>(w * n * f));
  }
  return out;
}

}  // namespace gateformer
