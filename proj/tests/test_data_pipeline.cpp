#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "test_util.hpp"

using namespace gateformer;

namespace {

RawSeries parse(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in, "mem");
}

std::string parse_error(const std::string& text) {
  try {
    parse(text);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

RawSeries ramp(std::size_t n, std::size_t len) {
  RawSeries r;
  r.values = Tensor<float>({n, len});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < len; ++t) r.values(i, t) = static_cast<float>(1000 * i + t);
  for (std::size_t i = 0; i < n; ++i) r.variate_names.push_back("c" + std::to_string(i));
  return r;
}

// Brute force: every origin whose input and target fit inside [begin, end), stepping by stride.
std::size_t enumerate_windows(std::size_t len, std::size_t l, std::size_t f, std::size_t stride) {
  std::size_t n = 0;
  for (std::size_t o = 0; o + l + f <= len; o += stride) ++n;
  return n;
}

}  // namespace

// ---- CSV --------------------------------------------------------------------

TEST(LoadCsv, DateColumnBecomesTimestamps) {
  const RawSeries r = parse("date,a,b\nd1,1,2\nd2,3,4\nd3,5,6\n");
  EXPECT_EQ(r.n_variates(), 2u);
  EXPECT_EQ(r.length(), 3u);
  EXPECT_EQ(r.timestamps, (std::vector<std::string>{"d1", "d2", "d3"}));
  EXPECT_EQ(r.variate_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(r.values(1, 2), 6.0f);  // column b, third row
}

TEST(LoadCsv, WithoutDateColumnEveryColumnIsAVariate) {
  const RawSeries r = parse("x,y,z\n1,2,3\n");
  EXPECT_EQ(r.n_variates(), 3u);
  EXPECT_TRUE(r.timestamps.empty());
}

TEST(LoadCsv, NonNumericCellNamesRowAndColumn) {
  const std::string msg = parse_error("date,a,b\nd,1,2\nd,1,2\nd,1,2\nd,1,2\nd,oops,2\n");
  EXPECT_NE(msg.find("(5,2)"), std::string::npos) << msg;
}

TEST(LoadCsv, MissingValueIsAnError) { EXPECT_NE(parse_error("a,b\n1,\n"), ""); }

TEST(LoadCsv, RaggedRowIsAnError) {
  const std::string msg = parse_error("a,b\n1,2\n3\n");
  EXPECT_NE(msg.find("ragged"), std::string::npos) << msg;
}

TEST(LoadCsv, EmptyInputIsAnError) {
  EXPECT_NE(parse_error(""), "");
  EXPECT_NE(parse_error("a,b\n"), "");
}

TEST(LoadCsv, MissingFileIsIoError) { EXPECT_THROW(load_csv("/nonexistent/file.csv"), IoError); }

TEST(LoadCsv, SaveLoadRoundTrip) {
  RawSeries r = ramp(3, 20);
  r.values(1, 4) = 0.1f;
  const auto path = std::filesystem::temp_directory_path() / "gf_roundtrip.csv";
  save_csv(r, path.string());
  const RawSeries back = load_csv(path.string());
  EXPECT_EQ(back.values, r.values);
  EXPECT_EQ(back.variate_names, r.variate_names);
}

TEST(LoadCsv, Etth1HasSevenVariates) {
  const std::string path = std::string(GATEFORMER_DATA_DIR) + "/ETTh1.csv";
  if (!std::filesystem::exists(path)) GTEST_SKIP() << "data/ETTh1.csv not present";
  const RawSeries r = load_csv(path);
  EXPECT_EQ(r.n_variates(), 7u);
  EXPECT_EQ(r.length(), 17420u);
}

// ---- split ------------------------------------------------------------------

TEST(Split, RatioSeventyTenTwenty) {
  const SplitRanges s = chronological_split(100, SplitSpec{}, 2, 2);
  EXPECT_EQ(s.train.core, (IndexRange{0, 70}));
  EXPECT_EQ(s.val.core, (IndexRange{70, 80}));
  EXPECT_EQ(s.test.core, (IndexRange{80, 100}));
}

TEST(Split, OverlapExtendsBackwardByLookback) {
  SplitSpec spec;
  spec.ratios = {0.5, 0.25, 0.25};
  const SplitRanges s = chronological_split(400, spec, 96, 4);
  EXPECT_EQ(s.val.extract.begin, 200u - 96u);
  EXPECT_EQ(s.test.extract.begin, 300u - 96u);
  // A 10-point val segment is usable only through the overlap.
  SplitSpec wide;
  wide.mode = SplitMode::kFixedBorders;
  wide.borders = {100, 110, 300};
  const SplitRanges w = chronological_split(300, wide, 96, 4);
  EXPECT_EQ(w.val.extract.begin, 4u);
  EXPECT_EQ(make_windows(w.val.extract, 96, 4).size(), 7u);  // targets fill the 10-point core
  EXPECT_EQ(w.train.extract, w.train.core);
}

TEST(Split, OverlapOffKeepsSegmentsDisjoint) {
  SplitSpec spec;
  spec.lookback_overlap = false;
  const SplitRanges s = chronological_split(1000, spec, 24, 12);
  EXPECT_EQ(s.val.extract, s.val.core);
  EXPECT_EQ(s.test.extract, s.test.core);
}

TEST(Split, SegmentShorterThanWindowIsConfigError) {
  EXPECT_THROW(chronological_split(100, SplitSpec{}, 30, 20), ConfigError);  // val extract [40, 80) < 50
  SplitSpec no_overlap;
  no_overlap.lookback_overlap = false;
  EXPECT_THROW(chronological_split(100, no_overlap, 8, 4), ConfigError);  // val core has 10 points < 12
}

TEST(Split, BadSpecsAreConfigErrors) {
  SplitSpec s;
  s.ratios = {0.7, 0.4, 0.2};
  EXPECT_THROW(chronological_split(1000, s, 4, 4), ConfigError);
  s.ratios = {0.8, 0.0, 0.2};
  EXPECT_THROW(chronological_split(1000, s, 4, 4), ConfigError);
  SplitSpec b;
  b.mode = SplitMode::kFixedBorders;
  b.borders = {500, 400, 900};
  EXPECT_THROW(chronological_split(1000, b, 4, 4), ConfigError);
  b.borders = {100, 400, 1200};
  EXPECT_THROW(chronological_split(1000, b, 4, 4), ConfigError);
}

TEST(Split, EttHourlyReproducesQuotedCountsWithLookbackPositions) {
  // Commonly quoted (train, val, test) sizes for ETTh at L = 96 are 8545/2881/2881.
  // They count look-back start positions (len - L + 1); full (L, F) windows
  // at F = 96 number 95 fewer per split.
  const SplitRanges s = chronological_split(17420, SplitSpec::ett_hourly(), 96, 96);
  EXPECT_EQ(lookback_positions(s.train.extract, 96), 8545u);
  EXPECT_EQ(lookback_positions(s.val.extract, 96), 2881u);
  EXPECT_EQ(lookback_positions(s.test.extract, 96), 2881u);
  EXPECT_EQ(window_count(s.train.extract.size(), 96, 96), 8449u);
  EXPECT_EQ(window_count(s.val.extract.size(), 96, 96), 2785u);
}

TEST(Split, EttMinuteBordersAreFourTimesHourly) {
  const SplitSpec m = SplitSpec::ett_minute();
  EXPECT_EQ(m.borders, (std::array<std::size_t, 3>{34560, 46080, 57600}));
}

// ---- windows ----------------------------------------------------------------

TEST(Windows, ClosedFormExamples) {
  EXPECT_EQ(make_windows({0, 100}, 96, 4).size(), 1u);
  EXPECT_EQ(make_windows({0, 192}, 96, 96).size(), 1u);
  EXPECT_EQ(make_windows({0, 200}, 96, 96).size(), 9u);
  EXPECT_EQ(make_windows({0, 191}, 96, 96).size(), 0u);
}

TEST(Windows, CountMatchesBruteForceEnumerator) {
  auto rng = make_rng(77, RngStream::kSynthetic);
  for (int c = 0; c < 200; ++c) {
    const std::size_t len = uniform_index(rng, 400), l = 1 + uniform_index(rng, 60), f = 1 + uniform_index(rng, 60),
                      stride = 1 + uniform_index(rng, 7);
    EXPECT_EQ(window_count(len, l, f, stride), enumerate_windows(len, l, f, stride))
        << len << " " << l << " " << f << " " << stride;
  }
}

TEST(Windows, XImmediatelyPrecedesY) {
  for (const Window& w : make_windows({10, 60}, 8, 5, 3)) {
    EXPECT_EQ(w.input_range().end, w.target_range().begin);
    EXPECT_GE(w.input_range().begin, 10u);
    EXPECT_LE(w.target_range().end, 60u);
  }
}

TEST(Windows, ConcatenationReproducesRawSlice) {
  DatasetOptions opts;
  opts.standardize = false;
  const TimeSeriesDataset ds(ramp(3, 300), 12, 6, opts);
  const auto windows = ds.windows(Split::kVal);
  const Batch<float> b = gather_batch<float>(ds, windows);
  for (std::size_t w = 0; w < windows.size(); ++w)
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t t = 0; t < 12; ++t)
        EXPECT_EQ(b.x[(w * 3 + i) * 12 + t], ds.series().values(i, windows[w].origin + t));
      for (std::size_t t = 0; t < 6; ++t)
        EXPECT_EQ(b.y[(w * 3 + i) * 6 + t], ds.series().values(i, windows[w].origin + 12 + t));
    }
}

TEST(Windows, NoTargetLeavesItsSegment) {
  const TimeSeriesDataset ds(ramp(2, 1000), 48, 24);
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    const Segment& seg = ds.segment(s);
    for (const Window& w : ds.windows(s)) {
      EXPECT_GE(w.target_range().begin, seg.core.begin);
      EXPECT_LE(w.target_range().end, seg.core.end);
      EXPECT_GE(w.input_range().begin, seg.extract.begin);
    }
  }
  // Train inputs never reach into val; train targets end before val begins.
  for (const Window& w : ds.windows(Split::kTrain)) EXPECT_LE(w.target_range().end, ds.segment(Split::kVal).core.begin);
}

// ---- batches ----------------------------------------------------------------

TEST(Batches, SizesAndCoverage) {
  const auto b = make_batches(10, 8, true, 1, 0);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].size(), 8u);
  EXPECT_EQ(b[1].size(), 2u);
}

TEST(Batches, ShuffleIsPureFunctionOfSeedAndEpoch) {
  EXPECT_EQ(make_batches(50, 8, true, 3, 2), make_batches(50, 8, true, 3, 2));
  EXPECT_NE(make_batches(50, 8, true, 3, 2), make_batches(50, 8, true, 3, 3));
  EXPECT_NE(make_batches(50, 8, true, 3, 2), make_batches(50, 8, true, 4, 2));
}

TEST(Batches, NoShuffleKeepsChronologicalOrder) {
  std::size_t expect = 0;
  for (const auto& batch : make_batches(23, 5, false, 9, 0))
    for (std::size_t i : batch) EXPECT_EQ(i, expect++);
  EXPECT_EQ(expect, 23u);
}

TEST(Batches, EpochMultisetIndependentOfShuffle) {
  for (std::uint64_t epoch = 0; epoch < 5; ++epoch) {
    std::multiset<std::size_t> a, b;
    for (const auto& batch : make_batches(37, 4, true, 11, epoch)) a.insert(batch.begin(), batch.end());
    for (const auto& batch : make_batches(37, 4, false, 11, epoch)) b.insert(batch.begin(), batch.end());
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.size(), 37u);
    EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 37u);
  }
}

TEST(Batches, ZeroBatchSizeIsConfigError) { EXPECT_THROW(make_batches(4, 0, false, 0, 0), ConfigError); }

// ---- standardization --------------------------------------------------------

TEST(Standardize, TrainSegmentHasZeroMeanUnitVariance) {
  const TimeSeriesDataset ds(make_synthetic(synthetic_family(3, 1000, 5)), 24, 12);
  const IndexRange train = ds.segment(Split::kTrain).core;
  for (std::size_t i = 0; i < 3; ++i) {
    double m = 0, v = 0;
    for (std::size_t t = train.begin; t < train.end; ++t) m += ds.series().values(i, t);
    m /= train.size();
    for (std::size_t t = train.begin; t < train.end; ++t) v += std::pow(ds.series().values(i, t) - m, 2);
    v /= train.size();
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}
