#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_util.hpp"

using namespace gateformer;
using gftest::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.lookback = 32;
  c.horizon = 8;
  c.patch_len = 8;
  c.d_model = 16;
  c.n_heads = 4;
  return c;
}

void set_all(GateformerParams<double>& p, const std::string& prefix, double v) {
  for (auto& param : p.all())
    if (param.name.rfind(prefix, 0) == 0) param.value.fill(v);
}

Tensor<double> permute_rows(const Tensor<double>& x, const std::vector<std::size_t>& perm) {
  // x is [1, N, C]; row i of the result is row perm[i] of x.
  Tensor<double> out(x.shape());
  const std::size_t c = x.cols();
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy_n(&x[perm[i] * c], c, &out[i * c]);
  return out;
}

}  // namespace

// ---- config & layout --------------------------------------------------------

TEST(ModelConfig, Validation) {
  ModelConfig c = small_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.patch_len = 33;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.use_temporal_attn = c.use_global_embed = false;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(small_config().ffn_dim(), 32u);
}

TEST(ModelConfig, KeyValueRoundTrip) {
  ModelConfig c = small_config();
  c.dropout = 0.125;
  c.use_variate_gate = false;
  KeyValues kv;
  c.to_kv(kv);
  EXPECT_EQ(ModelConfig::from_kv(kv), c);
}

TEST(Params, LayoutIsAPureFunctionOfConfig) {
  const ModelConfig c = small_config();
  const auto a = GateformerParams<float>::initialized(c, 1);
  const auto b = GateformerParams<float>::initialized(c, 1);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.size(), parameter_layout(c).size());
  // Forward accepts any N with the same parameters.
  auto p = a;
  for (std::size_t n : {1u, 2u, 5u, 11u}) {
    const auto y = predict(p, c, random_tensor<float>({n, c.lookback}, n));
    EXPECT_EQ(y.shape(), (Shape{n, c.horizon}));
  }
}

TEST(Params, DisabledPathsHaveNoParameters) {
  ModelConfig c = small_config();
  c.use_temporal_attn = false;
  GateformerParams<float> p(c);
  for (const auto& param : p.all()) {
    EXPECT_NE(param.name.rfind("patch.", 0), 0u) << param.name;
    EXPECT_NE(param.name.rfind("temporal.", 0), 0u) << param.name;
    EXPECT_NE(param.name.rfind("fusion.", 0), 0u) << param.name;
  }
  c = small_config();
  c.use_variate_gate = false;
  EXPECT_FALSE(GateformerParams<float>(c).contains("variate_gate.w_attn"));
}

TEST(Params, GlorotLimitsAndZeroBiases) {
  const ModelConfig c = small_config();
  const auto p = GateformerParams<float>::initialized(c, 3);
  const double limit = std::sqrt(6.0 / (16 + 32));
  for (float v : p["temporal.0.ffn.1.weight"].value.data()) EXPECT_LE(std::abs(v), limit);
  for (float v : p["head.bias"].value.data()) EXPECT_EQ(v, 0.0f);
  for (float v : p["variate.norm.gamma"].value.data()) EXPECT_EQ(v, 1.0f);
}

// ---- patch embedding --------------------------------------------------------

TEST(PatchEmbed, PatchCounts) {
  ModelConfig c;
  EXPECT_EQ(c.n_patches(), 6u);
  c.lookback = 100;
  EXPECT_EQ(c.n_patches(), 7u);
}

TEST(PatchEmbed, TailIsPaddedByReplicatingLastValue) {
  Tensor<float> x({1, 100});
  for (std::size_t t = 0; t < 100; ++t) x[t] = static_cast<float>(t);
  const auto patches = ModelGraph<float>::make_patches(x, 16);
  ASSERT_EQ(patches.shape(), (Shape{1, 7, 16}));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(patches[6 * 16 + j], 96.0f + j);
  for (std::size_t j = 4; j < 16; ++j) EXPECT_EQ(patches[6 * 16 + j], 99.0f);  // 12 replicated pad values
}

TEST(PatchEmbed, PatchLongerThanLookbackIsConfigError) {
  EXPECT_THROW(ModelGraph<float>::make_patches(Tensor<float>({1, 8}), 9), ConfigError);
}

TEST(PatchEmbed, ZeroInputWithZeroPositionsGivesProjectionBias) {
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 4).cast<double>();
  set_all(p, "patch.pos", 0.0);
  auto rng = make_rng(1, RngStream::kSynthetic);
  for (double& v : p["patch.proj.bias"].value.data()) v = standard_normal(rng);
  Tape<double> t;
  ModelGraph<double> g(t, p, c, {}, false);
  const auto tokens = g.patch_embed(Tensor<double>({2, c.lookback})).value();
  ASSERT_EQ(tokens.shape(), (Shape{2, 4, 16}));
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(tokens[r * 16 + j], p["patch.proj.bias"].value[j]);
}

// ---- temporal encoding ------------------------------------------------------

TEST(TemporalEncode, SinglePatchAttentionIsExactlyOne) {
  ModelConfig c = small_config();
  c.patch_len = c.lookback;  // P = 1
  auto p = GateformerParams<float>::initialized(c, 5).cast<double>();
  ForwardTrace<double> trace;
  predict(p, c, random_tensor({3, c.lookback}, 6), &trace);
  bool saw = false;
  for (const auto& rec : trace.attention) {
    if (rec.stage != "temporal") continue;
    saw = true;
    for (double v : rec.probs.data()) EXPECT_EQ(v, 1.0);
  }
  EXPECT_TRUE(saw);
}

TEST(TemporalEncode, OutputWidthIsDModelForAnyPatchCount) {
  for (std::size_t patches = 1; patches <= 12; ++patches) {
    ModelConfig c = small_config();
    c.patch_len = 4;
    c.lookback = 4 * patches;
    if (c.lookback < 2) continue;
    auto p = GateformerParams<float>::initialized(c, patches).cast<double>();
    Tape<double> t;
    ModelGraph<double> g(t, p, c, {}, false);
    const auto v = g.temporal_encode(g.patch_embed(random_tensor({2, c.lookback}, patches))).value();
    EXPECT_EQ(v.shape(), (Shape{2, 16})) << patches;
  }
}

TEST(Attention, EveryRowSumsToOneAtEveryLayer) {
  ModelConfig c = small_config();
  c.n_temporal_blocks = 2;
  c.n_variate_blocks = 3;
  auto p = GateformerParams<float>::initialized(c, 7);
  ForwardTrace<float> trace;
  predict(p, c, random_tensor<float>({2, 5, c.lookback}, 8, 3.0), &trace);
  EXPECT_EQ(trace.attention.size(), 5u);
  for (const auto& rec : trace.attention) {
    const std::size_t keys = rec.probs.cols();
    for (std::size_t r = 0; r < rec.probs.rows(); ++r) {
      double s = 0;
      for (std::size_t j = 0; j < keys; ++j) s += rec.probs[r * keys + j];
      EXPECT_NEAR(s, 1.0, 1e-6) << rec.stage;
    }
  }
}

// ---- global embedding -------------------------------------------------------

TEST(GlobalEmbed, IdenticalSeriesGiveIdenticalEmbeddings) {
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 9).cast<double>();
  Tensor<double> x = random_tensor({3, c.lookback}, 10);
  std::copy_n(&x[0], c.lookback, &x[2 * c.lookback]);
  Tape<double> t;
  ModelGraph<double> g(t, p, c, {}, false);
  const auto v = g.global_embed(t.constant(x)).value();
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(v[j], v[2 * 16 + j]);
}

TEST(GlobalEmbed, ZeroInputIsBiasComposition) {
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 11).cast<double>();
  auto rng = make_rng(2, RngStream::kSynthetic);
  for (double& v : p["global.1.bias"].value.data()) v = standard_normal(rng);
  for (double& v : p["global.2.bias"].value.data()) v = standard_normal(rng);
  Tape<double> t;
  ModelGraph<double> g(t, p, c, {}, false);
  const auto v = g.global_embed(t.constant(Tensor<double>({1, c.lookback}))).value();
  // Oracle: gelu(b1) · W2 + b2, written out.
  const auto& b1 = p["global.1.bias"].value;
  const auto& w2 = p["global.2.weight"].value;
  const auto& b2 = p["global.2.bias"].value;
  for (std::size_t j = 0; j < 16; ++j) {
    double s = b2[j];
    for (std::size_t k = 0; k < 16; ++k) {
      const double h = 0.5 * b1[k] * (1.0 + std::erf(b1[k] / std::sqrt(2.0)));
      s += h * w2(k, j);
    }
    EXPECT_NEAR(v[j], s, 1e-12);
  }
}

// ---- gated fusion -----------------------------------------------------------

TEST(GatedFuse, EqualInputsPassThroughExactly) {
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 12).cast<double>();
  Tape<double> t;
  ModelGraph<double> g(t, p, c, {}, false);
  const auto v = random_tensor({4, 16}, 13);
  EXPECT_EQ(g.gated_fuse(t.constant(v), t.constant(v)).value(), v);
}

TEST(GatedFuse, ZeroPreActivationAveragesInputs) {
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 14).cast<double>();
  set_all(p, "fusion.", 0.0);
  Tape<double> t;
  ModelGraph<double> g(t, p, c, {}, false);
  const auto a = random_tensor({3, 16}, 15), b = random_tensor({3, 16}, 16);
  const auto s = g.gated_fuse(t.constant(a), t.constant(b)).value();
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], 0.5 * (a[i] + b[i]), 1e-12);
}

TEST(GatedFuse, GatesInOpenIntervalAndOutputBetweenInputs) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelConfig c = small_config();
    auto p = GateformerParams<float>::initialized(c, seed);
    ForwardTrace<float> trace;
    predict(p, c, random_tensor<float>({2, 6, c.lookback}, seed + 20, 2.0), &trace);
    for (const Tensor<float>* gate : {&trace.fusion_gate, &trace.variate_gate})
      for (float v : gate->data()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
      }
    for (std::size_t i = 0; i < trace.fused.size(); ++i) {
      const float lo = std::min(trace.temporal_embedding[i], trace.global_embedding[i]);
      const float hi = std::max(trace.temporal_embedding[i], trace.global_embedding[i]);
      const float slack = 1e-6f * std::max({std::abs(lo), std::abs(hi), 1.0f});  // one rounding step
      EXPECT_GE(trace.fused[i], lo - slack);
      EXPECT_LE(trace.fused[i], hi + slack);
    }
  }
}

// ---- variate encoding -------------------------------------------------------

TEST(VariateEncode, SingleVariateAttentionIsExactlyOne) {
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 21).cast<double>();
  ForwardTrace<double> trace;
  const auto y = predict(p, c, random_tensor({1, c.lookback}, 22), &trace);
  EXPECT_EQ(y.shape(), (Shape{1, 8}));
  for (const auto& rec : trace.attention) {
    if (rec.stage != "variate") continue;
    for (double v : rec.probs.data()) EXPECT_EQ(v, 1.0);
  }
}

TEST(VariateEncode, DisabledIsIdentityAndUngatedIsResidualSum) {
  ModelConfig c = small_config();
  c.use_variate_attn = false;
  auto p = GateformerParams<float>::initialized(c, 23).cast<double>();
  {
    Tape<double> t;
    ModelGraph<double> g(t, p, c, {}, false);
    const auto s = random_tensor({1, 4, 16}, 24);
    EXPECT_EQ(g.variate_encode(t.constant(s)).value(), s);
  }
  c = small_config();
  c.use_variate_gate = false;
  auto q = GateformerParams<float>::initialized(c, 25).cast<double>();
  Tape<double> t;
  ModelGraph<double> g(t, q, c, {}, false);
  const auto s = random_tensor({1, 4, 16}, 26);
  Var<double> sv = t.constant(s);
  Var<double> a = g.encoder_block(sv, "variate.0", true, "variate");
  a = layer_norm(a, g.p("variate.norm.gamma"), g.p("variate.norm.beta"), 1e-5);
  const Tensor<double> expected = add(a, sv).value();
  const Tensor<double> got = g.variate_encode(sv).value();
  EXPECT_EQ(got, expected);
}

TEST(VariateEncode, PermutingRowsPermutesOutputBitwise) {
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 27).cast<double>();
  const auto s = random_tensor({1, 7, 16}, 28);
  const std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  Tape<double> t;
  ModelGraph<double> g(t, p, c, {}, false);
  const auto o = g.variate_encode(t.constant(s)).value();
  const auto op = g.variate_encode(t.constant(permute_rows(s, perm))).value();
  EXPECT_EQ(op, permute_rows(o, perm));
}

// ---- projection -------------------------------------------------------------

TEST(Project, ZeroInputGivesHeadBiasAndRowsAreShared) {
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 29).cast<double>();
  auto rng = make_rng(3, RngStream::kSynthetic);
  for (double& v : p["head.bias"].value.data()) v = standard_normal(rng);
  Tape<double> t;
  ModelGraph<double> g(t, p, c, {}, false);
  const auto y = g.project(t.constant(Tensor<double>({1, 3, 16}))).value();
  ASSERT_EQ(y.shape(), (Shape{1, 3, 8}));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(y[r * 8 + j], p["head.bias"].value[j]);
  Tensor<double> same({1, 2, 16});
  const auto row = random_tensor({16}, 30);
  std::copy_n(&row[0], 16, &same[0]);
  std::copy_n(&row[0], 16, &same[16]);
  const auto z = g.project(t.constant(same)).value();
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(z[j], z[8 + j]);
}

// ---- forward ----------------------------------------------------------------

TEST(Forward, OutputShapeAndLookbackCheck) {
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 31);
  EXPECT_EQ(predict(p, c, random_tensor<float>({4, 3, c.lookback}, 32)).shape(), (Shape{4, 3, 8}));
  EXPECT_THROW(predict(p, c, Tensor<float>({3, c.lookback + 1})), ShapeError);
}

TEST(Forward, VariatePermutationEquivarianceIsBitwise) {
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 33).cast<double>();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = random_tensor({1, 6, c.lookback}, 34 + seed, 2.0);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    auto rng = make_rng(seed, RngStream::kShuffle);
    fisher_yates(perm, rng);
    const auto y = predict(p, c, x), yp = predict(p, c, permute_rows(x, perm));
    EXPECT_EQ(yp, permute_rows(y, perm));
  }
}

TEST(Forward, PermutationEquivarianceInFloatToo) {
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 35);
  const auto x = random_tensor<float>({1, 5, c.lookback}, 36);
  Tensor<float> xp(x.shape());
  const std::vector<std::size_t> perm{4, 2, 0, 3, 1};
  for (std::size_t i = 0; i < 5; ++i) std::copy_n(&x[perm[i] * c.lookback], c.lookback, &xp[i * c.lookback]);
  const auto y = predict(p, c, x), yp = predict(p, c, xp);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t t = 0; t < 8; ++t) EXPECT_EQ(yp[i * 8 + t], y[perm[i] * 8 + t]);
}

TEST(Forward, ChannelIndependenceWithoutVariateAttention) {
  ModelConfig c = small_config();
  c.use_variate_attn = false;
  auto p = GateformerParams<float>::initialized(c, 37);
  const auto x = random_tensor<float>({1, 4, c.lookback}, 38);
  Tensor<float> x2 = x;
  for (std::size_t t = 0; t < c.lookback; ++t) x2[2 * c.lookback + t] += 5.0f * std::sin(0.3f * t);
  const auto y = predict(p, c, x), y2 = predict(p, c, x2);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t t = 0; t < 8; ++t) {
      if (i == 2) continue;
      EXPECT_EQ(y[i * 8 + t], y2[i * 8 + t]);
    }
  bool changed = false;
  for (std::size_t t = 0; t < 8; ++t) changed = changed || y[16 + t] != y2[16 + t];
  EXPECT_TRUE(changed);
}

TEST(Forward, WithVariateAttentionOtherRowsDoRespond) {
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 39);
  const auto x = random_tensor<float>({1, 4, c.lookback}, 40);
  Tensor<float> x2 = x;
  for (std::size_t t = 0; t < c.lookback; ++t) x2[2 * c.lookback + t] += 5.0f * std::sin(0.3f * t);
  EXPECT_NE(predict(p, c, x)[0], predict(p, c, x2)[0]);
}

TEST(Forward, DeNormalizationUsesWindowStatistics) {
  // Shifting and scaling the input window shifts and scales the forecast.
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 41).cast<double>();
  const auto x = random_tensor({3, c.lookback}, 42, 5.0);
  Tensor<double> x2 = x;
  for (double& v : x2.data()) v = 100.0 * v + 7.0;
  const auto y = predict(p, c, x), y2 = predict(p, c, x2);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y2[i], 100.0 * y[i] + 7.0, 1e-5 * std::abs(100.0 * y[i]) + 1e-3);
}

TEST(Ablation, NoTemporalAttentionNeverRunsPatchPath) {
  ModelConfig c = small_config();
  c.use_temporal_attn = false;
  auto p = GateformerParams<float>::initialized(c, 43);
  ForwardTrace<float> trace;
  predict(p, c, random_tensor<float>({3, c.lookback}, 44), &trace);
  for (const auto& rec : trace.attention) EXPECT_EQ(rec.stage, "variate");
  EXPECT_EQ(trace.temporal_embedding.size(), 0u);
  EXPECT_EQ(trace.fused, trace.global_embedding);
}

TEST(Ablation, NoGlobalEmbeddingFusedEqualsTemporal) {
  ModelConfig c = small_config();
  c.use_global_embed = false;
  auto p = GateformerParams<float>::initialized(c, 45);
  ForwardTrace<float> trace;
  predict(p, c, random_tensor<float>({2, 3, c.lookback}, 46), &trace);
  EXPECT_EQ(trace.fused, trace.temporal_embedding);
  EXPECT_EQ(trace.fusion_gate.size(), 0u);
}

TEST(Ablation, FusionOfEqualEmbeddingsReturnsThem) {
  // Drive both paths to the same embedding by zeroing their output layers'
  // weights and giving them the same bias.
  const ModelConfig c = small_config();
  auto p = GateformerParams<float>::initialized(c, 47).cast<double>();
  set_all(p, "temporal.head.2.weight", 0.0);
  set_all(p, "global.2.weight", 0.0);
  auto rng = make_rng(4, RngStream::kSynthetic);
  for (std::size_t j = 0; j < 16; ++j) p["temporal.head.2.bias"].value[j] = p["global.2.bias"].value[j] = standard_normal(rng);
  ForwardTrace<double> trace;
  predict(p, c, random_tensor({3, c.lookback}, 48), &trace);
  EXPECT_EQ(trace.temporal_embedding, trace.global_embedding);
  EXPECT_EQ(trace.fused, trace.temporal_embedding);
}

TEST(Forward, FullModelGradientMatchesFiniteDifferences) {
  const GradcheckReport r = gradcheck(tiny_gradcheck_config());
  EXPECT_TRUE(r.pass);
  EXPECT_LT(r.max_rel_error, 1e-4);
  std::vector<std::string> groups;
  for (const auto& g : r.groups) groups.push_back(g.group);
  EXPECT_EQ(groups, (std::vector<std::string>{"patch_embed", "temporal_attention", "temporal_head", "global_mlp",
                                              "fusion_gate", "variate_attention", "variate_gate", "projection"}));
}

TEST(Forward, GradcheckDetectsCorruptedGradient) {
  GradcheckOptions o;
  o.corrupt_group = "fusion_gate";
  const GradcheckReport r = gradcheck(tiny_gradcheck_config(), o);
  EXPECT_FALSE(r.pass);
  for (const auto& g : r.groups) EXPECT_EQ(g.pass, g.group != "fusion_gate") << g.group;
}

TEST(Forward, DropoutOnlyActsInTraining) {
  ModelConfig c = small_config();
  c.dropout = 0.5;
  auto p = GateformerParams<float>::initialized(c, 49);
  const auto x = random_tensor<float>({2, 3, c.lookback}, 50);
  EXPECT_EQ(predict(p, c, x), predict(p, c, x));
  auto rng = make_rng(1, RngStream::kDropout);
  Tape<float> t;
  ForwardOptions<float> fo;
  fo.training = true;
  fo.rng = &rng;
  ModelGraph<float> g(t, p, c, fo);
  EXPECT_NE(g.forward(x).value(), predict(p, c, x));
}
