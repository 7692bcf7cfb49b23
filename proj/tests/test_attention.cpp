#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "glgait/attention.hpp"
#include "glgait/flops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace glgait;

namespace glgait {
void PrintTo(AttentionVariant v, std::ostream* os) { *os << variant_name(v); }
}  // namespace glgait
using glgait::test::max_abs_diff;
using glgait::test::random_tensor;
using glgait::test::weighted_sum;
using namespace glgait::oracle;

namespace {

class VariantTest : public ::testing::TestWithParam<AttentionVariant> {};

std::string param_name(const ::testing::TestParamInfo<AttentionVariant>& info) { return variant_name(info.param); }

}  // namespace

TEST_P(VariantTest, MatchesPerTokenOracleOnFiftyInstances) {
  const auto v = GetParam();
  std::mt19937_64 rng(1000 + static_cast<int>(v));
  for (int trial = 0; trial < 50; ++trial) {
    auto in = random_instance(v, rng);
    Tensor x = random_tensor({in.L, in.T, in.cfg.channels}, rng, -2, 2);
    auto w = init_projection(v, in.cfg, rng());
    Tensor got = attention_forward(v, x, in.cfg, w);
    Tensor want = oracle_forward(v, x, in.cfg, w);
    ASSERT_EQ(got.shape(), x.shape());
    EXPECT_LT(max_abs_diff(got, want), 1e-10) << "trial " << trial << " L=" << in.L << " T=" << in.T;
  }
}

TEST_P(VariantTest, AttentionRowsAreStochastic) {
  const auto v = GetParam();
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    auto in = random_instance(v, rng);
    Tensor x = random_tensor({in.L, in.T, in.cfg.channels}, rng, -3, 3, DType::f32);
    auto w = init_projection(v, in.cfg, rng(), DType::f32);
    AttentionTrace trace;
    attention_forward(v, x, in.cfg, w, &trace);
    ASSERT_EQ(trace.attention.size(), in.cfg.heads);
    for (const auto& a : trace.attention) {
      const std::size_t n = a.shape().back();
      for (std::size_t r = 0; r < a.numel() / n; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) {
          EXPECT_GE(a[r * n + j], 0.0);
          s += a[r * n + j];
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST_P(VariantTest, AttentionMatricesMatchOracle) {
  const auto v = GetParam();
  std::mt19937_64 rng(8);
  auto in = random_instance(v, rng);
  Tensor x = random_tensor({in.L, in.T, in.cfg.channels}, rng);
  auto w = init_projection(v, in.cfg, 3);
  AttentionTrace trace;
  attention_forward(v, x, in.cfg, w, &trace);
  std::vector<double> expected_per_head[8];
  for (const auto& g : oracle_groups(v, in.cfg, in.L, in.T)) {
    std::vector<std::vector<Vec>> attn;
    naive_group_attention(x, g, in.cfg, w, &attn);
    for (std::size_t h = 0; h < in.cfg.heads; ++h)
      for (const auto& row : attn[h]) expected_per_head[h].insert(expected_per_head[h].end(), row.begin(), row.end());
  }
  for (std::size_t h = 0; h < in.cfg.heads; ++h) {
    ASSERT_EQ(trace.attention[h].numel(), expected_per_head[h].size());
    for (std::size_t i = 0; i < expected_per_head[h].size(); ++i)
      EXPECT_NEAR(trace.attention[h][i], expected_per_head[h][i], 1e-12);
  }
}

TEST_P(VariantTest, GradientsWrtInputAndWeights) {
  const auto v = GetParam();
  std::mt19937_64 rng(9);
  AttentionConfig cfg{2, 3, 2, 2, 2};
  const std::size_t L = 4, T = 4;
  auto w = init_projection(v, cfg, 5);
  auto f = [&](const std::vector<Var>& in) {
    return weighted_sum(attention_forward(v, in[0], cfg, {in[1], in[2]}, in[3]));
  };
  auto r = grad_check(f, {random_tensor({L, T, cfg.channels}, rng), w.uqkv[0], w.uqkv[1], w.umsa});
  EXPECT_LT(r.max_rel_error, 1e-4) << "input " << r.worst_input << " index " << r.worst_index;
}

TEST_P(VariantTest, PreservesShapeAndIsDeterministic) {
  const auto v = GetParam();
  AttentionConfig cfg{2, 4, 3, 4, 5};
  std::mt19937_64 rng(10);
  Tensor x = random_tensor({8, 6, 5}, rng);
  auto w = init_projection(v, cfg, 11);
  Tensor a = attention_forward(v, x, cfg, w);
  Tensor b = attention_forward(v, x, cfg, w);
  EXPECT_EQ(a.shape(), x.shape());
  EXPECT_TRUE(bit_equal(a, b));
}

TEST_P(VariantTest, WeightsRoundTripThroughContainer) {
  const auto v = GetParam();
  AttentionConfig cfg{3, 2, 2, 2, 3};
  auto w = init_projection(v, cfg, 12, DType::f32);
  TensorContainer c;
  store_weights(c, v, w);
  EXPECT_TRUE(c.contains("attn/" + variant_name(v) + "/head2/Uqkv"));
  EXPECT_TRUE(c.contains("attn/" + variant_name(v) + "/Umsa"));
  std::stringstream buf;
  write_container(buf, c);
  auto back = load_weights(read_container(buf), v, cfg);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(bit_equal(back.uqkv[i], w.uqkv[i]));
  EXPECT_TRUE(bit_equal(back.umsa, w.umsa));
}

INSTANTIATE_TEST_SUITE_P(All, VariantTest,
                         ::testing::Values(AttentionVariant::pgta, AttentionVariant::mhsa,
                                           AttentionVariant::factorised, AttentionVariant::mobilevit),
                         param_name);

TEST(Pgta, PaperGeometryShapes) {
  AttentionConfig cfg{2, 8, 3, 4, 128};
  std::mt19937_64 rng(20);
  Tensor x = random_tensor({176, 30, 128}, rng, -1, 1, DType::f32);
  auto w = init_projection(AttentionVariant::pgta, cfg, 21, DType::f32);
  AttentionTrace trace;
  Tensor y = pgta_forward(x, cfg, w, &trace);
  EXPECT_EQ(y.shape(), (Shape{176, 30, 128}));
  ASSERT_EQ(trace.attention.size(), 2u);
  EXPECT_EQ(trace.attention[0].shape(), (Shape{176, 3, 10, 10}));
}

TEST(Pgta, ConstantInTimeGivesConstantLanes) {
  AttentionConfig cfg{2, 3, 3, 1, 4};
  std::mt19937_64 rng(22);
  Tensor frame = random_tensor({5, 1, 4}, rng);
  std::vector<double> data;
  for (std::size_t l = 0; l < 5; ++l)
    for (std::size_t t = 0; t < 9; ++t)
      for (std::size_t c = 0; c < 4; ++c) data.push_back(frame.at({l, 0, c}));
  Tensor x({5, 9, 4}, data);
  Tensor y = pgta_forward(x, cfg, init_projection(AttentionVariant::pgta, cfg, 23));
  for (std::size_t l = 0; l < 5; ++l)
    for (std::size_t t = 0; t < 9; ++t)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y.at({l, t, c}), y.at({l, t % 3, c}), 1e-12);
}

TEST(Pgta, EquivariantToPatchPermutation) {
  AttentionConfig cfg{2, 3, 2, 1, 3};
  const std::size_t L = 3, T = 10, n = T / 2;
  std::mt19937_64 rng(24);
  Tensor x = random_tensor({L, T, 3}, rng);
  auto w = init_projection(AttentionVariant::pgta, cfg, 25);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto apply = [&](const Tensor& t) {
    std::vector<double> out(t.numel());
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < 2; ++p)
          for (std::size_t c = 0; c < 3; ++c) out[(l * T + perm[i] * 2 + p) * 3 + c] = t.at({l, i * 2 + p, c});
    return Tensor(t.shape(), std::move(out));
  };
  Tensor lhs = pgta_forward(apply(x), cfg, w);
  Tensor rhs = apply(pgta_forward(x, cfg, w));
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(Factorised, ConstantInputGivesIdenticalTokens) {
  AttentionConfig cfg{2, 3, 2, 1, 3};
  Tensor x = Tensor::full({4, 6, 3}, 0.7);
  Tensor y = factorised_temporal_forward(x, cfg, init_projection(AttentionVariant::factorised, cfg, 26));
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(y.at({l, t, c}), y.at({0, t % 2, c}), 1e-12);
  AttentionTrace trace;
  factorised_temporal_forward(x, cfg, init_projection(AttentionVariant::factorised, cfg, 26), &trace);
  EXPECT_EQ(trace.attention[0].shape(), (Shape{4, 3, 3}));
}

TEST(Mhsa, SingleTokenIsValuePathOnly) {
  AttentionConfig cfg{2, 3, 2, 2, 2};
  std::mt19937_64 rng(27);
  Tensor x = random_tensor({2, 2, 2}, rng);
  auto w = init_projection(AttentionVariant::mhsa, cfg, 28);
  AttentionTrace trace;
  Tensor y = mhsa_spatiotemporal_forward(x, cfg, w, &trace);
  EXPECT_EQ(trace.attention[0].shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(trace.attention[0][0], 1.0);
  // token = x flattened in (o, p, c) order, which is x's own layout here
  std::vector<double> merged;
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t d = 0; d < 3; ++d) {
      double s = 0;
      for (std::size_t e = 0; e < 8; ++e) s += x[e] * w.uqkv[h].at({e, 6 + d});
      merged.push_back(s);
    }
  for (std::size_t e = 0; e < 8; ++e) {
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) s += merged[j] * w.umsa.at({j, e});
    EXPECT_NEAR(y[e], s, 1e-12);
  }
}

TEST(Mhsa, AttentionIsNByN) {
  AttentionConfig cfg{1, 2, 3, 4, 2};
  std::mt19937_64 rng(29);
  AttentionTrace trace;
  mhsa_spatiotemporal_forward(random_tensor({8, 6, 2}, rng), cfg, init_projection(AttentionVariant::mhsa, cfg, 30),
                              &trace);
  EXPECT_EQ(trace.attention[0].shape(), (Shape{4, 4}));
}

TEST(MobileVit, SinglePatchDegenerates) {
  // One patch (L = P_l, T = P): every group holds one token, attention is [[1]].
  AttentionConfig cfg{1, 2, 2, 2, 3};
  std::mt19937_64 rng(31);
  AttentionTrace trace;
  mobilevit_attention_forward(random_tensor({2, 2, 3}, rng), cfg,
                              init_projection(AttentionVariant::mobilevit, cfg, 32), &trace);
  EXPECT_EQ(trace.attention[0].shape(), (Shape{2, 2, 1, 1}));
  for (double a : trace.attention[0].data()) EXPECT_DOUBLE_EQ(a, 1.0);
}

TEST(AttentionErrors, Divisibility) {
  AttentionConfig cfg{1, 2, 3, 4, 2};
  std::mt19937_64 rng(33);
  for (auto v : all_variants()) {
    auto w = init_projection(v, cfg, 34);
    EXPECT_THROW(attention_forward(v, random_tensor({8, 7, 2}, rng), cfg, w), DimensionError) << variant_name(v);
  }
  EXPECT_THROW(attention_forward(AttentionVariant::mhsa, random_tensor({6, 6, 2}, rng), cfg,
                                 init_projection(AttentionVariant::mhsa, cfg, 35)),
               DimensionError);
  EXPECT_THROW(attention_forward(AttentionVariant::mobilevit, random_tensor({6, 6, 2}, rng), cfg,
                                 init_projection(AttentionVariant::mobilevit, cfg, 35)),
               DimensionError);
  EXPECT_NO_THROW(pgta_forward(random_tensor({6, 6, 2}, rng), cfg, init_projection(AttentionVariant::pgta, cfg, 35)));
}

TEST(AttentionErrors, NonFiniteOrMisshapenWeights) {
  AttentionConfig cfg{1, 2, 3, 1, 2};
  std::mt19937_64 rng(36);
  Tensor x = random_tensor({2, 6, 2}, rng);
  auto w = init_projection(AttentionVariant::pgta, cfg, 37);
  set_checked_mode(false);
  std::vector<double> bad(w.umsa.data().begin(), w.umsa.data().end());
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  auto nan_w = w;
  nan_w.umsa = Tensor(w.umsa.shape(), bad);
  set_checked_mode(true);
  EXPECT_THROW(pgta_forward(x, cfg, nan_w), ValueError);

  auto short_w = w;
  short_w.uqkv.clear();
  EXPECT_THROW(pgta_forward(x, cfg, short_w), DimensionError);
  EXPECT_THROW(pgta_forward(random_tensor({2, 6, 3}, rng), cfg, w), DimensionError);
  EXPECT_THROW(parse_variant("swin"), ValueError);
}

TEST(AttentionCount, PgtaScoreAndApplyMultiplies) {
  std::mt19937_64 rng(38);
  for (std::size_t heads : {1, 3}) {
    AttentionConfig cfg{heads, 4, 3, 1, 5};
    const std::size_t L = 7, T = 12;
    MultiplyCounter counter;
    pgta_forward(random_tensor({L, T, 5}, rng), cfg, init_projection(AttentionVariant::pgta, cfg, 39));
    EXPECT_EQ(counter.count(), heads * 2 * L * 3 * (T / 3) * (T / 3) * 4);
  }
}

TEST(AttentionCount, NoCounterMeansNoCount) {
  AttentionConfig cfg{1, 2, 2, 1, 2};
  std::mt19937_64 rng(40);
  Tensor x = random_tensor({2, 4, 2}, rng);
  auto w = init_projection(AttentionVariant::pgta, cfg, 41);
  pgta_forward(x, cfg, w);
  MultiplyCounter counter;
  EXPECT_EQ(counter.count(), 0u);
}
