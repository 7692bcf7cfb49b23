#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "glgait/autodiff.hpp"
#include "test_util.hpp"

using namespace glgait;
using glgait::test::random_away_from_zero;
using glgait::test::random_tensor;
using glgait::test::weighted_sum;

TEST(Backward, SumOfSquares) {
  std::mt19937_64 rng(1);
  Tensor xv = random_tensor({3, 4}, rng);
  Var x = parameter(xv);
  auto g = backward(sum(mul(x, x)))[x];
  for (std::size_t i = 0; i < xv.numel(); ++i) EXPECT_DOUBLE_EQ(g[i], 2.0 * xv[i]);
}

TEST(Backward, DisconnectedLeafGetsZeros) {
  Var x = parameter(Tensor({2}, {1, 2}));
  Var unused = parameter(Tensor({3}, {4, 5, 6}));
  auto grads = backward(sum(x));
  EXPECT_FALSE(grads.contains(unused));
  EXPECT_TRUE(bit_equal(grads[unused], Tensor::zeros({3})));
}

TEST(Backward, NonScalarOutputThrows) {
  Var x = parameter(Tensor({2}, {1, 2}));
  EXPECT_THROW(backward(scale(x, 2.0)), DimensionError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Var x = parameter(Tensor({1}, {3.0}));
  Var y = mul(x, x);
  auto g = backward(sum(add(y, y)))[x];
  EXPECT_DOUBLE_EQ(g[0], 12.0);
}

TEST(Backward, QuadraticFormMatchesAnalyticGradient) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = random_tensor({5, 5}, rng);
    Tensor xv = random_tensor({5, 1}, rng);
    Var x = parameter(xv);
    Var f = sum(matmul(matmul(x, constant(a), true, false), x));
    auto g = backward(f)[x];
    for (std::size_t i = 0; i < 5; ++i) {
      double expected = 0.0;
      for (std::size_t j = 0; j < 5; ++j) expected += (a.at({i, j}) + a.at({j, i})) * xv[j];
      EXPECT_NEAR(g[i], expected, 1e-9);
    }
  }
}

TEST(GradCheck, MatmulChain) {
  std::mt19937_64 rng(3);
  auto f = [](const std::vector<Var>& v) { return weighted_sum(matmul(matmul(v[0], v[1]), v[2])); };
  auto r = grad_check(f, {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5, 2}, rng)});
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_EQ(r.compared, 12u + 20u + 10u);
}

TEST(GradCheck, ReluKinkExcluded) {
  Tensor x({4}, {-0.5, 0.0, 0.7, 1.2});
  auto f = [](const std::vector<Var>& v) { return weighted_sum(relu(v[0])); };
  GradCheckOptions opts;
  opts.exclude = [&](std::size_t, std::size_t j) { return x[j] == 0.0; };
  auto r = grad_check(f, {x}, opts);
  EXPECT_EQ(r.compared, 3u);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsInjectedSignFlip) {
  std::mt19937_64 rng(4);
  auto f = [](const std::vector<Var>& v) { return weighted_sum(softmax(v[0], 1)); };
  Tensor x = random_tensor({2, 5}, rng);
  fault::inject_adjoint_sign_flip("softmax");
  auto bad = grad_check(f, {x});
  fault::inject_adjoint_sign_flip("");
  auto good = grad_check(f, {x});
  EXPECT_GT(bad.max_rel_error, 1.0);
  EXPECT_LT(good.max_rel_error, 1e-4);
}

// Every differentiable primitive over 20 seeds, inputs kept 1e-3 away from
// ReLU kinks.
class PrimitiveGradients : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradients, AllBelowTolerance) {
  std::mt19937_64 rng(100 + GetParam());
  auto check = [](const char* name, const ScalarFunction& f, const std::vector<Tensor>& in) {
    auto r = grad_check(f, in);
    EXPECT_LT(r.max_rel_error, 1e-4) << name << " input " << r.worst_input << " index " << r.worst_index;
  };
  check("add", [](auto& v) { return weighted_sum(add(v[0], v[1])); },
        {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  check("sub", [](auto& v) { return weighted_sum(sub(v[0], v[1])); },
        {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  check("mul", [](auto& v) { return weighted_sum(mul(v[0], v[1])); },
        {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  check("scale_mean", [](auto& v) { return mean(scale(mul(v[0], v[0]), 1.7)); }, {random_tensor({4}, rng)});
  check("matmul_broadcast", [](auto& v) { return weighted_sum(matmul(v[0], v[1])); },
        {random_tensor({2, 3, 4}, rng), random_tensor({4, 2}, rng)});
  check("matmul_tt", [](auto& v) { return weighted_sum(matmul(v[0], v[1], true, true)); },
        {random_tensor({2, 4, 3}, rng), random_tensor({2, 5, 4}, rng)});
  check("permute_reshape", [](auto& v) { return weighted_sum(reshape(permute(v[0], {2, 0, 1}), {4, 6})); },
        {random_tensor({2, 3, 4}, rng)});
  check("slice_concat",
        [](auto& v) { return weighted_sum(concat({slice(v[0], 1, 1, 2), v[1], slice(v[0], 1, 0, 1)}, 1)); },
        {random_tensor({2, 4, 3}, rng), random_tensor({2, 2, 3}, rng)});
  check("softmax", [](auto& v) { return weighted_sum(softmax(v[0], 1)); }, {random_tensor({3, 5, 2}, rng, -2, 2)});
  check("relu", [](auto& v) { return weighted_sum(relu(v[0])); }, {random_away_from_zero({3, 4}, rng)});
  check("conv1d", [](auto& v) { return weighted_sum(conv1d_temporal(v[0], v[1])); },
        {random_tensor({2, 6, 3}, rng), random_tensor({3, 2, 3}, rng)});
  check("conv1d_time_last", [](auto& v) { return weighted_sum(conv1d_temporal(v[0], v[1], 2)); },
        {random_tensor({2, 3, 6}, rng), random_tensor({2, 2, 3}, rng)});
  check("conv2d", [](auto& v) { return weighted_sum(conv2d_spatial(v[0], v[1], 1, 1)); },
        {random_tensor({2, 2, 4, 3}, rng), random_tensor({3, 2, 3, 3}, rng)});
  check("conv2d_stride2", [](auto& v) { return weighted_sum(conv2d_spatial(v[0], v[1], 2, 1)); },
        {random_tensor({2, 1, 5, 4}, rng), random_tensor({2, 2, 3, 3}, rng)});
  check("max_axis", [](auto& v) { return weighted_sum(max_axis(v[0], 1)); }, {random_tensor({2, 5, 3}, rng)});
  check("mean_axis", [](auto& v) { return weighted_sum(mean_axis(v[0], 0)); }, {random_tensor({2, 5, 3}, rng)});
  check("batchnorm_train", [](auto& v) { return weighted_sum(batchnorm_train(v[0], v[1], v[2], {0, 2})); },
        {random_tensor({3, 2, 4}, rng), random_tensor({2}, rng, 0.5, 1.5), random_tensor({2}, rng)});
  const BatchStats running{Tensor({2}, {0.1, -0.2}), Tensor({2}, {0.9, 1.3})};
  check("batchnorm_eval",
        [running](auto& v) { return weighted_sum(batchnorm_eval(v[0], v[1], v[2], {1}, running)); },
        {random_tensor({2, 4}, rng), random_tensor({2}, rng, 0.5, 1.5), random_tensor({2}, rng)});
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGradients, ::testing::Range(0, 20));
