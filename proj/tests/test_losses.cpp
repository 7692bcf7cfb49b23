#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "glgait/losses.hpp"
#include "oracles.hpp"

using namespace glgait;
using namespace glgait::oracle;

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return Tensor(shape, std::move(v));
}

Tensor constant_tensor(const Shape& shape, double value) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return Tensor(shape, std::vector<double>(n, value));
}

}  // namespace

TEST(Losses, CollapsedEmbeddingsGiveClosedForms) {
  const auto y = pk_labels(4, 4);
  Tensor e = constant_tensor({16, 2, 8}, 0.5);
  Tensor c = constant_tensor({4, 2, 8}, 0.5);
  EXPECT_NEAR(triplet_loss(constant(e), y, 0.2).value().item(), 7.2, 1e-12);
  EXPECT_NEAR(ctl_loss(constant(e), y, constant(c), 0.2).value().item(), 9.6, 1e-12);
}

TEST(Losses, SeparatedClassesGiveZero) {
  const auto y = pk_labels(4, 4);
  std::vector<double> ev, cv;
  for (std::size_t b = 0; b < 16; ++b)
    for (std::size_t i = 0; i < 3; ++i) ev.push_back(i == 0 ? 10.0 * double(y[b]) : 0.0);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t i = 0; i < 3; ++i) cv.push_back(i == 0 ? 10.0 * double(k) : 0.0);
  Tensor e({16, 1, 3}, ev), c({4, 1, 3}, cv);
  EXPECT_EQ(triplet_loss(constant(e), y).value().item(), 0.0);
  EXPECT_EQ(ctl_loss(constant(e), y, constant(c)).value().item(), 0.0);
  EXPECT_EQ(triplet_center_loss(constant(e), y, constant(c)).value().item(), 0.0);
  EXPECT_EQ(center_loss(constant(e), y, constant(c)).value().item(), 0.0);
}

TEST(Losses, MatchEnumerationOracles) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 2 + trial % 4, per = 2 + trial % 3, P = 1 + trial % 3, d = 2 + trial % 5;
    const auto y = pk_labels(K, per);
    Tensor e = random_tensor({K * per, P, d}, rng, 0.3);
    Tensor c = random_tensor({K, P, d}, rng, 0.3);
    Tensor z = random_tensor({K * per, P, K}, rng, 2.0);
    const double m = 0.1 + 0.05 * (trial % 5);
    EXPECT_NEAR(triplet_loss(constant(e), y, m).value().item(), oracle_triplet(e, y, nullptr, m), 1e-12);
    EXPECT_NEAR(ctl_loss(constant(e), y, constant(c), m).value().item(), oracle_triplet(e, y, &c, m), 1e-12);
    EXPECT_NEAR(triplet_center_loss(constant(e), y, constant(c), m).value().item(), oracle_tcl(e, y, c, m), 1e-12);
    EXPECT_NEAR(center_loss(constant(e), y, constant(c)).value().item(), oracle_center(e, y, c), 1e-12);
    EXPECT_NEAR(cross_entropy(constant(z), y).value().item(), oracle_ce(z, y), 1e-12);
  }
}

TEST(Losses, InvariantToBatchPermutation) {
  std::mt19937_64 rng(5);
  const auto y = pk_labels(3, 4);
  Tensor e = random_tensor({12, 2, 4}, rng, 0.4);
  Tensor c = random_tensor({3, 2, 4}, rng, 0.4);
  std::vector<std::size_t> order(12);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> pv;
  std::vector<std::size_t> py;
  for (auto i : order) {
    py.push_back(y[i]);
    pv.insert(pv.end(), e.ptr() + i * 8, e.ptr() + (i + 1) * 8);
  }
  Tensor pe({12, 2, 4}, pv);
  EXPECT_NEAR(triplet_loss(constant(e), y).value().item(), triplet_loss(constant(pe), py).value().item(), 1e-12);
  EXPECT_NEAR(ctl_loss(constant(e), y, constant(c)).value().item(),
              ctl_loss(constant(pe), py, constant(c)).value().item(), 1e-12);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  const auto y = pk_labels(3, 3);
  Tensor e = random_tensor({9, 2, 3}, rng, 0.3);
  Tensor c = random_tensor({3, 2, 3}, rng, 0.3);
  Tensor z = random_tensor({9, 2, 3}, rng);
  auto check = [](const ScalarFunction& f, const std::vector<Tensor>& in) {
    auto r = grad_check(f, in);
    EXPECT_GT(r.compared, 0u);
    EXPECT_LT(r.max_rel_error, 1e-5) << "input " << r.worst_input << " index " << r.worst_index;
  };
  check([&](const std::vector<Var>& v) { return triplet_loss(v[0], y, 0.5); }, {e});
  check([&](const std::vector<Var>& v) { return ctl_loss(v[0], y, v[1], 0.5); }, {e, c});
  check([&](const std::vector<Var>& v) { return center_loss(v[0], y, v[1]); }, {e, c});
  check([&](const std::vector<Var>& v) { return triplet_center_loss(v[0], y, v[1], 0.5); }, {e, c});
  check([&](const std::vector<Var>& v) { return cross_entropy(v[0], y); }, {z});
  check([&](const std::vector<Var>& v) { return combined(ctl_loss(v[0], y, v[1], 0.5), cross_entropy(v[2], y), 0.7, 1.3); },
        {e, c, z});
}

TEST(Losses, CenterGradientCanBeDisabled) {
  std::mt19937_64 rng(3);
  const auto y = pk_labels(2, 3);
  Var e = parameter(random_tensor({6, 1, 4}, rng, 0.2));
  Var c = parameter(random_tensor({2, 1, 4}, rng, 0.2));
  auto on = backward(ctl_loss(e, y, c, 1.0, true));
  auto off = backward(ctl_loss(e, y, c, 1.0, false));
  double on_norm = 0.0, off_norm = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    on_norm += std::abs(on[c].ptr()[i]);
    off_norm += std::abs(off[c].ptr()[i]);
  }
  EXPECT_GT(on_norm, 0.0);
  EXPECT_EQ(off_norm, 0.0);
  for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(on[e].ptr()[i], off[e].ptr()[i]);
}

TEST(Losses, CenterTermPullsAnchorsTowardTheirCenter) {
  std::mt19937_64 rng(14);
  const auto y = pk_labels(3, 4);
  Tensor e = random_tensor({12, 2, 5}, rng, 0.5);
  Tensor c = random_tensor({3, 2, 5}, rng, 0.5);
  Tensor pull = ctl_center_pull_gradient(e, y, c, 5.0);
  for (std::size_t b = 0; b < 12; ++b)
    for (std::size_t p = 0; p < 2; ++p) {
      double dot = 0.0;
      for (std::size_t i = 0; i < 5; ++i) {
        const std::size_t ei = (b * 2 + p) * 5 + i, ci = (y[b] * 2 + p) * 5 + i;
        dot += -pull.ptr()[ei] * (c.ptr()[ci] - e.ptr()[ei]);
      }
      EXPECT_GT(dot, 0.0);
    }
}

TEST(Losses, UniformLogitsGiveLogClassCount) {
  const auto y = pk_labels(7, 2);
  Tensor z = constant_tensor({14, 3, 7}, 0.25);
  EXPECT_NEAR(cross_entropy(constant(z), y).value().item(), std::log(7.0), 1e-14);
}

TEST(Losses, CombinedIsLinear) {
  Var a = constant(Tensor::scalar(1.5)), b = constant(Tensor::scalar(-0.25));
  EXPECT_DOUBLE_EQ(combined(a, b, 2.0, 4.0).value().item(), 2.0);
  EXPECT_DOUBLE_EQ(combined(a, b).value().item(), 1.25);
}

TEST(Losses, RejectBadLabelsAndShapes) {
  Tensor e = constant_tensor({4, 1, 2}, 0.0);
  Tensor c = constant_tensor({2, 1, 2}, 0.0);
  EXPECT_THROW(ctl_loss(constant(e), {0, 0, 1, 2}, constant(c)), ValueError);
  EXPECT_THROW(triplet_loss(constant(e), {0, 1}), DimensionError);
  EXPECT_THROW(center_loss(constant(e), {0, 0, 1, 1}, constant(constant_tensor({2, 1, 3}, 0.0))), DimensionError);
  EXPECT_THROW(cross_entropy(constant(e), {0, 0, 2, 1}), ValueError);
  EXPECT_THROW(triplet_loss(constant(constant_tensor({4, 2}, 0.0)), {0, 0, 1, 1}), DimensionError);
  EXPECT_THROW(parse_metric_loss("arcface"), ValueError);
  for (auto l : {MetricLoss::ctl, MetricLoss::tl, MetricLoss::cl, MetricLoss::tcl})
    EXPECT_EQ(parse_metric_loss(metric_loss_name(l)), l);
}
