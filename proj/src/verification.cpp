#include "glgait/verification.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <unordered_set>

#include "glgait/attention.hpp"
#include "glgait/autodiff.hpp"
#include "glgait/losses.hpp"
#include "glgait/network.hpp"
#include "glgait/rng.hpp"

namespace glgait {

namespace {

Tensor uniform(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(shape, std::move(v));
}

// Magnitudes in [gap, 1] with random sign, so ReLU kinks stay out of reach of
// the finite-difference step.
Tensor away_from_zero(const Shape& shape, Rng& rng, double gap = 1e-3) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(gap, 1.0);
  return Tensor(shape, std::move(v));
}

// Sum with fixed pseudo-random positive weights; a plain sum would hide
// adjoint errors behind structurally zero gradients (softmax, batchnorm).
Var probe(const Var& y) {
  Rng rng(0x5EED);
  return sum(mul(y, constant(uniform(y.shape(), rng, 0.5, 1.5))));
}

std::vector<std::size_t> pk_labels(std::size_t p, std::size_t k) {
  std::vector<std::size_t> y;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < k; ++j) y.push_back(i);
  return y;
}

// Smallest |input| over every ReLU in the graph of `out`.
double relu_margin(const Var& out) {
  double margin = std::numeric_limits<double>::infinity();
  std::vector<const Node*> stack{out.node()};
  std::unordered_set<const Node*> seen;
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (n->op == "relu")
      for (double v : n->inputs.front()->value.data()) margin = std::min(margin, std::abs(v));
    for (const auto& in : n->inputs) stack.push_back(in.get());
  }
  return margin;
}

GradCheckResult check(const ScalarFunction& f, const std::vector<Tensor>& inputs) { return grad_check(f, inputs); }

// Internal ReLU inputs closer to zero than this would let the finite-difference
// step cross a kink; such draws are rejected.
constexpr double kKinkMargin = 1e-4;
constexpr int kMaxDraws = 200;

// Gradient of every listed parameter of a scope-built function plus its input;
// at most `per_tensor` coordinates of each tensor are compared. Empty when an
// internal ReLU input lies within kKinkMargin of zero.
std::optional<GradCheckResult> check_params(const ParamStore& store, const Tensor& x,
                                            const std::function<Var(Scope&, const Var&)>& f, bool batchnorm,
                                            std::size_t per_tensor) {
  const auto& names = store.names();
  std::vector<Tensor> inputs{x};
  for (const auto& n : names) inputs.push_back(store.get(n));
  // The probe is taken of y - y(base): same gradient, but the reduction no
  // longer sums large values whose rounding swamps the difference quotient.
  auto output = [&](const std::vector<Var>& v) {
    Scope scope(store, Mode::train, batchnorm, false);
    for (std::size_t i = 0; i < names.size(); ++i) scope.bind(names[i], v[i + 1]);
    return f(scope, v[0]);
  };
  std::vector<Var> base;
  for (const auto& t : inputs) base.push_back(parameter(t));
  const Var y0 = output(base);
  if (relu_margin(y0) < kKinkMargin) return std::nullopt;
  const Var offset = constant(y0.value());
  const ScalarFunction g = [&](const std::vector<Var>& v) { return probe(sub(output(v), offset)); };
  GradCheckOptions opt;
  opt.exclude = [&](std::size_t i, std::size_t j) {
    const std::size_t n = inputs[i].numel();
    const std::size_t step = n > per_tensor ? n / per_tensor : 1;
    return j % step != 0;
  };
  return grad_check(g, inputs, opt);
}

GradCheckResult first_kink_free(const std::function<std::optional<GradCheckResult>()>& draw) {
  for (int i = 0; i < kMaxDraws; ++i)
    if (auto r = draw()) return *r;
  throw ValueError("no kink-free draw for the grad check");
}

AttentionConfig block_attention(std::size_t channels) {
  AttentionConfig cfg;
  cfg.heads = 2;
  cfg.head_dim = 3;
  cfg.patch_temporal = 3;
  cfg.patch_spatial = 1;
  cfg.channels = channels;
  return cfg;
}

GradCheckResult attention_case(AttentionVariant v, Rng& rng) {
  AttentionConfig cfg;
  cfg.heads = 2;
  cfg.head_dim = 3;
  cfg.patch_temporal = 2;
  cfg.patch_spatial = 2;
  cfg.channels = 2;
  const auto w = init_projection(v, cfg, rng.next_u64());
  return check([&](const std::vector<Var>& in) { return probe(attention_forward(v, in[0], cfg, {in[1], in[2]}, in[3])); },
               {uniform({4, 4, cfg.channels}, rng), w.uqkv[0], w.uqkv[1], w.umsa});
}

GradCheckResult p3d_case(Rng& rng, std::size_t cout, std::size_t stride, bool bn) {
  return first_kink_free([&] {
    ParamStore store;
    add_p3d_params(store, "b", 4, cout, stride, bn, rng.next_u64());
    return check_params(store, uniform({4, 6, 8, 4}, rng),
                        [stride](Scope& s, const Var& x) { return p3d_block(s, "b", x, stride); }, bn, 40);
  });
}

GradCheckResult gl3d_case(Rng& rng, bool bn) {
  const auto cfg = block_attention(4);
  return first_kink_free([&] {
    ParamStore store;
    add_gl3d_params(store, "b", 4, 4, 1, cfg.heads, cfg.head_dim, 0, bn, rng.next_u64());
    return check_params(store, uniform({4, 6, 8, 4}, rng),
                        [&](Scope& s, const Var& x) { return gl3d_block(s, "b", x, 1, cfg); }, bn, 40);
  });
}

using Case = std::pair<std::string, std::function<GradCheckResult(Rng&)>>;

const std::vector<Case>& cases() {
  static const std::vector<Case> all = [] {
    std::vector<Case> c;
    auto unary = [&c](std::string name, std::function<Var(const Var&)> op, Shape shape) {
      c.emplace_back(std::move(name), [op, shape](Rng& rng) {
        return check([&](const std::vector<Var>& v) { return probe(op(v[0])); }, {uniform(shape, rng)});
      });
    };
    auto binary = [&c](std::string name, std::function<Var(const Var&, const Var&)> op, Shape a, Shape b) {
      c.emplace_back(std::move(name), [op, a, b](Rng& rng) {
        return check([&](const std::vector<Var>& v) { return probe(op(v[0], v[1])); },
                     {uniform(a, rng), uniform(b, rng)});
      });
    };
    binary("add", [](const Var& a, const Var& b) { return add(a, b); }, {2, 3}, {2, 3});
    binary("sub", [](const Var& a, const Var& b) { return sub(a, b); }, {2, 3}, {2, 3});
    binary("mul", [](const Var& a, const Var& b) { return mul(a, b); }, {2, 3}, {2, 3});
    unary("scale", [](const Var& a) { return scale(a, 1.7); }, {4});
    unary("sum", [](const Var& a) { return sum(mul(a, a)); }, {3, 2});
    unary("mean", [](const Var& a) { return mean(mul(a, a)); }, {3, 2});
    binary("matmul", [](const Var& a, const Var& b) { return matmul(a, b); }, {2, 3, 4}, {4, 2});
    binary("matmul_transposed", [](const Var& a, const Var& b) { return matmul(a, b, true, true); }, {2, 4, 3},
           {2, 5, 4});
    unary("reshape", [](const Var& a) { return reshape(a, {4, 6}); }, {2, 3, 4});
    unary("permute", [](const Var& a) { return permute(a, {2, 0, 1}); }, {2, 3, 4});
    unary("slice", [](const Var& a) { return slice(a, 1, 1, 2); }, {2, 4, 3});
    binary("concat", [](const Var& a, const Var& b) { return concat({b, a, b}, 1); }, {2, 4, 3}, {2, 2, 3});
    c.emplace_back("softmax", [](Rng& rng) {
      return check([](const std::vector<Var>& v) { return probe(softmax(v[0], 1)); }, {uniform({3, 5, 2}, rng, -2, 2)});
    });
    c.emplace_back("relu", [](Rng& rng) {
      return check([](const std::vector<Var>& v) { return probe(relu(v[0])); }, {away_from_zero({3, 4}, rng)});
    });
    binary("conv1d", [](const Var& x, const Var& w) { return conv1d_temporal(x, w); }, {2, 6, 3}, {3, 2, 3});
    binary("conv2d", [](const Var& x, const Var& w) { return conv2d_spatial(x, w, 1, 1); }, {2, 2, 4, 3},
           {3, 2, 3, 3});
    binary("conv2d_strided", [](const Var& x, const Var& w) { return conv2d_spatial(x, w, 2, 1); }, {2, 1, 5, 4},
           {2, 2, 3, 3});
    unary("max_axis", [](const Var& a) { return max_axis(a, 1); }, {2, 5, 3});
    unary("mean_axis", [](const Var& a) { return mean_axis(a, 0); }, {2, 5, 3});
    c.emplace_back("batchnorm_train", [](Rng& rng) {
      return check([](const std::vector<Var>& v) { return probe(batchnorm_train(v[0], v[1], v[2], {0, 2})); },
                   {uniform({3, 2, 4}, rng), uniform({2}, rng, 0.5, 1.5), uniform({2}, rng)});
    });
    c.emplace_back("batchnorm_eval", [](Rng& rng) {
      const BatchStats running{Tensor({2}, {0.1, -0.2}), Tensor({2}, {0.9, 1.3})};
      return check(
          [&](const std::vector<Var>& v) { return probe(batchnorm_eval(v[0], v[1], v[2], {1}, running)); },
          {uniform({2, 4}, rng), uniform({2}, rng, 0.5, 1.5), uniform({2}, rng)});
    });
    for (auto v : all_variants())
      c.emplace_back("attention_" + variant_name(v), [v](Rng& rng) { return attention_case(v, rng); });
    c.emplace_back("gltm", [](Rng& rng) {
      const auto cfg = block_attention(4);
      return first_kink_free([&] {
        ParamStore store;
        add_gltm_params(store, "g", 4, cfg.heads, cfg.head_dim, 0, rng.next_u64());
        return check_params(store, uniform({8, 6, 4}, rng),
                            [&](Scope& s, const Var& x) { return gltm(s, "g", x, cfg); }, false, 1000);
      });
    });
    c.emplace_back("p3d", [](Rng& rng) { return p3d_case(rng, 4, 1, false); });
    c.emplace_back("p3d_bn", [](Rng& rng) { return p3d_case(rng, 4, 1, true); });
    c.emplace_back("p3d_strided", [](Rng& rng) { return p3d_case(rng, 8, 2, true); });
    c.emplace_back("gl3d", [](Rng& rng) { return gl3d_case(rng, false); });
    c.emplace_back("gl3d_bn", [](Rng& rng) { return gl3d_case(rng, true); });

    auto loss = [&c](std::string name, std::function<Var(const std::vector<Var>&, const std::vector<std::size_t>&)> f,
                     std::vector<Shape> shapes) {
      c.emplace_back(std::move(name), [f, shapes](Rng& rng) {
        const auto y = pk_labels(3, 3);
        std::vector<Tensor> in;
        for (const auto& s : shapes) in.push_back(uniform(s, rng));
        return check([&](const std::vector<Var>& v) { return f(v, y); }, in);
      });
    };
    const Shape emb{9, 2, 3}, centers{3, 2, 3}, logits{9, 2, 3};
    loss("loss_tl", [](auto& v, auto& y) { return triplet_loss(v[0], y, 0.5); }, {emb});
    loss("loss_ctl", [](auto& v, auto& y) { return ctl_loss(v[0], y, v[1], 0.5); }, {emb, centers});
    loss("loss_cl", [](auto& v, auto& y) { return center_loss(v[0], y, v[1]); }, {emb, centers});
    loss("loss_tcl", [](auto& v, auto& y) { return triplet_center_loss(v[0], y, v[1], 0.5); }, {emb, centers});
    loss("loss_ce", [](auto& v, auto& y) { return cross_entropy(v[0], y); }, {logits});
    loss("loss_combined",
         [](auto& v, auto& y) { return combined(ctl_loss(v[0], y, v[1], 0.5), cross_entropy(v[2], y), 0.7, 1.3); },
         {emb, centers, logits});
    return c;
  }();
  return all;
}

}  // namespace

const std::vector<std::string>& gradcheck_case_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& c : cases()) n.push_back(c.first);
    return n;
  }();
  return names;
}

std::vector<GradCheckCase> run_gradcheck_suite(const std::string& only, std::uint64_t seed) {
  std::vector<GradCheckCase> out;
  for (std::size_t i = 0; i < cases().size(); ++i) {
    const auto& [name, run] = cases()[i];
    if (!only.empty() && name != only) continue;
    Rng rng(derive_seed(seed, i));
    const auto r = run(rng);
    out.push_back({name, r.max_rel_error, r.compared});
  }
  if (!only.empty() && out.empty()) throw ValueError("unknown grad-check case '" + only + "'");
  return out;
}

}  // namespace glgait
