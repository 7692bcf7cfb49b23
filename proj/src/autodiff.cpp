#include "glgait/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

namespace glgait {

namespace {

std::string& injected_op() {
  static std::string op;
  return op;
}

void accumulate(std::vector<double>& into, const Tensor& g) {
  if (into.empty()) {
    into.assign(g.data().begin(), g.data().end());
    return;
  }
  const double* src = g.ptr();
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += src[i];
}

}  // namespace

namespace fault {
void inject_adjoint_sign_flip(std::string_view op) { injected_op() = std::string(op); }
}  // namespace fault

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->op = "leaf";
  return Var(std::move(node));
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

Var make_node(std::string op, Tensor value, std::vector<Var> inputs, Adjoint adjoint) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = std::move(op);
  node->requires_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& v : inputs) node->inputs.push_back(v.shared());
    node->adjoint = std::move(adjoint);
  }
  return Var(std::move(node));
}

Tensor Gradients::operator[](const Var& leaf) const {
  auto it = grads_.find(leaf.node());
  if (it == grads_.end()) return Tensor::zeros(leaf.shape(), leaf.dtype());
  return it->second;
}

bool Gradients::contains(const Var& leaf) const { return grads_.count(leaf.node()) != 0; }

Gradients backward(const Var& output) {
  if (output.value().numel() != 1)
    throw DimensionError("backward needs a scalar output, got shape " + to_string(output.shape()));

  Gradients result;
  if (!output.requires_grad()) return result;

  // Iterative post-order DFS gives a topological order.
  std::vector<const Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<const Node*, std::size_t>> stack{{output.node(), 0}};
  visited.insert(output.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  const std::string& flipped = injected_op();
  std::unordered_map<const Node*, std::vector<double>> acc;
  acc[output.node()] = {1.0};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* node = *it;
    auto found = acc.find(node);
    if (found == acc.end()) continue;
    if (!node->adjoint) continue;  // leaf
    Tensor grad(node->value.shape(), std::move(found->second), node->value.dtype());
    acc.erase(found);
    auto input_grads = node->adjoint(grad, *node);
    const bool flip = !flipped.empty() && node->op == flipped;
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Node* in = node->inputs[i].get();
      if (!in->requires_grad || !input_grads[i].defined()) continue;
      if (input_grads[i].shape() != in->value.shape())
        throw DimensionError("adjoint of " + node->op + " produced shape " +
                             to_string(input_grads[i].shape()) + " for input " +
                             to_string(in->value.shape()));
      auto& slot = acc[in];
      if (flip) {
        std::vector<double> neg(input_grads[i].data().begin(), input_grads[i].data().end());
        for (auto& v : neg) v = -v;
        accumulate(slot, Tensor(input_grads[i].shape(), std::move(neg), input_grads[i].dtype()));
      } else {
        accumulate(slot, input_grads[i]);
      }
    }
  }
  for (auto& [node, values] : acc)
    if (!node->adjoint && node->requires_grad)
      result.grads_.emplace(node, Tensor(node->value.shape(), std::move(values), node->value.dtype()));
  return result;
}

GradCheckResult grad_check(const ScalarFunction& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options) {
  if (!(options.h > 0)) throw ValueError("grad_check step must be positive");
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(parameter(t));
  const Var out = f(leaves);
  if (out.value().numel() != 1) throw DimensionError("grad_check needs a scalar-valued function");
  const Gradients grads = backward(out);

  auto evaluate = [&](std::size_t which, std::size_t index, double delta) {
    std::vector<Var> args;
    args.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (i != which) {
        args.push_back(constant(inputs[i]));
        continue;
      }
      std::vector<double> data(inputs[i].data().begin(), inputs[i].data().end());
      data[index] += delta;
      args.push_back(constant(Tensor(inputs[i].shape(), std::move(data), inputs[i].dtype())));
    }
    return f(args).value().item();
  };

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic = grads[leaves[i]];
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      if (options.exclude && options.exclude(i, j)) continue;
      const double numeric =
          (evaluate(i, j, options.h) - evaluate(i, j, -options.h)) / (2.0 * options.h);
      const double a = analytic[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.compared;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_input = i;
        result.worst_index = j;
      }
    }
  }
  return result;
}

}  // namespace glgait
