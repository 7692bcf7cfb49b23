#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "glgait/tensor.hpp"

namespace glgait {

struct Node;

/// Adjoint of a node: maps the gradient of the node's output to gradients of
/// its inputs (one entry per input; undefined tensors for inputs that do not
/// require a gradient). The node itself is passed so adjoints can read the
/// forward values without capturing copies.
using Adjoint = std::function<std::vector<Tensor>(const Tensor& grad_output, const Node& self)>;

/// One vertex of the computation graph. Inputs are held by shared ownership,
/// so a graph is kept alive by its output and is acyclic by construction.
struct Node {
  Tensor value;
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<const Node>> inputs;
  Adjoint adjoint;
};

/// Handle to a graph node. Copying a Var shares the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  DType dtype() const { return node_->value.dtype(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }
  const Node* node() const { return node_.get(); }
  const std::shared_ptr<const Node>& shared() const { return node_; }

 private:
  std::shared_ptr<const Node> node_;
};

/// Leaf that receives a gradient.
Var parameter(Tensor value);
/// Leaf without gradient.
Var constant(Tensor value);

/// Builds an interior node. When no input requires a gradient the adjoint is
/// dropped and the inputs are released, so inference keeps no graph.
Var make_node(std::string op, Tensor value, std::vector<Var> inputs, Adjoint adjoint);

/// Leaf gradients produced by backward().
class Gradients {
 public:
  /// Gradient of a leaf; zeros of the leaf's shape when it is disconnected.
  Tensor operator[](const Var& leaf) const;
  bool contains(const Var& leaf) const;

 private:
  friend Gradients backward(const Var& output);
  std::unordered_map<const Node*, Tensor> grads_;
};

/// Reverse-mode sweep from a scalar output.
Gradients backward(const Var& output);

namespace fault {
/// Negates the adjoint of every node whose op name equals `op` (empty string
/// disables). Used to prove that the gradient suite detects broken adjoints.
void inject_adjoint_sign_flip(std::string_view op);
}  // namespace fault

// ---------------------------------------------------------------------------
// Differentiable operations.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var sum(const Var& a);
Var mean(const Var& a);

/// Batched matrix product over the last two axes; leading axes broadcast.
/// Accumulation runs k-major in a fixed order.
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);

Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<std::size_t>& axes);
Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t length);
Var concat(const std::vector<Var>& parts, std::size_t axis);

Var softmax(const Var& x, std::size_t axis);
Var relu(const Var& x);

/// Cross-correlation along `time_axis` with zero padding.
/// x: [C_in, ..., T, ...] with channels on axis 0, w: [C_out, C_in, k].
/// Output keeps every extent except axis 0 (C_out) and the time axis
/// (T + 2*pad - k + 1). pad < 0 selects (k-1)/2.
Var conv1d_temporal(const Var& x, const Var& w, std::size_t time_axis = 1, int pad = -1);

/// Per-image 2D cross-correlation over the last two axes.
/// x: [C_in, ..., H, W], w: [C_out, C_in, k, k].
Var conv2d_spatial(const Var& x, const Var& w, std::size_t stride = 1, std::size_t pad = 1);

/// Max over one axis (axis removed). The gradient flows to the first argmax.
Var max_axis(const Var& x, std::size_t axis);
/// Mean over one axis (axis removed).
Var mean_axis(const Var& x, std::size_t axis);

struct BatchStats {
  Tensor mean;
  Tensor var;
};

/// Training-mode batch normalization: standardizes with the batch statistics
/// over `reduce_axes`; gamma/beta have the shape of the remaining axes.
/// The biased batch statistics are written to `stats` when non-null.
Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta,
                    const std::vector<std::size_t>& reduce_axes, double eps = 1e-5,
                    BatchStats* stats = nullptr);

/// Evaluation-mode batch normalization with fixed running statistics.
Var batchnorm_eval(const Var& x, const Var& gamma, const Var& beta,
                   const std::vector<std::size_t>& reduce_axes, const BatchStats& running,
                   double eps = 1e-5);

// ---------------------------------------------------------------------------
// Finite-difference checking.

struct GradCheckOptions {
  double h = 1e-6;
  /// Coordinates to leave out of the comparison: (input index, flat index).
  std::function<bool(std::size_t, std::size_t)> exclude;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t compared = 0;
};

using ScalarFunction = std::function<Var(const std::vector<Var>&)>;

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Relative error per coordinate is |a-b| / max(|a|,|b|,1e-8).
GradCheckResult grad_check(const ScalarFunction& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace glgait
