#pragma once

#include <string>
#include <vector>

#include "glgait/autodiff.hpp"

namespace glgait {

// Shared layout: embeddings [B, parts, d], centers [classes, parts, d],
// logits [B, parts, classes]. Metric losses use Euclidean distance
// sqrt(|a - b|^2 + 1e-12), are evaluated per part and averaged over parts.

inline constexpr double kDistanceEps = 1e-12;

/// Batch-all triplet loss: mean over anchors of
/// sum_{positives q} sum_{negatives n} max(D(x, q) - D(x, n) + m, 0).
Var triplet_loss(const Var& embeddings, const std::vector<std::size_t>& labels, double margin = 0.2);

/// Triplet loss whose positive set per anchor also holds the anchor's class
/// center. With center_grad=false the centers receive no gradient from it.
Var ctl_loss(const Var& embeddings, const std::vector<std::size_t>& labels, const Var& centers,
             double margin = 0.2, bool center_grad = true);

/// Mean squared Euclidean distance of each embedding to its class center.
Var center_loss(const Var& embeddings, const std::vector<std::size_t>& labels, const Var& centers);

/// Mean over anchors of max(D(x, w_own) - min_{c != own} D(x, w_c) + m, 0).
Var triplet_center_loss(const Var& embeddings, const std::vector<std::size_t>& labels, const Var& centers,
                        double margin = 0.2);

/// Softmax cross-entropy averaged over samples and parts.
Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels);

/// alpha * metric + beta * ce.
Var combined(const Var& metric, const Var& ce, double alpha = 1.0, double beta = 1.0);

/// Gradient of the center-positive distances D(x, w_own) of the active CTL
/// terms with respect to the embeddings (same scaling as ctl_loss). This is
/// the component that pulls each anchor toward its class center.
Tensor ctl_center_pull_gradient(const Tensor& embeddings, const std::vector<std::size_t>& labels,
                                const Tensor& centers, double margin = 0.2);

enum class MetricLoss { ctl, tl, cl, tcl };
MetricLoss parse_metric_loss(const std::string& name);
std::string metric_loss_name(MetricLoss loss);

}  // namespace glgait
