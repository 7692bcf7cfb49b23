#include "glgait/losses.hpp"

#include <cmath>
#include <limits>

namespace glgait {

namespace {

struct Layout {
  std::size_t batch, parts, dim, classes;
};

Layout check_embeddings(const Shape& e, const std::vector<std::size_t>& labels) {
  if (e.size() != 3) throw DimensionError("embeddings must be [B, parts, d], got " + to_string(e));
  if (labels.size() != e[0])
    throw DimensionError("got " + std::to_string(labels.size()) + " labels for " + std::to_string(e[0]) +
                         " embeddings");
  return Layout{e[0], e[1], e[2], 0};
}

Layout check_centers(const Shape& e, const std::vector<std::size_t>& labels, const Shape& c) {
  Layout lay = check_embeddings(e, labels);
  if (c.size() != 3 || c[1] != e[1] || c[2] != e[2])
    throw DimensionError("centers must be [classes, parts, d] matching embeddings " + to_string(e) + ", got " +
                         to_string(c));
  lay.classes = c[0];
  for (auto y : labels)
    if (y >= lay.classes)
      throw ValueError("label " + std::to_string(y) + " has no class center (" + std::to_string(lay.classes) +
                       " classes)");
  return lay;
}

double distance(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s + kDistanceEps);
}

// ga += coef * dD/da, gb -= coef * dD/da (gb may be null).
void distance_grad(double coef, double dist, const double* a, const double* b, std::size_t d, double* ga,
                   double* gb) {
  const double k = coef / dist;
  for (std::size_t i = 0; i < d; ++i) {
    const double u = k * (a[i] - b[i]);
    if (ga) ga[i] += u;
    if (gb) gb[i] -= u;
  }
}

struct Result {
  double value = 0.0;
  std::vector<double> d_emb, d_centers, pull;
};

// Batch-all triplet loss, optionally with the class center as an extra
// positive per anchor.
Result triplet_core(const Tensor& emb, const std::vector<std::size_t>& labels, const Tensor* centers, double margin,
                    const Layout& lay) {
  const std::size_t B = lay.batch, P = lay.parts, d = lay.dim;
  const double scale = 1.0 / double(B * P);
  Result r;
  r.d_emb.assign(emb.numel(), 0.0);
  if (centers) {
    r.d_centers.assign(centers->numel(), 0.0);
    r.pull.assign(emb.numel(), 0.0);
  }
  const double* E = emb.ptr();
  auto at = [&](std::size_t b, std::size_t p) { return E + (b * P + p) * d; };
  std::vector<std::size_t> pos, neg;
  std::vector<double> dpos, dneg;
  std::vector<std::size_t> cpos, cneg;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t a = 0; a < B; ++a) {
      pos.clear();
      neg.clear();
      for (std::size_t j = 0; j < B; ++j) {
        if (j == a) continue;
        (labels[j] == labels[a] ? pos : neg).push_back(j);
      }
      if (neg.empty()) continue;
      const std::size_t Q = pos.size() + (centers ? 1 : 0);
      if (Q == 0) continue;
      const double* x = at(a, p);
      const double* w = centers ? centers->ptr() + (labels[a] * P + p) * d : nullptr;
      dpos.assign(Q, 0.0);
      for (std::size_t i = 0; i < pos.size(); ++i) dpos[i] = distance(x, at(pos[i], p), d);
      if (centers) dpos[Q - 1] = distance(x, w, d);
      dneg.assign(neg.size(), 0.0);
      for (std::size_t j = 0; j < neg.size(); ++j) dneg[j] = distance(x, at(neg[j], p), d);
      cpos.assign(Q, 0);
      cneg.assign(neg.size(), 0);
      for (std::size_t i = 0; i < Q; ++i)
        for (std::size_t j = 0; j < neg.size(); ++j) {
          const double v = dpos[i] - dneg[j] + margin;
          if (v > 0.0) {
            r.value += v * scale;
            ++cpos[i];
            ++cneg[j];
          }
        }
      double* gx = r.d_emb.data() + (a * P + p) * d;
      for (std::size_t i = 0; i < pos.size(); ++i)
        if (cpos[i])
          distance_grad(double(cpos[i]) * scale, dpos[i], x, at(pos[i], p), d, gx,
                        r.d_emb.data() + (pos[i] * P + p) * d);
      if (centers && cpos[Q - 1]) {
        const double c = double(cpos[Q - 1]) * scale;
        distance_grad(c, dpos[Q - 1], x, w, d, gx, r.d_centers.data() + (labels[a] * P + p) * d);
        distance_grad(c, dpos[Q - 1], x, w, d, r.pull.data() + (a * P + p) * d, nullptr);
      }
      for (std::size_t j = 0; j < neg.size(); ++j)
        if (cneg[j])
          distance_grad(-double(cneg[j]) * scale, dneg[j], x, at(neg[j], p), d, gx,
                        r.d_emb.data() + (neg[j] * P + p) * d);
    }
  return r;
}

Tensor scaled(const std::vector<double>& v, double g, const Tensor& like) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = g * v[i];
  return Tensor(like.shape(), std::move(out), like.dtype());
}

Var loss_node(const std::string& op, Result r, const Var& emb, const Var* centers, bool center_grad) {
  Tensor value = Tensor::scalar(r.value, emb.dtype());
  std::vector<Var> inputs{emb};
  if (centers) inputs.push_back(*centers);
  return make_node(op, std::move(value), inputs,
                   [r = std::move(r), center_grad](const Tensor& g, const Node& self) {
                     const double s = g.item();
                     std::vector<Tensor> out{scaled(r.d_emb, s, self.inputs[0]->value)};
                     if (self.inputs.size() > 1)
                       out.push_back(center_grad ? scaled(r.d_centers, s, self.inputs[1]->value) : Tensor());
                     return out;
                   });
}

}  // namespace

Var triplet_loss(const Var& embeddings, const std::vector<std::size_t>& labels, double margin) {
  const Layout lay = check_embeddings(embeddings.shape(), labels);
  return loss_node("triplet", triplet_core(embeddings.value(), labels, nullptr, margin, lay), embeddings, nullptr,
                   false);
}

Var ctl_loss(const Var& embeddings, const std::vector<std::size_t>& labels, const Var& centers, double margin,
             bool center_grad) {
  const Layout lay = check_centers(embeddings.shape(), labels, centers.shape());
  Result r = triplet_core(embeddings.value(), labels, &centers.value(), margin, lay);
  return loss_node("ctl", std::move(r), embeddings, &centers, center_grad);
}

Tensor ctl_center_pull_gradient(const Tensor& embeddings, const std::vector<std::size_t>& labels,
                                const Tensor& centers, double margin) {
  const Layout lay = check_centers(embeddings.shape(), labels, centers.shape());
  Result r = triplet_core(embeddings, labels, &centers, margin, lay);
  return Tensor(embeddings.shape(), std::move(r.pull));
}

Var center_loss(const Var& embeddings, const std::vector<std::size_t>& labels, const Var& centers) {
  const Layout lay = check_centers(embeddings.shape(), labels, centers.shape());
  const std::size_t P = lay.parts, d = lay.dim;
  const double scale = 1.0 / double(lay.batch * P);
  Result r;
  r.d_emb.assign(embeddings.value().numel(), 0.0);
  r.d_centers.assign(centers.value().numel(), 0.0);
  const double* E = embeddings.value().ptr();
  const double* W = centers.value().ptr();
  for (std::size_t b = 0; b < lay.batch; ++b)
    for (std::size_t p = 0; p < P; ++p) {
      const std::size_t ei = (b * P + p) * d, ci = (labels[b] * P + p) * d;
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = E[ei + i] - W[ci + i];
        r.value += diff * diff * scale;
        r.d_emb[ei + i] += 2.0 * diff * scale;
        r.d_centers[ci + i] -= 2.0 * diff * scale;
      }
    }
  return loss_node("center", std::move(r), embeddings, &centers, true);
}

Var triplet_center_loss(const Var& embeddings, const std::vector<std::size_t>& labels, const Var& centers,
                        double margin) {
  const Layout lay = check_centers(embeddings.shape(), labels, centers.shape());
  if (lay.classes < 2) throw ValueError("triplet-center loss needs at least two classes");
  const std::size_t P = lay.parts, d = lay.dim;
  const double scale = 1.0 / double(lay.batch * P);
  Result r;
  r.d_emb.assign(embeddings.value().numel(), 0.0);
  r.d_centers.assign(centers.value().numel(), 0.0);
  const double* E = embeddings.value().ptr();
  const double* W = centers.value().ptr();
  for (std::size_t b = 0; b < lay.batch; ++b)
    for (std::size_t p = 0; p < P; ++p) {
      const double* x = E + (b * P + p) * d;
      const std::size_t own = labels[b];
      const double d_own = distance(x, W + (own * P + p) * d, d);
      std::size_t nearest = own;
      double d_near = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < lay.classes; ++c) {
        if (c == own) continue;
        const double dc = distance(x, W + (c * P + p) * d, d);
        if (dc < d_near) {
          d_near = dc;
          nearest = c;
        }
      }
      const double v = d_own - d_near + margin;
      if (v <= 0.0) continue;
      r.value += v * scale;
      double* gx = r.d_emb.data() + (b * P + p) * d;
      distance_grad(scale, d_own, x, W + (own * P + p) * d, d, gx, r.d_centers.data() + (own * P + p) * d);
      distance_grad(-scale, d_near, x, W + (nearest * P + p) * d, d, gx, r.d_centers.data() + (nearest * P + p) * d);
    }
  return loss_node("triplet_center", std::move(r), embeddings, &centers, true);
}

Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels) {
  const Shape& s = logits.shape();
  if (s.size() != 3) throw DimensionError("logits must be [B, parts, classes], got " + to_string(s));
  if (labels.size() != s[0])
    throw DimensionError("got " + std::to_string(labels.size()) + " labels for " + std::to_string(s[0]) + " samples");
  const std::size_t B = s[0], P = s[1], K = s[2];
  for (auto y : labels)
    if (y >= K) throw ValueError("label " + std::to_string(y) + " out of range for " + std::to_string(K) + " classes");
  const double scale = 1.0 / double(B * P);
  const double* Z = logits.value().ptr();
  Result r;
  r.d_emb.assign(logits.value().numel(), 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < P; ++p) {
      const double* z = Z + (b * P + p) * K;
      double mx = z[0];
      for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, z[k]);
      double sum = 0.0;
      for (std::size_t k = 0; k < K; ++k) sum += std::exp(z[k] - mx);
      const double log_z = mx + std::log(sum);
      r.value += (log_z - z[labels[b]]) * scale;
      double* g = r.d_emb.data() + (b * P + p) * K;
      for (std::size_t k = 0; k < K; ++k) g[k] = std::exp(z[k] - log_z) * scale;
      g[labels[b]] -= scale;
    }
  return loss_node("cross_entropy", std::move(r), logits, nullptr, false);
}

Var combined(const Var& metric, const Var& ce, double alpha, double beta) {
  return add(scale(metric, alpha), scale(ce, beta));
}

MetricLoss parse_metric_loss(const std::string& name) {
  if (name == "ctl") return MetricLoss::ctl;
  if (name == "tl") return MetricLoss::tl;
  if (name == "cl") return MetricLoss::cl;
  if (name == "tcl") return MetricLoss::tcl;
  throw ValueError("unknown loss '" + name + "' (expected ctl, tl, cl or tcl)");
}

std::string metric_loss_name(MetricLoss loss) {
  switch (loss) {
    case MetricLoss::ctl:
      return "ctl";
    case MetricLoss::tl:
      return "tl";
    case MetricLoss::cl:
      return "cl";
    case MetricLoss::tcl:
      return "tcl";
  }
  return "unknown";
}

}  // namespace glgait
