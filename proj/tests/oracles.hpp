#pragma once

// Brute-force references written with plain loops, shared by the unit tests
// and the acceptance run.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "glgait/attention.hpp"
#include "glgait/tensor.hpp"

namespace glgait::oracle {

using Vec = std::vector<double>;

// Token location: for each token element, the flat index into x [L, T, C].
using Token = std::vector<std::size_t>;
using Group = std::vector<Token>;

// Multi-head attention over explicit token lists, written with plain loops.
inline Vec naive_group_attention(const Tensor& x, const Group& group, const AttentionConfig& cfg,
                          const ProjectionWeights& w, std::vector<std::vector<Vec>>* attn_out = nullptr) {
  const std::size_t N = group.size(), S = group[0].size(), D = cfg.head_dim;
  std::vector<Vec> merged(N, Vec(cfg.heads * D, 0.0));
  if (attn_out) attn_out->assign(cfg.heads, {});
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const Tensor& u = w.uqkv[h];
    std::vector<Vec> q(N, Vec(D)), k(N, Vec(D)), v(N, Vec(D));
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t d = 0; d < D; ++d) {
        double sq = 0, sk = 0, sv = 0;
        for (std::size_t s = 0; s < S; ++s) {
          const double xv = x[group[n][s]];
          sq += xv * u.at({s, d});
          sk += xv * u.at({s, D + d});
          sv += xv * u.at({s, 2 * D + d});
        }
        q[n][d] = sq;
        k[n][d] = sk;
        v[n][d] = sv;
      }
    for (std::size_t i = 0; i < N; ++i) {
      Vec row(N);
      for (std::size_t j = 0; j < N; ++j) {
        double dot = 0;
        for (std::size_t d = 0; d < D; ++d) dot += q[i][d] * k[j][d];
        row[j] = dot / std::sqrt(double(D));
      }
      const double m = *std::max_element(row.begin(), row.end());
      double z = 0;
      for (auto& r : row) z += (r = std::exp(r - m));
      for (auto& r : row) r /= z;
      for (std::size_t d = 0; d < D; ++d) {
        double acc = 0;
        for (std::size_t j = 0; j < N; ++j) acc += row[j] * v[j][d];
        merged[i][h * D + d] = acc;
      }
      if (attn_out) (*attn_out)[h].push_back(row);
    }
  }
  Vec out(x.numel(), 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t s = 0; s < S; ++s) {
      double acc = 0;
      for (std::size_t j = 0; j < cfg.heads * D; ++j) acc += merged[n][j] * w.umsa.at({j, s});
      out[group[n][s]] = acc;
    }
  return out;
}

inline std::vector<Group> oracle_groups(AttentionVariant v, const AttentionConfig& cfg, std::size_t L, std::size_t T) {
  const std::size_t C = cfg.channels, P = cfg.patch_temporal, Pl = cfg.patch_spatial;
  auto flat = [&](std::size_t l, std::size_t t, std::size_t c) { return (l * T + t) * C + c; };
  std::vector<Group> groups;
  switch (v) {
    case AttentionVariant::pgta:
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t p = 0; p < P; ++p) {
          Group g;
          for (std::size_t n = 0; n < T / P; ++n) {
            Token tok;
            for (std::size_t c = 0; c < C; ++c) tok.push_back(flat(l, n * P + p, c));
            g.push_back(tok);
          }
          groups.push_back(g);
        }
      break;
    case AttentionVariant::factorised:
      for (std::size_t l = 0; l < L; ++l) {
        Group g;
        for (std::size_t n = 0; n < T / P; ++n) {
          Token tok;
          for (std::size_t p = 0; p < P; ++p)
            for (std::size_t c = 0; c < C; ++c) tok.push_back(flat(l, n * P + p, c));
          g.push_back(tok);
        }
        groups.push_back(g);
      }
      break;
    case AttentionVariant::mhsa: {
      Group g;
      for (std::size_t m = 0; m < L / Pl; ++m)
        for (std::size_t n = 0; n < T / P; ++n) {
          Token tok;
          for (std::size_t o = 0; o < Pl; ++o)
            for (std::size_t p = 0; p < P; ++p)
              for (std::size_t c = 0; c < C; ++c) tok.push_back(flat(m * Pl + o, n * P + p, c));
          g.push_back(tok);
        }
      groups.push_back(g);
      break;
    }
    case AttentionVariant::mobilevit:
      for (std::size_t o = 0; o < Pl; ++o)
        for (std::size_t p = 0; p < P; ++p) {
          Group g;
          for (std::size_t m = 0; m < L / Pl; ++m)
            for (std::size_t n = 0; n < T / P; ++n) {
              Token tok;
              for (std::size_t c = 0; c < C; ++c) tok.push_back(flat(m * Pl + o, n * P + p, c));
              g.push_back(tok);
            }
          groups.push_back(g);
        }
      break;
  }
  return groups;
}

inline Tensor oracle_forward(AttentionVariant v, const Tensor& x, const AttentionConfig& cfg, const ProjectionWeights& w) {
  const std::size_t L = x.shape()[0], T = x.shape()[1];
  Vec out(x.numel(), 0.0);
  for (const auto& g : oracle_groups(v, cfg, L, T)) {
    Vec part = naive_group_attention(x, g, cfg, w);
    for (const auto& tok : g)
      for (auto idx : tok) out[idx] = part[idx];
  }
  return Tensor(x.shape(), std::move(out));
}

struct Instance {
  AttentionConfig cfg;
  std::size_t L, T;
};

// Random geometry with every extent <= 8 that satisfies the variant's divisibility.
inline Instance random_instance(AttentionVariant v, std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  Instance in;
  in.cfg.heads = pick(1, 3);
  in.cfg.head_dim = pick(1, 5);
  in.cfg.channels = pick(1, 5);
  in.cfg.patch_temporal = pick(1, 4);
  in.cfg.patch_spatial = pick(1, 4);
  in.T = in.cfg.patch_temporal * pick(1, 8 / in.cfg.patch_temporal);
  in.L = v == AttentionVariant::mhsa || v == AttentionVariant::mobilevit
             ? in.cfg.patch_spatial * pick(1, 8 / in.cfg.patch_spatial)
             : pick(1, 8);
  return in;
}

inline std::vector<std::size_t> pk_labels(std::size_t classes, std::size_t per_class) {
  std::vector<std::size_t> y;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) y.push_back(c);
  return y;
}

inline double dist(const Tensor& a, std::size_t ia, const Tensor& b, std::size_t ib, std::size_t p) {
  const std::size_t P = a.shape()[1], d = a.shape()[2];
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double u = a.ptr()[(ia * P + p) * d + i] - b.ptr()[(ib * P + p) * d + i];
    s += u * u;
  }
  return std::sqrt(s + 1e-12);
}

// Enumerates every (anchor, positive, negative) triple explicitly.
inline double oracle_triplet(const Tensor& e, const std::vector<std::size_t>& y, const Tensor* centers, double m) {
  const std::size_t B = e.shape()[0], P = e.shape()[1];
  double total = 0.0;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t a = 0; a < B; ++a) {
      std::vector<double> dp, dn;
      for (std::size_t j = 0; j < B; ++j) {
        if (j == a) continue;
        if (y[j] == y[a])
          dp.push_back(dist(e, a, e, j, p));
        else
          dn.push_back(dist(e, a, e, j, p));
      }
      if (centers) dp.push_back(dist(e, a, *centers, y[a], p));
      for (double q : dp)
        for (double n : dn) total += std::max(q - n + m, 0.0);
    }
  return total / double(B * P);
}

inline double oracle_tcl(const Tensor& e, const std::vector<std::size_t>& y, const Tensor& c, double m) {
  const std::size_t B = e.shape()[0], P = e.shape()[1], K = c.shape()[0];
  double total = 0.0;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t a = 0; a < B; ++a) {
      double nearest = 1e300;
      for (std::size_t k = 0; k < K; ++k)
        if (k != y[a]) nearest = std::min(nearest, dist(e, a, c, k, p));
      total += std::max(dist(e, a, c, y[a], p) - nearest + m, 0.0);
    }
  return total / double(B * P);
}

inline double oracle_center(const Tensor& e, const std::vector<std::size_t>& y, const Tensor& c) {
  const std::size_t B = e.shape()[0], P = e.shape()[1];
  double total = 0.0;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t a = 0; a < B; ++a) {
      const double d = dist(e, a, c, y[a], p);
      total += d * d - 1e-12;
    }
  return total / double(B * P);
}

inline double oracle_ce(const Tensor& z, const std::vector<std::size_t>& y) {
  const std::size_t B = z.shape()[0], P = z.shape()[1], K = z.shape()[2];
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < P; ++p) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += std::exp(z.ptr()[(b * P + p) * K + k]);
      total += std::log(s) - z.ptr()[(b * P + p) * K + y[b]];
    }
  return total / double(B * P);
}

}  // namespace glgait::oracle
