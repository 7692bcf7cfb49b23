#include "glgait/attention.hpp"

#include <cmath>

#include "glgait/flops.hpp"
#include "glgait/rng.hpp"

namespace glgait {

namespace {

void require_positive(const AttentionConfig& cfg) {
  if (cfg.heads == 0 || cfg.head_dim == 0 || cfg.patch_temporal == 0 || cfg.patch_spatial == 0 ||
      cfg.channels == 0)
    throw ValueError("attention config extents must be positive");
}

bool uses_spatial_patches(AttentionVariant v) {
  return v == AttentionVariant::mhsa || v == AttentionVariant::mobilevit;
}

void require_finite(const Tensor& t, const char* what) {
  for (double v : t.data())
    if (!std::isfinite(v)) throw ValueError(std::string("non-finite value in ") + what);
}

// [L, T, C] -> [G, N, S]
Var to_tokens(AttentionVariant v, const Var& x, const AttentionConfig& cfg) {
  const std::size_t L = x.shape()[0], T = x.shape()[1], C = x.shape()[2];
  const std::size_t P = cfg.patch_temporal, Pl = cfg.patch_spatial, n = T / P;
  switch (v) {
    case AttentionVariant::pgta:
      return reshape(permute(reshape(x, {L, n, P, C}), {0, 2, 1, 3}), {L * P, n, C});
    case AttentionVariant::factorised:
      return reshape(x, {L, n, P * C});
    case AttentionVariant::mhsa:
      return reshape(permute(reshape(x, {L / Pl, Pl, n, P, C}), {0, 2, 1, 3, 4}), {1, (L / Pl) * n, Pl * P * C});
    case AttentionVariant::mobilevit:
      return reshape(permute(reshape(x, {L / Pl, Pl, n, P, C}), {1, 3, 0, 2, 4}), {Pl * P, (L / Pl) * n, C});
  }
  throw ValueError("unknown attention variant");
}

// [G, N, S] -> [L, T, C]
Var from_tokens(AttentionVariant v, const Var& y, const AttentionConfig& cfg, std::size_t L, std::size_t T) {
  const std::size_t C = cfg.channels, P = cfg.patch_temporal, Pl = cfg.patch_spatial, n = T / P;
  switch (v) {
    case AttentionVariant::pgta:
      return reshape(permute(reshape(y, {L, P, n, C}), {0, 2, 1, 3}), {L, T, C});
    case AttentionVariant::factorised:
      return reshape(y, {L, T, C});
    case AttentionVariant::mhsa:
      return reshape(permute(reshape(y, {L / Pl, n, Pl, P, C}), {0, 2, 1, 3, 4}), {L, T, C});
    case AttentionVariant::mobilevit:
      return reshape(permute(reshape(y, {Pl, P, L / Pl, n, C}), {2, 0, 3, 1, 4}), {L, T, C});
  }
  throw ValueError("unknown attention variant");
}

Shape trace_shape(AttentionVariant v, const AttentionConfig& cfg, std::size_t L, std::size_t T) {
  const std::size_t P = cfg.patch_temporal, Pl = cfg.patch_spatial, n = T / P;
  switch (v) {
    case AttentionVariant::pgta:
      return {L, P, n, n};
    case AttentionVariant::factorised:
      return {L, n, n};
    case AttentionVariant::mhsa:
      return {(L / Pl) * n, (L / Pl) * n};
    case AttentionVariant::mobilevit:
      return {Pl, P, (L / Pl) * n, (L / Pl) * n};
  }
  throw ValueError("unknown attention variant");
}

}  // namespace

std::string variant_name(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::pgta:
      return "pgta";
    case AttentionVariant::mhsa:
      return "mhsa";
    case AttentionVariant::factorised:
      return "factorised";
    case AttentionVariant::mobilevit:
      return "mobilevit";
  }
  return "unknown";
}

AttentionVariant parse_variant(const std::string& name) {
  for (auto v : all_variants())
    if (variant_name(v) == name) return v;
  throw ValueError("unknown attention variant '" + name + "' (expected pgta, mhsa, factorised or mobilevit)");
}

std::size_t token_size(AttentionVariant v, const AttentionConfig& cfg) {
  switch (v) {
    case AttentionVariant::pgta:
    case AttentionVariant::mobilevit:
      return cfg.channels;
    case AttentionVariant::factorised:
      return cfg.patch_temporal * cfg.channels;
    case AttentionVariant::mhsa:
      return cfg.patch_spatial * cfg.patch_temporal * cfg.channels;
  }
  throw ValueError("unknown attention variant");
}

void validate_geometry(AttentionVariant v, const AttentionConfig& cfg, std::size_t L, std::size_t T) {
  require_positive(cfg);
  if (L == 0 || T == 0) throw DimensionError("attention input extents must be positive");
  if (T % cfg.patch_temporal != 0)
    throw DimensionError("T=" + std::to_string(T) + " is not divisible by P=" + std::to_string(cfg.patch_temporal));
  if (uses_spatial_patches(v) && L % cfg.patch_spatial != 0)
    throw DimensionError("L=" + std::to_string(L) + " is not divisible by P_l=" + std::to_string(cfg.patch_spatial));
}

void validate_weights(AttentionVariant v, const AttentionConfig& cfg, const ProjectionWeights& w) {
  require_positive(cfg);
  const std::size_t S = token_size(v, cfg), D = cfg.head_dim;
  if (w.uqkv.size() != cfg.heads)
    throw DimensionError("expected " + std::to_string(cfg.heads) + " U_qkv matrices, got " +
                         std::to_string(w.uqkv.size()));
  for (const auto& u : w.uqkv) {
    if (u.shape() != Shape{S, 3 * D})
      throw DimensionError("U_qkv has shape " + to_string(u.shape()) + ", expected " + to_string({S, 3 * D}));
    require_finite(u, "U_qkv");
  }
  if (w.umsa.shape() != Shape{cfg.heads * D, S})
    throw DimensionError("U_msa has shape " + to_string(w.umsa.shape()) + ", expected " +
                         to_string({cfg.heads * D, S}));
  require_finite(w.umsa, "U_msa");
}

ProjectionWeights init_projection(AttentionVariant v, const AttentionConfig& cfg, std::uint64_t seed, DType dtype) {
  require_positive(cfg);
  const std::size_t S = token_size(v, cfg), D = cfg.head_dim;
  Rng rng(seed);
  auto gaussian = [&](Shape shape, double std) {
    std::vector<double> data(numel(shape));
    for (auto& x : data) x = std * rng.normal();
    return Tensor(std::move(shape), std::move(data), dtype);
  };
  ProjectionWeights w;
  for (std::size_t i = 0; i < cfg.heads; ++i) w.uqkv.push_back(gaussian({S, 3 * D}, 1.0 / std::sqrt(double(S))));
  w.umsa = gaussian({cfg.heads * D, S}, 1.0 / std::sqrt(double(cfg.heads * D)));
  return w;
}

Var attention_forward(AttentionVariant v, const Var& x, const AttentionConfig& cfg, const std::vector<Var>& uqkv,
                      const Var& umsa, AttentionTrace* trace) {
  if (x.shape().size() != 3)
    throw DimensionError("attention input must be [L, T, C], got " + to_string(x.shape()));
  const std::size_t L = x.shape()[0], T = x.shape()[1];
  if (x.shape()[2] != cfg.channels)
    throw DimensionError("attention input has " + std::to_string(x.shape()[2]) + " channels, config expects " +
                         std::to_string(cfg.channels));
  validate_geometry(v, cfg, L, T);
  ProjectionWeights shapes;
  for (const auto& u : uqkv) shapes.uqkv.push_back(u.value());
  shapes.umsa = umsa.value();
  validate_weights(v, cfg, shapes);

  const std::size_t D = cfg.head_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));
  const Var tokens = to_tokens(v, x, cfg);
  if (trace) trace->attention.clear();

  std::vector<Var> heads;
  heads.reserve(cfg.heads);
  for (std::size_t i = 0; i < cfg.heads; ++i) {
    const Var qkv = matmul(tokens, uqkv[i]);
    const Var q = slice(qkv, 2, 0, D);
    const Var k = slice(qkv, 2, D, D);
    const Var val = slice(qkv, 2, 2 * D, D);
    Var scores;
    {
      CountedRegion region;
      scores = matmul(q, k, false, true);
    }
    const Var a = softmax(scale(scores, inv_sqrt_d), 2);
    if (trace) trace->attention.push_back(a.value().reshape(trace_shape(v, cfg, L, T)));
    CountedRegion region;
    heads.push_back(matmul(a, val));
  }
  const Var merged = cfg.heads == 1 ? heads[0] : concat(heads, 2);
  return from_tokens(v, matmul(merged, umsa), cfg, L, T);
}

Tensor attention_forward(AttentionVariant v, const Tensor& x, const AttentionConfig& cfg, const ProjectionWeights& w,
                         AttentionTrace* trace) {
  std::vector<Var> uqkv;
  for (const auto& u : w.uqkv) uqkv.push_back(constant(u));
  return attention_forward(v, constant(x), cfg, uqkv, constant(w.umsa), trace).value();
}

Tensor pgta_forward(const Tensor& x, const AttentionConfig& cfg, const ProjectionWeights& w, AttentionTrace* trace) {
  return attention_forward(AttentionVariant::pgta, x, cfg, w, trace);
}

Tensor mhsa_spatiotemporal_forward(const Tensor& x, const AttentionConfig& cfg, const ProjectionWeights& w,
                                   AttentionTrace* trace) {
  return attention_forward(AttentionVariant::mhsa, x, cfg, w, trace);
}

Tensor factorised_temporal_forward(const Tensor& x, const AttentionConfig& cfg, const ProjectionWeights& w,
                                   AttentionTrace* trace) {
  return attention_forward(AttentionVariant::factorised, x, cfg, w, trace);
}

Tensor mobilevit_attention_forward(const Tensor& x, const AttentionConfig& cfg, const ProjectionWeights& w,
                                   AttentionTrace* trace) {
  return attention_forward(AttentionVariant::mobilevit, x, cfg, w, trace);
}

void store_weights(TensorContainer& c, AttentionVariant v, const ProjectionWeights& w) {
  const std::string prefix = "attn/" + variant_name(v) + "/";
  for (std::size_t i = 0; i < w.uqkv.size(); ++i)
    c.tensors.emplace_back(prefix + "head" + std::to_string(i) + "/Uqkv", w.uqkv[i]);
  c.tensors.emplace_back(prefix + "Umsa", w.umsa);
}

ProjectionWeights load_weights(const TensorContainer& c, AttentionVariant v, const AttentionConfig& cfg) {
  const std::string prefix = "attn/" + variant_name(v) + "/";
  ProjectionWeights w;
  for (std::size_t i = 0; i < cfg.heads; ++i) w.uqkv.push_back(c.get(prefix + "head" + std::to_string(i) + "/Uqkv"));
  w.umsa = c.get(prefix + "Umsa");
  validate_weights(v, cfg, w);
  return w;
}

}  // namespace glgait
