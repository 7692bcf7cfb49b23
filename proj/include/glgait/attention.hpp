#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glgait/autodiff.hpp"
#include "glgait/serialize.hpp"
#include "glgait/tensor.hpp"

namespace glgait {

enum class AttentionVariant { pgta, mhsa, factorised, mobilevit };

std::string variant_name(AttentionVariant v);
/// Parses "pgta", "mhsa", "factorised", "mobilevit".
AttentionVariant parse_variant(const std::string& name);
inline const std::vector<AttentionVariant>& all_variants() {
  static const std::vector<AttentionVariant> v{AttentionVariant::pgta, AttentionVariant::mhsa,
                                                AttentionVariant::factorised, AttentionVariant::mobilevit};
  return v;
}

struct AttentionConfig {
  std::size_t heads = 4;
  std::size_t head_dim = 32;
  std::size_t patch_temporal = 3;
  std::size_t patch_spatial = 4;
  std::size_t channels = 32;
};

/// Number of reals in one token for a variant:
///   pgta, mobilevit: C;  factorised: P·C;  mhsa: P_l·P·C.
std::size_t token_size(AttentionVariant v, const AttentionConfig& cfg);

/// Throws DimensionError when (L, T) is incompatible with the variant's
/// patching (T mod P, and L mod P_l for the spatial baselines).
void validate_geometry(AttentionVariant v, const AttentionConfig& cfg, std::size_t L, std::size_t T);

/// U_qkv per head: S×3D (columns q | k | v); U_msa: k·D×S, where S is the
/// variant's token size.
struct ProjectionWeights {
  std::vector<Tensor> uqkv;
  Tensor umsa;
};

void validate_weights(AttentionVariant v, const AttentionConfig& cfg, const ProjectionWeights& w);

/// Gaussian init with std 1/sqrt(fan_in), deterministic in the seed.
ProjectionWeights init_projection(AttentionVariant v, const AttentionConfig& cfg, std::uint64_t seed,
                                  DType dtype = DType::f64);

/// Token layout. With t = n·P + p and l = m·P_l + o:
///   pgta       lane (l, p), tokens n, token = x[l, nP+p, :]
///   factorised group l, tokens n, token element (p, c) at p·C + c
///   mhsa       one group, tokens (m, n), element (o, p, c) at (o·P + p)·C + c
///   mobilevit  group (o, p), tokens (m, n), token = x[mP_l+o, nP+p, :]
/// Attention matrices per head: pgta (L, P, T/P, T/P); factorised
/// (L, T/P, T/P); mhsa (N, N); mobilevit (P_l, P, N', N') with
/// N' = L·T/(P_l·P).
struct AttentionTrace {
  std::vector<Tensor> attention;  // one per head
};

/// Differentiable forward of any variant on x [L, T, C]. The score (q kᵀ)
/// and apply (A v) products run inside a CountedRegion so an active
/// MultiplyCounter sees exactly those multiplies.
Var attention_forward(AttentionVariant v, const Var& x, const AttentionConfig& cfg, const std::vector<Var>& uqkv,
                      const Var& umsa, AttentionTrace* trace = nullptr);

Tensor attention_forward(AttentionVariant v, const Tensor& x, const AttentionConfig& cfg,
                         const ProjectionWeights& w, AttentionTrace* trace = nullptr);

Tensor pgta_forward(const Tensor& x, const AttentionConfig& cfg, const ProjectionWeights& w,
                    AttentionTrace* trace = nullptr);
Tensor mhsa_spatiotemporal_forward(const Tensor& x, const AttentionConfig& cfg, const ProjectionWeights& w,
                                   AttentionTrace* trace = nullptr);
Tensor factorised_temporal_forward(const Tensor& x, const AttentionConfig& cfg, const ProjectionWeights& w,
                                   AttentionTrace* trace = nullptr);
Tensor mobilevit_attention_forward(const Tensor& x, const AttentionConfig& cfg, const ProjectionWeights& w,
                                   AttentionTrace* trace = nullptr);

/// Stores weights as attn/{variant}/head{i}/Uqkv and attn/{variant}/Umsa.
void store_weights(TensorContainer& c, AttentionVariant v, const ProjectionWeights& w);
ProjectionWeights load_weights(const TensorContainer& c, AttentionVariant v, const AttentionConfig& cfg);

}  // namespace glgait
