#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "glgait/attention.hpp"
#include "glgait/network.hpp"

namespace glgait {

/// Analytic and counted costs of one attention variant. P is the temporal
/// patch size, Pl the spatial one (used by mhsa and mobilevit only). Counts
/// are per head; mults_empirical covers all heads, score and apply products.
struct ComplexityReport {
  std::string variant;
  std::size_t L = 0, T = 0, C = 0, D = 0, P = 0, Pl = 0;
  std::size_t heads = 1;
  std::size_t token_size = 0;
  std::uint64_t mem_analytic = 0;         // weight-matrix entries: token size x D
  std::uint64_t com_analytic = 0;         // score multiplies: tokens^2 x D summed over groups
  std::uint64_t projection_analytic = 0;  // L T C D, identical for every variant
  std::uint64_t activation_memory = 0;    // attention-matrix entries
  std::int64_t information_loss = 0;      // token size - D
  std::string mem_form, com_form, information_loss_form;
  std::optional<std::uint64_t> mults_empirical;

  /// Score plus apply multiplies over all heads: 2 x heads x com_analytic.
  std::uint64_t mults_analytic() const { return 2 * heads * com_analytic; }
};

ComplexityReport analytic_attention_cost(AttentionVariant variant, std::size_t L, std::size_t T, std::size_t C,
                                         std::size_t D, std::size_t P, std::size_t Pl, std::size_t heads = 1);

/// Runs the variant on a random [L, T, C] input under a MultiplyCounter and
/// returns the score and apply multiplies.
std::uint64_t empirical_flop_count(AttentionVariant variant, std::size_t L, std::size_t T, std::size_t C,
                                   std::size_t D, std::size_t P, std::size_t Pl, std::size_t heads = 1,
                                   std::uint64_t seed = 0);

/// Analytic report with mults_empirical filled in.
ComplexityReport measure_attention(AttentionVariant variant, std::size_t L, std::size_t T, std::size_t C,
                                   std::size_t D, std::size_t P, std::size_t Pl, std::size_t heads = 1,
                                   std::uint64_t seed = 0);

/// Head dim equal to the token size, as in the paper's loss-free setting:
/// mhsa Pl P C, pgta and factorised P C, mobilevit C.
std::size_t lossless_head_dim(AttentionVariant variant, std::size_t C, std::size_t P, std::size_t Pl);

std::string complexity_csv(const std::vector<ComplexityReport>& rows);
std::string complexity_json(const std::vector<ComplexityReport>& rows);

struct TemporalLayer {
  enum class Kind { conv, pool, global };
  Kind kind = Kind::conv;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};

/// Temporal structure of a network: convolutions and average pools over T
/// (zero padding kernel/2), and global layers that mix every frame.
struct ArchDescriptor {
  std::vector<TemporalLayer> layers;

  void validate() const;
  /// {"layers": [{"type": "conv", "k": 3, "s": 1}, {"type": "pool", ...},
  /// {"type": "global"}]}
  std::string to_json() const;
  static ArchDescriptor from_json(const std::string& text);
};

inline constexpr std::size_t kUnboundedTrf = std::numeric_limits<std::size_t>::max();

/// r <- r + (k - 1) * jump, jump <- jump * s; kUnboundedTrf after a global layer.
std::size_t trf_analytic(const ArchDescriptor& arch);

/// Builds the stack with random weights on `channels` channels, perturbs each
/// input frame and returns the span of input frames that change the centre
/// output frame by more than 1e-9. Returns T when every frame does and the
/// stack has a global layer; throws ValueError when the window reaches the
/// sequence boundary otherwise.
std::size_t trf_empirical(const ArchDescriptor& arch, std::size_t T, std::uint64_t seed = 0,
                          std::size_t channels = 2);

/// Temporal layers of a backbone: one k=3 conv per P3D block, one global
/// layer per GL-3D block (its temporal conv follows the attention).
ArchDescriptor arch_from_backbone(const BackboneConfig& cfg);

/// Row t: which backbone output frames change by more than 1e-9 when input
/// frame t of a random sequence is perturbed (eval mode).
using InfluenceMatrix = std::vector<std::vector<bool>>;
InfluenceMatrix temporal_influence(const Model& model, std::size_t T, std::uint64_t seed,
                                   const std::vector<std::size_t>& input_frames);

/// Output frames changed by perturbing the centre input frame; throws
/// ValueError when the window reaches a boundary without covering every frame.
std::size_t trf_empirical(const Model& model, std::size_t T, std::uint64_t seed = 0);

/// True when every input frame influences every output frame.
bool full_temporal_connectivity(const Model& model, std::size_t T, std::uint64_t seed = 0);

}  // namespace glgait
