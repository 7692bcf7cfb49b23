#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "glgait/attention.hpp"
#include "glgait/autodiff.hpp"
#include "glgait/serialize.hpp"
#include "glgait/tensor.hpp"

namespace glgait {

struct BackboneConfig {
  std::string capacity = "B";
  std::size_t base_channels = 32;
  std::array<std::size_t, 4> blocks{1, 4, 4, 1};
  /// Stages built from GL-3D blocks; the others use P3D blocks.
  std::array<bool, 4> global_stage{false, false, true, true};
  std::size_t patch_temporal = 3;
  std::size_t heads = 8;
  /// D: head projection dim in every GLTM (the stage-1 width by default).
  std::size_t head_dim = 32;
  /// D_mid of the GLTM temporal conv; 0 means the stage's channel count.
  std::size_t mlp_dim = 0;
  std::size_t parts = 16;
  std::size_t embed_dim = 256;
  std::size_t num_classes = 1;
  bool batchnorm = true;
  /// Input silhouettes are average-pooled by this factor before the stem.
  std::size_t input_pool = 1;
  std::size_t height = 64;
  std::size_t width = 44;

  /// GLGait-B / -L / -H: base channels 32 / 64 / 128.
  static BackboneConfig for_capacity(const std::string& capacity);
  /// Reduced model for desk-scale training.
  static BackboneConfig tiny();

  std::array<std::size_t, 4> stage_channels() const;
  std::string to_json() const;
  static BackboneConfig from_json(const std::string& text);
  void validate() const;
};

/// Ordered named parameters plus batchnorm running statistics.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  const std::vector<std::string>& names() const { return names_; }

  void add_running(const std::string& prefix, const Shape& shape);
  const BatchStats& running(const std::string& prefix) const;
  void set_running(const std::string& prefix, BatchStats stats);
  const std::map<std::string, BatchStats>& all_running() const { return running_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, Tensor> values_;
  std::map<std::string, BatchStats> running_;
};

enum class Mode { train, eval };

/// One forward pass: binds every stored parameter to a graph leaf, applies
/// batchnorm in the requested mode and collects batch statistics and the
/// activation-shape trace.
class Scope {
 public:
  Scope(const ParamStore& store, Mode mode, bool batchnorm, bool requires_grad);

  const Var& operator[](const std::string& name) const;
  /// Replaces the graph leaf of a stored parameter (same shape required).
  void bind(const std::string& name, Var value);
  /// Batchnorm over every axis except 0 with parameters prefix.gamma / prefix.beta;
  /// the identity when batchnorm is disabled.
  Var batchnorm(const Var& x, const std::string& prefix);
  void record(const std::string& label, const Shape& shape);

  Mode mode() const { return mode_; }
  const std::map<std::string, Var>& vars() const { return vars_; }
  const std::map<std::string, BatchStats>& batch_stats() const { return stats_; }
  const std::vector<std::pair<std::string, Shape>>& trace() const { return trace_; }

 private:
  const ParamStore& store_;
  Mode mode_;
  bool batchnorm_;
  std::map<std::string, Var> vars_;
  std::map<std::string, BatchStats> stats_;
  std::vector<std::pair<std::string, Shape>> trace_;
};

// Parameter registration. Weights are drawn deterministically from
// (seed, parameter name).
void add_p3d_params(ParamStore& store, const std::string& prefix, std::size_t cin, std::size_t cout,
                    std::size_t stride, bool batchnorm, std::uint64_t seed);
void add_gltm_params(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t heads,
                     std::size_t head_dim, std::size_t mlp_dim, std::uint64_t seed);
void add_gl3d_params(ParamStore& store, const std::string& prefix, std::size_t cin, std::size_t cout,
                     std::size_t stride, std::size_t heads, std::size_t head_dim, std::size_t mlp_dim, bool batchnorm,
                     std::uint64_t seed);

// Blocks operate on channel-first activations [C, ..., T, H, W] (time is the
// third axis from the end).

/// x1 = R(BN(C2d(x))); x2 = BN(C1d(x1)); x3 = BN(C2d(R(x1 + x2)));
/// out = R(shortcut(x) + x3). Without batchnorm this is exactly
/// x1 = R(C2d(x)); x2 = C1d(x1); x3 = C2d(R(x1 + x2)); out = R(x + x3).
Var p3d_block(Scope& scope, const std::string& prefix, const Var& x, std::size_t stride);

/// x [L, T, C]: x_g = PGTA(x); x_l = R(C1d(x_g + x)); out = x_l U_mlp + x_g.
Var gltm(Scope& scope, const std::string& prefix, const Var& x, const AttentionConfig& cfg);

/// R(BN(C2d(x))) -> [L=B·H·W, T, C] -> GLTM -> back -> BN(C2d) -> + shortcut -> R.
Var gl3d_block(Scope& scope, const std::string& prefix, const Var& x, std::size_t stride,
               const AttentionConfig& cfg);

/// Shortcut used by both block kinds: identity, or 1×1 strided projection + BN
/// when prefix.proj exists.
Var shortcut(Scope& scope, const std::string& prefix, const Var& x, std::size_t stride);

struct ForwardOutput {
  Var features;       // [C, B, T, h, w]
  Var embeddings;     // [B, parts, d], FC output
  Var bn_embeddings;  // [B, parts, d], after BNNeck batchnorm
  Var logits;         // [B, parts, classes]
  Var centers;        // [classes, parts, d], BNNeck classifier rows
};

class Model {
 public:
  Model(const BackboneConfig& cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Average-pools silhouettes [B, T, H, W] by input_pool and adds the
  /// channel axis: [1, B, T, H', W'].
  Tensor prepare_input(const Tensor& silhouettes) const;

  /// Backbone only, on prepared input.
  Var backbone(Scope& scope, const Var& input) const;
  /// TP, HP, per-part FC, BNNeck.
  ForwardOutput head(Scope& scope, const Var& features) const;
  ForwardOutput forward(Scope& scope, const Tensor& silhouettes) const;

  /// Moves running statistics toward the batch statistics of a training pass.
  void update_running(const Scope& scope, double momentum = 0.1);

  AttentionConfig attention_config(std::size_t channels) const;

 private:
  BackboneConfig cfg_;
  ParamStore store_;
};

/// Exact parameter count in millions (batchnorm affine parameters included,
/// running statistics excluded). include_head=false leaves out FC and BNNeck.
double count_params(const Model& model, bool include_head);
std::size_t count_param_values(const Model& model, bool include_head);

/// Per-frame share of (channel, position) cells whose temporal max of the
/// eval-mode backbone features is attained at that frame; ties split equally.
std::vector<double> silhouette_scores(const Model& model, const Tensor& sequence);

/// Checkpoint: every parameter and running statistic in the tensor container,
/// with the config JSON under manifest key "config".
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);
TensorContainer to_container(const Model& model);
Model from_container(const TensorContainer& container);

}  // namespace glgait
