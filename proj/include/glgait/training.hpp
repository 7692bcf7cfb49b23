#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glgait/losses.hpp"
#include "glgait/network.hpp"
#include "glgait/synthetic.hpp"

namespace glgait {

/// Step schedule: start * factor^(number of milestones passed).
struct LrSchedule {
  double start = 0.01;
  double factor = 0.1;
  std::vector<std::size_t> milestones{667, 1333, 1667};

  double at(std::size_t iteration) const;
  void validate() const;
};

struct TrainConfig {
  BackboneConfig model = toy_backbone();
  MetricLoss loss = MetricLoss::ctl;
  double margin = 0.2;
  double alpha = 1.0;
  double beta = 1.0;
  bool center_grad = true;
  /// Metric losses and evaluation on the BNNeck-normalized embeddings (the
  /// classifier's input space, where the centers live) instead of the FC
  /// output.
  bool bn_metric_space = false;
  std::size_t iterations = 2000;
  std::size_t batch_identities = 4;
  std::size_t batch_sequences = 2;
  std::size_t frames = 15;
  /// Frames per sequence at evaluation.
  std::size_t eval_frames = 30;
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;

  /// Reduced backbone used for desk-scale training.
  static BackboneConfig toy_backbone();
  void validate() const;
};

struct LossRecord {
  std::size_t iteration = 0;
  double metric = 0.0;
  double ce = 0.0;
  double total = 0.0;
};

struct EvalReport {
  double rank1 = 0.0;                  // percent, probes = second half of each test identity's sequences
  double intra_class_distance = 0.0;   // training identities
  double inter_class_distance = 0.0;   // training identities
  double test_intra_class_distance = 0.0;
  std::size_t probes = 0;
  std::size_t gallery = 0;

  bool operator==(const EvalReport&) const = default;
};

struct TrainResult {
  Model model;
  std::vector<LossRecord> losses;
  EvalReport eval;
};

/// Per-sequence embeddings [parts * d] of the eval-mode model on
/// eval_frames frames sampled with a fixed seed.
std::vector<std::vector<double>> embed_sequences(const Model& model, const std::vector<SilhouetteSequence>& seqs,
                                                 std::size_t eval_frames, bool bn_space = true);

/// Rank-1 by Euclidean nearest neighbour over concatenated part embeddings;
/// distances are the per-part Euclidean distance averaged over parts.
EvalReport evaluate(const Model& model, const SyntheticDataset& ds, std::size_t eval_frames, bool bn_space = true);

/// Identity-by-sequence batches, SGD with momentum and weight decay on every
/// parameter, alpha * metric + beta * CE.
TrainResult train(const TrainConfig& cfg, const SyntheticDataset& ds);

/// iteration,l_<metric>,l_ce,total
std::string loss_csv(const std::vector<LossRecord>& records, MetricLoss loss);
std::string eval_json(const EvalReport& report);

/// Keeps large activation buffers in the heap instead of fresh mappings.
void tune_allocator();

/// GLT_THREADS when set and positive, otherwise 1.
std::size_t thread_limit();

}  // namespace glgait
