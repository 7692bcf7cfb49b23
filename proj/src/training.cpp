#include "glgait/training.hpp"

#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "glgait/rng.hpp"
#include "json.hpp"

namespace glgait {

using json = nlohmann::json;

double LrSchedule::at(std::size_t iteration) const {
  double lr = start;
  for (auto m : milestones)
    if (iteration >= m) lr *= factor;
  return lr;
}

void LrSchedule::validate() const {
  if (!(start > 0.0) || !std::isfinite(start)) throw ValueError("learning rate must be positive");
  if (!(factor > 0.0) || !std::isfinite(factor)) throw ValueError("learning-rate decay factor must be positive");
  for (std::size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1]) throw ValueError("learning-rate milestones must be strictly increasing");
}

BackboneConfig TrainConfig::toy_backbone() {
  BackboneConfig cfg = BackboneConfig::tiny();
  cfg.capacity = "toy";
  cfg.base_channels = 2;
  cfg.head_dim = 2;
  return cfg;
}

void TrainConfig::validate() const {
  model.validate();
  lr.validate();
  if (batch_identities < 2) throw ValueError("a batch needs at least two identities");
  if (batch_sequences == 0) throw ValueError("sequences per identity in a batch must be positive");
  if (frames == 0 || eval_frames == 0) throw ValueError("frame counts must be positive");
  if (momentum < 0.0 || weight_decay < 0.0) throw ValueError("momentum and weight decay must be non-negative");
}

namespace {

Tensor stack_frames(const std::vector<SilhouetteSequence>& seqs) {
  const std::size_t T = seqs.front().frames, plane = seqs.front().height * seqs.front().width;
  std::vector<double> data;
  data.reserve(seqs.size() * T * plane);
  for (const auto& s : seqs) {
    if (s.frames != T) throw DimensionError("sequences in one batch must have equal length");
    data.insert(data.end(), s.pixels.begin(), s.pixels.end());
  }
  return Tensor({seqs.size(), T, seqs.front().height, seqs.front().width}, std::move(data));
}

double part_distance(const std::vector<double>& a, const std::vector<double>& b, std::size_t parts) {
  const std::size_t d = a.size() / parts;
  double total = 0.0;
  for (std::size_t p = 0; p < parts; ++p) {
    double s = 0.0;
    for (std::size_t i = p * d; i < (p + 1) * d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    total += std::sqrt(s + kDistanceEps);
  }
  return total / double(parts);
}

Var metric_loss(MetricLoss kind, const ForwardOutput& out, const std::vector<std::size_t>& labels,
                const TrainConfig& cfg) {
  const Var& emb = cfg.bn_metric_space ? out.bn_embeddings : out.embeddings;
  switch (kind) {
    case MetricLoss::ctl: return ctl_loss(emb, labels, out.centers, cfg.margin, cfg.center_grad);
    case MetricLoss::tl: return triplet_loss(emb, labels, cfg.margin);
    case MetricLoss::cl: return center_loss(emb, labels, out.centers);
    case MetricLoss::tcl: return triplet_center_loss(emb, labels, out.centers, cfg.margin);
  }
  throw ValueError("unknown metric loss");
}

}  // namespace

std::vector<std::vector<double>> embed_sequences(const Model& model, const std::vector<SilhouetteSequence>& seqs,
                                                 std::size_t eval_frames, bool bn_space) {
  std::vector<std::vector<double>> result(seqs.size());
  constexpr std::size_t kBatch = 8;
  const std::size_t batches = (seqs.size() + kBatch - 1) / kBatch;
  auto work = [&](std::size_t first_batch, std::size_t step) {
    for (std::size_t b = first_batch; b < batches; b += step) {
      std::vector<SilhouetteSequence> chunk;
      for (std::size_t i = b * kBatch; i < std::min(seqs.size(), (b + 1) * kBatch); ++i)
        chunk.push_back(sample_fixed_length(seqs[i], eval_frames, derive_seed(seqs[i].meta.seed, 0xE7A1)));
      Scope scope(model.params(), Mode::eval, model.config().batchnorm, false);
      const ForwardOutput out = model.forward(scope, stack_frames(chunk));
      const Tensor& emb = (bn_space ? out.bn_embeddings : out.embeddings).value();  // [B, parts, d]
      const std::size_t width = emb.numel() / chunk.size();
      for (std::size_t i = 0; i < chunk.size(); ++i)
        result[b * kBatch + i].assign(emb.ptr() + i * width, emb.ptr() + (i + 1) * width);
    }
  };
  const std::size_t threads = std::min(thread_limit(), batches);
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& t : pool) t.join();
  }
  return result;
}

EvalReport evaluate(const Model& model, const SyntheticDataset& ds, std::size_t eval_frames, bool bn_space) {
  const std::size_t parts = model.config().parts;
  const auto emb = embed_sequences(model, ds.sequences, eval_frames, bn_space);
  EvalReport r;

  auto class_distances = [&](const std::vector<std::size_t>& identities, double& intra, double& inter) {
    std::vector<std::size_t> members;
    for (auto id : identities)
      for (auto i : ds.sequences_of(id)) members.push_back(i);
    double si = 0.0, se = 0.0;
    std::size_t ni = 0, ne = 0;
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        const double d = part_distance(emb[members[a]], emb[members[b]], parts);
        if (ds.sequences[members[a]].identity == ds.sequences[members[b]].identity) {
          si += d, ++ni;
        } else {
          se += d, ++ne;
        }
      }
    intra = ni ? si / double(ni) : 0.0;
    inter = ne ? se / double(ne) : 0.0;
  };
  class_distances(ds.train_identities, r.intra_class_distance, r.inter_class_distance);
  double test_inter = 0.0;
  class_distances(ds.test_identities, r.test_intra_class_distance, test_inter);

  std::vector<std::size_t> gallery, probes;
  for (auto id : ds.test_identities) {
    const auto seqs = ds.sequences_of(id);
    const std::size_t half = seqs.size() / 2;
    gallery.insert(gallery.end(), seqs.begin(), seqs.begin() + std::ptrdiff_t(half));
    probes.insert(probes.end(), seqs.begin() + std::ptrdiff_t(half), seqs.end());
  }
  r.gallery = gallery.size();
  r.probes = probes.size();
  if (gallery.empty() || probes.empty()) return r;
  std::size_t hits = 0;
  for (auto p : probes) {
    std::size_t best = gallery.front();
    double best_d = part_distance(emb[p], emb[best], parts);
    for (auto g : gallery) {
      const double d = part_distance(emb[p], emb[g], parts);
      if (d < best_d) best_d = d, best = g;
    }
    hits += ds.sequences[best].identity == ds.sequences[p].identity;
  }
  r.rank1 = 100.0 * double(hits) / double(probes.size());
  return r;
}

TrainResult train(const TrainConfig& cfg, const SyntheticDataset& ds) {
  cfg.validate();
  if (ds.train_identities.size() < cfg.batch_identities)
    throw ValueError("dataset has " + std::to_string(ds.train_identities.size()) + " training identities, batch needs " +
                     std::to_string(cfg.batch_identities));
  std::vector<std::vector<std::size_t>> pools;
  for (auto id : ds.train_identities) {
    pools.push_back(ds.sequences_of(id));
    if (pools.back().size() < cfg.batch_sequences)
      throw ValueError("identity " + std::to_string(id) + " has fewer sequences than the batch needs");
  }

  BackboneConfig mcfg = cfg.model;
  mcfg.num_classes = ds.train_identities.size();
  TrainResult result{Model(mcfg, derive_seed(cfg.seed, 1)), {}, {}};
  Model& model = result.model;
  ParamStore& store = model.params();
  std::map<std::string, std::vector<double>> velocity;
  for (const auto& name : store.names()) velocity[name].assign(store.get(name).numel(), 0.0);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    Rng rng(derive_seed(cfg.seed, 0x7A000000ull + it));
    std::vector<std::size_t> classes(pools.size());
    for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = i;
    std::vector<SilhouetteSequence> batch;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < cfg.batch_identities; ++i) {
      std::swap(classes[i], classes[i + rng.below(classes.size() - i)]);
      std::vector<std::size_t> seqs = pools[classes[i]];
      for (std::size_t j = 0; j < cfg.batch_sequences; ++j) {
        std::swap(seqs[j], seqs[j + rng.below(seqs.size() - j)]);
        batch.push_back(sample_fixed_length(ds.sequences[seqs[j]], cfg.frames, rng.next_u64()));
        labels.push_back(classes[i]);
      }
    }

    Scope scope(store, Mode::train, mcfg.batchnorm, true);
    const ForwardOutput out = model.forward(scope, stack_frames(batch));
    const Var metric = metric_loss(cfg.loss, out, labels, cfg);
    const Var ce = cross_entropy(out.logits, labels);
    const Var total = combined(metric, ce, cfg.alpha, cfg.beta);
    result.losses.push_back({it, metric.value().item(), ce.value().item(), total.value().item()});
    if (!std::isfinite(total.value().item()))
      throw ValueError("training diverged at iteration " + std::to_string(it));

    const Gradients grads = backward(total);
    const double lr = cfg.lr.at(it);
    for (const auto& name : store.names()) {
      const Tensor& w = store.get(name);
      const Tensor g = grads[scope[name]];
      auto& v = velocity[name];
      std::vector<double> next(w.numel());
      for (std::size_t i = 0; i < next.size(); ++i) {
        v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * w[i];
        next[i] = w[i] - lr * v[i];
      }
      store.set(name, Tensor(w.shape(), std::move(next), w.dtype()));
    }
    model.update_running(scope);
  }
  result.eval = evaluate(model, ds, cfg.eval_frames, cfg.bn_metric_space);
  return result;
}

std::string loss_csv(const std::vector<LossRecord>& records, MetricLoss loss) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,l_" << metric_loss_name(loss) << ",l_ce,total\n";
  for (const auto& r : records) out << r.iteration << ',' << r.metric << ',' << r.ce << ',' << r.total << '\n';
  return out.str();
}

std::string eval_json(const EvalReport& r) {
  json j;
  j["rank1"] = r.rank1;
  j["intra_class_distance"] = r.intra_class_distance;
  j["inter_class_distance"] = r.inter_class_distance;
  j["test_intra_class_distance"] = r.test_intra_class_distance;
  j["probes"] = r.probes;
  j["gallery"] = r.gallery;
  return j.dump(2);
}

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
}

std::size_t thread_limit() {
  const char* env = std::getenv("GLT_THREADS");
  if (!env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  return end != env && v > 0 ? std::size_t(v) : 1;
}

}  // namespace glgait
