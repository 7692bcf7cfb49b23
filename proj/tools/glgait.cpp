#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "glgait/analysis.hpp"
#include "glgait/autodiff.hpp"
#include "glgait/network.hpp"
#include "glgait/rng.hpp"
#include "glgait/serialize.hpp"
#include "glgait/synthetic.hpp"
#include "glgait/training.hpp"
#include "glgait/verification.hpp"

using namespace glgait;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw UsageError("cannot write " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Writes to `path`, or to stdout when it is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
  } else {
    write_text(path, text);
  }
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string op;
  std::string inject;
  std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (!a.op.empty()) {
    const auto& names = gradcheck_case_names();
    if (std::find(names.begin(), names.end(), a.op) == names.end()) throw UsageError("unknown op '" + a.op + "'");
  }
  fault::inject_adjoint_sign_flip(a.inject);
  const auto results = run_gradcheck_suite(a.op, a.seed);
  fault::inject_adjoint_sign_flip("");
  bool ok = true;
  std::cout << "op,max_rel_error,compared,verdict\n";
  for (const auto& r : results) {
    const bool pass = r.max_rel_error < kGradCheckTolerance;
    ok = ok && pass;
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", r.max_rel_error);
    std::cout << r.name << ',' << err << ',' << r.compared << ',' << (pass ? "PASS" : "FAIL") << '\n';
  }
  return ok ? kOk : kFail;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::size_t L = 192, T = 30, C = 2, D = 0, P = 3, Pl = 4, heads = 1;
  std::vector<std::string> variants;
  std::string format = "csv";
  std::string out;
  std::uint64_t seed = 0;
};

int cmd_bench_attn(const BenchArgs& a) {
  std::vector<AttentionVariant> variants;
  if (a.variants.empty()) {
    variants = all_variants();
  } else {
    for (const auto& v : a.variants) variants.push_back(parse_variant(v));
  }
  std::vector<ComplexityReport> rows;
  for (auto v : variants) {
    const std::size_t D = a.D ? a.D : lossless_head_dim(v, a.C, a.P, a.Pl);
    rows.push_back(measure_attention(v, a.L, a.T, a.C, D, a.P, a.Pl, a.heads, a.seed));
  }
  emit(a.out, a.format == "json" ? complexity_json(rows) + "\n" : complexity_csv(rows));

  const ComplexityReport *mhsa = nullptr, *pgta = nullptr;
  for (const auto& r : rows) {
    if (r.variant == "mhsa") mhsa = &r;
    if (r.variant == "pgta") pgta = &r;
  }
  if (!mhsa || !pgta) return kOk;
  for (const auto* r : {mhsa, pgta})
    if (*r->mults_empirical != r->mults_analytic())
      throw std::logic_error("counted multiplies of " + r->variant + " differ from the closed form");
  // MHSA/PGTA = L / (Pl P) with lossless dims; L / (Pl^2 P) x D_M / D_P in general.
  const std::uint64_t num = *mhsa->mults_empirical, den = *pgta->mults_empirical;
  const std::uint64_t expect_num = std::uint64_t(a.L) * mhsa->D, expect_den = std::uint64_t(a.Pl) * a.Pl * a.P * pgta->D;
  const bool pass = num * expect_den == den * expect_num;
  std::cerr << "ratio mhsa/pgta " << fixed(double(num) / double(den), 2) << " expected "
            << fixed(double(expect_num) / double(expect_den), 2) << ' ' << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kOk : kFail;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  DatasetConfig cfg;
  std::string out;
};

int cmd_gen_data(const GenArgs& a) {
  const auto ds = generate_dataset(a.cfg);
  save_dataset(ds, a.out);
  std::cout << "sequences," << ds.sequences.size() << "\nchecksum," << dataset_checksum(ds) << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

BackboneConfig backbone_for(const std::string& capacity) {
  if (capacity == "toy") return TrainConfig::toy_backbone();
  if (capacity == "tiny") return BackboneConfig::tiny();
  return BackboneConfig::for_capacity(capacity);
}

struct TrainArgs {
  std::string dataset;
  std::string out = ".";
  std::string capacity = "toy";
  std::string loss = "ctl";
  std::uint64_t seed = 0;
  std::size_t iters = 2000;
  double lr = 0.0;
  double lr_factor = 0.0;
  std::vector<std::size_t> milestones;
  std::string batch;
  std::size_t frames = 0;
  std::size_t eval_frames = 0;
};

// "PxK": P identities with K sequences each.
std::pair<std::size_t, std::size_t> parse_batch(const std::string& spec) {
  const auto x = spec.find('x');
  std::size_t p = 0, k = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument(spec);
    p = std::stoul(spec.substr(0, x));
    k = std::stoul(spec.substr(x + 1));
  } catch (const std::exception&) {
    throw UsageError("batch spec must look like 4x2, got '" + spec + "'");
  }
  return {p, k};
}

int cmd_train_toy(const TrainArgs& a) {
  if (!fs::exists(a.dataset)) throw UsageError("dataset '" + a.dataset + "' not found");
  TrainConfig cfg;
  cfg.model = backbone_for(a.capacity);
  cfg.loss = parse_metric_loss(a.loss);
  cfg.seed = a.seed;
  cfg.iterations = a.iters;
  if (a.lr > 0.0) cfg.lr.start = a.lr;
  if (a.lr_factor > 0.0) cfg.lr.factor = a.lr_factor;
  if (!a.milestones.empty()) {
    cfg.lr.milestones = a.milestones;
  } else {
    // Default schedule shape: decays at 1/3, 2/3 and 5/6 of the run.
    auto& ms = cfg.lr.milestones;
    for (auto& m : ms) m = (m * a.iters + 1000) / 2000;
    ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
  }
  if (!a.batch.empty()) std::tie(cfg.batch_identities, cfg.batch_sequences) = parse_batch(a.batch);
  if (a.frames) cfg.frames = a.frames;
  if (a.eval_frames) cfg.eval_frames = a.eval_frames;

  const auto ds = load_dataset(a.dataset);
  const auto result = train(cfg, ds);
  fs::create_directories(a.out);
  save_checkpoint(result.model, (fs::path(a.out) / "checkpoint.glg").string());
  write_text((fs::path(a.out) / "loss.csv").string(), loss_csv(result.losses, cfg.loss));
  write_text((fs::path(a.out) / "eval.json").string(), eval_json(result.eval) + "\n");
  std::cout << "loss,first," << result.losses.front().total << ",last," << result.losses.back().total << '\n'
            << "rank1," << result.eval.rank1 << "\nintra_class_distance," << result.eval.intra_class_distance << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrfArgs {
  std::string file;
  std::size_t T = 0;
  std::uint64_t seed = 0;
};

int cmd_trf(const TrfArgs& a) {
  const auto arch = ArchDescriptor::from_json(read_text(a.file));
  const std::size_t analytic = trf_analytic(arch);
  const bool unbounded = analytic == kUnboundedTrf;
  std::size_t downsample = 1;
  for (const auto& l : arch.layers) downsample *= l.stride;
  const std::size_t T = a.T ? a.T : unbounded ? 128 : 2 * analytic + 4 * downsample + 1;
  const std::size_t empirical = trf_empirical(arch, T, a.seed);
  std::cout << "trf_analytic,trf_empirical,T\n"
            << (unbounded ? std::string("unbounded") : std::to_string(analytic)) << ',' << empirical << ',' << T << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct ParamsArgs {
  std::string capacity;
  bool include_head = false;
};

int cmd_params(const ParamsArgs& a) {
  BackboneConfig cfg = backbone_for(a.capacity);
  const Model model(cfg, 0);
  const double m = count_params(model, a.include_head);
  std::cout << "capacity,params_m,reported_m,deviation_pct,verdict\n" << a.capacity << ',' << fixed(m, 4);
  const std::map<std::string, double> reported{{"B", 3.58}, {"L", 14.28}, {"H", 57.04}};
  const auto it = reported.find(a.capacity);
  if (a.include_head || it == reported.end()) {
    std::cout << ",,,\n";
    return kOk;
  }
  const double dev = 100.0 * (m / it->second - 1.0);
  const bool pass = std::abs(dev) <= 5.0;
  std::cout << ',' << it->second << ',' << fixed(dev, 2) << ',' << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kOk : kFail;
}

// ---------------------------------------------------------------------------

struct ScoreArgs {
  std::string checkpoint;
  std::string dataset;
  std::size_t index = 0;
  bool probe = false;
  std::size_t identity = 0;
  std::size_t frames = 30;
  std::size_t start = 12;
  std::size_t length = 6;
  std::uint64_t seed = 0;
};

int cmd_score(const ScoreArgs& a) {
  const Model model = load_checkpoint(a.checkpoint);
  SilhouetteSequence seq;
  std::vector<std::size_t> source;
  if (a.probe) {
    seq = generate_probe_sequence(identity_params(a.seed, a.identity), a.frames, a.start, a.length);
    for (std::size_t t = 0; t < a.frames; ++t) source.push_back(t);
  } else {
    if (a.dataset.empty()) throw UsageError("score needs --dataset or --probe");
    const auto ds = load_dataset(a.dataset);
    if (a.index >= ds.sequences.size())
      throw UsageError("sequence index " + std::to_string(a.index) + " out of range (" +
                       std::to_string(ds.sequences.size()) + " sequences)");
    // Same fixed-length sample as evaluation.
    const auto& full = ds.sequences[a.index];
    const std::uint64_t sample_seed = derive_seed(full.meta.seed, 0xE7A1);
    source = sample_indices(full.frames, a.frames, sample_seed);
    seq = sample_fixed_length(full, a.frames, sample_seed);
  }
  const auto scores = silhouette_scores(model, seq.to_tensor());
  std::ostringstream out;
  out.precision(17);
  out << "frame,source_frame,score\n";
  for (std::size_t t = 0; t < scores.size(); ++t) out << t << ',' << source[t] << ',' << scores[t] << '\n';
  std::cout << out.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"GLGait building blocks: verification, complexity and TRF analysis, toy training"};
  app.require_subcommand(1);

  GradcheckArgs ga;
  auto* gradcheck = app.add_subcommand("gradcheck", "Central-difference gradient check of every op, block and loss");
  gradcheck->add_option("--op", ga.op, "Run a single case");
  gradcheck->add_option("--inject-fault", ga.inject, "Negate the adjoint of this op (self-test of the checker)");
  gradcheck->add_option("--seed", ga.seed);

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench-attn", "Analytic and counted attention costs per variant");
  bench->add_option("--L", ba.L, "Spatial extent")->capture_default_str();
  bench->add_option("--T", ba.T, "Frames")->capture_default_str();
  bench->add_option("--C", ba.C, "Channels")->capture_default_str();
  bench->add_option("--D", ba.D, "Head dim (0: each variant's token size)")->capture_default_str();
  bench->add_option("--P", ba.P, "Temporal patch")->capture_default_str();
  bench->add_option("--Pl", ba.Pl, "Spatial patch")->capture_default_str();
  bench->add_option("--heads", ba.heads)->capture_default_str();
  bench->add_option("--variant", ba.variants, "pgta, mhsa, factorised, mobilevit (repeatable)");
  bench->add_option("--format", ba.format)->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
  bench->add_option("--out", ba.out, "Output file (stdout when omitted)");
  bench->add_option("--seed", ba.seed);

  GenArgs gn;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic silhouette corpus");
  gen->add_option("--out", gn.out)->required();
  gen->add_option("--seed", gn.cfg.seed);
  gen->add_option("--train-ids", gn.cfg.train_identities)->capture_default_str();
  gen->add_option("--test-ids", gn.cfg.test_identities)->capture_default_str();
  gen->add_option("--seqs", gn.cfg.sequences_per_identity, "Sequences per identity")->capture_default_str();
  gen->add_option("--frames", gn.cfg.frames)->capture_default_str();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train-toy", "Train a reduced backbone on a synthetic corpus");
  train_cmd->add_option("--dataset", ta.dataset)->required();
  train_cmd->add_option("--out", ta.out, "Directory for checkpoint.glg, loss.csv, eval.json")->capture_default_str();
  train_cmd->add_option("--capacity", ta.capacity, "toy, tiny, B, L or H")->capture_default_str();
  train_cmd->add_option("--loss", ta.loss)->check(CLI::IsMember({"ctl", "tl", "cl", "tcl"}))->capture_default_str();
  train_cmd->add_option("--seed", ta.seed);
  train_cmd->add_option("--iters", ta.iters)->capture_default_str();
  train_cmd->add_option("--lr", ta.lr, "Initial learning rate");
  train_cmd->add_option("--lr-factor", ta.lr_factor, "Decay factor at each milestone");
  train_cmd->add_option("--milestones", ta.milestones, "Decay iterations (default: 1/3, 2/3, 5/6 of --iters)");
  train_cmd->add_option("--batch", ta.batch, "Identities x sequences, e.g. 4x2");
  train_cmd->add_option("--frames", ta.frames, "Training frames per sequence");
  train_cmd->add_option("--eval-frames", ta.eval_frames);

  TrfArgs fa;
  auto* trf = app.add_subcommand("trf", "Temporal receptive field of an architecture file");
  trf->add_option("arch", fa.file, "JSON: {\"layers\": [{\"type\": \"conv\", \"k\": 3, \"s\": 1}, ...]}")->required();
  trf->add_option("--T", fa.T, "Sequence length for the perturbation measurement");
  trf->add_option("--seed", fa.seed);

  ParamsArgs pa;
  auto* params = app.add_subcommand("params", "Parameter count of a capacity");
  params->add_option("capacity", pa.capacity, "B, L, H, tiny or toy")->required();
  params->add_flag("--include-head", pa.include_head, "Count the FC and BNNeck head too");

  ScoreArgs sa;
  auto* score = app.add_subcommand("score", "Per-frame silhouette scores of a sequence");
  score->add_option("checkpoint", sa.checkpoint)->required();
  score->add_option("--dataset", sa.dataset);
  score->add_option("--index", sa.index, "Sequence index in the dataset");
  score->add_flag("--probe", sa.probe, "Score a generated standing/walking probe sequence instead");
  score->add_option("--identity", sa.identity);
  score->add_option("--frames", sa.frames, "Frames scored (dataset sequences are sampled to this length)")
      ->capture_default_str();
  score->add_option("--start", sa.start, "First walking frame of the probe")->capture_default_str();
  score->add_option("--length", sa.length, "Walking frames of the probe")->capture_default_str();
  score->add_option("--seed", sa.seed, "Corpus seed for the probe identity");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gradcheck) return cmd_gradcheck(ga);
    if (*bench) return cmd_bench_attn(ba);
    if (*gen) return cmd_gen_data(gn);
    if (*train_cmd) return cmd_train_toy(ta);
    if (*trf) return cmd_trf(fa);
    if (*params) return cmd_params(pa);
    if (*score) return cmd_score(sa);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {  // ValueError, DimensionError
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kFail;
  }
  return kUsage;
}
