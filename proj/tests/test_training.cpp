#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "glgait/training.hpp"
#include "test_util.hpp"

using namespace glgait;

namespace {

SyntheticDataset small_dataset() {
  DatasetConfig cfg;
  cfg.train_identities = 4;
  cfg.test_identities = 2;
  cfg.sequences_per_identity = 4;
  cfg.frames = 12;
  cfg.seed = 9;
  return generate_dataset(cfg);
}

TrainConfig short_run() {
  TrainConfig cfg;
  cfg.iterations = 6;
  cfg.frames = 6;
  cfg.eval_frames = 6;
  cfg.batch_identities = 2;
  cfg.lr.milestones = {3, 5};
  return cfg;
}

}  // namespace

TEST(Schedule, StepsDownAtMilestones) {
  LrSchedule s{0.1, 0.5, {10, 20}};
  EXPECT_DOUBLE_EQ(s.at(0), 0.1);
  EXPECT_DOUBLE_EQ(s.at(9), 0.1);
  EXPECT_DOUBLE_EQ(s.at(10), 0.05);
  EXPECT_DOUBLE_EQ(s.at(25), 0.025);
  EXPECT_NO_THROW(s.validate());
  EXPECT_THROW((LrSchedule{0.1, 0.1, {20, 20}}.validate()), ValueError);
  EXPECT_THROW((LrSchedule{0.0, 0.1, {}}.validate()), ValueError);
}

TEST(Training, IsDeterministic) {
  const auto ds = small_dataset();
  const auto a = train(short_run(), ds);
  const auto b = train(short_run(), ds);
  ASSERT_EQ(a.losses.size(), 6u);
  for (std::size_t i = 0; i < a.losses.size(); ++i) EXPECT_EQ(a.losses[i].total, b.losses[i].total);
  EXPECT_EQ(a.eval, b.eval);
  for (const auto& name : a.model.params().names())
    EXPECT_EQ(test::max_abs_diff(a.model.params().get(name), b.model.params().get(name)), 0.0) << name;
  auto other = short_run();
  other.seed = 1;
  EXPECT_NE(train(other, ds).losses.back().total, a.losses.back().total);
}

TEST(Training, RecordsTheCombinedLoss) {
  auto cfg = short_run();
  cfg.alpha = 0.5;
  cfg.beta = 2.0;
  for (auto loss : {MetricLoss::ctl, MetricLoss::tl, MetricLoss::cl, MetricLoss::tcl}) {
    cfg.loss = loss;
    const auto r = train(cfg, small_dataset());
    for (const auto& rec : r.losses) EXPECT_DOUBLE_EQ(rec.total, 0.5 * rec.metric + 2.0 * rec.ce);
  }
}

TEST(Training, LossFallsOnTheDefaultCorpus) {
  TrainConfig cfg;
  cfg.iterations = 201;
  const auto r = train(cfg, generate_dataset(DatasetConfig{}));
  EXPECT_LT(r.losses[200].total, r.losses[0].total);
}

TEST(Training, CheckpointReproducesEvaluation) {
  const auto ds = small_dataset();
  const auto r = train(short_run(), ds);
  const auto path = std::filesystem::temp_directory_path() / "glgait_train_ckpt.bin";
  save_checkpoint(r.model, path.string());
  const Model back = load_checkpoint(path.string());
  EXPECT_EQ(evaluate(back, ds, 6, false), r.eval);
  std::filesystem::remove(path);
}

TEST(Training, RejectsImpossibleBatches) {
  const auto ds = small_dataset();
  auto cfg = short_run();
  cfg.batch_identities = 5;
  EXPECT_THROW(train(cfg, ds), ValueError);
  cfg = short_run();
  cfg.batch_sequences = 5;
  EXPECT_THROW(train(cfg, ds), ValueError);
  cfg = short_run();
  cfg.batch_identities = 1;
  EXPECT_THROW(train(cfg, ds), ValueError);
}

TEST(Evaluation, IdenticalProbesAreFound) {
  auto ds = small_dataset();
  for (auto id : ds.test_identities) {
    const auto seqs = ds.sequences_of(id);
    for (std::size_t j = 0; j < seqs.size() / 2; ++j) ds.sequences[seqs[j + seqs.size() / 2]] = ds.sequences[seqs[j]];
  }
  BackboneConfig cfg = TrainConfig::toy_backbone();
  cfg.num_classes = 4;
  const Model model(cfg, 4);
  const auto r = evaluate(model, ds, 6);
  EXPECT_EQ(r.probes, 4u);
  EXPECT_EQ(r.gallery, 4u);
  EXPECT_DOUBLE_EQ(r.rank1, 100.0);
  EXPECT_GT(r.inter_class_distance, 0.0);
}

TEST(Evaluation, ThreadCountDoesNotChangeResults) {
  const auto ds = small_dataset();
  BackboneConfig cfg = TrainConfig::toy_backbone();
  cfg.num_classes = 4;
  const Model model(cfg, 4);
  unsetenv("GLT_THREADS");
  EXPECT_EQ(thread_limit(), 1u);
  const auto one = evaluate(model, ds, 6);
  setenv("GLT_THREADS", "3", 1);
  EXPECT_EQ(thread_limit(), 3u);
  EXPECT_EQ(evaluate(model, ds, 6), one);
  setenv("GLT_THREADS", "zero", 1);
  EXPECT_EQ(thread_limit(), 1u);
  unsetenv("GLT_THREADS");
}

TEST(Formats, LossCsvHeaderNamesTheMetric) {
  const std::vector<LossRecord> recs{{0, 1.5, 2.0, 3.5}, {1, 0.25, 1.0, 1.25}};
  EXPECT_EQ(loss_csv(recs, MetricLoss::ctl), "iteration,l_ctl,l_ce,total\n0,1.5,2,3.5\n1,0.25,1,1.25\n");
  EXPECT_EQ(loss_csv({}, MetricLoss::tl), "iteration,l_tl,l_ce,total\n");
}
