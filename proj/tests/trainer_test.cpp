#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>

#include "mpcn/errors.hpp"
#include "mpcn/trainer.hpp"

using namespace mpcn;

namespace {

const Dataset& tiny_data() {
  static const Dataset d = [] {
    GenerationOptions o;
    o.per_family = 24;
    o.resolution = 8;
    o.seed = 3;
    return generate_dataset(o);
  }();
  return d;
}

std::vector<const SamplePair*> take(const std::vector<const SamplePair*>& v, std::size_t n) {
  return {v.begin(), v.begin() + static_cast<long>(std::min(n, v.size()))};
}

EpisodeConfig tiny_cfg() {
  EpisodeConfig c;
  c.batch = 4;
  c.lr = 1e-3;
  c.epochs = 1;
  c.finetune_epochs = 1;
  c.shots = 2;
  c.seed = 9;
  return c;
}

FewShotSplit tiny_split(int shots) {
  const auto& d = tiny_data();
  return split_fewshot(d, novel_categories(d), shots, 5);
}

bool same(const EpochMetrics& a, const EpochMetrics& b) {
  return a.rec == b.rec && a.nce == b.nce && a.total == b.total && a.insertions == b.insertions &&
         a.memory_size == b.memory_size && a.nce_coverage == b.nce_coverage;
}

}  // namespace

TEST(Trainer, FirstBatchAfterFlushUsesZeroPriors) {
  MemoryBank bank(10, 8, 8);
  const auto pb = gather_prior<float>(bank, bank.retrieve(std::vector<double>(16, 0.5), 2, 3));
  EXPECT_EQ(pb.value_index, std::vector<int>(6, -1));
  for (float v : pb.keys.values()) EXPECT_EQ(v, 0.f);
  EXPECT_TRUE(pb.shape_voxels.empty());

  Model<float> model(ModelSpec::tiny());
  model.init(1);
  const auto before = model.checksum();
  auto cfg = tiny_cfg();
  cfg.batch = 8;
  cfg.delta = 2.0;  // nothing is ever hard enough: every batch sees an empty bank
  Adam<float> opt(model.params(), {cfg.lr});
  MemoryBank b2(100, 8, 8);
  const auto m = train_epoch(model, opt, b2, take(tiny_split(0).base, 16), cfg, 0, Stage::kBase);
  EXPECT_EQ(m.batches, 2);
  EXPECT_EQ(m.insertions, 0);
  EXPECT_TRUE(std::isfinite(m.total));
  EXPECT_NE(model.checksum(), before);
}

TEST(Trainer, DeltaZeroInsertsEverySampleThenFifo) {
  Model<float> model(ModelSpec::tiny());
  model.init(2);
  auto cfg = tiny_cfg();
  cfg.delta = 0.0;
  Adam<float> opt(model.params(), {cfg.lr});
  MemoryBank bank(5, 8, 8);
  const auto data = take(tiny_split(0).base, 12);
  const auto m = train_epoch(model, opt, bank, data, cfg, 0, Stage::kBase);
  EXPECT_EQ(m.insertions, 12);
  EXPECT_EQ(m.memory_size, 5);
  EXPECT_EQ(m.max_memory_size, 5);
  ASSERT_EQ(bank.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(bank.slot(i).insert_tick, 8 + i);
  // second epoch starts from a flushed bank
  const auto m2 = train_epoch(model, opt, bank, data, cfg, 1, Stage::kBase);
  EXPECT_EQ(m2.insertions, 12);
  EXPECT_EQ(bank.slot(0).insert_tick, 20u);
}

TEST(Trainer, EpochIsBitwiseReproducible) {
  auto cfg = tiny_cfg();
  const auto data = take(tiny_split(0).base, 24);
  std::vector<EpochMetrics> runs[2];
  std::uint64_t sums[2];
  for (int r = 0; r < 2; ++r) {
    Model<float> model(ModelSpec::tiny());
    model.init(4);
    runs[r] = train_stage(model, data, cfg, Stage::kBase, 2);
    sums[r] = model.checksum();
  }
  ASSERT_EQ(runs[0].size(), 2u);
  for (int e = 0; e < 2; ++e) EXPECT_TRUE(same(runs[0][e], runs[1][e])) << e;
  EXPECT_EQ(sums[0], sums[1]);
  EXPECT_GT(runs[0][0].nce_coverage, 0.0);
}

TEST(Trainer, NonFiniteLossAborts) {
  Model<float> model(ModelSpec::tiny());
  model.init(5);
  model.decoder().params()[1]->value[0] = std::numeric_limits<float>::quiet_NaN();
  auto cfg = tiny_cfg();
  Adam<float> opt(model.params(), {cfg.lr});
  MemoryBank bank(10, 8, 8);
  try {
    train_epoch(model, opt, bank, take(tiny_split(0).base, 8), cfg, 0, Stage::kBase);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("rec="), std::string::npos) << e.what();
  }
}

TEST(Trainer, SingleShapeConvergesWithoutContrastTerm) {
  Model<float> model(ModelSpec::tiny());
  model.init(6);
  auto cfg = tiny_cfg();
  cfg.lambda = 0;
  cfg.batch = 1;
  cfg.lr = 1e-2;
  const std::vector<const SamplePair*> one{&tiny_data().samples[0]};
  const auto curve = train_stage(model, one, cfg, Stage::kBase, 200);
  EXPECT_LT(curve.back().rec, 0.05) << "first " << curve.front().rec;
  for (const auto& m : curve) EXPECT_EQ(m.nce, 0.0);
}

TEST(Trainer, EvaluationLeavesParametersAlone) {
  Model<float> model(ModelSpec::tiny());
  model.init(7);
  const auto split = tiny_split(2);
  const auto before = model.checksum();
  const auto rep = evaluate_fewshot(model, split.support, split.query, tiny_cfg());
  EXPECT_EQ(model.checksum(), before);
  EXPECT_EQ(rep.samples.size(), split.query.size());
  EXPECT_EQ(rep.support_size, 4);
  EXPECT_EQ(rep.memory_size, 4);
}

TEST(Trainer, CategoryMeansMatchScalarLoop) {
  Model<float> model(ModelSpec::tiny());
  model.init(8);
  const auto split = tiny_split(2);
  const auto rep = evaluate_fewshot(model, split.support, split.query, tiny_cfg());
  std::map<std::string, std::vector<double>> by_cat;
  for (const auto& s : rep.samples) {
    EXPECT_GE(s.iou, 0.0);
    EXPECT_LE(s.iou, 1.0);
    by_cat[s.category].push_back(s.iou);
  }
  ASSERT_EQ(by_cat.size(), 2u);
  double means = 0, all = 0;
  for (const auto& [cat, v] : by_cat) {
    double sum = 0;
    for (double x : v) sum += x;
    EXPECT_DOUBLE_EQ(rep.category_iou.at(cat), sum / v.size());
    means += sum / v.size();
    all += sum;
  }
  EXPECT_DOUBLE_EQ(rep.mean_iou, means / 2);
  EXPECT_DOUBLE_EQ(rep.sample_mean_iou, all / rep.samples.size());
}

TEST(Trainer, PaddingWhenTopkExceedsSupport) {
  Model<float> model(ModelSpec::tiny());
  model.init(9);
  auto cfg = tiny_cfg();
  cfg.topk = 5;
  const auto split = tiny_split(1);  // 2 support samples in total
  const auto rep = evaluate_fewshot(model, split.support, split.query, cfg);
  EXPECT_EQ(rep.all_masked_queries, 0);
  EXPECT_EQ(rep.memory_size, 2);
  // empty support: every query is fully masked, evaluation still runs
  const auto empty = evaluate_fewshot(model, {}, split.query, cfg);
  EXPECT_EQ(empty.all_masked_queries, static_cast<int>(split.query.size()));
  EXPECT_THROW(evaluate_fewshot(model, split.support, {}, cfg), ConfigError);
}

TEST(Trainer, ZeroShotSkipsFinetune) {
  Model<float> model(ModelSpec::tiny());
  model.init(10);
  auto cfg = tiny_cfg();
  cfg.shots = 0;
  auto split = tiny_split(0);
  split.base = take(split.base, 16);
  const auto rep = run_two_stage(model, split, cfg);
  EXPECT_EQ(rep.base_curve.size(), 1u);
  EXPECT_TRUE(rep.finetune_curve.empty());
  EXPECT_EQ(rep.support_size, 0);
  EXPECT_EQ(rep.memory_size, 0);
  EXPECT_EQ(rep.all_masked_queries, static_cast<int>(split.query.size()));
}

TEST(Trainer, NoFinetuneAblationKeepsSupportMemory) {
  auto cfg = tiny_cfg();
  auto split = tiny_split(2);
  split.base = take(split.base, 16);
  Model<float> a(ModelSpec::tiny());
  a.init(11);
  cfg.ablation = Ablation::kNoFinetune;
  const auto rep = run_two_stage(a, split, cfg);
  EXPECT_TRUE(rep.finetune_curve.empty());
  EXPECT_EQ(rep.memory_size, 4);
  EXPECT_EQ(rep.method, "no-finetune");
  Model<float> b(ModelSpec::tiny());
  b.init(11);
  cfg.ablation = Ablation::kNone;
  const auto full = run_two_stage(b, split, cfg);
  EXPECT_EQ(full.finetune_curve.size(), 1u);
  EXPECT_EQ(full.method, "mpcn");
}

TEST(Trainer, IdenticalSeedsGiveIdenticalReports) {
  auto cfg = tiny_cfg();
  auto split = tiny_split(2);
  split.base = take(split.base, 16);
  std::string text[2];
  for (auto& t : text) {
    Model<float> m(ModelSpec::tiny());
    m.init(12);
    t = run_two_stage(m, split, cfg).to_text();
  }
  EXPECT_EQ(text[0], text[1]);
}

TEST(Trainer, BaseNovelOverlapIsAConfigError) {
  Model<float> model(ModelSpec::tiny());
  model.init(13);
  auto split = tiny_split(2);
  split.query.push_back(split.base.front());
  EXPECT_THROW(run_two_stage(model, split, tiny_cfg()), ConfigError);
  split = tiny_split(2);
  auto cfg = tiny_cfg();
  cfg.shots = 3;
  EXPECT_THROW(run_two_stage(model, split, cfg), ConfigError);
}

TEST(Trainer, ConfigValidation) {
  auto c = tiny_cfg();
  c.batch = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_cfg();
  c.tau = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_cfg();
  c.memory_test = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(tiny_cfg().capacity(Stage::kBase), 4000);
  EXPECT_EQ(tiny_cfg().capacity(Stage::kFinetune), 4000);
  EXPECT_EQ(tiny_cfg().capacity(Stage::kEval), 200);
  EXPECT_THROW(ablation_from_string("bogus"), ConfigError);
  EXPECT_EQ(ablation_from_string("uniform-nce"), Ablation::kUniformNce);
}

TEST(Trainer, OccupancyNeverExceedsCapacity) {
  Model<float> model(ModelSpec::tiny());
  model.init(14);
  auto cfg = tiny_cfg();
  cfg.delta = 0.0;
  cfg.memory_train = 7;
  const auto curve = train_stage(model, take(tiny_split(0).base, 30), cfg, Stage::kBase, 2);
  for (const auto& m : curve) {
    EXPECT_LE(m.max_memory_size, 7);
    EXPECT_LE(m.memory_size, 7);
  }
}

TEST(Trainer, ExactGroundTruthInSupportBeatsEmptyMemory) {
  // averaged over three seeds: a model trained with memory uses a retrieved
  // copy of the answer
  double with = 0, without = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    Model<float> model(ModelSpec::tiny());
    model.init(100 + seed);
    auto cfg = tiny_cfg();
    cfg.seed = seed;
    cfg.topk = 1;
    const auto split = tiny_split(0);
    train_stage(model, split.base, cfg, Stage::kBase, 20);
    const auto query = take(split.query, 24);
    with += evaluate_fewshot(model, query, query, cfg).sample_mean_iou;
    without += evaluate_fewshot(model, {}, query, cfg).sample_mean_iou;
  }
  EXPECT_GT(with, without) << "with " << with / 3 << " without " << without / 3;
}
