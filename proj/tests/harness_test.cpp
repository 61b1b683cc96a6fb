#include <gtest/gtest.h>

#include <sstream>

#include "cseg/harness.hpp"

using namespace cseg;
using Json = nlohmann::json;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.seed = 11;
  c.data.size = 32;
  c.data.train_scenes = 4;
  c.data.interactive_scenes = 3;
  c.data.eval_scenes = 3;
  c.model.channels = 8;
  c.model.roi_h = c.model.roi_w = 9;
  c.model.mask_h = c.model.mask_w = 17;
  c.stage1.steps = 6;
  c.stage1.batch_size = 2;
  c.stage2.steps = 4;
  c.stage2.batch_size = 2;
  c.rounds = 2;
  c.threads = 1;
  return c;
}

int count_lines(const std::string& s) { return int(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Config, JsonRoundTrip) {
  auto c = tiny_config();
  c.loss = LossMode::maskwise;
  c.sharing = Sharing::unshared;
  c.strategy = AllocationStrategy::Mode::fixed_one_per_region;
  c.stage1.lr_milestones = {0.5, 0.8};
  const auto j = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(j)), j);
  EXPECT_EQ(j.at("loss"), "maskwise");
  EXPECT_EQ(j.at("strategy"), "fixed");
}

TEST(Config, PartialJsonKeepsDefaults) {
  const auto c = config_from_json(Json::parse(R"({"seed": 5, "stage1": {"steps": 10}})"));
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.stage1.steps, 10);
  EXPECT_EQ(c.stage1.batch_size, TrainConfig{}.batch_size);
  EXPECT_EQ(c.data.size, 64);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  for (const char* text : {R"({"sed": 1})", R"({"data": {"size": 64, "scenes": 3}})", R"({"model": {"chanels": 4}})",
                           R"({"stage2": {"lr": 0.1}})", R"({"loss": "hinge"})", R"({"sharing": true})",
                           R"({"strategy": "greedy"})", R"({"data": {"size": 48}})", R"({"rounds": -1})",
                           R"({"stage1": {"steps": -1}})", R"({"stage1": {"learning_rate": -1}})",
                           R"({"stage1": {"lr_milestones": [0.9, 0.5]}})", R"({"model": {"reduction": 3}})",
                           R"({"seed": "one"})"})
    EXPECT_THROW(config_from_json(Json::parse(text)), ConfigError) << text;
}

TEST(Config, ShippedDefaultMatchesBuiltinDefaults) {
  EXPECT_EQ(config_to_json(load_config(CSEG_DEFAULT_CONFIG)), config_to_json(ExperimentConfig{}));
}

TEST(Config, LearningRateSchedule) {
  TrainConfig t;
  t.steps = 100;
  t.learning_rate = 1.0;
  t.lr_milestones = {0.5, 0.9};
  t.lr_gamma = 0.1;
  EXPECT_DOUBLE_EQ(t.learning_rate_at(0), 1.0);
  EXPECT_DOUBLE_EQ(t.learning_rate_at(49), 1.0);
  EXPECT_NEAR(t.learning_rate_at(50), 0.1, 1e-15);
  EXPECT_NEAR(t.learning_rate_at(95), 0.01, 1e-15);
}

TEST(Config, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "cseg_harness_config.json";
  write_file(path, std::string(R"({"seed": 3, "rounds": 2})"));
  const auto c = load_config(path);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.rounds, 2);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path), ConfigError);
}

TEST(Splits, DisjointAndReproducible) {
  const auto c = tiny_config();
  const auto a = generate_splits(c);
  const auto b = generate_splits(c);
  ASSERT_EQ(a.train.size(), 4u);
  ASSERT_EQ(a.interactive.size(), 3u);
  ASSERT_EQ(a.eval.size(), 3u);
  EXPECT_EQ(a.eval[2].image, b.eval[2].image);
  EXPECT_EQ(a.train[0].index, kTrainFirstIndex);
  EXPECT_EQ(a.interactive[0].index, kInteractiveFirstIndex);
  EXPECT_EQ(a.eval[0].index, kEvalFirstIndex);
  EXPECT_NE(a.train[0].image, a.eval[0].image);
}

TEST(Training, DeterministicUnderFixedSeed) {
  const auto c = tiny_config();
  const auto splits = generate_splits(c);
  TrainLog la, lb;
  const auto a = train_stage1(splits.train, c, &la);
  const auto b = train_stage1(splits.train, c, &lb);
  EXPECT_EQ(la.losses, lb.losses);
  for (std::size_t k = 0; k < a.tensors.size(); ++k) EXPECT_EQ(a.tensors[k], b.tensors[k]);
  auto other = c;
  other.seed = 12;
  const auto d = train_stage1(splits.train, other);
  EXPECT_NE(d.tensors[0], a.tensors[0]);
}

TEST(Training, CheckpointSinkCadence) {
  auto c = tiny_config();
  c.stage1.checkpoint_every = 2;
  const auto splits = generate_splits(c);
  std::vector<int> steps;
  train_stage1(splits.train, c, nullptr, [&](int step, const ModelParams<float>&) { steps.push_back(step); });
  EXPECT_EQ(steps, (std::vector<int>{2, 4, 6}));
}

TEST(Training, DivergenceIsReported) {
  auto c = tiny_config();
  c.stage1.learning_rate = 1e12;
  const auto splits = generate_splits(c);
  EXPECT_THROW(train_stage1(splits.train, c), TrainingDiverged);
}

TEST(Training, OverfitsSingleImage) {
  auto c = tiny_config();
  c.data.train_scenes = 1;
  c.stage1.steps = 500;
  c.stage1.batch_size = 1;
  c.stage1.learning_rate = 0.03;
  c.stage1.clip_norm = 10;
  const auto splits = generate_splits(c);
  TrainLog log;
  const auto p = train_stage1(std::span(splits.train).first(1), c, &log);
  EXPECT_LT(log.losses.back(), log.losses.front());
  EXPECT_GT(evaluate_extreme_points(std::span(splits.train).first(1), p, c, c.sharing), 0.9);
}

TEST(Interactive, TrainingSetAudit) {
  auto c = tiny_config();
  c.data.interactive_scenes = 6;
  c.training_rounds = 3;
  const auto splits = generate_splits(c);
  const auto stage1 = train_stage1(splits.train, c);
  const auto set = generate_interactive_training_set(splits.interactive, stage1, c);
  ASSERT_EQ(set.size(), 6u);
  for (const auto& ie : set) {
    const auto& st = ie.example.annotations;
    EXPECT_LE(ie.simulated_rounds, 3);
    EXPECT_EQ(st.regions(), ie.example.labels.max_label());
    if (!ie.stage1_had_errors) {
      EXPECT_EQ(ie.simulated_rounds, 0);
    }
    for (const auto& s : st.scribbles) EXPECT_TRUE(scribble_inside_region(s, ie.example.labels));
  }
  const auto again = generate_interactive_training_set(splits.interactive, stage1, c);
  for (std::size_t i = 0; i < set.size(); ++i)
    EXPECT_EQ(again[i].example.annotations.scribbles.size(), set[i].example.annotations.scribbles.size());
}

TEST(Curve, ZeroRoundsGivesSinglePoint) {
  auto c = tiny_config();
  c.rounds = 0;
  const auto splits = generate_splits(c);
  const auto p = ModelParams<float>::init(c.model, 1);
  const auto curve = run_experiment(splits.eval, p, c, c.strategy);
  ASSERT_EQ(curve.size(), 1u);
  EXPECT_EQ(curve[0].scribbles_per_region, 0.0);
  EXPECT_DOUBLE_EQ(curve[0].mean_iou, evaluate_extreme_points(splits.eval, p, c, c.sharing));
}

TEST(Curve, CsvShapeAndBudgets) {
  const auto c = tiny_config();
  const auto splits = generate_splits(c);
  const auto p = train_stage1(splits.train, c);
  for (auto mode : {AllocationStrategy::Mode::fixed_one_per_region, AllocationStrategy::Mode::free_budget}) {
    std::vector<SceneTrace> traces;
    const auto curve = run_experiment(splits.eval, p, c, mode, &traces);
    ASSERT_EQ(curve.size(), std::size_t(c.rounds) + 1);
    for (std::size_t r = 1; r < curve.size(); ++r) {
      EXPECT_GE(curve[r].scribbles_per_region, curve[r - 1].scribbles_per_region);
      // At most one scribble per region per round in either mode.
      EXPECT_LE(curve[r].scribbles_per_region, double(r) + 1e-12);
    }
    ASSERT_EQ(traces.size(), splits.eval.size());
    EXPECT_EQ(traces[0].segmentations.size(), curve.size());
    const auto csv = curve_csv(curve);
    EXPECT_EQ(count_lines(csv), c.rounds + 2);
    EXPECT_EQ(csv.rfind("round,scribbles_per_region,mean_iou\n0,0.000000,", 0), 0u);
    EXPECT_EQ(curve_csv(run_experiment(splits.eval, p, c, mode)), csv);
  }
}

TEST(Curve, ThreadCountDoesNotChangeResults) {
  auto c = tiny_config();
  const auto splits = generate_splits(c);
  const auto p = train_stage1(splits.train, c);
  const auto one = curve_csv(run_experiment(splits.eval, p, c, c.strategy));
  c.threads = 3;
  EXPECT_EQ(curve_csv(run_experiment(splits.eval, p, c, c.strategy)), one);
}

TEST(Ablation, FourCellsInFixedOrder) {
  auto c = tiny_config();
  c.stage1.steps = 2;
  const auto splits = generate_splits(c);
  int seen = 0;
  const auto cells = run_ablation(splits, c, [&](const AblationCell&, const ModelParams<float>& p) {
    EXPECT_EQ(p.config, c.model);
    ++seen;
  });
  ASSERT_EQ(cells.size(), 4u);
  EXPECT_EQ(seen, 4);
  const auto csv = ablation_csv(cells);
  EXPECT_EQ(count_lines(csv), 5);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "loss,sharing,mean_iou");
  for (const char* prefix : {"maskwise,unshared,", "maskwise,shared,", "pixelwise,unshared,", "pixelwise,shared,"}) {
    std::getline(in, line);
    EXPECT_EQ(line.rfind(prefix, 0), 0u) << line;
  }
}

TEST(Render, OverlayKeepsShapeAndMarksEdges) {
  const auto s = generate_scene(32, 2, 0);
  const auto out = render_overlay(s.image, s.labels, 0.0f);
  ASSERT_EQ(out.shape(), s.image.shape());
  int changed = 0;
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c)
      if (out.at(r, c, 0) != s.image.at(r, c, 0) || out.at(r, c, 1) != s.image.at(r, c, 1)) ++changed;
  EXPECT_GT(changed, 0);
  EXPECT_LT(changed, 32 * 32 / 2);
}

TEST(Paths, CheckpointNaming) {
  auto c = tiny_config();
  c.output_dir = "out";
  c.loss = LossMode::maskwise;
  c.sharing = Sharing::unshared;
  EXPECT_EQ(checkpoint_path(c, 2), std::filesystem::path("out") / "stage2_maskwise_unshared.ckpt");
}
