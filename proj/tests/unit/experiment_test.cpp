#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "ivpt/error.hpp"
#include "ivpt/experiment.hpp"
#include "ivpt/snapshot.hpp"
#include "json.hpp"
#include "support.hpp"

namespace ivpt {
namespace {

namespace fs = std::filesystem;

ExperimentConfig small(const std::string& name) {
  ExperimentConfig c;
  c.model = testing::tiny_model();
  c.prompts.num_prompts = 2;
  c.prompts.ar_k = 1;
  c.train.epochs = 2;
  c.train.warmup_epochs = 0;
  c.train.batch_size = 6;
  c.data.n_train = 12;
  c.data.n_eval = 6;
  c.output_dir = fs::path(::testing::TempDir()) / ("ivpt_exp_" + name);
  fs::remove_all(c.output_dir);
  return c;
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

TEST(ConfigTest, UnknownKeyIsRejectedByName) {
  ExperimentConfig c = default_experiment();
  try {
    apply_config_json(c, R"({"learning_rate": 0.1})");
    FAIL() << "no exception";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
  EXPECT_THROW(apply_config_json(c, "{not json"), ConfigError);
  EXPECT_THROW(apply_config_json(c, R"({"structure": "vpt-wide"})"), ConfigError);
}

TEST(ConfigTest, KnownKeysOverlayDefaults) {
  ExperimentConfig c = default_experiment();
  apply_config_json(c, R"({"structure": "express", "da": false, "epochs": 7, "seeds": [3, 4], "noise_model": "additive"})");
  EXPECT_EQ(c.prompts.structure, Structure::Express);
  EXPECT_EQ(c.train.epochs, 7u);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(c.noise.model, NoiseModel::Additive);
  EXPECT_EQ(c.prompts.ar, ArMode::TopK);
}

TEST(ConfigTest, HashIsStableAndSensitive) {
  const ExperimentConfig a = default_experiment();
  ExperimentConfig b = default_experiment();
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.output_dir = "elsewhere";
  b.jobs = 3;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.train.base_lr = 0.051;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(ConfigTest, CanonicalJsonRoundTrips) {
  ExperimentConfig a = default_experiment();
  a.prompts.structure = Structure::ProVP;
  a.prompts.da = false;
  a.prompts.ar_layers = {0, 2};
  a.noise.rho = 0.25;
  const std::string text = canonical_json(a);
  EXPECT_EQ(text.find(' '), std::string::npos);
  EXPECT_EQ(text.find("output_dir"), std::string::npos);
  ExperimentConfig b = default_experiment();
  apply_config_json(b, text);
  EXPECT_EQ(canonical_json(b), text);
}

TEST(ConfigTest, SeedComesFromEnvironment) {
  ::setenv("IVPT_SEED", "17", 1);
  EXPECT_EQ(default_experiment().seeds, (std::vector<std::uint64_t>{17}));
  ::setenv("IVPT_SEED", "x7", 1);
  EXPECT_THROW(default_experiment(), ConfigError);
  ::unsetenv("IVPT_SEED");
  EXPECT_EQ(default_experiment().seeds, (std::vector<std::uint64_t>{0}));
}

TEST(ConfigTest, CountTaskNeedsMatchingClasses) {
  ExperimentConfig c = default_experiment();
  c.data.task = Task::Count;
  c.data.max_objects = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c.data.max_objects = 3;
  c.model.num_classes = 4;
  EXPECT_NO_THROW(c.validate());
}

TEST(AblateCellsTest, ProductSizes) {
  PromptConfig base;
  base.da = true;
  base.ar = ArMode::TopK;
  EXPECT_EQ(ablate_cells(base, {}).size(), 1u);
  EXPECT_EQ(ablate_cells(base, {Axis::Ar}).size(), 3u);
  EXPECT_EQ(ablate_cells(base, {Axis::Da, Axis::Ar}).size(), 6u);
  EXPECT_EQ(ablate_cells(base, {Axis::Structure, Axis::Da, Axis::Ar}).size(), 36u);
  std::set<std::string> labels;
  for (const auto& c : ablate_cells(base, {Axis::Structure, Axis::Da, Axis::Ar})) labels.insert(c.label);
  EXPECT_EQ(labels.size(), 36u);
}

TEST(AblateCellsTest, DaDroppedForOtherStructuresUnlessSwept) {
  PromptConfig base;
  base.da = true;
  for (const auto& c : ablate_cells(base, {Axis::Structure}))
    EXPECT_EQ(c.prompts.da, c.prompts.structure == Structure::Cdc) << c.label;
  EXPECT_THROW(parse_axis("depth"), ConfigError);
}

TEST(AblateTest, RowsPerCellAndSeed) {
  ExperimentConfig c = small("ablate");
  c.prompts.da = true;
  c.prompts.ar = ArMode::TopK;
  c.seeds = {0, 1};
  const AblateResult r = run_ablate(c, {Axis::Ar});
  EXPECT_EQ(r.records.size(), 6u);
  EXPECT_EQ(r.summary.size(), 3u);
  EXPECT_EQ(line_count(c.output_dir / "ablate_runs.csv"), 7u);
  EXPECT_EQ(line_count(c.output_dir / "ablate_summary.csv"), 4u);
  for (const ResultRecord& rec : r.records) {
    EXPECT_FALSE(rec.skipped);
    EXPECT_EQ(line_count(rec.metrics_path), 2u);
  }
}

TEST(AblateTest, UnsupportedCombinationsAreSkipped) {
  ExperimentConfig c = small("skip");
  c.prompts.structure = Structure::VptDeep;
  c.train.epochs = 1;
  const AblateResult r = run_ablate(c, {Axis::Da});
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_FALSE(r.records[0].skipped);
  EXPECT_TRUE(r.records[1].skipped);
}

TEST(NoiseSweepTest, ZeroRhoEqualsCleanEvaluation) {
  ExperimentConfig c = small("noise");
  c.seeds = {0};
  const NoiseSweepResult r = run_noise_sweep(c, {0.0, 0.5}, {Structure::Cdc, Structure::Express});
  ASSERT_EQ(r.points.size(), 4u);
  ASSERT_EQ(r.curves.size(), 2u);
  EXPECT_EQ(line_count(c.output_dir / "noise_sweep.csv"), 5u);

  ExperimentConfig clean = c;
  clean.prompts.structure = Structure::Cdc;
  clean.prompts.da = false;
  clean.prompts.ar = ArMode::None;
  const Datasets data = build_datasets(clean);
  const TrainedRun run = run_single(clean, 0, data);
  EXPECT_EQ(r.points[0].accuracy, evaluate(run.model, data.eval).accuracy);
}

TEST(SpearmanTest, KnownValues) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3}, {5, 5, 5}), 0.0);
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {1, 3, 2, 4}), 0.8, 1e-15);
  EXPECT_THROW(spearman({1, 2}, {1}), DimensionError);
}

TEST(VerifyTest, PassesAndWritesReport) {
  ExperimentConfig c = small("verify");
  c.prompts.da = true;
  c.verify_epochs = 2;
  const VerifyResult r = run_verify(c);
  EXPECT_TRUE(r.all_pass);
  // init + trained, 2 layers x 2 heads, cdc everywhere and da on layer 1.
  EXPECT_EQ(r.entries.size(), 2u * (2 * 2 + 2));
  std::ifstream in(c.output_dir / "verify_report.json");
  const auto doc = nlohmann::json::parse(in);
  EXPECT_EQ(doc.at("entries").size(), r.entries.size());
}

TEST(VerifyTest, ZeroGammaGivesUnitFactors) {
  ExperimentConfig c = small("verify_zero");
  c.prompts.da = true;
  c.prompts.gamma_init = GammaInit::Zero;
  c.verify_epochs = 0;
  for (const VerifyEntry& e : run_verify(c).entries) {
    if (e.report.kind != "da") continue;
    for (const auto& row : e.report.factors)
      for (double f : row) EXPECT_EQ(f, 1.0);
  }
}

TEST(VerifyTest, LayerNormPathIsInformational) {
  ExperimentConfig c = small("verify_ln");
  c.verify_epochs = 0;
  const VerifyResult r = run_verify(c, true);
  EXPECT_TRUE(r.informational);
  EXPECT_TRUE(r.all_pass);
  for (const VerifyEntry& e : r.entries) EXPECT_EQ(e.report.kind.substr(e.report.kind.size() - 3), "-ln");
}

TEST(VerifyTest, RequiresCdcFamily) {
  ExperimentConfig c = small("verify_deep");
  c.prompts.structure = Structure::VptDeep;
  EXPECT_THROW(run_verify(c), ConfigError);
}

TEST(SnapshotTest, RoundTripRestoresEveryTensor) {
  ExperimentConfig c = small("snapshot");
  c.prompts.da = true;
  c.prompts.ar = ArMode::TopK;
  const Datasets data = build_datasets(c);
  const TrainedRun run = run_single(c, 2, data);
  fs::create_directories(c.output_dir);
  save_snapshot(run.model, 2, c.output_dir / "model");
  const PromptedModel loaded = load_snapshot(c.output_dir / "model");
  const auto& a = run.model.registry().entries();
  const auto& b = loaded.registry().entries();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].trainable, b[i].trainable);
    EXPECT_TRUE(bit_equal(a[i].tensor, b[i].tensor)) << a[i].name;
  }
  EXPECT_EQ(evaluate(loaded, data.eval).accuracy, run.record.final_top1);
}

TEST(SnapshotTest, MissingFileIsAnIoError) {
  EXPECT_THROW(load_snapshot(fs::path(::testing::TempDir()) / "no_such_snapshot"), IoError);
}

}  // namespace
}  // namespace ivpt
