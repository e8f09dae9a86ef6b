#include "dcrec/experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dcrec/plot.hpp"

namespace dcrec {
namespace {

// Small enough that one train+evaluate pass takes well under a second.
ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.max_len = 6;
  c.min_len = 5;
  c.num_blocks = 1;
  c.dim = 8;
  c.total_steps = 8;
  c.beta_rescale = false;
  c.batch_size = 16;
  c.max_epochs = 2;
  c.patience = 5;
  c.eval_ks = {1, 5};
  c.eval_num_steps = 4;
  c.val_num_steps = 2;
  c.seed = 9;
  return c;
}

InteractionLog tiny_log() { return make_synthetic("cycle", 30, 8, 6, 3); }

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

TEST(Experiment, RunWritesAllArtifacts) {
  const std::filesystem::path dir =
      std::filesystem::path(testing::TempDir()) / "dcrec_exp_artifacts";
  std::filesystem::remove_all(dir);
  const ExperimentResult res = run_experiment(tiny_config(), tiny_log(), dir.string());
  for (const char* name :
       {"config.json", "checkpoint.json", "checkpoint.bin", "train_log.tsv", "report.json",
        "report.tsv"})
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  EXPECT_GT(res.report.num_users, 0);
  EXPECT_GT(res.train_seconds, 0.0);

  // The stored config is the exact provenance of the run.
  std::ifstream in(dir / "config.json");
  nlohmann::json stored;
  in >> stored;
  EXPECT_EQ(stored, config_to_json(tiny_config()));
  std::filesystem::remove_all(dir);
}

TEST(Experiment, SameSeedGivesByteIdenticalReports) {
  const std::filesystem::path base = std::filesystem::path(testing::TempDir()) / "dcrec_exp_det";
  std::filesystem::remove_all(base);
  const InteractionLog log = tiny_log();
  run_experiment(tiny_config(), log, (base / "a").string());
  run_experiment(tiny_config(), log, (base / "b").string());
  const std::string ra = read_file(base / "a" / "report.json");
  const std::string rb = read_file(base / "b" / "report.json");
  ASSERT_FALSE(ra.empty());
  EXPECT_EQ(ra, rb);
  std::filesystem::remove_all(base);
}

TEST(Experiment, ReloadedCheckpointReproducesTheReport) {
  const std::filesystem::path dir = std::filesystem::path(testing::TempDir()) / "dcrec_exp_ckpt";
  std::filesystem::remove_all(dir);
  const ExperimentConfig cfg = tiny_config();
  const InteractionLog log = tiny_log();
  const ExperimentResult res = run_experiment(cfg, log, dir.string());
  const Checkpoint ckpt = load_checkpoint((dir / "checkpoint").string());
  const SplitDataset ds = preprocess(log, cfg.max_len, cfg.min_len);
  const NoiseSchedule sched =
      build_schedule(cfg.total_steps, cfg.beta_min, cfg.beta_max, cfg.beta_rescale);
  const EvalReport again =
      evaluate(ckpt.params, ckpt.table, ds.test, sched, to_eval_config(cfg));
  EXPECT_EQ(again.to_json(), res.report.to_json());
  std::filesystem::remove_all(dir);
}

// Keys whose values differ between two configs.
std::set<std::string> diff_keys(const ExperimentConfig& a, const ExperimentConfig& b) {
  const nlohmann::json ja = config_to_json(a), jb = config_to_json(b);
  std::set<std::string> out;
  for (const auto& [key, value] : ja.items())
    if (jb.at(key) != value) out.insert(key);
  return out;
}

TEST(Experiment, VariantsDifferFromBaseInExactlyTheDocumentedFlag) {
  const ExperimentConfig base = tiny_config();
  const std::map<std::string, std::string> documented = {{"loss", "loss_mask"},
                                                         {"module", "variant"},
                                                         {"conditioning", "variant"},
                                                         {"noise", "variant"}};
  for (const auto& [suite, flag] : documented) {
    const auto variants = ablation_variants(suite, base);
    ASSERT_GE(variants.size(), 2u) << suite;
    for (const auto& [name, cfg] : variants) {
      const std::set<std::string> diff = diff_keys(base, cfg);
      const bool baseline = name == "dcrec" || name == "full" || name == "combined";
      if (baseline) {
        EXPECT_TRUE(diff.empty()) << suite << "/" << name;
      } else {
        EXPECT_EQ(diff, std::set<std::string>{flag}) << suite << "/" << name;
      }
    }
  }
  EXPECT_THROW(ablation_variants("speed", base), std::invalid_argument);
}

TEST(Experiment, LossSuiteRunsFourVariantsOverSharedSeeds) {
  const SplitDataset ds = preprocess(tiny_log(), 6, 5);
  const AblationResult res = ablate("loss", tiny_config(), ds, {1, 2, 3});
  ASSERT_EQ(res.runs.size(), 4u);
  EXPECT_EQ(res.runs[0].name, "L_T-only");
  EXPECT_EQ(res.runs[3].name, "combined");
  for (const AblationRun& run : res.runs) {
    ASSERT_EQ(run.reports.size(), 3u) << run.name;
    const MetricStat s = run.hr(5);
    EXPECT_GE(s.mean, 0.0);
    EXPECT_LE(s.mean, 1.0);
    EXPECT_GE(s.stddev, 0.0);
  }
  const std::string tsv = ablation_tsv(res);
  std::istringstream lines(tsv);
  std::string line;
  int rows = 0;
  ASSERT_TRUE(std::getline(lines, line));
  EXPECT_EQ(line, "variant\tHR@1_mean\tHR@1_std\tNDCG@1_mean\tNDCG@1_std"
                  "\tHR@5_mean\tHR@5_std\tNDCG@5_mean\tNDCG@5_std");
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 4);
}

TEST(Experiment, AblateRejectsTooFewSeeds) {
  const SplitDataset ds = preprocess(tiny_log(), 6, 5);
  EXPECT_THROW(ablate("loss", tiny_config(), ds, {1, 2}), std::invalid_argument);
}

TEST(Experiment, MetricStatMatchesHandComputation) {
  const MetricStat s = metric_stat({1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_NEAR(s.stddev, std::sqrt(2.0 / 3.0), 1e-12);
  EXPECT_THROW(metric_stat({}), std::invalid_argument);
}

TEST(Experiment, SweepSharesOneModelAndValidatesSteps) {
  const ExperimentConfig cfg = tiny_config();
  const SplitDataset ds = preprocess(tiny_log(), cfg.max_len, cfg.min_len);
  const ExperimentResult res = train_and_evaluate(cfg, ds);
  const SweepResult sweep =
      sweep_steps(res.trained.params, res.trained.table, ds, cfg, {1, 2, 4, 8});
  ASSERT_EQ(sweep.points.size(), 4u);
  for (std::size_t i = 0; i < sweep.points.size(); ++i) {
    EXPECT_GE(sweep.points[i].hr5, 0.0);
    EXPECT_LE(sweep.points[i].hr5, 1.0);
    EXPECT_GT(sweep.points[i].seconds, 0.0);
    if (i > 0) EXPECT_GT(sweep.points[i].num_steps, sweep.points[i - 1].num_steps);
  }
  EXPECT_THROW(
      sweep_steps(res.trained.params, res.trained.table, ds, cfg, {cfg.total_steps + 1}),
      std::invalid_argument);
  EXPECT_THROW(sweep_steps(res.trained.params, res.trained.table, ds, cfg, {0}),
               std::invalid_argument);
  EXPECT_THROW(sweep_steps(res.trained.params, res.trained.table, ds, cfg, {}),
               std::invalid_argument);

  // TSV round trip and plot emission.
  std::istringstream tsv(sweep.to_tsv());
  const SweepResult back = parse_sweep_tsv(tsv);
  ASSERT_EQ(back.points.size(), sweep.points.size());
  for (std::size_t i = 0; i < back.points.size(); ++i)
    EXPECT_EQ(back.points[i].num_steps, sweep.points[i].num_steps);
  const std::string svg_path =
      (std::filesystem::path(testing::TempDir()) / "dcrec_sweep_plot.svg").string();
  write_sweep_plot(sweep, svg_path);
  const std::string svg = read_file(svg_path);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("HR@5"), std::string::npos);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
  std::filesystem::remove(svg_path);
}

TEST(Experiment, SingleStepSweepMatchesStandardEvaluate) {
  const ExperimentConfig cfg = tiny_config();
  const SplitDataset ds = preprocess(tiny_log(), cfg.max_len, cfg.min_len);
  const ExperimentResult res = train_and_evaluate(cfg, ds);
  EvalConfig ec = to_eval_config(cfg);
  ec.ks = {5};
  ec.num_steps = cfg.total_steps;
  const NoiseSchedule sched =
      build_schedule(cfg.total_steps, cfg.beta_min, cfg.beta_max, cfg.beta_rescale);
  const EvalReport direct = evaluate(res.trained.params, res.trained.table, ds.test, sched, ec);
  const SweepResult sweep =
      sweep_steps(res.trained.params, res.trained.table, ds, cfg, {cfg.total_steps}, 2);
  ASSERT_EQ(sweep.points.size(), 1u);
  EXPECT_DOUBLE_EQ(sweep.points[0].hr5, direct.hr.at(5));
  EXPECT_DOUBLE_EQ(sweep.points[0].ndcg5, direct.ndcg.at(5));
}

}  // namespace
}  // namespace dcrec
