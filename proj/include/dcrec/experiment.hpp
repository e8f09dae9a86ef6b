#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcrec/checkpoint.hpp"
#include "dcrec/config.hpp"

namespace dcrec {

struct ExperimentResult {
  ExperimentConfig config;
  TrainOutput trained;
  EvalReport report;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
};

// Train on the split and score the test targets. The eval noise stream is
// derived from the config seed, so the whole result is a pure function of
// (config, dataset).
inline ExperimentResult train_and_evaluate(const ExperimentConfig& cfg, const SplitDataset& ds) {
  validate_config(cfg);
  ExperimentResult result;
  result.config = cfg;
  const auto t0 = std::chrono::steady_clock::now();
  result.trained = train(to_train_settings(cfg), ds);
  const auto t1 = std::chrono::steady_clock::now();
  const NoiseSchedule sched =
      build_schedule(cfg.total_steps, cfg.beta_min, cfg.beta_max, cfg.beta_rescale);
  result.report = evaluate(result.trained.params, result.trained.table, ds.test, sched,
                           to_eval_config(cfg), variant_flags(cfg.variant));
  const auto t2 = std::chrono::steady_clock::now();
  result.train_seconds = std::chrono::duration<double>(t1 - t0).count();
  result.eval_seconds = std::chrono::duration<double>(t2 - t1).count();
  return result;
}

// Train and evaluate on an existing split, then write the artifacts (config
// copy, checkpoint, training log, report) into out_dir.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const SplitDataset& ds,
                                       const std::string& out_dir) {
  ExperimentResult result = train_and_evaluate(cfg, ds);

  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  {
    std::ofstream out(dir / "config.json");
    if (!out) throw std::runtime_error("run_experiment: cannot write config.json");
    out << config_to_json(cfg).dump(2) << "\n";
  }
  save_checkpoint(result.trained.params, result.trained.table, (dir / "checkpoint").string());
  {
    std::ofstream out(dir / "train_log.tsv");
    if (!out) throw std::runtime_error("run_experiment: cannot write train_log.tsv");
    write_training_log(result.trained.log, out);
  }
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw std::runtime_error("run_experiment: cannot write report.json");
    out << result.report.to_json().dump(2) << "\n";
  }
  {
    std::ofstream out(dir / "report.tsv");
    if (!out) throw std::runtime_error("run_experiment: cannot write report.tsv");
    out << result.report.table();
  }
  return result;
}

// Full pipeline from raw interactions: preprocess, then the overload above.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const InteractionLog& log,
                                       const std::string& out_dir) {
  return run_experiment(cfg, preprocess(log, cfg.max_len, cfg.min_len), out_dir);
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::string& interactions_path,
                                       const std::string& out_dir) {
  return run_experiment(cfg, ingest_interactions(interactions_path), out_dir);
}

struct MetricStat {
  double mean = 0.0;
  double stddev = 0.0;
};

inline MetricStat metric_stat(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("metric_stat: empty sample");
  MetricStat s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(xs.size()));
  return s;
}

struct AblationRun {
  std::string name;
  ExperimentConfig config;
  std::vector<EvalReport> reports;  // one per seed

  MetricStat hr(int k) const {
    std::vector<double> xs;
    for (const auto& r : reports) xs.push_back(r.hr.at(k));
    return metric_stat(xs);
  }
  MetricStat ndcg(int k) const {
    std::vector<double> xs;
    for (const auto& r : reports) xs.push_back(r.ndcg.at(k));
    return metric_stat(xs);
  }
};

struct AblationResult {
  std::string suite;
  std::vector<std::uint64_t> seeds;
  std::vector<int> ks;
  std::vector<AblationRun> runs;
};

// Variant sets, one per studied axis. Each entry changes exactly one knob of
// the base config; everything else (data, seeds, model size) is shared.
inline std::vector<std::pair<std::string, ExperimentConfig>> ablation_variants(
    const std::string& suite, const ExperimentConfig& base) {
  std::vector<std::pair<std::string, ExperimentConfig>> out;
  auto with_mask = [&base](std::vector<std::string> mask) {
    ExperimentConfig c = base;
    c.loss_mask = std::move(mask);
    return c;
  };
  auto with_variant = [&base](const std::string& v) {
    ExperimentConfig c = base;
    c.variant = v;
    return c;
  };
  if (suite == "loss") {
    out.emplace_back("L_T-only", with_mask({"L_T"}));
    out.emplace_back("L_t-only", with_mask({"L_t"}));
    out.emplace_back("L_z-only", with_mask({"L_z"}));
    out.emplace_back("combined", with_mask({"L_T", "L_t", "L_z"}));
  } else if (suite == "module") {
    out.emplace_back("dcrec", with_variant("dcrec"));
    out.emplace_back("single_attn", with_variant("single_attn"));
    out.emplace_back("no_condln", with_variant("no_condln"));
  } else if (suite == "conditioning") {
    out.emplace_back("dcrec", with_variant("dcrec"));
    out.emplace_back("icdm", with_variant("icdm"));
    out.emplace_back("ecdm", with_variant("ecdm"));
  } else if (suite == "noise") {
    out.emplace_back("full", with_variant("dcrec"));
    out.emplace_back("partial", with_variant("partial_noise"));
  } else {
    throw std::invalid_argument("ablate: unknown suite " + suite);
  }
  return out;
}

// Runs every variant of the suite under a shared seed set and aggregates
// mean and stddev per metric. Desk-scale variance is high, so at least three
// seeds are required.
inline AblationResult ablate(const std::string& suite, const ExperimentConfig& base,
                             const SplitDataset& ds,
                             const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 3) throw std::invalid_argument("ablate: need at least 3 seeds");
  AblationResult result;
  result.suite = suite;
  result.seeds = seeds;
  result.ks = base.eval_ks;
  for (auto& [name, cfg] : ablation_variants(suite, base)) {
    AblationRun run;
    run.name = name;
    run.config = cfg;
    for (std::uint64_t seed : seeds) {
      ExperimentConfig seeded = cfg;
      seeded.seed = seed;
      run.reports.push_back(train_and_evaluate(seeded, ds).report);
    }
    result.runs.push_back(std::move(run));
  }
  return result;
}

inline std::string ablation_tsv(const AblationResult& result) {
  std::string out = "variant";
  for (int k : result.ks)
    out += "\tHR@" + std::to_string(k) + "_mean\tHR@" + std::to_string(k) + "_std\tNDCG@" +
           std::to_string(k) + "_mean\tNDCG@" + std::to_string(k) + "_std";
  out += "\n";
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };
  for (const AblationRun& run : result.runs) {
    out += run.name;
    for (int k : result.ks) {
      const MetricStat h = run.hr(k), n = run.ndcg(k);
      out += "\t" + num(h.mean) + "\t" + num(h.stddev) + "\t" + num(n.mean) + "\t" + num(n.stddev);
    }
    out += "\n";
  }
  return out;
}

struct SweepPoint {
  int num_steps = 0;
  double hr5 = 0.0;
  double ndcg5 = 0.0;
  double seconds = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;

  std::string to_tsv() const {
    std::string out = "num_steps\tHR@5\tNDCG@5\tseconds\n";
    char buf[96];
    for (const SweepPoint& p : points) {
      std::snprintf(buf, sizeof(buf), "%d\t%.4f\t%.4f\t%.4f\n", p.num_steps, p.hr5, p.ndcg5,
                    p.seconds);
      out += buf;
    }
    return out;
  }
};

inline SweepResult parse_sweep_tsv(std::istream& in) {
  SweepResult result;
  std::string line;
  if (!std::getline(in, line) || line != "num_steps\tHR@5\tNDCG@5\tseconds")
    throw std::runtime_error("parse_sweep_tsv: bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    SweepPoint p;
    std::istringstream row(line);
    if (!(row >> p.num_steps >> p.hr5 >> p.ndcg5 >> p.seconds))
      throw std::runtime_error("parse_sweep_tsv: bad row: " + line);
    result.points.push_back(p);
  }
  if (result.points.empty()) throw std::runtime_error("parse_sweep_tsv: no data rows");
  return result;
}

// One evaluation per requested step count, all sharing the given trained
// model. Seconds is the wall clock of one evaluation pass averaged over
// `repeats` runs (scoring is deterministic, repeats only stabilize timing).
inline SweepResult sweep_steps(const DCDTParams& params, const ItemEmbeddingTable& table,
                               const SplitDataset& ds, const ExperimentConfig& cfg,
                               const std::vector<int>& step_counts, int repeats = 1) {
  if (step_counts.empty()) throw std::invalid_argument("sweep_steps: empty step list");
  if (repeats < 1) throw std::invalid_argument("sweep_steps: repeats must be >= 1");
  for (int t : step_counts)
    if (t < 1 || t > cfg.total_steps)
      throw std::invalid_argument("sweep_steps: step count " + std::to_string(t) +
                                  " outside [1, " + std::to_string(cfg.total_steps) + "]");
  const NoiseSchedule sched =
      build_schedule(cfg.total_steps, cfg.beta_min, cfg.beta_max, cfg.beta_rescale);
  const VariantFlags flags = variant_flags(cfg.variant);
  SweepResult result;
  for (int t : step_counts) {
    EvalConfig ec = to_eval_config(cfg);
    ec.ks = {5};
    ec.num_steps = t;
    SweepPoint point;
    point.num_steps = t;
    double total = 0.0;
    EvalReport rep;
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      rep = evaluate(params, table, ds.test, sched, ec, flags);
      total += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    point.hr5 = rep.hr.at(5);
    point.ndcg5 = rep.ndcg.at(5);
    point.seconds = total / repeats;
    result.points.push_back(point);
  }
  return result;
}

}  // namespace dcrec
