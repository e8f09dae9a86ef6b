// Command line front end for the whole pipeline: dataset preparation,
// training, evaluation, single-history inference, ablation studies, step
// sweeps, and plot emission. Every run is reproducible from its config file,
// DCREC_* environment overrides, and the --seed flag (applied in that order).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcrec/experiment.hpp"
#include "dcrec/plot.hpp"
#include "dcrec/sampler.hpp"

namespace {

dcrec::ExperimentConfig resolve_config(const std::string& path,
                                       const std::optional<std::uint64_t>& seed) {
  dcrec::ExperimentConfig cfg = path.empty() ? dcrec::ExperimentConfig{}
                                             : dcrec::load_config(path);
  dcrec::apply_env_overrides(cfg);
  if (seed) cfg.seed = *seed;
  return cfg;
}

// A --data argument is either a directory written by `preprocess` or a raw
// interactions TSV, which is split on the fly with the config's length caps.
dcrec::SplitDataset resolve_dataset(const std::string& path, const dcrec::ExperimentConfig& cfg) {
  if (std::filesystem::is_directory(path)) return dcrec::load_dataset(path);
  return dcrec::preprocess(dcrec::ingest_interactions(path), cfg.max_len, cfg.min_len);
}

std::vector<int> parse_int_list(const std::string& text, const char* what) {
  std::vector<int> out;
  std::string token;
  std::stringstream ss(text);
  while (std::getline(ss, token, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string(what) + ": bad entry '" + token + "'");
    }
  }
  if (out.empty()) throw std::invalid_argument(std::string(what) + ": empty list");
  return out;
}

void print_report(const dcrec::EvalReport& report) {
  std::fputs(report.table().c_str(), stdout);
  std::printf("users\t%d\n", report.num_users);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dcrec: diffusion-based sequential recommender"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, input_path;
  std::optional<std::uint64_t> seed;

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "split raw interactions into a dataset directory");
  std::string synthetic_kind;
  int pre_max_len = 50, pre_min_len = 5, syn_users = 2000, syn_items = 50, syn_seq = 10;
  std::uint64_t pre_seed = 0;
  auto* pre_input = pre->add_option("--input", input_path, "interactions TSV (user, item, timestamp)");
  auto* pre_syn = pre->add_option("--synthetic", synthetic_kind, "generate data instead: cycle or mixture");
  pre_input->excludes(pre_syn);
  pre->add_option("--out", out_path, "output dataset directory")->required();
  pre->add_option("--max-len", pre_max_len, "keep at most this many recent interactions per user");
  pre->add_option("--min-len", pre_min_len, "drop users with fewer interactions");
  pre->add_option("--users", syn_users, "synthetic user count");
  pre->add_option("--items", syn_items, "synthetic item count");
  pre->add_option("--seq-len", syn_seq, "synthetic interactions per user");
  pre->add_option("--seed", pre_seed, "synthetic generator seed");
  pre->callback([&] {
    if (input_path.empty() == synthetic_kind.empty())
      throw CLI::ValidationError("preprocess", "need exactly one of --input or --synthetic");
    const dcrec::InteractionLog log =
        input_path.empty()
            ? dcrec::make_synthetic(synthetic_kind, syn_users, syn_items, syn_seq, pre_seed)
            : dcrec::ingest_interactions(input_path);
    const dcrec::SplitDataset ds = dcrec::preprocess(log, pre_max_len, pre_min_len);
    dcrec::save_dataset(ds, out_path);
    std::printf("items\t%d\ntrain\t%zu\nvalidation\t%zu\ntest\t%zu\nwrote\t%s\n", ds.num_items(),
                ds.train.size(), ds.validation.size(), ds.test.size(), out_path.c_str());
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model and write run artifacts");
  train_cmd->add_option("--data", data_path, "dataset directory or interactions TSV")->required();
  train_cmd->add_option("--config", config_path, "JSON config file");
  train_cmd->add_option("--out", out_path, "artifacts directory")->required();
  train_cmd->add_option("--seed", seed, "override the config seed");
  train_cmd->callback([&] {
    const dcrec::ExperimentConfig cfg = resolve_config(config_path, seed);
    const dcrec::SplitDataset ds = resolve_dataset(data_path, cfg);
    const dcrec::ExperimentResult res = dcrec::run_experiment(cfg, ds, out_path);
    std::printf("trained %d epochs (best val HR@10 %.4f) in %.1fs\n", res.trained.epochs_run,
                res.trained.best_val_hr, res.train_seconds);
    print_report(res.report);
    std::printf("artifacts\t%s\n", out_path.c_str());
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the test split");
  std::string ckpt_path;
  std::optional<int> steps_override;
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint stem (without .json/.bin)")
      ->required();
  eval_cmd->add_option("--data", data_path, "dataset directory or interactions TSV")->required();
  eval_cmd->add_option("--config", config_path, "JSON config file");
  eval_cmd->add_option("--steps", steps_override, "denoising steps at inference");
  eval_cmd->add_option("--out", out_path, "write the report JSON here");
  eval_cmd->add_option("--seed", seed, "override the config seed");
  eval_cmd->callback([&] {
    const dcrec::ExperimentConfig cfg = resolve_config(config_path, seed);
    const dcrec::SplitDataset ds = resolve_dataset(data_path, cfg);
    const dcrec::Checkpoint ckpt = dcrec::load_checkpoint(ckpt_path);
    const dcrec::NoiseSchedule sched =
        dcrec::build_schedule(cfg.total_steps, cfg.beta_min, cfg.beta_max, cfg.beta_rescale);
    dcrec::EvalConfig ec = dcrec::to_eval_config(cfg);
    if (steps_override) ec.num_steps = *steps_override;
    const dcrec::EvalReport report = dcrec::evaluate(ckpt.params, ckpt.table, ds.test, sched, ec,
                                                     dcrec::variant_flags(cfg.variant));
    print_report(report);
    if (!out_path.empty()) {
      std::ofstream out(out_path);
      if (!out) throw std::runtime_error("eval: cannot write " + out_path);
      out << report.to_json().dump(2) << "\n";
    }
  });

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "rank next items for one interaction history");
  std::string history_text;
  std::optional<int> infer_steps;
  std::optional<double> infer_delta;
  int top_k = 10;
  infer_cmd->add_option("--checkpoint", ckpt_path, "checkpoint stem (without .json/.bin)")
      ->required();
  infer_cmd->add_option("--history", history_text, "comma-separated item IDs, oldest first")
      ->required();
  infer_cmd->add_option("--config", config_path, "JSON config file");
  infer_cmd->add_option("--data", data_path, "dataset directory; maps raw item labels");
  infer_cmd->add_option("--steps", infer_steps, "denoising steps");
  infer_cmd->add_option("--delta", infer_delta, "history shift scale on the initial noise");
  infer_cmd->add_option("--topk", top_k, "list length");
  infer_cmd->add_option("--seed", seed, "noise seed");
  infer_cmd->callback([&] {
    const dcrec::ExperimentConfig cfg = resolve_config(config_path, seed);
    const dcrec::Checkpoint ckpt = dcrec::load_checkpoint(ckpt_path);

    // Raw labels go through the dataset vocabulary when one is given;
    // otherwise entries are the internal 1-based IDs.
    std::vector<std::string> labels;
    {
      std::string token;
      std::stringstream ss(history_text);
      while (std::getline(ss, token, ',')) labels.push_back(token);
    }
    if (labels.empty()) throw std::invalid_argument("infer: empty history");
    dcrec::SplitDataset ds;
    const bool mapped = !data_path.empty();
    if (mapped) ds = dcrec::load_dataset(data_path);
    std::vector<int> ids;
    for (const std::string& label : labels) {
      if (mapped) {
        auto it = ds.vocab.find(label);
        if (it == ds.vocab.end())
          throw std::invalid_argument("infer: item '" + label + "' not in the vocabulary");
        ids.push_back(it->second);
      } else {
        ids.push_back(std::stoi(label));
        if (ids.back() < 1 || ids.back() > ckpt.table.num_items)
          throw std::invalid_argument("infer: item ID " + label + " out of range");
      }
    }
    // Left-pad to the model's history length; keep the most recent items.
    const int hist_len = ckpt.params.max_rows - 1;
    if (static_cast<int>(ids.size()) > hist_len)
      ids.erase(ids.begin(), ids.end() - hist_len);
    std::vector<int> history(hist_len, 0);
    std::copy(ids.begin(), ids.end(), history.end() - static_cast<long>(ids.size()));

    const dcrec::NoiseSchedule sched =
        dcrec::build_schedule(cfg.total_steps, cfg.beta_min, cfg.beta_max, cfg.beta_rescale);
    dcrec::InferenceConfig icfg;
    icfg.num_steps = infer_steps ? *infer_steps : cfg.eval_num_steps;
    icfg.delta = infer_delta ? *infer_delta : cfg.delta;
    icfg.top_k = std::min(top_k, ckpt.table.num_items);
    icfg.seed = cfg.seed;
    dcrec::InferenceSession session(ckpt.params, ckpt.table, sched,
                                    dcrec::variant_flags(cfg.variant));
    std::printf("rank\titem\tscore\n");
    int rank = 1;
    for (const dcrec::ScoredItem& s : session.infer_scored(history, icfg)) {
      const std::string label = mapped ? ds.id_to_item[s.id] : std::to_string(s.id);
      std::printf("%d\t%s\t%.4f\n", rank++, label.c_str(), s.score);
    }
  });

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "compare model variants over shared seeds");
  std::string suite, seeds_text = "1,2,3";
  ablate_cmd->add_option("--suite", suite, "loss, module, conditioning, or noise")->required();
  ablate_cmd->add_option("--data", data_path, "dataset directory or interactions TSV")
      ->required();
  ablate_cmd->add_option("--config", config_path, "JSON config file");
  ablate_cmd->add_option("--seeds", seeds_text, "comma-separated training seeds (>= 3)");
  ablate_cmd->add_option("--out", out_path, "also write the table into this directory");
  ablate_cmd->callback([&] {
    const dcrec::ExperimentConfig cfg = resolve_config(config_path, seed);
    const dcrec::SplitDataset ds = resolve_dataset(data_path, cfg);
    std::vector<std::uint64_t> seeds;
    for (int s : parse_int_list(seeds_text, "--seeds"))
      seeds.push_back(static_cast<std::uint64_t>(s));
    const dcrec::AblationResult res = dcrec::ablate(suite, cfg, ds, seeds);
    const std::string tsv = dcrec::ablation_tsv(res);
    std::fputs(tsv.c_str(), stdout);
    if (!out_path.empty()) {
      std::filesystem::create_directories(out_path);
      const std::string file = (std::filesystem::path(out_path) / ("ablation_" + suite + ".tsv")).string();
      std::ofstream out(file);
      if (!out) throw std::runtime_error("ablate: cannot write " + file);
      out << tsv;
      std::printf("wrote\t%s\n", file.c_str());
    }
  });

  // sweep-steps
  auto* sweep_cmd = app.add_subcommand("sweep-steps",
                                       "evaluate one model at several inference step counts");
  std::string steps_text = "1,2,5,10,25,50";
  int repeats = 1;
  sweep_cmd->add_option("--data", data_path, "dataset directory or interactions TSV")->required();
  sweep_cmd->add_option("--config", config_path, "JSON config file");
  sweep_cmd->add_option("--checkpoint", ckpt_path, "reuse this checkpoint instead of training");
  sweep_cmd->add_option("--steps", steps_text, "comma-separated step counts");
  sweep_cmd->add_option("--repeats", repeats, "timing repeats per point");
  sweep_cmd->add_option("--out", out_path, "write sweep.tsv and sweep.svg into this directory");
  sweep_cmd->add_option("--seed", seed, "override the config seed");
  sweep_cmd->callback([&] {
    const dcrec::ExperimentConfig cfg = resolve_config(config_path, seed);
    const dcrec::SplitDataset ds = resolve_dataset(data_path, cfg);
    dcrec::Checkpoint model;
    if (!ckpt_path.empty()) {
      model = dcrec::load_checkpoint(ckpt_path);
    } else {
      const dcrec::TrainOutput trained = dcrec::train(dcrec::to_train_settings(cfg), ds);
      model.params = trained.params;
      model.table = trained.table;
    }
    const dcrec::SweepResult res = dcrec::sweep_steps(
        model.params, model.table, ds, cfg, parse_int_list(steps_text, "--steps"), repeats);
    std::fputs(res.to_tsv().c_str(), stdout);
    if (!out_path.empty()) {
      std::filesystem::create_directories(out_path);
      const std::filesystem::path dir(out_path);
      std::ofstream out(dir / "sweep.tsv");
      if (!out) throw std::runtime_error("sweep-steps: cannot write sweep.tsv");
      out << res.to_tsv();
      dcrec::write_sweep_plot(res, (dir / "sweep.svg").string());
      std::printf("wrote\t%s\n", (dir / "sweep.tsv").string().c_str());
      std::printf("wrote\t%s\n", (dir / "sweep.svg").string().c_str());
    }
  });

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "render a sweep TSV as an SVG chart");
  plot_cmd->add_option("--input", input_path, "sweep TSV file")->required();
  plot_cmd->add_option("--out", out_path, "output SVG path")->required();
  plot_cmd->callback([&] {
    std::ifstream in(input_path);
    if (!in) throw std::runtime_error("plot: cannot open " + input_path);
    dcrec::write_sweep_plot(dcrec::parse_sweep_tsv(in), out_path);
    std::printf("wrote\t%s\n", out_path.c_str());
  });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
