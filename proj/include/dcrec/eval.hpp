#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcrec/data.hpp"
#include "dcrec/sampler.hpp"

namespace dcrec {

// Leave-one-out metrics: a single relevant item per user, all items as
// candidates.

inline int hr_at_k(const std::vector<int>& ranked, int target, int k) {
  if (k < 1 || k > static_cast<int>(ranked.size()))
    throw std::invalid_argument("hr_at_k: K exceeds ranked list");
  for (int i = 0; i < k; ++i)
    if (ranked[i] == target) return 1;
  return 0;
}

// 1 / log2(rank + 1) with a 1-based rank; with one relevant item the ideal
// DCG is 1, so this is already normalized.
inline double ndcg_at_k(const std::vector<int>& ranked, int target, int k) {
  if (k < 1 || k > static_cast<int>(ranked.size()))
    throw std::invalid_argument("ndcg_at_k: K exceeds ranked list");
  for (int i = 0; i < k; ++i)
    if (ranked[i] == target) return 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return 0.0;
}

struct EvalReport {
  int num_users = 0;
  std::map<int, double> hr;    // K -> mean HR@K
  std::map<int, double> ndcg;  // K -> mean NDCG@K

  nlohmann::json to_json() const {
    nlohmann::json metrics;
    for (const auto& [k, v] : hr) metrics["HR@" + std::to_string(k)] = v;
    for (const auto& [k, v] : ndcg) metrics["NDCG@" + std::to_string(k)] = v;
    return nlohmann::json{{"num_users", num_users}, {"metrics", metrics}};
  }

  std::string table() const {
    std::string out = "metric\tvalue\n";
    for (const auto& [k, v] : hr) out += "HR@" + std::to_string(k) + "\t" + std::to_string(v) + "\n";
    for (const auto& [k, v] : ndcg)
      out += "NDCG@" + std::to_string(k) + "\t" + std::to_string(v) + "\n";
    return out;
  }
};

// Mean of per-user metrics over (ranked list, target) pairs.
inline EvalReport aggregate_metrics(const std::vector<std::vector<int>>& ranked_lists,
                                    const std::vector<int>& targets,
                                    const std::vector<int>& ks) {
  if (ranked_lists.size() != targets.size() || ranked_lists.empty())
    throw std::invalid_argument("aggregate_metrics: empty or mismatched inputs");
  EvalReport report;
  report.num_users = static_cast<int>(ranked_lists.size());
  for (int k : ks) {
    double hr_sum = 0.0, ndcg_sum = 0.0;
    for (std::size_t i = 0; i < ranked_lists.size(); ++i) {
      hr_sum += hr_at_k(ranked_lists[i], targets[i], k);
      ndcg_sum += ndcg_at_k(ranked_lists[i], targets[i], k);
    }
    report.hr[k] = hr_sum / report.num_users;
    report.ndcg[k] = ndcg_sum / report.num_users;
  }
  return report;
}

struct EvalConfig {
  std::vector<int> ks = {5, 10};
  int num_steps = 50;  // T' used for the denoising pass
  double delta = 0.1;
  std::uint64_t seed = 0;
  int max_users = 0;  // 0 = evaluate every user in the split
};

// Runs the sampler once per user and averages the ranking metrics. Each user
// gets an independent noise stream derived from (seed, user index), so the
// report is a pure function of (model, split, config).
inline EvalReport evaluate(const DCDTParams& params, const ItemEmbeddingTable& table,
                           const std::vector<InteractionSequence>& split,
                           const NoiseSchedule& sched, const EvalConfig& cfg,
                           VariantFlags flags = {}) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  const int n_users = cfg.max_users > 0
                          ? std::min<int>(cfg.max_users, static_cast<int>(split.size()))
                          : static_cast<int>(split.size());
  const int max_k = *std::max_element(cfg.ks.begin(), cfg.ks.end());

  InferenceSession session(params, table, sched, flags);
  std::vector<std::vector<int>> ranked(n_users);
  std::vector<int> targets(n_users);
  for (int u = 0; u < n_users; ++u) {
    InferenceConfig icfg;
    icfg.num_steps = cfg.num_steps;
    icfg.delta = cfg.delta;
    icfg.top_k = std::min(max_k, table.num_items);
    icfg.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(u));
    ranked[u] = session.infer(split[u].history, icfg);
    targets[u] = split[u].target;
  }
  return aggregate_metrics(ranked, targets, cfg.ks);
}

}  // namespace dcrec
