#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dcrec/autograd.hpp"
#include "dcrec/data.hpp"
#include "dcrec/dcdt.hpp"
#include "dcrec/itemspace.hpp"
#include "dcrec/linalg.hpp"
#include "dcrec/rng.hpp"
#include "dcrec/schedule.hpp"

namespace dcrec {

struct InferenceConfig {
  int num_steps = 50;     // T', number of denoising steps actually run
  double delta = 0.1;     // implicit conditioning scale on the initial noise
  int top_k = 10;
  std::uint64_t seed = 0;
};

// Evenly spaced descending steps from T to 1 inclusive. The gap between
// consecutive entries is the skip width; num_steps = T means no skipping.
inline std::vector<int> select_inference_steps(int total_steps, int num_steps) {
  if (num_steps < 1 || num_steps > total_steps)
    throw std::invalid_argument("select_inference_steps: num_steps out of range");
  std::vector<int> steps(num_steps);
  if (num_steps == 1) {
    steps[0] = total_steps;
    return steps;
  }
  const double gap = static_cast<double>(total_steps - 1) / (num_steps - 1);
  for (int i = 0; i < num_steps; ++i)
    steps[i] = static_cast<int>(std::llround(total_steps - i * gap));
  return steps;
}

// Holds a model bound once to a no-grad tape so repeated denoising passes
// reuse the parameter leaves instead of copying every tensor per call.
class InferenceSession {
 public:
  InferenceSession(const DCDTParams& params, const ItemEmbeddingTable& table,
                   const NoiseSchedule& sched, VariantFlags flags = {})
      : params_(&params),
        table_(&table),
        sched_(&sched),
        flags_(flags),
        tape_(false),
        weights_(bind_dcdt(tape_, params, false)),
        mark_(tape_.mark()) {}

  Matrix denoise(const Matrix& s_t, int t, const Matrix& h0, const PadMask& pad) {
    tape_.rewind(mark_);
    Node* out = dcdt_forward(tape_, weights_, *params_, tape_.leaf(s_t), t,
                             tape_.leaf(h0), pad, flags_);
    return out->value;
  }

  // Full reverse pass: start from conditioned noise, repeatedly predict the
  // clean sequence and re-noise it to the next (smaller) step, then read the
  // target row out of the final prediction.
  Vector denoised_target_embedding(const std::vector<int>& history_ids,
                                   const InferenceConfig& cfg) {
    const int n = params_->max_rows, d = params_->dim;
    if (static_cast<int>(history_ids.size()) != n - 1)
      throw std::invalid_argument("infer: history length must be max_rows - 1");
    const Matrix h0 = embed_ids(history_ids, *table_);
    const PadMask pad = pad_mask_of(history_ids);

    Rng rng(cfg.seed);
    Matrix s(n, d);
    if (flags_.partial_noise) {
      // History rows stay clean; only the target row starts as noise.
      s.topRows(n - 1) = h0;
      s.row(n - 1) = rng.normal_matrix(1, d);
    } else {
      s = rng.normal_matrix(n, d);
      if (flags_.implicit_init_shift && cfg.delta != 0.0)
        s.topRows(n - 1) += cfg.delta * h0;
    }

    const std::vector<int> steps = select_inference_steps(sched_->num_steps, cfg.num_steps);
    for (std::size_t i = 0; i < steps.size(); ++i) {
      Matrix s0_hat = denoise(s, steps[i], h0, pad);
      if (i + 1 < steps.size()) {
        const int t_next = steps[i + 1];
        if (flags_.partial_noise) {
          s.topRows(n - 1) = h0;
          Matrix target = s0_hat.row(n - 1);
          s.row(n - 1) =
              forward_marginal(target, t_next, *sched_, rng.normal_matrix(1, d));
        } else {
          s = forward_marginal(s0_hat, t_next, *sched_, rng.normal_matrix(n, d));
        }
      } else {
        s = std::move(s0_hat);
      }
    }
    return s.row(n - 1).transpose();
  }

  std::vector<ScoredItem> infer_scored(const std::vector<int>& history_ids,
                                       const InferenceConfig& cfg) {
    if (cfg.top_k < 1 || cfg.top_k > table_->num_items)
      throw std::invalid_argument("infer: top_k out of range");
    Vector e0 = denoised_target_embedding(history_ids, cfg);
    std::vector<ScoredItem> scored = score_items(e0, *table_);
    scored.resize(cfg.top_k);
    return scored;
  }

  std::vector<int> infer(const std::vector<int>& history_ids, const InferenceConfig& cfg) {
    std::vector<ScoredItem> scored = infer_scored(history_ids, cfg);
    std::vector<int> ids(scored.size());
    for (std::size_t i = 0; i < scored.size(); ++i) ids[i] = scored[i].id;
    return ids;
  }

  const VariantFlags& flags() const { return flags_; }

 private:
  const DCDTParams* params_;
  const ItemEmbeddingTable* table_;
  const NoiseSchedule* sched_;
  VariantFlags flags_;
  Tape tape_;
  DCDTNodes weights_;
  std::size_t mark_;
};

inline std::vector<int> infer_next_item(const std::vector<int>& history_ids,
                                        const DCDTParams& params,
                                        const ItemEmbeddingTable& table,
                                        const NoiseSchedule& sched, const InferenceConfig& cfg,
                                        VariantFlags flags = {}) {
  InferenceSession session(params, table, sched, flags);
  return session.infer(history_ids, cfg);
}

}  // namespace dcrec
