#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcrec/autograd.hpp"
#include "dcrec/data.hpp"
#include "dcrec/dcdt.hpp"
#include "dcrec/eval.hpp"
#include "dcrec/itemspace.hpp"
#include "dcrec/sampler.hpp"
#include "dcrec/schedule.hpp"

namespace dcrec {

// Balance-factor schedules for the item-space loss weight.
struct LambdaSchedule {
  enum class Kind { fix, decline, smooth };
  Kind kind = Kind::fix;
  double c = 0.1;      // fix
  double max = 0.2;    // decline / smooth amplitude
  double min = 0.003;  // decline / smooth floor
};

inline LambdaSchedule::Kind lambda_kind(const std::string& name) {
  if (name == "fix") return LambdaSchedule::Kind::fix;
  if (name == "decline") return LambdaSchedule::Kind::decline;
  if (name == "smooth") return LambdaSchedule::Kind::smooth;
  throw std::invalid_argument("lambda_kind: unknown schedule " + name);
}

inline double lambda_value(const LambdaSchedule& s, int epoch) {
  if (epoch < 0) throw std::invalid_argument("lambda_value: epoch must be >= 0");
  double v = 0.0;
  switch (s.kind) {
    case LambdaSchedule::Kind::fix:
      v = s.c;
      break;
    case LambdaSchedule::Kind::decline:
      // Grows linearly from the floor and saturates at max + min.
      v = s.max - (0.2 - epoch / 400.0) + s.min;
      v = std::clamp(v, s.min, s.max + s.min);
      break;
    case LambdaSchedule::Kind::smooth:
      v = epoch >= 150 ? s.min : s.max * std::pow(1.0 - epoch / 150.0, 9.0) + s.min;
      break;
  }
  return std::clamp(v, 0.0, 1.0);
}

// Per-batch loss bookkeeping. total is the optimized objective; with all
// three terms enabled it equals l_T + (1 - lambda) * l_t + lambda * l_z.
struct LossRecord {
  double l_T = 0.0;
  double l_t = 0.0;
  double l_z = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  int epoch = 0;
  long step = 0;
  int degenerate = 0;  // predictions whose target row had no direction
  double val_hr = std::numeric_limits<double>::quiet_NaN();
};

inline void write_training_log(const std::vector<LossRecord>& log, std::ostream& out) {
  out << "epoch\tstep\tL_T\tL_t\tL_z\tlambda\ttotal\tval_HR@10\n";
  for (const LossRecord& r : log) {
    out << r.epoch << '\t' << r.step << '\t' << r.l_T << '\t' << r.l_t << '\t' << r.l_z
        << '\t' << r.lambda << '\t' << r.total << '\t' << r.val_hr << '\n';
  }
}

struct LossMask {
  bool l_T = true;
  bool l_t = true;
  bool l_z = true;

  bool all() const { return l_T && l_t && l_z; }
};

// Term weights of the optimized objective. The full loss uses the canonical
// (1, 1-lambda, lambda) weighting; an ablated subset takes its raw terms.
struct LossWeights {
  double w_T, w_t, w_z;
};

inline LossWeights loss_weights(const LossMask& mask, double lambda) {
  if (mask.all()) return {1.0, 1.0 - lambda, lambda};
  return {mask.l_T ? 1.0 : 0.0, mask.l_t ? 1.0 : 0.0, mask.l_z ? 1.0 : 0.0};
}

namespace detail {

// Cross-entropy over cosine-similarity logits between the predicted target
// row (1 x d) and every non-padding table row, at temperature tau.
inline Node* item_loss_graph(Tape& tape, Node* e0_hat, Node* table_node, int num_items,
                             int target_id, double tau) {
  Node* e_hat_n = tape.l2_normalize_rows(e0_hat);
  Node* rows_n = tape.l2_normalize_rows(tape.slice_rows(table_node, 1, num_items));
  Node* logits = tape.scale(tape.matmul_nt(e_hat_n, rows_n), 1.0 / tau);
  return tape.cross_entropy_with_index(logits, target_id - 1);
}

}  // namespace detail

struct LossTermValues {
  double l_T = 0.0;
  double l_t = 0.0;
  double l_z = 0.0;
  bool degenerate = false;
};

// Standalone loss evaluation on plain values, sharing the graph code used in
// training. A zero-norm prediction has no cosine direction; its item loss
// falls back to the uniform-logit cost ln(num_items) and is flagged.
inline LossTermValues loss_terms(const Matrix& s0_hat, const Vector& e0_hat, const Vector& e0,
                                 int target_id, const ItemEmbeddingTable& table,
                                 double tau = 0.07) {
  if (target_id < 1 || target_id > table.num_items)
    throw std::invalid_argument("loss_terms: target must be a non-padding item");
  LossTermValues out;
  out.l_T = s0_hat.array().square().mean();
  out.l_t = (e0_hat - e0).array().square().mean();
  if (e0_hat.norm() < 1e-12) {
    out.degenerate = true;
    out.l_z = std::log(static_cast<double>(table.num_items));
    return out;
  }
  Tape tape(false);
  Node* lz = detail::item_loss_graph(tape, tape.leaf(e0_hat.transpose()),
                                     tape.leaf(table.weights), table.num_items, target_id, tau);
  out.l_z = lz->value(0, 0);
  return out;
}

// Pre-drawn randomness for one batch so the objective is a deterministic
// function of (parameters, batch, plan); finite-difference checks rely on it.
struct NoisePlan {
  std::vector<int> ts;
  std::vector<Matrix> noises;  // one (max_rows x dim) standard normal each
};

inline NoisePlan make_noise_plan(Rng& rng, int batch, int total_steps, int rows, int dim) {
  NoisePlan plan;
  plan.ts.reserve(batch);
  plan.noises.reserve(batch);
  for (int i = 0; i < batch; ++i) {
    plan.ts.push_back(rng.uniform_int(1, total_steps));
    plan.noises.push_back(rng.normal_matrix(rows, dim));
  }
  return plan;
}

struct TrainerOptions {
  double tau = 0.07;
  LossMask loss_mask;
  VariantFlags variant;
  int chunk = 32;  // examples per tape
};

// Builds the diffusion training objective for a batch and (optionally) its
// gradients. Gradient buffers are ordered as params.tensors() followed by the
// embedding table. Passing grads = nullptr evaluates the value only.
inline LossRecord batch_objective(const DCDTParams& params, const ItemEmbeddingTable& table,
                                  std::span<const InteractionSequence> batch,
                                  const NoisePlan& plan, double lambda,
                                  const NoiseSchedule& sched, const TrainerOptions& opt,
                                  std::vector<Matrix>* grads, bool train_mode = false,
                                  Rng* dropout_rng = nullptr) {
  if (batch.empty()) throw std::invalid_argument("batch_objective: empty batch");
  if (plan.ts.size() != batch.size() || plan.noises.size() != batch.size())
    throw std::invalid_argument("batch_objective: noise plan size mismatch");

  const int n = params.max_rows, d = params.dim;
  const LossWeights w = loss_weights(opt.loss_mask, lambda);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  LossRecord record;
  record.lambda = lambda;

  const std::size_t chunk = std::max(1, opt.chunk);
  for (std::size_t begin = 0; begin < batch.size(); begin += chunk) {
    const std::size_t end = std::min(batch.size(), begin + chunk);
    Tape tape(grads != nullptr);
    DCDTNodes weights = bind_dcdt(tape, params, grads != nullptr);
    Node* table_node = tape.leaf(table.weights, grads != nullptr);

    Node* chunk_total = nullptr;
    for (std::size_t i = begin; i < end; ++i) {
      const InteractionSequence& ex = batch[i];
      if (ex.target < 1 || ex.target > table.num_items)
        throw std::invalid_argument("batch_objective: target out of vocabulary");
      const int t = plan.ts[i];
      const double ab = sched.alpha_bar[t];
      const PadMask pad = pad_mask_of(ex.history);

      Node* h0 = tape.gather_rows(table_node, ex.history);
      Node* e0 = tape.gather_rows(table_node, {ex.target});
      Node* s0 = opt.variant.broadcast_target_input
                     ? tape.gather_rows(table_node, std::vector<int>(n, ex.target))
                     : tape.concat_rows(h0, e0);

      Node* s_t;
      if (opt.variant.partial_noise) {
        // Clean history, noised target row.
        Matrix target_noise = std::sqrt(1.0 - ab) * plan.noises[i].row(n - 1);
        Node* e_t = tape.add(tape.scale(e0, std::sqrt(ab)), tape.leaf(target_noise));
        s_t = tape.concat_rows(h0, e_t);
      } else {
        Matrix scaled_noise = std::sqrt(1.0 - ab) * plan.noises[i];
        s_t = tape.add(tape.scale(s0, std::sqrt(ab)), tape.leaf(scaled_noise));
      }

      Node* s0_hat = dcdt_forward(tape, weights, params, s_t, t, h0, pad, opt.variant,
                                  train_mode, dropout_rng);
      Node* l_T = tape.mean_all(tape.cmul(s0_hat, s0_hat));
      Node* e0_hat = tape.slice_rows(s0_hat, n - 1, 1);
      Node* diff = tape.sub(e0_hat, e0);
      Node* l_t = tape.mean_all(tape.cmul(diff, diff));

      Node* l_z;
      if (e0_hat->value.norm() < 1e-12) {
        ++record.degenerate;
        l_z = tape.leaf(Matrix::Constant(1, 1, std::log(double(table.num_items))));
      } else {
        l_z = detail::item_loss_graph(tape, e0_hat, table_node, table.num_items, ex.target,
                                      opt.tau);
      }

      record.l_T += l_T->value(0, 0) * inv_batch;
      record.l_t += l_t->value(0, 0) * inv_batch;
      record.l_z += l_z->value(0, 0) * inv_batch;

      Node* total = tape.add(tape.add(tape.scale(l_T, w.w_T), tape.scale(l_t, w.w_t)),
                             tape.scale(l_z, w.w_z));
      chunk_total = chunk_total ? tape.add(chunk_total, total) : total;
    }

    if (grads) {
      Node* root = tape.scale(chunk_total, inv_batch);
      tape.backward(root);
      for (std::size_t k = 0; k < weights.all.size(); ++k) (*grads)[k] += weights.all[k]->grad;
      grads->back() += table_node->grad;
    }
  }

  record.total = w.w_T * record.l_T + w.w_t * record.l_t + w.w_z * record.l_z;
  return record;
}

inline double global_grad_norm(const std::vector<Matrix>& grads) {
  double sq = 0.0;
  for (const Matrix& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

// Adam with bias correction and no weight decay.
struct AdamState {
  double lr = 4e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::vector<Matrix> m, v;

  void init(const std::vector<Matrix*>& tensors) {
    m.clear();
    v.clear();
    for (const Matrix* t : tensors) {
      m.push_back(Matrix::Zero(t->rows(), t->cols()));
      v.push_back(Matrix::Zero(t->rows(), t->cols()));
    }
    step_count = 0;
  }

  void update(std::vector<Matrix*>& tensors, const std::vector<Matrix>& grads) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, step_count);
    const double bc2 = 1.0 - std::pow(beta2, step_count);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i].cwiseProduct(grads[i]);
      Matrix m_hat = m[i] / bc1;
      Matrix v_hat = v[i] / bc2;
      tensors[i]->array() -= lr * m_hat.array() / (v_hat.array().sqrt() + eps);
    }
  }
};

struct TrainSettings {
  // model
  int num_blocks = 4;
  int dim = 128;
  double attn_dropout = 0.1;
  double embed_dropout = 0.4;
  // diffusion
  int total_steps = 50;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  bool beta_rescale = true;
  // optimization
  int batch_size = 512;
  double lr = 4e-3;
  int max_epochs = 200;
  int patience = 5;
  double grad_clip = 1.0;
  double tau = 0.07;
  LambdaSchedule lambda_schedule;
  LossMask loss_mask;
  std::string variant = "dcrec";
  std::uint64_t seed = 0;
  // validation
  double delta = 0.1;
  int val_num_steps = 5;
  int val_max_users = 1024;
};

struct TrainOutput {
  DCDTParams params;
  ItemEmbeddingTable table;
  std::vector<LossRecord> log;
  double best_val_hr = 0.0;
  int epochs_run = 0;
  bool early_stopped = false;
};

// One optimizer pass over a batch with bound model and optimizer state.
class Trainer {
 public:
  Trainer(DCDTParams& params, ItemEmbeddingTable& table, const NoiseSchedule& sched,
          const TrainerOptions& opt, double lr, double grad_clip, std::uint64_t seed)
      : params_(&params),
        table_(&table),
        sched_(&sched),
        opt_(opt),
        grad_clip_(grad_clip),
        noise_rng_(derive_seed(seed, 1)),
        dropout_rng_(derive_seed(seed, 2)),
        repair_rng_(derive_seed(seed, 3)) {
    collect_tensors();
    adam_.lr = lr;
    adam_.init(tensors_);
  }

  LossRecord train_step(std::span<const InteractionSequence> batch, double lambda) {
    NoisePlan plan =
        make_noise_plan(noise_rng_, static_cast<int>(batch.size()), sched_->num_steps,
                        params_->max_rows, params_->dim);
    std::vector<Matrix> grads;
    for (const Matrix* t : tensors_) grads.push_back(Matrix::Zero(t->rows(), t->cols()));

    LossRecord record = batch_objective(*params_, *table_, batch, plan, lambda, *sched_, opt_,
                                        &grads, /*train_mode=*/true, &dropout_rng_);

    grads.back().row(0).setZero();  // padding embedding stays frozen
    const double norm = global_grad_norm(grads);
    if (grad_clip_ > 0.0 && norm > grad_clip_) {
      const double s = grad_clip_ / norm;
      for (Matrix& g : grads) g *= s;
    }
    adam_.update(tensors_, grads);
    table_->weights.row(0).setZero();
    reinit_collapsed_rows(*table_, repair_rng_);
    return record;
  }

  AdamState& optimizer() { return adam_; }

 private:
  void collect_tensors() {
    for (auto& [name, m] : params_->tensors()) tensors_.push_back(m);
    tensors_.push_back(&table_->weights);
  }

  DCDTParams* params_;
  ItemEmbeddingTable* table_;
  const NoiseSchedule* sched_;
  TrainerOptions opt_;
  double grad_clip_;
  AdamState adam_;
  std::vector<Matrix*> tensors_;
  Rng noise_rng_, dropout_rng_, repair_rng_;
};

// Full training loop: epoch shuffling, per-epoch lambda, validation ranking
// after every epoch, patience-based early stopping on validation HR, best
// checkpoint restored at the end.
inline TrainOutput train(const TrainSettings& s, const SplitDataset& ds) {
  if (ds.train.empty()) throw std::invalid_argument("train: empty training split");

  const int n = ds.max_len;
  NoiseSchedule sched = build_schedule(s.total_steps, s.beta_min, s.beta_max, s.beta_rescale);
  Rng init_rng(derive_seed(s.seed, 100));
  Rng table_rng(derive_seed(s.seed, 101));

  TrainOutput out;
  out.params = init_dcdt(s.num_blocks, s.dim, n, init_rng);
  out.params.attn_dropout = s.attn_dropout;
  out.params.embed_dropout = s.embed_dropout;
  out.table = init_item_embeddings(ds.num_items(), s.dim, table_rng);

  TrainerOptions opt;
  opt.tau = s.tau;
  opt.loss_mask = s.loss_mask;
  opt.variant = variant_flags(s.variant);
  Trainer trainer(out.params, out.table, sched, opt, s.lr, s.grad_clip, s.seed);

  EvalConfig val_cfg;
  val_cfg.ks = {std::min(10, ds.num_items())};
  val_cfg.num_steps = std::min(s.val_num_steps, s.total_steps);
  val_cfg.delta = s.delta;
  val_cfg.seed = derive_seed(s.seed, 200);
  val_cfg.max_users = s.val_max_users;

  DCDTParams best_params = out.params;
  ItemEmbeddingTable best_table = out.table;
  double best_val = -1.0;
  int flat_epochs = 0;
  long global_step = 0;
  double last_val = std::numeric_limits<double>::quiet_NaN();

  std::vector<std::size_t> order(ds.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < s.max_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(s.seed, 300 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int>(i) - 1)]);

    const double lambda = lambda_value(s.lambda_schedule, epoch);
    std::vector<InteractionSequence> batch;
    for (std::size_t pos = 0; pos < order.size(); pos += s.batch_size) {
      batch.clear();
      for (std::size_t i = pos; i < std::min(order.size(), pos + s.batch_size); ++i)
        batch.push_back(ds.train[order[i]]);
      LossRecord rec = trainer.train_step(batch, lambda);
      rec.epoch = epoch;
      rec.step = ++global_step;
      rec.val_hr = last_val;
      out.log.push_back(rec);
    }

    EvalReport val =
        evaluate(out.params, out.table, ds.validation, sched, val_cfg, opt.variant);
    last_val = val.hr.begin()->second;
    if (!out.log.empty()) out.log.back().val_hr = last_val;
    out.epochs_run = epoch + 1;

    // Ties refresh the snapshot (a later epoch is better trained at equal
    // validation score) but only a strict improvement resets patience.
    if (last_val >= best_val) {
      if (last_val > best_val) flat_epochs = -1;
      best_val = last_val;
      best_params = out.params;
      best_table = out.table;
    }
    if (++flat_epochs >= s.patience) {
      out.early_stopped = true;
      break;
    }
  }

  out.params = std::move(best_params);
  out.table = std::move(best_table);
  out.best_val_hr = best_val;
  return out;
}

}  // namespace dcrec
