#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dcrec/autograd.hpp"
#include "dcrec/linalg.hpp"
#include "dcrec/rng.hpp"

namespace dcrec {

// Layer norm whose gain and bias come from two-layer MLPs on the conditioning
// vector [timestep embedding, pooled history]. Gain is produced as (1 + raw)
// and the MLP output layers start at zero, so the initial transform is plain
// standardization.
struct CondLNParams {
  Matrix gain_w1, gain_b1, gain_w2, gain_b2;
  Matrix bias_w1, bias_b1, bias_w2, bias_b2;
};

struct BlockParams {
  CondLNParams ln_sa, ln_ca, ln_ffn;
  Matrix sa_q, sa_k, sa_v, sa_o;
  Matrix ca_q, ca_k, ca_v, ca_o;
  Matrix ffn_w, ffn_b;
};

struct DCDTParams {
  int num_blocks = 0;
  int dim = 0;
  int max_rows = 0;  // history length + 1 target row
  double attn_dropout = 0.1;
  double embed_dropout = 0.4;

  Matrix pos;                    // max_rows x dim, noisy-input path only
  Matrix t_w1, t_b1, t_w2, t_b2;  // timestep embedding MLP
  std::vector<BlockParams> blocks;
  CondLNParams ln_final;

  // Named learnable tensors in a fixed order; optimizers, checkpoints and
  // tape bindings all rely on this order.
  std::vector<std::pair<std::string, Matrix*>> tensors() {
    std::vector<std::pair<std::string, Matrix*>> out;
    auto put = [&out](std::string name, Matrix& m) { out.emplace_back(std::move(name), &m); };
    auto put_ln = [&put](const std::string& prefix, CondLNParams& ln) {
      put(prefix + ".gain_w1", ln.gain_w1);
      put(prefix + ".gain_b1", ln.gain_b1);
      put(prefix + ".gain_w2", ln.gain_w2);
      put(prefix + ".gain_b2", ln.gain_b2);
      put(prefix + ".bias_w1", ln.bias_w1);
      put(prefix + ".bias_b1", ln.bias_b1);
      put(prefix + ".bias_w2", ln.bias_w2);
      put(prefix + ".bias_b2", ln.bias_b2);
    };
    put("pos", pos);
    put("t_mlp.w1", t_w1);
    put("t_mlp.b1", t_b1);
    put("t_mlp.w2", t_w2);
    put("t_mlp.b2", t_b2);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::string p = "block" + std::to_string(b);
      put_ln(p + ".ln_sa", blocks[b].ln_sa);
      put(p + ".sa_q", blocks[b].sa_q);
      put(p + ".sa_k", blocks[b].sa_k);
      put(p + ".sa_v", blocks[b].sa_v);
      put(p + ".sa_o", blocks[b].sa_o);
      put_ln(p + ".ln_ca", blocks[b].ln_ca);
      put(p + ".ca_q", blocks[b].ca_q);
      put(p + ".ca_k", blocks[b].ca_k);
      put(p + ".ca_v", blocks[b].ca_v);
      put(p + ".ca_o", blocks[b].ca_o);
      put_ln(p + ".ln_ffn", blocks[b].ln_ffn);
      put(p + ".ffn_w", blocks[b].ffn_w);
      put(p + ".ffn_b", blocks[b].ffn_b);
    }
    put_ln("final_ln", ln_final);
    return out;
  }

  std::vector<std::pair<std::string, const Matrix*>> tensors() const {
    auto mut = const_cast<DCDTParams*>(this)->tensors();
    std::vector<std::pair<std::string, const Matrix*>> out;
    out.reserve(mut.size());
    for (auto& [name, m] : mut) out.emplace_back(std::move(name), m);
    return out;
  }
};

inline long param_count(const DCDTParams& p) {
  long n = 0;
  for (const auto& [name, m] : p.tensors()) n += static_cast<long>(m->size());
  return n;
}

inline CondLNParams init_cond_ln(int dim, Rng& rng) {
  const double b1 = 1.0 / std::sqrt(2.0 * dim);
  CondLNParams ln;
  ln.gain_w1 = rng.uniform_matrix(2 * dim, dim, -b1, b1);
  ln.gain_b1 = Matrix::Zero(1, dim);
  ln.gain_w2 = Matrix::Zero(dim, dim);  // zero output layer: identity gain at init
  ln.gain_b2 = Matrix::Zero(1, dim);
  ln.bias_w1 = rng.uniform_matrix(2 * dim, dim, -b1, b1);
  ln.bias_b1 = Matrix::Zero(1, dim);
  ln.bias_w2 = Matrix::Zero(dim, dim);
  ln.bias_b2 = Matrix::Zero(1, dim);
  return ln;
}

inline DCDTParams init_dcdt(int num_blocks, int dim, int max_rows, Rng& rng) {
  if (num_blocks < 1 || dim < 2 || dim % 2 != 0 || max_rows < 2)
    throw std::invalid_argument("init_dcdt: need blocks >= 1, even dim >= 2, max_rows >= 2");
  const double b = 1.0 / std::sqrt(static_cast<double>(dim));
  DCDTParams p;
  p.num_blocks = num_blocks;
  p.dim = dim;
  p.max_rows = max_rows;
  p.pos = rng.uniform_matrix(max_rows, dim, -b, b);
  p.t_w1 = rng.uniform_matrix(dim, dim, -b, b);
  p.t_b1 = Matrix::Zero(1, dim);
  p.t_w2 = rng.uniform_matrix(dim, dim, -b, b);
  p.t_b2 = Matrix::Zero(1, dim);
  p.blocks.resize(num_blocks);
  for (BlockParams& blk : p.blocks) {
    blk.ln_sa = init_cond_ln(dim, rng);
    blk.ln_ca = init_cond_ln(dim, rng);
    blk.ln_ffn = init_cond_ln(dim, rng);
    blk.sa_q = rng.uniform_matrix(dim, dim, -b, b);
    blk.sa_k = rng.uniform_matrix(dim, dim, -b, b);
    blk.sa_v = rng.uniform_matrix(dim, dim, -b, b);
    blk.sa_o = rng.uniform_matrix(dim, dim, -b, b);
    blk.ca_q = rng.uniform_matrix(dim, dim, -b, b);
    blk.ca_k = rng.uniform_matrix(dim, dim, -b, b);
    blk.ca_v = rng.uniform_matrix(dim, dim, -b, b);
    blk.ca_o = rng.uniform_matrix(dim, dim, -b, b);
    blk.ffn_w = rng.uniform_matrix(dim, dim, -b, b);
    blk.ffn_b = Matrix::Zero(1, dim);
  }
  p.ln_final = init_cond_ln(dim, rng);
  return p;
}

// Sinusoidal step encoding, pre-MLP: entry 2k is sin(t * w_k), entry 2k+1 is
// cos(t * w_k) with w_k = 10000^(-2k/dim). t = 0 gives [0, 1, 0, 1, ...].
inline Matrix sinusoidal_timestep_embedding(int t, int dim) {
  if (t < 0) throw std::invalid_argument("sinusoidal_timestep_embedding: t must be >= 0");
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("sinusoidal_timestep_embedding: dim must be even and >= 2");
  Matrix out(1, dim);
  for (int k = 0; k < dim / 2; ++k) {
    const double w = std::exp(-std::log(10000.0) * (2.0 * k / dim));
    out(0, 2 * k) = std::sin(t * w);
    out(0, 2 * k + 1) = std::cos(t * w);
  }
  return out;
}

// Wiring switches for the ablated model variants. Defaults are the full
// dual-conditioning model.
struct VariantFlags {
  bool use_cross_attn = true;          // explicit conditioning path
  bool condln_use_history = true;      // pooled history in the CondLN conditioner
  bool condln_use_timestep = true;     // timestep embedding in the CondLN conditioner
  bool merge_history_into_input = false;  // add H0 onto the noisy input rows
  bool broadcast_target_input = false;    // input is the target row repeated
  bool partial_noise = false;             // noise only the target row
  bool implicit_init_shift = true;        // delta * H0 added to the initial noise
};

inline VariantFlags variant_flags(const std::string& name) {
  VariantFlags f;
  if (name == "dcrec") return f;
  if (name == "icdm") {
    f.use_cross_attn = false;
    f.condln_use_history = false;
    return f;
  }
  if (name == "ecdm") {
    f.broadcast_target_input = true;
    f.implicit_init_shift = false;
    return f;
  }
  if (name == "single_attn") {
    f.use_cross_attn = false;
    f.merge_history_into_input = true;
    return f;
  }
  if (name == "no_condln") {
    f.condln_use_history = false;
    f.condln_use_timestep = false;
    return f;
  }
  if (name == "partial_noise") {
    f.partial_noise = true;
    return f;
  }
  throw std::invalid_argument("variant_flags: unknown variant " + name);
}

struct CondLNNodes {
  Node *gain_w1, *gain_b1, *gain_w2, *gain_b2;
  Node *bias_w1, *bias_b1, *bias_w2, *bias_b2;
};

struct BlockNodes {
  CondLNNodes ln_sa, ln_ca, ln_ffn;
  Node *sa_q, *sa_k, *sa_v, *sa_o;
  Node *ca_q, *ca_k, *ca_v, *ca_o;
  Node *ffn_w, *ffn_b;
};

struct DCDTNodes {
  Node *pos, *t_w1, *t_b1, *t_w2, *t_b2;
  std::vector<BlockNodes> blocks;
  CondLNNodes ln_final;
  std::vector<Node*> all;  // same order as DCDTParams::tensors()
};

// Places every parameter tensor on the tape. Field order here mirrors
// DCDTParams::tensors(); dcdt_test checks the alignment.
inline DCDTNodes bind_dcdt(Tape& tape, const DCDTParams& p, bool requires_grad = true) {
  DCDTNodes w;
  auto bind = [&](const Matrix& m) {
    Node* n = tape.leaf(m, requires_grad);
    w.all.push_back(n);
    return n;
  };
  auto bind_ln = [&](const CondLNParams& ln) {
    CondLNNodes out;
    out.gain_w1 = bind(ln.gain_w1);
    out.gain_b1 = bind(ln.gain_b1);
    out.gain_w2 = bind(ln.gain_w2);
    out.gain_b2 = bind(ln.gain_b2);
    out.bias_w1 = bind(ln.bias_w1);
    out.bias_b1 = bind(ln.bias_b1);
    out.bias_w2 = bind(ln.bias_w2);
    out.bias_b2 = bind(ln.bias_b2);
    return out;
  };
  w.pos = bind(p.pos);
  w.t_w1 = bind(p.t_w1);
  w.t_b1 = bind(p.t_b1);
  w.t_w2 = bind(p.t_w2);
  w.t_b2 = bind(p.t_b2);
  for (const BlockParams& blk : p.blocks) {
    BlockNodes bn;
    bn.ln_sa = bind_ln(blk.ln_sa);
    bn.sa_q = bind(blk.sa_q);
    bn.sa_k = bind(blk.sa_k);
    bn.sa_v = bind(blk.sa_v);
    bn.sa_o = bind(blk.sa_o);
    bn.ln_ca = bind_ln(blk.ln_ca);
    bn.ca_q = bind(blk.ca_q);
    bn.ca_k = bind(blk.ca_k);
    bn.ca_v = bind(blk.ca_v);
    bn.ca_o = bind(blk.ca_o);
    bn.ln_ffn = bind_ln(blk.ln_ffn);
    bn.ffn_w = bind(blk.ffn_w);
    bn.ffn_b = bind(blk.ffn_b);
    w.blocks.push_back(bn);
  }
  w.ln_final = bind_ln(p.ln_final);
  return w;
}

namespace detail {

inline Node* mlp2(Tape& t, Node* in, Node* w1, Node* b1, Node* w2, Node* b2) {
  Node* h = t.relu(t.add_row(t.matmul(in, w1), b1));
  return t.add_row(t.matmul(h, w2), b2);
}

// cond is the 1 x 2d conditioning row [t_emb, h_summary].
inline Node* cond_ln(Tape& t, Node* x, Node* cond, const CondLNNodes& w) {
  Node* xn = t.row_standardize(x, 1e-5);
  Node* gain =
      t.add_const(mlp2(t, cond, w.gain_w1, w.gain_b1, w.gain_w2, w.gain_b2), 1.0);
  Node* bias = mlp2(t, cond, w.bias_w1, w.bias_b1, w.bias_w2, w.bias_b2);
  return t.add_row(t.mul_row(xn, gain), bias);
}

// Single-head scaled dot-product attention; kv_in supplies keys and values.
inline Node* attention(Tape& t, Node* q_in, Node* kv_in, Node* wq, Node* wk, Node* wv,
                       Node* wo, const PadMask* key_mask) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q_in->value.cols()));
  Node* q = t.matmul(q_in, wq);
  Node* k = t.matmul(kv_in, wk);
  Node* v = t.matmul(kv_in, wv);
  Node* scores = t.scale(t.matmul_nt(q, k), inv_sqrt_d);
  Node* attn = t.masked_softmax_rows(scores, key_mask);
  return t.matmul(t.matmul(attn, v), wo);
}

inline Node* ffn(Tape& t, Node* x, Node* w, Node* b) {
  return t.relu(t.add_row(t.matmul(x, w), b));
}

}  // namespace detail

// Full denoiser: predicts the clean sequence from the noised one at step t,
// conditioned on the clean history H0. history_pad marks padded history rows
// (true = padding); the target row is never padded.
inline Node* dcdt_forward(Tape& tape, const DCDTNodes& w, const DCDTParams& cfg, Node* s_t,
                          int t, Node* h0, const PadMask& history_pad,
                          const VariantFlags& flags = {}, bool train = false,
                          Rng* dropout_rng = nullptr) {
  const int n = cfg.max_rows, d = cfg.dim;
  if (t < 1) throw std::invalid_argument("dcdt_forward: t must be >= 1");
  if (s_t->value.rows() != n || s_t->value.cols() != d)
    throw std::invalid_argument("dcdt_forward: input shape mismatch");
  if (h0->value.rows() != n - 1 || h0->value.cols() != d)
    throw std::invalid_argument("dcdt_forward: history shape mismatch");
  if (static_cast<int>(history_pad.size()) != n - 1)
    throw std::invalid_argument("dcdt_forward: pad mask length mismatch");
  if (train && !dropout_rng)
    throw std::invalid_argument("dcdt_forward: training mode requires a dropout rng");

  // Key mask over the n input rows: padded history plus the real target row.
  // With a broadcast-target input every row is real.
  PadMask self_mask;
  const PadMask* self_mask_ptr = nullptr;
  if (!flags.broadcast_target_input) {
    self_mask = history_pad;
    self_mask.push_back(0);
    self_mask_ptr = &self_mask;
  }

  Node* x = tape.add(s_t, w.pos);
  if (flags.merge_history_into_input) {
    Node* padded_h0 = tape.concat_rows(h0, tape.leaf(Matrix::Zero(1, d)));
    x = tape.add(x, padded_h0);
  }
  if (train) x = tape.dropout(x, cfg.embed_dropout, *dropout_rng);

  Node* t_emb;
  if (flags.condln_use_timestep) {
    Node* base = tape.leaf(sinusoidal_timestep_embedding(t, d));
    t_emb = detail::mlp2(tape, base, w.t_w1, w.t_b1, w.t_w2, w.t_b2);
  } else {
    t_emb = tape.leaf(Matrix::Zero(1, d));
  }
  Node* h_sum = flags.condln_use_history ? tape.masked_mean_rows(h0, &history_pad)
                                         : tape.leaf(Matrix::Zero(1, d));
  Node* cond = tape.concat_cols(t_emb, h_sum);

  for (const BlockNodes& blk : w.blocks) {
    Node* a = detail::cond_ln(tape, x, cond, blk.ln_sa);
    a = detail::attention(tape, a, a, blk.sa_q, blk.sa_k, blk.sa_v, blk.sa_o, self_mask_ptr);
    if (train) a = tape.dropout(a, cfg.attn_dropout, *dropout_rng);
    x = tape.add(x, a);

    if (flags.use_cross_attn) {
      Node* c = detail::cond_ln(tape, x, cond, blk.ln_ca);
      c = detail::attention(tape, c, h0, blk.ca_q, blk.ca_k, blk.ca_v, blk.ca_o,
                            &history_pad);
      if (train) c = tape.dropout(c, cfg.attn_dropout, *dropout_rng);
      x = tape.add(x, c);
    }

    Node* f = detail::cond_ln(tape, x, cond, blk.ln_ffn);
    f = detail::ffn(tape, f, blk.ffn_w, blk.ffn_b);
    if (train) f = tape.dropout(f, cfg.attn_dropout, *dropout_rng);
    x = tape.add(x, f);
  }
  return detail::cond_ln(tape, x, cond, w.ln_final);
}

// Inference-mode wrapper: values only, dropout off.
inline Matrix dcdt_forward_eval(const DCDTParams& p, const Matrix& s_t, int t,
                                const Matrix& h0, const PadMask& history_pad,
                                const VariantFlags& flags = {}) {
  Tape tape(false);
  DCDTNodes w = bind_dcdt(tape, p, false);
  Node* out = dcdt_forward(tape, w, p, tape.leaf(s_t), t, tape.leaf(h0), history_pad, flags);
  return out->value;
}

// Standalone eval-mode sub-blocks, mainly for testing against oracles.

inline Matrix cond_layer_norm(const Matrix& s, const Matrix& t_emb, const Matrix& h_summary,
                              const CondLNParams& p) {
  Tape tape(false);
  CondLNNodes w{tape.leaf(p.gain_w1), tape.leaf(p.gain_b1), tape.leaf(p.gain_w2),
                tape.leaf(p.gain_b2), tape.leaf(p.bias_w1), tape.leaf(p.bias_b1),
                tape.leaf(p.bias_w2), tape.leaf(p.bias_b2)};
  Node* cond = tape.concat_cols(tape.leaf(t_emb), tape.leaf(h_summary));
  return detail::cond_ln(tape, tape.leaf(s), cond, w)->value;
}

inline Matrix self_attention(const Matrix& s, const Matrix& wq, const Matrix& wk,
                             const Matrix& wv, const Matrix& wo, const PadMask* pad) {
  Tape tape(false);
  Node* x = tape.leaf(s);
  return detail::attention(tape, x, x, tape.leaf(wq), tape.leaf(wk), tape.leaf(wv),
                           tape.leaf(wo), pad)
      ->value;
}

inline Matrix cross_attention(const Matrix& s, const Matrix& h0, const Matrix& wq,
                              const Matrix& wk, const Matrix& wv, const Matrix& wo,
                              const PadMask* pad) {
  Tape tape(false);
  return detail::attention(tape, tape.leaf(s), tape.leaf(h0), tape.leaf(wq), tape.leaf(wk),
                           tape.leaf(wv), tape.leaf(wo), pad)
      ->value;
}

inline Matrix ffn_forward(const Matrix& s, const Matrix& w, const Matrix& b) {
  Tape tape(false);
  return detail::ffn(tape, tape.leaf(s), tape.leaf(w), tape.leaf(b))->value;
}

}  // namespace dcrec
