#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dcrec/linalg.hpp"
#include "dcrec/rng.hpp"

namespace dcrec {

// One value in a computation graph. Nodes live inside a Tape and are only
// valid while that Tape is alive.
struct Node {
  Matrix value;
  Matrix grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::function<void()> backward_fn;  // accumulates into parent grads
};

// Reverse-mode tape over Eigen matrices. Creation order is a topological
// order of the graph, so backward() is a single reverse sweep. With
// grad_enabled=false the tape records values only (inference mode).
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Node* leaf(Matrix value, bool requires_grad = false) {
    return make(std::move(value), requires_grad && grad_enabled_, nullptr);
  }

  Node* add(Node* a, Node* b) {
    check_same(a, b, "add");
    Node* out = make(a->value + b->value, needs(a, b), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, b, out] {
        if (a->requires_grad) a->grad += out->grad;
        if (b->requires_grad) b->grad += out->grad;
      };
    return out;
  }

  Node* sub(Node* a, Node* b) {
    check_same(a, b, "sub");
    Node* out = make(a->value - b->value, needs(a, b), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, b, out] {
        if (a->requires_grad) a->grad += out->grad;
        if (b->requires_grad) b->grad -= out->grad;
      };
    return out;
  }

  Node* cmul(Node* a, Node* b) {
    check_same(a, b, "cmul");
    Node* out = make(a->value.cwiseProduct(b->value), needs(a, b), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, b, out] {
        if (a->requires_grad) a->grad += out->grad.cwiseProduct(b->value);
        if (b->requires_grad) b->grad += out->grad.cwiseProduct(a->value);
      };
    return out;
  }

  Node* scale(Node* a, double c) {
    Node* out = make(c * a->value, needs(a), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, c, out] { a->grad += c * out->grad; };
    return out;
  }

  Node* add_const(Node* a, double c) {
    Node* out = make(a->value.array() + c, needs(a), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, out] { a->grad += out->grad; };
    return out;
  }

  // a (m x k) times b (k x n).
  Node* matmul(Node* a, Node* b) {
    if (a->value.cols() != b->value.rows())
      throw std::invalid_argument("matmul: inner dimensions differ");
    Node* out = make(a->value * b->value, needs(a, b), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, b, out] {
        if (a->requires_grad) a->grad += out->grad * b->value.transpose();
        if (b->requires_grad) b->grad += a->value.transpose() * out->grad;
      };
    return out;
  }

  // a (m x k) times b^T (k x n), with b stored n x k.
  Node* matmul_nt(Node* a, Node* b) {
    if (a->value.cols() != b->value.cols())
      throw std::invalid_argument("matmul_nt: inner dimensions differ");
    Node* out = make(a->value * b->value.transpose(), needs(a, b), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, b, out] {
        if (a->requires_grad) a->grad += out->grad * b->value;
        if (b->requires_grad) b->grad += out->grad.transpose() * a->value;
      };
    return out;
  }

  Node* relu(Node* a) {
    Node* out = make(a->value.cwiseMax(0.0), needs(a), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, out] {
        a->grad += out->grad.cwiseProduct(
            (a->value.array() > 0.0).cast<double>().matrix());
      };
    return out;
  }

  // Adds row vector r (1 x d) to every row of a (n x d).
  Node* add_row(Node* a, Node* r) {
    check_row(a, r, "add_row");
    Node* out = make(a->value.rowwise() + r->value.row(0), needs(a, r), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, r, out] {
        if (a->requires_grad) a->grad += out->grad;
        if (r->requires_grad) r->grad.row(0) += out->grad.colwise().sum();
      };
    return out;
  }

  // Multiplies every row of a (n x d) elementwise by r (1 x d).
  Node* mul_row(Node* a, Node* r) {
    check_row(a, r, "mul_row");
    Matrix v = a->value.array().rowwise() * r->value.row(0).array();
    Node* out = make(std::move(v), needs(a, r), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, r, out] {
        if (a->requires_grad)
          a->grad += (out->grad.array().rowwise() * r->value.row(0).array()).matrix();
        if (r->requires_grad)
          r->grad.row(0) += out->grad.cwiseProduct(a->value).colwise().sum();
      };
    return out;
  }

  Node* concat_rows(Node* a, Node* b) {
    if (a->value.cols() != b->value.cols())
      throw std::invalid_argument("concat_rows: column counts differ");
    Matrix v(a->value.rows() + b->value.rows(), a->value.cols());
    v << a->value, b->value;
    Node* out = make(std::move(v), needs(a, b), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, b, out] {
        const Eigen::Index ra = a->value.rows();
        if (a->requires_grad) a->grad += out->grad.topRows(ra);
        if (b->requires_grad) b->grad += out->grad.bottomRows(b->value.rows());
      };
    return out;
  }

  Node* concat_cols(Node* a, Node* b) {
    if (a->value.rows() != b->value.rows())
      throw std::invalid_argument("concat_cols: row counts differ");
    Matrix v(a->value.rows(), a->value.cols() + b->value.cols());
    v << a->value, b->value;
    Node* out = make(std::move(v), needs(a, b), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, b, out] {
        const Eigen::Index ca = a->value.cols();
        if (a->requires_grad) a->grad += out->grad.leftCols(ca);
        if (b->requires_grad) b->grad += out->grad.rightCols(b->value.cols());
      };
    return out;
  }

  Node* slice_rows(Node* a, int start, int count) {
    if (start < 0 || count < 1 || start + count > a->value.rows())
      throw std::invalid_argument("slice_rows: range out of bounds");
    Node* out = make(a->value.middleRows(start, count), needs(a), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, start, count, out] {
        a->grad.middleRows(start, count) += out->grad;
      };
    return out;
  }

  // Gathers rows of a by index; duplicate indices scatter-add on backward.
  Node* gather_rows(Node* a, std::vector<int> ids) {
    Matrix v(static_cast<Eigen::Index>(ids.size()), a->value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= a->value.rows())
        throw std::out_of_range("gather_rows: index out of range");
      v.row(static_cast<Eigen::Index>(i)) = a->value.row(ids[i]);
    }
    Node* out = make(std::move(v), needs(a), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, ids = std::move(ids), out] {
        for (std::size_t i = 0; i < ids.size(); ++i)
          a->grad.row(ids[i]) += out->grad.row(static_cast<Eigen::Index>(i));
      };
    return out;
  }

  // Per row: (x - mean) / sqrt(var + eps), population variance over columns.
  Node* row_standardize(Node* a, double eps) {
    const Eigen::Index n = a->value.rows(), d = a->value.cols();
    Matrix y(n, d);
    Vector inv_sigma(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = a->value.row(i).mean();
      const double var = (a->value.row(i).array() - mu).square().mean();
      inv_sigma[i] = 1.0 / std::sqrt(var + eps);
      y.row(i) = (a->value.row(i).array() - mu) * inv_sigma[i];
    }
    Node* out = make(std::move(y), needs(a), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, inv_sigma = std::move(inv_sigma), out] {
        const Eigen::Index d = a->value.cols();
        for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
          const auto g = out->grad.row(i);
          const auto y = out->value.row(i);
          const double g_mean = g.mean();
          const double gy_mean = g.cwiseProduct(y).mean();
          a->grad.row(i) +=
              inv_sigma[i] * (g.array() - g_mean - y.array() * gy_mean).matrix();
          (void)d;
        }
      };
    return out;
  }

  // Per row: x / max(||x||, eps).
  Node* l2_normalize_rows(Node* a, double eps = 1e-12) {
    const Eigen::Index n = a->value.rows();
    Matrix y(n, a->value.cols());
    Vector inv_norm(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      inv_norm[i] = 1.0 / std::max(a->value.row(i).norm(), eps);
      y.row(i) = a->value.row(i) * inv_norm[i];
    }
    Node* out = make(std::move(y), needs(a), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, inv_norm = std::move(inv_norm), out] {
        for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
          const auto g = out->grad.row(i);
          const auto y = out->value.row(i);
          a->grad.row(i) += inv_norm[i] * (g - y * g.dot(y));
        }
      };
    return out;
  }

  // Row-wise softmax with masked columns forced to zero weight. col_mask may
  // be null (nothing masked); true marks a masked column.
  Node* masked_softmax_rows(Node* a, const PadMask* col_mask) {
    const Eigen::Index n = a->value.rows(), d = a->value.cols();
    if (col_mask && static_cast<Eigen::Index>(col_mask->size()) != d)
      throw std::invalid_argument("masked_softmax_rows: mask length mismatch");
    Matrix y(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < d; ++j)
        if (!(col_mask && (*col_mask)[j])) m = std::max(m, a->value(i, j));
      if (!std::isfinite(m))
        throw std::runtime_error("masked_softmax_rows: empty attention support");
      double z = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) {
        const bool masked = col_mask && (*col_mask)[j];
        y(i, j) = masked ? 0.0 : std::exp(a->value(i, j) - m);
        z += y(i, j);
      }
      y.row(i) /= z;
    }
    Node* out = make(std::move(y), needs(a), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, out] {
        for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
          const auto g = out->grad.row(i);
          const auto s = out->value.row(i);
          const double dot = g.dot(s);
          a->grad.row(i) += (g.array() - dot).matrix().cwiseProduct(s);
        }
      };
    return out;
  }

  // Mean over unmasked rows -> 1 x d. mask may be null (all rows count).
  Node* masked_mean_rows(Node* a, const PadMask* mask) {
    const Eigen::Index n = a->value.rows();
    if (mask && static_cast<Eigen::Index>(mask->size()) != n)
      throw std::invalid_argument("masked_mean_rows: mask length mismatch");
    std::vector<Eigen::Index> kept;  // copied so backward never reads the caller's mask
    RowVector sum = RowVector::Zero(a->value.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      if (mask && (*mask)[i]) continue;
      sum += a->value.row(i);
      kept.push_back(i);
    }
    if (kept.empty()) throw std::runtime_error("masked_mean_rows: all rows masked");
    Matrix v = sum / static_cast<double>(kept.size());
    Node* out = make(std::move(v), needs(a), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, kept = std::move(kept), out] {
        for (Eigen::Index i : kept)
          a->grad.row(i) += out->grad.row(0) / static_cast<double>(kept.size());
      };
    return out;
  }

  // Inverted dropout: kept entries scaled by 1/(1-rate). rate 0 is identity.
  Node* dropout(Node* a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: bad rate");
    if (rate == 0.0) return a;
    Matrix mask(a->value.rows(), a->value.cols());
    const double inv_keep = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
      for (Eigen::Index j = 0; j < mask.cols(); ++j)
        mask(i, j) = rng.uniform() >= rate ? inv_keep : 0.0;
    Node* out = make(a->value.cwiseProduct(mask), needs(a), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, mask = std::move(mask), out] {
        a->grad += out->grad.cwiseProduct(mask);
      };
    return out;
  }

  Node* sum_all(Node* a) {
    Node* out = make(Matrix::Constant(1, 1, a->value.sum()), needs(a), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, out] { a->grad.array() += out->grad(0, 0); };
    return out;
  }

  Node* mean_all(Node* a) {
    const double inv = 1.0 / static_cast<double>(a->value.size());
    Node* out = make(Matrix::Constant(1, 1, a->value.sum() * inv), needs(a), nullptr);
    if (out->requires_grad)
      out->backward_fn = [a, inv, out] { a->grad.array() += inv * out->grad(0, 0); };
    return out;
  }

  // Softmax cross-entropy of a 1 x Z logit row against one target index,
  // fused for numerical stability: logsumexp(logits) - logits[index].
  Node* cross_entropy_with_index(Node* logits, int index) {
    if (logits->value.rows() != 1)
      throw std::invalid_argument("cross_entropy_with_index: logits must be one row");
    if (index < 0 || index >= logits->value.cols())
      throw std::out_of_range("cross_entropy_with_index: target index out of range");
    const double m = logits->value.row(0).maxCoeff();
    const double lse = m + std::log((logits->value.row(0).array() - m).exp().sum());
    Node* out =
        make(Matrix::Constant(1, 1, lse - logits->value(0, index)), needs(logits), nullptr);
    if (out->requires_grad)
      out->backward_fn = [logits, index, m, lse, out] {
        RowVector p = (logits->value.row(0).array() - lse).exp();
        p[index] -= 1.0;
        logits->grad.row(0) += out->grad(0, 0) * p;
        (void)m;
      };
    return out;
  }

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse creation order.
  void backward(Node* root) {
    if (!grad_enabled_) throw std::logic_error("backward: tape is in no-grad mode");
    if (root->value.size() != 1)
      throw std::invalid_argument("backward: root must be a 1x1 scalar");
    if (!root->requires_grad)
      throw std::invalid_argument("backward: root does not require grad");
    root->grad(0, 0) += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->requires_grad && it->backward_fn) it->backward_fn();
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // Rollback support: nodes created after mark() can be dropped with
  // rewind(), keeping earlier nodes (typically parameter leaves) valid for
  // reuse across many forward passes.
  std::size_t mark() const { return nodes_.size(); }
  void rewind(std::size_t m) {
    while (nodes_.size() > m) nodes_.pop_back();
  }

 private:
  bool needs(Node* a, Node* b = nullptr) const {
    return grad_enabled_ && (a->requires_grad || (b && b->requires_grad));
  }

  static void check_same(Node* a, Node* b, const char* where) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
      throw std::invalid_argument(std::string(where) + ": shape mismatch");
  }

  static void check_row(Node* a, Node* r, const char* where) {
    if (r->value.rows() != 1 || r->value.cols() != a->value.cols())
      throw std::invalid_argument(std::string(where) + ": row vector shape mismatch");
  }

  Node* make(Matrix value, bool requires_grad, std::function<void()> fn) {
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward_fn = std::move(fn);
    if (requires_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return &n;
  }

  std::deque<Node> nodes_;
  bool grad_enabled_;
};

}  // namespace dcrec
