#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "dcrec/linalg.hpp"
#include "dcrec/rng.hpp"

namespace dcrec {

// Lookup table mapping item IDs to d-dimensional embeddings. Row 0 is the
// padding item: held at zero and never a ranking candidate.
struct ItemEmbeddingTable {
  int num_items = 0;  // real items use IDs 1..num_items
  int dim = 0;
  Matrix weights;  // (num_items + 1) x dim

  const Matrix::ConstRowXpr row(int id) const { return weights.row(id); }
};

// Rows drawn uniformly from [-1/sqrt(d), 1/sqrt(d)] keeps initial cosine
// logits small. Padding row stays zero.
inline ItemEmbeddingTable init_item_embeddings(int num_items, int dim, Rng& rng) {
  if (num_items < 1 || dim < 1)
    throw std::invalid_argument("init_item_embeddings: num_items and dim must be positive");
  ItemEmbeddingTable table;
  table.num_items = num_items;
  table.dim = dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  table.weights = rng.uniform_matrix(num_items + 1, dim, -bound, bound);
  table.weights.row(0).setZero();
  return table;
}

// Gathers table rows for a sequence of IDs (0 allowed: padding row).
inline Matrix embed_ids(const std::vector<int>& ids, const ItemEmbeddingTable& table) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id > table.num_items)
      throw std::out_of_range("embed_ids: item ID out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.weights.row(id);
  }
  return out;
}

struct ScoredItem {
  int id;
  double score;
};

// All non-padding items scored by cosine similarity against e, descending.
// Ties break toward the smaller ID. Zero-norm inputs have no direction to
// compare against, so they are rejected rather than silently ranked.
inline std::vector<ScoredItem> score_items(const Vector& e, const ItemEmbeddingTable& table) {
  if (e.size() != table.dim) throw std::invalid_argument("score_items: dimension mismatch");
  const double e_norm = e.norm();
  if (e_norm < 1e-12) throw std::invalid_argument("score_items: zero-norm query embedding");

  std::vector<ScoredItem> scored(table.num_items);
  for (int id = 1; id <= table.num_items; ++id) {
    const double row_norm = table.weights.row(id).norm();
    const double denom = e_norm * std::max(row_norm, 1e-300);
    scored[id - 1] = {id, table.weights.row(id).dot(e) / denom};
  }
  std::sort(scored.begin(), scored.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return scored;
}

inline std::vector<int> rank_items(const Vector& e, const ItemEmbeddingTable& table, int k) {
  if (k < 1 || k > table.num_items) throw std::invalid_argument("rank_items: K out of range");
  std::vector<ScoredItem> scored = score_items(e, table);
  std::vector<int> ids(k);
  for (int i = 0; i < k; ++i) ids[i] = scored[i].id;
  return ids;
}

inline int round_to_item(const Vector& e, const ItemEmbeddingTable& table) {
  return rank_items(e, table, 1)[0];
}

// Training updates can drive a row to (near) zero norm, which breaks cosine
// ranking. Re-draws any collapsed non-padding row; returns how many were hit.
inline int reinit_collapsed_rows(ItemEmbeddingTable& table, Rng& rng, double min_norm = 1e-8) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(table.dim));
  int repaired = 0;
  for (int id = 1; id <= table.num_items; ++id) {
    if (table.weights.row(id).norm() < min_norm) {
      table.weights.row(id) = rng.uniform_matrix(1, table.dim, -bound, bound);
      ++repaired;
    }
  }
  return repaired;
}

}  // namespace dcrec
