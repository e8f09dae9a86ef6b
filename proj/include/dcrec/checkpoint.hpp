#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcrec/dcdt.hpp"
#include "dcrec/itemspace.hpp"

namespace dcrec {

// A checkpoint is two files sharing a stem: <stem>.json holds the model
// hyperparameters plus a tensor manifest (name, rows, cols) and <stem>.bin
// holds the tensor values as native-endian doubles, row-major, concatenated
// in manifest order. The item table is the final manifest entry.

struct Checkpoint {
  DCDTParams params;
  ItemEmbeddingTable table;
};

namespace detail {

inline void write_matrix(std::ofstream& out, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof(double));
    }
}

inline Matrix read_matrix(std::ifstream& in, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      double v = 0.0;
      in.read(reinterpret_cast<char*>(&v), sizeof(double));
      m(r, c) = v;
    }
  if (!in) throw std::runtime_error("checkpoint: tensor data truncated");
  return m;
}

}  // namespace detail

inline void save_checkpoint(const DCDTParams& params, const ItemEmbeddingTable& table,
                            const std::string& stem) {
  nlohmann::json meta;
  meta["format"] = "dcrec-checkpoint";
  meta["version"] = 1;
  meta["model"] = {{"num_blocks", params.num_blocks},
                   {"dim", params.dim},
                   {"max_rows", params.max_rows},
                   {"attn_dropout", params.attn_dropout},
                   {"embed_dropout", params.embed_dropout}};
  meta["table"] = {{"num_items", table.num_items}, {"dim", table.dim}};
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, m] : params.tensors())
    manifest.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
  manifest.push_back({{"name", "item_table"},
                      {"rows", table.weights.rows()},
                      {"cols", table.weights.cols()}});
  meta["tensors"] = manifest;

  std::ofstream meta_out(stem + ".json");
  if (!meta_out) throw std::runtime_error("save_checkpoint: cannot open " + stem + ".json");
  meta_out << meta.dump(2) << "\n";

  std::ofstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("save_checkpoint: cannot open " + stem + ".bin");
  for (const auto& [name, m] : params.tensors()) detail::write_matrix(bin, *m);
  detail::write_matrix(bin, table.weights);
  if (!bin) throw std::runtime_error("save_checkpoint: write failed for " + stem + ".bin");
}

inline Checkpoint load_checkpoint(const std::string& stem) {
  std::ifstream meta_in(stem + ".json");
  if (!meta_in) throw std::runtime_error("load_checkpoint: cannot open " + stem + ".json");
  nlohmann::json meta;
  meta_in >> meta;
  if (meta.value("format", "") != "dcrec-checkpoint")
    throw std::runtime_error("load_checkpoint: " + stem + ".json is not a checkpoint");
  if (meta.value("version", 0) != 1)
    throw std::runtime_error("load_checkpoint: unsupported checkpoint version");

  Checkpoint ckpt;
  const auto& model = meta.at("model");
  ckpt.params.num_blocks = model.at("num_blocks").get<int>();
  ckpt.params.dim = model.at("dim").get<int>();
  ckpt.params.max_rows = model.at("max_rows").get<int>();
  ckpt.params.attn_dropout = model.at("attn_dropout").get<double>();
  ckpt.params.embed_dropout = model.at("embed_dropout").get<double>();
  if (ckpt.params.num_blocks < 1 || ckpt.params.dim < 1 || ckpt.params.max_rows < 1)
    throw std::runtime_error("load_checkpoint: corrupt model dimensions");
  ckpt.params.blocks.resize(ckpt.params.num_blocks);
  ckpt.table.num_items = meta.at("table").at("num_items").get<int>();
  ckpt.table.dim = meta.at("table").at("dim").get<int>();

  const auto named = ckpt.params.tensors();
  const auto& manifest = meta.at("tensors");
  if (manifest.size() != named.size() + 1)
    throw std::runtime_error("load_checkpoint: tensor manifest size mismatch");

  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("load_checkpoint: cannot open " + stem + ".bin");
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& entry = manifest.at(i);
    if (entry.at("name").get<std::string>() != named[i].first)
      throw std::runtime_error("load_checkpoint: unexpected tensor " +
                               entry.at("name").get<std::string>() + ", wanted " + named[i].first);
    *named[i].second = detail::read_matrix(bin, entry.at("rows").get<Eigen::Index>(),
                                           entry.at("cols").get<Eigen::Index>());
  }
  const auto& last = manifest.at(named.size());
  if (last.at("name").get<std::string>() != "item_table")
    throw std::runtime_error("load_checkpoint: missing item_table entry");
  ckpt.table.weights = detail::read_matrix(bin, last.at("rows").get<Eigen::Index>(),
                                           last.at("cols").get<Eigen::Index>());
  if (ckpt.table.weights.rows() != ckpt.table.num_items + 1 ||
      ckpt.table.weights.cols() != ckpt.table.dim)
    throw std::runtime_error("load_checkpoint: item table shape mismatch");

  char extra = 0;
  if (bin.read(&extra, 1))
    throw std::runtime_error("load_checkpoint: trailing bytes in " + stem + ".bin");
  return ckpt;
}

}  // namespace dcrec
