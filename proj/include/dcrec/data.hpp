#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dcrec/linalg.hpp"
#include "dcrec/rng.hpp"

namespace dcrec {

struct InteractionRecord {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp;
};

// Raw interaction events in file order. Exact (user, item, timestamp)
// duplicates are dropped at ingestion; everything else is preserved as-is.
struct InteractionLog {
  std::vector<InteractionRecord> records;
};

// One supervised pair: left-padded history (ID 0 = padding) plus the next
// item. History length is fixed at max_len - 1.
struct InteractionSequence {
  std::string user;
  std::vector<int> history;
  int target = 0;
};

struct SplitDataset {
  std::vector<InteractionSequence> train;
  std::vector<InteractionSequence> validation;
  std::vector<InteractionSequence> test;
  std::unordered_map<std::string, int> vocab;  // raw label -> contiguous ID from 1
  std::vector<std::string> id_to_item;         // index 0 is the padding slot
  int max_len = 50;

  int num_items() const { return static_cast<int>(id_to_item.size()) - 1; }
};

inline PadMask pad_mask_of(const std::vector<int>& history) {
  PadMask mask(history.size());
  for (std::size_t i = 0; i < history.size(); ++i) mask[i] = history[i] == 0 ? 1 : 0;
  return mask;
}

namespace detail {

inline bool parse_record(const std::string& line, InteractionRecord& out) {
  const char delim = line.find('\t') != std::string::npos ? '\t' : ',';
  std::stringstream ss(line);
  std::string ts_field, extra;
  if (!std::getline(ss, out.user_id, delim)) return false;
  if (!std::getline(ss, out.item_id, delim)) return false;
  if (!std::getline(ss, ts_field, delim)) return false;
  if (out.user_id.empty() || out.item_id.empty()) return false;
  try {
    std::size_t used = 0;
    out.timestamp = std::stoll(ts_field, &used);
    if (used != ts_field.size()) return false;
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

}  // namespace detail

// Reads `user_id <sep> item_id <sep> timestamp` rows (tab or comma separated).
// A single header row naming the columns is tolerated; blank lines are
// skipped; anything else malformed is an error naming the line.
inline InteractionLog ingest_interactions(std::istream& in) {
  InteractionLog log;
  std::unordered_set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    InteractionRecord rec;
    if (!detail::parse_record(line, rec)) {
      if (line_no == 1 && line.find("user") != std::string::npos) continue;
      throw std::runtime_error("ingest_interactions: malformed row at line " +
                               std::to_string(line_no) + ": " + line);
    }
    std::string key = rec.user_id + '\x1f' + rec.item_id + '\x1f' +
                      std::to_string(rec.timestamp);
    if (!seen.insert(std::move(key)).second) continue;
    log.records.push_back(std::move(rec));
  }
  return log;
}

inline InteractionLog ingest_interactions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ingest_interactions: cannot open " + path);
  return ingest_interactions(in);
}

inline void write_interactions(const InteractionLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_interactions: cannot open " + path);
  for (const InteractionRecord& r : log.records)
    out << r.user_id << '\t' << r.item_id << '\t' << r.timestamp << '\n';
}

// Per user: stable sort by timestamp, drop short sequences, keep the latest
// max_len interactions, then split leave-one-out (last item is the test
// target, second-latest the validation target, earlier prefixes train pairs).
inline SplitDataset preprocess(const InteractionLog& log, int max_len = 50, int min_len = 5) {
  if (log.records.empty()) throw std::invalid_argument("preprocess: empty log");
  if (max_len < 3 || min_len < 3)
    throw std::invalid_argument("preprocess: max_len and min_len must be >= 3");

  // Group by user in first-appearance order so output is deterministic.
  std::vector<std::string> user_order;
  std::unordered_map<std::string, std::vector<std::pair<std::int64_t, std::string>>> by_user;
  for (const InteractionRecord& r : log.records) {
    auto [it, fresh] = by_user.try_emplace(r.user_id);
    if (fresh) user_order.push_back(r.user_id);
    it->second.emplace_back(r.timestamp, r.item_id);
  }

  SplitDataset ds;
  ds.max_len = max_len;
  ds.id_to_item.push_back("");  // padding slot

  auto item_id = [&ds](const std::string& label) {
    auto [it, fresh] = ds.vocab.try_emplace(label, static_cast<int>(ds.id_to_item.size()));
    if (fresh) ds.id_to_item.push_back(label);
    return it->second;
  };

  const int hist_len = max_len - 1;
  for (const std::string& user : user_order) {
    auto& events = by_user[user];
    if (static_cast<int>(events.size()) < min_len) continue;
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    if (static_cast<int>(events.size()) > max_len)
      events.erase(events.begin(), events.end() - max_len);

    std::vector<int> seq;
    seq.reserve(events.size());
    for (const auto& [ts, label] : events) seq.push_back(item_id(label));

    auto make_pair = [&](int target_pos) {
      InteractionSequence s;
      s.user = user;
      s.target = seq[target_pos];
      s.history.assign(hist_len, 0);
      const int copy = std::min(target_pos, hist_len);
      for (int i = 0; i < copy; ++i)
        s.history[hist_len - copy + i] = seq[target_pos - copy + i];
      return s;
    };

    const int m = static_cast<int>(seq.size());
    ds.test.push_back(make_pair(m - 1));
    ds.validation.push_back(make_pair(m - 2));
    for (int k = 1; k <= m - 3; ++k) ds.train.push_back(make_pair(k));
  }
  if (ds.test.empty())
    throw std::invalid_argument("preprocess: no user satisfies the minimum length");
  return ds;
}

// Synthetic interaction logs with a recoverable next-item rule.
//   cycle:   next = (current + 1) mod n_items, random start per user.
//   mixture: a per-user latent type picks one of two successor rules,
//            +1 mod n or -1 mod n, so recent context alone is ambiguous.
inline InteractionLog make_synthetic(const std::string& kind, int n_users, int n_items,
                                     int seq_len, std::uint64_t seed) {
  if (n_items < 2) throw std::invalid_argument("make_synthetic: n_items must be >= 2");
  if (n_users < 1 || seq_len < 2)
    throw std::invalid_argument("make_synthetic: need n_users >= 1 and seq_len >= 2");
  if (kind != "cycle" && kind != "mixture")
    throw std::invalid_argument("make_synthetic: unknown kind " + kind);

  Rng rng(seed);
  InteractionLog log;
  log.records.reserve(static_cast<std::size_t>(n_users) * seq_len);
  for (int u = 0; u < n_users; ++u) {
    int cur = rng.uniform_int(0, n_items - 1);
    const int step =
        kind == "cycle" ? 1 : (rng.uniform() < 0.5 ? 1 : n_items - 1);
    for (int j = 0; j < seq_len; ++j) {
      log.records.push_back({"u" + std::to_string(u), std::to_string(cur), j});
      cur = (cur + step) % n_items;
    }
  }
  return log;
}

// A saved split is a directory holding vocab.json (item labels in ID order
// plus max_len) and sequences.bin (the three splits as length-prefixed
// records of native-endian integers).

namespace detail {

inline void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

inline void write_split(std::ofstream& out, const std::vector<InteractionSequence>& split) {
  write_u32(out, static_cast<std::uint32_t>(split.size()));
  for (const InteractionSequence& s : split) {
    write_u32(out, static_cast<std::uint32_t>(s.user.size()));
    out.write(s.user.data(), static_cast<std::streamsize>(s.user.size()));
    write_u32(out, static_cast<std::uint32_t>(s.history.size()));
    for (int id : s.history) write_u32(out, static_cast<std::uint32_t>(id));
    write_u32(out, static_cast<std::uint32_t>(s.target));
  }
}

inline std::vector<InteractionSequence> read_split(std::ifstream& in, int num_items,
                                                   int hist_len) {
  const std::uint32_t count = read_u32(in);
  std::vector<InteractionSequence> split(count);
  for (InteractionSequence& s : split) {
    s.user.resize(read_u32(in));
    in.read(s.user.data(), static_cast<std::streamsize>(s.user.size()));
    const std::uint32_t hlen = read_u32(in);
    if (static_cast<int>(hlen) != hist_len)
      throw std::runtime_error("load_dataset: history length mismatch");
    s.history.resize(hlen);
    for (std::uint32_t i = 0; i < hlen; ++i) {
      s.history[i] = static_cast<int>(read_u32(in));
      if (s.history[i] < 0 || s.history[i] > num_items)
        throw std::runtime_error("load_dataset: history ID out of range");
    }
    s.target = static_cast<int>(read_u32(in));
    if (s.target < 1 || s.target > num_items)
      throw std::runtime_error("load_dataset: target ID out of range");
  }
  if (!in) throw std::runtime_error("load_dataset: sequences.bin truncated");
  return split;
}

}  // namespace detail

inline void save_dataset(const SplitDataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  {
    nlohmann::json vocab;
    vocab["format"] = "dcrec-dataset";
    vocab["version"] = 1;
    vocab["max_len"] = ds.max_len;
    vocab["items"] = std::vector<std::string>(ds.id_to_item.begin() + 1, ds.id_to_item.end());
    std::ofstream out(base / "vocab.json");
    if (!out) throw std::runtime_error("save_dataset: cannot write vocab.json in " + dir);
    out << vocab.dump(2) << "\n";
  }
  std::ofstream out(base / "sequences.bin", std::ios::binary);
  if (!out) throw std::runtime_error("save_dataset: cannot write sequences.bin in " + dir);
  out.write("DCRECSEQ", 8);
  detail::write_split(out, ds.train);
  detail::write_split(out, ds.validation);
  detail::write_split(out, ds.test);
  if (!out) throw std::runtime_error("save_dataset: write failed in " + dir);
}

inline SplitDataset load_dataset(const std::string& dir) {
  const std::filesystem::path base(dir);
  SplitDataset ds;
  {
    std::ifstream in(base / "vocab.json");
    if (!in) throw std::runtime_error("load_dataset: cannot open vocab.json in " + dir);
    nlohmann::json vocab;
    in >> vocab;
    if (vocab.value("format", "") != "dcrec-dataset")
      throw std::runtime_error("load_dataset: vocab.json is not a dataset index");
    if (vocab.value("version", 0) != 1)
      throw std::runtime_error("load_dataset: unsupported dataset version");
    ds.max_len = vocab.at("max_len").get<int>();
    ds.id_to_item.push_back("");
    for (const auto& label : vocab.at("items")) {
      ds.vocab.emplace(label.get<std::string>(), static_cast<int>(ds.id_to_item.size()));
      ds.id_to_item.push_back(label.get<std::string>());
    }
  }
  std::ifstream in(base / "sequences.bin", std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open sequences.bin in " + dir);
  char magic[8] = {};
  in.read(magic, 8);
  if (std::string(magic, 8) != "DCRECSEQ")
    throw std::runtime_error("load_dataset: bad sequences.bin magic");
  ds.train = detail::read_split(in, ds.num_items(), ds.max_len - 1);
  ds.validation = detail::read_split(in, ds.num_items(), ds.max_len - 1);
  ds.test = detail::read_split(in, ds.num_items(), ds.max_len - 1);
  char extra = 0;
  if (in.read(&extra, 1)) throw std::runtime_error("load_dataset: trailing bytes");
  return ds;
}

}  // namespace dcrec
