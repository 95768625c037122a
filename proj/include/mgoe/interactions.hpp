#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mgoe/tasks.hpp"

namespace mgoe {

// One behavior event from the raw log.
struct InteractionRecord {
  RawId user = 0;
  RawId item = 0;
  int task = -1;  // index into the TaskRegistry
  std::int64_t timestamp = 0;
};

struct CsvSchema {
  char delimiter = ',';
  int user_col = 0;
  int item_col = 1;
  int behavior_col = 2;
  int timestamp_col = 3;
  int skip_header_rows = 0;
  // Raw behavior name -> task name, e.g. Taobao's "pv" -> "click".
  // Behaviors absent from the map are used verbatim.
  std::map<std::string, std::string> behavior_map;
  // Unknown behaviors (not a registered task after mapping) either abort the
  // load or are skipped.
  bool skip_unknown_behaviors = false;
};

inline std::vector<InteractionRecord> load_interactions(const std::string& path,
                                                        const CsvSchema& schema,
                                                        const TaskRegistry& registry) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open interaction log: " + path);
  const int max_col = std::max({schema.user_col, schema.item_col, schema.behavior_col,
                                schema.timestamp_col});
  std::vector<InteractionRecord> records;
  std::string line;
  long line_no = 0;
  std::vector<std::string> fields;
  while (std::getline(is, line)) {
    ++line_no;
    if (line_no <= schema.skip_header_rows) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    fields.clear();
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = line.find(schema.delimiter, start);
      fields.push_back(line.substr(start, pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    auto fail = [&](const std::string& why) -> DataError {
      return DataError(path + ":" + std::to_string(line_no) + ": " + why);
    };
    if (static_cast<int>(fields.size()) <= max_col)
      throw fail("expected at least " + std::to_string(max_col + 1) + " columns, got " +
                 std::to_string(fields.size()));

    InteractionRecord r;
    try {
      std::size_t used = 0;
      r.user = std::stoll(fields[schema.user_col], &used);
      if (used != fields[schema.user_col].size()) throw std::invalid_argument("");
      r.item = std::stoll(fields[schema.item_col], &used);
      if (used != fields[schema.item_col].size()) throw std::invalid_argument("");
      r.timestamp = std::stoll(fields[schema.timestamp_col], &used);
      if (used != fields[schema.timestamp_col].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw fail("malformed numeric field");
    }
    if (r.user < 0 || r.item < 0) throw fail("negative user or item id");

    std::string behavior = fields[schema.behavior_col];
    auto it = schema.behavior_map.find(behavior);
    if (it != schema.behavior_map.end()) behavior = it->second;
    r.task = registry.index_of(behavior);
    if (r.task < 0) {
      if (schema.skip_unknown_behaviors) continue;
      throw fail("unknown behavior '" + behavior + "'; registered tasks: " +
                 registry.names_joined());
    }
    records.push_back(r);
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const InteractionRecord& a, const InteractionRecord& b) {
                     return a.timestamp < b.timestamp;
                   });
  return records;
}

// Raw id <-> dense index mapping, dense order = sorted raw ids.
class IdMap {
 public:
  IdMap() = default;

  explicit IdMap(std::vector<RawId> sorted_unique) : to_raw_(std::move(sorted_unique)) {
    to_dense_.reserve(to_raw_.size());
    for (std::size_t i = 0; i < to_raw_.size(); ++i) to_dense_[to_raw_[i]] = static_cast<int>(i);
  }

  static IdMap from_values(std::vector<RawId> values) {
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    return IdMap(std::move(values));
  }

  int size() const { return static_cast<int>(to_raw_.size()); }
  RawId raw(int dense) const { return to_raw_.at(dense); }
  const std::vector<RawId>& raw_ids() const { return to_raw_; }

  int dense(RawId raw) const {
    auto it = to_dense_.find(raw);
    return it == to_dense_.end() ? -1 : it->second;
  }

 private:
  std::vector<RawId> to_raw_;
  std::unordered_map<RawId, int> to_dense_;
};

// Sparse binary interaction matrix for one task, in dense index space:
// rows[u] is the sorted list of item indices with r_ui = 1.
struct TaskInteractionMatrix {
  int task = -1;
  std::vector<std::vector<int>> rows;
  std::size_t nnz = 0;

  bool contains(int user, int item) const {
    if (user < 0 || user >= static_cast<int>(rows.size())) return false;
    const auto& r = rows[user];
    return std::binary_search(r.begin(), r.end(), item);
  }
};

// Records re-expressed in dense index space, still sorted by timestamp.
struct IndexedRecord {
  int user = -1;
  int item = -1;
  int task = -1;
  std::int64_t timestamp = 0;
};

struct InteractionData {
  TaskRegistry registry;
  IdMap users;
  IdMap items;
  std::vector<TaskInteractionMatrix> matrices;  // one per registered task
  std::vector<IndexedRecord> records;           // timestamp order
};

// Deterministic and invariant to input record order: ids are sorted into the
// dense maps and rows are sorted/deduplicated.
inline InteractionData build_task_matrices(const std::vector<InteractionRecord>& records,
                                           const TaskRegistry& registry) {
  InteractionData data;
  data.registry = registry;
  std::vector<RawId> users, items;
  users.reserve(records.size());
  items.reserve(records.size());
  for (const auto& r : records) {
    if (r.task < 0 || r.task >= static_cast<int>(registry.size()))
      throw DataError("record references unregistered task index " + std::to_string(r.task));
    users.push_back(r.user);
    items.push_back(r.item);
  }
  data.users = IdMap::from_values(std::move(users));
  data.items = IdMap::from_values(std::move(items));

  data.matrices.resize(registry.size());
  for (std::size_t t = 0; t < registry.size(); ++t) {
    data.matrices[t].task = static_cast<int>(t);
    data.matrices[t].rows.resize(data.users.size());
  }
  data.records.reserve(records.size());
  for (const auto& r : records) {
    IndexedRecord ir;
    ir.user = data.users.dense(r.user);
    ir.item = data.items.dense(r.item);
    ir.task = r.task;
    ir.timestamp = r.timestamp;
    data.records.push_back(ir);
    data.matrices[r.task].rows[ir.user].push_back(ir.item);
  }
  std::stable_sort(data.records.begin(), data.records.end(),
                   [](const IndexedRecord& a, const IndexedRecord& b) {
                     return a.timestamp < b.timestamp;
                   });
  for (auto& m : data.matrices) {
    m.nnz = 0;
    for (auto& row : m.rows) {
      std::sort(row.begin(), row.end());
      row.erase(std::unique(row.begin(), row.end()), row.end());
      m.nnz += row.size();
    }
  }
  return data;
}

}  // namespace mgoe
