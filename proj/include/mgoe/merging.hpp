#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mgoe/interactions.hpp"

namespace mgoe {

// Rank of a task combination: sum over present tasks of 2^(priority-1).
// Strictly order-embedding over the subset lattice: any superset ranks
// strictly higher, and more important behaviors dominate all combinations of
// less important ones. The empty set ranks 0 (no interaction).
inline std::uint64_t rank_combination(const std::vector<int>& task_indices,
                                      const TaskRegistry& registry) {
  std::uint64_t rank = 0;
  for (int t : task_indices) {
    if (t < 0 || t >= static_cast<int>(registry.size()))
      throw ConfigError("rank_combination: task index " + std::to_string(t) +
                        " is not registered");
    const int priority = registry.task(t).priority;
    if (priority > 63) throw ConfigError("rank_combination: priority too large for 64-bit rank");
    const std::uint64_t bit = 1ull << (priority - 1);
    if (rank & bit) continue;  // set semantics: duplicates are ignored
    rank |= bit;
  }
  return rank;
}

// Box-Cox style transform of the combination rank:
//   ((rho+1)^beta - 1) / beta   for beta != 0
//   ln(rho+1)                   for beta == 0
// Strictly increasing in rho and continuous in beta at 0.
inline double merging_score(std::uint64_t rank, double beta) {
  if (!std::isfinite(beta)) throw ConfigError("merging_score: beta must be finite");
  const double log1p_rank = std::log1p(static_cast<double>(rank));
  if (beta == 0.0) return log1p_rank;
  return std::expm1(beta * log1p_rank) / beta;
}

struct MergingEntry {
  int index = -1;  // item for user rows, user for item rows
  double score = 0.0;
};

// Sparse merging interaction matrix S = [s_ui], stored row-wise from both
// sides so user and item clustering share one structure.
struct MergingMatrix {
  double beta = 0.0;
  std::vector<std::vector<MergingEntry>> user_rows;  // user -> (item, s_ui)
  std::vector<std::vector<MergingEntry>> item_rows;  // item -> (user, s_ui)

  int num_users() const { return static_cast<int>(user_rows.size()); }
  int num_items() const { return static_cast<int>(item_rows.size()); }

  std::size_t nnz() const {
    std::size_t n = 0;
    for (const auto& r : user_rows) n += r.size();
    return n;
  }
};

inline MergingMatrix build_merging_matrix(const InteractionData& data, double beta) {
  const int num_tasks = static_cast<int>(data.registry.size());
  MergingMatrix s;
  s.beta = beta;
  s.user_rows.resize(data.users.size());
  s.item_rows.resize(data.items.size());

  // Collapse the per-task matrices into per-(u,i) priority bitmasks, then
  // score each combination once.
  std::vector<std::pair<int, std::uint64_t>> row;  // (item, priority mask)
  for (int u = 0; u < data.users.size(); ++u) {
    row.clear();
    for (int t = 0; t < num_tasks; ++t) {
      const std::uint64_t bit = 1ull << (data.registry.task(t).priority - 1);
      for (int item : data.matrices[t].rows[u]) row.emplace_back(item, bit);
    }
    if (row.empty()) continue;
    std::sort(row.begin(), row.end());
    std::size_t i = 0;
    while (i < row.size()) {
      std::uint64_t mask = 0;
      const int item = row[i].first;
      while (i < row.size() && row[i].first == item) mask |= row[i++].second;
      const double score = merging_score(mask, beta);
      s.user_rows[u].push_back({item, score});
      s.item_rows[item].push_back({u, score});
    }
  }
  for (auto& r : s.item_rows)
    std::sort(r.begin(), r.end(),
              [](const MergingEntry& a, const MergingEntry& b) { return a.index < b.index; });
  return s;
}

}  // namespace mgoe
