#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "mgoe/interactions.hpp"
#include "mgoe/io.hpp"

namespace mgoe {

enum class Split : int { Train = 0, Validation = 1, Test = 2 };

struct LabeledExample {
  int user = -1;
  int item = -1;
  std::uint8_t label = 0;
};

struct LabeledDataset {
  int task = -1;
  Split split = Split::Train;
  std::vector<LabeledExample> examples;

  std::size_t positives() const {
    std::size_t n = 0;
    for (const auto& e : examples) n += e.label;
    return n;
  }
};

struct TaskDatasets {
  LabeledDataset train, validation, test;
  bool has_train_positives = false;
};

enum class NegativeMode : int { Cascade = 0, Random = 1 };

struct SplitConfig {
  double train_frac = 0.8;
  double validation_frac = 0.1;  // remainder is test
  NegativeMode negative_mode = NegativeMode::Cascade;
  int base_negative_ratio = 4;   // sampled negatives per positive
  std::uint64_t seed = 123;
};

// A deduplicated positive interaction, labeled with its chronological split.
struct PositiveRecord {
  int task = -1;
  int user = -1;
  int item = -1;
  std::int64_t timestamp = 0;
  Split split = Split::Train;
};

struct DatasetBundle {
  std::vector<TaskDatasets> by_task;
  std::vector<PositiveRecord> positives;  // all splits, timestamp order
  std::vector<std::string> warnings;

  std::vector<PositiveRecord> train_positives() const {
    std::vector<PositiveRecord> out;
    for (const auto& p : positives)
      if (p.split == Split::Train) out.push_back(p);
    return out;
  }
};

namespace detail {

inline std::uint64_t pair_key(int user, int item) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(user)) << 32) |
         static_cast<std::uint32_t>(item);
}

}  // namespace detail

// Builds train/validation/test labeled datasets for every task.
//
// Positives are the deduplicated task interactions (earliest event wins),
// split chronologically by position in timestamp order. Negatives follow the
// exposure cascade: for every non-base task, pairs that interacted at some
// lower-priority task but never at this one; the base task draws uniform
// unobserved pairs at `base_negative_ratio` per positive. NegativeMode::Random
// instead samples unobserved negatives for every task.
inline DatasetBundle make_labeled_datasets(const InteractionData& data, const SplitConfig& cfg) {
  const TaskRegistry& registry = data.registry;
  const int num_tasks = static_cast<int>(registry.size());
  if (cfg.train_frac <= 0.0 || cfg.validation_frac < 0.0 ||
      cfg.train_frac + cfg.validation_frac >= 1.0)
    throw ConfigError("split fractions must satisfy 0 < train, 0 <= validation, train+validation < 1");
  if (cfg.base_negative_ratio < 0) throw ConfigError("negative ratio must be >= 0");
  if (data.matrices.at(registry.base_task()).nnz == 0)
    throw DataError("no interactions for the base task '" +
                    registry.task(registry.base_task()).name + "'");

  DatasetBundle out;
  out.by_task.resize(num_tasks);

  // Deduplicate to (task, user, item) keeping the earliest event.
  std::vector<std::map<std::uint64_t, std::int64_t>> earliest(num_tasks);
  for (const auto& r : data.records) {
    auto [it, inserted] = earliest[r.task].try_emplace(detail::pair_key(r.user, r.item),
                                                       r.timestamp);
    if (!inserted && r.timestamp < it->second) it->second = r.timestamp;
  }
  std::vector<PositiveRecord>& pos = out.positives;
  for (int t = 0; t < num_tasks; ++t)
    for (const auto& [key, ts] : earliest[t]) {
      PositiveRecord p;
      p.task = t;
      p.user = static_cast<int>(key >> 32);
      p.item = static_cast<int>(key & 0xffffffffu);
      p.timestamp = ts;
      pos.push_back(p);
    }
  std::sort(pos.begin(), pos.end(), [](const PositiveRecord& a, const PositiveRecord& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    if (a.task != b.task) return a.task < b.task;
    if (a.user != b.user) return a.user < b.user;
    return a.item < b.item;
  });

  const std::size_t n = pos.size();
  const std::size_t n_train = static_cast<std::size_t>(cfg.train_frac * static_cast<double>(n));
  const std::size_t n_val = static_cast<std::size_t>(
      (cfg.train_frac + cfg.validation_frac) * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    pos[i].split = i < n_train ? Split::Train : (i < n_val ? Split::Validation : Split::Test);

  for (int t = 0; t < num_tasks; ++t) {
    auto& td = out.by_task[t];
    td.train.task = td.validation.task = td.test.task = t;
    td.train.split = Split::Train;
    td.validation.split = Split::Validation;
    td.test.split = Split::Test;
  }
  auto dataset_of = [&](int task, Split s) -> LabeledDataset& {
    auto& td = out.by_task[task];
    return s == Split::Train ? td.train : (s == Split::Validation ? td.validation : td.test);
  };
  for (const auto& p : pos)
    dataset_of(p.task, p.split).examples.push_back({p.user, p.item, 1});

  // Cascade negatives: pairs seen at a lower-priority task but absent from
  // this task's full matrix. The candidate inherits the split of its earliest
  // lower-priority event.
  if (cfg.negative_mode == NegativeMode::Cascade) {
    std::map<std::uint64_t, std::pair<std::int64_t, Split>> seen_below;
    for (int t = 0; t < num_tasks; ++t) {
      if (t > 0) {
        const auto& matrix = data.matrices[t];
        for (const auto& [key, first] : seen_below) {
          const int u = static_cast<int>(key >> 32);
          const int i = static_cast<int>(key & 0xffffffffu);
          if (!matrix.contains(u, i))
            dataset_of(t, first.second).examples.push_back({u, i, 0});
        }
      }
      for (const auto& p : pos) {
        if (p.task != t) continue;
        auto [it, inserted] =
            seen_below.try_emplace(detail::pair_key(p.user, p.item), p.timestamp, p.split);
        if (!inserted && p.timestamp < it->second.first)
          it->second = {p.timestamp, p.split};
      }
    }
  }

  // Uniform unobserved negatives for the base task (or for all tasks in
  // Random mode), sampled per split at ratio : 1.
  auto observed_anywhere = [&](int u, int i) {
    for (const auto& m : data.matrices)
      if (m.contains(u, i)) return true;
    return false;
  };
  const auto num_users = static_cast<std::uint64_t>(data.users.size());
  const auto num_items = static_cast<std::uint64_t>(data.items.size());
  std::vector<int> sampled_tasks;
  if (cfg.negative_mode == NegativeMode::Cascade)
    sampled_tasks.push_back(registry.base_task());
  else
    for (int t = 0; t < num_tasks; ++t) sampled_tasks.push_back(t);
  for (int t : sampled_tasks) {
    for (Split s : {Split::Train, Split::Validation, Split::Test}) {
      LabeledDataset& ds = dataset_of(t, s);
      const std::size_t want = ds.positives() * static_cast<std::size_t>(cfg.base_negative_ratio);
      std::mt19937_64 rng(cfg.seed ^ (0x9e3779b97f4a7c15ull * (t * 4 + static_cast<int>(s) + 1)));
      std::unordered_set<std::uint64_t> used;
      used.reserve(want * 2);
      std::size_t got = 0;
      std::uint64_t attempts = 0;
      const std::uint64_t max_attempts = want * 200 + 1000;
      while (got < want && attempts < max_attempts) {
        ++attempts;
        const int u = static_cast<int>(mgoe::detail::rand_index(rng, num_users));
        const int i = static_cast<int>(mgoe::detail::rand_index(rng, num_items));
        const std::uint64_t key = detail::pair_key(u, i);
        const bool excluded = cfg.negative_mode == NegativeMode::Cascade
                                  ? observed_anywhere(u, i)
                                  : data.matrices[t].contains(u, i);
        if (excluded || !used.insert(key).second) continue;
        ds.examples.push_back({u, i, 0});
        ++got;
      }
      if (got < want)
        out.warnings.push_back("task " + registry.task(t).name +
                               ": could only sample " + std::to_string(got) + " of " +
                               std::to_string(want) + " negatives");
    }
  }

  for (int t = 0; t < num_tasks; ++t) {
    auto& td = out.by_task[t];
    td.has_train_positives = td.train.positives() > 0;
    if (!td.has_train_positives)
      out.warnings.push_back("task " + registry.task(t).name +
                             " has no train positives; excluded from the loss");
  }
  return out;
}

// ---- persistence ----

struct PackedDatasets {
  TaskRegistry registry;
  IdMap users;
  IdMap items;
  DatasetBundle bundle;
};

namespace detail {

constexpr char kDatasetMagic[8] = {'M', 'G', 'D', 'A', 'T', 'A', 0, 0};
constexpr std::uint32_t kDatasetVersion = 1;

inline void write_dataset(BinaryWriter& w, const LabeledDataset& ds) {
  w.u32(static_cast<std::uint32_t>(ds.task));
  w.u32(static_cast<std::uint32_t>(ds.split));
  w.u64(ds.examples.size());
  for (const auto& e : ds.examples) {
    w.pod<std::int32_t>(e.user);
    w.pod<std::int32_t>(e.item);
    w.pod<std::uint8_t>(e.label);
  }
}

inline LabeledDataset read_dataset(BinaryReader& r) {
  LabeledDataset ds;
  ds.task = static_cast<int>(r.u32());
  ds.split = static_cast<Split>(r.u32());
  const auto n = r.u64();
  ds.examples.resize(n);
  for (auto& e : ds.examples) {
    e.user = r.pod<std::int32_t>();
    e.item = r.pod<std::int32_t>();
    e.label = r.pod<std::uint8_t>();
  }
  return ds;
}

}  // namespace detail

inline void save_datasets(const PackedDatasets& packed, const std::string& path) {
  BinaryWriter w(path);
  w.magic(detail::kDatasetMagic);
  w.u32(detail::kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(packed.registry.size()));
  for (std::size_t t = 0; t < packed.registry.size(); ++t) {
    const TaskSpec& spec = packed.registry.task(static_cast<int>(t));
    w.str(spec.name);
    w.u32(static_cast<std::uint32_t>(spec.priority));
    w.f64(spec.alpha);
  }
  w.pod_vec(packed.users.raw_ids());
  w.pod_vec(packed.items.raw_ids());
  for (const auto& td : packed.bundle.by_task) {
    w.pod<std::uint8_t>(td.has_train_positives ? 1 : 0);
    detail::write_dataset(w, td.train);
    detail::write_dataset(w, td.validation);
    detail::write_dataset(w, td.test);
  }
  w.u64(packed.bundle.positives.size());
  for (const auto& p : packed.bundle.positives) {
    w.pod<std::int32_t>(p.task);
    w.pod<std::int32_t>(p.user);
    w.pod<std::int32_t>(p.item);
    w.i64(p.timestamp);
    w.u32(static_cast<std::uint32_t>(p.split));
  }
  w.close();
}

inline PackedDatasets load_datasets(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(detail::kDatasetMagic, "dataset");
  const auto version = r.u32();
  if (version != detail::kDatasetVersion)
    throw IoError("unsupported dataset version " + std::to_string(version));
  PackedDatasets packed;
  const auto num_tasks = r.u32();
  std::vector<TaskSpec> specs(num_tasks);
  for (auto& s : specs) {
    s.name = r.str();
    s.priority = static_cast<int>(r.u32());
    s.alpha = r.f64();
  }
  packed.registry = TaskRegistry(specs);
  packed.users = IdMap(r.pod_vec<RawId>());
  packed.items = IdMap(r.pod_vec<RawId>());
  packed.bundle.by_task.resize(num_tasks);
  for (auto& td : packed.bundle.by_task) {
    td.has_train_positives = r.pod<std::uint8_t>() != 0;
    td.train = detail::read_dataset(r);
    td.validation = detail::read_dataset(r);
    td.test = detail::read_dataset(r);
  }
  const auto np = r.u64();
  packed.bundle.positives.resize(np);
  for (auto& p : packed.bundle.positives) {
    p.task = r.pod<std::int32_t>();
    p.user = r.pod<std::int32_t>();
    p.item = r.pod<std::int32_t>();
    p.timestamp = r.i64();
    p.split = static_cast<Split>(r.u32());
  }
  return packed;
}

// Per-task counts in the shape of the usual dataset statistics tables.
inline std::string dataset_stats_text(const InteractionData& data) {
  std::ostringstream os;
  os << "users: " << data.users.size() << "\n";
  os << "items: " << data.items.size() << "\n";
  for (std::size_t t = 0; t < data.registry.size(); ++t)
    os << data.registry.task(static_cast<int>(t)).name << ": " << data.matrices[t].nnz << "\n";
  return os.str();
}

inline std::string dataset_stats_csv(const InteractionData& data) {
  std::ostringstream os;
  os << "metric,value\n";
  os << "users," << data.users.size() << "\n";
  os << "items," << data.items.size() << "\n";
  for (std::size_t t = 0; t < data.registry.size(); ++t)
    os << "interactions_" << data.registry.task(static_cast<int>(t)).name << ","
       << data.matrices[t].nnz << "\n";
  return os.str();
}

}  // namespace mgoe
