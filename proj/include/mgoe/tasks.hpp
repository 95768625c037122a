#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "mgoe/common.hpp"

namespace mgoe {

struct TaskSpec {
  std::string name;
  int priority = 0;     // higher = more important (rarer) behavior
  double alpha = 1.0;   // loss weight
};

// The ordered task set. Tasks are kept in ascending priority order, which is
// the funnel order (e.g. click -> favor -> cart -> buy) used by the cascade.
class TaskRegistry {
 public:
  TaskRegistry() = default;

  explicit TaskRegistry(std::vector<TaskSpec> tasks) : tasks_(std::move(tasks)) {
    if (tasks_.empty()) throw ConfigError("task registry: no tasks");
    std::stable_sort(tasks_.begin(), tasks_.end(),
                     [](const TaskSpec& a, const TaskSpec& b) { return a.priority < b.priority; });
    std::set<std::string> names;
    std::set<int> prios;
    for (const auto& t : tasks_) {
      if (t.name.empty()) throw ConfigError("task registry: empty task name");
      if (!names.insert(t.name).second)
        throw ConfigError("task registry: duplicate task name: " + t.name);
      if (t.priority <= 0)
        throw ConfigError("task registry: priority must be positive for task " + t.name);
      if (!prios.insert(t.priority).second)
        throw ConfigError("task registry: duplicate priority for task " + t.name);
      if (!(t.alpha >= 0.0) || !std::isfinite(t.alpha))
        throw ConfigError("task registry: alpha must be finite and >= 0 for task " + t.name);
    }
  }

  std::size_t size() const { return tasks_.size(); }
  const TaskSpec& task(int idx) const { return tasks_.at(idx); }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < tasks_.size(); ++i)
      if (tasks_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  bool contains(const std::string& name) const { return index_of(name) >= 0; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(tasks_.size());
    for (const auto& t : tasks_) out.push_back(t.name);
    return out;
  }

  std::string names_joined() const {
    std::string s;
    for (const auto& t : tasks_) {
      if (!s.empty()) s += ", ";
      s += t.name;
    }
    return s;
  }

  // The base task: lowest priority, i.e. the most frequent behavior.
  int base_task() const { return 0; }

 private:
  std::vector<TaskSpec> tasks_;
};

inline TaskRegistry default_funnel_registry() {
  return TaskRegistry({{"click", 1, 1.0}, {"favor", 2, 1.0}, {"cart", 3, 1.0}, {"buy", 4, 1.0}});
}

}  // namespace mgoe
