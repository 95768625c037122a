#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <vector>

#include "mgoe/merging.hpp"

namespace mgoe {

// Row access over the clustering feature matrix. Small problems materialize
// the co-access matrix S S^T densely; larger ones cluster the sparse rows of
// S directly (same inner-product geometry up to a linear map).
class RowFeatures {
 public:
  virtual ~RowFeatures() = default;
  virtual int count() const = 0;  // nodes
  virtual int dim() const = 0;    // feature dimension
  virtual double row_norm_sq(int row) const = 0;
  // acc += scale * row
  virtual void accumulate(int row, double scale, std::vector<double>& acc) const = 0;
  // squared Euclidean distance to a dense centroid with known |mu|^2
  virtual double dist_sq(int row, const std::vector<double>& centroid,
                         double centroid_norm_sq) const = 0;
  virtual int count_at_least(int row, double threshold) const = 0;
  virtual std::vector<double> nonzero_values() const = 0;
};

class DenseCoAccess : public RowFeatures {
 public:
  // side_rows: user_rows for S S^T, item_rows for S^T S.
  // other_rows: the transposed adjacency (item_rows resp. user_rows).
  DenseCoAccess(const std::vector<std::vector<MergingEntry>>& side_rows,
                const std::vector<std::vector<MergingEntry>>& other_rows) {
    n_ = static_cast<int>(side_rows.size());
    data_.assign(static_cast<std::size_t>(n_) * n_, 0.0);
    // (S S^T)[v][w] = sum_i s_vi * s_wi, accumulated per shared column.
    for (const auto& col : other_rows)
      for (const auto& a : col)
        for (const auto& b : col)
          data_[static_cast<std::size_t>(a.index) * n_ + b.index] += a.score * b.score;
    norms_.resize(n_);
    for (int v = 0; v < n_; ++v) {
      double s = 0.0;
      const double* row = &data_[static_cast<std::size_t>(v) * n_];
      for (int j = 0; j < n_; ++j) s += row[j] * row[j];
      norms_[v] = s;
    }
  }

  int count() const override { return n_; }
  int dim() const override { return n_; }
  double row_norm_sq(int row) const override { return norms_[row]; }

  void accumulate(int row, double scale, std::vector<double>& acc) const override {
    const double* r = &data_[static_cast<std::size_t>(row) * n_];
    for (int j = 0; j < n_; ++j) acc[j] += scale * r[j];
  }

  double dist_sq(int row, const std::vector<double>& centroid,
                 double centroid_norm_sq) const override {
    const double* r = &data_[static_cast<std::size_t>(row) * n_];
    double dot = 0.0;
    for (int j = 0; j < n_; ++j) dot += r[j] * centroid[j];
    return std::max(0.0, norms_[row] - 2.0 * dot + centroid_norm_sq);
  }

  int count_at_least(int row, double threshold) const override {
    const double* r = &data_[static_cast<std::size_t>(row) * n_];
    int c = 0;
    for (int j = 0; j < n_; ++j) c += r[j] >= threshold ? 1 : 0;
    return c;
  }

  std::vector<double> nonzero_values() const override {
    std::vector<double> out;
    for (double x : data_)
      if (x != 0.0) out.push_back(x);
    return out;
  }

 private:
  int n_ = 0;
  std::vector<double> data_;
  std::vector<double> norms_;
};

class SparseRowFeatures : public RowFeatures {
 public:
  SparseRowFeatures(const std::vector<std::vector<MergingEntry>>& rows, int dim)
      : rows_(&rows), dim_(dim) {
    norms_.resize(rows.size());
    for (std::size_t v = 0; v < rows.size(); ++v) {
      double s = 0.0;
      for (const auto& e : rows[v]) s += e.score * e.score;
      norms_[v] = s;
    }
  }

  int count() const override { return static_cast<int>(rows_->size()); }
  int dim() const override { return dim_; }
  double row_norm_sq(int row) const override { return norms_[row]; }

  void accumulate(int row, double scale, std::vector<double>& acc) const override {
    for (const auto& e : (*rows_)[row]) acc[e.index] += scale * e.score;
  }

  double dist_sq(int row, const std::vector<double>& centroid,
                 double centroid_norm_sq) const override {
    double dot = 0.0;
    for (const auto& e : (*rows_)[row]) dot += e.score * centroid[e.index];
    return std::max(0.0, norms_[row] - 2.0 * dot + centroid_norm_sq);
  }

  int count_at_least(int row, double threshold) const override {
    int c = 0;
    if (threshold <= 0.0) return dim_;  // zeros count too
    for (const auto& e : (*rows_)[row]) c += e.score >= threshold ? 1 : 0;
    return c;
  }

  std::vector<double> nonzero_values() const override {
    std::vector<double> out;
    for (const auto& row : *rows_)
      for (const auto& e : row)
        if (e.score != 0.0) out.push_back(e.score);
    return out;
  }

 private:
  const std::vector<std::vector<MergingEntry>>* rows_;
  int dim_;
  std::vector<double> norms_;
};

// Per-node clustering weights w_v in {w_low, 1, w_high}.
struct MicroNodeWeights {
  std::vector<double> weight;
  double s_base = 0.0;
  int delta1 = 0;
  int delta2 = 0;
  double w_high = 2.0;
  double w_low = 0.5;
};

inline MicroNodeWeights assign_micro_weights(const RowFeatures& features, double s_base,
                                             int delta1, int delta2, double w_high,
                                             double w_low) {
  if (delta2 > delta1) throw ConfigError("micro weights: delta2 must be <= delta1");
  if (!(s_base > 0.0)) throw ConfigError("micro weights: s_base must be > 0");
  if (delta1 < 0 || delta2 < 0) throw ConfigError("micro weights: deltas must be >= 0");
  if (!(w_low <= 1.0 && 1.0 <= w_high))
    throw ConfigError("micro weights: need w_low <= 1 <= w_high");
  MicroNodeWeights out;
  out.s_base = s_base;
  out.delta1 = delta1;
  out.delta2 = delta2;
  out.w_high = w_high;
  out.w_low = w_low;
  out.weight.resize(features.count());
  for (int v = 0; v < features.count(); ++v) {
    const int c = features.count_at_least(v, s_base);
    out.weight[v] = c >= delta1 ? w_high : (c <= delta2 ? w_low : 1.0);
  }
  return out;
}

inline MicroNodeWeights uniform_weights(int count) {
  MicroNodeWeights out;
  out.weight.assign(count, 1.0);
  out.s_base = 1.0;
  out.delta1 = 0;
  out.delta2 = 0;
  out.w_high = 1.0;
  out.w_low = 1.0;
  return out;
}

// Nearest-rank percentile of the given values (p in [0,100]).
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw DataError("percentile of empty set");
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(p / 100.0 * static_cast<double>(values.size()));
  const std::size_t idx = static_cast<std::size_t>(
      std::clamp(rank - 1.0, 0.0, static_cast<double>(values.size() - 1)));
  return values[idx];
}

struct ClusteringResult {
  std::vector<int> assignment;                 // node -> cluster
  std::vector<std::vector<double>> centroids;  // k x dim
  std::vector<std::vector<int>> members;       // cluster -> nodes
  std::vector<double> cost_trace;              // weighted cost after each assignment pass
  int iterations = 0;
};

// Weighted Lloyd iterations: assign to the nearest centroid (Euclidean, ties
// to the lower cluster id), recompute mu_k = sum(w_v d_v) / sum(w_v). Stops at
// the assignment fixpoint or max_iter. Empty clusters are re-seeded at the
// point farthest from its nearest centroid. Deterministic for a fixed seed.
inline ClusteringResult preference_grouping(const RowFeatures& features,
                                            const MicroNodeWeights& weights, int k,
                                            int max_iter, std::uint64_t seed) {
  const int n = features.count();
  if (k < 1) throw ConfigError("preference_grouping: k must be >= 1");
  if (k > n) throw ConfigError("preference_grouping: k exceeds node count");
  if (static_cast<int>(weights.weight.size()) != n)
    throw ConfigError("preference_grouping: weight vector size mismatch");
  const int dim = features.dim();

  ClusteringResult res;
  res.centroids.assign(k, std::vector<double>(dim, 0.0));
  std::vector<double> centroid_norm(k, 0.0);

  auto set_centroid_to_row = [&](int c, int row) {
    std::fill(res.centroids[c].begin(), res.centroids[c].end(), 0.0);
    features.accumulate(row, 1.0, res.centroids[c]);
    centroid_norm[c] = features.row_norm_sq(row);
  };

  // k-means++ seeding, weighted by w_v * D^2.
  {
    std::mt19937_64 rng(seed);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    double total_w = 0.0;
    for (int v = 0; v < n; ++v) total_w += weights.weight[v];
    if (total_w <= 0.0) throw ConfigError("preference_grouping: weights sum to zero");
    // First center: weight-proportional draw.
    double pick = detail::rand_unit(rng) * total_w;
    int first = n - 1;
    for (int v = 0; v < n; ++v) {
      pick -= weights.weight[v];
      if (pick <= 0.0) {
        first = v;
        break;
      }
    }
    set_centroid_to_row(0, first);
    for (int c = 1; c < k; ++c) {
      double mass = 0.0;
      for (int v = 0; v < n; ++v) {
        const double d = features.dist_sq(v, res.centroids[c - 1], centroid_norm[c - 1]);
        d2[v] = std::min(d2[v], d);
        mass += weights.weight[v] * d2[v];
      }
      int chosen = -1;
      if (mass > 0.0) {
        double r = detail::rand_unit(rng) * mass;
        for (int v = 0; v < n; ++v) {
          r -= weights.weight[v] * d2[v];
          if (r <= 0.0) {
            chosen = v;
            break;
          }
        }
      }
      if (chosen < 0) chosen = static_cast<int>(detail::rand_index(rng, n));
      set_centroid_to_row(c, chosen);
    }
  }

  res.assignment.assign(n, -1);
  std::vector<double> dist_to_own(n, 0.0);
  for (int iter = 0; iter < std::max(1, max_iter); ++iter) {
    // Assignment pass.
    bool changed = false;
    double cost = 0.0;
    for (int v = 0; v < n; ++v) {
      int best = 0;
      double best_d = features.dist_sq(v, res.centroids[0], centroid_norm[0]);
      for (int c = 1; c < k; ++c) {
        const double d = features.dist_sq(v, res.centroids[c], centroid_norm[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (res.assignment[v] != best) {
        res.assignment[v] = best;
        changed = true;
      }
      dist_to_own[v] = best_d;
      cost += weights.weight[v] * best_d;
    }
    res.cost_trace.push_back(cost);
    res.iterations = iter + 1;
    if (!changed && iter > 0) break;

    // Weighted centroid update.
    std::vector<double> wsum(k, 0.0);
    for (auto& c : res.centroids) std::fill(c.begin(), c.end(), 0.0);
    for (int v = 0; v < n; ++v) {
      const int c = res.assignment[v];
      features.accumulate(v, weights.weight[v], res.centroids[c]);
      wsum[c] += weights.weight[v];
    }
    std::vector<int> empties;
    for (int c = 0; c < k; ++c) {
      if (wsum[c] > 0.0) {
        for (double& x : res.centroids[c]) x /= wsum[c];
        double s = 0.0;
        for (double x : res.centroids[c]) s += x * x;
        centroid_norm[c] = s;
      } else {
        empties.push_back(c);
      }
    }
    // Re-seed each empty cluster at the point farthest from its nearest
    // centroid; claimed points can't be picked twice in the same pass.
    std::vector<bool> claimed(n, false);
    for (int c : empties) {
      int far = -1;
      double far_d = -1.0;
      for (int v = 0; v < n; ++v) {
        if (claimed[v]) continue;
        if (dist_to_own[v] > far_d) {
          far_d = dist_to_own[v];
          far = v;
        }
      }
      if (far < 0) far = 0;
      claimed[far] = true;
      set_centroid_to_row(c, far);
    }
  }

  res.members.assign(k, {});
  for (int v = 0; v < n; ++v) res.members[res.assignment[v]].push_back(v);
  return res;
}

inline double weighted_cost(const RowFeatures& features, const MicroNodeWeights& weights,
                            const ClusteringResult& res) {
  double cost = 0.0;
  for (int v = 0; v < features.count(); ++v) {
    const auto& mu = res.centroids[res.assignment[v]];
    double norm = 0.0;
    for (double x : mu) norm += x * x;
    cost += weights.weight[v] * features.dist_sq(v, mu, norm);
  }
  return cost;
}

}  // namespace mgoe
