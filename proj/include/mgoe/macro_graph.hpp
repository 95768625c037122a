#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <sstream>
#include <vector>

#include "mgoe/clustering.hpp"
#include "mgoe/io.hpp"

namespace mgoe {

struct MacroCluster {
  int id = -1;
  std::vector<int> members;
  std::vector<double> centroid;
};

// Directed macro edge seen from one micro node: total merging score between
// the (j-1)-hop side in cluster `from` and the j-hop side in cluster `to`.
struct MacroEdge {
  int from_macro = -1;
  int to_macro = -1;
  double weight = 0.0;
};

struct MacroNeighbor {
  int macro_id = -1;
  double weight = 0.0;  // aggregate incident edge mass at this hop
};

struct NodeMacroInfo {
  std::vector<std::vector<MacroEdge>> edges_by_hop;          // [hop-1]
  std::vector<std::vector<MacroNeighbor>> neighbors_by_hop;  // [hop-1], truncated to fanout
};

// The macro task merging graph: macro user/item nodes from preference-based
// grouping plus per-micro-node macro edges and truncated macro neighborhoods.
struct MacroGraph {
  int hops = 1;
  int fanout = 5;
  std::vector<MacroCluster> user_clusters;
  std::vector<MacroCluster> item_clusters;
  std::vector<int> user_assignment;  // micro user -> user cluster
  std::vector<int> item_assignment;
  std::vector<NodeMacroInfo> users;
  std::vector<NodeMacroInfo> items;

  int num_users() const { return static_cast<int>(users.size()); }
  int num_items() const { return static_cast<int>(items.size()); }
};

namespace detail {

// Aggregates one node's hop-level edge map into sorted edge and neighbor
// lists. Neighbor order: descending weight, ties by ascending macro id.
inline void finalize_hop(std::map<std::pair<int, int>, double>& acc, int fanout,
                         std::vector<MacroEdge>& edges, std::vector<MacroNeighbor>& neighbors) {
  edges.reserve(acc.size());
  std::map<int, double> agg;
  for (const auto& [pq, w] : acc) {
    edges.push_back({pq.first, pq.second, w});
    agg[pq.second] += w;
  }
  neighbors.clear();
  neighbors.reserve(agg.size());
  for (const auto& [id, w] : agg) neighbors.push_back({id, w});
  std::sort(neighbors.begin(), neighbors.end(),
            [](const MacroNeighbor& a, const MacroNeighbor& b) {
              if (a.weight != b.weight) return a.weight > b.weight;
              return a.macro_id < b.macro_id;
            });
  if (fanout > 0 && static_cast<int>(neighbors.size()) > fanout) neighbors.resize(fanout);
  acc.clear();
}

}  // namespace detail

// Builds S~ for every micro node up to `hops` (1 or 2):
//   S~^(j)_{v;p,q} = sum over a in (cluster p ∩ hop j-1 of v),
//                    b in (cluster q ∩ hop j of v) of s_ab,
// where hop 0 of v is {v} itself. At hop 2 the node itself is excluded from
// its own two-hop neighborhood.
inline void build_macro_edges(const MergingMatrix& s, const std::vector<int>& user_assignment,
                              const std::vector<int>& item_assignment, int hops, int fanout,
                              std::vector<NodeMacroInfo>& users,
                              std::vector<NodeMacroInfo>& items) {
  if (hops < 1 || hops > 2) throw ConfigError("macro edges: hops must be 1 or 2");
  const int m = s.num_users();
  const int n = s.num_items();
  users.assign(m, {});
  items.assign(n, {});
  for (auto& u : users) {
    u.edges_by_hop.resize(hops);
    u.neighbors_by_hop.resize(hops);
  }
  for (auto& i : items) {
    i.edges_by_hop.resize(hops);
    i.neighbors_by_hop.resize(hops);
  }

  std::map<std::pair<int, int>, double> acc;
  for (int v = 0; v < m; ++v) {
    const int own = user_assignment[v];
    for (const auto& e : s.user_rows[v])
      acc[{own, item_assignment[e.index]}] += e.score;
    detail::finalize_hop(acc, fanout, users[v].edges_by_hop[0], users[v].neighbors_by_hop[0]);
    if (hops >= 2) {
      for (const auto& e : s.user_rows[v]) {
        const int from = item_assignment[e.index];
        for (const auto& back : s.item_rows[e.index]) {
          if (back.index == v) continue;
          acc[{from, user_assignment[back.index]}] += back.score;
        }
      }
      detail::finalize_hop(acc, fanout, users[v].edges_by_hop[1], users[v].neighbors_by_hop[1]);
    }
  }
  for (int v = 0; v < n; ++v) {
    const int own = item_assignment[v];
    for (const auto& e : s.item_rows[v])
      acc[{own, user_assignment[e.index]}] += e.score;
    detail::finalize_hop(acc, fanout, items[v].edges_by_hop[0], items[v].neighbors_by_hop[0]);
    if (hops >= 2) {
      for (const auto& e : s.item_rows[v]) {
        const int from = user_assignment[e.index];
        for (const auto& back : s.user_rows[e.index]) {
          if (back.index == v) continue;
          acc[{from, item_assignment[back.index]}] += back.score;
        }
      }
      detail::finalize_hop(acc, fanout, items[v].edges_by_hop[1], items[v].neighbors_by_hop[1]);
    }
  }
}

// Macro neighbors of a node at each hop: nonzero aggregate weight, sorted by
// descending weight (ties ascending id), truncated to the fanout.
inline const std::vector<MacroNeighbor>& macro_neighbors(const MacroGraph& g, bool is_item,
                                                         int node, int hop) {
  const auto& side = is_item ? g.items : g.users;
  if (node < 0 || node >= static_cast<int>(side.size()))
    throw DataError("macro_neighbors: node out of range");
  if (hop < 1 || hop > g.hops) throw ConfigError("macro_neighbors: bad hop");
  return side[node].neighbors_by_hop[hop - 1];
}

struct MtmgConfig {
  double beta = 0.5;
  int user_clusters = 20;
  int item_clusters = 20;
  int hops = 1;
  int fanout = 5;
  int max_iter = 50;
  std::uint64_t seed = 7;
  // Preference weighting; disabled = plain k-means (the "w/o preference"
  // ablation re-clusters with all weights 1).
  bool weighting = true;
  double s_base = -1.0;  // <= 0: median of the nonzero feature values
  int delta1 = -1;       // < 0: 90th percentile of per-node activity counts
  int delta2 = -1;       // < 0: 10th percentile
  double w_high = 2.0;
  double w_low = 0.5;
  // Nodes above this count cluster on sparse rows of S instead of the dense
  // co-access matrix.
  int dense_coaccess_max = 2048;
};

namespace detail {

inline MicroNodeWeights resolve_weights(const RowFeatures& features, const MtmgConfig& cfg) {
  if (!cfg.weighting) return uniform_weights(features.count());
  double s_base = cfg.s_base;
  if (s_base <= 0.0) {
    auto nz = features.nonzero_values();
    if (nz.empty()) throw DataError("cannot derive s_base: feature matrix is all zero");
    s_base = percentile(nz, 50.0);
  }
  int d1 = cfg.delta1, d2 = cfg.delta2;
  if (d1 < 0 || d2 < 0) {
    std::vector<double> counts(features.count());
    for (int v = 0; v < features.count(); ++v)
      counts[v] = static_cast<double>(features.count_at_least(v, s_base));
    if (d1 < 0) d1 = static_cast<int>(percentile(counts, 90.0));
    if (d2 < 0) d2 = static_cast<int>(percentile(counts, 10.0));
    if (d2 > d1) d2 = d1;
  }
  return assign_micro_weights(features, s_base, d1, d2, cfg.w_high, cfg.w_low);
}

inline std::vector<MacroCluster> to_clusters(const ClusteringResult& res) {
  std::vector<MacroCluster> out(res.centroids.size());
  for (std::size_t c = 0; c < res.centroids.size(); ++c) {
    out[c].id = static_cast<int>(c);
    out[c].members = res.members[c];
    out[c].centroid = res.centroids[c];
  }
  return out;
}

}  // namespace detail

// End-to-end MTMG construction from interaction matrices.
inline MacroGraph build_mtmg(const InteractionData& data, const MtmgConfig& cfg) {
  const MergingMatrix s = build_merging_matrix(data, cfg.beta);
  if (s.nnz() == 0) throw DataError("cannot build a macro graph from empty interactions");

  auto make_features = [&](bool item_side) -> std::unique_ptr<RowFeatures> {
    const auto& side = item_side ? s.item_rows : s.user_rows;
    const auto& other = item_side ? s.user_rows : s.item_rows;
    const int count = static_cast<int>(side.size());
    if (count <= cfg.dense_coaccess_max)
      return std::make_unique<DenseCoAccess>(side, other);
    return std::make_unique<SparseRowFeatures>(side, static_cast<int>(other.size()));
  };

  MacroGraph g;
  g.hops = cfg.hops;
  g.fanout = cfg.fanout;

  {
    auto features = make_features(false);
    if (cfg.user_clusters > features->count())
      throw ConfigError("user cluster count exceeds user count");
    const MicroNodeWeights w = detail::resolve_weights(*features, cfg);
    auto res = preference_grouping(*features, w, cfg.user_clusters, cfg.max_iter, cfg.seed);
    g.user_assignment = res.assignment;
    g.user_clusters = detail::to_clusters(res);
  }
  {
    auto features = make_features(true);
    if (cfg.item_clusters > features->count())
      throw ConfigError("item cluster count exceeds item count");
    const MicroNodeWeights w = detail::resolve_weights(*features, cfg);
    auto res =
        preference_grouping(*features, w, cfg.item_clusters, cfg.max_iter, cfg.seed + 1);
    g.item_assignment = res.assignment;
    g.item_clusters = detail::to_clusters(res);
  }

  build_macro_edges(s, g.user_assignment, g.item_assignment, cfg.hops, cfg.fanout, g.users,
                    g.items);
  return g;
}

// ---- serialization ----

namespace detail {

constexpr char kGraphMagic[8] = {'M', 'G', 'M', 'T', 'M', 'G', 0, 0};
constexpr std::uint32_t kGraphVersion = 1;

inline void write_clusters(BinaryWriter& w, const std::vector<MacroCluster>& cs) {
  w.u32(static_cast<std::uint32_t>(cs.size()));
  for (const auto& c : cs) {
    w.u32(static_cast<std::uint32_t>(c.id));
    w.pod_vec(c.members);
    w.pod_vec(c.centroid);
  }
}

inline std::vector<MacroCluster> read_clusters(BinaryReader& r) {
  std::vector<MacroCluster> cs(r.u32());
  for (auto& c : cs) {
    c.id = static_cast<int>(r.u32());
    c.members = r.pod_vec<int>();
    c.centroid = r.pod_vec<double>();
  }
  return cs;
}

inline void write_side(BinaryWriter& w, const std::vector<NodeMacroInfo>& side) {
  w.u64(side.size());
  for (const auto& node : side) {
    w.u32(static_cast<std::uint32_t>(node.edges_by_hop.size()));
    for (const auto& edges : node.edges_by_hop) {
      w.u64(edges.size());
      for (const auto& e : edges) {
        w.pod<std::int32_t>(e.from_macro);
        w.pod<std::int32_t>(e.to_macro);
        w.f64(e.weight);
      }
    }
    for (const auto& nbs : node.neighbors_by_hop) {
      w.u64(nbs.size());
      for (const auto& nb : nbs) {
        w.pod<std::int32_t>(nb.macro_id);
        w.f64(nb.weight);
      }
    }
  }
}

inline std::vector<NodeMacroInfo> read_side(BinaryReader& r) {
  std::vector<NodeMacroInfo> side(r.u64());
  for (auto& node : side) {
    const auto hops = r.u32();
    node.edges_by_hop.resize(hops);
    node.neighbors_by_hop.resize(hops);
    for (auto& edges : node.edges_by_hop) {
      edges.resize(r.u64());
      for (auto& e : edges) {
        e.from_macro = r.pod<std::int32_t>();
        e.to_macro = r.pod<std::int32_t>();
        e.weight = r.f64();
      }
    }
    for (auto& nbs : node.neighbors_by_hop) {
      nbs.resize(r.u64());
      for (auto& nb : nbs) {
        nb.macro_id = r.pod<std::int32_t>();
        nb.weight = r.f64();
      }
    }
  }
  return side;
}

}  // namespace detail

inline void save_macro_graph(const MacroGraph& g, const std::string& path) {
  BinaryWriter w(path);
  w.magic(detail::kGraphMagic);
  w.u32(detail::kGraphVersion);
  w.u32(static_cast<std::uint32_t>(g.hops));
  w.u32(static_cast<std::uint32_t>(g.fanout));
  detail::write_clusters(w, g.user_clusters);
  detail::write_clusters(w, g.item_clusters);
  w.pod_vec(g.user_assignment);
  w.pod_vec(g.item_assignment);
  detail::write_side(w, g.users);
  detail::write_side(w, g.items);
  w.close();
}

inline MacroGraph load_macro_graph(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(detail::kGraphMagic, "macro graph");
  const auto version = r.u32();
  if (version != detail::kGraphVersion)
    throw IoError("unsupported macro graph version " + std::to_string(version));
  MacroGraph g;
  g.hops = static_cast<int>(r.u32());
  g.fanout = static_cast<int>(r.u32());
  g.user_clusters = detail::read_clusters(r);
  g.item_clusters = detail::read_clusters(r);
  g.user_assignment = r.pod_vec<int>();
  g.item_assignment = r.pod_vec<int>();
  g.users = detail::read_side(r);
  g.items = detail::read_side(r);
  return g;
}

// FNV-1a over a file's bytes; recorded in model cards so a checkpoint can be
// tied to the exact graph it was trained on.
inline std::uint64_t file_hash64(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot hash file: " + path);
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    const std::streamsize got = is.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!is) break;
  }
  return h;
}

inline std::string graph_summary_text(const MacroGraph& g) {
  std::ostringstream os;
  os << "macro graph: " << g.user_clusters.size() << " user clusters, "
     << g.item_clusters.size() << " item clusters, hops=" << g.hops
     << ", fanout=" << g.fanout << "\n";
  auto cluster_sizes = [&](const std::vector<MacroCluster>& cs) {
    std::ostringstream line;
    for (const auto& c : cs) line << c.members.size() << " ";
    return line.str();
  };
  os << "user cluster sizes: " << cluster_sizes(g.user_clusters) << "\n";
  os << "item cluster sizes: " << cluster_sizes(g.item_clusters) << "\n";
  // Edge-weight histogram over hop-1 aggregates (log10 buckets).
  std::array<std::size_t, 8> hist{};
  double total = 0.0;
  std::size_t count = 0;
  for (const auto* side : {&g.users, &g.items})
    for (const auto& node : *side) {
      if (node.neighbors_by_hop.empty()) continue;
      for (const auto& nb : node.neighbors_by_hop[0]) {
        const double lg = std::log10(std::max(nb.weight, 1e-12));
        const int bucket = std::clamp(static_cast<int>(lg) + 3, 0, 7);
        hist[bucket]++;
        total += nb.weight;
        count++;
      }
    }
  os << "hop-1 macro neighbor entries: " << count << ", total weight " << total << "\n";
  os << "weight histogram (log10 buckets from <1e-2): ";
  for (auto h : hist) os << h << " ";
  os << "\n";
  return os.str();
}

}  // namespace mgoe
