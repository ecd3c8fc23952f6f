// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

#include "understory/error.hpp"
#include "understory/math.hpp"

namespace understory {

inline constexpr int kNoise = -1;

struct MstEdge {
  int a = 0;
  int b = 0;
  double weight = 0.0;
};

/// One row of the condensed cluster tree. Clusters are numbered from n
/// (the root); children below n are points.
struct CondensedRow {
  int parent = 0;
  int child = 0;
  double lambda = 0.0;
  int child_size = 1;
};

struct HdbscanResult {
  std::vector<int> labels;  ///< cluster id in [0, k) or kNoise
  std::vector<double> core_distances;
  std::vector<MstEdge> mst;  ///< sorted by weight
  std::vector<CondensedRow> condensed;
  std::map<int, double> stability;
  std::vector<int> selected;  ///< condensed-tree cluster ids, ascending
};

/// Distance to the min_samples-th nearest neighbor, the point itself included.
inline std::vector<double> core_distances(const std::vector<Vec3>& pts, int min_samples) {
  const std::size_t n = pts.size();
  const std::size_t k = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, min_samples)));
  std::vector<double> core(n, 0.0), d(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[j] = (pts[i] - pts[j]).norm();
    std::nth_element(d.begin(), d.begin() + static_cast<long>(k - 1), d.end());
    core[i] = d[k - 1];
  }
  return core;
}

/// Prim's algorithm on the implicit mutual-reachability graph, started at
/// point 0; ties go to the lower index.
inline std::vector<MstEdge> mutual_reachability_mst(const std::vector<Vec3>& pts, const std::vector<double>& core) {
  const std::size_t n = pts.size();
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> best(n, inf);
  std::vector<int> from(n, -1);
  std::vector<char> in_tree(n, 0);
  std::size_t current = 0;
  in_tree[0] = 1;
  for (std::size_t added = 1; added < n; ++added) {
    std::size_t next = n;
    double next_w = inf;
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double mr = std::max({core[current], core[j], (pts[current] - pts[j]).norm()});
      if (mr < best[j]) {
        best[j] = mr;
        from[j] = static_cast<int>(current);
      }
      if (next == n || best[j] < next_w) {
        next = j;
        next_w = best[j];
      }
    }
    in_tree[next] = 1;
    edges.push_back({from[next], static_cast<int>(next), next_w});
    current = next;
  }
  std::stable_sort(edges.begin(), edges.end(), [](const MstEdge& x, const MstEdge& y) { return x.weight < y.weight; });
  return edges;
}

namespace detail {

struct LinkageNode {
  int left = 0;
  int right = 0;
  double distance = 0.0;
  int size = 0;
};

/// Single-linkage dendrogram from sorted MST edges; node n + i is the merge of edge i.
inline std::vector<LinkageNode> single_linkage(std::size_t n, const std::vector<MstEdge>& mst) {
  std::vector<int> parent(2 * n - 1);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<int> size(2 * n - 1, 1);
  auto find = [&](int x) {
    int r = x;
    while (parent[r] != r) r = parent[r];
    while (parent[x] != r) {
      const int nx = parent[x];
      parent[x] = r;
      x = nx;
    }
    return r;
  };
  std::vector<LinkageNode> out;
  out.reserve(mst.size());
  int next = static_cast<int>(n);
  for (const auto& e : mst) {
    const int ra = find(e.a), rb = find(e.b);
    out.push_back({ra, rb, e.weight, size[ra] + size[rb]});
    parent[ra] = parent[rb] = next;
    size[next] = size[ra] + size[rb];
    ++next;
  }
  return out;
}

}  // namespace detail

/// Condensed tree: walks the dendrogram from the root; a split where a side
/// has fewer than min_cluster_size points sheds those points from the parent
/// cluster, a split with both sides large enough creates two new clusters.
inline std::vector<CondensedRow> condense_tree(std::size_t n, const std::vector<MstEdge>& mst, int min_cluster_size) {
  std::vector<CondensedRow> rows;
  if (n < 2) return rows;
  const auto link = detail::single_linkage(n, mst);
  const int ni = static_cast<int>(n);
  const int root = 2 * ni - 2;
  auto node_size = [&](int node) { return node < ni ? 1 : link[node - ni].size; };
  std::vector<int> relabel(2 * n - 1, 0);
  std::vector<char> ignore(2 * n - 1, 0);
  relabel[root] = ni;
  int next_label = ni + 1;

  auto bfs = [&](int start) {
    std::vector<int> order{start};
    for (std::size_t i = 0; i < order.size(); ++i)
      if (order[i] >= ni) {
        order.push_back(link[order[i] - ni].left);
        order.push_back(link[order[i] - ni].right);
      }
    return order;
  };
  auto shed = [&](int parent_label, int sub, double lambda) {
    for (int s : bfs(sub)) {
      if (s < ni) rows.push_back({parent_label, s, lambda, 1});
      ignore[s] = 1;
    }
  };

  for (int node : bfs(root)) {
    if (ignore[node] || node < ni) continue;
    const auto& ln = link[node - ni];
    const double lambda = ln.distance > 0.0 ? 1.0 / ln.distance : std::numeric_limits<double>::infinity();
    const int lc = node_size(ln.left), rc = node_size(ln.right);
    if (lc >= min_cluster_size && rc >= min_cluster_size) {
      relabel[ln.left] = next_label++;
      rows.push_back({relabel[node], relabel[ln.left], lambda, lc});
      relabel[ln.right] = next_label++;
      rows.push_back({relabel[node], relabel[ln.right], lambda, rc});
    } else if (lc < min_cluster_size && rc < min_cluster_size) {
      shed(relabel[node], ln.left, lambda);
      shed(relabel[node], ln.right, lambda);
    } else if (lc < min_cluster_size) {
      relabel[ln.right] = relabel[node];
      shed(relabel[node], ln.left, lambda);
    } else {
      relabel[ln.left] = relabel[node];
      shed(relabel[node], ln.right, lambda);
    }
  }
  return rows;
}

/// Stability of every cluster: sum over its rows of (lambda - birth lambda) * size.
/// Differences of two infinite lambdas count as 0.
inline std::map<int, double> cluster_stability(std::size_t n, const std::vector<CondensedRow>& rows) {
  std::map<int, double> birth, stability;
  const int root = static_cast<int>(n);
  birth[root] = 0.0;
  stability[root] = 0.0;
  for (const auto& r : rows)
    if (r.child >= root) {
      birth[r.child] = r.lambda;
      stability[r.child] = 0.0;
    }
  for (const auto& r : rows) {
    const double b = birth[r.parent];
    const double span = (std::isinf(r.lambda) && std::isinf(b)) ? 0.0 : r.lambda - b;
    stability[r.parent] += span * r.child_size;
  }
  return stability;
}

/// Excess-of-mass selection, the root excluded.
inline std::vector<int> select_clusters_eom(std::size_t n, const std::vector<CondensedRow>& rows,
                                            std::map<int, double> stability) {
  const int root = static_cast<int>(n);
  std::map<int, std::vector<int>> children;
  for (const auto& r : rows)
    if (r.child_size > 1 || r.child >= root) children[r.parent].push_back(r.child);
  std::map<int, bool> is_cluster;
  std::vector<int> nodes;
  for (const auto& [id, s] : stability)
    if (id != root) nodes.push_back(id);
  std::sort(nodes.rbegin(), nodes.rend());
  for (int id : nodes) is_cluster[id] = true;
  for (int node : nodes) {
    double subtree = 0.0;
    for (int c : children[node]) subtree += stability[c];
    if (subtree > stability[node]) {
      is_cluster[node] = false;
      stability[node] = subtree;
    } else {
      std::vector<int> stack(children[node].begin(), children[node].end());
      while (!stack.empty()) {
        const int c = stack.back();
        stack.pop_back();
        is_cluster[c] = false;
        for (int g : children[c]) stack.push_back(g);
      }
    }
  }
  std::vector<int> selected;
  for (const auto& [id, keep] : is_cluster)
    if (keep) selected.push_back(id);
  return selected;
}

/// Each point takes the label of its nearest selected ancestor cluster.
inline std::vector<int> label_points(std::size_t n, const std::vector<CondensedRow>& rows,
                                     const std::vector<int>& selected) {
  std::map<int, int> parent_of;
  for (const auto& r : rows) parent_of[r.child] = r.parent;
  std::map<int, int> label_of;
  for (std::size_t i = 0; i < selected.size(); ++i) label_of[selected[i]] = static_cast<int>(i);
  std::vector<int> labels(n, kNoise);
  for (std::size_t p = 0; p < n; ++p) {
    auto it = parent_of.find(static_cast<int>(p));
    while (it != parent_of.end()) {
      const auto lab = label_of.find(it->second);
      if (lab != label_of.end()) {
        labels[p] = lab->second;
        break;
      }
      it = parent_of.find(it->second);
    }
  }
  return labels;
}

/// Full HDBSCAN run with every intermediate product.
inline HdbscanResult hdbscan_detail(const std::vector<Vec3>& pts, int min_cluster_size, int min_samples) {
  if (min_cluster_size < 2) throw InputError("min_cluster_size must be at least 2");
  if (min_samples < 1) throw InputError("min_samples must be at least 1");
  for (const auto& p : pts)
    if (!p.allFinite()) throw InputError("point coordinates must be finite");
  HdbscanResult r;
  const std::size_t n = pts.size();
  r.labels.assign(n, kNoise);
  if (n < static_cast<std::size_t>(min_cluster_size) || n < 2) return r;
  r.core_distances = core_distances(pts, min_samples);
  r.mst = mutual_reachability_mst(pts, r.core_distances);
  r.condensed = condense_tree(n, r.mst, min_cluster_size);
  r.stability = cluster_stability(n, r.condensed);
  r.selected = select_clusters_eom(n, r.condensed, r.stability);
  r.labels = label_points(n, r.condensed, r.selected);
  return r;
}

inline std::vector<int> hdbscan_cluster(const std::vector<Vec3>& pts, int min_cluster_size, int min_samples) {
  return hdbscan_detail(pts, min_cluster_size, min_samples).labels;
}

}  // namespace understory
