// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Exhaustive HDBSCAN for tiny inputs: full mutual-reachability matrix, Prim
// on the matrix, top-down splitting of the MST (removing the edge that
// merges last), per-point exit lambdas for stability, and a recursive
// excess-of-mass choice.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <vector>

#include "understory/math.hpp"

namespace oracle {

struct RefEdge {
  int a, b;
  double w;
};

inline std::vector<int> reference_hdbscan(const std::vector<understory::Vec3>& pts, int mcs, int min_samples) {
  const int n = static_cast<int>(pts.size());
  std::vector<int> labels(n, -1);
  if (n < mcs || n < 2) return labels;
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<std::vector<double>> d(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) d[i][j] = (pts[i] - pts[j]).norm();
  std::vector<double> core(n);
  const int k = std::min(n, min_samples);
  for (int i = 0; i < n; ++i) {
    std::vector<double> row = d[i];
    std::sort(row.begin(), row.end());
    core[i] = row[k - 1];
  }
  std::vector<std::vector<double>> mr(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) mr[i][j] = std::max({core[i], core[j], d[i][j]});

  // Prim from vertex 0; lower index wins ties.
  std::vector<RefEdge> mst;
  std::vector<bool> in(n, false);
  std::vector<double> key(n, inf);
  std::vector<int> parent(n, -1);
  in[0] = true;
  for (int j = 1; j < n; ++j) {
    key[j] = mr[0][j];
    parent[j] = 0;
  }
  for (int step = 1; step < n; ++step) {
    int best = -1;
    for (int j = 0; j < n; ++j)
      if (!in[j] && (best < 0 || key[j] < key[best])) best = j;
    in[best] = true;
    mst.push_back({parent[best], best, key[best]});
    for (int j = 0; j < n; ++j)
      if (!in[j] && mr[best][j] < key[j]) {
        key[j] = mr[best][j];
        parent[j] = best;
      }
  }
  std::stable_sort(mst.begin(), mst.end(), [](const RefEdge& x, const RefEdge& y) { return x.w < y.w; });

  // A subtree of the MST: its points and the positions (in sorted order) of its edges.
  struct Node {
    int cluster;
    std::vector<int> points;
    std::vector<int> edges;
  };
  auto split = [&](const std::vector<int>& points, const std::vector<int>& edges, std::vector<int>& lp,
                   std::vector<int>& le, std::vector<int>& rp, std::vector<int>& re) {
    const int cut = *std::max_element(edges.begin(), edges.end());
    std::map<int, std::vector<int>> adj;
    for (int e : edges)
      if (e != cut) {
        adj[mst[e].a].push_back(mst[e].b);
        adj[mst[e].b].push_back(mst[e].a);
      }
    std::vector<int> stack{mst[cut].a};
    std::vector<bool> left(n, false);
    left[mst[cut].a] = true;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      for (int q : adj[p])
        if (!left[q]) {
          left[q] = true;
          stack.push_back(q);
        }
    }
    for (int p : points) (left[p] ? lp : rp).push_back(p);
    for (int e : edges)
      if (e != cut) (left[mst[e].a] ? le : re).push_back(e);
    return mst[cut].w;
  };

  std::map<int, double> birth;
  std::map<int, int> parent_cluster;
  std::vector<std::map<int, double>> exit_lambda(1);  // unused slot
  std::map<int, std::vector<double>> exits;            // cluster -> exit lambda per member
  std::vector<int> owner(n, -1);                        // last cluster containing each point
  int next = n + 1;
  birth[n] = 0.0;
  std::vector<Node> queue;
  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;
  std::vector<int> all_edges(mst.size());
  for (std::size_t i = 0; i < mst.size(); ++i) all_edges[i] = static_cast<int>(i);
  queue.push_back({n, all, all_edges});
  for (std::size_t qi = 0; qi < queue.size(); ++qi) {
    const Node node = queue[qi];
    for (int p : node.points) owner[p] = node.cluster;
    if (node.points.size() < 2) continue;
    std::vector<int> lp, le, rp, re;
    const double dist = split(node.points, node.edges, lp, le, rp, re);
    const double lambda = dist > 0 ? 1.0 / dist : inf;
    const bool lbig = static_cast<int>(lp.size()) >= mcs, rbig = static_cast<int>(rp.size()) >= mcs;
    auto shed = [&](const std::vector<int>& ps) {
      exits[node.cluster].insert(exits[node.cluster].end(), ps.size(), lambda);
    };
    if (lbig && rbig) {
      const int lc = next++, rc = next++;
      birth[lc] = birth[rc] = lambda;
      parent_cluster[lc] = parent_cluster[rc] = node.cluster;
      for (std::size_t i = 0; i < lp.size() + rp.size(); ++i) exits[node.cluster].push_back(lambda);
      queue.push_back({lc, lp, le});
      queue.push_back({rc, rp, re});
    } else if (!lbig && !rbig) {
      shed(lp);
      shed(rp);
    } else if (!lbig) {
      shed(lp);
      queue.push_back({node.cluster, rp, re});
    } else {
      shed(rp);
      queue.push_back({node.cluster, lp, le});
    }
  }

  std::map<int, double> stability;
  for (const auto& [c, b] : birth) {
    double s = 0.0;
    for (double l : exits[c]) s += (std::isinf(l) && std::isinf(b)) ? 0.0 : l - b;
    stability[c] = s;
  }
  std::map<int, std::vector<int>> children;
  for (const auto& [c, p] : parent_cluster) children[p].push_back(c);

  // Best achievable total below (and including) a cluster, and the chosen set.
  std::function<double(int, std::vector<int>&)> choose = [&](int c, std::vector<int>& chosen) -> double {
    std::vector<int> sub;
    double below = 0.0;
    for (int ch : children[c]) below += choose(ch, sub);
    if (c != n && !(below > stability[c])) {
      chosen.push_back(c);
      return stability[c];
    }
    chosen.insert(chosen.end(), sub.begin(), sub.end());
    return below;
  };
  std::vector<int> chosen;
  choose(n, chosen);
  std::sort(chosen.begin(), chosen.end());

  for (int p = 0; p < n; ++p) {
    // Walk from the deepest cluster that held p up to the root.
    for (int c = owner[p];; c = parent_cluster[c]) {
      const auto it = std::find(chosen.begin(), chosen.end(), c);
      if (it != chosen.end()) {
        labels[p] = static_cast<int>(it - chosen.begin());
        break;
      }
      if (c == n) break;
    }
  }
  return labels;
}

/// Labels renumbered by first occurrence; noise stays -1.
inline std::vector<int> canonical(const std::vector<int>& labels) {
  std::map<int, int> m;
  std::vector<int> out;
  for (int l : labels) {
    if (l < 0) {
      out.push_back(-1);
      continue;
    }
    const auto it = m.emplace(l, static_cast<int>(m.size())).first;
    out.push_back(it->second);
  }
  return out;
}

/// Adjusted Rand index.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> nij;
  std::map<int, double> ai, bj;
  for (std::size_t i = 0; i < a.size(); ++i) {
    nij[{a[i], b[i]}] += 1;
    ai[a[i]] += 1;
    bj[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double sij = 0, sa = 0, sb = 0;
  for (const auto& [k, v] : nij) sij += c2(v);
  for (const auto& [k, v] : ai) sa += c2(v);
  for (const auto& [k, v] : bj) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (sij - expected) / (max_index - expected);
}

}  // namespace oracle
