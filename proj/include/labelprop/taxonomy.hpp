#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include "labelprop/common.hpp"

namespace labelprop {

// ISA taxonomy (a DAG, child -> parent edges). Depths and ancestor sets are
// precomputed at construction; the object is immutable afterwards, so
// similarity queries are pure and safe to run concurrently.
//
// Depth convention: a root has depth 1; depth(n) is the node count on a
// shortest root-to-n path. Wu-Palmer similarity of two concepts is
// 2*depth(lcs) / (depth(u)+depth(v)) with the LCS being a deepest common
// ancestor (a node counts among its own ancestors). Concepts in disjoint
// components have no LCS and no similarity.
class Taxonomy {
 public:
  Taxonomy() = default;

  // edges: (child, parent) pairs. Nodes are everything mentioned.
  explicit Taxonomy(const std::vector<std::pair<std::string, std::string>>& edges) {
    for (const auto& [child, parent] : edges) {
      const int c = intern(child);
      const int p = intern(parent);
      if (c == p) throw InvalidConfigError("taxonomy self-edge at " + child);
      parents_[c].push_back(p);
      children_[p].push_back(c);
    }
    for (auto& v : parents_) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    for (auto& v : children_) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    for (int i = 0; i < node_count(); ++i) {
      if (parents_[i].empty()) roots_.push_back(i);
    }
    if (!names_.empty() && roots_.empty())
      throw InvalidConfigError("taxonomy has no root (cycle)");
    compute_depths();
    compute_ancestors();
  }

  int node_count() const { return static_cast<int>(names_.size()); }
  const std::string& name(int id) const { return names_[id]; }
  const std::vector<int>& roots() const { return roots_; }
  const std::vector<int>& parents(int id) const { return parents_[id]; }
  const std::vector<int>& children(int id) const { return children_[id]; }

  bool contains(const std::string& concept_name) const {
    return ids_.count(concept_name) > 0;
  }
  int id_of(const std::string& concept_name) const {
    auto it = ids_.find(concept_name);
    if (it == ids_.end()) throw UnknownConceptError(concept_name);
    return it->second;
  }

  int depth(int id) const {
    if (id < 0 || id >= node_count()) throw IndexOutOfRangeError("taxonomy id");
    return depth_[id];
  }
  int depth(const std::string& concept_name) const { return depth(id_of(concept_name)); }

  // Ancestors of id, including id itself, sorted by id.
  const std::vector<int>& ancestors(int id) const {
    if (id < 0 || id >= node_count()) throw IndexOutOfRangeError("taxonomy id");
    return ancestors_[id];
  }

  bool is_ancestor(int anc, int node) const {
    const auto& a = ancestors(node);
    return std::binary_search(a.begin(), a.end(), anc);
  }
  bool is_strict_ancestor(int anc, int node) const {
    return anc != node && is_ancestor(anc, node);
  }

  std::optional<double> wup_similarity(int u, int v) const {
    const auto& au = ancestors(u);
    const auto& av = ancestors(v);
    int best = -1;
    // both lists are sorted: single merge pass
    std::size_t i = 0, j = 0;
    while (i < au.size() && j < av.size()) {
      if (au[i] == av[j]) {
        best = std::max(best, depth_[au[i]]);
        ++i;
        ++j;
      } else if (au[i] < av[j]) {
        ++i;
      } else {
        ++j;
      }
    }
    if (best < 0) return std::nullopt;
    return 2.0 * best / (static_cast<double>(depth_[u]) + depth_[v]);
  }

  std::optional<double> wup_similarity(const std::string& u, const std::string& v) const {
    return wup_similarity(id_of(u), id_of(v));
  }

  // File format: one `child<TAB>parent` pair per line.
  static Taxonomy load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open taxonomy file: " + path);
    std::vector<std::pair<std::string, std::string>> edges;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
        throw ParseError(path + ":" + std::to_string(lineno) +
                         ": expected `child<TAB>parent`");
      edges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    return Taxonomy(edges);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write taxonomy file: " + path);
    for (int c = 0; c < node_count(); ++c) {
      for (int p : parents_[c]) out << names_[c] << '\t' << names_[p] << '\n';
    }
  }

 private:
  int intern(const std::string& n) {
    auto it = ids_.find(n);
    if (it != ids_.end()) return it->second;
    const int id = node_count();
    ids_.emplace(n, id);
    names_.push_back(n);
    parents_.emplace_back();
    children_.emplace_back();
    return id;
  }

  void compute_depths() {
    depth_.assign(node_count(), 0);
    std::queue<int> q;
    for (int r : roots_) {
      depth_[r] = 1;
      q.push(r);
    }
    while (!q.empty()) {
      const int n = q.front();
      q.pop();
      for (int c : children_[n]) {
        if (depth_[c] == 0) {
          depth_[c] = depth_[n] + 1;  // BFS: first visit is the shortest path
          q.push(c);
        }
      }
    }
  }

  void compute_ancestors() {
    // Kahn's topological order over child->parent edges: a node is processed
    // once every parent is done, which also detects cycles.
    ancestors_.assign(node_count(), {});
    std::vector<int> pending(node_count());
    std::queue<int> q;
    for (int i = 0; i < node_count(); ++i) {
      pending[i] = static_cast<int>(parents_[i].size());
      if (pending[i] == 0) q.push(i);
    }
    int processed = 0;
    std::vector<int> merged;
    while (!q.empty()) {
      const int n = q.front();
      q.pop();
      ++processed;
      merged.assign(1, n);
      for (int p : parents_[n]) {
        std::vector<int> next;
        next.reserve(merged.size() + ancestors_[p].size());
        std::set_union(merged.begin(), merged.end(), ancestors_[p].begin(),
                       ancestors_[p].end(), std::back_inserter(next));
        merged.swap(next);
      }
      ancestors_[n] = merged;
      for (int c : children_[n]) {
        if (--pending[c] == 0) q.push(c);
      }
    }
    if (processed != node_count())
      throw InvalidConfigError("taxonomy contains a directed cycle");
  }

  std::vector<std::string> names_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::vector<int>> parents_;
  std::vector<std::vector<int>> children_;
  std::vector<int> roots_;
  std::vector<int> depth_;
  std::vector<std::vector<int>> ancestors_;
};

inline int depth(const Taxonomy& tax, const std::string& concept_name) {
  return tax.depth(concept_name);
}

inline std::optional<double> wup_similarity(const Taxonomy& tax, const std::string& u,
                                            const std::string& v) {
  return tax.wup_similarity(u, v);
}

}  // namespace labelprop
