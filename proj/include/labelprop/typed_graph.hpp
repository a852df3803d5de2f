#pragma once

#include <algorithm>
#include <fstream>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "labelprop/common.hpp"
#include "labelprop/taxonomy.hpp"
#include "labelprop/vocab.hpp"

namespace labelprop {

enum class EdgeKind : int { SuperSub = 0, Positive = 1, Negative = 2 };

inline const char* edge_kind_name(EdgeKind k) {
  switch (k) {
    case EdgeKind::SuperSub: return "super_sub";
    case EdgeKind::Positive: return "positive";
    case EdgeKind::Negative: return "negative";
  }
  throw InvalidConfigError("bad edge kind");
}

inline EdgeKind edge_kind_from_name(const std::string& s) {
  if (s == "super_sub") return EdgeKind::SuperSub;
  if (s == "positive") return EdgeKind::Positive;
  if (s == "negative") return EdgeKind::Negative;
  throw ParseError("bad edge kind: " + s);
}

// Wu-Palmer thresholds for the positive/negative correlation edges. The
// gap (theta_neg, theta_pos) maps to "no direct relation".
struct GraphBuildConfig {
  double theta_pos = 0.8;
  double theta_neg = 0.3;

  void validate() const {
    if (!(theta_pos > 0.0 && theta_pos <= 1.0))
      throw InvalidConfigError("theta_pos must be in (0,1]");
    if (!(theta_neg >= 0.0 && theta_neg < 1.0))
      throw InvalidConfigError("theta_neg must be in [0,1)");
    if (!(theta_neg < theta_pos))
      throw InvalidConfigError("theta_neg must be < theta_pos");
  }
};

// Label graph with typed edges. At most one edge per unordered node pair.
// SuperSub edges keep their orientation (u is the superordinate); Positive
// and Negative edges are undirected and stored with u < v. Propagation
// treats every edge as visible from both endpoints.
class TypedGraph {
 public:
  struct Edge {
    int u = 0;
    int v = 0;
    EdgeKind kind = EdgeKind::Positive;
    bool operator==(const Edge&) const = default;
  };

  struct Adjacent {
    int sender = 0;
    EdgeKind kind = EdgeKind::Positive;
    bool operator==(const Adjacent&) const = default;
  };

  TypedGraph() = default;
  TypedGraph(int node_count, std::vector<Edge> edges)
      : node_count_(node_count), edges_(std::move(edges)) {
    std::vector<char> seen(static_cast<std::size_t>(node_count_) * node_count_, 0);
    for (const auto& e : edges_) {
      if (e.u < 0 || e.u >= node_count_ || e.v < 0 || e.v >= node_count_)
        throw IndexOutOfRangeError("edge endpoint out of range");
      if (e.u == e.v) throw InvalidConfigError("self-edge");
      char& s1 = seen[static_cast<std::size_t>(e.u) * node_count_ + e.v];
      char& s2 = seen[static_cast<std::size_t>(e.v) * node_count_ + e.u];
      if (s1 || s2) throw InvalidConfigError("duplicate edge on a node pair");
      s1 = s2 = 1;
      if (e.kind != EdgeKind::SuperSub && e.u > e.v)
        throw InvalidConfigError("undirected edge must be stored with u < v");
    }
    build_adjacency();
  }

  int node_count() const { return node_count_; }
  const std::vector<Edge>& edges() const { return edges_; }

  // Every node with an edge to `receiver`, sorted by sender index.
  const std::vector<Adjacent>& adjacency_blocks(int receiver) const {
    if (receiver < 0 || receiver >= node_count_)
      throw IndexOutOfRangeError("receiver index out of range");
    return adjacency_[receiver];
  }

  nlohmann::json to_json() const {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : edges_) {
      edges.push_back({{"u", e.u}, {"v", e.v}, {"kind", edge_kind_name(e.kind)}});
    }
    return {{"node_count", node_count_}, {"edges", edges}};
  }

  static TypedGraph from_json(const nlohmann::json& j) {
    std::vector<Edge> edges;
    for (const auto& je : j.at("edges")) {
      edges.push_back({je.at("u").get<int>(), je.at("v").get<int>(),
                       edge_kind_from_name(je.at("kind").get<std::string>())});
    }
    return TypedGraph(j.at("node_count").get<int>(), std::move(edges));
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write graph file: " + path);
    out << to_json().dump(2) << '\n';
  }

  static TypedGraph load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open graph file: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ParseError("bad graph json in " + path + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  void build_adjacency() {
    adjacency_.assign(node_count_, {});
    for (const auto& e : edges_) {
      adjacency_[e.v].push_back({e.u, e.kind});
      adjacency_[e.u].push_back({e.v, e.kind});
    }
    for (auto& v : adjacency_) {
      std::sort(v.begin(), v.end(),
                [](const Adjacent& a, const Adjacent& b) { return a.sender < b.sender; });
    }
  }

  int node_count_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<Adjacent>> adjacency_;
};

using LabelConceptMap = std::unordered_map<std::string, std::string>;

inline LabelConceptMap identity_concept_map(const LabelVocabulary& vocab) {
  LabelConceptMap m;
  for (const auto& l : vocab.labels()) m.emplace(l, l);
  return m;
}

// Builds the typed label graph. For each unordered label pair: an
// ancestor/descendant relation in the taxonomy yields exactly one SuperSub
// edge (ancestor first) and suppresses the similarity edge; otherwise the
// Wu-Palmer score is thresholded into Positive (>= theta_pos), Negative
// (<= theta_neg), or no edge (gap values and pairs with no common ancestor).
inline TypedGraph build_typed_graph(const Taxonomy& tax, const LabelVocabulary& vocab,
                                    const LabelConceptMap& mapping,
                                    const GraphBuildConfig& cfg) {
  cfg.validate();
  std::vector<int> concept_of(vocab.size());
  for (int i = 0; i < vocab.size(); ++i) {
    auto it = mapping.find(vocab.label(i));
    if (it == mapping.end()) throw UnmappedLabelError(vocab.label(i));
    if (!tax.contains(it->second)) throw UnmappedLabelError(vocab.label(i));
    concept_of[i] = tax.id_of(it->second);
  }

  std::vector<TypedGraph::Edge> edges;
  for (int i = 0; i < vocab.size(); ++i) {
    for (int j = i + 1; j < vocab.size(); ++j) {
      const int ci = concept_of[i];
      const int cj = concept_of[j];
      if (tax.is_strict_ancestor(ci, cj)) {
        edges.push_back({i, j, EdgeKind::SuperSub});
        continue;
      }
      if (tax.is_strict_ancestor(cj, ci)) {
        edges.push_back({j, i, EdgeKind::SuperSub});
        continue;
      }
      const auto s = tax.wup_similarity(ci, cj);
      if (!s.has_value()) continue;
      if (*s >= cfg.theta_pos) {
        edges.push_back({i, j, EdgeKind::Positive});
      } else if (*s <= cfg.theta_neg) {
        edges.push_back({i, j, EdgeKind::Negative});
      }
    }
  }
  return TypedGraph(vocab.size(), std::move(edges));
}

}  // namespace labelprop
