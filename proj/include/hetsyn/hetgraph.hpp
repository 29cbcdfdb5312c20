#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hetsyn/entity_store.hpp"
#include "hetsyn/error.hpp"
#include "hetsyn/random.hpp"
#include "hetsyn/tsv.hpp"

namespace hetsyn {

enum class EdgeType : std::uint8_t {
  DDI_P,
  DDI_N,
  DrugSimilarity,
  DTI,
  DrugDiseaseIndication,
  DrugDiseaseContraindication,
  PPI,
  ProteinDisease,
  DiseaseDisease,
};

inline constexpr std::size_t kEdgeTypeCount = 9;

inline constexpr std::array<EdgeType, kEdgeTypeCount> kAllEdgeTypes = {
    EdgeType::DDI_P,
    EdgeType::DDI_N,
    EdgeType::DrugSimilarity,
    EdgeType::DTI,
    EdgeType::DrugDiseaseIndication,
    EdgeType::DrugDiseaseContraindication,
    EdgeType::PPI,
    EdgeType::ProteinDisease,
    EdgeType::DiseaseDisease,
};

constexpr std::string_view to_string(EdgeType t) {
  switch (t) {
    case EdgeType::DDI_P: return "DDI_P";
    case EdgeType::DDI_N: return "DDI_N";
    case EdgeType::DrugSimilarity: return "DrugSimilarity";
    case EdgeType::DTI: return "DTI";
    case EdgeType::DrugDiseaseIndication: return "DrugDiseaseIndication";
    case EdgeType::DrugDiseaseContraindication: return "DrugDiseaseContraindication";
    case EdgeType::PPI: return "PPI";
    case EdgeType::ProteinDisease: return "ProteinDisease";
    case EdgeType::DiseaseDisease: return "DiseaseDisease";
  }
  return "?";
}

inline std::optional<EdgeType> parse_edge_type(std::string_view text) {
  for (auto t : kAllEdgeTypes) {
    if (to_string(t) == text) return t;
  }
  return std::nullopt;
}

struct EndpointKinds {
  EntityKind src;
  EntityKind dst;
};

/// Permitted (source, destination) kinds per relation.
constexpr EndpointKinds endpoint_kinds(EdgeType t) {
  switch (t) {
    case EdgeType::DDI_P:
    case EdgeType::DDI_N:
    case EdgeType::DrugSimilarity: return {EntityKind::Drug, EntityKind::Drug};
    case EdgeType::DTI: return {EntityKind::Drug, EntityKind::Protein};
    case EdgeType::DrugDiseaseIndication:
    case EdgeType::DrugDiseaseContraindication: return {EntityKind::Drug, EntityKind::Disease};
    case EdgeType::PPI: return {EntityKind::Protein, EntityKind::Protein};
    case EdgeType::ProteinDisease: return {EntityKind::Protein, EntityKind::Disease};
    case EdgeType::DiseaseDisease: return {EntityKind::Disease, EntityKind::Disease};
  }
  return {EntityKind::Drug, EntityKind::Drug};
}

/// Same-kind relations are stored in both directions; cross-kind relations
/// are stored once, from the first endpoint kind to the second.
constexpr bool is_symmetric(EdgeType t) {
  const auto k = endpoint_kinds(t);
  return k.src == k.dst;
}

constexpr bool is_pseudo_eligible(EdgeType t) {
  return t == EdgeType::DTI || t == EdgeType::DDI_P || t == EdgeType::DDI_N;
}

constexpr std::size_t index_of(EdgeType t) { return static_cast<std::size_t>(t); }

using NodeIndex = std::uint32_t;
using Edge = std::pair<NodeIndex, NodeIndex>;
using Incidence = std::pair<NodeIndex, EdgeType>;

/// Typed heterogeneous graph: nodes carry their entity id, kind, raw
/// embedding and optional fingerprint; edges are kept per relation type.
class HetGraph {
 public:
  NodeIndex add_node(std::string id, EntityKind kind, std::vector<double> features,
                     std::optional<Fingerprint> fingerprint = std::nullopt) {
    if (index_.contains(id)) {
      throw Error(ErrorCode::InvalidArgument, "hetgraph", "duplicate node '" + id + "'");
    }
    const auto n = static_cast<NodeIndex>(nodes_.size());
    index_.emplace(id, n);
    nodes_.push_back(Node{std::move(id), kind, std::move(features), std::move(fingerprint)});
    incident_.emplace_back();
    return n;
  }

  /// Adds an edge (and its reverse for symmetric types). Returns false if the
  /// edge was already present.
  bool add_edge(EdgeType t, NodeIndex u, NodeIndex v) {
    check_index(u);
    check_index(v);
    const auto want = endpoint_kinds(t);
    if (nodes_[u].kind != want.src || nodes_[v].kind != want.dst) {
      throw Error(ErrorCode::KindMismatch, "hetgraph",
                  std::string(to_string(t)) + " connects " + std::string(to_string(want.src)) +
                      "->" + std::string(to_string(want.dst)) + ", got " +
                      std::string(to_string(nodes_[u].kind)) + "->" +
                      std::string(to_string(nodes_[v].kind)));
    }
    if (u == v) {
      throw Error(ErrorCode::InvalidArgument, "hetgraph",
                  "self-edge on '" + nodes_[u].id + "'");
    }
    auto& set = edges_[index_of(t)];
    if (!set.emplace(u, v).second) return false;
    incident_[u].emplace_back(v, t);
    incident_[v].emplace_back(u, t);
    if (is_symmetric(t)) set.emplace(v, u);
    return true;
  }

  std::size_t node_count() const { return nodes_.size(); }
  const std::string& id(NodeIndex n) const { return node(n).id; }
  EntityKind kind(NodeIndex n) const { return node(n).kind; }
  const std::vector<double>& features(NodeIndex n) const { return node(n).features; }
  const Fingerprint* fingerprint(NodeIndex n) const {
    const auto& fp = node(n).fingerprint;
    return fp ? &*fp : nullptr;
  }

  std::optional<NodeIndex> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<NodeIndex> nodes_of(EntityKind kind) const {
    std::vector<NodeIndex> out;
    for (NodeIndex n = 0; n < nodes_.size(); ++n) {
      if (nodes_[n].kind == kind) out.push_back(n);
    }
    return out;
  }

  /// Stored (directed) pairs of one type; symmetric types hold both orders.
  const std::set<Edge>& edges(EdgeType t) const { return edges_[index_of(t)]; }

  bool has_edge(EdgeType t, NodeIndex u, NodeIndex v) const {
    return edges_[index_of(t)].contains({u, v});
  }

  /// Undirected incidence list, one entry per stored relation instance.
  const std::vector<Incidence>& incident(NodeIndex n) const {
    check_index(n);
    return incident_[n];
  }

  std::size_t stored_edge_count() const {
    std::size_t n = 0;
    for (const auto& s : edges_) n += s.size();
    return n;
  }

  /// FNV-1a over node ids and every stored edge, in canonical order.
  std::uint64_t hash() const {
    std::uint64_t h = fnv1a("hetgraph");
    for (const auto& n : nodes_) {
      h = fnv1a(n.id, h);
      h = fnv1a(to_string(n.kind), h);
    }
    for (auto t : kAllEdgeTypes) {
      h = fnv1a(to_string(t), h);
      for (const auto& [u, v] : edges_[index_of(t)]) {
        h = splitmix64(h ^ (static_cast<std::uint64_t>(u) << 32 | v));
      }
    }
    return h;
  }

  void check_index(NodeIndex n) const {
    if (n >= nodes_.size()) {
      throw Error(ErrorCode::IndexOutOfRange, "hetgraph",
                  "node " + std::to_string(n) + " out of range (" +
                      std::to_string(nodes_.size()) + " nodes)");
    }
  }

 private:
  struct Node {
    std::string id;
    EntityKind kind;
    std::vector<double> features;
    std::optional<Fingerprint> fingerprint;
  };

  const Node& node(NodeIndex n) const {
    check_index(n);
    return nodes_[n];
  }

  std::vector<Node> nodes_;
  std::map<std::string, NodeIndex> index_;
  std::array<std::set<Edge>, kEdgeTypeCount> edges_;
  std::vector<std::vector<Incidence>> incident_;
};

/// Overlay of predicted DTI/DDI edges on top of an unchanged base graph. The
/// effective adjacency is base ∪ pseudo.
class RefinedGraph {
 public:
  explicit RefinedGraph(const HetGraph& base) : base_(&base), incident_(base.node_count()) {}

  const HetGraph& base() const { return *base_; }

  /// Adds a pseudo edge unless the base graph already has it. DDI pseudo
  /// edges are symmetric like their base counterparts.
  bool add_pseudo(EdgeType t, NodeIndex u, NodeIndex v) {
    if (!is_pseudo_eligible(t)) {
      throw Error(ErrorCode::InvalidArgument, "hetgraph",
                  "pseudo edges are limited to DTI/DDI_P/DDI_N, got " +
                      std::string(to_string(t)));
    }
    base_->check_index(u);
    base_->check_index(v);
    const auto want = endpoint_kinds(t);
    if (base_->kind(u) != want.src || base_->kind(v) != want.dst || u == v) {
      throw Error(ErrorCode::KindMismatch, "hetgraph",
                  "pseudo " + std::string(to_string(t)) + " endpoints have wrong kinds");
    }
    if (base_->has_edge(t, u, v)) return false;
    auto& set = pseudo_[index_of(t)];
    if (!set.emplace(u, v).second) return false;
    if (is_symmetric(t)) set.emplace(v, u);
    incident_[u].emplace_back(v, t);
    incident_[v].emplace_back(u, t);
    return true;
  }

  const std::set<Edge>& pseudo(EdgeType t) const { return pseudo_[index_of(t)]; }

  /// Number of pseudo relations (symmetric pairs counted once).
  std::size_t pseudo_count() const {
    std::size_t n = 0;
    for (auto t : kAllEdgeTypes) {
      n += is_symmetric(t) ? pseudo_[index_of(t)].size() / 2 : pseudo_[index_of(t)].size();
    }
    return n;
  }

  bool has_edge(EdgeType t, NodeIndex u, NodeIndex v) const {
    return base_->has_edge(t, u, v) || pseudo_[index_of(t)].contains({u, v});
  }

  const std::vector<Incidence>& pseudo_incident(NodeIndex n) const {
    base_->check_index(n);
    return incident_[n];
  }

 private:
  const HetGraph* base_;
  std::array<std::set<Edge>, kEdgeTypeCount> pseudo_;
  std::vector<std::vector<Incidence>> incident_;
};

namespace detail {
inline bool wanted(const std::optional<std::set<EdgeType>>& types, EdgeType t) {
  return !types || types->contains(t);
}
}  // namespace detail

/// Neighbors of `node` over the requested relation types (all if unset),
/// following edges in either direction.
inline std::set<Incidence> neighbors(const HetGraph& g, NodeIndex node,
                                     const std::optional<std::set<EdgeType>>& types = {}) {
  std::set<Incidence> out;
  for (const auto& inc : g.incident(node)) {
    if (detail::wanted(types, inc.second)) out.insert(inc);
  }
  return out;
}

inline std::set<Incidence> neighbors(const RefinedGraph& g, NodeIndex node,
                                     const std::optional<std::set<EdgeType>>& types = {}) {
  auto out = neighbors(g.base(), node, types);
  for (const auto& inc : g.pseudo_incident(node)) {
    if (detail::wanted(types, inc.second)) out.insert(inc);
  }
  return out;
}

struct DegreeStats {
  std::size_t edge_count = 0;
  double mean_degree = 0.0;
  std::size_t max_degree = 0;
};

/// Per-relation edge counts and degree summaries. Symmetric relations report
/// undirected counts; degrees are averaged over nodes of the relation's
/// endpoint kinds.
inline std::array<DegreeStats, kEdgeTypeCount> degree_stats(const HetGraph& g) {
  std::array<DegreeStats, kEdgeTypeCount> out{};
  for (auto t : kAllEdgeTypes) {
    const auto& set = g.edges(t);
    auto& s = out[index_of(t)];
    s.edge_count = is_symmetric(t) ? set.size() / 2 : set.size();
    std::vector<std::size_t> degree(g.node_count(), 0);
    for (const auto& [u, v] : set) {
      ++degree[u];
      if (!is_symmetric(t)) ++degree[v];
    }
    const auto kinds = endpoint_kinds(t);
    std::size_t eligible = 0, total = 0;
    for (NodeIndex n = 0; n < g.node_count(); ++n) {
      if (g.kind(n) != kinds.src && g.kind(n) != kinds.dst) continue;
      ++eligible;
      total += degree[n];
      s.max_degree = std::max(s.max_degree, degree[n]);
    }
    s.mean_degree = eligible ? static_cast<double>(total) / static_cast<double>(eligible) : 0.0;
  }
  return out;
}

/// Homogeneous neighborhoods for message passing in compressed-row form: for
/// each node, itself plus every node sharing any edge with it, in either
/// direction, sorted and deduplicated.
struct Neighborhoods {
  std::vector<std::size_t> offsets;
  std::vector<NodeIndex> members;

  std::size_t node_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t begin(std::size_t i) const { return offsets[i]; }
  std::size_t end(std::size_t i) const { return offsets[i + 1]; }
};

namespace detail {
template <typename ExtraFn>
Neighborhoods build_neighborhoods(const HetGraph& g, ExtraFn&& extra) {
  Neighborhoods nb;
  nb.offsets.reserve(g.node_count() + 1);
  nb.offsets.push_back(0);
  std::vector<NodeIndex> row;
  for (NodeIndex i = 0; i < g.node_count(); ++i) {
    row.clear();
    row.push_back(i);
    for (const auto& inc : g.incident(i)) row.push_back(inc.first);
    extra(i, row);
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    nb.members.insert(nb.members.end(), row.begin(), row.end());
    nb.offsets.push_back(nb.members.size());
  }
  return nb;
}
}  // namespace detail

inline Neighborhoods message_passing_neighborhoods(const HetGraph& g) {
  return detail::build_neighborhoods(g, [](NodeIndex, std::vector<NodeIndex>&) {});
}

inline Neighborhoods message_passing_neighborhoods(const RefinedGraph& g) {
  return detail::build_neighborhoods(g.base(), [&](NodeIndex i, std::vector<NodeIndex>& row) {
    for (const auto& inc : g.pseudo_incident(i)) row.push_back(inc.first);
  });
}

struct EdgeRecord {
  std::string src;
  std::string dst;
  EdgeType type;
};

/// Builds the graph over every entity in the store. Each node takes its
/// attached embedding (and fingerprint, if any) as raw features.
inline HetGraph build_graph(const EntityStore& store, const std::vector<EdgeRecord>& edges) {
  HetGraph g;
  std::map<EntityHandle, NodeIndex> node_of;
  for (auto h : store.entities()) {
    const auto& e = store.entity(h);
    const auto* emb = store.embedding(h);
    if (!emb) {
      throw Error(ErrorCode::MissingEmbedding, "hetgraph",
                  std::string(to_string(e.kind)) + " '" + e.id + "' has no embedding");
    }
    std::optional<Fingerprint> fp;
    if (const auto* f = store.fingerprint(h)) fp = *f;
    node_of[h] = g.add_node(e.id, e.kind, emb->values, std::move(fp));
  }
  for (const auto& rec : edges) {
    auto src = store.find(rec.src);
    auto dst = store.find(rec.dst);
    if (!src || !dst) {
      throw Error(ErrorCode::UnknownEntity, "hetgraph",
                  "edge references unknown entity '" + (src ? rec.dst : rec.src) + "'");
    }
    g.add_edge(rec.type, node_of.at(*src), node_of.at(*dst));
  }
  return g;
}

/// Edges TSV: `src  dst  type`.
inline std::vector<EdgeRecord> load_edges(const std::string& path) {
  tsv::Reader reader(path, {"src", "dst", "type"});
  std::vector<EdgeRecord> out;
  std::vector<std::string> f;
  while (reader.next(f)) {
    auto t = parse_edge_type(tsv::trim(f[2]));
    if (!t) {
      throw Error(ErrorCode::ParseError, "hetgraph",
                  reader.where() + ": unknown edge type '" + f[2] + "'");
    }
    out.push_back({f[0], f[1], *t});
  }
  return out;
}

inline HetGraph build_graph(const EntityStore& store, const std::string& edges_path) {
  return build_graph(store, load_edges(edges_path));
}

}  // namespace hetsyn
