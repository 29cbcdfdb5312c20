#pragma once

#include <bit>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hetsyn/entity_store.hpp"
#include "hetsyn/error.hpp"
#include "hetsyn/hetgraph.hpp"
#include "hetsyn/tsv.hpp"

namespace hetsyn {

/// Sparse expression row of one cell line: protein entity id -> weight.
struct ExpressionProfile {
  std::string cell_id;
  std::map<std::string, double> weights;
};

struct CellLineEmbedding {
  std::string cell_id;
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
};

using ProteinTable = std::map<std::string, std::vector<double>>;

/// h = sum_i w_i * E_i over the profile's proteins.
inline CellLineEmbedding compose_cell_embedding(const ExpressionProfile& profile,
                                                const ProteinTable& table) {
  if (profile.weights.empty()) {
    throw Error(ErrorCode::EmptyProfile, "featurize",
                "profile '" + profile.cell_id + "' has no proteins");
  }
  CellLineEmbedding out{profile.cell_id, {}};
  for (const auto& [protein, w] : profile.weights) {
    auto it = table.find(protein);
    if (it == table.end()) {
      throw Error(ErrorCode::MissingProtein, "featurize",
                  "profile '" + profile.cell_id + "' references '" + protein +
                      "' absent from the protein table");
    }
    if (out.values.empty()) out.values.assign(it->second.size(), 0.0);
    if (it->second.size() != out.values.size()) {
      throw Error(ErrorCode::DimMismatch, "featurize", "protein table vectors differ in width");
    }
    for (std::size_t d = 0; d < out.values.size(); ++d) out.values[d] += w * it->second[d];
  }
  return out;
}

/// Protein table over the raw (ingested) protein features of a graph.
inline ProteinTable protein_table(const HetGraph& g) {
  ProteinTable table;
  for (auto n : g.nodes_of(EntityKind::Protein)) table.emplace(g.id(n), g.features(n));
  return table;
}

inline double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.length() != b.length()) {
    throw Error(ErrorCode::LengthMismatch, "featurize",
                "fingerprint lengths " + std::to_string(a.length()) + " and " +
                    std::to_string(b.length()) + " differ");
  }
  std::size_t inter = 0, uni = 0;
  const auto& wa = a.words();
  const auto& wb = b.words();
  for (std::size_t i = 0; i < wa.size(); ++i) {
    inter += static_cast<std::size_t>(std::popcount(wa[i] & wb[i]));
    uni += static_cast<std::size_t>(std::popcount(wa[i] | wb[i]));
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

enum class DistanceMetric { Euclidean, Cosine };

inline double embedding_distance(std::span<const double> a, std::span<const double> b,
                                 DistanceMetric metric = DistanceMetric::Euclidean) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimMismatch, "featurize",
                "embedding dims " + std::to_string(a.size()) + " and " +
                    std::to_string(b.size()) + " differ");
  }
  if (metric == DistanceMetric::Euclidean) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = a[i] - b[i];
      s += d * d;
    }
    return std::sqrt(s);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return std::max(0.0, 1.0 - dot / std::sqrt(na * nb));
}

struct SimilarityConfig {
  double dist_threshold = 90.0;
  double tanimoto_threshold = 0.62;
  DistanceMetric metric = DistanceMetric::Euclidean;
};

struct SimilarityInput {
  std::span<const double> embedding;
  const Fingerprint* fingerprint = nullptr;
};

struct SimilarityReport {
  std::size_t pairs_evaluated = 0;
  std::size_t pairs_distance_only = 0;
};

/// Similarity rule: distance strictly below the distance threshold, or
/// Tanimoto strictly above its threshold when both fingerprints exist.
inline bool is_similar(const SimilarityInput& a, const SimilarityInput& b,
                       const SimilarityConfig& cfg, bool* distance_only = nullptr) {
  const bool have_fp = a.fingerprint && b.fingerprint;
  if (distance_only) *distance_only = !have_fp;
  if (embedding_distance(a.embedding, b.embedding, cfg.metric) < cfg.dist_threshold) return true;
  return have_fp && tanimoto(*a.fingerprint, *b.fingerprint) > cfg.tanimoto_threshold;
}

/// Unordered similar pairs (i < j) over the given drugs.
inline std::set<std::pair<std::size_t, std::size_t>> similarity_edges(
    std::span<const SimilarityInput> drugs, const SimilarityConfig& cfg = {},
    SimilarityReport* report = nullptr) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  SimilarityReport local;
  for (std::size_t i = 0; i < drugs.size(); ++i) {
    for (std::size_t j = i + 1; j < drugs.size(); ++j) {
      bool distance_only = false;
      ++local.pairs_evaluated;
      if (is_similar(drugs[i], drugs[j], cfg, &distance_only)) out.emplace(i, j);
      if (distance_only) ++local.pairs_distance_only;
    }
  }
  if (report) *report = local;
  return out;
}

inline SimilarityInput similarity_input(const HetGraph& g, NodeIndex n) {
  return {g.features(n), g.fingerprint(n)};
}

/// Adds a DrugSimilarity edge for every similar drug pair of the graph;
/// returns the number of new edges.
inline std::size_t add_similarity_edges(HetGraph& g, const SimilarityConfig& cfg = {},
                                        SimilarityReport* report = nullptr) {
  const auto drugs = g.nodes_of(EntityKind::Drug);
  std::vector<SimilarityInput> inputs;
  inputs.reserve(drugs.size());
  for (auto n : drugs) inputs.push_back(similarity_input(g, n));
  std::size_t added = 0;
  for (const auto& [i, j] : similarity_edges(inputs, cfg, report)) {
    if (g.add_edge(EdgeType::DrugSimilarity, drugs[i], drugs[j])) ++added;
  }
  return added;
}

struct ExpressionOptions {
  std::set<std::string> excluded_proteins;
  bool l1_normalize = false;
};

/// Expression TSV: `cell_id  protein_id  weight` sparse triplets. Protein ids
/// are resolved through the store to their canonical entity id; excluded
/// proteins are dropped.
inline std::map<std::string, ExpressionProfile> load_expression(const std::string& path,
                                                                const EntityStore& store,
                                                                const ExpressionOptions& opts = {}) {
  tsv::Reader reader(path, {"cell_id", "protein_id", "weight"});
  std::map<std::string, ExpressionProfile> cells;
  std::vector<std::string> f;
  while (reader.next(f)) {
    const double w = tsv::parse_double(f[2], reader.where());
    auto h = store.find(f[1]);
    if (!h) {
      throw Error(ErrorCode::UnknownEntity, "featurize",
                  reader.where() + ": unknown protein '" + f[1] + "'");
    }
    const auto& e = store.entity(*h);
    if (e.kind != EntityKind::Protein) {
      throw Error(ErrorCode::KindMismatch, "featurize",
                  reader.where() + ": '" + f[1] + "' is not a protein");
    }
    if (opts.excluded_proteins.contains(e.id) || opts.excluded_proteins.contains(f[1])) continue;
    auto& profile = cells[f[0]];
    profile.cell_id = f[0];
    profile.weights[e.id] += w;
  }
  if (opts.l1_normalize) {
    for (auto& [_, profile] : cells) {
      double total = 0.0;
      for (const auto& [__, w] : profile.weights) total += std::abs(w);
      if (total > 0.0) {
        for (auto& [__, w] : profile.weights) w /= total;
      }
    }
  }
  return cells;
}

}  // namespace hetsyn
