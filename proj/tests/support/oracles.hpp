#pragma once

// Independent reference implementations used as test oracles. They work on
// dense matrices and plain loops and share no code with the library's
// forward passes beyond reading parameter values.

#include <cmath>
#include <set>
#include <vector>

#include "hetsyn/hetsyn.hpp"

namespace hetsyn::testing {

using DMat = Eigen::MatrixXd;

inline DMat to_dense(const nn::Matrix<double>& m) { return DMat(m); }

/// Dense adjacency with self-loops: 1 where any stored edge (either
/// direction, any type) or pseudo edge joins i and j.
inline DMat dense_adjacency(const HetGraph& g, const RefinedGraph* refined = nullptr) {
  const auto n = static_cast<Eigen::Index>(g.node_count());
  DMat a = DMat::Identity(n, n);
  for (auto t : kAllEdgeTypes) {
    for (const auto& [u, v] : g.edges(t)) a(u, v) = a(v, u) = 1.0;
    if (refined) {
      for (const auto& [u, v] : refined->pseudo(t)) a(u, v) = a(v, u) = 1.0;
    }
  }
  return a;
}

/// Graph attention with full N x N masked softmax per head.
inline DMat dense_gat_layer(const DMat& adj, const DMat& x, const GatLayer<double>& layer, double slope) {
  const DMat h = x * to_dense(layer.weight.value);
  const auto heads = static_cast<Eigen::Index>(layer.heads);
  const auto f = h.cols() / heads;
  const auto n = x.rows();
  const bool concat = layer.mode == nn::GatMode::Concat;
  DMat out = DMat::Zero(n, concat ? h.cols() : f);
  const DMat ad = to_dense(layer.att_dst.value), as = to_dense(layer.att_src.value);
  for (Eigen::Index k = 0; k < heads; ++k) {
    const DMat hk = h.middleCols(k * f, f);
    DMat weights = DMat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double z = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (adj(i, j) == 0.0) continue;
        double e = ad.row(k).dot(hk.row(i)) + as.row(k).dot(hk.row(j));
        e = e > 0 ? e : slope * e;
        weights(i, j) = std::exp(e);
        z += weights(i, j);
      }
      weights.row(i) /= z;
    }
    if (concat) {
      out.middleCols(k * f, f) = weights * hk;
    } else {
      out += weights * hk / static_cast<double>(heads);
    }
  }
  out.rowwise() += to_dense(layer.bias.value).row(0);
  return out;
}

inline DMat elu(const DMat& x, double alpha) {
  return x.unaryExpr([alpha](double v) { return v > 0 ? v : alpha * (std::exp(v) - 1.0); });
}

inline DMat mlp_forward(const nn::Mlp<double>& mlp, DMat x) {
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    x = x * to_dense(mlp.layers[l].weight.value);
    x.rowwise() += to_dense(mlp.layers[l].bias.value).row(0);
    if (l + 1 < mlp.layers.size()) x = x.cwiseMax(0.0);
  }
  return x;
}

/// Per-node projection to the common width, node by node.
inline DMat project_oracle(SynergyModel<double>& model, const HetGraph& g) {
  DMat x(static_cast<Eigen::Index>(g.node_count()), static_cast<Eigen::Index>(model.config().width));
  for (NodeIndex n = 0; n < g.node_count(); ++n) {
    const auto& f = g.features(n);
    DMat row(1, static_cast<Eigen::Index>(f.size()));
    for (std::size_t d = 0; d < f.size(); ++d) row(0, static_cast<Eigen::Index>(d)) = f[d];
    x.row(n) = mlp_forward(model.projection(g.kind(n)), row).row(0);
  }
  return x;
}

struct PseudoEdge {
  EdgeType type;
  NodeIndex u, v;
  auto operator<=>(const PseudoEdge&) const = default;
};

inline bool connected_by_anything(const HetGraph& g, NodeIndex u, NodeIndex v) {
  for (auto t : kAllEdgeTypes) {
    if (g.has_edge(t, u, v) || g.has_edge(t, v, u)) return true;
  }
  return false;
}

/// The pseudo-edge rule evaluated pair by pair with single-pair predictor
/// calls: for unconnected drug-protein pairs, DTI iff score >= tau_dti; for
/// unconnected drug pairs, the argmax class (lowest index on ties) if it is P
/// or N and its probability >= tau_ddi.
inline std::set<PseudoEdge> pseudo_oracle(SynergyModel<double>& model, const HetGraph& g,
                                          const std::vector<Edge>& candidates) {
  std::set<PseudoEdge> out;
  if (model.config().variant == Variant::NoPredictive) return out;
  for (auto [u, v] : candidates) {
    if (g.kind(u) == EntityKind::Protein) std::swap(u, v);
    if (u == v || connected_by_anything(g, u, v)) continue;
    if (g.kind(u) == EntityKind::Drug && g.kind(v) == EntityKind::Protein) {
      if (model.dti().predict_dti(g.features(u), g.features(v)) >= model.config().tau_dti) {
        out.insert({EdgeType::DTI, u, v});
      }
    } else if (g.kind(u) == EntityKind::Drug && g.kind(v) == EntityKind::Drug) {
      const auto a = std::min(u, v), b = std::max(u, v);
      const auto p = model.ddi().predict_ddi(g.features(a), g.features(b));
      int best = 0;
      if (p[1] > p[best]) best = 1;
      if (p[2] > p[best]) best = 2;
      if (best == 2 || p[best] < model.config().tau_ddi) continue;
      out.insert({best == 0 ? EdgeType::DDI_P : EdgeType::DDI_N, a, b});
    }
  }
  return out;
}

/// Pseudo edges of a refined graph in the oracle's (type, u, v) form, one
/// entry per relation (drug pairs as (min, max)).
inline std::set<PseudoEdge> pseudo_set(const RefinedGraph& r) {
  std::set<PseudoEdge> out;
  for (auto t : {EdgeType::DTI, EdgeType::DDI_P, EdgeType::DDI_N}) {
    for (const auto& [u, v] : r.pseudo(t)) {
      if (t == EdgeType::DTI || u < v) out.insert({t, u, v});
    }
  }
  return out;
}

inline std::vector<Edge> all_candidate_pairs(const HetGraph& g) {
  std::vector<Edge> out;
  const auto drugs = g.nodes_of(EntityKind::Drug);
  for (auto d : drugs) {
    for (auto p : g.nodes_of(EntityKind::Protein)) out.emplace_back(d, p);
    for (auto e : drugs) {
      if (d < e) out.emplace_back(d, e);
    }
  }
  return out;
}

/// Whole synergy forward in one piece: projection, one attention layer on
/// the base graph, refinement over every drug-protein and drug-drug pair, two
/// layers on the refined graph, cell composition over protein rows, head and
/// softmax, averaged over both drug orders.
inline std::array<double, 2> monolithic_forward(SynergyModel<double>& model, const HetGraph& g,
                                                const CellProfiles& cells, const SynergyTriple& tr) {
  const auto& cfg = model.config();
  const DMat x = project_oracle(model, g);
  const DMat a = dense_adjacency(g);
  RefinedGraph refined(g);
  for (const auto& e : pseudo_oracle(model, g, all_candidate_pairs(g))) refined.add_pseudo(e.type, e.u, e.v);
  const DMat a_star = dense_adjacency(g, &refined);
  const DMat x1 = elu(dense_gat_layer(a, x, model.layer(0), cfg.negative_slope), cfg.elu_alpha);
  const DMat x2 = elu(dense_gat_layer(a_star, x1, model.layer(1), cfg.negative_slope), cfg.elu_alpha);
  const DMat xs = dense_gat_layer(a_star, x2, model.layer(2), cfg.negative_slope);

  DMat cell = DMat::Zero(1, xs.cols());
  for (const auto& [protein, w] : cells.at(tr.cell_id).weights) cell += w * xs.row(*g.find(protein));
  const auto ra = *g.find(tr.drug_a), rb = *g.find(tr.drug_b);
  auto probs = [&](NodeIndex first, NodeIndex second) {
    DMat in(1, 3 * xs.cols());
    in << xs.row(first), xs.row(second), cell;
    const DMat z = mlp_forward(model.head(), in);
    const double m = z.maxCoeff();
    const double e0 = std::exp(z(0, 0) - m), e1 = std::exp(z(0, 1) - m);
    return std::array<double, 2>{e0 / (e0 + e1), e1 / (e0 + e1)};
  };
  auto p = probs(ra, rb);
  if (!cfg.symmetric) return p;
  const auto q = probs(rb, ra);
  return {0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])};
}

}  // namespace hetsyn::testing
