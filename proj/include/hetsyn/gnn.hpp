#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hetsyn/autograd.hpp"
#include "hetsyn/checkpoint.hpp"
#include "hetsyn/edge_predictors.hpp"
#include "hetsyn/entity_store.hpp"
#include "hetsyn/error.hpp"
#include "hetsyn/featurize.hpp"
#include "hetsyn/hetgraph.hpp"
#include "hetsyn/metrics.hpp"
#include "hetsyn/nn.hpp"
#include "hetsyn/random.hpp"

namespace hetsyn {

enum class Variant { Full, NoPredictive };

constexpr std::string_view to_string(Variant v) { return v == Variant::Full ? "full" : "no-predictive"; }

inline std::optional<Variant> parse_variant(std::string_view s) {
  if (s == "full") return Variant::Full;
  if (s == "no-predictive") return Variant::NoPredictive;
  return std::nullopt;
}

struct ModelConfig {
  KindDims dims;
  std::size_t width = 512;
  std::vector<std::size_t> projection_hidden;
  std::array<std::size_t, 3> gat_heads = {4, 8, 12};
  double negative_slope = 0.2;
  double elu_alpha = 1.0;
  std::vector<std::size_t> head_hidden = {3072, 768, 128};
  double dropout = 0.2;
  double tau_dti = 0.5;
  double tau_ddi = 0.5;
  std::size_t candidate_k = 50;
  bool exhaustive_candidates = false;
  bool symmetric = true;
  Variant variant = Variant::Full;
  bool joint_finetune = true;
  double aux_dti_weight = 0.1;
  double aux_ddi_weight = 0.1;
  // Architecture of the two predictors; their input widths follow `dims`.
  PredictorConfig dti{.kind = PredictorKind::DTI};
  PredictorConfig ddi{.kind = PredictorKind::DDI};

  PredictorConfig dti_config() const {
    PredictorConfig c = dti;
    c.kind = PredictorKind::DTI;
    c.input_a = dims.drug;
    c.input_b = dims.protein;
    return c;
  }
  PredictorConfig ddi_config() const {
    PredictorConfig c = ddi;
    c.kind = PredictorKind::DDI;
    c.input_a = dims.drug;
    c.input_b = dims.drug;
    return c;
  }
};

inline Json to_json(const ModelConfig& c) {
  Json j;
  j["dims"] = {{"drug", c.dims.drug}, {"protein", c.dims.protein}, {"disease", c.dims.disease}};
  j["width"] = c.width;
  j["projection_hidden"] = c.projection_hidden;
  j["gat_heads"] = c.gat_heads;
  j["negative_slope"] = c.negative_slope;
  j["elu_alpha"] = c.elu_alpha;
  j["head_hidden"] = c.head_hidden;
  j["dropout"] = c.dropout;
  j["tau_dti"] = c.tau_dti;
  j["tau_ddi"] = c.tau_ddi;
  j["candidate_k"] = c.candidate_k;
  j["exhaustive_candidates"] = c.exhaustive_candidates;
  j["symmetric"] = c.symmetric;
  j["variant"] = std::string(to_string(c.variant));
  j["joint_finetune"] = c.joint_finetune;
  j["aux_dti_weight"] = c.aux_dti_weight;
  j["aux_ddi_weight"] = c.aux_ddi_weight;
  j["dti"] = to_json(c.dti_config());
  j["ddi"] = to_json(c.ddi_config());
  return j;
}

inline ModelConfig model_config_from(const Json& j) {
  ModelConfig c;
  c.dims.drug = j.at("dims").at("drug");
  c.dims.protein = j.at("dims").at("protein");
  c.dims.disease = j.at("dims").at("disease");
  c.width = j.at("width");
  c.projection_hidden = j.at("projection_hidden").get<std::vector<std::size_t>>();
  c.gat_heads = j.at("gat_heads").get<std::array<std::size_t, 3>>();
  c.negative_slope = j.at("negative_slope");
  c.elu_alpha = j.at("elu_alpha");
  c.head_hidden = j.at("head_hidden").get<std::vector<std::size_t>>();
  c.dropout = j.at("dropout");
  c.tau_dti = j.at("tau_dti");
  c.tau_ddi = j.at("tau_ddi");
  c.candidate_k = j.at("candidate_k");
  c.exhaustive_candidates = j.at("exhaustive_candidates");
  c.symmetric = j.at("symmetric");
  c.variant = parse_variant(j.at("variant").get<std::string>()).value_or(Variant::Full);
  c.joint_finetune = j.at("joint_finetune");
  c.aux_dti_weight = j.at("aux_dti_weight");
  c.aux_ddi_weight = j.at("aux_ddi_weight");
  c.dti = predictor_config_from(j.at("dti"));
  c.ddi = predictor_config_from(j.at("ddi"));
  return c;
}

/// One graph-attention layer over a homogeneous view of the graph. Concat
/// layers split the output width across heads; mean layers give every head
/// the full width and average them.
template <typename S>
struct GatLayer {
  std::size_t heads = 1;
  nn::GatMode mode = nn::GatMode::Concat;
  nn::Parameter<S> weight;   // in x heads*F
  nn::Parameter<S> att_dst;  // heads x F
  nn::Parameter<S> att_src;  // heads x F
  nn::Parameter<S> bias;     // 1 x out

  GatLayer() = default;
  GatLayer(const std::string& name, std::size_t in, std::size_t out, std::size_t head_count,
           nn::GatMode gat_mode, Rng& rng)
      : heads(head_count), mode(gat_mode) {
    if (head_count == 0 || (gat_mode == nn::GatMode::Concat && out % head_count != 0)) {
      throw Error(ErrorCode::DimMismatch, "gnn-core",
                  "head count " + std::to_string(head_count) + " does not divide width " +
                      std::to_string(out));
    }
    const std::size_t f = gat_mode == nn::GatMode::Concat ? out / head_count : out;
    weight = nn::Parameter<S>(name + ".weight", nn::glorot<S>(in, head_count * f, rng));
    att_dst = nn::Parameter<S>(name + ".att_dst", nn::glorot<S>(head_count, f, rng));
    att_src = nn::Parameter<S>(name + ".att_src", nn::glorot<S>(head_count, f, rng));
    bias = nn::Parameter<S>(name + ".bias", nn::Matrix<S>::Zero(1, static_cast<Eigen::Index>(out)));
  }

  std::size_t in() const { return static_cast<std::size_t>(weight.value.rows()); }
  std::size_t out() const { return static_cast<std::size_t>(bias.value.cols()); }

  nn::Var forward(nn::Tape<S>& t, nn::Var x, const Neighborhoods& nb, S negative_slope,
                  nn::GatTrace<S>* trace = nullptr) {
    if (static_cast<std::size_t>(t.value(x).cols()) != in()) {
      throw Error(ErrorCode::DimMismatch, "gnn-core",
                  "GAT input width " + std::to_string(t.value(x).cols()) + " != " +
                      std::to_string(in()));
    }
    nn::Var h = t.matmul(x, t.param(weight));
    nn::Var o = t.gat(h, t.param(att_dst), t.param(att_src), nb, heads, negative_slope, mode, trace);
    return t.add_bias(o, t.param(bias));
  }

  void collect(nn::ParameterList<S>& out_list) {
    out_list.push_back(&weight);
    out_list.push_back(&att_dst);
    out_list.push_back(&att_src);
    out_list.push_back(&bias);
  }
};

/// A drug pair on a cell line. Label 1 is synergistic, 0 antagonistic, -1
/// unlabeled.
struct SynergyTriple {
  std::string drug_a;
  std::string drug_b;
  std::string cell_id;
  int label = -1;
};

using CellProfiles = std::map<std::string, ExpressionProfile>;

/// Raw per-kind feature blocks and base neighborhoods of one graph.
template <typename S>
struct GraphInputs {
  std::size_t node_count = 0;
  std::array<std::vector<NodeIndex>, 3> nodes;
  std::array<nn::Matrix<S>, 3> raw;
  Neighborhoods base;
};

struct RefineReport {
  std::size_t dti_candidates = 0;
  std::size_t ddi_candidates = 0;
  std::size_t added_dti = 0;
  std::size_t added_ddi_p = 0;
  std::size_t added_ddi_n = 0;

  std::size_t added() const { return added_dti + added_ddi_p + added_ddi_n; }
};

/// Labeled predictor pairs mixed into the synergy loss during joint training.
struct AuxBatch {
  std::span<const LabeledPair> dti;
  std::span<const LabeledPair> ddi;
};

inline bool base_connected(const HetGraph& g, NodeIndex u, NodeIndex v) {
  for (const auto& [w, t] : g.incident(u)) {
    if (w == v) return true;
  }
  return false;
}

template <typename S>
class SynergyModel {
 public:
  using Mat = nn::Matrix<S>;

  SynergyModel() = default;
  SynergyModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    Rng rng(derive_seed(seed, "synergy-model"));
    for (auto kind : kAllKinds) {
      projections_[static_cast<std::size_t>(kind)] =
          nn::Mlp<S>("proj." + std::string(to_string(kind)), config_.dims.of(kind),
                     config_.projection_hidden, config_.width, rng);
    }
    for (std::size_t l = 0; l < 3; ++l) {
      layers_[l] = GatLayer<S>("gat." + std::to_string(l), config_.width, config_.width,
                               config_.gat_heads[l], l < 2 ? nn::GatMode::Concat : nn::GatMode::Mean,
                               rng);
    }
    head_ = nn::Mlp<S>("head", 3 * config_.width, config_.head_hidden, 2, rng);
    dti_ = EdgePredictor<S>(config_.dti_config(), derive_seed(seed, "dti-init"));
    ddi_ = EdgePredictor<S>(config_.ddi_config(), derive_seed(seed, "ddi-init"));
  }

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  std::uint64_t seed() const { return seed_; }

  nn::Mlp<S>& projection(EntityKind kind) { return projections_[static_cast<std::size_t>(kind)]; }
  GatLayer<S>& layer(std::size_t l) { return layers_.at(l); }
  nn::Mlp<S>& head() { return head_; }
  EdgePredictor<S>& dti() { return dti_; }
  EdgePredictor<S>& ddi() { return ddi_; }

  /// Projection, GAT and head parameters.
  nn::ParameterList<S> synergy_parameters() {
    nn::ParameterList<S> out;
    for (auto& p : projections_) p.collect(out);
    for (auto& l : layers_) l.collect(out);
    head_.collect(out);
    return out;
  }

  nn::ParameterList<S> parameters() {
    auto out = synergy_parameters();
    for (auto* p : dti_.parameters()) out.push_back(p);
    for (auto* p : ddi_.parameters()) out.push_back(p);
    return out;
  }

  GraphInputs<S> prepare(const HetGraph& g) const {
    GraphInputs<S> in;
    in.node_count = g.node_count();
    for (auto kind : kAllKinds) {
      const auto k = static_cast<std::size_t>(kind);
      in.nodes[k] = g.nodes_of(kind);
      const auto width = config_.dims.of(kind);
      Mat m(static_cast<Eigen::Index>(in.nodes[k].size()), static_cast<Eigen::Index>(width));
      for (std::size_t i = 0; i < in.nodes[k].size(); ++i) {
        const auto& f = g.features(in.nodes[k][i]);
        if (f.empty()) {
          throw Error(ErrorCode::MissingEmbedding, "gnn-core",
                      "node '" + g.id(in.nodes[k][i]) + "' has no embedding");
        }
        if (f.size() != width) {
          throw Error(ErrorCode::DimMismatch, "gnn-core",
                      "node '" + g.id(in.nodes[k][i]) + "' has width " + std::to_string(f.size()) +
                          ", expected " + std::to_string(width));
        }
        for (std::size_t d = 0; d < width; ++d) {
          m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = static_cast<S>(f[d]);
        }
      }
      in.raw[k] = std::move(m);
    }
    in.base = message_passing_neighborhoods(g);
    return in;
  }

  /// X: every node projected to the common width, rows in node order.
  nn::Var project(nn::Tape<S>& t, const GraphInputs<S>& in, const nn::Dropout& dropout = {}) {
    std::vector<nn::Var> parts;
    std::vector<std::vector<std::size_t>> positions;
    for (std::size_t k = 0; k < 3; ++k) {
      if (in.nodes[k].empty()) continue;
      parts.push_back(projections_[k].forward(t, t.constant(in.raw[k]), dropout));
      positions.emplace_back(in.nodes[k].begin(), in.nodes[k].end());
    }
    if (parts.empty()) throw Error(ErrorCode::InvalidArgument, "gnn-core", "graph has no nodes");
    return t.scatter_rows(parts, positions, in.node_count);
  }

  Mat project_features(const HetGraph& g) {
    const auto in = prepare(g);
    nn::Tape<S> t(false);
    return t.value(project(t, in));
  }

  /// One GAT layer (with the inter-layer activation for layers 0 and 1).
  nn::Var gat(nn::Tape<S>& t, std::size_t l, nn::Var x, const Neighborhoods& nb,
              nn::GatTrace<S>* trace = nullptr) {
    nn::Var y = layers_.at(l).forward(t, x, nb, static_cast<S>(config_.negative_slope), trace);
    return l < 2 ? t.elu(y, static_cast<S>(config_.elu_alpha)) : y;
  }

  Mat gat_forward(std::size_t l, const Neighborhoods& nb, const Mat& x,
                  nn::GatTrace<S>* trace = nullptr) {
    nn::Tape<S> t(false);
    return t.value(gat(t, l, t.constant(x), nb, trace));
  }

  /// Default candidates: for each drug, its candidate_k most cosine-similar
  /// proteins and drugs under X (all pairs in exhaustive mode). Drug pairs
  /// are (min, max); drug-protein pairs are (drug, protein).
  std::vector<Edge> candidate_pairs(const HetGraph& g, const Mat& X) const {
    const auto drugs = g.nodes_of(EntityKind::Drug);
    const auto proteins = g.nodes_of(EntityKind::Protein);
    std::set<Edge> out;
    if (config_.exhaustive_candidates) {
      for (auto d : drugs) {
        for (auto p : proteins) out.emplace(d, p);
        for (auto e : drugs) {
          if (d < e) out.emplace(d, e);
        }
      }
      return {out.begin(), out.end()};
    }
    Eigen::Matrix<S, Eigen::Dynamic, 1> norms = X.rowwise().norm();
    auto cosine = [&](NodeIndex a, NodeIndex b) {
      const S den = norms(a) * norms(b);
      return den > S(0) ? X.row(a).dot(X.row(b)) / den : S(0);
    };
    std::vector<std::pair<S, NodeIndex>> scored;
    auto top_k = [&](NodeIndex d, const std::vector<NodeIndex>& pool) {
      scored.clear();
      for (auto n : pool) {
        if (n != d) scored.emplace_back(-cosine(d, n), n);
      }
      const auto k = std::min(config_.candidate_k, scored.size());
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end());
      scored.resize(k);
      return scored;
    };
    for (auto d : drugs) {
      for (const auto& [s, p] : top_k(d, proteins)) out.emplace(d, p);
      for (const auto& [s, e] : top_k(d, drugs)) out.emplace(std::min(d, e), std::max(d, e));
    }
    return {out.begin(), out.end()};
  }

  /// Pseudo-edge rule over candidate pairs whose endpoints share no edge in
  /// the base graph: drug-protein pairs gain a DTI edge when the DTI score
  /// reaches tau_dti; drug pairs gain a DDI_P/DDI_N edge when that class is
  /// the argmax and its probability reaches tau_ddi. Existing edges pass
  /// through untouched.
  RefinedGraph refine_graph(const HetGraph& g, const Mat& X,
                            const std::optional<std::vector<Edge>>& candidates = std::nullopt,
                            RefineReport* report = nullptr) {
    RefinedGraph refined(g);
    RefineReport local;
    if (config_.variant == Variant::NoPredictive) {
      if (report) *report = local;
      return refined;
    }
    const auto pairs = candidates ? *candidates : candidate_pairs(g, X);
    std::vector<NodeIndex> dti_a, dti_b, ddi_a, ddi_b;
    for (auto [u, v] : pairs) {
      const auto ku = g.kind(u), kv = g.kind(v);
      if (ku == EntityKind::Protein && kv == EntityKind::Drug) std::swap(u, v);
      const auto a = g.kind(u), b = g.kind(v);
      if (u == v || base_connected(g, u, v)) continue;
      if (a == EntityKind::Drug && b == EntityKind::Protein) {
        dti_a.push_back(u);
        dti_b.push_back(v);
      } else if (a == EntityKind::Drug && b == EntityKind::Drug) {
        ddi_a.push_back(std::min(u, v));
        ddi_b.push_back(std::max(u, v));
      }
    }
    local.dti_candidates = dti_a.size();
    local.ddi_candidates = ddi_a.size();
    if (!dti_a.empty()) {
      const auto p = dti_.predict(feature_rows<S>(g, dti_a), feature_rows<S>(g, dti_b));
      for (std::size_t i = 0; i < dti_a.size(); ++i) {
        if (static_cast<double>(p(static_cast<Eigen::Index>(i), 0)) >= config_.tau_dti &&
            refined.add_pseudo(EdgeType::DTI, dti_a[i], dti_b[i])) {
          ++local.added_dti;
        }
      }
    }
    if (!ddi_a.empty()) {
      const auto p = ddi_.predict(feature_rows<S>(g, ddi_a), feature_rows<S>(g, ddi_b));
      for (std::size_t i = 0; i < ddi_a.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        int best = 0;
        for (int c = 1; c < 3; ++c) {
          if (p(r, c) > p(r, best)) best = c;
        }
        if (best == kDdiNoEdge || static_cast<double>(p(r, best)) < config_.tau_ddi) continue;
        const auto t = best == kDdiPositive ? EdgeType::DDI_P : EdgeType::DDI_N;
        if (refined.add_pseudo(t, ddi_a[i], ddi_b[i])) {
          ++(best == kDdiPositive ? local.added_ddi_p : local.added_ddi_n);
        }
      }
    }
    if (report) *report = local;
    return refined;
  }

  RefinedGraph refine_graph(const HetGraph& g, RefineReport* report = nullptr) {
    if (config_.variant == Variant::NoPredictive) return refine_graph(g, Mat{}, std::vector<Edge>{}, report);
    return refine_graph(g, project_features(g), std::nullopt, report);
  }

  /// B x N cell weights: row b holds the expression weights of the batch's
  /// cell line at its protein nodes, so weights · X* composes the cell vector.
  Mat cell_weights(const HetGraph& g, const CellProfiles& cells,
                   std::span<const SynergyTriple> batch) const {
    Mat w = Mat::Zero(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(g.node_count()));
    for (std::size_t b = 0; b < batch.size(); ++b) {
      auto it = cells.find(batch[b].cell_id);
      if (it == cells.end()) {
        throw Error(ErrorCode::UnknownCell, "gnn-core", "unknown cell line '" + batch[b].cell_id + "'");
      }
      if (it->second.weights.empty()) {
        throw Error(ErrorCode::EmptyProfile, "gnn-core", "cell line '" + batch[b].cell_id + "' has an empty profile");
      }
      for (const auto& [protein, weight] : it->second.weights) {
        const auto n = g.find(protein);
        if (!n || g.kind(*n) != EntityKind::Protein) {
          throw Error(ErrorCode::UnknownProteinInProfile, "gnn-core",
                      "cell line '" + batch[b].cell_id + "' references unknown protein '" + protein + "'");
        }
        w(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(*n)) += static_cast<S>(weight);
      }
    }
    return w;
  }

  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> drug_rows(
      const HetGraph& g, std::span<const SynergyTriple> batch) const {
    std::vector<std::size_t> a, b;
    auto lookup = [&](const std::string& id) {
      const auto n = g.find(id);
      if (!n || g.kind(*n) != EntityKind::Drug) {
        throw Error(ErrorCode::UnknownDrug, "gnn-core", "unknown drug '" + id + "'");
      }
      return static_cast<std::size_t>(*n);
    };
    for (const auto& tr : batch) {
      if (tr.drug_a == tr.drug_b) {
        throw Error(ErrorCode::InvalidArgument, "gnn-core", "triple repeats drug '" + tr.drug_a + "'");
      }
      a.push_back(lookup(tr.drug_a));
      b.push_back(lookup(tr.drug_b));
    }
    return {a, b};
  }

  /// B x 2 probabilities (antagonistic, synergistic) for a batch, with the
  /// refined neighborhoods held fixed.
  nn::Var forward_probs(nn::Tape<S>& t, const HetGraph& g, const CellProfiles& cells,
                        const GraphInputs<S>& in, const Neighborhoods& refined,
                        std::span<const SynergyTriple> batch, const nn::Dropout& dropout = {}) {
    const auto [rows_a, rows_b] = drug_rows(g, batch);
    const Mat weights = cell_weights(g, cells, batch);
    nn::Var x = project(t, in, dropout);
    nn::Var x1 = gat(t, 0, x, in.base);
    nn::Var x2 = gat(t, 1, x1, refined);
    nn::Var xs = gat(t, 2, x2, refined);
    nn::Var da = t.gather_rows(xs, rows_a);
    nn::Var db = t.gather_rows(xs, rows_b);
    nn::Var cell = t.left_matmul(weights, xs);
    nn::Var p = t.softmax_rows(head_.forward(t, t.concat_cols({da, db, cell}), dropout));
    if (!config_.symmetric) return p;
    nn::Var q = t.softmax_rows(head_.forward(t, t.concat_cols({db, da, cell}), dropout));
    return t.scale(t.add(p, q), S(0.5));
  }

  /// Mean two-class cross-entropy plus weighted predictor losses when joint
  /// fine-tuning is on and auxiliary pairs are given.
  nn::Var loss_on(nn::Tape<S>& t, const HetGraph& g, const CellProfiles& cells,
                  const GraphInputs<S>& in, const Neighborhoods& refined,
                  std::span<const SynergyTriple> batch, const nn::Dropout& dropout = {},
                  const AuxBatch* aux = nullptr) {
    if (batch.empty()) throw Error(ErrorCode::InvalidArgument, "gnn-core", "empty batch");
    std::vector<int> labels;
    for (const auto& tr : batch) {
      if (tr.label != 0 && tr.label != 1) {
        throw Error(ErrorCode::InvalidArgument, "gnn-core", "triple without a binary label");
      }
      labels.push_back(tr.label);
    }
    nn::Var loss = t.nll_probs(forward_probs(t, g, cells, in, refined, batch, dropout), labels, S(1e-7));
    if (aux && config_.joint_finetune && config_.variant == Variant::Full) {
      if (!aux->dti.empty() && config_.aux_dti_weight != 0.0) {
        loss = t.add(loss, t.scale(predictor_loss(t, dti_, g, aux->dti, dropout),
                                   static_cast<S>(config_.aux_dti_weight)));
      }
      if (!aux->ddi.empty() && config_.aux_ddi_weight != 0.0) {
        loss = t.add(loss, t.scale(predictor_loss(t, ddi_, g, aux->ddi, dropout),
                                   static_cast<S>(config_.aux_ddi_weight)));
      }
    }
    return loss;
  }

  /// Loss with the refinement recomputed from current parameters.
  double loss(const HetGraph& g, const CellProfiles& cells, std::span<const SynergyTriple> batch,
              const AuxBatch* aux = nullptr) {
    const auto in = prepare(g);
    const auto nb = message_passing_neighborhoods(refine_graph(g));
    nn::Tape<S> t(false);
    const double v = static_cast<double>(t.scalar(loss_on(t, g, cells, in, nb, batch, {}, aux)));
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteLoss, "gnn-core", "non-finite loss");
    return v;
  }

  Mat predict(const HetGraph& g, const CellProfiles& cells, std::span<const SynergyTriple> batch,
              RefineReport* report = nullptr) {
    return predict_refined(g, cells, batch, refine_graph(g, report));
  }

  Mat predict_refined(const HetGraph& g, const CellProfiles& cells,
                      std::span<const SynergyTriple> batch, const RefinedGraph& refined) {
    const auto in = prepare(g);
    const auto nb = message_passing_neighborhoods(refined);
    nn::Tape<S> t(false);
    return t.value(forward_probs(t, g, cells, in, nb, batch));
  }

  std::array<S, 2> forward_synergy(const HetGraph& g, const CellProfiles& cells,
                                   const SynergyTriple& triple) {
    const auto p = predict(g, cells, std::span<const SynergyTriple>(&triple, 1));
    return {p(0, 0), p(0, 1)};
  }

  Json metadata() const {
    Json m;
    m["format"] = "hetsyn-synergy-model";
    m["seed"] = seed_;
    m["config"] = to_json(config_);
    return m;
  }

  void save(const std::string& path) { save_checkpoint<S>(path, metadata(), parameters()); }

  static SynergyModel load(const std::string& path) {
    const auto file = read_checkpoint(path);
    if (file.meta.value("format", "") != "hetsyn-synergy-model") {
      throw Error(ErrorCode::FormatError, "gnn-core", path + " is not a synergy model checkpoint");
    }
    SynergyModel m(model_config_from(file.meta.at("config")), file.meta.at("seed").get<std::uint64_t>());
    restore_parameters<S>(file, m.parameters());
    return m;
  }

  /// Copies all parameter values from `other` (same architecture).
  void assign_from(SynergyModel& other) {
    auto mine = parameters();
    auto theirs = other.parameters();
    for (std::size_t i = 0; i < mine.size(); ++i) mine[i]->value = theirs[i]->value;
  }

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  std::array<nn::Mlp<S>, 3> projections_;
  std::array<GatLayer<S>, 3> layers_;
  nn::Mlp<S> head_;
  EdgePredictor<S> dti_;
  EdgePredictor<S> ddi_;
};

struct TrainOptions {
  std::size_t epochs = 100;
  double lr = 1e-4;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t refine_every = 1;
  std::size_t aux_negative_factor = 3;
};

struct TrainReport {
  std::vector<double> loss_curve;
  std::vector<std::size_t> pseudo_edges;  // per refinement
  std::optional<double> train_auroc;
  bool aux_dti = false;
  bool aux_ddi = false;
};

namespace detail {
inline std::optional<PairDataset> try_pair_dataset(const HetGraph& g, PredictorKind kind,
                                                   std::size_t factor, std::uint64_t seed) {
  const bool empty = kind == PredictorKind::DTI
                         ? g.edges(EdgeType::DTI).empty()
                         : g.edges(EdgeType::DDI_P).empty() && g.edges(EdgeType::DDI_N).empty();
  if (empty) return std::nullopt;
  try {
    return make_pair_dataset(g, kind, factor, seed);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InsufficientUniverse) return std::nullopt;
    throw;
  }
}

inline std::vector<LabeledPair> draw_pairs(const PairDataset& ds, std::size_t n, Rng& rng) {
  const std::size_t total = ds.positives.size() + ds.negatives.size();
  std::vector<LabeledPair> out;
  for (std::size_t i = 0; i < std::min(n, total); ++i) {
    const auto k = static_cast<std::size_t>(rng.index(total));
    out.push_back(k < ds.positives.size() ? ds.positives[k] : ds.negatives[k - ds.positives.size()]);
  }
  return out;
}
}  // namespace detail

/// Minimizes the synergy loss. The refined topology is recomputed every
/// `refine_every` epochs from the current predictors and held fixed in
/// between; predictors learn only through the auxiliary losses.
template <typename S>
TrainReport train(SynergyModel<S>& model, const HetGraph& g, const CellProfiles& cells,
                  std::span<const SynergyTriple> data, const TrainOptions& opts) {
  if (data.empty()) throw Error(ErrorCode::InvalidArgument, "gnn-core", "empty training set");
  TrainReport report;
  const auto& cfg = model.config();
  const auto in = model.prepare(g);
  // Validate every triple up front so errors surface before any update.
  model.drug_rows(g, data);
  model.cell_weights(g, cells, data);
  if (opts.epochs == 0) return report;

  const bool full = cfg.variant == Variant::Full;
  std::optional<PairDataset> aux_dti, aux_ddi;
  if (full && cfg.joint_finetune) {
    if (cfg.aux_dti_weight != 0.0) {
      aux_dti = detail::try_pair_dataset(g, PredictorKind::DTI, opts.aux_negative_factor,
                                         derive_seed(opts.seed, "aux-dti"));
    }
    if (cfg.aux_ddi_weight != 0.0) {
      aux_ddi = detail::try_pair_dataset(g, PredictorKind::DDI, opts.aux_negative_factor,
                                         derive_seed(opts.seed, "aux-ddi"));
    }
  }
  report.aux_dti = aux_dti.has_value();
  report.aux_ddi = aux_ddi.has_value();

  auto params = model.parameters();
  nn::Adam<S> adam(params, {.lr = opts.lr});
  Rng rng(derive_seed(opts.seed, "train"));
  Rng drop_rng(derive_seed(opts.seed, "dropout"));
  const nn::Dropout dropout{&drop_rng, cfg.dropout, true};
  std::vector<SynergyTriple> order(data.begin(), data.end());
  std::unique_ptr<RefinedGraph> refined;
  Neighborhoods nb = in.base;
  const std::size_t every = std::max<std::size_t>(1, opts.refine_every);
  const std::size_t batch_size = std::max<std::size_t>(1, opts.batch_size);

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    if (full && epoch % every == 0) {
      RefineReport rr;
      refined = std::make_unique<RefinedGraph>(model.refine_graph(g, &rr));
      nb = message_passing_neighborhoods(*refined);
      report.pseudo_edges.push_back(rr.added());
    } else if (!full && epoch == 0) {
      report.pseudo_edges.push_back(0);
    }
    rng.shuffle(std::span<SynergyTriple>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const auto end = std::min(order.size(), start + batch_size);
      std::span<const SynergyTriple> batch(order.data() + start, end - start);
      std::vector<LabeledPair> dti_pairs, ddi_pairs;
      if (aux_dti) dti_pairs = detail::draw_pairs(*aux_dti, batch_size, rng);
      if (aux_ddi) ddi_pairs = detail::draw_pairs(*aux_ddi, batch_size, rng);
      const AuxBatch aux{dti_pairs, ddi_pairs};
      nn::Tape<S> t;
      nn::Var loss = model.loss_on(t, g, cells, in, nb, batch, dropout, &aux);
      const double lv = static_cast<double>(t.scalar(loss));
      if (!std::isfinite(lv)) {
        throw Error(ErrorCode::NonFiniteLoss, "gnn-core",
                    "non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                        std::to_string(start));
      }
      adam.zero_grad();
      t.backward(loss);
      adam.step();
      total += lv * static_cast<double>(batch.size());
    }
    report.loss_curve.push_back(total / static_cast<double>(order.size()));
  }

  const auto probs = model.predict(g, cells, data);
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    scores.push_back(static_cast<double>(probs(static_cast<Eigen::Index>(i), 1)));
    labels.push_back(data[i].label);
  }
  const auto [np, nn_] = detail::class_counts(labels);
  if (np > 0 && nn_ > 0) report.train_auroc = auroc(scores, labels);
  return report;
}

}  // namespace hetsyn
