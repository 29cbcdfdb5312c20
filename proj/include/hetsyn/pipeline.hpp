#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "hetsyn/entity_store.hpp"
#include "hetsyn/error.hpp"
#include "hetsyn/featurize.hpp"
#include "hetsyn/gnn.hpp"
#include "hetsyn/hetgraph.hpp"
#include "hetsyn/metrics.hpp"
#include "hetsyn/random.hpp"
#include "hetsyn/tsv.hpp"

namespace hetsyn {

// ---------------------------------------------------------------------------
// Triples and score files

/// Reads `drug_a drug_b cell_id label`, or `drug_a drug_b cell_id score` when
/// `binarize_at` is given (label = score > cut).
inline std::vector<SynergyTriple> load_triples(const std::string& path,
                                               std::optional<double> binarize_at = std::nullopt) {
  const auto table = tsv::read_table(path);
  const std::vector<std::string> base = {"drug_a", "drug_b", "cell_id"};
  const bool scored = table.header.size() == 4 && table.header[3] == "score";
  const bool labeled = table.header.size() == 4 && table.header[3] == "label";
  if (!std::equal(base.begin(), base.end(), table.header.begin(),
                  table.header.begin() + std::min<std::ptrdiff_t>(3, std::ssize(table.header))) ||
      !(scored || labeled)) {
    throw Error(ErrorCode::ParseError, "pipeline",
                path + ":1: expected header 'drug_a\\tdrug_b\\tcell_id\\tlabel' or '...\\tscore'");
  }
  if (scored && !binarize_at) {
    throw Error(ErrorCode::ConfigError, "pipeline",
                path + " holds raw scores; a binarization cut is required");
  }
  std::vector<SynergyTriple> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& f = table.rows[r];
    SynergyTriple t{f[0], f[1], f[2], 0};
    if (scored) {
      t.label = tsv::parse_double(f[3], table.where(r)) > *binarize_at ? 1 : 0;
    } else if (f[3] == "0" || f[3] == "1") {
      t.label = f[3] == "1" ? 1 : 0;
    } else {
      throw Error(ErrorCode::ParseError, "pipeline", table.where(r) + ": label must be 0 or 1");
    }
    if (t.drug_a == t.drug_b) {
      throw Error(ErrorCode::ParseError, "pipeline", table.where(r) + ": drugs must differ");
    }
    out.push_back(std::move(t));
  }
  return out;
}

/// Maps drug ids (which may be aliases) to their canonical entity ids.
inline void canonicalize(std::vector<SynergyTriple>& triples, const EntityStore& store) {
  for (auto& t : triples) {
    for (auto* id : {&t.drug_a, &t.drug_b}) {
      if (auto h = store.find(*id)) *id = store.entity(*h).id;
    }
  }
}

struct ScoredLabels {
  std::vector<double> scores;
  std::vector<int> labels;
};

/// Reads a score file for evaluation: a `score` (or `p_synergistic`) column
/// and a 0/1 `label` column, any other columns ignored.
inline ScoredLabels load_scores(const std::string& path) {
  const auto table = tsv::read_table(path);
  auto sc = table.column("score");
  if (!sc) sc = table.column("p_synergistic");
  const auto lc = table.column("label");
  if (!sc || !lc) {
    throw Error(ErrorCode::ParseError, "pipeline",
                path + ":1: need a 'score' or 'p_synergistic' column and a 'label' column");
  }
  ScoredLabels out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out.scores.push_back(tsv::parse_double(table.rows[r][*sc], table.where(r)));
    const auto& l = table.rows[r][*lc];
    if (l != "0" && l != "1") {
      throw Error(ErrorCode::ParseError, "pipeline", table.where(r) + ": label must be 0 or 1");
    }
    out.labels.push_back(l == "1" ? 1 : 0);
  }
  return out;
}

struct PredictionRow {
  SynergyTriple triple;
  double p_antagonistic = 0.5;
  double p_synergistic = 0.5;
  std::string provenance = "graph";
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

/// `id values` rows with comma-separated values, as used for embedding
/// tables; no entity resolution.
inline std::map<std::string, std::vector<double>> load_vectors(const std::string& path) {
  tsv::Reader reader(path, {"id", "values"});
  std::map<std::string, std::vector<double>> out;
  std::vector<std::string> f;
  while (reader.next(f)) {
    std::vector<double> v;
    for (auto tok : tsv::split(f[1], ',')) v.push_back(tsv::parse_double(tok, reader.where()));
    out[f[0]] = std::move(v);
  }
  return out;
}

inline std::map<std::string, Fingerprint> load_hexbits(const std::string& path, std::size_t length) {
  tsv::Reader reader(path, {"id", "hexbits"});
  std::map<std::string, Fingerprint> out;
  std::vector<std::string> f;
  while (reader.next(f)) {
    try {
      out.emplace(f[0], Fingerprint::from_hex(tsv::trim(f[1]), length));
    } catch (const Error& e) {
      throw Error(e.code(), "pipeline", reader.where() + ": " + e.what());
    }
  }
  return out;
}

inline void write_predictions(const std::string& path, std::span<const PredictionRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "pipeline", "cannot write " + path);
  out << "drug_a\tdrug_b\tcell_id\tp_antagonistic\tp_synergistic\tpredicted_label\tprovenance\n";
  for (const auto& r : rows) {
    out << r.triple.drug_a << '\t' << r.triple.drug_b << '\t' << r.triple.cell_id << '\t'
        << format_real(r.p_antagonistic) << '\t' << format_real(r.p_synergistic) << '\t'
        << (r.p_synergistic >= r.p_antagonistic ? 1 : 0) << '\t' << r.provenance << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "pipeline", "short write to " + path);
}

inline Json to_json(const MetricsReport& m) {
  Json j;
  j["au_roc"] = m.au_roc ? Json(*m.au_roc) : Json(nullptr);
  j["au_prc"] = m.au_prc ? Json(*m.au_prc) : Json(nullptr);
  j["acc"] = m.acc;
  j["bacc"] = m.bacc;
  j["macro_precision"] = m.macro_precision;
  j["macro_f1"] = m.macro_f1;
  j["n"] = m.n;
  j["threshold"] = m.threshold;
  return j;
}

// ---------------------------------------------------------------------------
// Cross-validation

/// Fold of each sample: a seeded shuffle dealt round-robin, so fold sizes
/// differ by at most one.
inline std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw Error(ErrorCode::TooFewSamples, "pipeline", "need at least 2 folds");
  if (n < folds) {
    throw Error(ErrorCode::TooFewSamples, "pipeline",
                std::to_string(n) + " samples cannot fill " + std::to_string(folds) + " folds");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, "folds"));
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<std::size_t> fold(n);
  for (std::size_t p = 0; p < n; ++p) fold[perm[p]] = p % folds;
  return fold;
}

/// Mean of each metric over folds; ranking metrics average the folds where
/// they are defined.
inline MetricsReport mean_metrics(std::span<const MetricsReport> reports) {
  MetricsReport m;
  if (reports.empty()) return m;
  double roc = 0, prc = 0;
  std::size_t nroc = 0, nprc = 0;
  for (const auto& r : reports) {
    if (r.au_roc) roc += *r.au_roc, ++nroc;
    if (r.au_prc) prc += *r.au_prc, ++nprc;
    m.acc += r.acc;
    m.bacc += r.bacc;
    m.macro_precision += r.macro_precision;
    m.macro_f1 += r.macro_f1;
    m.n += r.n;
    m.threshold = r.threshold;
  }
  const auto k = static_cast<double>(reports.size());
  if (nroc) m.au_roc = roc / static_cast<double>(nroc);
  if (nprc) m.au_prc = prc / static_cast<double>(nprc);
  m.acc /= k;
  m.bacc /= k;
  m.macro_precision /= k;
  m.macro_f1 /= k;
  return m;
}

struct CvReport {
  std::vector<std::size_t> assignment;
  std::vector<MetricsReport> folds;
  MetricsReport mean;
};

template <typename S>
using ModelFactory = std::function<SynergyModel<S>(std::size_t fold)>;

template <typename S>
std::vector<double> synergy_scores(SynergyModel<S>& model, const HetGraph& g, const CellProfiles& cells,
                                   std::span<const SynergyTriple> triples) {
  const auto p = model.predict(g, cells, triples);
  std::vector<double> out;
  for (Eigen::Index r = 0; r < p.rows(); ++r) out.push_back(static_cast<double>(p(r, 1)));
  return out;
}

inline std::vector<int> labels_of(std::span<const SynergyTriple> triples) {
  std::vector<int> out;
  for (const auto& t : triples) out.push_back(t.label);
  return out;
}

template <typename S>
CvReport cross_validate(const ModelFactory<S>& factory, const HetGraph& g, const CellProfiles& cells,
                        std::span<const SynergyTriple> data, std::size_t folds, std::uint64_t seed,
                        const TrainOptions& train_opts) {
  CvReport report;
  report.assignment = fold_assignment(data.size(), folds, seed);
  for (std::size_t k = 0; k < folds; ++k) {
    std::vector<SynergyTriple> train_set, test_set;
    for (std::size_t i = 0; i < data.size(); ++i) {
      (report.assignment[i] == k ? test_set : train_set).push_back(data[i]);
    }
    auto model = factory(k);
    TrainOptions opts = train_opts;
    opts.seed = derive_seed(seed, "fold-train", k);
    train(model, g, cells, train_set, opts);
    report.folds.push_back(evaluate(synergy_scores(model, g, cells, test_set), labels_of(test_set)));
  }
  report.mean = mean_metrics(report.folds);
  return report;
}

// ---------------------------------------------------------------------------
// Self-training

struct LabeledSet {
  std::vector<SynergyTriple> triples;
  std::vector<bool> pseudo;
  std::vector<double> confidence;  // 1 for original triples

  static LabeledSet original(std::vector<SynergyTriple> s) {
    LabeledSet out;
    out.pseudo.assign(s.size(), false);
    out.confidence.assign(s.size(), 1.0);
    out.triples = std::move(s);
    return out;
  }
};

/// Candidate triples for one round (1-based).
using CandidateGenerator = std::function<std::vector<SynergyTriple>(std::size_t round)>;

inline CandidateGenerator fixed_candidates(std::vector<SynergyTriple> pool) {
  for (auto& t : pool) t.label = -1;
  return [pool = std::move(pool)](std::size_t) { return pool; };
}

/// Up to `budget` distinct unlabeled (drug, drug, cell) triples absent from
/// `exclude`, drawn uniformly under a per-round seed.
inline CandidateGenerator random_candidates(const HetGraph& g, std::vector<std::string> cell_ids,
                                            std::span<const SynergyTriple> exclude,
                                            std::size_t budget, std::uint64_t seed) {
  std::vector<std::string> drugs;
  for (auto n : g.nodes_of(EntityKind::Drug)) drugs.push_back(g.id(n));
  using Key = std::tuple<std::string, std::string, std::string>;
  std::set<Key> taken;
  for (const auto& t : exclude) {
    taken.emplace(std::min(t.drug_a, t.drug_b), std::max(t.drug_a, t.drug_b), t.cell_id);
  }
  return [drugs, cell_ids = std::move(cell_ids), taken, budget, seed](std::size_t round) {
    std::vector<SynergyTriple> out;
    const std::size_t nd = drugs.size();
    if (nd < 2 || cell_ids.empty()) return out;
    const std::size_t space = nd * (nd - 1) / 2 * cell_ids.size();
    const std::size_t want = std::min(budget, space - std::min(space, taken.size()));
    Rng rng(derive_seed(seed, "candidates", round));
    std::set<Key> seen;
    // Rejection sampling with a bounded number of draws; small spaces are
    // still covered because `want` never exceeds the free space.
    for (std::size_t draws = 0; out.size() < want && draws < 64 * (want + 1); ++draws) {
      auto i = static_cast<std::size_t>(rng.index(nd));
      auto j = static_cast<std::size_t>(rng.index(nd));
      if (i == j) continue;
      if (i > j) std::swap(i, j);
      const auto& c = cell_ids[static_cast<std::size_t>(rng.index(cell_ids.size()))];
      Key key{drugs[i], drugs[j], c};
      if (taken.contains(key) || !seen.insert(key).second) continue;
      out.push_back({drugs[i], drugs[j], c, -1});
    }
    return out;
  };
}

struct SelfTrainOptions {
  double conf_threshold = 0.8;
  std::size_t max_rounds = 5;
  double min_gain = 0.002;
  std::uint64_t seed = 0;
  TrainOptions train;
};

struct RoundReport {
  std::size_t round = 0;
  std::size_t n_pseudo = 0;
  double mean_confidence = 0.0;
  std::optional<double> heldout_auroc;
  bool reverted = false;
};

inline Json to_json(const RoundReport& r) {
  Json j;
  j["round"] = r.round;
  j["n_pseudo"] = r.n_pseudo;
  j["mean_confidence"] = r.mean_confidence;
  j["heldout_auroc"] = r.heldout_auroc ? Json(*r.heldout_auroc) : Json(nullptr);
  j["reverted"] = r.reverted;
  return j;
}

struct SelfTrainResult {
  std::optional<double> baseline_auroc;
  std::optional<double> final_auroc;
  std::vector<RoundReport> rounds;
  LabeledSet labeled;  // S' of the last accepted round
};

struct PseudoLabels {
  std::vector<SynergyTriple> triples;
  std::vector<double> confidence;
};

/// Candidates whose max-class probability exceeds the threshold, labeled by
/// argmax, keeping at most `cap` of the most confident.
inline PseudoLabels select_pseudo_labels(std::span<const SynergyTriple> candidates,
                                         std::span<const std::array<double, 2>> probs,
                                         double threshold, std::size_t cap) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (std::max(probs[i][0], probs[i][1]) > threshold) keep.push_back(i);
  }
  auto conf = [&](std::size_t i) { return std::max(probs[i][0], probs[i][1]); };
  std::stable_sort(keep.begin(), keep.end(),
                   [&](std::size_t a, std::size_t b) { return conf(a) > conf(b); });
  if (keep.size() > cap) keep.resize(cap);
  PseudoLabels out;
  for (auto i : keep) {
    SynergyTriple t = candidates[i];
    t.label = probs[i][1] > probs[i][0] ? 1 : 0;
    out.triples.push_back(std::move(t));
    out.confidence.push_back(conf(i));
  }
  return out;
}

template <typename S>
std::optional<double> heldout_auroc(SynergyModel<S>& model, const HetGraph& g, const CellProfiles& cells,
                                    std::span<const SynergyTriple> heldout) {
  if (heldout.empty()) return std::nullopt;
  const auto labels = labels_of(heldout);
  const auto [np, nn_] = detail::class_counts(labels);
  if (np == 0 || nn_ == 0) return std::nullopt;
  return auroc(synergy_scores(model, g, cells, heldout), labels);
}

template <typename S>
std::vector<nn::Matrix<S>> snapshot_parameters(SynergyModel<S>& model) {
  std::vector<nn::Matrix<S>> out;
  for (auto* p : model.parameters()) out.push_back(p->value);
  return out;
}

template <typename S>
void restore_parameters_from(SynergyModel<S>& model, const std::vector<nn::Matrix<S>>& snapshot) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snapshot[i];
}

/// Rounds of pseudo-labeling and retraining from the current parameters.
/// A round whose held-out AUROC regresses is rolled back; the loop stops when
/// the gain falls below `min_gain`, no pseudo labels qualify, or after
/// `max_rounds`.
template <typename S>
SelfTrainResult self_train(SynergyModel<S>& model, const HetGraph& g, const CellProfiles& cells,
                           const LabeledSet& original, std::span<const SynergyTriple> heldout,
                           const CandidateGenerator& space, const SelfTrainOptions& opts,
                           const std::function<void(const RoundReport&)>& on_round = {}) {
  SelfTrainResult result;
  result.labeled = original;
  result.baseline_auroc = heldout_auroc(model, g, cells, heldout);
  result.final_auroc = result.baseline_auroc;
  const std::size_t cap = original.triples.size();

  for (std::size_t round = 1; round <= opts.max_rounds; ++round) {
    RoundReport rr;
    rr.round = round;
    const auto candidates = space(round);
    std::vector<std::array<double, 2>> probs;
    if (!candidates.empty()) {
      const auto p = model.predict(g, cells, candidates);
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        probs.push_back({static_cast<double>(p(r, 0)), static_cast<double>(p(r, 1))});
      }
    }
    const auto pseudo = select_pseudo_labels(candidates, probs, opts.conf_threshold, cap);
    if (pseudo.triples.size() > cap) {
      throw Error(ErrorCode::InvalidArgument, "pipeline", "pseudo-label cap violated");
    }
    for (double c : pseudo.confidence) {
      if (!(c > opts.conf_threshold)) {
        throw Error(ErrorCode::InvalidArgument, "pipeline", "admitted a pseudo label at or below threshold");
      }
    }
    rr.n_pseudo = pseudo.triples.size();
    if (!pseudo.confidence.empty()) {
      rr.mean_confidence = std::accumulate(pseudo.confidence.begin(), pseudo.confidence.end(), 0.0) /
                           static_cast<double>(pseudo.confidence.size());
    }
    if (pseudo.triples.empty()) {
      rr.heldout_auroc = result.final_auroc;
      result.rounds.push_back(rr);
      if (on_round) on_round(rr);
      break;
    }

    LabeledSet next = original;
    next.triples.insert(next.triples.end(), pseudo.triples.begin(), pseudo.triples.end());
    next.pseudo.insert(next.pseudo.end(), pseudo.triples.size(), true);
    next.confidence.insert(next.confidence.end(), pseudo.confidence.begin(), pseudo.confidence.end());

    const auto snapshot = snapshot_parameters(model);
    TrainOptions topts = opts.train;
    topts.seed = derive_seed(opts.seed, "self-train", round);
    train(model, g, cells, next.triples, topts);
    rr.heldout_auroc = heldout_auroc(model, g, cells, heldout);

    const double before = result.final_auroc.value_or(0.0);
    const double after = rr.heldout_auroc.value_or(0.0);
    const double gain = after - before;
    if (gain < 0.0) {
      restore_parameters_from(model, snapshot);
      rr.reverted = true;
    } else {
      result.final_auroc = rr.heldout_auroc;
      result.labeled = std::move(next);
    }
    result.rounds.push_back(rr);
    if (on_round) on_round(rr);
    if (gain < opts.min_gain) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference

/// A drug as supplied at query time. Known ids use the graph's node; unknown
/// ones need an embedding (and optionally a fingerprint).
struct DrugRecord {
  std::string id;
  std::vector<double> embedding;
  std::optional<Fingerprint> fingerprint;
};

struct TransientEdge {
  EdgeType type;
  std::string a;
  std::string b;
};

struct InferenceResult {
  std::array<double, 2> probs{0.5, 0.5};  // (antagonistic, synergistic)
  std::vector<std::string> transient_nodes;
  std::vector<TransientEdge> transient_edges;

  std::string provenance() const {
    if (transient_nodes.empty()) return "graph";
    std::string out = "transient";
    for (const auto& n : transient_nodes) out += ":" + n;
    out += "|edges=" + std::to_string(transient_edges.size());
    for (const auto& e : transient_edges) {
      out += ";" + std::string(to_string(e.type)) + "(" + e.a + "," + e.b + ")";
    }
    return out;
  }
};

/// Scores a (drug, drug, cell profile) query. Drugs missing from `g` are
/// added to a private copy as transient nodes linked by drug similarity; the
/// usual refine-and-propagate path then runs on that copy, so `g` itself is
/// never modified.
template <typename S>
InferenceResult infer(SynergyModel<S>& model, const HetGraph& g, const DrugRecord& drug_a,
                      const DrugRecord& drug_b, const ExpressionProfile& cell,
                      const SimilarityConfig& similarity = {}) {
  for (const auto& [protein, w] : cell.weights) {
    const auto n = g.find(protein);
    if (!n || g.kind(*n) != EntityKind::Protein) {
      throw Error(ErrorCode::UnknownProteinInProfile, "pipeline",
                  "cell line '" + cell.cell_id + "' references unknown protein '" + protein + "'");
    }
  }
  if (drug_a.id == drug_b.id) {
    throw Error(ErrorCode::InvalidArgument, "pipeline", "query repeats drug '" + drug_a.id + "'");
  }
  const CellProfiles cells{{cell.cell_id, cell}};
  const SynergyTriple triple{drug_a.id, drug_b.id, cell.cell_id, -1};
  InferenceResult result;

  std::vector<const DrugRecord*> unseen;
  for (const auto* d : {&drug_a, &drug_b}) {
    const auto n = g.find(d->id);
    if (n && g.kind(*n) == EntityKind::Drug) continue;
    if (n) {
      throw Error(ErrorCode::KindMismatch, "pipeline", "'" + d->id + "' is not a drug");
    }
    if (d->embedding.empty()) {
      throw Error(ErrorCode::MissingEmbedding, "pipeline", "unseen drug '" + d->id + "' has no embedding");
    }
    if (d->embedding.size() != model.config().dims.drug) {
      throw Error(ErrorCode::DimMismatch, "pipeline",
                  "unseen drug '" + d->id + "' embedding has width " + std::to_string(d->embedding.size()));
    }
    unseen.push_back(d);
  }

  if (unseen.empty()) {
    const auto p = model.forward_synergy(g, cells, triple);
    result.probs = {static_cast<double>(p[0]), static_cast<double>(p[1])};
    return result;
  }

  HetGraph local = g;
  const auto graph_drugs = g.nodes_of(EntityKind::Drug);
  std::vector<NodeIndex> added;
  for (const auto* d : unseen) {
    const auto n = local.add_node(d->id, EntityKind::Drug, d->embedding, d->fingerprint);
    const SimilarityInput self = similarity_input(local, n);
    std::vector<NodeIndex> pool = graph_drugs;
    pool.insert(pool.end(), added.begin(), added.end());
    for (auto other : pool) {
      if (is_similar(self, similarity_input(local, other), similarity) &&
          local.add_edge(EdgeType::DrugSimilarity, n, other)) {
        result.transient_edges.push_back({EdgeType::DrugSimilarity, d->id, local.id(other)});
      }
    }
    added.push_back(n);
    result.transient_nodes.push_back(d->id);
  }

  const auto refined = model.refine_graph(local);
  for (auto t : {EdgeType::DTI, EdgeType::DDI_P, EdgeType::DDI_N}) {
    for (const auto& [u, v] : refined.pseudo(t)) {
      const bool touches = std::find(added.begin(), added.end(), u) != added.end() ||
                           std::find(added.begin(), added.end(), v) != added.end();
      if (touches && (!is_symmetric(t) || u < v)) {
        result.transient_edges.push_back({t, local.id(u), local.id(v)});
      }
    }
  }
  const auto p = model.predict_refined(local, cells, std::span<const SynergyTriple>(&triple, 1), refined);
  result.probs = {static_cast<double>(p(0, 0)), static_cast<double>(p(0, 1))};
  return result;
}

}  // namespace hetsyn
