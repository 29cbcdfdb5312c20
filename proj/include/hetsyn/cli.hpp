#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hetsyn/config.hpp"
#include "hetsyn/edge_predictors.hpp"
#include "hetsyn/entity_store.hpp"
#include "hetsyn/featurize.hpp"
#include "hetsyn/gnn.hpp"
#include "hetsyn/hetgraph.hpp"
#include "hetsyn/metrics.hpp"
#include "hetsyn/pipeline.hpp"

namespace hetsyn::cli {

namespace fs = std::filesystem;

inline constexpr const char* kCommands[] = {"ingest", "build-graph", "pretrain-dti", "pretrain-ddi", "train",
                                            "self-train", "infer", "evaluate", "cross-validate"};

/// Input paths each command needs; optional path keys are checked only when set.
inline std::vector<std::string> required_paths(const std::string& command) {
  const std::vector<std::string> graph = {"entities", "edges"};
  if (command == "ingest") return {"entities"};
  if (command == "build-graph" || command == "pretrain-dti" || command == "pretrain-ddi") return graph;
  if (command == "train" || command == "self-train" || command == "cross-validate") {
    return {"entities", "edges", "expression", "triples"};
  }
  if (command == "infer") return {"entities", "edges", "expression", "queries", "model"};
  if (command == "evaluate") return {"scores"};
  return {};
}

inline constexpr const char* kPathKeys[] = {
    "entities",        "edges",         "embeddings.drug", "embeddings.protein", "embeddings.disease",
    "fingerprints",    "expression",    "triples",         "heldout_triples",    "scores",
    "queries",         "query_embeddings", "query_fingerprints", "model", "dti_checkpoint",
    "ddi_checkpoint"};

inline void check_paths(const RunConfig& cfg, const std::string& command) {
  for (const auto& key : required_paths(command)) {
    if (cfg.str(key).empty()) {
      throw Error(ErrorCode::ConfigError, "cli", command + " needs '" + key + "'");
    }
  }
  for (const char* key : kPathKeys) {
    const auto& p = cfg.str(key);
    if (!p.empty() && !fs::exists(p)) {
      throw Error(ErrorCode::ConfigError, "cli", "'" + std::string(key) + "' path does not exist: " + p);
    }
  }
}

/// Lower-case kind name used in configuration keys and reports.
inline std::string kind_key(EntityKind kind) {
  std::string s(to_string(kind));
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cli", "cannot write " + path.string());
  out << text;
}

inline void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

inline KindDims dims_of(const RunConfig& cfg) {
  return {cfg.integer("dim.drug"), cfg.integer("dim.protein"), cfg.integer("dim.disease")};
}

inline SimilarityConfig similarity_of(const RunConfig& cfg) {
  return {cfg.real("dist_threshold"), cfg.real("tanimoto_threshold"),
          cfg.str("distance_metric") == "cosine" ? DistanceMetric::Cosine : DistanceMetric::Euclidean};
}

inline PredictorConfig predictor_of(const RunConfig& cfg, PredictorKind kind) {
  const auto dims = dims_of(cfg);
  PredictorConfig p;
  p.kind = kind;
  p.input_a = dims.drug;
  p.input_b = kind == PredictorKind::DTI ? dims.protein : dims.drug;
  p.encoder_blocks = cfg.integer("predictor.encoder_blocks");
  p.encoder_heads = cfg.integer("predictor.encoder_heads");
  p.joint_blocks = cfg.integer("predictor.joint_blocks");
  p.joint_heads = cfg.integer("predictor.joint_heads");
  p.ffn_ratio = cfg.integer("predictor.ffn_ratio");
  p.mlp_hidden = cfg.sizes("predictor.mlp_hidden");
  p.dropout = cfg.real("dropout");
  p.symmetric = cfg.boolean("predictor.symmetric");
  return p;
}

inline ModelConfig model_config_of(const RunConfig& cfg) {
  ModelConfig m;
  m.dims = dims_of(cfg);
  m.width = cfg.integer("width");
  m.projection_hidden = cfg.sizes("projection_hidden");
  const auto heads = cfg.sizes("gat_heads");
  m.gat_heads = {heads[0], heads[1], heads[2]};
  m.negative_slope = cfg.real("negative_slope");
  m.elu_alpha = cfg.real("elu_alpha");
  m.head_hidden = cfg.sizes("head_hidden");
  m.dropout = cfg.real("dropout");
  m.tau_dti = cfg.real("tau_dti");
  m.tau_ddi = cfg.real("tau_ddi");
  m.candidate_k = cfg.integer("candidate_k");
  m.exhaustive_candidates = cfg.boolean("exhaustive_candidates");
  m.symmetric = cfg.boolean("symmetric");
  m.variant = cfg.boolean("no_predictive") ? Variant::NoPredictive : Variant::Full;
  m.joint_finetune = cfg.boolean("joint_finetune") && m.variant == Variant::Full;
  m.aux_dti_weight = cfg.real("aux_dti_weight");
  m.aux_ddi_weight = cfg.real("aux_ddi_weight");
  m.dti = predictor_of(cfg, PredictorKind::DTI);
  m.ddi = predictor_of(cfg, PredictorKind::DDI);
  return m;
}

inline TrainOptions train_options_of(const RunConfig& cfg) {
  TrainOptions t;
  t.epochs = cfg.integer("epochs");
  t.lr = cfg.real("lr");
  t.batch_size = cfg.integer("batch");
  t.seed = derive_seed(cfg.integer("seed"), "train");
  t.refine_every = cfg.integer("refine_every");
  t.aux_negative_factor = cfg.integer("negative_factor");
  return t;
}

struct Corpus {
  EntityStore store;
  std::map<EntityKind, LoadReport> embeddings;
  std::size_t fingerprints = 0;
};

inline Corpus load_corpus(const RunConfig& cfg) {
  Corpus c{EntityStore({dims_of(cfg), cfg.integer("fingerprint_length")}), {}, 0};
  c.store.load_entities(cfg.str("entities"));
  for (auto kind : kAllKinds) {
    const auto& path = cfg.str("embeddings." + kind_key(kind));
    if (path.empty()) continue;
    LoadReport r;
    c.store.load_embedding_table(path, kind, &r);
    c.embeddings[kind] = r;
  }
  if (!cfg.str("fingerprints").empty()) {
    LoadReport r;
    c.store.load_fingerprints(cfg.str("fingerprints"), &r);
    c.fingerprints = r.attached;
  }
  c.store.freeze();
  return c;
}

struct GraphBundle {
  Corpus corpus;
  HetGraph graph;
  SimilarityReport similarity;
  std::size_t similarity_added = 0;
};

inline GraphBundle load_graph(const RunConfig& cfg) {
  GraphBundle b{load_corpus(cfg), {}, {}, 0};
  b.graph = build_graph(b.corpus.store, cfg.str("edges"));
  b.similarity_added = add_similarity_edges(b.graph, similarity_of(cfg), &b.similarity);
  return b;
}

inline CellProfiles load_cells(const RunConfig& cfg, const EntityStore& store) {
  ExpressionOptions opts;
  for (const auto& p : cfg.strings("excluded_proteins")) opts.excluded_proteins.insert(p);
  opts.l1_normalize = cfg.boolean("l1_normalize");
  return load_expression(cfg.str("expression"), store, opts);
}

inline std::vector<SynergyTriple> load_labeled(const RunConfig& cfg, const std::string& key,
                                               const EntityStore& store) {
  auto triples = load_triples(cfg.str(key), cfg.real("binarize_at"));
  canonicalize(triples, store);
  return triples;
}

template <typename S>
SynergyModel<S> fresh_model(const RunConfig& cfg) {
  SynergyModel<S> model(model_config_of(cfg), derive_seed(cfg.integer("seed"), "model"));
  for (auto [key, kind] : {std::pair{"dti_checkpoint", PredictorKind::DTI},
                           std::pair{"ddi_checkpoint", PredictorKind::DDI}}) {
    if (cfg.str(key).empty()) continue;
    auto loaded = EdgePredictor<S>::load(cfg.str(key));
    auto& slot = kind == PredictorKind::DTI ? model.dti() : model.ddi();
    if (to_json(loaded.config()) != to_json(slot.config())) {
      throw Error(ErrorCode::ConfigError, "cli",
                  std::string(key) + " architecture does not match the configured predictor");
    }
    slot = std::move(loaded);
  }
  return model;
}

template <typename S>
std::vector<PredictionRow> prediction_rows(SynergyModel<S>& model, const HetGraph& g, const CellProfiles& cells,
                                           std::span<const SynergyTriple> triples) {
  const auto p = model.predict(g, cells, triples);
  std::vector<PredictionRow> rows;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    rows.push_back({triples[i], static_cast<double>(p(r, 0)), static_cast<double>(p(r, 1)), "graph"});
  }
  return rows;
}

inline Json degree_json(const HetGraph& g) {
  Json j;
  const auto stats = degree_stats(g);
  for (auto t : kAllEdgeTypes) {
    const auto& s = stats[index_of(t)];
    j[std::string(to_string(t))] = {{"edges", s.edge_count}, {"mean_degree", s.mean_degree}, {"max_degree", s.max_degree}};
  }
  return j;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

template <typename S>
void execute(const std::string& command, const RunConfig& cfg, const fs::path& dir) {
  const std::uint64_t seed = cfg.integer("seed");

  if (command == "ingest") {
    const auto corpus = load_corpus(cfg);
    Json j;
    for (auto kind : kAllKinds) {
      Json k;
      k["entities"] = corpus.store.entities_of(kind).size();
      if (auto it = corpus.embeddings.find(kind); it != corpus.embeddings.end()) {
        k["embedding_rows"] = it->second.rows;
        k["embeddings_attached"] = it->second.attached;
        k["unknown_ids"] = it->second.unknown_ids;
      }
      j[kind_key(kind)] = k;
    }
    j["fingerprints_attached"] = corpus.fingerprints;
    j["empty_fingerprints"] = corpus.store.empty_fingerprint_count();
    if (!cfg.str("expression").empty()) j["cell_lines"] = load_cells(cfg, corpus.store).size();
    write_json(dir / "ingest_report.json", j);
    return;
  }

  if (command == "evaluate") {
    const auto data = load_scores(cfg.str("scores"));
    write_json(dir / "metrics.json", to_json(evaluate(data.scores, data.labels, cfg.real("threshold"))));
    return;
  }

  auto bundle = load_graph(cfg);
  const HetGraph& g = bundle.graph;

  if (command == "build-graph") {
    Json j;
    for (auto kind : kAllKinds) j["nodes"][kind_key(kind)] = g.nodes_of(kind).size();
    j["edges"] = degree_json(g);
    j["similarity_edges_added"] = bundle.similarity_added;
    j["similarity_pairs_evaluated"] = bundle.similarity.pairs_evaluated;
    j["similarity_pairs_distance_only"] = bundle.similarity.pairs_distance_only;
    j["graph_hash"] = hex64(g.hash());
    write_json(dir / "graph_report.json", j);
    return;
  }

  if (command == "pretrain-dti" || command == "pretrain-ddi") {
    const auto kind = command == "pretrain-dti" ? PredictorKind::DTI : PredictorKind::DDI;
    const std::string name = kind == PredictorKind::DTI ? "dti" : "ddi";
    EdgePredictor<S> p(predictor_of(cfg, kind), derive_seed(seed, name + "-init"));
    const auto data = make_pair_dataset(g, kind, cfg.integer("negative_factor"), derive_seed(seed, name + "-negatives"));
    PretrainOptions opts;
    opts.epochs = cfg.integer("pretrain_epochs");
    opts.lr = cfg.real("lr");
    opts.batch_size = cfg.integer("batch");
    opts.holdout_fraction = cfg.real("pretrain_holdout");
    opts.resample_negatives = cfg.boolean("resample_negatives");
    opts.seed = derive_seed(seed, name + "-pretrain");
    const auto report = pretrain_predictor(p, g, data, opts);
    p.save((dir / (name + ".ckpt")).string());
    Json j;
    j["kind"] = name;
    j["positives"] = data.positives.size();
    j["negatives"] = data.negatives.size();
    j["train_pairs"] = report.train_pairs;
    j["heldout_pairs"] = report.heldout_pairs;
    j["loss_curve"] = report.loss_curve;
    j["heldout_auroc"] = report.heldout_auroc ? Json(*report.heldout_auroc) : Json(nullptr);
    write_json(dir / "pretrain_report.json", j);
    return;
  }

  const auto cells = load_cells(cfg, bundle.corpus.store);

  if (command == "train") {
    const auto triples = load_labeled(cfg, "triples", bundle.corpus.store);
    auto model = cfg.str("model").empty() ? fresh_model<S>(cfg) : SynergyModel<S>::load(cfg.str("model"));
    const auto report = train(model, g, cells, triples, train_options_of(cfg));
    model.save((dir / "model.ckpt").string());
    const auto rows = prediction_rows(model, g, cells, triples);
    write_predictions((dir / "predictions.tsv").string(), rows);
    std::vector<double> scores;
    for (const auto& r : rows) scores.push_back(r.p_synergistic);
    write_json(dir / "metrics.json", to_json(evaluate(scores, labels_of(triples), cfg.real("threshold"))));
    Json j;
    j["loss_curve"] = report.loss_curve;
    j["pseudo_edges"] = report.pseudo_edges;
    j["train_auroc"] = report.train_auroc ? Json(*report.train_auroc) : Json(nullptr);
    j["aux_dti"] = report.aux_dti;
    j["aux_ddi"] = report.aux_ddi;
    write_json(dir / "train_report.json", j);
    return;
  }

  if (command == "cross-validate") {
    const auto triples = load_labeled(cfg, "triples", bundle.corpus.store);
    const ModelFactory<S> factory = [&](std::size_t) { return fresh_model<S>(cfg); };
    const auto report = cross_validate(factory, g, cells, triples, cfg.integer("folds"),
                                       derive_seed(seed, "cv"), train_options_of(cfg));
    Json j;
    j["folds"] = Json::array();
    for (const auto& f : report.folds) j["folds"].push_back(to_json(f));
    j["mean"] = to_json(report.mean);
    j["assignment"] = report.assignment;
    write_json(dir / "cv_report.json", j);
    write_json(dir / "metrics.json", to_json(report.mean));
    return;
  }

  if (command == "self-train") {
    auto triples = load_labeled(cfg, "triples", bundle.corpus.store);
    std::vector<SynergyTriple> train_set, heldout;
    if (!cfg.str("heldout_triples").empty()) {
      train_set = triples;
      heldout = load_labeled(cfg, "heldout_triples", bundle.corpus.store);
    } else {
      const auto n_hold = static_cast<std::size_t>(cfg.real("heldout_fraction") * static_cast<double>(triples.size()));
      std::vector<std::size_t> perm(triples.size());
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(derive_seed(seed, "heldout-split"));
      rng.shuffle(std::span<std::size_t>(perm));
      for (std::size_t p = 0; p < perm.size(); ++p) (p < n_hold ? heldout : train_set).push_back(triples[perm[p]]);
    }
    SynergyModel<S> model = cfg.str("model").empty() ? fresh_model<S>(cfg) : SynergyModel<S>::load(cfg.str("model"));
    if (cfg.str("model").empty()) train(model, g, cells, train_set, train_options_of(cfg));

    std::vector<std::string> cell_ids;
    for (const auto& [id, _] : cells) cell_ids.push_back(id);
    std::vector<SynergyTriple> known = train_set;
    known.insert(known.end(), heldout.begin(), heldout.end());
    const std::size_t budget = cfg.integer("candidate_budget") ? cfg.integer("candidate_budget") : 3 * train_set.size();
    SelfTrainOptions opts;
    opts.conf_threshold = cfg.real("conf_threshold");
    opts.max_rounds = cfg.boolean("no_self_train") ? 0 : cfg.integer("max_rounds");
    opts.min_gain = cfg.real("min_gain");
    opts.seed = derive_seed(seed, "self-train");
    opts.train = train_options_of(cfg);
    std::string lines;
    const auto result = self_train(model, g, cells, LabeledSet::original(train_set), heldout,
                                   random_candidates(g, cell_ids, known, budget, derive_seed(seed, "candidates")),
                                   opts, [&](const RoundReport& r) { lines += to_json(r).dump() + "\n"; });
    write_text(dir / "rounds.jsonl", lines);
    model.save((dir / "model.ckpt").string());
    std::vector<double> scores;
    for (const auto& r : prediction_rows(model, g, cells, heldout)) scores.push_back(r.p_synergistic);
    if (!heldout.empty()) {
      write_json(dir / "metrics.json", to_json(evaluate(scores, labels_of(heldout), cfg.real("threshold"))));
    }
    Json j;
    j["labeled"] = train_set.size();
    j["heldout"] = heldout.size();
    j["baseline_auroc"] = result.baseline_auroc ? Json(*result.baseline_auroc) : Json(nullptr);
    j["final_auroc"] = result.final_auroc ? Json(*result.final_auroc) : Json(nullptr);
    j["rounds"] = result.rounds.size();
    std::size_t pseudo = 0;
    for (bool b : result.labeled.pseudo) pseudo += b ? 1 : 0;
    j["pseudo_in_final_set"] = pseudo;
    write_json(dir / "self_train_report.json", j);
    return;
  }

  if (command == "infer") {
    auto model = SynergyModel<S>::load(cfg.str("model"));
    std::map<std::string, std::vector<double>> embeddings;
    std::map<std::string, Fingerprint> fingerprints;
    if (!cfg.str("query_embeddings").empty()) embeddings = load_vectors(cfg.str("query_embeddings"));
    if (!cfg.str("query_fingerprints").empty()) {
      fingerprints = load_hexbits(cfg.str("query_fingerprints"), cfg.integer("fingerprint_length"));
    }
    tsv::Reader reader(cfg.str("queries"), {"drug_a", "drug_b", "cell_id"});
    std::vector<PredictionRow> rows;
    std::vector<std::string> f;
    auto record = [&](const std::string& raw) {
      DrugRecord d;
      d.id = raw;
      if (auto h = bundle.corpus.store.find(raw)) d.id = bundle.corpus.store.entity(*h).id;
      if (!g.find(d.id)) {
        if (auto it = embeddings.find(raw); it != embeddings.end()) d.embedding = it->second;
        if (auto it = fingerprints.find(raw); it != fingerprints.end()) d.fingerprint = it->second;
      }
      return d;
    };
    while (reader.next(f)) {
      auto cell = cells.find(f[2]);
      if (cell == cells.end()) {
        throw Error(ErrorCode::UnknownCell, "pipeline", reader.where() + ": unknown cell line '" + f[2] + "'");
      }
      const auto a = record(f[0]), b = record(f[1]);
      const auto r = infer(model, g, a, b, cell->second, similarity_of(cfg));
      rows.push_back({{a.id, b.id, f[2], -1}, r.probs[0], r.probs[1], r.provenance()});
    }
    write_predictions((dir / "predictions.tsv").string(), rows);
    return;
  }

  throw Error(ErrorCode::ConfigError, "cli", "unknown command '" + command + "'");
}

inline std::string key_listing() {
  std::ostringstream os;
  os << "Configuration keys (key = default):\n";
  for (const auto& k : kConfigKeys) {
    os << "  " << k.key << " = " << (k.default_value.empty() ? "\"\"" : k.default_value) << "\n      "
       << k.help << (k.published ? " [published setting]" : "") << "\n";
  }
  return os.str();
}

inline std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

/// Parses arguments, resolves the configuration, creates the run directory
/// and executes one command. Returns the process exit status.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Drug-combination synergy prediction on a heterogeneous drug/protein/disease graph", "hetsyn"};
  app.require_subcommand(1);
  std::string config_path, run_root;
  std::vector<std::string> overrides;
  std::optional<double> binarize_at;
  for (const char* name : kCommands) {
    auto* sub = app.add_subcommand(name, std::string("run the ") + name + " stage");
    sub->add_option("-c,--config", config_path, "flat key = value configuration file");
    sub->add_option("--set", overrides, "override one key: --set key=value (repeatable)");
    sub->add_option("--binarize-at", binarize_at, "score cut for raw-score triples");
    sub->add_option("--run-root", run_root, "directory receiving run directories");
    sub->footer(key_listing());
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& o : overrides) cfg.apply_override(o);
    if (binarize_at) cfg.set("binarize_at", format_real(*binarize_at));
    if (!run_root.empty()) cfg.set("run_root", run_root);
    cfg.validate();
    check_paths(cfg, command);

    const fs::path dir = fs::path(cfg.str("run_root")) /
                         (command + "-" + cfg.hash_hex() + "-s" + cfg.str("seed"));
    fs::create_directories(dir);
    write_text(dir / "config.resolved", cfg.resolved_text());
    if (cfg.str("precision") == "32") {
      execute<float>(command, cfg, dir);
    } else {
      execute<double>(command, cfg, dir);
    }
    out << "run_dir=" << dir.string() << "\n";
    return 0;
  } catch (const Error& e) {
    err << "error module=" << e.module() << " code=" << to_string(e.code())
        << " message=" << one_line(e.what()) << "\n";
    return e.code() == ErrorCode::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error module=cli code=Internal message=" << one_line(e.what()) << "\n";
    return 1;
  }
}

}  // namespace hetsyn::cli
