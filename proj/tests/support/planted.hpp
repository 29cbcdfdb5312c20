#pragma once

// Seeded synthetic corpus whose synergy labels are the sign of a linear
// function of (drug_a + drug_b, raw cell embedding), kept away from the
// decision boundary by a margin.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "hetsyn/hetsyn.hpp"

namespace hetsyn::testing {

struct PlantedSpec {
  std::size_t drugs = 30;
  std::size_t proteins = 40;
  std::size_t diseases = 5;
  std::size_t cells = 6;
  std::size_t triples = 200;
  KindDims dims{16, 12, 8};
  std::size_t proteins_per_cell = 8;
  std::size_t dti_per_drug = 2;
  std::size_t ddi_pairs = 12;
  std::size_t ppi = 40;
  double margin = 0.3;  // in units of the score standard deviation
  std::uint64_t seed = 7;
};

struct PlantedCorpus {
  PlantedSpec spec;
  std::vector<std::string> drug_ids, protein_ids, disease_ids, cell_ids;
  std::map<std::string, std::vector<double>> embedding;
  std::vector<EdgeRecord> edges;
  CellProfiles cells;
  std::vector<SynergyTriple> triples;
  std::vector<double> w_drug, w_cell;
  double bias = 0.0;

  EntityStore store() const {
    EntityStore s({spec.dims, 2048});
    auto reg = [&](const std::vector<std::string>& ids, EntityKind kind) {
      for (const auto& id : ids) {
        s.register_entity(kind, id, {}, std::nullopt);
        s.attach_embedding(*s.find(id), {embedding.at(id)});
      }
    };
    reg(drug_ids, EntityKind::Drug);
    reg(protein_ids, EntityKind::Protein);
    reg(disease_ids, EntityKind::Disease);
    s.freeze();
    return s;
  }

  HetGraph graph() const { return build_graph(store(), edges); }

  std::vector<double> raw_cell(const std::string& cell_id) const {
    ProteinTable table;
    for (const auto& p : protein_ids) table[p] = embedding.at(p);
    return compose_cell_embedding(cells.at(cell_id), table).values;
  }

  /// Feature vector the labels are linear in: [e_a + e_b, raw cell].
  std::vector<double> features(const SynergyTriple& t) const {
    std::vector<double> f;
    const auto& a = embedding.at(t.drug_a);
    const auto& b = embedding.at(t.drug_b);
    for (std::size_t d = 0; d < a.size(); ++d) f.push_back(a[d] + b[d]);
    for (double v : raw_cell(t.cell_id)) f.push_back(v);
    return f;
  }

  double score(const SynergyTriple& t) const {
    const auto f = features(t);
    double s = bias;
    for (std::size_t d = 0; d < w_drug.size(); ++d) s += w_drug[d] * f[d];
    for (std::size_t d = 0; d < w_cell.size(); ++d) s += w_cell[d] * f[w_drug.size() + d];
    return s;
  }

  void write_files(const std::filesystem::path& dir) const;
};

inline PlantedCorpus make_planted(const PlantedSpec& spec = {}) {
  PlantedCorpus c;
  c.spec = spec;
  Rng rng(spec.seed);
  auto make = [&](const std::string& prefix, std::size_t n, std::size_t dim, std::vector<std::string>& ids) {
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back(prefix + std::to_string(i));
      std::vector<double> v(dim);
      for (auto& x : v) x = rng.normal();
      c.embedding[ids.back()] = std::move(v);
    }
  };
  make("D", spec.drugs, spec.dims.drug, c.drug_ids);
  make("P", spec.proteins, spec.dims.protein, c.protein_ids);
  make("S", spec.diseases, spec.dims.disease, c.disease_ids);

  std::set<std::tuple<std::string, std::string, EdgeType>> seen;
  auto edge = [&](const std::string& a, const std::string& b, EdgeType t) {
    if (a == b) return;
    auto key = is_symmetric(t) ? std::tuple{std::min(a, b), std::max(a, b), t} : std::tuple{a, b, t};
    if (seen.insert(key).second) c.edges.push_back({a, b, t});
  };
  for (const auto& d : c.drug_ids) {
    for (std::size_t k = 0; k < spec.dti_per_drug; ++k) {
      edge(d, c.protein_ids[rng.index(c.protein_ids.size())], EdgeType::DTI);
    }
  }
  for (std::size_t k = 0; k < spec.ddi_pairs; ++k) {
    const auto& a = c.drug_ids[rng.index(c.drug_ids.size())];
    const auto& b = c.drug_ids[rng.index(c.drug_ids.size())];
    bool taken = false;
    for (auto t : {EdgeType::DDI_P, EdgeType::DDI_N}) {
      taken = taken || seen.contains({std::min(a, b), std::max(a, b), t});
    }
    if (!taken) edge(a, b, k % 2 ? EdgeType::DDI_N : EdgeType::DDI_P);
  }
  for (std::size_t k = 0; k < spec.ppi; ++k) {
    edge(c.protein_ids[rng.index(c.protein_ids.size())], c.protein_ids[rng.index(c.protein_ids.size())],
         EdgeType::PPI);
  }
  for (std::size_t k = 0; k < spec.diseases * 3; ++k) {
    edge(c.protein_ids[rng.index(c.protein_ids.size())], c.disease_ids[rng.index(c.disease_ids.size())],
         EdgeType::ProteinDisease);
    edge(c.drug_ids[rng.index(c.drug_ids.size())], c.disease_ids[rng.index(c.disease_ids.size())],
         EdgeType::DrugDiseaseIndication);
  }
  if (spec.diseases > 1) edge(c.disease_ids[0], c.disease_ids[1], EdgeType::DiseaseDisease);

  for (std::size_t i = 0; i < spec.cells; ++i) {
    ExpressionProfile p;
    p.cell_id = "C" + std::to_string(i);
    std::vector<std::size_t> idx(spec.proteins);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t k = 0; k < spec.proteins_per_cell; ++k) {
      p.weights[c.protein_ids[idx[k]]] = rng.uniform(0.1, 1.0);
    }
    c.cell_ids.push_back(p.cell_id);
    c.cells[p.cell_id] = p;
  }

  c.w_drug.resize(spec.dims.drug);
  c.w_cell.resize(spec.dims.protein);
  for (auto& w : c.w_drug) w = rng.normal();
  for (auto& w : c.w_cell) w = rng.normal();

  std::vector<SynergyTriple> pool;
  for (std::size_t i = 0; i < c.drug_ids.size(); ++i) {
    for (std::size_t j = i + 1; j < c.drug_ids.size(); ++j) {
      for (const auto& cell : c.cell_ids) pool.push_back({c.drug_ids[i], c.drug_ids[j], cell, 0});
    }
  }
  std::vector<double> s;
  for (const auto& t : pool) s.push_back(c.score(t));
  std::vector<double> sorted = s;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  c.bias = -sorted[sorted.size() / 2];
  double var = 0.0;
  for (double v : s) var += (v + c.bias) * (v + c.bias);
  const double sd = std::sqrt(var / static_cast<double>(s.size()));

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  for (auto i : order) {
    if (c.triples.size() == spec.triples) break;
    const double v = s[i] + c.bias;
    if (std::abs(v) <= spec.margin * sd) continue;
    auto t = pool[i];
    t.label = v > 0 ? 1 : 0;
    if (rng.bernoulli(0.5)) std::swap(t.drug_a, t.drug_b);
    c.triples.push_back(t);
  }
  return c;
}

/// Logistic regression by full-batch gradient descent; returns training
/// accuracy. Used to confirm a labeling is linearly recoverable.
inline double logistic_fit_accuracy(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                    std::size_t iters = 5000, double lr = 0.5) {
  const std::size_t n = x.size(), d = x.front().size();
  std::vector<double> w(d + 1, 0.0);
  for (std::size_t it = 0; it < iters; ++it) {
    std::vector<double> g(d + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double z = w[d];
      for (std::size_t k = 0; k < d; ++k) z += w[k] * x[i][k];
      const double r = 1.0 / (1.0 + std::exp(-z)) - y[i];
      for (std::size_t k = 0; k < d; ++k) g[k] += r * x[i][k];
      g[d] += r;
    }
    for (std::size_t k = 0; k <= d; ++k) w[k] -= lr * g[k] / static_cast<double>(n);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double z = w[d];
    for (std::size_t k = 0; k < d; ++k) z += w[k] * x[i][k];
    correct += (z > 0) == (y[i] == 1) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

inline std::string join_values(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += format_real(v[i]);
  }
  return out;
}

inline void PlantedCorpus::write_files(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "entities.tsv");
    f << "id\tkind\taliases\tdescriptor\n";
    for (const auto& d : drug_ids) f << d << "\tdrug\t\t\n";
    for (const auto& p : protein_ids) f << p << "\tprotein\t\t\n";
    for (const auto& s : disease_ids) f << s << "\tdisease\t\t\n";
  }
  auto table = [&](const std::string& name, const std::vector<std::string>& ids) {
    std::ofstream f(dir / name);
    f << "id\tvalues\n";
    for (const auto& id : ids) f << id << "\t" << join_values(embedding.at(id)) << "\n";
  };
  table("drug_emb.tsv", drug_ids);
  table("protein_emb.tsv", protein_ids);
  table("disease_emb.tsv", disease_ids);
  {
    std::ofstream f(dir / "edges.tsv");
    f << "src\tdst\ttype\n";
    for (const auto& e : edges) f << e.src << "\t" << e.dst << "\t" << to_string(e.type) << "\n";
  }
  {
    std::ofstream f(dir / "expression.tsv");
    f << "cell_id\tprotein_id\tweight\n";
    for (const auto& [id, p] : cells) {
      for (const auto& [protein, w] : p.weights) f << id << "\t" << protein << "\t" << format_real(w) << "\n";
    }
  }
  {
    std::ofstream f(dir / "triples.tsv");
    f << "drug_a\tdrug_b\tcell_id\tlabel\n";
    for (const auto& t : triples) f << t.drug_a << "\t" << t.drug_b << "\t" << t.cell_id << "\t" << t.label << "\n";
  }
}

/// Desk-scale model configuration matching the planted corpus widths.
inline ModelConfig small_model_config(const KindDims& dims = {16, 12, 8}) {
  ModelConfig m;
  m.dims = dims;
  m.width = 16;
  m.gat_heads = {4, 8, 12};
  m.head_hidden = {32, 16};
  m.dropout = 0.0;
  m.candidate_k = 5;
  m.dti.encoder_heads = 2;
  m.dti.joint_heads = 2;
  m.dti.mlp_hidden = {16};
  m.ddi = m.dti;
  m.ddi.kind = PredictorKind::DDI;
  return m;
}

}  // namespace hetsyn::testing
