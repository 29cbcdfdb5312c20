#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hetsyn/error.hpp"
#include "hetsyn/random.hpp"
#include "hetsyn/tsv.hpp"

namespace hetsyn {

struct ConfigKey {
  std::string_view key;
  std::string_view default_value;
  std::string_view help;
  bool published = false;  // value taken from the published model setup
};

// Every recognized key. Paths are relative to the working directory.
inline constexpr ConfigKey kConfigKeys[] = {
    {"entities", "", "entity table: id, kind, aliases, descriptor"},
    {"edges", "", "relation table: src, dst, type"},
    {"embeddings.drug", "", "drug embedding table: id, comma-separated values"},
    {"embeddings.protein", "", "protein embedding table"},
    {"embeddings.disease", "", "disease embedding table"},
    {"fingerprints", "", "drug fingerprints: id, hexbits (optional)"},
    {"expression", "", "cell line expression: cell_id, protein_id, weight"},
    {"triples", "", "labeled triples: drug_a, drug_b, cell_id, label|score"},
    {"heldout_triples", "", "held-out triples for self-training (else split from triples)"},
    {"scores", "", "evaluate input: score|p_synergistic and label columns"},
    {"queries", "", "infer input: drug_a, drug_b, cell_id"},
    {"query_embeddings", "", "embeddings for drugs absent from the graph"},
    {"query_fingerprints", "", "fingerprints for drugs absent from the graph"},
    {"model", "", "synergy model checkpoint to start from / infer with"},
    {"dti_checkpoint", "", "pretrained DTI predictor to load into the model"},
    {"ddi_checkpoint", "", "pretrained DDI predictor to load into the model"},
    {"run_root", "runs", "directory receiving run directories"},
    {"excluded_proteins", "", "comma-separated proteins dropped from expression profiles"},
    {"l1_normalize", "false", "rescale each expression profile to unit L1 mass"},
    {"binarize_at", "0", "score cut for raw-score triples: label = score > cut"},
    {"dim.drug", "2304", "drug embedding width", true},
    {"dim.protein", "768", "protein embedding width", true},
    {"dim.disease", "512", "disease embedding width", true},
    {"fingerprint_length", "2048", "fingerprint bit count"},
    {"width", "512", "common node width after projection", true},
    {"projection_hidden", "", "hidden widths of the per-kind projection MLPs"},
    {"gat_heads", "4,8,12", "attention heads of the three GAT layers", true},
    {"negative_slope", "0.2", "leaky slope inside GAT attention"},
    {"elu_alpha", "1.0", "ELU scale between GAT layers"},
    {"head_hidden", "3072,768,128", "synergy head hidden widths", true},
    {"predictor.encoder_blocks", "1", "attention blocks per predictor branch", true},
    {"predictor.encoder_heads", "8", "heads per branch block", true},
    {"predictor.joint_blocks", "2", "joint attention blocks", true},
    {"predictor.joint_heads", "12", "heads per joint block", true},
    {"predictor.ffn_ratio", "1", "feed-forward width as a multiple of block width"},
    {"predictor.mlp_hidden", "2048,256", "predictor head hidden widths", true},
    {"predictor.symmetric", "true", "average DDI logits over both drug orders"},
    {"negative_factor", "3", "sampled negatives per positive pair", true},
    {"pretrain_epochs", "50", "predictor pretraining epochs"},
    {"pretrain_holdout", "0.2", "held-out fraction of predictor pairs"},
    {"resample_negatives", "false", "draw fresh negatives every pretraining epoch"},
    {"dist_threshold", "90", "drug similarity: embedding distance below this", true},
    {"tanimoto_threshold", "0.62", "drug similarity: Tanimoto above this", true},
    {"distance_metric", "euclidean", "euclidean | cosine"},
    {"tau_dti", "0.5", "pseudo DTI edge threshold"},
    {"tau_ddi", "0.5", "pseudo DDI edge threshold"},
    {"conf_threshold", "0.8", "self-training pseudo-label confidence", true},
    {"epochs", "100", "synergy training epochs"},
    {"lr", "1e-4", "learning rate", true},
    {"dropout", "0.2", "dropout on MLP hidden layers", true},
    {"batch", "32", "training batch size"},
    {"seed", "0", "root seed for every random stream"},
    {"folds", "10", "cross-validation folds", true},
    {"candidate_k", "50", "refinement candidates per drug and kind"},
    {"exhaustive_candidates", "false", "score every drug-protein and drug-drug pair"},
    {"refine_every", "1", "epochs between graph refinements"},
    {"symmetric", "true", "average synergy outputs over both drug orders"},
    {"joint_finetune", "true", "add predictor losses while training the synergy model"},
    {"aux_dti_weight", "0.1", "weight of the DTI loss in joint training"},
    {"aux_ddi_weight", "0.1", "weight of the DDI loss in joint training"},
    {"max_rounds", "5", "self-training rounds"},
    {"min_gain", "0.002", "stop self-training below this held-out AUROC gain"},
    {"candidate_budget", "0", "candidate triples per self-training round (0: 3x labeled set)"},
    {"heldout_fraction", "0.2", "held-out share when heldout_triples is unset"},
    {"threshold", "0.5", "classification cutoff for thresholded metrics"},
    {"no_self_train", "false", "ablation: skip self-training rounds"},
    {"no_predictive", "false", "ablation: no predicted edges (refined graph = input graph)"},
    {"precision", "64", "floating point bits: 64 | 32"},
};

inline const ConfigKey* find_config_key(std::string_view key) {
  for (const auto& k : kConfigKeys) {
    if (k.key == key) return &k;
  }
  return nullptr;
}

/// Fully resolved configuration: defaults, then the config file, then
/// overrides. Unknown keys are rejected.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : kConfigKeys) values_[std::string(k.key)] = std::string(k.default_value);
  }

  void set(std::string_view key, std::string_view value, const std::string& where = "override") {
    if (!find_config_key(key)) {
      throw Error(ErrorCode::ConfigError, "cli", where + ": unknown key '" + std::string(key) + "'");
    }
    values_[std::string(key)] = std::string(tsv::trim(value));
  }

  /// `key=value` (surrounding spaces allowed).
  void apply_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::ConfigError, "cli", "override '" + std::string(assignment) + "' is not key=value");
    }
    set(trim_all(assignment.substr(0, eq)), trim_all(assignment.substr(eq + 1)));
  }

  /// Flat text: `key = value` lines, '#' comments, blank lines ignored.
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cli", "cannot open config " + path);
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      std::string_view body = line;
      if (auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
      body = trim_all(body);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      const std::string where = path + ":" + std::to_string(no);
      if (eq == std::string_view::npos) {
        throw Error(ErrorCode::ConfigError, "cli", where + ": expected 'key = value'");
      }
      set(trim_all(body.substr(0, eq)), trim_all(body.substr(eq + 1)), where);
    }
  }

  const std::string& str(std::string_view key) const {
    auto it = values_.find(std::string(key));
    if (it == values_.end()) {
      throw Error(ErrorCode::ConfigError, "cli", "unknown key '" + std::string(key) + "'");
    }
    return it->second;
  }

  double real(std::string_view key) const {
    const auto& v = str(key);
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad(key, "a number");
    return out;
  }

  std::uint64_t integer(std::string_view key) const {
    const auto& v = str(key);
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad(key, "a non-negative integer");
    return out;
  }

  bool boolean(std::string_view key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad(key, "true or false");
  }

  std::vector<std::size_t> sizes(std::string_view key) const {
    std::vector<std::size_t> out;
    const auto& v = str(key);
    if (tsv::trim(v).empty()) return out;
    for (auto tok : tsv::split(v, ',')) {
      tok = tsv::trim(tok);
      std::size_t x = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
      if (ec != std::errc() || p != tok.data() + tok.size() || tok.empty() || x == 0) {
        bad(key, "a comma-separated list of positive integers");
      }
      out.push_back(x);
    }
    return out;
  }

  std::vector<std::string> strings(std::string_view key) const {
    std::vector<std::string> out;
    for (auto tok : tsv::split(str(key), ',')) {
      tok = tsv::trim(tok);
      if (!tok.empty()) out.emplace_back(tok);
    }
    return out;
  }

  /// Range and type checks for every key.
  void validate() const {
    auto in_range = [&](std::string_view key, double lo, double hi, bool lo_open = false) {
      const double v = real(key);
      if (v > hi || v < lo || (lo_open && v == lo)) {
        bad(key, "in " + std::string(lo_open ? "(" : "[") + std::to_string(lo) + ", " +
                     std::to_string(hi) + "]");
      }
    };
    for (auto key : {"dim.drug", "dim.protein", "dim.disease", "fingerprint_length", "width",
                     "predictor.encoder_heads", "predictor.joint_heads", "predictor.ffn_ratio",
                     "negative_factor", "batch", "folds", "refine_every"}) {
      if (integer(key) == 0) bad(key, "positive");
    }
    for (auto key : {"predictor.encoder_blocks", "predictor.joint_blocks", "pretrain_epochs", "epochs",
                     "seed", "candidate_k", "max_rounds", "candidate_budget"}) {
      integer(key);
    }
    if (integer("folds") < 2) bad("folds", "at least 2");
    if (sizes("gat_heads").size() != 3) bad("gat_heads", "three head counts");
    sizes("projection_hidden");
    sizes("head_hidden");
    sizes("predictor.mlp_hidden");
    for (auto key : {"tanimoto_threshold", "tau_dti", "tau_ddi", "conf_threshold", "threshold"}) {
      in_range(key, 0.0, 1.0);
    }
    in_range("dropout", 0.0, 0.99);
    in_range("pretrain_holdout", 0.0, 0.9);
    in_range("heldout_fraction", 0.0, 0.9, true);
    in_range("lr", 0.0, 10.0, true);
    in_range("dist_threshold", 0.0, 1e300);
    in_range("negative_slope", 0.0, 1.0);
    in_range("elu_alpha", 0.0, 1e6);
    in_range("min_gain", -1.0, 1.0);
    in_range("aux_dti_weight", 0.0, 1e6);
    in_range("aux_ddi_weight", 0.0, 1e6);
    real("binarize_at");
    for (auto key : {"l1_normalize", "predictor.symmetric", "resample_negatives", "exhaustive_candidates",
                     "symmetric", "joint_finetune", "no_self_train", "no_predictive"}) {
      boolean(key);
    }
    const auto& metric = str("distance_metric");
    if (metric != "euclidean" && metric != "cosine") bad("distance_metric", "euclidean or cosine");
    const auto& prec = str("precision");
    if (prec != "64" && prec != "32") bad("precision", "64 or 32");
  }

  /// Canonical text: every key in sorted order, one `key = value` per line.
  std::string resolved_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  std::string hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(resolved_text())));
    return buf;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string_view trim_all(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  [[noreturn]] void bad(std::string_view key, const std::string& want) const {
    throw Error(ErrorCode::ConfigError, "cli",
                "key '" + std::string(key) + "' = '" + str(key) + "' must be " + want);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace hetsyn
