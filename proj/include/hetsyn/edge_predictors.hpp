#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hetsyn/autograd.hpp"
#include "hetsyn/checkpoint.hpp"
#include "hetsyn/error.hpp"
#include "hetsyn/hetgraph.hpp"
#include "hetsyn/metrics.hpp"
#include "hetsyn/nn.hpp"
#include "hetsyn/random.hpp"

namespace hetsyn {

enum class PredictorKind { DTI, DDI };

constexpr std::string_view to_string(PredictorKind k) { return k == PredictorKind::DTI ? "DTI" : "DDI"; }

/// DDI classes, in output order.
enum DdiClass : int { kDdiPositive = 0, kDdiNegative = 1, kDdiNoEdge = 2 };

struct PredictorConfig {
  PredictorKind kind = PredictorKind::DTI;
  std::size_t input_a = 2304;  // drug branch width
  std::size_t input_b = 768;   // protein (DTI) or drug (DDI) branch width
  std::size_t encoder_blocks = 1;
  std::size_t encoder_heads = 8;
  std::size_t joint_blocks = 2;
  std::size_t joint_heads = 12;
  std::size_t ffn_ratio = 1;
  std::vector<std::size_t> mlp_hidden = {2048, 256};
  double dropout = 0.2;
  bool symmetric = true;  // DDI: average logits over both input orders

  std::size_t out_dim() const { return kind == PredictorKind::DTI ? 1 : 3; }
  std::size_t joint_width() const { return input_a + input_b; }
};

inline Json to_json(const PredictorConfig& c) {
  Json m;
  m["kind"] = std::string(to_string(c.kind));
  m["input_a"] = c.input_a;
  m["input_b"] = c.input_b;
  m["encoder_blocks"] = c.encoder_blocks;
  m["encoder_heads"] = c.encoder_heads;
  m["joint_blocks"] = c.joint_blocks;
  m["joint_heads"] = c.joint_heads;
  m["ffn_ratio"] = c.ffn_ratio;
  m["mlp_hidden"] = c.mlp_hidden;
  m["dropout"] = c.dropout;
  m["symmetric"] = c.symmetric;
  return m;
}

inline PredictorConfig predictor_config_from(const Json& m) {
  PredictorConfig c;
  c.kind = m.at("kind") == "DTI" ? PredictorKind::DTI : PredictorKind::DDI;
  c.input_a = m.at("input_a");
  c.input_b = m.at("input_b");
  c.encoder_blocks = m.at("encoder_blocks");
  c.encoder_heads = m.at("encoder_heads");
  c.joint_blocks = m.at("joint_blocks");
  c.joint_heads = m.at("joint_heads");
  c.ffn_ratio = m.at("ffn_ratio");
  c.mlp_hidden = m.at("mlp_hidden").get<std::vector<std::size_t>>();
  c.dropout = m.at("dropout");
  c.symmetric = m.at("symmetric");
  return c;
}

/// Pair scorer. Each input embedding is one token: it runs through its
/// branch's attention stack, the two encodings are concatenated into a single
/// joint token, refined by the joint stack and classified by an MLP head.
template <typename S>
class EdgePredictor {
 public:
  using Mat = nn::Matrix<S>;

  EdgePredictor() = default;
  EdgePredictor(PredictorConfig config, std::uint64_t seed) : config_(std::move(config)) {
    if (config_.kind == PredictorKind::DDI && config_.input_a != config_.input_b) {
      throw Error(ErrorCode::DimMismatch, "edge-predictors", "DDI branches must share a width");
    }
    Rng rng(seed);
    const std::string p = config_.kind == PredictorKind::DTI ? "dti" : "ddi";
    for (std::size_t i = 0; i < config_.encoder_blocks; ++i) {
      encoder_a_.emplace_back(p + ".enc_a." + std::to_string(i), config_.input_a,
                              config_.encoder_heads, config_.input_a * config_.ffn_ratio, rng);
    }
    for (std::size_t i = 0; i < config_.encoder_blocks; ++i) {
      encoder_b_.emplace_back(p + ".enc_b." + std::to_string(i), config_.input_b,
                              config_.encoder_heads, config_.input_b * config_.ffn_ratio, rng);
    }
    const auto jw = config_.joint_width();
    for (std::size_t i = 0; i < config_.joint_blocks; ++i) {
      joint_.emplace_back(p + ".joint." + std::to_string(i), jw, config_.joint_heads,
                          jw * config_.ffn_ratio, rng);
    }
    head_ = nn::Mlp<S>(p + ".head", jw, config_.mlp_hidden, config_.out_dim(), rng);
  }

  const PredictorConfig& config() const { return config_; }
  PredictorKind kind() const { return config_.kind; }

  nn::ParameterList<S> parameters() {
    nn::ParameterList<S> out;
    for (auto& b : encoder_a_) b.collect(out);
    for (auto& b : encoder_b_) b.collect(out);
    for (auto& b : joint_) b.collect(out);
    head_.collect(out);
    return out;
  }

  /// Raw scores (B x out_dim) for a batch of input rows.
  nn::Var logits(nn::Tape<S>& t, nn::Var a, nn::Var b, const nn::Dropout& dropout = {}) {
    check_width(t.value(a).cols(), config_.input_a);
    check_width(t.value(b).cols(), config_.input_b);
    nn::Var z = one_order(t, a, b, dropout);
    if (config_.kind == PredictorKind::DDI && config_.symmetric) {
      z = t.scale(t.add(z, one_order(t, b, a, dropout)), S(0.5));
    }
    return z;
  }

  /// Batched probabilities: B x 1 sigmoid scores (DTI) or B x 3 softmax (DDI).
  Mat predict(const Mat& a, const Mat& b) {
    nn::Tape<S> t(false);
    const Mat& z = t.value(logits(t, t.constant(a), t.constant(b)));
    if (config_.kind == PredictorKind::DDI) return nn::Tape<S>::softmax_of(z);
    Mat out(z.rows(), 1);
    for (Eigen::Index r = 0; r < z.rows(); ++r) out(r, 0) = nn::Tape<S>::sigmoid(z(r, 0));
    return out;
  }

  S predict_dti(std::span<const double> drug, std::span<const double> protein) {
    require_kind(PredictorKind::DTI);
    return predict(row(drug), row(protein))(0, 0);
  }

  std::array<S, 3> predict_ddi(std::span<const double> drug_a, std::span<const double> drug_b) {
    require_kind(PredictorKind::DDI);
    const Mat p = predict(row(drug_a), row(drug_b));
    return {p(0, 0), p(0, 1), p(0, 2)};
  }

  Json metadata() const { return to_json(config_); }

  static PredictorConfig config_from(const Json& m) { return predictor_config_from(m); }

  void save(const std::string& path) {
    Json meta;
    meta["format"] = "hetsyn-edge-predictor";
    meta["predictor"] = metadata();
    save_checkpoint<S>(path, meta, parameters());
  }

  static EdgePredictor load(const std::string& path) {
    const auto file = read_checkpoint(path);
    if (file.meta.value("format", "") != "hetsyn-edge-predictor") {
      throw Error(ErrorCode::FormatError, "edge-predictors", path + " is not a predictor checkpoint");
    }
    EdgePredictor p(config_from(file.meta.at("predictor")), 0);
    restore_parameters<S>(file, p.parameters());
    return p;
  }

 private:
  nn::Var one_order(nn::Tape<S>& t, nn::Var a, nn::Var b, const nn::Dropout& dropout) {
    for (auto& blk : encoder_a_) a = blk.forward(t, a, 1);
    for (auto& blk : encoder_b_) b = blk.forward(t, b, 1);
    nn::Var x = t.concat_cols({a, b});
    for (auto& blk : joint_) x = blk.forward(t, x, 1);
    return head_.forward(t, x, dropout);
  }

  static Mat row(std::span<const double> v) {
    Mat m(1, static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = static_cast<S>(v[i]);
    return m;
  }

  void require_kind(PredictorKind k) const {
    if (config_.kind != k) {
      throw Error(ErrorCode::InvalidArgument, "edge-predictors",
                  "predictor is " + std::string(to_string(config_.kind)) + ", not " +
                      std::string(to_string(k)));
    }
  }

  static void check_width(Eigen::Index got, std::size_t want) {
    if (static_cast<std::size_t>(got) != want) {
      throw Error(ErrorCode::DimMismatch, "edge-predictors",
                  "input width " + std::to_string(got) + " != expected " + std::to_string(want));
    }
  }

  PredictorConfig config_;
  std::vector<nn::AttentionBlock<S>> encoder_a_, encoder_b_, joint_;
  nn::Mlp<S> head_;
};

/// Uniform sample, without replacement, of `factor * |positives|` pairs from
/// universe_a x universe_b minus the positives. With `unordered`, pairs are
/// (min, max) over one universe and self-pairs are excluded.
inline std::set<Edge> sample_negatives(const std::set<Edge>& positives,
                                       std::span<const NodeIndex> universe_a,
                                       std::span<const NodeIndex> universe_b, std::size_t factor,
                                       std::uint64_t seed, bool unordered = false) {
  if (factor < 1) {
    throw Error(ErrorCode::InvalidArgument, "edge-predictors", "negative factor must be >= 1");
  }
  auto canon = [unordered](NodeIndex u, NodeIndex v) {
    return unordered ? Edge{std::min(u, v), std::max(u, v)} : Edge{u, v};
  };
  std::set<Edge> pos;
  for (const auto& [u, v] : positives) pos.insert(canon(u, v));

  std::vector<NodeIndex> ua(universe_a.begin(), universe_a.end());
  std::vector<NodeIndex> ub(universe_b.begin(), universe_b.end());
  std::sort(ua.begin(), ua.end());
  ua.erase(std::unique(ua.begin(), ua.end()), ua.end());
  std::sort(ub.begin(), ub.end());
  ub.erase(std::unique(ub.begin(), ub.end()), ub.end());
  if (unordered) ub = ua;

  const std::set<NodeIndex> in_a(ua.begin(), ua.end()), in_b(ub.begin(), ub.end());
  std::size_t pos_inside = 0;
  for (const auto& [u, v] : pos) {
    if (unordered ? (in_a.contains(u) && in_a.contains(v) && u != v)
                  : (in_a.contains(u) && in_b.contains(v))) {
      ++pos_inside;
    }
  }
  const std::size_t total =
      unordered ? ua.size() * (ua.size() - (ua.empty() ? 0 : 1)) / 2 : ua.size() * ub.size();
  const std::size_t need = factor * positives.size();
  if (total - pos_inside < need) {
    throw Error(ErrorCode::InsufficientUniverse, "edge-predictors",
                "only " + std::to_string(total - pos_inside) + " candidate negatives for " +
                    std::to_string(need) + " requested");
  }

  Rng rng(seed);
  std::set<Edge> out;
  if (total <= 4 * need || total <= (std::size_t{1} << 20)) {
    std::vector<Edge> pool;
    pool.reserve(total - pos_inside);
    for (std::size_t i = 0; i < ua.size(); ++i) {
      for (std::size_t j = unordered ? i + 1 : 0; j < ub.size(); ++j) {
        const Edge e{ua[i], ub[j]};
        if (!pos.contains(e)) pool.push_back(e);
      }
    }
    for (std::size_t i = 0; i < need; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.index(pool.size() - i));
      std::swap(pool[i], pool[j]);
      out.insert(pool[i]);
    }
  } else {
    while (out.size() < need) {
      const auto u = ua[static_cast<std::size_t>(rng.index(ua.size()))];
      const auto v = ub[static_cast<std::size_t>(rng.index(ub.size()))];
      if (unordered && u == v) continue;
      const Edge e = canon(u, v);
      if (!pos.contains(e)) out.insert(e);
    }
  }
  return out;
}

struct LabeledPair {
  NodeIndex a = 0;
  NodeIndex b = 0;
  int label = 0;
};

/// Training pairs for one predictor. DTI labels: 1 interaction, 0 none. DDI
/// labels follow `DdiClass`.
struct PairDataset {
  PredictorKind kind = PredictorKind::DTI;
  std::vector<LabeledPair> positives;
  std::vector<LabeledPair> negatives;
  std::uint64_t seed = 0;
  std::size_t factor = 3;
};

/// Builds the pair dataset from the graph's DTI or DDI edges plus sampled
/// negatives.
inline PairDataset make_pair_dataset(const HetGraph& g, PredictorKind kind, std::size_t factor,
                                     std::uint64_t seed) {
  PairDataset ds;
  ds.kind = kind;
  ds.seed = seed;
  ds.factor = factor;
  std::set<Edge> pos;
  const auto drugs = g.nodes_of(EntityKind::Drug);
  if (kind == PredictorKind::DTI) {
    for (const auto& e : g.edges(EdgeType::DTI)) {
      pos.insert(e);
      ds.positives.push_back({e.first, e.second, 1});
    }
    const auto proteins = g.nodes_of(EntityKind::Protein);
    for (const auto& e : sample_negatives(pos, drugs, proteins, factor, seed)) {
      ds.negatives.push_back({e.first, e.second, 0});
    }
  } else {
    for (auto [t, label] : {std::pair{EdgeType::DDI_P, int{kDdiPositive}},
                            std::pair{EdgeType::DDI_N, int{kDdiNegative}}}) {
      for (const auto& [u, v] : g.edges(t)) {
        if (u < v && pos.emplace(u, v).second) ds.positives.push_back({u, v, label});
      }
    }
    for (const auto& e : sample_negatives(pos, drugs, drugs, factor, seed, true)) {
      ds.negatives.push_back({e.first, e.second, kDdiNoEdge});
    }
  }
  return ds;
}

template <typename S>
nn::Matrix<S> feature_rows(const HetGraph& g, std::span<const NodeIndex> nodes) {
  if (nodes.empty()) return {};
  const auto width = g.features(nodes.front()).size();
  nn::Matrix<S> m(static_cast<Eigen::Index>(nodes.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& f = g.features(nodes[i]);
    if (f.size() != width) {
      throw Error(ErrorCode::DimMismatch, "edge-predictors", "mixed feature widths in batch");
    }
    for (std::size_t d = 0; d < width; ++d) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = static_cast<S>(f[d]);
  }
  return m;
}

/// Mean loss of a predictor on a batch of labeled pairs, recorded on `t`.
template <typename S>
nn::Var predictor_loss(nn::Tape<S>& t, EdgePredictor<S>& p, const HetGraph& g,
                       std::span<const LabeledPair> batch, const nn::Dropout& dropout = {}) {
  std::vector<NodeIndex> as, bs;
  std::vector<int> labels;
  for (const auto& pr : batch) {
    as.push_back(pr.a);
    bs.push_back(pr.b);
    labels.push_back(pr.label);
  }
  nn::Var z = p.logits(t, t.constant(feature_rows<S>(g, as)), t.constant(feature_rows<S>(g, bs)),
                       dropout);
  return p.kind() == PredictorKind::DTI ? t.bce_with_logits(z, labels)
                                        : t.softmax_cross_entropy(z, labels);
}

/// Edge-existence scores for pairs: the DTI probability, or 1 - P(no edge)
/// for DDI.
template <typename S>
std::vector<double> edge_scores(EdgePredictor<S>& p, const HetGraph& g,
                                std::span<const LabeledPair> pairs) {
  std::vector<NodeIndex> as, bs;
  for (const auto& pr : pairs) {
    as.push_back(pr.a);
    bs.push_back(pr.b);
  }
  std::vector<double> out;
  if (pairs.empty()) return out;
  const auto probs = p.predict(feature_rows<S>(g, as), feature_rows<S>(g, bs));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    out.push_back(p.kind() == PredictorKind::DTI ? static_cast<double>(probs(r, 0))
                                                 : 1.0 - static_cast<double>(probs(r, kDdiNoEdge)));
  }
  return out;
}

struct PretrainOptions {
  std::size_t epochs = 50;
  double lr = 1e-4;
  std::size_t batch_size = 64;
  double holdout_fraction = 0.2;
  bool resample_negatives = false;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  std::vector<double> loss_curve;
  std::optional<double> heldout_auroc;
  std::size_t train_pairs = 0;
  std::size_t heldout_pairs = 0;
};

/// Gradient training on cross-entropy (binary for DTI, 3-class for DDI).
template <typename S>
PretrainReport pretrain_predictor(EdgePredictor<S>& p, const HetGraph& g, const PairDataset& data,
                                  const PretrainOptions& opts) {
  if (data.positives.empty()) {
    throw Error(ErrorCode::InvalidArgument, "edge-predictors", "empty pair dataset");
  }
  PretrainReport report;
  Rng split_rng(derive_seed(opts.seed, "pretrain-split"));
  std::vector<LabeledPair> pos = data.positives, neg = data.negatives;
  split_rng.shuffle(std::span<LabeledPair>(pos));
  split_rng.shuffle(std::span<LabeledPair>(neg));
  const auto hold = [&](std::size_t n) {
    return static_cast<std::size_t>(std::floor(opts.holdout_fraction * static_cast<double>(n)));
  };
  std::vector<LabeledPair> heldout(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(hold(pos.size())));
  heldout.insert(heldout.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(hold(neg.size())));
  std::vector<LabeledPair> train_pos(pos.begin() + static_cast<std::ptrdiff_t>(hold(pos.size())), pos.end());
  std::vector<LabeledPair> train_neg(neg.begin() + static_cast<std::ptrdiff_t>(hold(neg.size())), neg.end());
  report.heldout_pairs = heldout.size();
  report.train_pairs = train_pos.size() + train_neg.size();
  if (opts.epochs == 0) return report;

  auto params = p.parameters();
  nn::Adam<S> adam(params, {.lr = opts.lr});
  Rng rng(derive_seed(opts.seed, "pretrain"));
  nn::Dropout dropout{&rng, p.config().dropout, true};

  std::set<Edge> all_pos;
  for (const auto& pr : data.positives) all_pos.emplace(pr.a, pr.b);
  std::set<Edge> heldout_neg;
  for (const auto& pr : heldout) {
    if (pr.label == (data.kind == PredictorKind::DTI ? 0 : int{kDdiNoEdge})) heldout_neg.emplace(pr.a, pr.b);
  }

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    if (opts.resample_negatives && epoch > 0) {
      std::set<Edge> excluded = all_pos;
      excluded.insert(heldout_neg.begin(), heldout_neg.end());
      const bool ddi = data.kind == PredictorKind::DDI;
      const auto drugs = g.nodes_of(EntityKind::Drug);
      const auto others = ddi ? drugs : g.nodes_of(EntityKind::Protein);
      // Sample against the excluded set, then trim to the training size.
      auto fresh = sample_negatives(excluded, drugs, others, 1, derive_seed(opts.seed, "resample", epoch), ddi);
      train_neg.clear();
      for (const auto& e : fresh) {
        if (train_neg.size() >= data.factor * train_pos.size()) break;
        train_neg.push_back({e.first, e.second, ddi ? int{kDdiNoEdge} : 0});
      }
    }
    std::vector<LabeledPair> train = train_pos;
    train.insert(train.end(), train_neg.begin(), train_neg.end());
    rng.shuffle(std::span<LabeledPair>(train));
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < train.size(); start += opts.batch_size) {
      const auto end = std::min(train.size(), start + opts.batch_size);
      std::span<const LabeledPair> batch(train.data() + start, end - start);
      nn::Tape<S> t;
      nn::Var loss = predictor_loss(t, p, g, batch, dropout);
      const double lv = static_cast<double>(t.scalar(loss));
      if (!std::isfinite(lv)) {
        throw Error(ErrorCode::NonFiniteLoss, "edge-predictors",
                    "non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                        std::to_string(start));
      }
      adam.zero_grad();
      t.backward(loss);
      adam.step();
      total += lv * static_cast<double>(batch.size());
      seen += batch.size();
    }
    report.loss_curve.push_back(total / static_cast<double>(seen));
  }

  if (!heldout.empty()) {
    const auto scores = edge_scores(p, g, heldout);
    std::vector<int> labels;
    for (const auto& pr : heldout) {
      labels.push_back(data.kind == PredictorKind::DTI ? pr.label : (pr.label != kDdiNoEdge ? 1 : 0));
    }
    const auto [np, nn_] = detail::class_counts(labels);
    if (np > 0 && nn_ > 0) report.heldout_auroc = auroc(scores, labels);
  }
  return report;
}

}  // namespace hetsyn
