#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hetsyn/autograd.hpp"
#include "hetsyn/random.hpp"

namespace hetsyn::nn {

/// Dropout state for one forward pass; inactive unless `training`.
struct Dropout {
  Rng* rng = nullptr;
  double rate = 0.0;
  bool training = false;

  bool active() const { return training && rate > 0.0 && rng != nullptr; }

  template <typename S>
  Var apply(Tape<S>& tape, Var x) const {
    if (!active()) return x;
    const auto& v = tape.value(x);
    Matrix<S> m(v.rows(), v.cols());
    const S keep = S(1) / static_cast<S>(1.0 - rate);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = rng->bernoulli(1.0 - rate) ? keep : S(0);
    }
    return tape.mask(x, m);
  }
};

template <typename S>
Matrix<S> glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix<S> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.uniform(-limit, limit));
  return m;
}

template <typename S>
struct Linear {
  Parameter<S> weight;  // in x out
  Parameter<S> bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : weight(name + ".weight", glorot<S>(in, out, rng)),
        bias(name + ".bias", Matrix<S>::Zero(1, static_cast<Eigen::Index>(out))) {}

  std::size_t in() const { return static_cast<std::size_t>(weight.value.rows()); }
  std::size_t out() const { return static_cast<std::size_t>(weight.value.cols()); }

  Var forward(Tape<S>& t, Var x) { return t.add_bias(t.matmul(x, t.param(weight)), t.param(bias)); }

  void collect(ParameterList<S>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

/// Affine layers with ReLU (and optional dropout) between them; the last
/// layer is linear.
template <typename S>
struct Mlp {
  std::vector<Linear<S>> layers;

  Mlp() = default;
  Mlp(const std::string& name, std::size_t in, const std::vector<std::size_t>& hidden,
      std::size_t out, Rng& rng) {
    std::size_t prev = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      layers.emplace_back(name + "." + std::to_string(i), prev, hidden[i], rng);
      prev = hidden[i];
    }
    layers.emplace_back(name + "." + std::to_string(hidden.size()), prev, out, rng);
  }

  std::size_t in() const { return layers.front().in(); }
  std::size_t out() const { return layers.back().out(); }

  Var forward(Tape<S>& t, Var x, const Dropout& dropout = {}) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i].forward(t, x);
      if (i + 1 < layers.size()) x = dropout.apply(t, t.relu(x));
    }
    return x;
  }

  void collect(ParameterList<S>& out) {
    for (auto& l : layers) l.collect(out);
  }
};

template <typename S>
struct LayerNorm {
  Parameter<S> gain;
  Parameter<S> shift;

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t width)
      : gain(name + ".gain", Matrix<S>::Ones(1, static_cast<Eigen::Index>(width))),
        shift(name + ".shift", Matrix<S>::Zero(1, static_cast<Eigen::Index>(width))) {}

  Var forward(Tape<S>& t, Var x) { return t.layer_norm(x, t.param(gain), t.param(shift)); }

  void collect(ParameterList<S>& out) {
    out.push_back(&gain);
    out.push_back(&shift);
  }
};

/// Pre-norm transformer block over packed token sequences:
///   x += Wo · MHA(LN(x));  x += FFN(LN(x)).
template <typename S>
struct AttentionBlock {
  std::size_t heads = 1;
  LayerNorm<S> norm1;
  Linear<S> query, key, value, output;
  LayerNorm<S> norm2;
  Linear<S> ffn_in, ffn_out;

  AttentionBlock() = default;
  AttentionBlock(const std::string& name, std::size_t width, std::size_t head_count,
                 std::size_t ffn_width, Rng& rng)
      : heads(head_count),
        norm1(name + ".norm1", width),
        query(name + ".query", width, width, rng),
        key(name + ".key", width, width, rng),
        value(name + ".value", width, width, rng),
        output(name + ".output", width, width, rng),
        norm2(name + ".norm2", width),
        ffn_in(name + ".ffn_in", width, ffn_width, rng),
        ffn_out(name + ".ffn_out", ffn_width, width, rng) {
    if (head_count == 0 || width % head_count != 0) {
      throw Error(ErrorCode::DimMismatch, "edge-predictors",
                  "head count " + std::to_string(head_count) + " does not divide width " +
                      std::to_string(width));
    }
  }

  std::size_t width() const { return query.in(); }

  Var forward(Tape<S>& t, Var x, std::size_t tokens) {
    Var h = norm1.forward(t, x);
    Var att = t.attention(query.forward(t, h), key.forward(t, h), value.forward(t, h), tokens, heads);
    x = t.add(x, output.forward(t, att));
    Var f = ffn_out.forward(t, t.relu(ffn_in.forward(t, norm2.forward(t, x))));
    return t.add(x, f);
  }

  void collect(ParameterList<S>& out) {
    norm1.collect(out);
    query.collect(out);
    key.collect(out);
    value.collect(out);
    output.collect(out);
    norm2.collect(out);
    ffn_in.collect(out);
    ffn_out.collect(out);
  }
};

/// Adaptive-moment optimizer (Adam) over a fixed parameter list.
template <typename S>
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(ParameterList<S> params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      m_.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const S b1 = static_cast<S>(opts_.beta1), b2 = static_cast<S>(opts_.beta2);
    const S c1 = S(1) - static_cast<S>(std::pow(opts_.beta1, static_cast<double>(t_)));
    const S c2 = S(1) - static_cast<S>(std::pow(opts_.beta2, static_cast<double>(t_)));
    const S lr = static_cast<S>(opts_.lr), eps = static_cast<S>(opts_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      m_[i] = b1 * m_[i] + (S(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (S(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  void zero_grad() { zero_grads(params_); }

 private:
  ParameterList<S> params_;
  Options opts_;
  std::vector<Matrix<S>> m_, v_;
  long t_ = 0;
};

template <typename S>
std::size_t parameter_count(const ParameterList<S>& params) {
  std::size_t n = 0;
  for (auto* p : params) n += p->size();
  return n;
}

template <typename S>
bool all_finite(const ParameterList<S>& params) {
  for (auto* p : params) {
    if (!p->value.allFinite()) return false;
  }
  return true;
}

}  // namespace hetsyn::nn
