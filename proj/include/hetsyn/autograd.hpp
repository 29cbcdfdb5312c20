#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hetsyn/error.hpp"
#include "hetsyn/hetgraph.hpp"

namespace hetsyn::nn {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A trainable tensor with its accumulated gradient.
template <typename S>
struct Parameter {
  std::string name;
  Matrix<S> value;
  Matrix<S> grad;

  Parameter() = default;
  Parameter(std::string n, Matrix<S> v) : name(std::move(n)), value(std::move(v)) { zero_grad(); }

  void zero_grad() { grad = Matrix<S>::Zero(value.rows(), value.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
};

template <typename S>
using ParameterList = std::vector<Parameter<S>*>;

template <typename S>
void zero_grads(const ParameterList<S>& params) {
  for (auto* p : params) p->zero_grad();
}

enum class GatMode { Concat, Mean };

/// Attention coefficients recorded by a GAT op: weights[h][k] belongs to
/// head h and entry k of the neighborhood member list.
template <typename S>
struct GatTrace {
  std::vector<std::vector<S>> weights;
};

struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape. Every op appends a node holding its value and a closure
/// that pushes the node's gradient to its inputs. Parameters enter through
/// `param()` and receive their gradients in `backward()`.
template <typename S>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const Matrix<S>& value(Var v) const {
    const auto& n = nodes_[v.id];
    return n.ref ? *n.ref : n.own;
  }

  S scalar(Var v) const { return value(v)(0, 0); }

  Var constant(Matrix<S> m) { return push(std::move(m), false); }

  Var param(Parameter<S>& p) {
    Node n;
    n.ref = &p.value;
    n.param = &p;
    n.needs_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.cols() != B.rows()) shape_error("matmul", A, B);
    Var out = push(A * B, any(a, b));
    on_backward(out, [this, a, b, out] {
      const auto& G = grad(out);
      if (needs(a)) acc(a, G * value(b).transpose());
      if (needs(b)) acc(b, value(a).transpose() * G);
    });
    return out;
  }

  /// C * a for a constant left factor.
  Var left_matmul(const Matrix<S>& C, Var a) {
    const auto& A = value(a);
    if (C.cols() != A.rows()) shape_error("left_matmul", C, A);
    Var out = push(C * A, any(a));
    on_backward(out, [this, C, a, out] { acc(a, C.transpose() * grad(out)); });
    return out;
  }

  Var add(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("add", A, B);
    Var out = push(A + B, any(a, b));
    on_backward(out, [this, a, b, out] {
      if (needs(a)) acc(a, grad(out));
      if (needs(b)) acc(b, grad(out));
    });
    return out;
  }

  /// Adds a 1 x n row to every row of `a`.
  Var add_bias(Var a, Var bias) {
    const auto& A = value(a);
    const auto& B = value(bias);
    if (B.rows() != 1 || B.cols() != A.cols()) shape_error("add_bias", A, B);
    Matrix<S> out_v = A;
    out_v.rowwise() += B.row(0);
    Var out = push(std::move(out_v), any(a, bias));
    on_backward(out, [this, a, bias, out] {
      if (needs(a)) acc(a, grad(out));
      if (needs(bias)) acc(bias, grad(out).colwise().sum());
    });
    return out;
  }

  Var scale(Var a, S s) {
    Var out = push(value(a) * s, any(a));
    on_backward(out, [this, a, s, out] { acc(a, grad(out) * s); });
    return out;
  }

  /// Elementwise product with a constant mask (dropout).
  Var mask(Var a, const Matrix<S>& m) {
    Var out = push(value(a).cwiseProduct(m), any(a));
    on_backward(out, [this, a, m, out] { acc(a, grad(out).cwiseProduct(m)); });
    return out;
  }

  Var relu(Var a) {
    Matrix<S> v = value(a).cwiseMax(S(0));
    Var out = push(std::move(v), any(a));
    on_backward(out, [this, a, out] {
      const auto& x = value(a);
      acc(a, grad(out).cwiseProduct(x.unaryExpr([](S t) { return t > S(0) ? S(1) : S(0); })));
    });
    return out;
  }

  Var elu(Var a, S alpha = S(1)) {
    Matrix<S> v = value(a).unaryExpr(
        [alpha](S t) { return t > S(0) ? t : alpha * (std::exp(t) - S(1)); });
    Var out = push(std::move(v), any(a));
    on_backward(out, [this, a, alpha, out] {
      const auto& x = value(a);
      acc(a, grad(out).cwiseProduct(x.unaryExpr(
                 [alpha](S t) { return t > S(0) ? S(1) : alpha * std::exp(t); })));
    });
    return out;
  }

  Var concat_cols(const std::vector<Var>& parts) {
    Eigen::Index rows = value(parts.front()).rows(), cols = 0;
    bool ng = false;
    for (auto p : parts) {
      if (value(p).rows() != rows) shape_error("concat_cols", value(parts.front()), value(p));
      cols += value(p).cols();
      ng = ng || needs(p);
    }
    Matrix<S> v(rows, cols);
    Eigen::Index c = 0;
    for (auto p : parts) {
      v.middleCols(c, value(p).cols()) = value(p);
      c += value(p).cols();
    }
    Var out = push(std::move(v), ng);
    on_backward(out, [this, parts, out] {
      Eigen::Index c0 = 0;
      for (auto p : parts) {
        const auto w = value(p).cols();
        if (needs(p)) acc(p, grad(out).middleCols(c0, w));
        c0 += w;
      }
    });
    return out;
  }

  Var gather_rows(Var a, std::vector<std::size_t> rows) {
    const auto& A = value(a);
    Matrix<S> v(static_cast<Eigen::Index>(rows.size()), A.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (static_cast<Eigen::Index>(rows[i]) >= A.rows()) {
        throw Error(ErrorCode::IndexOutOfRange, "autograd", "gather_rows index out of range");
      }
      v.row(static_cast<Eigen::Index>(i)) = A.row(static_cast<Eigen::Index>(rows[i]));
    }
    Var out = push(std::move(v), any(a));
    on_backward(out, [this, a, rows = std::move(rows), out] {
      Matrix<S> g = Matrix<S>::Zero(value(a).rows(), value(a).cols());
      const auto& G = grad(out);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        g.row(static_cast<Eigen::Index>(rows[i])) += G.row(static_cast<Eigen::Index>(i));
      }
      acc(a, g);
    });
    return out;
  }

  /// Builds a `total_rows` matrix whose row positions[k][i] is row i of parts[k].
  Var scatter_rows(const std::vector<Var>& parts,
                   const std::vector<std::vector<std::size_t>>& positions,
                   std::size_t total_rows) {
    Eigen::Index cols = -1;
    bool ng = false;
    for (auto p : parts) {
      if (cols < 0) cols = value(p).cols();
      if (value(p).cols() != cols) shape_error("scatter_rows", value(parts.front()), value(p));
      ng = ng || needs(p);
    }
    Matrix<S> v = Matrix<S>::Zero(static_cast<Eigen::Index>(total_rows), std::max<Eigen::Index>(cols, 0));
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& P = value(parts[k]);
      for (std::size_t i = 0; i < positions[k].size(); ++i) {
        v.row(static_cast<Eigen::Index>(positions[k][i])) = P.row(static_cast<Eigen::Index>(i));
      }
    }
    Var out = push(std::move(v), ng);
    on_backward(out, [this, parts, positions, out] {
      const auto& G = grad(out);
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (!needs(parts[k])) continue;
        Matrix<S> g(static_cast<Eigen::Index>(positions[k].size()), G.cols());
        for (std::size_t i = 0; i < positions[k].size(); ++i) {
          g.row(static_cast<Eigen::Index>(i)) = G.row(static_cast<Eigen::Index>(positions[k][i]));
        }
        acc(parts[k], g);
      }
    });
    return out;
  }

  /// Row-wise layer normalization with learned gain and shift (1 x n each).
  Var layer_norm(Var x, Var gain, Var shift, S eps = S(1e-5)) {
    const auto& X = value(x);
    const auto n = X.cols();
    Matrix<S> xhat(X.rows(), n);
    Matrix<S> inv_std(X.rows(), 1);
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const S mu = X.row(r).mean();
      const S var = (X.row(r).array() - mu).square().mean();
      inv_std(r, 0) = S(1) / std::sqrt(var + eps);
      xhat.row(r) = (X.row(r).array() - mu) * inv_std(r, 0);
    }
    Matrix<S> y = xhat;
    y.array().rowwise() *= value(gain).row(0).array();
    y.rowwise() += value(shift).row(0);
    Var out = push(std::move(y), any(x, gain, shift));
    on_backward(out, [this, x, gain, shift, xhat, inv_std, out] {
      const auto& G = grad(out);
      if (needs(gain)) acc(gain, G.cwiseProduct(xhat).colwise().sum());
      if (needs(shift)) acc(shift, G.colwise().sum());
      if (needs(x)) {
        Matrix<S> dxhat = G;
        dxhat.array().rowwise() *= value(gain).row(0).array();
        Matrix<S> dx(G.rows(), G.cols());
        for (Eigen::Index r = 0; r < G.rows(); ++r) {
          const S m1 = dxhat.row(r).mean();
          const S m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
          dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r, 0);
        }
        acc(x, dx);
      }
    });
    return out;
  }

  /// Multi-head scaled dot-product attention over packed sequences: row
  /// b*tokens + t of q/k/v holds token t of sequence b.
  Var attention(Var q, Var k, Var v, std::size_t tokens, std::size_t heads) {
    const auto& Q = value(q);
    const auto& K = value(k);
    const auto& V = value(v);
    const auto d = static_cast<std::size_t>(Q.cols());
    if (heads == 0 || d % heads != 0) {
      throw Error(ErrorCode::DimMismatch, "autograd", "head count must divide model width");
    }
    if (tokens == 0 || static_cast<std::size_t>(Q.rows()) % tokens != 0) {
      throw Error(ErrorCode::DimMismatch, "autograd", "rows are not a multiple of tokens");
    }
    const std::size_t dh = d / heads;
    const std::size_t batch = static_cast<std::size_t>(Q.rows()) / tokens;
    const S inv = S(1) / std::sqrt(static_cast<S>(dh));
    std::vector<S> probs(batch * heads * tokens * tokens);
    Matrix<S> O = Matrix<S>::Zero(Q.rows(), Q.cols());
    auto P = [&probs, heads, tokens](std::size_t b, std::size_t h, std::size_t t,
                                     std::size_t s) -> S& {
      return probs[((b * heads + h) * tokens + t) * tokens + s];
    };
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h * dh);
        const auto w = static_cast<Eigen::Index>(dh);
        for (std::size_t t = 0; t < tokens; ++t) {
          const auto rt = static_cast<Eigen::Index>(b * tokens + t);
          S mx = -std::numeric_limits<S>::infinity();
          for (std::size_t s = 0; s < tokens; ++s) {
            const auto rs = static_cast<Eigen::Index>(b * tokens + s);
            P(b, h, t, s) = Q.row(rt).segment(c0, w).dot(K.row(rs).segment(c0, w)) * inv;
            mx = std::max(mx, P(b, h, t, s));
          }
          S z = 0;
          for (std::size_t s = 0; s < tokens; ++s) {
            P(b, h, t, s) = std::exp(P(b, h, t, s) - mx);
            z += P(b, h, t, s);
          }
          for (std::size_t s = 0; s < tokens; ++s) {
            P(b, h, t, s) /= z;
            const auto rs = static_cast<Eigen::Index>(b * tokens + s);
            O.row(rt).segment(c0, w) += P(b, h, t, s) * V.row(rs).segment(c0, w);
          }
        }
      }
    }
    Var out = push(std::move(O), any(q, k, v));
    on_backward(out, [this, q, k, v, tokens, heads, dh, batch, inv, probs, out] {
      const auto& G = grad(out);
      const auto& Qv = value(q);
      const auto& Kv = value(k);
      const auto& Vv = value(v);
      Matrix<S> dQ = Matrix<S>::Zero(Qv.rows(), Qv.cols());
      Matrix<S> dK = Matrix<S>::Zero(Kv.rows(), Kv.cols());
      Matrix<S> dV = Matrix<S>::Zero(Vv.rows(), Vv.cols());
      std::vector<S> dp(tokens);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
          const auto c0 = static_cast<Eigen::Index>(h * dh);
          const auto w = static_cast<Eigen::Index>(dh);
          for (std::size_t t = 0; t < tokens; ++t) {
            const auto rt = static_cast<Eigen::Index>(b * tokens + t);
            const S* p = &probs[((b * heads + h) * tokens + t) * tokens];
            S dot = 0;
            for (std::size_t s = 0; s < tokens; ++s) {
              const auto rs = static_cast<Eigen::Index>(b * tokens + s);
              dV.row(rs).segment(c0, w) += p[s] * G.row(rt).segment(c0, w);
              dp[s] = G.row(rt).segment(c0, w).dot(Vv.row(rs).segment(c0, w));
              dot += dp[s] * p[s];
            }
            for (std::size_t s = 0; s < tokens; ++s) {
              const auto rs = static_cast<Eigen::Index>(b * tokens + s);
              const S ds = p[s] * (dp[s] - dot) * inv;
              dQ.row(rt).segment(c0, w) += ds * Kv.row(rs).segment(c0, w);
              dK.row(rs).segment(c0, w) += ds * Qv.row(rt).segment(c0, w);
            }
          }
        }
      }
      if (needs(q)) acc(q, dQ);
      if (needs(k)) acc(k, dK);
      if (needs(v)) acc(v, dV);
    });
    return out;
  }

  /// Graph attention aggregation. `h` holds the linearly transformed node
  /// features (N x heads*F); `att_dst`/`att_src` (heads x F) score the
  /// receiving and the sending node of each edge. For receiver i and member j
  /// of its neighborhood: e_ij = leaky(att_dst·h_i + att_src·h_j), weights are
  /// softmax over j, and the output is the weighted sum of h_j per head,
  /// concatenated or averaged across heads.
  Var gat(Var h, Var att_dst, Var att_src, const Neighborhoods& nb, std::size_t heads,
          S negative_slope, GatMode mode, GatTrace<S>* trace = nullptr) {
    const auto& H = value(h);
    const auto N = static_cast<std::size_t>(H.rows());
    if (nb.node_count() != N) {
      throw Error(ErrorCode::DimMismatch, "autograd", "neighborhoods do not match node count");
    }
    if (heads == 0 || static_cast<std::size_t>(H.cols()) % heads != 0) {
      throw Error(ErrorCode::DimMismatch, "autograd", "head count must divide feature width");
    }
    const std::size_t F = static_cast<std::size_t>(H.cols()) / heads;
    const auto& Ad = value(att_dst);
    const auto& As = value(att_src);
    if (static_cast<std::size_t>(Ad.rows()) != heads || static_cast<std::size_t>(Ad.cols()) != F ||
        static_cast<std::size_t>(As.rows()) != heads || static_cast<std::size_t>(As.cols()) != F) {
      throw Error(ErrorCode::DimMismatch, "autograd", "attention vectors have wrong shape");
    }
    const auto w = static_cast<Eigen::Index>(F);
    // Per-head receiver and sender scores.
    Matrix<S> sd(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(heads));
    Matrix<S> ss(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(heads));
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t k = 0; k < heads; ++k) {
        const auto seg = H.row(static_cast<Eigen::Index>(i)).segment(static_cast<Eigen::Index>(k * F), w);
        sd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = seg.dot(Ad.row(static_cast<Eigen::Index>(k)));
        ss(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = seg.dot(As.row(static_cast<Eigen::Index>(k)));
      }
    }
    const std::size_t E = nb.members.size();
    std::vector<S> alpha(heads * E);
    std::vector<S> pre(heads * E);
    const std::size_t out_cols = mode == GatMode::Concat ? heads * F : F;
    Matrix<S> O = Matrix<S>::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(out_cols));
    const S head_scale = mode == GatMode::Concat ? S(1) : S(1) / static_cast<S>(heads);
    for (std::size_t k = 0; k < heads; ++k) {
      const auto c0 = static_cast<Eigen::Index>(k * F);
      const auto oc = mode == GatMode::Concat ? c0 : 0;
      for (std::size_t i = 0; i < N; ++i) {
        S mx = -std::numeric_limits<S>::infinity();
        for (std::size_t e = nb.begin(i); e < nb.end(i); ++e) {
          const auto j = nb.members[e];
          const S z = sd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) +
                      ss(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
          pre[k * E + e] = z;
          const S lr = z > S(0) ? z : negative_slope * z;
          alpha[k * E + e] = lr;
          mx = std::max(mx, lr);
        }
        S total = 0;
        for (std::size_t e = nb.begin(i); e < nb.end(i); ++e) {
          alpha[k * E + e] = std::exp(alpha[k * E + e] - mx);
          total += alpha[k * E + e];
        }
        for (std::size_t e = nb.begin(i); e < nb.end(i); ++e) {
          alpha[k * E + e] /= total;
          O.row(static_cast<Eigen::Index>(i)).segment(oc, w) +=
              (head_scale * alpha[k * E + e]) *
              H.row(static_cast<Eigen::Index>(nb.members[e])).segment(c0, w);
        }
      }
    }
    if (trace) {
      trace->weights.assign(heads, std::vector<S>(E));
      for (std::size_t k = 0; k < heads; ++k) {
        std::copy(alpha.begin() + static_cast<std::ptrdiff_t>(k * E),
                  alpha.begin() + static_cast<std::ptrdiff_t>((k + 1) * E),
                  trace->weights[k].begin());
      }
    }
    Var out = push(std::move(O), any(h, att_dst, att_src));
    on_backward(out, [this, h, att_dst, att_src, nb, heads, F, negative_slope, mode,
                      head_scale, alpha = std::move(alpha), pre = std::move(pre), out] {
      const auto& G = grad(out);
      const auto& Hv = value(h);
      const auto& Adv = value(att_dst);
      const auto& Asv = value(att_src);
      const auto Nn = static_cast<std::size_t>(Hv.rows());
      const std::size_t Ee = nb.members.size();
      const auto wF = static_cast<Eigen::Index>(F);
      Matrix<S> dH = Matrix<S>::Zero(Hv.rows(), Hv.cols());
      Matrix<S> dAd = Matrix<S>::Zero(Adv.rows(), Adv.cols());
      Matrix<S> dAs = Matrix<S>::Zero(Asv.rows(), Asv.cols());
      std::vector<S> dalpha;
      for (std::size_t k = 0; k < heads; ++k) {
        const auto c0 = static_cast<Eigen::Index>(k * F);
        const auto oc = mode == GatMode::Concat ? c0 : 0;
        const auto kk = static_cast<Eigen::Index>(k);
        for (std::size_t i = 0; i < Nn; ++i) {
          const auto ii = static_cast<Eigen::Index>(i);
          const auto gi = G.row(ii).segment(oc, wF) * head_scale;
          const std::size_t b = nb.begin(i), e_end = nb.end(i);
          dalpha.assign(e_end - b, S(0));
          S dot = 0;
          for (std::size_t e = b; e < e_end; ++e) {
            const auto jj = static_cast<Eigen::Index>(nb.members[e]);
            const S a = alpha[k * Ee + e];
            dH.row(jj).segment(c0, wF) += a * gi;
            dalpha[e - b] = gi.dot(Hv.row(jj).segment(c0, wF));
            dot += a * dalpha[e - b];
          }
          S dsd = 0;
          for (std::size_t e = b; e < e_end; ++e) {
            const auto jj = static_cast<Eigen::Index>(nb.members[e]);
            const S a = alpha[k * Ee + e];
            const S de = a * (dalpha[e - b] - dot);
            const S dz = pre[k * Ee + e] > S(0) ? de : negative_slope * de;
            dsd += dz;
            // sender score of j
            dH.row(jj).segment(c0, wF) += dz * Asv.row(kk);
            dAs.row(kk) += dz * Hv.row(jj).segment(c0, wF);
          }
          dH.row(ii).segment(c0, wF) += dsd * Adv.row(kk);
          dAd.row(kk) += dsd * Hv.row(ii).segment(c0, wF);
        }
      }
      if (needs(h)) acc(h, dH);
      if (needs(att_dst)) acc(att_dst, dAd);
      if (needs(att_src)) acc(att_src, dAs);
    });
    return out;
  }

  Var softmax_rows(Var a) {
    Matrix<S> P = softmax_of(value(a));
    Var out = push(std::move(P), any(a));
    on_backward(out, [this, a, out] {
      const auto& Pv = value(out);
      const auto& G = grad(out);
      Matrix<S> d(G.rows(), G.cols());
      for (Eigen::Index r = 0; r < G.rows(); ++r) {
        const S dot = G.row(r).dot(Pv.row(r));
        d.row(r) = Pv.row(r).cwiseProduct((G.row(r).array() - dot).matrix());
      }
      acc(a, d);
    });
    return out;
  }

  /// Mean of -log(clip(p[b, label_b], eps, 1 - eps)) over rows of a
  /// probability matrix. Clipped entries pass no gradient.
  Var nll_probs(Var probs, const std::vector<int>& labels, S eps) {
    const auto& P = value(probs);
    check_labels(P, labels);
    const auto B = static_cast<S>(labels.size());
    S loss = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
      const S p = P(static_cast<Eigen::Index>(r), labels[r]);
      loss -= std::log(std::clamp(p, eps, S(1) - eps));
    }
    Var out = push(Matrix<S>::Constant(1, 1, loss / B), any(probs));
    on_backward(out, [this, probs, labels, eps, B, out] {
      const auto& Pv = value(probs);
      Matrix<S> d = Matrix<S>::Zero(Pv.rows(), Pv.cols());
      const S g = grad(out)(0, 0);
      for (std::size_t r = 0; r < labels.size(); ++r) {
        const S p = Pv(static_cast<Eigen::Index>(r), labels[r]);
        if (p > eps && p < S(1) - eps) d(static_cast<Eigen::Index>(r), labels[r]) = -g / (B * p);
      }
      acc(probs, d);
    });
    return out;
  }

  /// Mean categorical cross-entropy of row-wise logits against class labels.
  Var softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
    const auto& Z = value(logits);
    check_labels(Z, labels);
    Matrix<S> P = softmax_of(Z);
    const auto B = static_cast<S>(labels.size());
    S loss = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
      const auto rr = static_cast<Eigen::Index>(r);
      const S mx = Z.row(rr).maxCoeff();
      const S lse = mx + std::log((Z.row(rr).array() - mx).exp().sum());
      loss += lse - Z(rr, labels[r]);
    }
    Var out = push(Matrix<S>::Constant(1, 1, loss / B), any(logits));
    on_backward(out, [this, logits, labels, P, B, out] {
      Matrix<S> d = P;
      for (std::size_t r = 0; r < labels.size(); ++r) d(static_cast<Eigen::Index>(r), labels[r]) -= S(1);
      acc(logits, d * (grad(out)(0, 0) / B));
    });
    return out;
  }

  /// Mean binary cross-entropy of a B x 1 logit column against 0/1 labels.
  Var bce_with_logits(Var logits, const std::vector<int>& labels) {
    const auto& Z = value(logits);
    if (Z.cols() != 1 || static_cast<std::size_t>(Z.rows()) != labels.size() || labels.empty()) {
      throw Error(ErrorCode::DimMismatch, "autograd", "bce_with_logits expects B x 1 logits");
    }
    const auto B = static_cast<S>(labels.size());
    S loss = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
      const S z = Z(static_cast<Eigen::Index>(r), 0);
      loss += std::max(z, S(0)) - z * static_cast<S>(labels[r]) + std::log1p(std::exp(-std::abs(z)));
    }
    Var out = push(Matrix<S>::Constant(1, 1, loss / B), any(logits));
    on_backward(out, [this, logits, labels, B, out] {
      const auto& Zv = value(logits);
      Matrix<S> d(Zv.rows(), 1);
      for (std::size_t r = 0; r < labels.size(); ++r) {
        const S z = Zv(static_cast<Eigen::Index>(r), 0);
        d(static_cast<Eigen::Index>(r), 0) = (sigmoid(z) - static_cast<S>(labels[r])) / B;
      }
      acc(logits, d * grad(out)(0, 0));
    });
    return out;
  }

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable node;
  /// parameter gradients are added to `Parameter::grad`.
  void backward(Var root) {
    if (value(root).size() != 1) {
      throw Error(ErrorCode::InvalidArgument, "autograd", "backward needs a scalar root");
    }
    if (!nodes_[root.id].needs_grad) return;
    nodes_[root.id].grad = Matrix<S>::Ones(1, 1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward();
      if (n.param) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

  static S sigmoid(S z) {
    if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
    const S e = std::exp(z);
    return e / (S(1) + e);
  }

  static Matrix<S> softmax_of(const Matrix<S>& Z) {
    Matrix<S> P(Z.rows(), Z.cols());
    for (Eigen::Index r = 0; r < Z.rows(); ++r) {
      const S mx = Z.row(r).maxCoeff();
      P.row(r) = (Z.row(r).array() - mx).exp().matrix();
      P.row(r) /= P.row(r).sum();
    }
    return P;
  }

 private:
  struct Node {
    Matrix<S> own;
    const Matrix<S>* ref = nullptr;
    Matrix<S> grad;
    std::function<void()> backward;
    Parameter<S>* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Matrix<S> v, bool needs_grad) {
    Node n;
    n.own = std::move(v);
    n.needs_grad = needs_grad && grad_enabled_;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  template <typename Fn>
  void on_backward(Var out, Fn&& fn) {
    if (nodes_[out.id].needs_grad) nodes_[out.id].backward = std::forward<Fn>(fn);
  }

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  template <typename... Vs>
  bool any(Vs... vs) const {
    return (needs(vs) || ...);
  }

  const Matrix<S>& grad(Var v) const { return nodes_[v.id].grad; }

  template <typename Expr>
  void acc(Var v, const Expr& g) {
    auto& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  static void check_labels(const Matrix<S>& M, const std::vector<int>& labels) {
    if (labels.empty() || static_cast<std::size_t>(M.rows()) != labels.size()) {
      throw Error(ErrorCode::DimMismatch, "autograd", "label count does not match rows");
    }
    for (int l : labels) {
      if (l < 0 || l >= M.cols()) {
        throw Error(ErrorCode::InvalidArgument, "autograd", "label out of range");
      }
    }
  }

  [[noreturn]] static void shape_error(const char* op, const Matrix<S>& a, const Matrix<S>& b) {
    throw Error(ErrorCode::DimMismatch, "autograd",
                std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()) + " are incompatible");
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

}  // namespace hetsyn::nn
