#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "airway/errors.hpp"
#include "airway/types.hpp"

namespace airway::ad {

// Reverse-mode automatic differentiation over dense Eigen matrices.
// A Tape owns the forward values; ops append nodes and backward closures.
// One tape per forward/backward pass; gradients of registered parameters are
// read back through the parameter registry in registration order.

template <typename S>
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename S>
class Tape {
 public:
  using Mat = Matrix<S>;

  struct ParamEntry {
    const Mat* source;
    int node;
    std::string name;
  };

  Var<S> constant(Mat value) { return push(std::move(value), false, {}); }

  /// Leaf with gradient, tracked in the parameter registry.
  Var<S> param(const Mat& source, std::string name) {
    Var<S> v = push(source, true, {});
    params_.push_back({&source, v.id, std::move(name)});
    return v;
  }

  const Mat& val(Var<S> v) const { return nodes_[v.id].value; }
  const Mat& grad(Var<S> v) const { return nodes_[v.id].grad; }
  const std::vector<ParamEntry>& params() const { return params_; }

  Var<S> matmul(Var<S> a, Var<S> b, bool ta = false, bool tb = false) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (ta && tb) throw ShapeMismatchError("matmul: double transpose unsupported");
    const Eigen::Index inner_a = ta ? A.rows() : A.cols();
    const Eigen::Index inner_b = tb ? B.cols() : B.rows();
    if (inner_a != inner_b)
      throw ShapeMismatchError("matmul: inner dimensions disagree (" +
                               std::to_string(inner_a) + " vs " +
                               std::to_string(inner_b) + ")");
    Mat value;
    if (ta)
      value.noalias() = A.transpose() * B;
    else if (tb)
      value.noalias() = A * B.transpose();
    else
      value.noalias() = A * B;
    return push(std::move(value), needs(a) || needs(b),
                [a, b, ta, tb](Tape& t, int self) {
                  const Mat& G = t.nodes_[self].grad;
                  const Mat& A = t.val(a);
                  const Mat& B = t.val(b);
                  if (t.needs(a)) {
                    if (ta)
                      t.gref(a).noalias() += B * G.transpose();
                    else if (tb)
                      t.gref(a).noalias() += G * B;
                    else
                      t.gref(a).noalias() += G * B.transpose();
                  }
                  if (t.needs(b)) {
                    if (ta)
                      t.gref(b).noalias() += A * G;
                    else if (tb)
                      t.gref(b).noalias() += G.transpose() * A;
                    else
                      t.gref(b).noalias() += A.transpose() * G;
                  }
                });
  }

  Var<S> add(Var<S> a, Var<S> b) {
    check_same_shape(a, b, "add");
    return push(val(a) + val(b), needs(a) || needs(b),
                [a, b](Tape& t, int self) {
                  const Mat& G = t.nodes_[self].grad;
                  if (t.needs(a)) t.gref(a) += G;
                  if (t.needs(b)) t.gref(b) += G;
                });
  }

  Var<S> sub(Var<S> a, Var<S> b) {
    check_same_shape(a, b, "sub");
    return push(val(a) - val(b), needs(a) || needs(b),
                [a, b](Tape& t, int self) {
                  const Mat& G = t.nodes_[self].grad;
                  if (t.needs(a)) t.gref(a) += G;
                  if (t.needs(b)) t.gref(b) -= G;
                });
  }

  /// Hadamard product.
  Var<S> cmul(Var<S> a, Var<S> b) {
    check_same_shape(a, b, "cmul");
    return push(val(a).cwiseProduct(val(b)), needs(a) || needs(b),
                [a, b](Tape& t, int self) {
                  const Mat& G = t.nodes_[self].grad;
                  if (t.needs(a)) t.gref(a) += G.cwiseProduct(t.val(b));
                  if (t.needs(b)) t.gref(b) += G.cwiseProduct(t.val(a));
                });
  }

  /// Hadamard product with a constant matrix.
  Var<S> cmul_const(Var<S> a, Mat c) {
    if (val(a).rows() != c.rows() || val(a).cols() != c.cols())
      throw ShapeMismatchError("cmul_const: shape mismatch");
    Mat value = val(a).cwiseProduct(c);
    return push(std::move(value), needs(a),
                [a, c = std::move(c)](Tape& t, int self) {
                  if (t.needs(a))
                    t.gref(a) += t.nodes_[self].grad.cwiseProduct(c);
                });
  }

  /// scale * X + shift, elementwise.
  Var<S> affine(Var<S> a, S scale, S shift) {
    Mat value = (val(a).array() * scale + shift).matrix();
    return push(std::move(value), needs(a), [a, scale](Tape& t, int self) {
      if (t.needs(a)) t.gref(a) += scale * t.nodes_[self].grad;
    });
  }

  Var<S> relu(Var<S> a) {
    Mat value = val(a).cwiseMax(S(0));
    return push(std::move(value), needs(a), [a](Tape& t, int self) {
      if (!t.needs(a)) return;
      const Mat& Y = t.nodes_[self].value;
      t.gref(a).array() +=
          t.nodes_[self].grad.array() * (Y.array() > S(0)).template cast<S>();
    });
  }

  Var<S> sigmoid(Var<S> a) {
    Mat value = val(a).unaryExpr([](S x) {
      return x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                       : std::exp(x) / (S(1) + std::exp(x));
    });
    return push(std::move(value), needs(a), [a](Tape& t, int self) {
      if (!t.needs(a)) return;
      const auto& Y = t.nodes_[self].value.array();
      t.gref(a).array() += t.nodes_[self].grad.array() * Y * (S(1) - Y);
    });
  }

  /// Elementwise 1/x for nonzero inputs.
  Var<S> recip_elem(Var<S> a) {
    Mat value = val(a).cwiseInverse();
    return push(std::move(value), needs(a), [a](Tape& t, int self) {
      if (!t.needs(a)) return;
      const auto& Y = t.nodes_[self].value.array();
      t.gref(a).array() -= t.nodes_[self].grad.array() * Y * Y;
    });
  }

  /// Elementwise x^alpha for strictly positive inputs.
  Var<S> pow_elem(Var<S> a, S alpha) {
    Mat value = val(a).array().pow(alpha).matrix();
    return push(std::move(value), needs(a), [a, alpha](Tape& t, int self) {
      if (!t.needs(a)) return;
      t.gref(a).array() += t.nodes_[self].grad.array() * alpha *
                           t.val(a).array().pow(alpha - S(1));
    });
  }

  Var<S> softmax_rows(Var<S> a) {
    const Mat& A = val(a);
    Mat value(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      const S m = A.row(i).maxCoeff();
      value.row(i) = (A.row(i).array() - m).exp();
      value.row(i) /= value.row(i).sum();
    }
    return push(std::move(value), needs(a), [a](Tape& t, int self) {
      if (!t.needs(a)) return;
      const Mat& Y = t.nodes_[self].value;
      const Mat& G = t.nodes_[self].grad;
      Mat& dA = t.gref(a);
      for (Eigen::Index i = 0; i < Y.rows(); ++i) {
        const S dot = G.row(i).cwiseProduct(Y.row(i)).sum();
        dA.row(i).array() += (G.row(i).array() - dot) * Y.row(i).array();
      }
    });
  }

  /// Row-wise normalization with learnable gain/offset (1 x d each).
  Var<S> layer_norm_rows(Var<S> x, Var<S> gain, Var<S> offset) {
    const Mat& X = val(x);
    const Eigen::Index d = X.cols();
    if (val(gain).rows() != 1 || val(gain).cols() != d || val(offset).rows() != 1 ||
        val(offset).cols() != d)
      throw ShapeMismatchError("layer_norm_rows: gain/offset must be 1 x d");
    constexpr S eps = S(1e-5);
    Mat xhat(X.rows(), d);
    Vector<S> inv_std(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const S mu = X.row(i).mean();
      const S var = (X.row(i).array() - mu).square().mean();
      inv_std(i) = S(1) / std::sqrt(var + eps);
      xhat.row(i) = (X.row(i).array() - mu) * inv_std(i);
    }
    Mat value(X.rows(), d);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      value.row(i) =
          xhat.row(i).cwiseProduct(val(gain).row(0)) + val(offset).row(0);
    return push(std::move(value), needs(x) || needs(gain) || needs(offset),
                [x, gain, offset, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Tape& t, int self) {
                  const Mat& G = t.nodes_[self].grad;
                  if (t.needs(gain))
                    t.gref(gain).row(0) += G.cwiseProduct(xhat).colwise().sum();
                  if (t.needs(offset)) t.gref(offset).row(0) += G.colwise().sum();
                  if (!t.needs(x)) return;
                  const auto g_row = t.val(gain).row(0).array();
                  Mat& dX = t.gref(x);
                  for (Eigen::Index i = 0; i < G.rows(); ++i) {
                    const Eigen::Array<S, 1, Eigen::Dynamic> dxhat =
                        G.row(i).array() * g_row;
                    const S mean_dxhat = dxhat.mean();
                    const S mean_dxhat_xhat =
                        (dxhat * xhat.row(i).array()).mean();
                    dX.row(i).array() +=
                        inv_std(i) * (dxhat - mean_dxhat -
                                      xhat.row(i).array() * mean_dxhat_xhat);
                  }
                });
  }

  /// X + b broadcast over rows (bias add), b is 1 x d.
  Var<S> add_row_broadcast(Var<S> x, Var<S> b) {
    if (val(b).rows() != 1 || val(b).cols() != val(x).cols())
      throw ShapeMismatchError("add_row_broadcast: bias must be 1 x cols(X)");
    Mat value = val(x).rowwise() + val(b).row(0);
    return push(std::move(value), needs(x) || needs(b),
                [x, b](Tape& t, int self) {
                  const Mat& G = t.nodes_[self].grad;
                  if (t.needs(x)) t.gref(x) += G;
                  if (t.needs(b)) t.gref(b).row(0) += G.colwise().sum();
                });
  }

  Var<S> concat_cols(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw ShapeMismatchError("concat_cols: empty");
    const Eigen::Index rows = val(parts[0]).rows();
    Eigen::Index cols = 0;
    bool any = false;
    for (Var<S> p : parts) {
      if (val(p).rows() != rows)
        throw ShapeMismatchError("concat_cols: row counts disagree");
      cols += val(p).cols();
      any = any || needs(p);
    }
    Mat value(rows, cols);
    Eigen::Index off = 0;
    for (Var<S> p : parts) {
      value.middleCols(off, val(p).cols()) = val(p);
      off += val(p).cols();
    }
    return push(std::move(value), any, [parts](Tape& t, int self) {
      const Mat& G = t.nodes_[self].grad;
      Eigen::Index off = 0;
      for (Var<S> p : parts) {
        const Eigen::Index w = t.val(p).cols();
        if (t.needs(p)) t.gref(p) += G.middleCols(off, w);
        off += w;
      }
    });
  }

  /// Codebook lookup: out(i,j) = codebook(row, idx(i,j)).
  Var<S> gather_row(Var<S> codebook, int row, const Eigen::MatrixXi& idx) {
    const Mat& CB = val(codebook);
    if (row < 0 || row >= CB.rows())
      throw ShapeMismatchError("gather_row: row out of range");
    Mat value(idx.rows(), idx.cols());
    for (Eigen::Index i = 0; i < idx.rows(); ++i)
      for (Eigen::Index j = 0; j < idx.cols(); ++j)
        value(i, j) = CB(row, idx(i, j));
    return push(std::move(value), needs(codebook),
                [codebook, row, idx](Tape& t, int self) {
                  if (!t.needs(codebook)) return;
                  const Mat& G = t.nodes_[self].grad;
                  Mat& dCB = t.gref(codebook);
                  for (Eigen::Index i = 0; i < idx.rows(); ++i)
                    for (Eigen::Index j = 0; j < idx.cols(); ++j)
                      dCB(row, idx(i, j)) += G(i, j);
                });
  }

  /// All ordered pairs, summed: out.row(i*rows(B)+j) = A.row(i) + B.row(j).
  /// Equivalent to concatenating [a_i; b_j] and multiplying a stacked weight
  /// matrix whose halves were already applied to A and B.
  Var<S> pairsum_rows(Var<S> a, Var<S> b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (A.cols() != B.cols())
      throw ShapeMismatchError("pairsum_rows: column counts disagree");
    const Eigen::Index n = A.rows(), m = B.rows(), d = A.cols();
    Mat value(n * m, d);
    for (Eigen::Index i = 0; i < n; ++i)
      value.middleRows(i * m, m) = B.rowwise() + A.row(i);
    return push(std::move(value), needs(a) || needs(b),
                [a, b, n, m](Tape& t, int self) {
                  const Mat& G = t.nodes_[self].grad;
                  if (t.needs(a)) {
                    Mat& dA = t.gref(a);
                    for (Eigen::Index i = 0; i < n; ++i)
                      dA.row(i) += G.middleRows(i * m, m).colwise().sum();
                  }
                  if (t.needs(b)) {
                    Mat& dB = t.gref(b);
                    for (Eigen::Index i = 0; i < n; ++i)
                      dB += G.middleRows(i * m, m);
                  }
                });
  }

  /// Column vector (n*m x 1), row-major pair order -> n x m matrix.
  Var<S> rows_to_matrix(Var<S> a, Eigen::Index n, Eigen::Index m) {
    const Mat& A = val(a);
    if (A.cols() != 1 || A.rows() != n * m)
      throw ShapeMismatchError("rows_to_matrix: expected (n*m) x 1 input");
    Mat value(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) value(i, j) = A(i * m + j, 0);
    return push(std::move(value), needs(a), [a, n, m](Tape& t, int self) {
      if (!t.needs(a)) return;
      const Mat& G = t.nodes_[self].grad;
      Mat& dA = t.gref(a);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j) dA(i * m + j, 0) += G(i, j);
    });
  }

  /// N x 1 column vector copied across `cols` columns.
  Var<S> broadcast_col(Var<S> v, Eigen::Index cols) {
    const Mat& V = val(v);
    if (V.cols() != 1) throw ShapeMismatchError("broadcast_col: expected N x 1");
    Mat value = V.replicate(1, cols);
    return push(std::move(value), needs(v), [v](Tape& t, int self) {
      if (t.needs(v)) t.gref(v) += t.nodes_[self].grad.rowwise().sum();
    });
  }

  /// Scalar sum(A .* C) for a constant coefficient matrix C.
  Var<S> weighted_sum_all(Var<S> a, Mat c) {
    if (val(a).rows() != c.rows() || val(a).cols() != c.cols())
      throw ShapeMismatchError("weighted_sum_all: shape mismatch");
    Mat value(1, 1);
    value(0, 0) = val(a).cwiseProduct(c).sum();
    return push(std::move(value), needs(a),
                [a, c = std::move(c)](Tape& t, int self) {
                  if (t.needs(a))
                    t.gref(a) += t.nodes_[self].grad(0, 0) * c;
                });
  }

  /// Weighted sum of scalar (1x1) vars.
  Var<S> sum_scaled(const std::vector<Var<S>>& vars,
                    const std::vector<S>& weights) {
    if (vars.size() != weights.size())
      throw ShapeMismatchError("sum_scaled: weight count mismatch");
    Mat value(1, 1);
    value(0, 0) = S(0);
    bool any = false;
    for (std::size_t k = 0; k < vars.size(); ++k) {
      if (val(vars[k]).size() != 1)
        throw ShapeMismatchError("sum_scaled: inputs must be scalars");
      value(0, 0) += weights[k] * val(vars[k])(0, 0);
      any = any || needs(vars[k]);
    }
    return push(std::move(value), any, [vars, weights](Tape& t, int self) {
      const S g = t.nodes_[self].grad(0, 0);
      for (std::size_t k = 0; k < vars.size(); ++k)
        if (t.needs(vars[k])) t.gref(vars[k])(0, 0) += weights[k] * g;
    });
  }

  /// Label-smoothed cross-entropy averaged over included rows; rows with
  /// include = 0 contribute nothing. Returns 0 when nothing is included.
  Var<S> ce_smoothed(Var<S> logits, const std::vector<int>& labels, S smoothing,
                     const std::vector<char>& include) {
    const Mat& Z = val(logits);
    const Eigen::Index n = Z.rows(), c = Z.cols();
    if (static_cast<Eigen::Index>(labels.size()) != n ||
        static_cast<Eigen::Index>(include.size()) != n)
      throw ShapeMismatchError("ce_smoothed: label/include size mismatch");
    Eigen::Index n_inc = 0;
    for (char f : include) n_inc += (f != 0);
    Mat value(1, 1);
    value(0, 0) = S(0);
    if (n_inc > 0) {
      S total = S(0);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!include[i]) continue;
        if (labels[i] < 0 || labels[i] >= c)
          throw ShapeMismatchError("ce_smoothed: label out of range");
        const S m = Z.row(i).maxCoeff();
        const S lse = m + std::log((Z.row(i).array() - m).exp().sum());
        // q = smoothing/c + (1-smoothing) at the target
        S dot = (smoothing / S(c)) * Z.row(i).sum();
        dot += (S(1) - smoothing) * Z(i, labels[i]);
        total += lse - dot;
      }
      value(0, 0) = total / S(n_inc);
    }
    return push(std::move(value), needs(logits),
                [logits, labels, smoothing, include, n_inc](Tape& t, int self) {
                  if (!t.needs(logits) || n_inc == 0) return;
                  const S g = t.nodes_[self].grad(0, 0) / S(n_inc);
                  const Mat& Z = t.val(logits);
                  Mat& dZ = t.gref(logits);
                  const Eigen::Index c = Z.cols();
                  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
                    if (!include[i]) continue;
                    const S m = Z.row(i).maxCoeff();
                    Eigen::Array<S, 1, Eigen::Dynamic> p =
                        (Z.row(i).array() - m).exp();
                    p /= p.sum();
                    dZ.row(i).array() += g * (p - smoothing / S(c));
                    dZ(i, labels[i]) -= g * (S(1) - smoothing);
                  }
                });
  }

  /// Binary cross-entropy averaged over all entries, predictions clipped to
  /// [1e-7, 1 - 1e-7]. Gradient is zero on the clipped set.
  Var<S> bce_mean(Var<S> pred, Mat target) {
    const Mat& P = val(pred);
    if (P.rows() != target.rows() || P.cols() != target.cols())
      throw ShapeMismatchError("bce_mean: shape mismatch");
    constexpr S lo = S(1e-7);
    const S hi = S(1) - lo;
    const S inv_n = S(1) / S(P.size());
    Mat value(1, 1);
    S total = S(0);
    for (Eigen::Index j = 0; j < P.cols(); ++j)
      for (Eigen::Index i = 0; i < P.rows(); ++i) {
        const S p = std::min(hi, std::max(lo, P(i, j)));
        total -= target(i, j) * std::log(p) +
                 (S(1) - target(i, j)) * std::log(S(1) - p);
      }
    value(0, 0) = total * inv_n;
    return push(std::move(value), needs(pred),
                [pred, target = std::move(target), lo, hi, inv_n](Tape& t,
                                                                  int self) {
                  if (!t.needs(pred)) return;
                  const S g = t.nodes_[self].grad(0, 0) * inv_n;
                  const Mat& P = t.val(pred);
                  Mat& dP = t.gref(pred);
                  for (Eigen::Index j = 0; j < P.cols(); ++j)
                    for (Eigen::Index i = 0; i < P.rows(); ++i) {
                      const S p = P(i, j);
                      if (p < lo || p > hi) continue;
                      dP(i, j) += g * (p - target(i, j)) / (p * (S(1) - p));
                    }
                });
  }

  /// Seeds d(root)/d(root) = 1 and propagates to all reachable nodes.
  void backward(Var<S> root) {
    if (val(root).size() != 1)
      throw ShapeMismatchError("backward: root must be a scalar");
    nodes_[root.id].grad(0, 0) = S(1);
    for (int i = root.id; i >= 0; --i)
      if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, int)> backward;
    bool needs_grad = false;
  };

  bool needs(Var<S> v) const { return nodes_[v.id].needs_grad; }
  Mat& gref(Var<S> v) { return nodes_[v.id].grad; }

  void check_same_shape(Var<S> a, Var<S> b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw ShapeMismatchError(std::string(op) + ": shape mismatch");
  }

  Var<S> push(Mat value, bool needs_grad,
              std::function<void(Tape&, int)> backward) {
    Node node;
    node.grad = Mat::Zero(value.rows(), value.cols());
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<S>{static_cast<int>(nodes_.size()) - 1};
  }

  // deque: values stay address-stable while new nodes are appended, so a
  // reference obtained through val() survives subsequent op pushes.
  std::deque<Node> nodes_;
  std::vector<ParamEntry> params_;
};

}  // namespace airway::ad
