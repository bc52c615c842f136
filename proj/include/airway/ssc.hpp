#pragma once

#include <string>
#include <vector>

#include "airway/attention.hpp"
#include "airway/tree.hpp"

namespace airway::nn {

// Soft-subtree head: a pairwise channel reducer predicts the probability
// that two nodes share a segmental label, and a per-node blend k raises that
// probability on ancestor -> descendant pairs.
template <typename S>
struct SscParams {
  // Reducer on [g_i; g_j]: 2d -> d -> d/2 -> 1 with shared weights across
  // pairs; w1 is stored as its two d x d halves applied to g_i and g_j.
  Matrix<S> w1a, w1b, b1;
  Matrix<S> w2, b2;
  Matrix<S> w3, b3;
  Matrix<S> blend;  // d x 1, logistic-squashed into k

  static SscParams init(int dim, Rng& rng) {
    if (dim % 2 != 0) throw ShapeMismatchError("ssc: dim must be even");
    SscParams p;
    p.w1a = glorot<S>(dim, dim, rng);
    p.w1b = glorot<S>(dim, dim, rng);
    p.b1 = Matrix<S>::Zero(1, dim);
    p.w2 = glorot<S>(dim, dim / 2, rng);
    p.b2 = Matrix<S>::Zero(1, dim / 2);
    p.w3 = glorot<S>(dim / 2, 1, rng);
    p.b3 = Matrix<S>::Zero(1, 1);
    p.blend = glorot<S>(dim, 1, rng);
    return p;
  }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".w1a", w1a);
    f(prefix + ".w1b", w1b);
    f(prefix + ".b1", b1);
    f(prefix + ".w2", w2);
    f(prefix + ".b2", b2);
    f(prefix + ".w3", w3);
    f(prefix + ".b3", b3);
    f(prefix + ".blend", blend);
  }
};

template <typename S>
struct SscVars {
  Var<S> w1a, w1b, b1, w2, b2, w3, b3, blend;
};

template <typename S>
SscVars<S> push_ssc(Tape<S>& tape, const SscParams<S>& p,
                    const std::string& prefix) {
  SscVars<S> v;
  v.w1a = tape.param(p.w1a, prefix + ".w1a");
  v.w1b = tape.param(p.w1b, prefix + ".w1b");
  v.b1 = tape.param(p.b1, prefix + ".b1");
  v.w2 = tape.param(p.w2, prefix + ".w2");
  v.b2 = tape.param(p.b2, prefix + ".b2");
  v.w3 = tape.param(p.w3, prefix + ".w3");
  v.b3 = tape.param(p.b3, prefix + ".b3");
  v.blend = tape.param(p.blend, prefix + ".blend");
  return v;
}

/// Binary ground-truth subtree map: 1 iff equal segmental labels.
template <typename S>
Matrix<S> gt_subtree_map(const std::vector<int>& seg_labels) {
  const Eigen::Index n = static_cast<Eigen::Index>(seg_labels.size());
  Matrix<S> m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      m(i, j) = seg_labels[i] == seg_labels[j] ? S(1) : S(0);
  return m;
}

/// Raw soft subtree map in (0,1): reducer over every ordered node pair.
template <typename S>
Var<S> predict_raw_map(Tape<S>& tape, Var<S> g_seg, const SscVars<S>& v) {
  const Eigen::Index n = tape.val(g_seg).rows();
  Var<S> lhs = tape.matmul(g_seg, v.w1a);
  Var<S> rhs = tape.matmul(g_seg, v.w1b);
  Var<S> h1 = tape.relu(
      tape.add_row_broadcast(tape.pairsum_rows(lhs, rhs), v.b1));
  Var<S> h2 = tape.relu(tape.add_row_broadcast(tape.matmul(h1, v.w2), v.b2));
  Var<S> out = tape.add_row_broadcast(tape.matmul(h2, v.w3), v.b3);
  return tape.rows_to_matrix(tape.sigmoid(out), n, n);
}

/// Per-node blend in (0,1) from segmental features.
template <typename S>
Var<S> predict_blend(Tape<S>& tape, Var<S> g_seg, const SscVars<S>& v) {
  return tape.sigmoid(tape.matmul(g_seg, v.blend));
}

/// Soft topological refinement:
/// refined(i,j) = raw(i,j) + k_i * (1 - raw(i,j)) on descendant pairs,
/// untouched elsewhere. Exact passthrough where the descendant mask is zero.
template <typename S>
Var<S> refine_map(Tape<S>& tape, Var<S> raw, Var<S> blend_k,
                  const DescendantMask& desc) {
  const Matrix<S>& r = tape.val(raw);
  const Matrix<S>& k = tape.val(blend_k);
  if (k.cols() != 1 || k.rows() != r.rows() || r.rows() != r.cols())
    throw ShapeMismatchError("refine_map: raw must be N x N, k N x 1");
  if ((r.array() < S(0)).any() || (r.array() > S(1)).any())
    throw DomainError("refine_map: raw entries outside [0,1]");
  if ((k.array() < S(0)).any() || (k.array() > S(1)).any())
    throw DomainError("refine_map: blend entries outside [0,1]");
  const Eigen::Index n = r.cols();
  Matrix<S> mask = desc.values.template cast<S>();
  Var<S> increment = tape.cmul_const(
      tape.cmul(tape.broadcast_col(blend_k, n), tape.affine(raw, S(-1), S(1))),
      std::move(mask));
  return tape.add(raw, increment);
}

}  // namespace airway::nn
