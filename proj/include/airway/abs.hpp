#pragma once

#include <string>

#include "airway/attention.hpp"

namespace airway::nn {

// Abnormal-branch head: class prototypes pooled from segmental predictions,
// cross-attention refinement against node features, per-node anomaly scores
// and the derived soft attention mask.
template <typename S>
struct AbsParams {
  S alpha = S(1);            // prototype pooling exponent
  bool normalized = false;   // divide prototypes by their probability mass
  BlockParams<S> refine_block;
  // Pair reducer on [g_i; h_c]: 2d -> d -> 1, halves as in the subtree head.
  Matrix<S> w1a, w1b, b1;
  Matrix<S> w2, b2;
  // Score head over the per-node vector of class pair-scores.
  Matrix<S> score_w1, score_b1;
  Matrix<S> score_w2, score_b2;

  static AbsParams init(int dim, int heads, int n_classes, int score_hidden,
                        S alpha, bool normalized, Rng& rng) {
    AbsParams p;
    p.alpha = alpha;
    p.normalized = normalized;
    p.refine_block = BlockParams<S>::init(dim, heads, 1, rng);
    p.w1a = glorot<S>(dim, dim, rng);
    p.w1b = glorot<S>(dim, dim, rng);
    p.b1 = Matrix<S>::Zero(1, dim);
    p.w2 = glorot<S>(dim, 1, rng);
    p.b2 = Matrix<S>::Zero(1, 1);
    p.score_w1 = glorot<S>(n_classes, score_hidden, rng);
    p.score_b1 = Matrix<S>::Zero(1, score_hidden);
    p.score_w2 = glorot<S>(score_hidden, 1, rng);
    p.score_b2 = Matrix<S>::Zero(1, 1);
    return p;
  }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    refine_block.for_each(prefix + ".refine", f);
    f(prefix + ".w1a", w1a);
    f(prefix + ".w1b", w1b);
    f(prefix + ".b1", b1);
    f(prefix + ".w2", w2);
    f(prefix + ".b2", b2);
    f(prefix + ".score_w1", score_w1);
    f(prefix + ".score_b1", score_b1);
    f(prefix + ".score_w2", score_w2);
    f(prefix + ".score_b2", score_b2);
  }
};

template <typename S>
struct AbsVars {
  S alpha;
  bool normalized;
  BlockVars<S> refine_block;
  Var<S> w1a, w1b, b1, w2, b2;
  Var<S> score_w1, score_b1, score_w2, score_b2;
};

template <typename S>
AbsVars<S> push_abs(Tape<S>& tape, const AbsParams<S>& p,
                    const std::string& prefix) {
  AbsVars<S> v;
  v.alpha = p.alpha;
  v.normalized = p.normalized;
  v.refine_block = push_block(tape, p.refine_block, prefix + ".refine");
  v.w1a = tape.param(p.w1a, prefix + ".w1a");
  v.w1b = tape.param(p.w1b, prefix + ".w1b");
  v.b1 = tape.param(p.b1, prefix + ".b1");
  v.w2 = tape.param(p.w2, prefix + ".w2");
  v.b2 = tape.param(p.b2, prefix + ".b2");
  v.score_w1 = tape.param(p.score_w1, prefix + ".score_w1");
  v.score_b1 = tape.param(p.score_b1, prefix + ".score_b1");
  v.score_w2 = tape.param(p.score_w2, prefix + ".score_w2");
  v.score_b2 = tape.param(p.score_b2, prefix + ".score_b2");
  return v;
}

/// Class prototypes H = (softmax(Z)^alpha)^T G, one row per segmental class.
/// No normalization by column mass unless `normalized` is set.
template <typename S>
Var<S> compute_prototypes(Tape<S>& tape, Var<S> g_seg, Var<S> z_seg, S alpha,
                          bool normalized = false) {
  if (tape.val(g_seg).rows() != tape.val(z_seg).rows())
    throw ShapeMismatchError("compute_prototypes: row counts disagree");
  Var<S> p = tape.softmax_rows(z_seg);
  if (alpha != S(1)) p = tape.pow_elem(p, alpha);
  Var<S> h = tape.matmul(p, g_seg, true, false);
  if (normalized) {
    const Eigen::Index n = tape.val(g_seg).rows();
    const Eigen::Index d = tape.val(g_seg).cols();
    Var<S> mass = tape.matmul(p, tape.constant(Matrix<S>::Ones(n, 1)), true, false);
    h = tape.cmul(h, tape.broadcast_col(tape.recip_elem(mass), d));
  }
  return h;
}

/// Prototype refinement: cross-attention with prototypes as queries and the
/// segmental node features as keys/values.
template <typename S>
Var<S> refine_prototypes(Tape<S>& tape, Var<S> prototypes, Var<S> g_seg,
                         const BlockVars<S>& blk) {
  return cross_attention(tape, prototypes, g_seg, blk);
}

/// Per-node anomaly probability from node-prototype pair scores.
template <typename S>
Var<S> anomaly_scores(Tape<S>& tape, Var<S> g_seg, Var<S> prototypes,
                      const AbsVars<S>& v) {
  const Eigen::Index n = tape.val(g_seg).rows();
  const Eigen::Index c = tape.val(prototypes).rows();
  Var<S> lhs = tape.matmul(g_seg, v.w1a);
  Var<S> rhs = tape.matmul(prototypes, v.w1b);
  Var<S> h1 = tape.relu(
      tape.add_row_broadcast(tape.pairsum_rows(lhs, rhs), v.b1));
  Var<S> pair_scores = tape.rows_to_matrix(
      tape.add_row_broadcast(tape.matmul(h1, v.w2), v.b2), n, c);
  Var<S> hidden = tape.relu(tape.add_row_broadcast(
      tape.matmul(pair_scores, v.score_w1), v.score_b1));
  return tape.sigmoid(
      tape.add_row_broadcast(tape.matmul(hidden, v.score_w2), v.score_b2));
}

/// Soft anomaly mask 1 - (y y^T)^2; all-ones when every score is zero.
template <typename S>
Var<S> anomaly_mask(Tape<S>& tape, Var<S> scores) {
  if (tape.val(scores).cols() != 1)
    throw ShapeMismatchError("anomaly_mask: scores must be N x 1");
  Var<S> outer = tape.matmul(scores, scores, false, true);
  return tape.affine(tape.cmul(outer, outer), S(-1), S(1));
}

}  // namespace airway::nn
