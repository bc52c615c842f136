#pragma once

#include <string>
#include <vector>

#include "airway/autodiff.hpp"
#include "airway/rng.hpp"

namespace airway::nn {

using ad::Tape;
using ad::Var;

template <typename S>
Matrix<S> glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix<S> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = static_cast<S>(rng.uniform(-limit, limit));
  return m;
}

// One transformer block: multi-head attention with per-head d x d_k
// projections, output projection, feed-forward d -> 2d -> d, post-norm
// residual layout. The SPD codebook (heads x (clip+1)) starts at zero so a
// freshly initialized biased block equals vanilla attention.
template <typename S>
struct BlockParams {
  int dim = 0;
  int heads = 0;
  int head_dim = 0;
  std::vector<Matrix<S>> wq, wk, wv;
  Matrix<S> wo;
  Matrix<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Matrix<S> norm1_gain, norm1_offset, norm2_gain, norm2_offset;
  Matrix<S> spd_codebook;

  static BlockParams init(int dim, int heads, int spd_bins, Rng& rng) {
    if (dim % heads != 0)
      throw ShapeMismatchError("block: heads must divide dim");
    BlockParams p;
    p.dim = dim;
    p.heads = heads;
    p.head_dim = dim / heads;
    for (int a = 0; a < heads; ++a) {
      p.wq.push_back(glorot<S>(dim, p.head_dim, rng));
      p.wk.push_back(glorot<S>(dim, p.head_dim, rng));
      p.wv.push_back(glorot<S>(dim, p.head_dim, rng));
    }
    p.wo = glorot<S>(dim, dim, rng);
    p.ffn_w1 = glorot<S>(dim, 2 * dim, rng);
    p.ffn_b1 = Matrix<S>::Zero(1, 2 * dim);
    p.ffn_w2 = glorot<S>(2 * dim, dim, rng);
    p.ffn_b2 = Matrix<S>::Zero(1, dim);
    p.norm1_gain = Matrix<S>::Ones(1, dim);
    p.norm1_offset = Matrix<S>::Zero(1, dim);
    p.norm2_gain = Matrix<S>::Ones(1, dim);
    p.norm2_offset = Matrix<S>::Zero(1, dim);
    p.spd_codebook = Matrix<S>::Zero(heads, spd_bins);
    return p;
  }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    for (int a = 0; a < heads; ++a) {
      f(prefix + ".wq" + std::to_string(a), wq[a]);
      f(prefix + ".wk" + std::to_string(a), wk[a]);
      f(prefix + ".wv" + std::to_string(a), wv[a]);
    }
    f(prefix + ".wo", wo);
    f(prefix + ".ffn_w1", ffn_w1);
    f(prefix + ".ffn_b1", ffn_b1);
    f(prefix + ".ffn_w2", ffn_w2);
    f(prefix + ".ffn_b2", ffn_b2);
    f(prefix + ".norm1_gain", norm1_gain);
    f(prefix + ".norm1_offset", norm1_offset);
    f(prefix + ".norm2_gain", norm2_gain);
    f(prefix + ".norm2_offset", norm2_offset);
    f(prefix + ".spd_codebook", spd_codebook);
  }
};

template <typename S>
struct BlockVars {
  int heads = 0;
  int head_dim = 0;
  std::vector<Var<S>> wq, wk, wv;
  Var<S> wo;
  Var<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Var<S> norm1_gain, norm1_offset, norm2_gain, norm2_offset;
  Var<S> spd_codebook;
};

template <typename S>
BlockVars<S> push_block(Tape<S>& tape, const BlockParams<S>& p,
                        const std::string& prefix) {
  BlockVars<S> v;
  v.heads = p.heads;
  v.head_dim = p.head_dim;
  for (int a = 0; a < p.heads; ++a) {
    v.wq.push_back(tape.param(p.wq[a], prefix + ".wq" + std::to_string(a)));
    v.wk.push_back(tape.param(p.wk[a], prefix + ".wk" + std::to_string(a)));
    v.wv.push_back(tape.param(p.wv[a], prefix + ".wv" + std::to_string(a)));
  }
  v.wo = tape.param(p.wo, prefix + ".wo");
  v.ffn_w1 = tape.param(p.ffn_w1, prefix + ".ffn_w1");
  v.ffn_b1 = tape.param(p.ffn_b1, prefix + ".ffn_b1");
  v.ffn_w2 = tape.param(p.ffn_w2, prefix + ".ffn_w2");
  v.ffn_b2 = tape.param(p.ffn_b2, prefix + ".ffn_b2");
  v.norm1_gain = tape.param(p.norm1_gain, prefix + ".norm1_gain");
  v.norm1_offset = tape.param(p.norm1_offset, prefix + ".norm1_offset");
  v.norm2_gain = tape.param(p.norm2_gain, prefix + ".norm2_gain");
  v.norm2_offset = tape.param(p.norm2_offset, prefix + ".norm2_offset");
  v.spd_codebook = tape.param(p.spd_codebook, prefix + ".spd_codebook");
  return v;
}

namespace detail {

// Shared attention + feed-forward path. `spd_idx` adds the per-head codebook
// bias to the logits; `mask` multiplies them (soft masking, not -inf).
template <typename S>
Var<S> attention_block(Tape<S>& tape, Var<S> xq, Var<S> kv,
                       const BlockVars<S>& blk,
                       const Eigen::MatrixXi* spd_idx, Var<S> mask) {
  const S inv_sqrt_dk = S(1) / std::sqrt(static_cast<S>(blk.head_dim));
  std::vector<Var<S>> head_outputs;
  head_outputs.reserve(blk.heads);
  for (int a = 0; a < blk.heads; ++a) {
    Var<S> q = tape.matmul(xq, blk.wq[a]);
    Var<S> k = tape.matmul(kv, blk.wk[a]);
    Var<S> v = tape.matmul(kv, blk.wv[a]);
    Var<S> logits = tape.affine(tape.matmul(q, k, false, true), inv_sqrt_dk, S(0));
    if (spd_idx) logits = tape.add(logits, tape.gather_row(blk.spd_codebook, a, *spd_idx));
    if (mask.valid()) logits = tape.cmul(logits, mask);
    Var<S> weights = tape.softmax_rows(logits);
    head_outputs.push_back(tape.matmul(weights, v));
  }
  Var<S> attended = tape.matmul(tape.concat_cols(head_outputs), blk.wo);
  Var<S> y = tape.layer_norm_rows(tape.add(xq, attended), blk.norm1_gain,
                                  blk.norm1_offset);
  Var<S> hidden = tape.relu(
      tape.add_row_broadcast(tape.matmul(y, blk.ffn_w1), blk.ffn_b1));
  Var<S> ffn = tape.add_row_broadcast(tape.matmul(hidden, blk.ffn_w2), blk.ffn_b2);
  return tape.layer_norm_rows(tape.add(y, ffn), blk.norm2_gain,
                              blk.norm2_offset);
}

}  // namespace detail

/// Self-attention with SPD-codebook bias added to the logits.
template <typename S>
Var<S> biased_self_attention(Tape<S>& tape, Var<S> x, const BlockVars<S>& blk,
                             const Eigen::MatrixXi& spd_idx) {
  if (spd_idx.rows() != tape.val(x).rows() ||
      spd_idx.cols() != tape.val(x).rows())
    throw ShapeMismatchError("biased_self_attention: spd matrix must be N x N");
  return detail::attention_block(tape, x, x, blk, &spd_idx, Var<S>{});
}

/// Self-attention with a soft [0,1] mask multiplied into the logits.
/// No SPD bias unless `spd_idx` is supplied (ablation switch).
template <typename S>
Var<S> masked_self_attention(Tape<S>& tape, Var<S> x, const BlockVars<S>& blk,
                             Var<S> mask,
                             const Eigen::MatrixXi* spd_idx = nullptr) {
  const Matrix<S>& m = tape.val(mask);
  if (m.rows() != tape.val(x).rows() || m.cols() != tape.val(x).rows())
    throw ShapeMismatchError("masked_self_attention: mask must be N x N");
  if ((m.array() < S(0)).any() || (m.array() > S(1)).any())
    throw MaskOutOfRangeError("masked_self_attention: mask entries outside [0,1]");
  return detail::attention_block(tape, x, x, blk, spd_idx, mask);
}

/// Multi-head cross-attention; queries and keys index different node sets so
/// there is no SPD bias.
template <typename S>
Var<S> cross_attention(Tape<S>& tape, Var<S> xq, Var<S> kv,
                       const BlockVars<S>& blk) {
  if (tape.val(xq).cols() != tape.val(kv).cols())
    throw ShapeMismatchError("cross_attention: feature dims disagree");
  return detail::attention_block(tape, xq, kv, blk, nullptr, Var<S>{});
}

}  // namespace airway::nn
