#pragma once

#include <string>
#include <vector>

#include "airway/abs.hpp"
#include "airway/attention.hpp"
#include "airway/features.hpp"
#include "airway/ssc.hpp"
#include "airway/tree.hpp"

namespace airway::nn {

struct ModelConfig {
  int d_in = kFeatureDim;
  int dim = 128;
  int heads = 4;
  int spd_clip = 15;  // distances beyond this share the last codebook entry
  double alpha = 1.0;
  bool normalized_prototypes = false;
  bool masked_bias = false;  // also add SPD bias inside masked blocks
  int score_hidden = 64;
  double anomaly_threshold = 0.5;
};

// Component toggles for the ablation grid. A disabled module contributes
// neither its mask nor its loss term; with no mask at all the subsegmental
// stack runs its blocks with SPD bias like the coarser levels.
struct Variant {
  bool guidance = true;  // stage 2 (fine-to-coarse refinement)
  bool ssc = true;
  bool abs = true;
};

// Everything the network needs about one tree, precomputed once.
template <typename S>
struct TreeContext {
  int n = 0;
  Matrix<S> features;
  Eigen::MatrixXi spd_idx;  // clipped to [0, spd_clip]
  DescendantMask desc;
  std::vector<int> gt_lob, gt_seg, gt_sub;
  std::vector<char> gt_abnormal;
  std::vector<char> include_ce;  // abnormal nodes excluded from CE
  Matrix<S> gt_subtree;
  Matrix<S> gt_anomaly;  // N x 1

  static TreeContext build(const AirwayTree& tree, const Nomenclature& nom,
                           int spd_clip) {
    TreeContext ctx;
    ctx.n = tree.size();
    ctx.features = extract_features(tree).values.template cast<S>();
    const SpdMatrix spd = shortest_path_distances(tree);
    ctx.spd_idx = spd.values.cwiseMin(spd_clip);
    ctx.desc = descendant_mask(tree);
    ctx.gt_anomaly.resize(ctx.n, 1);
    for (const BranchNode& b : tree.nodes()) {
      ctx.gt_lob.push_back(b.label_lob);
      ctx.gt_seg.push_back(b.label_seg);
      ctx.gt_sub.push_back(b.label_sub);
      ctx.gt_abnormal.push_back(b.is_abnormal ? 1 : 0);
      ctx.include_ce.push_back(b.is_abnormal ? 0 : 1);
      ctx.gt_anomaly(b.id, 0) = b.is_abnormal ? S(1) : S(0);
    }
    ctx.gt_subtree = gt_subtree_map<S>(ctx.gt_seg);
    (void)nom;
    return ctx;
  }
};

template <typename S>
struct ClassifierHead {
  Matrix<S> w, b;

  static ClassifierHead init(int dim, int classes, Rng& rng) {
    return {glorot<S>(dim, classes, rng), Matrix<S>::Zero(1, classes)};
  }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".w", w);
    f(prefix + ".b", b);
  }
};

template <typename S>
struct StageParams {
  std::vector<BlockParams<S>> lob_blocks, seg_blocks;
  std::vector<BlockParams<S>> sub_masked, sub_biased;
  ClassifierHead<S> head_lob, head_seg, head_sub;
  SscParams<S> ssc;
  AbsParams<S> abs;
  bool has_guides = false;
  BlockParams<S> lob_guide, seg_guide;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < lob_blocks.size(); ++i)
      lob_blocks[i].for_each(prefix + ".lob" + std::to_string(i), f);
    for (std::size_t i = 0; i < seg_blocks.size(); ++i)
      seg_blocks[i].for_each(prefix + ".seg" + std::to_string(i), f);
    for (std::size_t i = 0; i < sub_masked.size(); ++i)
      sub_masked[i].for_each(prefix + ".sub_masked" + std::to_string(i), f);
    for (std::size_t i = 0; i < sub_biased.size(); ++i)
      sub_biased[i].for_each(prefix + ".sub_biased" + std::to_string(i), f);
    head_lob.for_each(prefix + ".head_lob", f);
    head_seg.for_each(prefix + ".head_seg", f);
    head_sub.for_each(prefix + ".head_sub", f);
    ssc.for_each(prefix + ".ssc", f);
    abs.for_each(prefix + ".abs", f);
    if (has_guides) {
      lob_guide.for_each(prefix + ".lob_guide", f);
      seg_guide.for_each(prefix + ".seg_guide", f);
    }
  }
};

template <typename S>
struct ModelState {
  ModelConfig config;
  int n_lob = 0, n_seg = 0, n_sub = 0;  // class counts, outlier excluded
  Matrix<S> embed_w, embed_b;
  StageParams<S> stage1, stage2;

  static ModelState init(const ModelConfig& cfg, const Nomenclature& nom,
                         std::uint64_t seed) {
    ModelState m;
    m.config = cfg;
    m.n_lob = nom.n_lob;
    m.n_seg = nom.n_seg;
    m.n_sub = nom.n_sub;
    Rng rng(seed, 0, "init");
    m.embed_w = glorot<S>(cfg.d_in, cfg.dim, rng);
    m.embed_b = Matrix<S>::Zero(1, cfg.dim);
    const int bins = cfg.spd_clip + 1;
    auto make_stage = [&](bool guides) {
      StageParams<S> st;
      for (int i = 0; i < 2; ++i) {
        st.lob_blocks.push_back(BlockParams<S>::init(cfg.dim, cfg.heads, bins, rng));
        st.seg_blocks.push_back(BlockParams<S>::init(cfg.dim, cfg.heads, bins, rng));
      }
      for (int i = 0; i < 2; ++i)
        st.sub_masked.push_back(BlockParams<S>::init(cfg.dim, cfg.heads, bins, rng));
      for (int i = 0; i < 2; ++i)
        st.sub_biased.push_back(BlockParams<S>::init(cfg.dim, cfg.heads, bins, rng));
      st.head_lob = ClassifierHead<S>::init(cfg.dim, nom.n_lob, rng);
      st.head_seg = ClassifierHead<S>::init(cfg.dim, nom.n_seg, rng);
      st.head_sub = ClassifierHead<S>::init(cfg.dim, nom.n_sub, rng);
      st.ssc = SscParams<S>::init(cfg.dim, rng);
      st.abs = AbsParams<S>::init(cfg.dim, cfg.heads, nom.n_seg,
                                  cfg.score_hidden, static_cast<S>(cfg.alpha),
                                  cfg.normalized_prototypes, rng);
      st.has_guides = guides;
      if (guides) {
        st.lob_guide = BlockParams<S>::init(cfg.dim, cfg.heads, bins, rng);
        st.seg_guide = BlockParams<S>::init(cfg.dim, cfg.heads, bins, rng);
      }
      return st;
    };
    m.stage1 = make_stage(false);
    m.stage2 = make_stage(true);
    return m;
  }

  template <typename F>
  void for_each(F&& f) {
    f(std::string("embed.w"), embed_w);
    f(std::string("embed.b"), embed_b);
    stage1.for_each("s1", f);
    stage2.for_each("s2", f);
  }
};

template <typename S>
struct StageVarOutputs {
  Var<S> g_lob, g_seg, g_sub;
  Var<S> z_lob, z_seg, z_sub;
  Var<S> raw_map, refined_map;  // invalid when SSC disabled
  Var<S> scores, anomaly_mask_v;  // invalid when ABS disabled
};

template <typename S>
struct ForwardVars {
  StageVarOutputs<S> stage1, stage2;
  bool has_stage2 = false;
};

namespace detail {

template <typename S>
void check_finite(const Tape<S>& tape, Var<S> v, const std::string& where) {
  if (!tape.val(v).allFinite())
    throw NonFiniteError("non-finite activation in " + where);
}

template <typename S>
Var<S> apply_head(Tape<S>& tape, Var<S> g, const ClassifierHead<S>& head,
                  const std::string& prefix) {
  return tape.add_row_broadcast(
      tape.matmul(g, tape.param(head.w, prefix + ".w")),
      tape.param(head.b, prefix + ".b"));
}

template <typename S>
Var<S> run_stack(Tape<S>& tape, Var<S> x,
                 const std::vector<BlockParams<S>>& blocks,
                 const Eigen::MatrixXi& spd_idx, const std::string& prefix) {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    x = biased_self_attention(
        tape, x, push_block(tape, blocks[i], prefix + std::to_string(i)),
        spd_idx);
  check_finite(tape, x, prefix);
  return x;
}

// Subtree/anomaly heads plus the subsegmental stack for one stage.
template <typename S>
void run_fine_level(Tape<S>& tape, const TreeContext<S>& ctx,
                    const ModelConfig& cfg, const Variant& variant,
                    StageParams<S>& stage, StageVarOutputs<S>& out,
                    const std::string& prefix) {
  Var<S> mask;
  if (variant.ssc) {
    const SscVars<S> ssc = push_ssc(tape, stage.ssc, prefix + ".ssc");
    out.raw_map = predict_raw_map(tape, out.g_seg, ssc);
    out.refined_map =
        refine_map(tape, out.raw_map, predict_blend(tape, out.g_seg, ssc), ctx.desc);
    mask = out.refined_map;
  }
  if (variant.abs) {
    const AbsVars<S> abs = push_abs(tape, stage.abs, prefix + ".abs");
    Var<S> prototypes = compute_prototypes(tape, out.g_seg, out.z_seg,
                                           abs.alpha, abs.normalized);
    Var<S> refined =
        refine_prototypes(tape, prototypes, out.g_seg, abs.refine_block);
    out.scores = anomaly_scores(tape, out.g_seg, refined, abs);
    out.anomaly_mask_v = anomaly_mask(tape, out.scores);
    mask = mask.valid() ? tape.cmul(mask, out.anomaly_mask_v)
                        : out.anomaly_mask_v;
  }

  Var<S> x = out.g_seg;
  for (std::size_t i = 0; i < stage.sub_masked.size(); ++i) {
    const BlockVars<S> blk = push_block(tape, stage.sub_masked[i],
                                        prefix + ".sub_masked" + std::to_string(i));
    if (mask.valid())
      x = masked_self_attention(tape, x, blk, mask,
                                cfg.masked_bias ? &ctx.spd_idx : nullptr);
    else
      x = biased_self_attention(tape, x, blk, ctx.spd_idx);
  }
  for (std::size_t i = 0; i < stage.sub_biased.size(); ++i)
    x = biased_self_attention(
        tape, x,
        push_block(tape, stage.sub_biased[i], prefix + ".sub_biased" + std::to_string(i)),
        ctx.spd_idx);
  check_finite(tape, x, prefix + ".sub");
  out.g_sub = x;
  out.z_sub = apply_head(tape, x, stage.head_sub, prefix + ".head_sub");
}

}  // namespace detail

/// Two-stage forward pass. Stage 1 runs the coarse-to-fine cascade from the
/// embedded features; stage 2 re-runs each level seeded from stage-1 features
/// with fine-to-coarse guidance cross-attention at the lobar and segmental
/// levels. All masks are predicted, never teacher-forced.
template <typename S>
ForwardVars<S> forward(Tape<S>& tape, const TreeContext<S>& ctx,
                       ModelState<S>& state, const Variant& variant) {
  using detail::apply_head;
  using detail::run_stack;
  ForwardVars<S> out;

  Var<S> x0 = tape.add_row_broadcast(
      tape.matmul(tape.constant(ctx.features),
                  tape.param(state.embed_w, "embed.w")),
      tape.param(state.embed_b, "embed.b"));

  // Stage 1: independent cascade.
  StageVarOutputs<S>& s1 = out.stage1;
  s1.g_lob = run_stack(tape, x0, state.stage1.lob_blocks, ctx.spd_idx, "s1.lob");
  s1.z_lob = apply_head(tape, s1.g_lob, state.stage1.head_lob, "s1.head_lob");
  s1.g_seg = run_stack(tape, s1.g_lob, state.stage1.seg_blocks, ctx.spd_idx, "s1.seg");
  s1.z_seg = apply_head(tape, s1.g_seg, state.stage1.head_seg, "s1.head_seg");
  detail::run_fine_level(tape, ctx, state.config, variant, state.stage1, s1, "s1");

  if (!variant.guidance) return out;
  out.has_stage2 = true;

  // Stage 2: guided refinement, fresh parameters per stage.
  StageVarOutputs<S>& s2 = out.stage2;
  Var<S> lob_self = run_stack(tape, s1.g_lob, state.stage2.lob_blocks,
                              ctx.spd_idx, "s2.lob");
  s2.g_lob = cross_attention(tape, lob_self, s1.g_seg,
                             push_block(tape, state.stage2.lob_guide, "s2.lob_guide"));
  detail::check_finite(tape, s2.g_lob, "s2.lob_guide");
  s2.z_lob = apply_head(tape, s2.g_lob, state.stage2.head_lob, "s2.head_lob");

  Var<S> seg_self = run_stack(tape, s2.g_lob, state.stage2.seg_blocks,
                              ctx.spd_idx, "s2.seg");
  s2.g_seg = cross_attention(tape, seg_self, s1.g_sub,
                             push_block(tape, state.stage2.seg_guide, "s2.seg_guide"));
  detail::check_finite(tape, s2.g_seg, "s2.seg_guide");
  s2.z_seg = apply_head(tape, s2.g_seg, state.stage2.head_seg, "s2.head_seg");
  detail::run_fine_level(tape, ctx, state.config, variant, state.stage2, s2, "s2");
  return out;
}

template <typename S>
struct LossWeights {
  S stage1 = 1, stage2 = 1;
  S lob = 1, seg = 1, sub = 1;
  S subtree = 1, anomaly = 1;
};

struct LossBreakdown {
  double total = 0;
  double ce_lob[2] = {0, 0}, ce_seg[2] = {0, 0}, ce_sub[2] = {0, 0};
  double bce_subtree[2] = {0, 0}, bce_anomaly[2] = {0, 0};
};

/// Total training loss: per stage, label-smoothed CE at each level over
/// non-abnormal nodes plus BCE on the refined subtree map and the anomaly
/// scores, stage-weighted.
template <typename S>
Var<S> loss(Tape<S>& tape, const ForwardVars<S>& fwd, const TreeContext<S>& ctx,
            const LossWeights<S>& w, S smoothing,
            LossBreakdown* breakdown = nullptr) {
  std::vector<Var<S>> stage_terms;
  std::vector<S> stage_weights;
  const int n_stages = fwd.has_stage2 ? 2 : 1;
  for (int i = 0; i < n_stages; ++i) {
    const StageVarOutputs<S>& st = i == 0 ? fwd.stage1 : fwd.stage2;
    std::vector<Var<S>> terms;
    std::vector<S> weights;
    Var<S> ce_lob = tape.ce_smoothed(st.z_lob, ctx.gt_lob, smoothing, ctx.include_ce);
    Var<S> ce_seg = tape.ce_smoothed(st.z_seg, ctx.gt_seg, smoothing, ctx.include_ce);
    Var<S> ce_sub = tape.ce_smoothed(st.z_sub, ctx.gt_sub, smoothing, ctx.include_ce);
    terms.insert(terms.end(), {ce_lob, ce_seg, ce_sub});
    weights.insert(weights.end(), {w.lob, w.seg, w.sub});
    Var<S> bce_t, bce_a;
    if (st.refined_map.valid()) {
      bce_t = tape.bce_mean(st.refined_map, ctx.gt_subtree);
      terms.push_back(bce_t);
      weights.push_back(w.subtree);
    }
    if (st.scores.valid()) {
      bce_a = tape.bce_mean(st.scores, ctx.gt_anomaly);
      terms.push_back(bce_a);
      weights.push_back(w.anomaly);
    }
    stage_terms.push_back(tape.sum_scaled(terms, weights));
    stage_weights.push_back(i == 0 ? w.stage1 : w.stage2);
    if (breakdown) {
      breakdown->ce_lob[i] = static_cast<double>(tape.val(ce_lob)(0, 0));
      breakdown->ce_seg[i] = static_cast<double>(tape.val(ce_seg)(0, 0));
      breakdown->ce_sub[i] = static_cast<double>(tape.val(ce_sub)(0, 0));
      if (bce_t.valid())
        breakdown->bce_subtree[i] = static_cast<double>(tape.val(bce_t)(0, 0));
      if (bce_a.valid())
        breakdown->bce_anomaly[i] = static_cast<double>(tape.val(bce_a)(0, 0));
    }
  }
  Var<S> total = tape.sum_scaled(stage_terms, stage_weights);
  if (breakdown) breakdown->total = static_cast<double>(tape.val(total)(0, 0));
  return total;
}

template <typename S>
struct StageOutputs {
  Matrix<S> z_lob, z_seg, z_sub;
  Matrix<S> raw_map, refined_map;
  Vector<S> scores;
  Matrix<S> anomaly_mask;
};

// Values extracted from a forward pass plus the final hard assignment:
// argmax of the last stage's logits, overridden to the outlier ids where the
// anomaly score clears the threshold.
template <typename S>
struct PredictionBundle {
  StageOutputs<S> stage1, stage2;
  bool has_stage2 = false;
  std::vector<int> final_lob, final_seg, final_sub;
  std::vector<char> abnormal_pred;
  Vector<S> final_scores;  // zero-length when the anomaly head is disabled
};

namespace detail {

template <typename S>
StageOutputs<S> materialize_stage(const Tape<S>& tape,
                                  const StageVarOutputs<S>& st) {
  StageOutputs<S> out;
  out.z_lob = tape.val(st.z_lob);
  out.z_seg = tape.val(st.z_seg);
  out.z_sub = tape.val(st.z_sub);
  if (st.raw_map.valid()) {
    out.raw_map = tape.val(st.raw_map);
    out.refined_map = tape.val(st.refined_map);
  }
  if (st.scores.valid()) {
    out.scores = tape.val(st.scores).col(0);
    out.anomaly_mask = tape.val(st.anomaly_mask_v);
  }
  return out;
}

template <typename S>
std::vector<int> argmax_rows(const Matrix<S>& z) {
  std::vector<int> out(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index best;
    z.row(i).maxCoeff(&best);
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace detail

template <typename S>
PredictionBundle<S> materialize(const Tape<S>& tape, const ForwardVars<S>& fwd,
                                const ModelState<S>& state) {
  PredictionBundle<S> out;
  out.stage1 = detail::materialize_stage(tape, fwd.stage1);
  out.has_stage2 = fwd.has_stage2;
  if (fwd.has_stage2) out.stage2 = detail::materialize_stage(tape, fwd.stage2);
  const StageOutputs<S>& fin = fwd.has_stage2 ? out.stage2 : out.stage1;
  out.final_lob = detail::argmax_rows(fin.z_lob);
  out.final_seg = detail::argmax_rows(fin.z_seg);
  out.final_sub = detail::argmax_rows(fin.z_sub);
  const Eigen::Index n = fin.z_lob.rows();
  out.abnormal_pred.assign(n, 0);
  if (fin.scores.size() > 0) {
    out.final_scores = fin.scores;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (static_cast<double>(fin.scores(i)) > state.config.anomaly_threshold) {
        out.abnormal_pred[i] = 1;
        out.final_lob[i] = state.n_lob;
        out.final_seg[i] = state.n_seg;
        out.final_sub[i] = state.n_sub;
      }
    }
  }
  return out;
}

/// Eval-mode forward on one tree.
template <typename S>
PredictionBundle<S> predict(const AirwayTree& tree, const Nomenclature& nom,
                            ModelState<S>& state, const Variant& variant) {
  if (nom.n_lob != state.n_lob || nom.n_seg != state.n_seg ||
      nom.n_sub != state.n_sub)
    throw ShapeMismatchError(
        "predict: tree nomenclature does not match the trained label space");
  Tape<S> tape;
  const TreeContext<S> ctx =
      TreeContext<S>::build(tree, nom, state.config.spd_clip);
  const ForwardVars<S> fwd = forward(tape, ctx, state, variant);
  return materialize(tape, fwd, state);
}

}  // namespace airway::nn
