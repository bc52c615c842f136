#include "airway/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "airway/errors.hpp"

namespace airway::metrics {

double accuracy(const std::vector<int>& pred, const std::vector<int>& gt,
                const std::vector<char>& gt_abnormal, bool exclude_abnormal) {
  if (pred.size() != gt.size() || gt.size() != gt_abnormal.size())
    throw ShapeMismatchError("accuracy: size mismatch");
  long correct = 0, total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (exclude_abnormal && gt_abnormal[i]) continue;
    ++total;
    correct += pred[i] == gt[i];
  }
  return total == 0 ? 1.0 : static_cast<double>(correct) / total;
}

Prf macro_prf(const std::vector<int>& pred, const std::vector<int>& gt,
              int n_classes) {
  if (pred.size() != gt.size())
    throw ShapeMismatchError("macro_prf: size mismatch");
  std::set<int> present(gt.begin(), gt.end());
  if (present.empty()) return Prf{1.0, 1.0, 1.0};
  double sum_p = 0, sum_r = 0, sum_f = 0;
  for (int c : present) {
    if (c < 0 || c > n_classes)
      throw ShapeMismatchError("macro_prf: ground-truth class out of range");
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == c && pred[i] == c) ++tp;
      if (gt[i] != c && pred[i] == c) ++fp;
      if (gt[i] == c && pred[i] != c) ++fn;
    }
    const double p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    sum_p += p;
    sum_r += r;
    sum_f += p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  const double k = static_cast<double>(present.size());
  return Prf{sum_p / k, sum_r / k, sum_f / k};
}

ConsistencyResult consistency(const std::vector<int>& pred_seg,
                              const AirwayTree& tree, const Nomenclature& nom) {
  const int n = tree.size();
  if (static_cast<int>(pred_seg.size()) != n)
    throw ShapeMismatchError("consistency: prediction size mismatch");

  std::vector<int> order;
  order.reserve(n);
  {
    std::vector<int> stack{tree.root()};
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      order.push_back(v);
      for (int c : tree.children(v)) stack.push_back(c);
    }
  }

  // Distinct non-outlier predicted labels in each subtree (including the
  // node itself): 0 = none, 1 = a single label, 2 = mixed. Outlier-predicted
  // nodes sit outside the nomenclature and do not break uniformity.
  const int outlier = nom.outlier_seg();
  std::vector<char> state(n, 0);
  std::vector<int> subtree_label(n, -1);
  auto merge = [&](int v, int label) {
    if (label < 0 || state[v] == 2) return;
    if (state[v] == 0) {
      state[v] = 1;
      subtree_label[v] = label;
    } else if (subtree_label[v] != label) {
      state[v] = 2;
    }
  };
  // uniform[v]: every non-outlier strict descendant of v shares pred_seg[v].
  std::vector<char> uniform(n, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int v = *it;
    char below = 0;
    int below_label = -1;
    for (int c : tree.children(v)) {
      if (state[c] == 2) below = 2;
      if (state[c] == 1) {
        if (below == 0) {
          below = 1;
          below_label = subtree_label[c];
        } else if (below == 1 && below_label != subtree_label[c]) {
          below = 2;
        }
      }
    }
    uniform[v] = below == 0 || (below == 1 && below_label == pred_seg[v]);
    state[v] = below;
    subtree_label[v] = below_label;
    if (pred_seg[v] != outlier) merge(v, pred_seg[v]);
  }

  ConsistencyResult r;
  r.n_nodes = n;
  for (int v = 0; v < n; ++v) {
    if (uniform[v]) ++r.n_uniform_all;
    if (!nom.is_proper_segment(pred_seg[v])) continue;
    ++r.n_eligible;
    if (uniform[v]) ++r.n_consistent_eligible;
  }
  r.cs_eligible = r.n_eligible == 0
                      ? 1.0
                      : static_cast<double>(r.n_consistent_eligible) / r.n_eligible;
  r.cs_all = n == 0 ? 1.0 : static_cast<double>(r.n_uniform_all) / n;
  return r;
}

void EvalAccumulator::add_tree(const AirwayTree& tree,
                               const std::vector<int>& pred_lob,
                               const std::vector<int>& pred_seg,
                               const std::vector<int>& pred_sub,
                               const std::vector<char>& abnormal_pred) {
  const int n = tree.size();
  if (static_cast<int>(pred_lob.size()) != n ||
      static_cast<int>(pred_seg.size()) != n ||
      static_cast<int>(pred_sub.size()) != n ||
      static_cast<int>(abnormal_pred.size()) != n)
    throw ShapeMismatchError("eval: prediction size mismatch");
  ++n_trees_;

  for (const BranchNode& b : tree.nodes()) {
    gt_lob_.push_back(b.label_lob);
    gt_seg_.push_back(b.label_seg);
    gt_sub_.push_back(b.label_sub);
    gt_abnormal_.push_back(b.is_abnormal ? 1 : 0);
    const int i = b.id;
    pred_lob_.push_back(pred_lob[i]);
    pred_seg_.push_back(pred_seg[i]);
    pred_sub_.push_back(pred_sub[i]);
    if (b.is_abnormal && abnormal_pred[i]) ++anomaly_tp_;
    if (!b.is_abnormal && abnormal_pred[i]) ++anomaly_fp_;
    if (b.is_abnormal && !abnormal_pred[i]) ++anomaly_fn_;
  }

  const ConsistencyResult cs = consistency(pred_seg, tree, nom_);
  cs_eligible_den_ += cs.n_eligible;
  cs_eligible_num_ += cs.n_consistent_eligible;
  cs_all_num_ += cs.n_uniform_all;
  cs_all_den_ += cs.n_nodes;

  const auto [proj_seg, proj_lob] = project_labels(pred_sub, nom_);
  for (int i = 0; i < n; ++i) {
    hier_seg_match_ += proj_seg[i] == pred_seg[i];
    hier_lob_match_ += proj_lob[i] == pred_lob[i];
  }
}

EvalReport EvalAccumulator::finish() const {
  EvalReport rep;
  rep.n_trees = n_trees_;
  rep.n_nodes = static_cast<int>(gt_lob_.size());
  rep.n_abnormal_gt =
      static_cast<int>(std::count(gt_abnormal_.begin(), gt_abnormal_.end(), 1));

  auto level = [&](const std::vector<int>& pred, const std::vector<int>& gt,
                   int n_classes) {
    LevelMetrics m;
    m.acc = accuracy(pred, gt, gt_abnormal_, /*exclude_abnormal=*/true);
    std::vector<int> fp, fg;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt_abnormal_[i]) continue;
      fp.push_back(pred[i]);
      fg.push_back(gt[i]);
    }
    const Prf prf = macro_prf(fp, fg, n_classes);
    m.pr = prf.precision;
    m.rc = prf.recall;
    m.f1 = prf.f1;
    return m;
  };
  rep.lobar = level(pred_lob_, gt_lob_, nom_.n_lob);
  rep.segmental = level(pred_seg_, gt_seg_, nom_.n_seg);
  rep.subsegmental = level(pred_sub_, gt_sub_, nom_.n_sub);

  rep.cs_eligible = cs_eligible_den_ == 0
                        ? 1.0
                        : static_cast<double>(cs_eligible_num_) / cs_eligible_den_;
  rep.cs_all = cs_all_den_ == 0
                   ? 1.0
                   : static_cast<double>(cs_all_num_) / cs_all_den_;

  rep.anomaly_precision = anomaly_tp_ + anomaly_fp_ > 0
                              ? static_cast<double>(anomaly_tp_) /
                                    (anomaly_tp_ + anomaly_fp_)
                              : 0.0;
  rep.anomaly_recall = anomaly_tp_ + anomaly_fn_ > 0
                           ? static_cast<double>(anomaly_tp_) /
                                 (anomaly_tp_ + anomaly_fn_)
                           : 1.0;
  if (rep.n_nodes > 0) {
    rep.hierarchy_agreement_seg =
        static_cast<double>(hier_seg_match_) / rep.n_nodes;
    rep.hierarchy_agreement_lob =
        static_cast<double>(hier_lob_match_) / rep.n_nodes;
  }
  return rep;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["n_trees"] = r.n_trees;
  j["n_nodes"] = r.n_nodes;
  j["n_abnormal_gt"] = r.n_abnormal_gt;
  auto level = [](const LevelMetrics& m) {
    return nlohmann::ordered_json{
        {"acc", m.acc}, {"pr", m.pr}, {"rc", m.rc}, {"f1", m.f1}};
  };
  j["lobar"] = level(r.lobar);
  j["segmental"] = level(r.segmental);
  j["segmental"]["cs"] = r.cs_eligible;
  j["segmental"]["cs_all"] = r.cs_all;
  j["subsegmental"] = level(r.subsegmental);
  j["anomaly"] = nlohmann::ordered_json{{"precision", r.anomaly_precision},
                                        {"recall", r.anomaly_recall}};
  j["hierarchy_agreement"] =
      nlohmann::ordered_json{{"seg", r.hierarchy_agreement_seg},
                             {"lob", r.hierarchy_agreement_lob}};
  return j.dump(2) + "\n";
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string report_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "lob_acc,lob_pr,lob_rc,lob_f1,seg_cs,seg_acc,seg_pr,seg_rc,seg_f1,"
         "sub_acc,sub_pr,sub_rc,sub_f1,seg_cs_all,anomaly_precision,"
         "anomaly_recall,hierarchy_seg,hierarchy_lob,n_trees,n_nodes\n";
  out << fmt(r.lobar.acc) << ',' << fmt(r.lobar.pr) << ',' << fmt(r.lobar.rc)
      << ',' << fmt(r.lobar.f1) << ',' << fmt(r.cs_eligible) << ','
      << fmt(r.segmental.acc) << ',' << fmt(r.segmental.pr) << ','
      << fmt(r.segmental.rc) << ',' << fmt(r.segmental.f1) << ','
      << fmt(r.subsegmental.acc) << ',' << fmt(r.subsegmental.pr) << ','
      << fmt(r.subsegmental.rc) << ',' << fmt(r.subsegmental.f1) << ','
      << fmt(r.cs_all) << ',' << fmt(r.anomaly_precision) << ','
      << fmt(r.anomaly_recall) << ',' << fmt(r.hierarchy_agreement_seg) << ','
      << fmt(r.hierarchy_agreement_lob) << ',' << r.n_trees << ','
      << r.n_nodes << "\n";
  return out.str();
}

std::string ablation_csv_header() {
  return "method,lob_acc,lob_pr,lob_rc,lob_f1,seg_cs,seg_acc,seg_pr,seg_rc,"
         "seg_f1,sub_acc,sub_pr,sub_rc,sub_f1\n";
}

std::string ablation_csv_row(const std::string& method, const EvalReport& r) {
  std::ostringstream out;
  out << method << ',' << fmt(r.lobar.acc) << ',' << fmt(r.lobar.pr) << ','
      << fmt(r.lobar.rc) << ',' << fmt(r.lobar.f1) << ',' << fmt(r.cs_eligible)
      << ',' << fmt(r.segmental.acc) << ',' << fmt(r.segmental.pr) << ','
      << fmt(r.segmental.rc) << ',' << fmt(r.segmental.f1) << ','
      << fmt(r.subsegmental.acc) << ',' << fmt(r.subsegmental.pr) << ','
      << fmt(r.subsegmental.rc) << ',' << fmt(r.subsegmental.f1) << "\n";
  return out.str();
}

}  // namespace airway::metrics
