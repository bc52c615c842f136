#pragma once

#include <string>
#include <vector>

#include "airway/tree.hpp"

namespace airway::metrics {

/// Node-level accuracy; with exclude_abnormal, ground-truth-abnormal nodes
/// drop out of the denominator (mirrors their exclusion from the CE loss).
double accuracy(const std::vector<int>& pred, const std::vector<int>& gt,
                const std::vector<char>& gt_abnormal, bool exclude_abnormal);

struct Prf {
  double precision = 0, recall = 0, f1 = 0;
};

/// Macro-averaged precision/recall/F1 over the classes present in the ground
/// truth; classes absent from the ground truth are skipped.
Prf macro_prf(const std::vector<int>& pred, const std::vector<int>& gt,
              int n_classes);

struct ConsistencyResult {
  double cs_eligible = 1.0;  // headline: denominator = eligible nodes
  double cs_all = 1.0;       // denominator = all nodes
  int n_eligible = 0;
  int n_consistent_eligible = 0;
  int n_uniform_all = 0;
  int n_nodes = 0;
};

/// Topology consistency: a node is eligible when its predicted segmental
/// label is a proper segment; it is consistent when every descendant shares
/// that prediction. 1.0 when nothing is eligible.
ConsistencyResult consistency(const std::vector<int>& pred_seg,
                              const AirwayTree& tree, const Nomenclature& nom);

struct LevelMetrics {
  double acc = 0, pr = 0, rc = 0, f1 = 0;
};

struct EvalReport {
  LevelMetrics lobar, segmental, subsegmental;
  double cs_eligible = 1.0, cs_all = 1.0;
  double anomaly_precision = 0, anomaly_recall = 0;
  double hierarchy_agreement_seg = 0, hierarchy_agreement_lob = 0;
  int n_trees = 0, n_nodes = 0, n_abnormal_gt = 0;
};

// Pools node-level results over a set of trees; class metrics exclude
// ground-truth-abnormal nodes, which are scored separately through anomaly
// precision/recall at the configured threshold.
class EvalAccumulator {
 public:
  explicit EvalAccumulator(const Nomenclature& nom) : nom_(nom) {}

  void add_tree(const AirwayTree& tree, const std::vector<int>& pred_lob,
                const std::vector<int>& pred_seg,
                const std::vector<int>& pred_sub,
                const std::vector<char>& abnormal_pred);

  EvalReport finish() const;

 private:
  Nomenclature nom_;
  std::vector<int> pred_lob_, pred_seg_, pred_sub_;
  std::vector<int> gt_lob_, gt_seg_, gt_sub_;
  std::vector<char> gt_abnormal_;
  int n_trees_ = 0;
  int cs_eligible_den_ = 0, cs_eligible_num_ = 0;
  int cs_all_num_ = 0, cs_all_den_ = 0;
  int anomaly_tp_ = 0, anomaly_fp_ = 0, anomaly_fn_ = 0;
  int hier_seg_match_ = 0, hier_lob_match_ = 0;
};

std::string report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);

/// One ablation grid row in Table layout:
/// method, lobar ACC/PR/RC/F1, segmental CS/ACC/PR/RC/F1, subseg ACC/PR/RC/F1.
std::string ablation_csv_header();
std::string ablation_csv_row(const std::string& method, const EvalReport& report);

}  // namespace airway::metrics
