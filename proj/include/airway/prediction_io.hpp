#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "airway/model.hpp"

namespace airway {

struct NodePrediction {
  int lob = 0, seg = 0, sub = 0;
  double anomaly_score = 0.0;
  bool is_abnormal_pred = false;
};

// Per-tree prediction file: a JSON object keyed by node id, each entry
// carrying the three final labels, the anomaly score, and the hard
// abnormality call.
struct TreePrediction {
  std::map<int, NodePrediction> nodes;
};

template <typename S>
TreePrediction to_prediction(const nn::PredictionBundle<S>& bundle) {
  TreePrediction out;
  for (std::size_t i = 0; i < bundle.final_lob.size(); ++i) {
    NodePrediction p;
    p.lob = bundle.final_lob[i];
    p.seg = bundle.final_seg[i];
    p.sub = bundle.final_sub[i];
    p.anomaly_score = bundle.final_scores.size() > 0
                          ? static_cast<double>(bundle.final_scores(i))
                          : 0.0;
    p.is_abnormal_pred = bundle.abnormal_pred[i] != 0;
    out.nodes.emplace(static_cast<int>(i), p);
  }
  return out;
}

std::string predictions_to_json(const TreePrediction& pred);
TreePrediction predictions_from_json(const std::string& text,
                                     const std::string& origin);
void save_predictions(const std::filesystem::path& path,
                      const TreePrediction& pred);
TreePrediction load_predictions(const std::filesystem::path& path);

/// CSV dump of an N x N map (soft subtree raw/refined, ground truth, ...).
void save_matrix_csv(const std::filesystem::path& path, const MatrixXd& m);

}  // namespace airway
