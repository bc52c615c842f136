#pragma once

#include <string>
#include <vector>

#include "airway/tree.hpp"

namespace airway {

inline constexpr int kFeatureDim = 16;

// N x 16 per-branch geometric features. Coordinate blocks are min-max
// normalized by the tree bounding box, so rows are invariant under rigid
// translation and uniform scaling of the whole tree.
struct FeatureMatrix {
  MatrixXd values;
  std::vector<std::string> feature_names;
};

FeatureMatrix extract_features(const AirwayTree& tree);

}  // namespace airway
