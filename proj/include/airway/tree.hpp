#pragma once

#include <optional>
#include <vector>

#include "airway/types.hpp"

namespace airway {

// One airway branch between consecutive bifurcations. Labels are integer
// category ids at the lobar / segmental / subsegmental levels; abnormal
// branches carry the outlier id at every level.
struct BranchNode {
  int id = 0;
  std::optional<int> parent;
  Vec3 start_point = Vec3::Zero();
  Vec3 end_point = Vec3::Zero();
  int label_lob = 0;
  int label_seg = 0;
  int label_sub = 0;
  bool is_abnormal = false;

  double length() const { return (end_point - start_point).norm(); }
  Vec3 direction() const { return (end_point - start_point).normalized(); }
};

// Hierarchical label space. Counts exclude the outlier category; the outlier
// id at each level equals the count (appended after the normal categories).
struct Nomenclature {
  int n_lob = 0;
  int n_seg = 0;
  int n_sub = 0;
  std::vector<int> sub_to_seg;   // size n_sub, values in [0, n_seg)
  std::vector<int> seg_to_lob;   // size n_seg, values in [0, n_lob)
  std::vector<int> proper_segment_ids;  // true segments: no trunk, no outlier

  int outlier_lob() const { return n_lob; }
  int outlier_seg() const { return n_seg; }
  int outlier_sub() const { return n_sub; }

  bool is_proper_segment(int seg_id) const;
  void validate() const;  // throws DataError on an inconsistent label space
};

class AirwayTree {
 public:
  const std::vector<BranchNode>& nodes() const { return nodes_; }
  const BranchNode& node(int id) const { return nodes_[id]; }
  int root() const { return root_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<int>& children(int id) const { return children_[id]; }
  int depth(int id) const { return depths_[id]; }
  int max_depth() const { return max_depth_; }

  friend AirwayTree build_tree(std::vector<BranchNode> nodes);

 private:
  std::vector<BranchNode> nodes_;
  std::vector<std::vector<int>> children_;  // child-sorted by id
  std::vector<int> depths_;
  int root_ = -1;
  int max_depth_ = 0;
};

/// Validates parent links and materializes children lists and depths.
/// Throws MultipleRootsError, CycleDetectedError or DisconnectedNodeError
/// naming the offending node ids.
AirwayTree build_tree(std::vector<BranchNode> nodes);

/// Exact hop distances on the undirected tree, via depths and lowest common
/// ancestors.
SpdMatrix shortest_path_distances(const AirwayTree& tree);

/// Strict-descendant indicator: values(i,j) = 1 iff j is below i.
DescendantMask descendant_mask(const AirwayTree& tree);

/// Applies sub_to_seg then seg_to_lob elementwise; outlier maps to outlier.
/// Throws UnknownCategoryError for ids outside the label space.
std::pair<std::vector<int>, std::vector<int>> project_labels(
    const std::vector<int>& sub_labels, const Nomenclature& nom);

}  // namespace airway
