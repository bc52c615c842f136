#include "airway/tree.hpp"

#include <algorithm>
#include <string>

#include "airway/errors.hpp"

namespace airway {

bool Nomenclature::is_proper_segment(int seg_id) const {
  return std::find(proper_segment_ids.begin(), proper_segment_ids.end(),
                   seg_id) != proper_segment_ids.end();
}

void Nomenclature::validate() const {
  if (n_lob <= 0 || n_seg <= 0 || n_sub <= 0)
    throw DataError("nomenclature: category counts must be positive");
  if (static_cast<int>(sub_to_seg.size()) != n_sub)
    throw DataError("nomenclature: sub_to_seg must have n_sub entries");
  if (static_cast<int>(seg_to_lob.size()) != n_seg)
    throw DataError("nomenclature: seg_to_lob must have n_seg entries");
  for (int c = 0; c < n_sub; ++c)
    if (sub_to_seg[c] < 0 || sub_to_seg[c] >= n_seg)
      throw DataError("nomenclature: sub_to_seg[" + std::to_string(c) +
                      "] out of range");
  for (int c = 0; c < n_seg; ++c)
    if (seg_to_lob[c] < 0 || seg_to_lob[c] >= n_lob)
      throw DataError("nomenclature: seg_to_lob[" + std::to_string(c) +
                      "] out of range");
  for (int s : proper_segment_ids)
    if (s < 0 || s >= n_seg)
      throw DataError("nomenclature: proper segment id " + std::to_string(s) +
                      " out of range");
}

AirwayTree build_tree(std::vector<BranchNode> nodes) {
  const int n = static_cast<int>(nodes.size());
  if (n == 0) throw DisconnectedNodeError("build_tree: empty node list");
  for (int i = 0; i < n; ++i) {
    if (nodes[i].id != i)
      throw DisconnectedNodeError("build_tree: node at position " +
                                  std::to_string(i) + " has id " +
                                  std::to_string(nodes[i].id) +
                                  "; ids must be 0..N-1 in order");
    if (nodes[i].parent && (*nodes[i].parent < 0 || *nodes[i].parent >= n))
      throw DisconnectedNodeError("build_tree: node " + std::to_string(i) +
                                  " has out-of-range parent " +
                                  std::to_string(*nodes[i].parent));
  }

  std::vector<int> roots;
  for (int i = 0; i < n; ++i)
    if (!nodes[i].parent) roots.push_back(i);
  if (roots.size() > 1) {
    std::string ids;
    for (int r : roots) ids += (ids.empty() ? "" : ",") + std::to_string(r);
    throw MultipleRootsError("build_tree: multiple roots: " + ids);
  }

  // Walk each ancestor chain; a chain that never reaches a root is a cycle.
  std::vector<int> state(n, 0);  // 0 unvisited, 1 on current path, 2 done
  for (int i = 0; i < n; ++i) {
    if (state[i] == 2) continue;
    std::vector<int> path;
    int v = i;
    while (true) {
      if (state[v] == 1) {
        std::string ids;
        for (auto it = std::find(path.begin(), path.end(), v);
             it != path.end(); ++it)
          ids += (ids.empty() ? "" : ",") + std::to_string(*it);
        throw CycleDetectedError("build_tree: cycle through nodes " + ids);
      }
      if (state[v] == 2) break;
      state[v] = 1;
      path.push_back(v);
      if (!nodes[v].parent) break;
      v = *nodes[v].parent;
    }
    for (int p : path) state[p] = 2;
  }
  if (roots.empty())
    throw CycleDetectedError("build_tree: no root node (all parents cyclic)");

  AirwayTree tree;
  tree.root_ = roots.front();
  tree.children_.assign(n, {});
  for (int i = 0; i < n; ++i)
    if (nodes[i].parent) tree.children_[*nodes[i].parent].push_back(i);
  for (auto& c : tree.children_) std::sort(c.begin(), c.end());

  tree.depths_.assign(n, 0);
  tree.max_depth_ = 0;
  // Parent ids need not precede children; resolve depths by chain walking.
  std::vector<char> have(n, 0);
  have[tree.root_] = 1;
  for (int i = 0; i < n; ++i) {
    std::vector<int> chain;
    int v = i;
    while (!have[v]) {
      chain.push_back(v);
      v = *nodes[v].parent;
    }
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      tree.depths_[*it] = tree.depths_[*nodes[*it].parent] + 1;
      have[*it] = 1;
    }
    tree.max_depth_ = std::max(tree.max_depth_, tree.depths_[i]);
  }
  tree.nodes_ = std::move(nodes);
  return tree;
}

SpdMatrix shortest_path_distances(const AirwayTree& tree) {
  const int n = tree.size();
  SpdMatrix spd;
  spd.values.setZero(n, n);
  // psi(i,j) = depth(i) + depth(j) - 2 * depth(lca(i,j))
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      int a = i, b = j;
      while (tree.depth(a) > tree.depth(b)) a = *tree.node(a).parent;
      while (tree.depth(b) > tree.depth(a)) b = *tree.node(b).parent;
      while (a != b) {
        a = *tree.node(a).parent;
        b = *tree.node(b).parent;
      }
      const int d = tree.depth(i) + tree.depth(j) - 2 * tree.depth(a);
      spd.values(i, j) = d;
      spd.values(j, i) = d;
    }
  }
  return spd;
}

DescendantMask descendant_mask(const AirwayTree& tree) {
  const int n = tree.size();
  DescendantMask mask;
  mask.values.setZero(n, n);
  for (int j = 0; j < n; ++j) {
    int v = j;
    while (tree.node(v).parent) {
      v = *tree.node(v).parent;
      mask.values(v, j) = 1;
    }
  }
  return mask;
}

std::pair<std::vector<int>, std::vector<int>> project_labels(
    const std::vector<int>& sub_labels, const Nomenclature& nom) {
  std::vector<int> seg(sub_labels.size()), lob(sub_labels.size());
  for (std::size_t i = 0; i < sub_labels.size(); ++i) {
    const int c = sub_labels[i];
    if (c == nom.outlier_sub()) {
      seg[i] = nom.outlier_seg();
      lob[i] = nom.outlier_lob();
      continue;
    }
    if (c < 0 || c > nom.n_sub)
      throw UnknownCategoryError("project_labels: unknown subsegmental id " +
                                 std::to_string(c) + " at node " +
                                 std::to_string(i));
    seg[i] = nom.sub_to_seg[c];
    lob[i] = nom.seg_to_lob[seg[i]];
  }
  return {std::move(seg), std::move(lob)};
}

}  // namespace airway
