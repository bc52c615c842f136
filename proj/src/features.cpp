#include "airway/features.hpp"

#include <algorithm>

namespace airway {

namespace {

Vec3 normalize_to_box(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    const double span = hi[a] - lo[a];
    out[a] = span > 0.0 ? (p[a] - lo[a]) / span : 0.5;
  }
  return out;
}

}  // namespace

FeatureMatrix extract_features(const AirwayTree& tree) {
  const int n = tree.size();
  FeatureMatrix fm;
  fm.feature_names = {"start_x", "start_y", "start_z", "mid_x",  "mid_y",
                      "mid_z",   "end_x",   "end_y",   "end_z",  "dir_x",
                      "dir_y",   "dir_z",   "rel_length", "rel_depth",
                      "parent_cos", "child_count"};
  fm.values.resize(n, kFeatureDim);

  Vec3 lo = tree.node(0).start_point, hi = tree.node(0).start_point;
  for (const BranchNode& b : tree.nodes()) {
    lo = lo.cwiseMin(b.start_point).cwiseMin(b.end_point);
    hi = hi.cwiseMax(b.start_point).cwiseMax(b.end_point);
  }

  const double trunk_length = tree.node(tree.root()).length();
  const double depth_scale =
      tree.max_depth() > 0 ? 1.0 / tree.max_depth() : 0.0;

  for (int i = 0; i < n; ++i) {
    const BranchNode& b = tree.node(i);
    const Vec3 start = normalize_to_box(b.start_point, lo, hi);
    const Vec3 mid = normalize_to_box(0.5 * (b.start_point + b.end_point), lo, hi);
    const Vec3 end = normalize_to_box(b.end_point, lo, hi);
    const Vec3 dir = b.direction();
    double parent_cos = 1.0;
    if (b.parent) parent_cos = dir.dot(tree.node(*b.parent).direction());
    const double child_frac =
        std::min(1.0, static_cast<double>(tree.children(i).size()) / 3.0);

    fm.values.row(i) << start.x(), start.y(), start.z(), mid.x(), mid.y(),
        mid.z(), end.x(), end.y(), end.z(), dir.x(), dir.y(), dir.z(),
        b.length() / trunk_length, tree.depth(i) * depth_scale, parent_cos,
        child_frac;
  }
  return fm;
}

}  // namespace airway
