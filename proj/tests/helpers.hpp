#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "airway/autodiff.hpp"
#include "airway/rng.hpp"
#include "airway/tree.hpp"

namespace testutil {

inline airway::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols,
                                      airway::Rng& rng, double scale = 1.0) {
  airway::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = rng.uniform(-scale, scale);
  return m;
}

/// Random rooted tree on n nodes (node 0 is the root, parents precede
/// children), with non-degenerate random geometry and labels drawn from
/// [0, n_classes) at every level.
inline airway::AirwayTree random_tree(int n, airway::Rng& rng,
                                      int n_classes = 5) {
  std::vector<airway::BranchNode> nodes(n);
  for (int i = 0; i < n; ++i) {
    nodes[i].id = i;
    if (i > 0) nodes[i].parent = static_cast<int>(rng.uniform_int(0, i - 1));
    nodes[i].start_point = i == 0 ? airway::Vec3::Zero()
                                  : nodes[*nodes[i].parent].end_point;
    nodes[i].end_point =
        nodes[i].start_point + rng.unit_vector() * rng.uniform(0.5, 3.0);
    nodes[i].label_lob = static_cast<int>(rng.uniform_int(0, n_classes - 1));
    nodes[i].label_seg = static_cast<int>(rng.uniform_int(0, n_classes - 1));
    nodes[i].label_sub = static_cast<int>(rng.uniform_int(0, n_classes - 1));
  }
  return airway::build_tree(std::move(nodes));
}

/// Hop distances by breadth-first search from every source on the undirected
/// adjacency; independent of the depth/LCA implementation.
inline airway::MatrixXi bfs_distance_oracle(const airway::AirwayTree& tree) {
  const int n = tree.size();
  std::vector<std::vector<int>> adj(n);
  for (const airway::BranchNode& b : tree.nodes())
    if (b.parent) {
      adj[b.id].push_back(*b.parent);
      adj[*b.parent].push_back(b.id);
    }
  airway::MatrixXi dist(n, n);
  dist.setConstant(-1);
  for (int s = 0; s < n; ++s) {
    std::vector<int> queue{s};
    dist(s, s) = 0;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const int v = queue[head];
      for (int w : adj[v])
        if (dist(s, w) < 0) {
          dist(s, w) = dist(s, v) + 1;
          queue.push_back(w);
        }
    }
  }
  return dist;
}

/// Strict-descendant indicator by explicit depth-first enumeration per node.
inline airway::MatrixXi dfs_descendant_oracle(const airway::AirwayTree& tree) {
  const int n = tree.size();
  airway::MatrixXi mask(n, n);
  mask.setZero();
  for (int v = 0; v < n; ++v) {
    std::vector<int> stack(tree.children(v).begin(), tree.children(v).end());
    while (!stack.empty()) {
      const int w = stack.back();
      stack.pop_back();
      mask(v, w) = 1;
      for (int c : tree.children(w)) stack.push_back(c);
    }
  }
  return mask;
}

using GradMap = std::map<std::string, airway::MatrixXd>;

/// Copies every registered parameter gradient off the tape (after backward).
template <typename S>
void collect_grads(const airway::ad::Tape<S>& tape, GradMap* grads) {
  if (!grads) return;
  for (const auto& e : tape.params())
    (*grads)[e.name] =
        tape.grad(airway::ad::Var<S>{e.node}).template cast<double>();
}

/// `run(grads)` evaluates the scalar objective from the current parameter
/// values; when grads != nullptr it must also backpropagate and fill the map.
/// Central finite differences (step eps) against every entry of every listed
/// parameter; returns the largest relative error.
inline double max_grad_rel_err(
    const std::vector<std::pair<std::string, airway::MatrixXd*>>& params,
    const std::function<double(GradMap*)>& run, double eps = 1e-5) {
  GradMap analytic;
  run(&analytic);
  double worst = 0.0;
  for (const auto& [name, mat] : params) {
    const auto it = analytic.find(name);
    if (it == analytic.end())
      throw std::runtime_error("no analytic gradient recorded for " + name);
    for (Eigen::Index i = 0; i < mat->rows(); ++i)
      for (Eigen::Index j = 0; j < mat->cols(); ++j) {
        const double saved = (*mat)(i, j);
        (*mat)(i, j) = saved + eps;
        const double up = run(nullptr);
        (*mat)(i, j) = saved - eps;
        const double down = run(nullptr);
        (*mat)(i, j) = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double a = it->second(i, j);
        if (std::abs(a) < 1e-9 && std::abs(numeric) < 1e-9) continue;
        const double rel = std::abs(a - numeric) /
                           std::max({std::abs(a), std::abs(numeric), 1e-6});
        worst = std::max(worst, rel);
      }
  }
  return worst;
}

}  // namespace testutil
