#include "airway/dot_export.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "airway/errors.hpp"

namespace airway {

namespace {

// Well-spaced fill colors per segment id (golden-ratio hue stepping).
std::string segment_color(int seg_id, const Nomenclature& nom) {
  if (!nom.is_proper_segment(seg_id))
    return "gray80";  // trunk-side / outlier categories
  const double hue = std::fmod(0.61803398875 * seg_id, 1.0);
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.3f 0.450 0.950", hue);
  return buf;
}

}  // namespace

std::string export_dot(const AirwayTree& tree, const Nomenclature& nom,
                       const TreePrediction& pred) {
  std::ostringstream out;
  out << "digraph airway {\n"
      << "  rankdir=TB;\n"
      << "  node [shape=ellipse, style=filled, fontsize=10];\n";
  for (const BranchNode& b : tree.nodes()) {
    auto it = pred.nodes.find(b.id);
    if (it == pred.nodes.end())
      throw ParseError("export_dot: no prediction for node " +
                       std::to_string(b.id));
    const NodePrediction& p = it->second;
    const bool wrong = p.seg != b.label_seg;
    const std::string fill = wrong ? "red" : segment_color(p.seg, nom);
    out << "  n" << b.id << " [label=\"" << b.id << "\\nseg " << p.seg
        << "\\nsub " << p.sub << "\", fillcolor=\"" << fill << "\"";
    if (p.is_abnormal_pred) out << ", style=\"filled,dashed\"";
    out << "];\n";
  }
  for (const BranchNode& b : tree.nodes())
    if (b.parent) out << "  n" << *b.parent << " -> n" << b.id << ";\n";
  out << "}\n";
  return out.str();
}

void save_dot(const std::filesystem::path& path, const AirwayTree& tree,
              const Nomenclature& nom, const TreePrediction& pred) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out << export_dot(tree, nom, pred);
}

}  // namespace airway
