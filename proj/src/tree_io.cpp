#include "airway/tree_io.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "airway/errors.hpp"

namespace airway {

using ordered_json = nlohmann::ordered_json;

namespace {

const ordered_json& require_field(const ordered_json& j, const char* key,
                                  const std::string& context) {
  auto it = j.find(key);
  if (it == j.end())
    throw ParseError(context + ": missing field \"" + key + "\"");
  return *it;
}

Vec3 parse_point(const ordered_json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 3)
    throw ParseError(context + ": expected [x,y,z]");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

std::vector<int> parse_int_array(const ordered_json& j,
                                 const std::string& context) {
  if (!j.is_array()) throw ParseError(context + ": expected an array");
  std::vector<int> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(v.get<int>());
  return out;
}

}  // namespace

std::string tree_to_json(const BranchGraph& graph) {
  ordered_json j;
  j["schema_version"] = kTreeSchemaVersion;
  j["root"] = graph.tree.root();
  ordered_json nodes = ordered_json::array();
  for (const BranchNode& n : graph.tree.nodes()) {
    ordered_json jn;
    jn["id"] = n.id;
    if (n.parent)
      jn["parent"] = *n.parent;
    else
      jn["parent"] = nullptr;
    jn["start"] = {n.start_point.x(), n.start_point.y(), n.start_point.z()};
    jn["end"] = {n.end_point.x(), n.end_point.y(), n.end_point.z()};
    jn["label_lob"] = n.label_lob;
    jn["label_seg"] = n.label_seg;
    jn["label_sub"] = n.label_sub;
    jn["is_abnormal"] = n.is_abnormal;
    nodes.push_back(std::move(jn));
  }
  j["nodes"] = std::move(nodes);
  ordered_json nom;
  nom["n_lob"] = graph.nomenclature.n_lob;
  nom["n_seg"] = graph.nomenclature.n_seg;
  nom["n_sub"] = graph.nomenclature.n_sub;
  nom["sub_to_seg"] = graph.nomenclature.sub_to_seg;
  nom["seg_to_lob"] = graph.nomenclature.seg_to_lob;
  nom["proper_segment_ids"] = graph.nomenclature.proper_segment_ids;
  j["nomenclature"] = std::move(nom);
  return j.dump(2) + "\n";
}

BranchGraph tree_from_json(const std::string& text,
                           const std::string& origin) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(origin + ": " + e.what());
  }

  try {
    const int version = require_field(j, "schema_version", origin).get<int>();
    if (version != kTreeSchemaVersion)
      throw SchemaVersionMismatchError(
          origin + ": schema_version " + std::to_string(version) +
          " unsupported (expected " + std::to_string(kTreeSchemaVersion) +
          ")");

    const auto& jnodes = require_field(j, "nodes", origin);
    if (!jnodes.is_array()) throw ParseError(origin + ": \"nodes\" must be an array");
    std::vector<BranchNode> nodes;
    nodes.reserve(jnodes.size());
    int idx = 0;
    for (const auto& jn : jnodes) {
      const std::string ctx = origin + ": nodes[" + std::to_string(idx) + "]";
      BranchNode n;
      n.id = require_field(jn, "id", ctx).get<int>();
      const auto& jparent = require_field(jn, "parent", ctx);
      if (!jparent.is_null()) n.parent = jparent.get<int>();
      n.start_point = parse_point(require_field(jn, "start", ctx), ctx + ".start");
      n.end_point = parse_point(require_field(jn, "end", ctx), ctx + ".end");
      n.label_lob = require_field(jn, "label_lob", ctx).get<int>();
      n.label_seg = require_field(jn, "label_seg", ctx).get<int>();
      n.label_sub = require_field(jn, "label_sub", ctx).get<int>();
      n.is_abnormal = require_field(jn, "is_abnormal", ctx).get<bool>();
      nodes.push_back(n);
      ++idx;
    }

    const auto& jnom = require_field(j, "nomenclature", origin);
    const std::string nctx = origin + ": nomenclature";
    BranchGraph graph;
    graph.nomenclature.n_lob = require_field(jnom, "n_lob", nctx).get<int>();
    graph.nomenclature.n_seg = require_field(jnom, "n_seg", nctx).get<int>();
    graph.nomenclature.n_sub = require_field(jnom, "n_sub", nctx).get<int>();
    graph.nomenclature.sub_to_seg =
        parse_int_array(require_field(jnom, "sub_to_seg", nctx), nctx);
    graph.nomenclature.seg_to_lob =
        parse_int_array(require_field(jnom, "seg_to_lob", nctx), nctx);
    graph.nomenclature.proper_segment_ids =
        parse_int_array(require_field(jnom, "proper_segment_ids", nctx), nctx);
    graph.nomenclature.validate();

    const int declared_root = require_field(j, "root", origin).get<int>();
    graph.tree = build_tree(std::move(nodes));
    if (graph.tree.root() != declared_root)
      throw ParseError(origin + ": declared root " +
                       std::to_string(declared_root) +
                       " does not match parent links (root is " +
                       std::to_string(graph.tree.root()) + ")");

    // Skeleton-derived graphs may have small gaps between a parent's end and
    // a child's start; warn, keep loading.
    std::vector<int> gap_ids;
    for (const BranchNode& n : graph.tree.nodes()) {
      if (!n.parent) continue;
      const Vec3& pend = graph.tree.node(*n.parent).end_point;
      if ((n.start_point - pend).norm() > 1e-6) gap_ids.push_back(n.id);
    }
    if (!gap_ids.empty()) {
      std::ostringstream msg;
      msg << "warning: " << origin << ": " << gap_ids.size()
          << " node(s) with start point away from parent end (>1e-6 mm):";
      for (std::size_t i = 0; i < gap_ids.size() && i < 10; ++i)
        msg << ' ' << gap_ids[i];
      if (gap_ids.size() > 10) msg << " ...";
      std::cerr << msg.str() << '\n';
    }
    return graph;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

BranchGraph load_tree(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return tree_from_json(buf.str(), path.string());
}

void save_tree(const std::filesystem::path& path, const BranchGraph& graph) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out << tree_to_json(graph);
}

}  // namespace airway
