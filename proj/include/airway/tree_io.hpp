#pragma once

#include <filesystem>
#include <string>

#include "airway/tree.hpp"

namespace airway {

// Branch-graph interchange content: the tree plus the label space it is
// annotated against. Coordinates are millimeters, labels integer ids,
// outlier id = category count at each level.
struct BranchGraph {
  AirwayTree tree;
  Nomenclature nomenclature;
};

inline constexpr int kTreeSchemaVersion = 1;

/// Canonical UTF-8 JSON serialization; stable byte-for-byte for a given tree.
std::string tree_to_json(const BranchGraph& graph);

/// Parses interchange JSON. Throws ParseError with field context or
/// SchemaVersionMismatchError. Warns (stderr) on parent/child geometric
/// discontinuities beyond 1e-6 mm instead of rejecting.
BranchGraph tree_from_json(const std::string& text,
                           const std::string& origin = "<string>");

BranchGraph load_tree(const std::filesystem::path& path);
void save_tree(const std::filesystem::path& path, const BranchGraph& graph);

}  // namespace airway
