#pragma once

#include <filesystem>
#include <string>

#include "airway/prediction_io.hpp"
#include "airway/tree.hpp"

namespace airway {

/// Graphviz rendering of a tree with its predictions: nodes colored by
/// predicted segment, mispredicted segments filled red, predicted-abnormal
/// nodes drawn with a dashed border.
std::string export_dot(const AirwayTree& tree, const Nomenclature& nom,
                       const TreePrediction& pred);

void save_dot(const std::filesystem::path& path, const AirwayTree& tree,
              const Nomenclature& nom, const TreePrediction& pred);

}  // namespace airway
