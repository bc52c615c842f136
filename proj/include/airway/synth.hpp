#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "airway/rng.hpp"
#include "airway/tree.hpp"

namespace airway::synth {

struct IntRange {
  int min = 1;
  int max = 1;
};

// Configuration for deterministic synthetic bronchial trees. Category counts
// are derived from the layout: every lobe and proper segment owns a fixed id
// block, plus continuation categories so each branch carries a
// projection-consistent label at every level, plus one trunk category per
// level. Outlier ids come after all normal categories.
struct GenConfig {
  std::uint64_t seed = 1;
  int n_lobes = 2;
  IntRange segments_per_lobe{2, 2};
  IntRange subsegments_per_segment{2, 2};
  int extra_generations = 2;  // branching below the subsegmental level
  double anomaly_rate = 0.05;
  double atrophy_rate = 0.0;
  double distortion_angle_deg = 0.0;
  double length_mean_mm = 12.0;
  double length_std_mm = 2.0;
  double radius_mean_mm = 2.0;
  double radius_std_mm = 0.4;

  void validate() const;  // throws ConfigInfeasibleError
};

/// Label space implied by the layout (counts use the range maxima).
Nomenclature make_nomenclature(const GenConfig& cfg);

/// Deterministic labeled tree for (cfg.seed, index): trunk -> one lobar
/// branch per lobe -> segments -> subsegments -> extra generations that
/// inherit their subsegment's labels.
AirwayTree generate_tree(const GenConfig& cfg, int index);

/// With probability anomaly_rate per candidate site (any branch inside a
/// proper-segment subtree), appends an abnormal branch labeled outlier at
/// every level. Existing nodes are untouched.
AirwayTree inject_anomalies(const AirwayTree& tree, const GenConfig& cfg,
                            Rng& rng);

/// Prunes the distal portion of each proper-segment subtree below a random
/// cut depth, with probability atrophy_rate per segment. Ids recompacted.
AirwayTree apply_atrophy(const AirwayTree& tree, const GenConfig& cfg,
                         Rng& rng);

/// Rotates every branch direction by a random angle <= distortion_angle_deg
/// about a random axis then re-chains child start points. Labels unchanged.
AirwayTree apply_distortion(const AirwayTree& tree, const GenConfig& cfg,
                            Rng& rng);

struct DatasetManifest {
  GenConfig config;
  std::vector<std::string> train;  // paths relative to the manifest
  std::vector<std::string> test;
};

/// Writes interchange files plus manifest.json under out_dir. Train trees
/// carry injected anomalies but no atrophy/distortion; test trees get all
/// three deformations. Seeds are disjoint through the tree index.
DatasetManifest make_dataset(const GenConfig& cfg, int n_train, int n_test,
                             const std::filesystem::path& out_dir);

DatasetManifest load_manifest(const std::filesystem::path& manifest_path);

std::string gen_config_to_json(const GenConfig& cfg);
GenConfig gen_config_from_json_text(const std::string& text,
                                    const std::string& origin);

}  // namespace airway::synth
