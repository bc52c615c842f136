#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "airway/errors.hpp"
#include "airway/features.hpp"
#include "airway/synth.hpp"
#include "airway/tree_io.hpp"

using namespace airway;
using synth::GenConfig;

TEST_CASE("minimal layout: trunk, lobar, segment, two subsegments") {
  GenConfig cfg;
  cfg.n_lobes = 1;
  cfg.segments_per_lobe = {1, 1};
  cfg.subsegments_per_segment = {2, 2};
  cfg.extra_generations = 0;
  const AirwayTree t = synth::generate_tree(cfg, 0);
  CHECK(t.size() == 5);
  const Nomenclature nom = synth::make_nomenclature(cfg);
  CHECK(t.node(t.root()).label_lob == 1);  // trunk category
  CHECK(nom.is_proper_segment(t.node(2).label_seg));
  CHECK(t.children(2).size() == 2);
}

TEST_CASE("same (seed, index) gives identical serialization") {
  GenConfig cfg;
  cfg.seed = 99;
  const Nomenclature nom = synth::make_nomenclature(cfg);
  const std::string a =
      tree_to_json(BranchGraph{synth::generate_tree(cfg, 7), nom});
  const std::string b =
      tree_to_json(BranchGraph{synth::generate_tree(cfg, 7), nom});
  CHECK(a == b);
  const std::string c =
      tree_to_json(BranchGraph{synth::generate_tree(cfg, 8), nom});
  CHECK(a != c);
}

TEST_CASE("default config trees validate and project consistently") {
  GenConfig cfg;
  cfg.n_lobes = 2;
  cfg.segments_per_lobe = {1, 2};
  cfg.subsegments_per_segment = {1, 2};
  const Nomenclature nom = synth::make_nomenclature(cfg);
  for (int i = 0; i < 100; ++i) {
    const AirwayTree t = synth::generate_tree(cfg, i);  // build_tree validated
    std::vector<int> sub;
    for (const BranchNode& b : t.nodes()) {
      CHECK(b.length() > 0.0);
      sub.push_back(b.label_sub);
    }
    const auto [seg, lob] = project_labels(sub, nom);
    for (const BranchNode& b : t.nodes()) {
      CHECK(seg[b.id] == b.label_seg);
      CHECK(lob[b.id] == b.label_lob);
    }
  }
}

TEST_CASE("infeasible config rejected") {
  GenConfig cfg;
  cfg.n_lobes = 0;
  CHECK_THROWS_AS(synth::generate_tree(cfg, 0), ConfigInfeasibleError);
  GenConfig cfg2;
  cfg2.anomaly_rate = 1.5;
  CHECK_THROWS_AS(synth::make_nomenclature(cfg2), ConfigInfeasibleError);
}

TEST_CASE("anomaly rate zero leaves the tree unchanged") {
  GenConfig cfg;
  cfg.anomaly_rate = 0.0;
  const AirwayTree t = synth::generate_tree(cfg, 0);
  Rng rng(1, 0, "anomaly");
  const AirwayTree out = synth::inject_anomalies(t, cfg, rng);
  CHECK(out.size() == t.size());
}

TEST_CASE("anomaly rate one on a one-site tree adds exactly one outlier") {
  GenConfig cfg;
  cfg.n_lobes = 1;
  cfg.segments_per_lobe = {1, 1};
  cfg.subsegments_per_segment = {0, 0};
  cfg.extra_generations = 0;
  cfg.anomaly_rate = 1.0;
  const AirwayTree t = synth::generate_tree(cfg, 0);
  CHECK(t.size() == 3);  // trunk, lobar, segment: one candidate site
  Rng rng(1, 0, "anomaly");
  const AirwayTree out = synth::inject_anomalies(t, cfg, rng);
  CHECK(out.size() == 4);
  const Nomenclature nom = synth::make_nomenclature(cfg);
  const BranchNode& added = out.node(3);
  CHECK(added.is_abnormal);
  CHECK(added.label_lob == nom.outlier_lob());
  CHECK(added.label_seg == nom.outlier_seg());
  CHECK(added.label_sub == nom.outlier_sub());
  for (int i = 0; i < 3; ++i) {
    CHECK(out.node(i).label_sub == t.node(i).label_sub);
    CHECK_FALSE(out.node(i).is_abnormal);
  }
}

TEST_CASE("injected count stays within three sigma of the binomial") {
  GenConfig cfg;
  cfg.n_lobes = 2;
  cfg.segments_per_lobe = {2, 2};
  cfg.subsegments_per_segment = {2, 2};
  cfg.extra_generations = 0;
  cfg.anomaly_rate = 0.1;
  int sites = 0, injected = 0;
  for (int i = 0; sites < 1000; ++i) {
    const AirwayTree t = synth::generate_tree(cfg, i);
    const Nomenclature nom = synth::make_nomenclature(cfg);
    for (const BranchNode& b : t.nodes())
      sites += nom.is_proper_segment(b.label_seg);
    Rng rng(5, i, "anomaly");
    injected += synth::inject_anomalies(t, cfg, rng).size() - t.size();
  }
  const double mean = sites * 0.1;
  const double sigma = std::sqrt(sites * 0.1 * 0.9);
  CHECK(injected > mean - 3 * sigma);
  CHECK(injected < mean + 3 * sigma);
}

TEST_CASE("atrophy rate zero leaves the tree unchanged") {
  GenConfig cfg;
  const AirwayTree t = synth::generate_tree(cfg, 0);
  Rng rng(1, 0, "atrophy");
  cfg.atrophy_rate = 0.0;
  CHECK(synth::apply_atrophy(t, cfg, rng).size() == t.size());
}

TEST_CASE("atrophy rate one with depth-1 segments strips all subsegments") {
  GenConfig cfg;
  cfg.n_lobes = 1;
  cfg.segments_per_lobe = {2, 2};
  cfg.subsegments_per_segment = {2, 2};
  cfg.extra_generations = 0;
  cfg.atrophy_rate = 1.0;
  const AirwayTree t = synth::generate_tree(cfg, 0);
  Rng rng(1, 0, "atrophy");
  const AirwayTree out = synth::apply_atrophy(t, cfg, rng);
  const Nomenclature nom = synth::make_nomenclature(cfg);
  // Segment subtrees are depth 1 here, so the only cut removes everything
  // below each segment branch.
  for (const BranchNode& b : out.nodes())
    if (nom.is_proper_segment(b.label_seg)) CHECK(out.children(b.id).empty());
  CHECK(out.size() == 4);  // trunk + lobar + 2 segment branches
}

TEST_CASE("atrophied trees remain valid and feature-extractable") {
  GenConfig cfg;
  cfg.atrophy_rate = 0.5;
  for (int i = 0; i < 30; ++i) {
    const AirwayTree t = synth::generate_tree(cfg, i);
    Rng rng(2, i, "atrophy");
    const AirwayTree out = synth::apply_atrophy(t, cfg, rng);  // revalidates
    CHECK(out.size() >= 1);
    CHECK(extract_features(out).values.allFinite());
  }
}

TEST_CASE("zero distortion angle is an exact no-op") {
  GenConfig cfg;
  cfg.distortion_angle_deg = 0.0;
  const AirwayTree t = synth::generate_tree(cfg, 1);
  Rng rng(1, 1, "distortion");
  const AirwayTree out = synth::apply_distortion(t, cfg, rng);
  for (int i = 0; i < t.size(); ++i) {
    CHECK(out.node(i).start_point == t.node(i).start_point);
    CHECK(out.node(i).end_point == t.node(i).end_point);
  }
}

TEST_CASE("distortion preserves branch lengths and changes features") {
  GenConfig cfg;
  cfg.distortion_angle_deg = 30.0;
  const AirwayTree t = synth::generate_tree(cfg, 2);
  Rng rng(3, 2, "distortion");
  const AirwayTree out = synth::apply_distortion(t, cfg, rng);
  REQUIRE(out.size() == t.size());
  for (int i = 0; i < t.size(); ++i) {
    CHECK(out.node(i).length() ==
          doctest::Approx(t.node(i).length()).epsilon(1e-9));
    if (out.node(i).parent)
      CHECK((out.node(i).start_point -
             out.node(*out.node(i).parent).end_point)
                .norm() < 1e-12);
  }
  const MatrixXd f0 = extract_features(t).values;
  const MatrixXd f1 = extract_features(out).values;
  CHECK((f0 - f1).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("make_dataset writes manifest and loadable splits") {
  GenConfig cfg;
  cfg.n_lobes = 1;
  cfg.segments_per_lobe = {1, 1};
  cfg.subsegments_per_segment = {2, 2};
  cfg.extra_generations = 0;
  cfg.anomaly_rate = 0.3;
  cfg.atrophy_rate = 0.5;
  cfg.distortion_angle_deg = 15.0;
  const auto dir = std::filesystem::temp_directory_path() / "airway_ds_test";
  std::filesystem::remove_all(dir);
  const synth::DatasetManifest manifest = synth::make_dataset(cfg, 3, 2, dir);
  CHECK(manifest.train.size() == 3);
  CHECK(manifest.test.size() == 2);
  const synth::DatasetManifest loaded = synth::load_manifest(dir / "manifest.json");
  CHECK(loaded.train == manifest.train);
  CHECK(loaded.config.seed == cfg.seed);
  for (const std::string& rel : loaded.train) {
    const BranchGraph g = load_tree(dir / rel);
    // Train split: anomalies allowed, no distortion of the chained geometry.
    for (const BranchNode& b : g.tree.nodes())
      if (b.parent)
        CHECK((b.start_point - g.tree.node(*b.parent).end_point).norm() < 1e-9);
  }
  for (const std::string& rel : loaded.test) (void)load_tree(dir / rel);
  std::filesystem::remove_all(dir);
}
