#include "airway/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "airway/errors.hpp"
#include "airway/tree_io.hpp"

namespace airway::synth {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr double kDeg = M_PI / 180.0;

// Nominal branching angles off the parent axis per level.
constexpr double kLobarPolar = 55.0 * kDeg;
constexpr double kSegmentPolar = 40.0 * kDeg;
constexpr double kSubsegmentPolar = 35.0 * kDeg;
constexpr double kExtraPolar = 30.0 * kDeg;
constexpr double kPolarJitter = 10.0 * kDeg;
constexpr double kAzimuthJitterFrac = 0.45;  // of the slot width

void orthonormal_frame(const Vec3& d, Vec3& u, Vec3& v) {
  const Vec3 ref = std::abs(d.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0);
  u = d.cross(ref).normalized();
  v = d.cross(u);
}

Vec3 tilted_direction(const Vec3& axis, double polar, double azimuth) {
  Vec3 u, v;
  orthonormal_frame(axis, u, v);
  return (std::cos(polar) * axis +
          std::sin(polar) * (std::cos(azimuth) * u + std::sin(azimuth) * v))
      .normalized();
}

Vec3 rotate_about(const Vec3& v, const Vec3& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return v * c + axis.cross(v) * s + axis * (axis.dot(v)) * (1.0 - c);
}

double draw_length(Rng& rng, double mean, double std, double scale) {
  const double len = rng.normal(mean * scale, std * scale);
  return std::max(len, 0.15 * mean * scale);
}

struct LabelIds {
  int lob, seg, sub;
};

}  // namespace

void GenConfig::validate() const {
  if (n_lobes < 1)
    throw ConfigInfeasibleError("gen config: n_lobes must be >= 1");
  if (segments_per_lobe.min < 1 ||
      segments_per_lobe.max < segments_per_lobe.min)
    throw ConfigInfeasibleError("gen config: bad segments_per_lobe range");
  if (subsegments_per_segment.min < 0 ||
      subsegments_per_segment.max < subsegments_per_segment.min)
    throw ConfigInfeasibleError(
        "gen config: bad subsegments_per_segment range");
  if (extra_generations < 0)
    throw ConfigInfeasibleError("gen config: extra_generations must be >= 0");
  for (double p : {anomaly_rate, atrophy_rate})
    if (p < 0.0 || p > 1.0)
      throw ConfigInfeasibleError("gen config: probabilities must be in [0,1]");
  if (distortion_angle_deg < 0.0)
    throw ConfigInfeasibleError("gen config: distortion angle must be >= 0");
  if (length_mean_mm <= 0.0 || length_std_mm < 0.0 || radius_mean_mm <= 0.0 ||
      radius_std_mm < 0.0)
    throw ConfigInfeasibleError("gen config: bad length/radius distribution");
}

Nomenclature make_nomenclature(const GenConfig& cfg) {
  cfg.validate();
  const int L = cfg.n_lobes;
  const int S = cfg.segments_per_lobe.max;
  const int U = cfg.subsegments_per_segment.max;

  Nomenclature nom;
  nom.n_lob = L + 1;                  // lobes + trunk
  nom.n_seg = L * S + L + 1;          // proper segments + lobar cont. + trunk
  nom.n_sub = L * S * U + L * S + L + 1;

  nom.seg_to_lob.resize(nom.n_seg);
  for (int l = 0; l < L; ++l)
    for (int s = 0; s < S; ++s) nom.seg_to_lob[l * S + s] = l;
  for (int l = 0; l < L; ++l) nom.seg_to_lob[L * S + l] = l;
  nom.seg_to_lob[L * S + L] = L;  // trunk -> trunk

  nom.sub_to_seg.resize(nom.n_sub);
  for (int t = 0; t < L * S; ++t)
    for (int u = 0; u < U; ++u) nom.sub_to_seg[t * U + u] = t;
  for (int t = 0; t < L * S; ++t) nom.sub_to_seg[L * S * U + t] = t;
  for (int l = 0; l < L; ++l)
    nom.sub_to_seg[L * S * U + L * S + l] = L * S + l;
  nom.sub_to_seg[L * S * U + L * S + L] = L * S + L;

  nom.proper_segment_ids.resize(L * S);
  for (int t = 0; t < L * S; ++t) nom.proper_segment_ids[t] = t;
  nom.validate();
  return nom;
}

AirwayTree generate_tree(const GenConfig& cfg, int index) {
  cfg.validate();
  const int L = cfg.n_lobes;
  const int S = cfg.segments_per_lobe.max;
  const int U = cfg.subsegments_per_segment.max;
  const Nomenclature nom = make_nomenclature(cfg);
  Rng rng(cfg.seed, static_cast<std::uint64_t>(index), "layout");

  std::vector<BranchNode> nodes;
  auto add_node = [&](std::optional<int> parent, const Vec3& start,
                      const Vec3& dir, double length, LabelIds labels) {
    BranchNode b;
    b.id = static_cast<int>(nodes.size());
    b.parent = parent;
    b.start_point = start;
    b.end_point = start + dir * length;
    b.label_lob = labels.lob;
    b.label_seg = labels.seg;
    b.label_sub = labels.sub;
    nodes.push_back(b);
    (void)rng.normal(cfg.radius_mean_mm, cfg.radius_std_mm);  // radius draw
    return b.id;
  };

  const Vec3 trunk_dir(0.0, 0.0, -1.0);
  const int trunk = add_node(std::nullopt, Vec3::Zero(), trunk_dir,
                             1.6 * cfg.length_mean_mm,
                             {L, L * S + L, L * S * U + L * S + L});

  // Grows the unlabeled-at-finer-level generations under one subsegment.
  std::function<void(int, int, LabelIds)> grow_extra =
      [&](int parent, int generation, LabelIds labels) {
        if (generation > cfg.extra_generations) return;
        const Vec3 axis = nodes[parent].direction();
        for (int k = 0; k < 2; ++k) {
          const double azimuth = M_PI * k + rng.uniform(-0.5, 0.5);
          const double polar = kExtraPolar + rng.uniform(-kPolarJitter, kPolarJitter);
          const Vec3 dir = tilted_direction(axis, polar, azimuth);
          const double len = draw_length(rng, cfg.length_mean_mm,
                                         0.8 * cfg.length_std_mm,
                                         0.6 * std::pow(0.75, generation - 1));
          const int id = add_node(parent, nodes[parent].end_point, dir, len, labels);
          grow_extra(id, generation + 1, labels);
        }
      };

  for (int l = 0; l < L; ++l) {
    const double lob_azimuth = 2.0 * M_PI * l / L +
                               rng.uniform(-kAzimuthJitterFrac, kAzimuthJitterFrac) *
                                   2.0 * M_PI / L;
    const double lob_polar = kLobarPolar + rng.uniform(-kPolarJitter, kPolarJitter);
    const Vec3 lob_dir = tilted_direction(trunk_dir, lob_polar, lob_azimuth);
    const int lob_node = add_node(trunk, nodes[trunk].end_point, lob_dir,
                                  draw_length(rng, cfg.length_mean_mm,
                                              cfg.length_std_mm, 1.0),
                                  {l, L * S + l, L * S * U + L * S + l});

    const int n_segments = static_cast<int>(rng.uniform_int(
        cfg.segments_per_lobe.min, cfg.segments_per_lobe.max));
    for (int s = 0; s < n_segments; ++s) {
      const int seg_cat = l * S + s;
      const double seg_azimuth =
          2.0 * M_PI * s / S +
          rng.uniform(-kAzimuthJitterFrac, kAzimuthJitterFrac) * 2.0 * M_PI / S;
      const double seg_polar =
          kSegmentPolar + rng.uniform(-kPolarJitter, kPolarJitter);
      const Vec3 seg_dir = tilted_direction(lob_dir, seg_polar, seg_azimuth);
      const int seg_node = add_node(lob_node, nodes[lob_node].end_point,
                                    seg_dir,
                                    draw_length(rng, cfg.length_mean_mm,
                                                cfg.length_std_mm, 0.85),
                                    {l, seg_cat, L * S * U + seg_cat});

      const int n_subsegments = static_cast<int>(rng.uniform_int(
          cfg.subsegments_per_segment.min, cfg.subsegments_per_segment.max));
      for (int u = 0; u < n_subsegments; ++u) {
        const double sub_azimuth =
            2.0 * M_PI * u / std::max(1, U) +
            rng.uniform(-kAzimuthJitterFrac, kAzimuthJitterFrac) * 2.0 * M_PI /
                std::max(1, U);
        const double sub_polar =
            kSubsegmentPolar + rng.uniform(-kPolarJitter, kPolarJitter);
        const Vec3 sub_dir = tilted_direction(seg_dir, sub_polar, sub_azimuth);
        const LabelIds sub_labels{l, seg_cat, seg_cat * U + u};
        const int sub_node = add_node(seg_node, nodes[seg_node].end_point,
                                      sub_dir,
                                      draw_length(rng, cfg.length_mean_mm,
                                                  0.8 * cfg.length_std_mm, 0.7),
                                      sub_labels);
        grow_extra(sub_node, 1, sub_labels);
      }
    }
  }
  return build_tree(std::move(nodes));
}

AirwayTree inject_anomalies(const AirwayTree& tree, const GenConfig& cfg,
                            Rng& rng) {
  const Nomenclature nom = make_nomenclature(cfg);
  std::vector<BranchNode> nodes = tree.nodes();

  for (int site = 0; site < tree.size(); ++site) {
    if (!nom.is_proper_segment(tree.node(site).label_seg)) continue;
    if (tree.node(site).is_abnormal) continue;
    if (!rng.bernoulli(cfg.anomaly_rate)) continue;

    // Sibling directions the new branch must stay >= 10 degrees away from.
    std::vector<Vec3> sibling_dirs;
    for (int c : tree.children(site)) sibling_dirs.push_back(tree.node(c).direction());

    const Vec3 axis = tree.node(site).direction();
    Vec3 dir = Vec3::Zero();
    bool placed = false;
    for (int attempt = 0; attempt < 32 && !placed; ++attempt) {
      const double polar = rng.uniform(50.0 * kDeg, 85.0 * kDeg);
      const double azimuth = rng.uniform(0.0, 2.0 * M_PI);
      dir = tilted_direction(axis, polar, azimuth);
      placed = true;
      for (const Vec3& sd : sibling_dirs)
        if (std::acos(std::clamp(dir.dot(sd), -1.0, 1.0)) < 10.0 * kDeg)
          placed = false;
    }
    if (!placed) continue;

    BranchNode b;
    b.id = static_cast<int>(nodes.size());
    b.parent = site;
    b.start_point = tree.node(site).end_point;
    b.end_point = b.start_point +
                  dir * (0.55 * cfg.length_mean_mm * rng.uniform(0.8, 1.2));
    b.label_lob = nom.outlier_lob();
    b.label_seg = nom.outlier_seg();
    b.label_sub = nom.outlier_sub();
    b.is_abnormal = true;
    nodes.push_back(b);
  }
  return build_tree(std::move(nodes));
}

AirwayTree apply_atrophy(const AirwayTree& tree, const GenConfig& cfg,
                         Rng& rng) {
  const Nomenclature nom = make_nomenclature(cfg);

  // Depth of each node below the root of its proper-segment subtree;
  // -1 outside any segment subtree.
  std::vector<int> seg_depth(tree.size(), -1);
  std::vector<char> removed(tree.size(), 0);

  std::vector<int> order(tree.size());
  {  // parents before children
    std::vector<int> stack{tree.root()};
    int k = 0;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      order[k++] = v;
      for (int c : tree.children(v)) stack.push_back(c);
    }
  }

  for (int v : order) {
    const BranchNode& b = tree.node(v);
    const bool segment_root =
        nom.is_proper_segment(b.label_seg) &&
        (!b.parent || !nom.is_proper_segment(tree.node(*b.parent).label_seg));
    if (segment_root) {
      seg_depth[v] = 0;
      // Depth of the deepest descendant below this segment root.
      int max_below = 0;
      std::vector<int> st{v};
      std::vector<int> d(tree.size(), 0);
      while (!st.empty()) {
        const int x = st.back();
        st.pop_back();
        max_below = std::max(max_below, d[x]);
        for (int c : tree.children(x)) {
          d[c] = d[x] + 1;
          st.push_back(c);
        }
      }
      if (!rng.bernoulli(cfg.atrophy_rate)) continue;
      if (max_below == 0) continue;
      const int cut = static_cast<int>(rng.uniform_int(0, max_below - 1));
      std::vector<int> st2{v};
      std::vector<int> d2(tree.size(), 0);
      while (!st2.empty()) {
        const int x = st2.back();
        st2.pop_back();
        if (d2[x] > cut) removed[x] = 1;
        for (int c : tree.children(x)) {
          d2[c] = d2[x] + 1;
          st2.push_back(c);
        }
      }
    }
  }

  std::vector<int> remap(tree.size(), -1);
  std::vector<BranchNode> kept;
  for (int v = 0; v < tree.size(); ++v) {
    if (removed[v]) continue;
    remap[v] = static_cast<int>(kept.size());
    kept.push_back(tree.node(v));
  }
  for (BranchNode& b : kept) {
    b.id = remap[b.id];
    if (b.parent) b.parent = remap[*b.parent];
  }
  return build_tree(std::move(kept));
}

AirwayTree apply_distortion(const AirwayTree& tree, const GenConfig& cfg,
                            Rng& rng) {
  if (cfg.distortion_angle_deg == 0.0) return tree;

  std::vector<BranchNode> nodes = tree.nodes();
  // Parents before children so start points chain onto rotated parents.
  std::vector<int> order;
  {
    std::vector<int> stack{tree.root()};
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      order.push_back(v);
      for (int c : tree.children(v)) stack.push_back(c);
    }
  }
  for (int v : order) {
    const Vec3 axis = rng.unit_vector();
    const double angle = rng.uniform(0.0, cfg.distortion_angle_deg * kDeg);
    const Vec3 offset = rotate_about(
        tree.node(v).end_point - tree.node(v).start_point, axis, angle);
    const Vec3 start = nodes[v].parent
                           ? nodes[*nodes[v].parent].end_point
                           : tree.node(v).start_point;
    nodes[v].start_point = start;
    nodes[v].end_point = start + offset;
  }
  return build_tree(std::move(nodes));
}

namespace {

ordered_json int_range_to_json(const IntRange& r) {
  return ordered_json{{"min", r.min}, {"max", r.max}};
}

IntRange int_range_from_json(const ordered_json& j, const std::string& ctx) {
  if (!j.is_object() || !j.contains("min") || !j.contains("max"))
    throw ParseError(ctx + ": expected {\"min\", \"max\"}");
  for (const auto& [key, _] : j.items())
    if (key != "min" && key != "max")
      throw ParseError(ctx + ": unknown key \"" + key + "\"");
  return IntRange{j["min"].get<int>(), j["max"].get<int>()};
}

ordered_json config_to_json_obj(const GenConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["n_lobes"] = cfg.n_lobes;
  j["segments_per_lobe"] = int_range_to_json(cfg.segments_per_lobe);
  j["subsegments_per_segment"] = int_range_to_json(cfg.subsegments_per_segment);
  j["extra_generations"] = cfg.extra_generations;
  j["anomaly_rate"] = cfg.anomaly_rate;
  j["atrophy_rate"] = cfg.atrophy_rate;
  j["distortion_angle_deg"] = cfg.distortion_angle_deg;
  j["length_mean_mm"] = cfg.length_mean_mm;
  j["length_std_mm"] = cfg.length_std_mm;
  j["radius_mean_mm"] = cfg.radius_mean_mm;
  j["radius_std_mm"] = cfg.radius_std_mm;
  return j;
}

GenConfig config_from_json_obj(const ordered_json& j, const std::string& ctx) {
  GenConfig cfg;
  static const std::vector<std::string> known = {
      "seed", "n_lobes", "segments_per_lobe", "subsegments_per_segment",
      "extra_generations", "anomaly_rate", "atrophy_rate",
      "distortion_angle_deg", "length_mean_mm", "length_std_mm",
      "radius_mean_mm", "radius_std_mm"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ParseError(ctx + ": unknown key \"" + key + "\"");
  auto get = [&](const char* key) -> const ordered_json& {
    auto it = j.find(key);
    if (it == j.end())
      throw ParseError(ctx + ": missing field \"" + std::string(key) + "\"");
    return *it;
  };
  cfg.seed = get("seed").get<std::uint64_t>();
  cfg.n_lobes = get("n_lobes").get<int>();
  cfg.segments_per_lobe =
      int_range_from_json(get("segments_per_lobe"), ctx + ".segments_per_lobe");
  cfg.subsegments_per_segment = int_range_from_json(
      get("subsegments_per_segment"), ctx + ".subsegments_per_segment");
  cfg.extra_generations = get("extra_generations").get<int>();
  cfg.anomaly_rate = get("anomaly_rate").get<double>();
  cfg.atrophy_rate = get("atrophy_rate").get<double>();
  cfg.distortion_angle_deg = get("distortion_angle_deg").get<double>();
  cfg.length_mean_mm = get("length_mean_mm").get<double>();
  cfg.length_std_mm = get("length_std_mm").get<double>();
  cfg.radius_mean_mm = get("radius_mean_mm").get<double>();
  cfg.radius_std_mm = get("radius_std_mm").get<double>();
  cfg.validate();
  return cfg;
}

}  // namespace

std::string gen_config_to_json(const GenConfig& cfg) {
  return config_to_json_obj(cfg).dump(2) + "\n";
}

GenConfig gen_config_from_json_text(const std::string& text,
                                    const std::string& origin) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(origin + ": " + e.what());
  }
  return config_from_json_obj(j, origin);
}

DatasetManifest make_dataset(const GenConfig& cfg, int n_train, int n_test,
                             const std::filesystem::path& out_dir) {
  cfg.validate();
  if (n_train < 0 || n_test < 0)
    throw ConfigInfeasibleError("make_dataset: negative split size");
  std::filesystem::create_directories(out_dir);
  const Nomenclature nom = make_nomenclature(cfg);

  DatasetManifest manifest;
  manifest.config = cfg;

  auto emit = [&](int index, bool deformed, const std::string& name) {
    AirwayTree tree = generate_tree(cfg, index);
    {
      Rng rng(cfg.seed, static_cast<std::uint64_t>(index), "anomaly");
      tree = inject_anomalies(tree, cfg, rng);
    }
    if (deformed) {
      Rng rng_a(cfg.seed, static_cast<std::uint64_t>(index), "atrophy");
      tree = apply_atrophy(tree, cfg, rng_a);
      Rng rng_d(cfg.seed, static_cast<std::uint64_t>(index), "distortion");
      tree = apply_distortion(tree, cfg, rng_d);
    }
    save_tree(out_dir / name, BranchGraph{std::move(tree), nom});
  };

  char buf[32];
  for (int i = 0; i < n_train; ++i) {
    std::snprintf(buf, sizeof(buf), "train_%04d.json", i);
    emit(i, /*deformed=*/false, buf);
    manifest.train.push_back(buf);
  }
  for (int i = 0; i < n_test; ++i) {
    std::snprintf(buf, sizeof(buf), "test_%04d.json", i);
    emit(n_train + i, /*deformed=*/true, buf);
    manifest.test.push_back(buf);
  }

  ordered_json j;
  j["config"] = config_to_json_obj(cfg);
  j["train"] = manifest.train;
  j["test"] = manifest.test;
  std::ofstream out(out_dir / "manifest.json", std::ios::binary);
  if (!out) throw ParseError("cannot write " + (out_dir / "manifest.json").string());
  out << j.dump(2) << "\n";
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ParseError("cannot open " + manifest_path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  ordered_json j;
  try {
    j = ordered_json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  const std::string ctx = manifest_path.string();
  for (const char* key : {"config", "train", "test"})
    if (!j.contains(key))
      throw ParseError(ctx + ": missing field \"" + std::string(key) + "\"");
  DatasetManifest manifest;
  manifest.config = config_from_json_obj(j["config"], ctx + ".config");
  for (const auto& p : j["train"]) manifest.train.push_back(p.get<std::string>());
  for (const auto& p : j["test"]) manifest.test.push_back(p.get<std::string>());
  return manifest;
}

}  // namespace airway::synth
