#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "airway/train.hpp"

namespace airway::nn {

inline constexpr int kCheckpointSchemaVersion = 1;

// JSON-encoded parameter blob. Numbers are written with shortest round-trip
// representation, so save/load is bit-exact; object order follows the model's
// parameter visitation order, so identical states serialize identically.

namespace detail {

template <typename S>
nlohmann::ordered_json matrix_to_json(const Matrix<S>& m) {
  nlohmann::ordered_json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  auto data = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      data.push_back(static_cast<double>(m(i, c)));
  j["data"] = std::move(data);
  return j;
}

template <typename S>
Matrix<S> matrix_from_json(const nlohmann::ordered_json& j,
                           const std::string& name) {
  if (!j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    throw ParseError("checkpoint: malformed matrix \"" + name + "\"");
  const Eigen::Index rows = j["rows"].get<Eigen::Index>();
  const Eigen::Index cols = j["cols"].get<Eigen::Index>();
  const auto& data = j["data"];
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw ParseError("checkpoint: wrong element count in \"" + name + "\"");
  Matrix<S> m(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(i, c) = static_cast<S>(data[k++].get<double>());
  return m;
}

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["d_in"] = c.d_in;
  j["dim"] = c.dim;
  j["heads"] = c.heads;
  j["spd_clip"] = c.spd_clip;
  j["alpha"] = c.alpha;
  j["normalized_prototypes"] = c.normalized_prototypes;
  j["masked_bias"] = c.masked_bias;
  j["score_hidden"] = c.score_hidden;
  j["anomaly_threshold"] = c.anomaly_threshold;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::ordered_json& j,
                                          const std::string& ctx) {
  static const std::vector<std::string> known = {
      "d_in", "dim", "heads", "spd_clip", "alpha", "normalized_prototypes",
      "masked_bias", "score_hidden", "anomaly_threshold"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ParseError(ctx + ": unknown key \"" + key + "\"");
  ModelConfig c;
  auto get = [&](const char* key) -> const nlohmann::ordered_json& {
    auto it = j.find(key);
    if (it == j.end())
      throw ParseError(ctx + ": missing field \"" + std::string(key) + "\"");
    return *it;
  };
  c.d_in = get("d_in").get<int>();
  c.dim = get("dim").get<int>();
  c.heads = get("heads").get<int>();
  c.spd_clip = get("spd_clip").get<int>();
  c.alpha = get("alpha").get<double>();
  c.normalized_prototypes = get("normalized_prototypes").get<bool>();
  c.masked_bias = get("masked_bias").get<bool>();
  c.score_hidden = get("score_hidden").get<int>();
  c.anomaly_threshold = get("anomaly_threshold").get<double>();
  return c;
}

inline nlohmann::ordered_json variant_to_json(const Variant& v) {
  return nlohmann::ordered_json{
      {"guidance", v.guidance}, {"ssc", v.ssc}, {"abs", v.abs}};
}

inline Variant variant_from_json(const nlohmann::ordered_json& j,
                                 const std::string& ctx) {
  for (const auto& [key, _] : j.items())
    if (key != "guidance" && key != "ssc" && key != "abs")
      throw ParseError(ctx + ": unknown key \"" + key + "\"");
  Variant v;
  v.guidance = j.at("guidance").get<bool>();
  v.ssc = j.at("ssc").get<bool>();
  v.abs = j.at("abs").get<bool>();
  return v;
}

}  // namespace detail

template <typename S>
struct Checkpoint {
  ModelState<S> model;
  Variant variant;
  long optimizer_step = 0;
  std::unordered_map<std::string, typename AdamOptimizer<S>::Slot> optimizer_slots;
  bool has_optimizer = false;
};

template <typename S>
std::string checkpoint_to_json(ModelState<S>& model, const Variant& variant,
                               const AdamOptimizer<S>* optimizer,
                               const std::string& precision) {
  nlohmann::ordered_json j;
  j["schema_version"] = kCheckpointSchemaVersion;
  j["kind"] = "airway_checkpoint";
  j["precision"] = precision;
  j["model_config"] = detail::model_config_to_json(model.config);
  j["variant"] = detail::variant_to_json(variant);
  j["label_space"] = nlohmann::ordered_json{
      {"n_lob", model.n_lob}, {"n_seg", model.n_seg}, {"n_sub", model.n_sub}};
  nlohmann::ordered_json params;
  model.for_each([&](const std::string& name, Matrix<S>& m) {
    params[name] = detail::matrix_to_json(m);
  });
  j["params"] = std::move(params);
  if (optimizer) {
    nlohmann::ordered_json opt;
    opt["step"] = optimizer->step_count();
    nlohmann::ordered_json jm, jv;
    model.for_each([&](const std::string& name, Matrix<S>&) {
      auto it = optimizer->slots().find(name);
      if (it == optimizer->slots().end()) return;
      jm[name] = detail::matrix_to_json(it->second.m);
      jv[name] = detail::matrix_to_json(it->second.v);
    });
    opt["m"] = std::move(jm);
    opt["v"] = std::move(jv);
    j["optimizer"] = std::move(opt);
  } else {
    j["optimizer"] = nullptr;
  }
  return j.dump(2) + "\n";
}

template <typename S>
Checkpoint<S> checkpoint_from_json(const std::string& text,
                                   const std::string& origin) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(origin + ": " + e.what());
  }
  try {
    if (!j.contains("schema_version") ||
        j["schema_version"].get<int>() != kCheckpointSchemaVersion)
      throw SchemaVersionMismatchError(origin + ": unsupported schema_version");
    if (!j.contains("kind") || j["kind"].get<std::string>() != "airway_checkpoint")
      throw ParseError(origin + ": not a checkpoint file");

    const ModelConfig cfg =
        detail::model_config_from_json(j.at("model_config"), origin);
    Checkpoint<S> ckpt{};
    ckpt.variant = detail::variant_from_json(j.at("variant"), origin);
    Nomenclature label_space;
    label_space.n_lob = j.at("label_space").at("n_lob").get<int>();
    label_space.n_seg = j.at("label_space").at("n_seg").get<int>();
    label_space.n_sub = j.at("label_space").at("n_sub").get<int>();
    ckpt.model = ModelState<S>::init(cfg, label_space, 0);

    const auto& params = j.at("params");
    ckpt.model.for_each([&](const std::string& name, Matrix<S>& m) {
      if (!params.contains(name))
        throw ParseError(origin + ": missing parameter \"" + name + "\"");
      Matrix<S> loaded = detail::matrix_from_json<S>(params[name], name);
      if (loaded.rows() != m.rows() || loaded.cols() != m.cols())
        throw ParseError(origin + ": shape mismatch for \"" + name + "\"");
      m = std::move(loaded);
    });

    if (j.contains("optimizer") && !j["optimizer"].is_null()) {
      ckpt.has_optimizer = true;
      ckpt.optimizer_step = j["optimizer"].at("step").get<long>();
      const auto& jm = j["optimizer"].at("m");
      const auto& jv = j["optimizer"].at("v");
      for (const auto& [name, val] : jm.items()) {
        typename AdamOptimizer<S>::Slot slot;
        slot.m = detail::matrix_from_json<S>(val, name);
        slot.v = detail::matrix_from_json<S>(jv.at(name), name);
        ckpt.optimizer_slots.emplace(name, std::move(slot));
      }
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

template <typename S>
void save_checkpoint(const std::filesystem::path& path, ModelState<S>& model,
                     const Variant& variant,
                     const AdamOptimizer<S>* optimizer,
                     const std::string& precision) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out << checkpoint_to_json(model, variant, optimizer, precision);
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json<S>(buf.str(), path.string());
}

}  // namespace airway::nn
