#include "airway/prediction_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "airway/errors.hpp"

namespace airway {

std::string predictions_to_json(const TreePrediction& pred) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [id, p] : pred.nodes) {
    nlohmann::ordered_json jp;
    jp["lob"] = p.lob;
    jp["seg"] = p.seg;
    jp["sub"] = p.sub;
    jp["anomaly_score"] = p.anomaly_score;
    jp["is_abnormal_pred"] = p.is_abnormal_pred;
    j[std::to_string(id)] = std::move(jp);
  }
  return j.dump(2) + "\n";
}

TreePrediction predictions_from_json(const std::string& text,
                                     const std::string& origin) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(origin + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError(origin + ": expected an object");
  TreePrediction out;
  try {
    for (const auto& [key, jp] : j.items()) {
      NodePrediction p;
      p.lob = jp.at("lob").get<int>();
      p.seg = jp.at("seg").get<int>();
      p.sub = jp.at("sub").get<int>();
      p.anomaly_score = jp.at("anomaly_score").get<double>();
      p.is_abnormal_pred = jp.at("is_abnormal_pred").get<bool>();
      out.nodes.emplace(std::stoi(key), p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(origin + ": " + e.what());
  } catch (const std::invalid_argument&) {
    throw ParseError(origin + ": node keys must be integer ids");
  }
  return out;
}

void save_predictions(const std::filesystem::path& path,
                      const TreePrediction& pred) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out << predictions_to_json(pred);
}

TreePrediction load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return predictions_from_json(buf.str(), path.string());
}

void save_matrix_csv(const std::filesystem::path& path, const MatrixXd& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
}

}  // namespace airway
