// Command-line front end: dataset generation, training, evaluation,
// prediction, the ablation grid, and Graphviz export.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "airway/checkpoint.hpp"
#include "airway/dot_export.hpp"
#include "airway/errors.hpp"
#include "airway/metrics.hpp"
#include "airway/model.hpp"
#include "airway/prediction_io.hpp"
#include "airway/ssc.hpp"
#include "airway/synth.hpp"
#include "airway/train.hpp"
#include "airway/tree_io.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace airway;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out << content;
}

void reject_unknown(const ordered_json& j, const std::vector<std::string>& known,
                    const std::string& ctx) {
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ParseError(ctx + ": unknown key \"" + key + "\"");
}

ordered_json parse_config_file(const fs::path& path) {
  ordered_json j;
  try {
    j = ordered_json::parse(slurp(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1)
    throw SchemaVersionMismatchError(path.string() +
                                     ": expected schema_version 1");
  return j;
}

struct RunConfig {
  nn::ModelConfig model;
  nn::TrainConfig train;
};

nn::ModelConfig parse_model_section(const ordered_json& j, const std::string& ctx) {
  nn::ModelConfig m;
  if (j.is_null()) return m;
  reject_unknown(j,
                 {"d_in", "dim", "heads", "spd_clip", "alpha",
                  "normalized_prototypes", "masked_bias", "score_hidden",
                  "anomaly_threshold"},
                 ctx);
  if (j.contains("d_in")) m.d_in = j["d_in"].get<int>();
  if (j.contains("dim")) m.dim = j["dim"].get<int>();
  if (j.contains("heads")) m.heads = j["heads"].get<int>();
  if (j.contains("spd_clip")) m.spd_clip = j["spd_clip"].get<int>();
  if (j.contains("alpha")) m.alpha = j["alpha"].get<double>();
  if (j.contains("normalized_prototypes"))
    m.normalized_prototypes = j["normalized_prototypes"].get<bool>();
  if (j.contains("masked_bias")) m.masked_bias = j["masked_bias"].get<bool>();
  if (j.contains("score_hidden")) m.score_hidden = j["score_hidden"].get<int>();
  if (j.contains("anomaly_threshold"))
    m.anomaly_threshold = j["anomaly_threshold"].get<double>();
  return m;
}

nn::TrainConfig parse_train_section(const ordered_json& j, const std::string& ctx) {
  nn::TrainConfig t;
  if (j.is_null()) return t;
  reject_unknown(j,
                 {"learning_rate", "epochs", "label_smoothing", "seed",
                  "checkpoint_every", "precision", "weights", "variant"},
                 ctx);
  if (j.contains("learning_rate")) t.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("epochs")) t.epochs = j["epochs"].get<int>();
  if (j.contains("label_smoothing"))
    t.label_smoothing = j["label_smoothing"].get<double>();
  if (j.contains("seed")) t.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("checkpoint_every"))
    t.checkpoint_every = j["checkpoint_every"].get<int>();
  if (j.contains("precision")) {
    t.precision = j["precision"].get<std::string>();
    if (t.precision != "f64" && t.precision != "f32")
      throw ParseError(ctx + ": precision must be \"f64\" or \"f32\"");
  }
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    reject_unknown(w, {"stage1", "stage2", "lob", "seg", "sub", "subtree", "anomaly"},
                   ctx + ".weights");
    if (w.contains("stage1")) t.w_stage1 = w["stage1"].get<double>();
    if (w.contains("stage2")) t.w_stage2 = w["stage2"].get<double>();
    if (w.contains("lob")) t.w_lob = w["lob"].get<double>();
    if (w.contains("seg")) t.w_seg = w["seg"].get<double>();
    if (w.contains("sub")) t.w_sub = w["sub"].get<double>();
    if (w.contains("subtree")) t.w_subtree = w["subtree"].get<double>();
    if (w.contains("anomaly")) t.w_anomaly = w["anomaly"].get<double>();
  }
  if (j.contains("variant")) {
    const auto& v = j["variant"];
    reject_unknown(v, {"guidance", "ssc", "abs"}, ctx + ".variant");
    if (v.contains("guidance")) t.variant.guidance = v["guidance"].get<bool>();
    if (v.contains("ssc")) t.variant.ssc = v["ssc"].get<bool>();
    if (v.contains("abs")) t.variant.abs = v["abs"].get<bool>();
  }
  if (t.epochs < 0 || t.learning_rate <= 0.0)
    throw ParseError(ctx + ": epochs must be >= 0 and learning_rate positive");
  return t;
}

RunConfig parse_run_config(const fs::path& path) {
  const ordered_json j = parse_config_file(path);
  reject_unknown(j, {"schema_version", "model", "train"}, path.string());
  RunConfig cfg;
  cfg.model = parse_model_section(j.contains("model") ? j["model"] : ordered_json(),
                                  path.string() + ".model");
  cfg.train = parse_train_section(j.contains("train") ? j["train"] : ordered_json(),
                                  path.string() + ".train");
  return cfg;
}

bool same_nomenclature(const Nomenclature& a, const Nomenclature& b) {
  return a.n_lob == b.n_lob && a.n_seg == b.n_seg && a.n_sub == b.n_sub &&
         a.sub_to_seg == b.sub_to_seg && a.seg_to_lob == b.seg_to_lob &&
         a.proper_segment_ids == b.proper_segment_ids;
}

struct Dataset {
  Nomenclature nomenclature;
  std::vector<BranchGraph> train, test;
};

Dataset load_dataset(const fs::path& dir) {
  const synth::DatasetManifest manifest = synth::load_manifest(dir / "manifest.json");
  Dataset ds;
  auto load_split = [&](const std::vector<std::string>& rels,
                        std::vector<BranchGraph>& out) {
    for (const std::string& rel : rels) {
      out.push_back(load_tree(dir / rel));
      if (out.size() == 1 && ds.train.empty() && ds.test.empty())
        ds.nomenclature = out[0].nomenclature;
    }
  };
  load_split(manifest.train, ds.train);
  load_split(manifest.test, ds.test);
  if (!ds.train.empty())
    ds.nomenclature = ds.train[0].nomenclature;
  else if (!ds.test.empty())
    ds.nomenclature = ds.test[0].nomenclature;
  else
    throw ParseError(dir.string() + ": dataset has no trees");
  for (const auto& g : ds.train)
    if (!same_nomenclature(g.nomenclature, ds.nomenclature))
      throw ParseError(dir.string() + ": trees disagree on the nomenclature");
  for (const auto& g : ds.test)
    if (!same_nomenclature(g.nomenclature, ds.nomenclature))
      throw ParseError(dir.string() + ": trees disagree on the nomenclature");
  return ds;
}

std::string history_csv(const std::vector<nn::EpochStats>& history) {
  std::ostringstream out;
  out << "epoch,mean_loss,mean_ce_sub,mean_bce_subtree,mean_bce_anomaly\n";
  char buf[128];
  for (const nn::EpochStats& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g\n", e.epoch,
                  e.mean_loss, e.mean_ce_sub, e.mean_bce_subtree,
                  e.mean_bce_anomaly);
    out << buf;
  }
  return out.str();
}

template <typename S>
void run_training(const RunConfig& cfg, const Dataset& ds, const fs::path& out_dir,
                  const std::string& precision) {
  std::vector<nn::TreeContext<S>> contexts;
  contexts.reserve(ds.train.size());
  for (const BranchGraph& g : ds.train)
    contexts.push_back(
        nn::TreeContext<S>::build(g.tree, ds.nomenclature, cfg.model.spd_clip));

  nn::Trainer<S> trainer(cfg.model, ds.nomenclature, cfg.train);
  fs::path last_checkpoint;
  auto checkpoint = [&](const std::string& name) {
    const fs::path path = out_dir / name;
    nn::save_checkpoint(path, trainer.model(), cfg.train.variant,
                        &trainer.optimizer(), precision);
    last_checkpoint = path;
  };
  try {
    trainer.fit(contexts, [&](int epoch) {
      if (cfg.train.checkpoint_every > 0 && epoch % cfg.train.checkpoint_every == 0 &&
          epoch < cfg.train.epochs) {
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint_epoch_%06d.json", epoch);
        checkpoint(name);
      }
    });
  } catch (const NonFiniteError& e) {
    std::string note = last_checkpoint.empty()
                           ? "no checkpoint written yet"
                           : "last good checkpoint: " + last_checkpoint.string();
    throw NonFiniteError(std::string(e.what()) + " (" + note + ")");
  }
  checkpoint("checkpoint_final.json");
  spit(out_dir / "history.csv", history_csv(trainer.history()));
  std::cout << "trained " << cfg.train.epochs << " epochs on "
            << ds.train.size() << " trees; final mean loss "
            << (trainer.history().empty() ? 0.0
                                          : trainer.history().back().mean_loss)
            << "\n";
}

metrics::EvalReport evaluate_checkpoint(nn::Checkpoint<double>& ckpt,
                                        const Dataset& ds,
                                        const std::vector<BranchGraph>& split) {
  metrics::EvalAccumulator acc(ds.nomenclature);
  for (const BranchGraph& g : split) {
    const nn::PredictionBundle<double> bundle =
        nn::predict(g.tree, ds.nomenclature, ckpt.model, ckpt.variant);
    acc.add_tree(g.tree, bundle.final_lob, bundle.final_seg, bundle.final_sub,
                 bundle.abnormal_pred);
  }
  return acc.finish();
}

void write_report(const fs::path& base, const metrics::EvalReport& report) {
  fs::path json_path = base, csv_path = base;
  if (base.extension() == ".json") {
    csv_path.replace_extension(".csv");
  } else if (base.extension() == ".csv") {
    json_path.replace_extension(".json");
  } else {
    json_path += ".json";
    csv_path += ".csv";
  }
  spit(json_path, metrics::report_to_json(report));
  spit(csv_path, metrics::report_to_csv(report));
  std::cout << "report written to " << json_path.string() << " and "
            << csv_path.string() << "\n";
}

int cmd_gen_data(const fs::path& config_path, const fs::path& out_dir) {
  const ordered_json j = parse_config_file(config_path);
  reject_unknown(j, {"schema_version", "generator", "dataset"}, config_path.string());
  if (!j.contains("generator") || !j.contains("dataset"))
    throw ParseError(config_path.string() + ": needs \"generator\" and \"dataset\"");
  const synth::GenConfig gen = synth::gen_config_from_json_text(
      j["generator"].dump(), config_path.string() + ".generator");
  const auto& dsec = j["dataset"];
  reject_unknown(dsec, {"n_train", "n_test"}, config_path.string() + ".dataset");
  const int n_train = dsec.at("n_train").get<int>();
  const int n_test = dsec.at("n_test").get<int>();
  fs::create_directories(out_dir);
  spit(out_dir / "config.json", j.dump(2) + "\n");
  synth::make_dataset(gen, n_train, n_test, out_dir);
  std::cout << "wrote " << n_train << " train / " << n_test
            << " test trees under " << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const fs::path& data_dir, const fs::path& config_path,
              const fs::path& out_dir) {
  const RunConfig cfg = parse_run_config(config_path);
  const Dataset ds = load_dataset(data_dir);
  fs::create_directories(out_dir);
  spit(out_dir / "config.json", slurp(config_path));
  if (cfg.train.precision == "f32")
    run_training<float>(cfg, ds, out_dir, "f32");
  else
    run_training<double>(cfg, ds, out_dir, "f64");
  return kExitOk;
}

int cmd_eval(const fs::path& run_dir, const fs::path& data_dir,
             const fs::path& report_path) {
  nn::Checkpoint<double> ckpt =
      nn::load_checkpoint<double>(run_dir / "checkpoint_final.json");
  const Dataset ds = load_dataset(data_dir);
  const metrics::EvalReport report = evaluate_checkpoint(ckpt, ds, ds.test);
  write_report(report_path, report);
  return kExitOk;
}

int cmd_predict(const fs::path& run_dir, const fs::path& tree_path,
                const fs::path& out_path, const std::string& dump_prefix) {
  nn::Checkpoint<double> ckpt =
      nn::load_checkpoint<double>(run_dir / "checkpoint_final.json");
  const BranchGraph graph = load_tree(tree_path);
  const nn::PredictionBundle<double> bundle =
      nn::predict(graph.tree, graph.nomenclature, ckpt.model, ckpt.variant);
  save_predictions(out_path, to_prediction(bundle));
  if (!dump_prefix.empty()) {
    const nn::StageOutputs<double>& fin =
        bundle.has_stage2 ? bundle.stage2 : bundle.stage1;
    if (fin.raw_map.size() > 0) {
      save_matrix_csv(dump_prefix + "_raw.csv", fin.raw_map);
      save_matrix_csv(dump_prefix + "_refined.csv", fin.refined_map);
    }
    std::vector<int> gt_seg;
    for (const BranchNode& b : graph.tree.nodes()) gt_seg.push_back(b.label_seg);
    save_matrix_csv(dump_prefix + "_gt.csv", nn::gt_subtree_map<double>(gt_seg));
  }
  std::cout << "predictions for " << graph.tree.size() << " nodes written to "
            << out_path.string() << "\n";
  return kExitOk;
}

int cmd_ablate(const fs::path& data_dir, const fs::path& config_path,
               const fs::path& out_dir) {
  const RunConfig base = parse_run_config(config_path);
  const Dataset ds = load_dataset(data_dir);
  fs::create_directories(out_dir);
  spit(out_dir / "config.json", slurp(config_path));

  struct Row {
    const char* name;
    const char* dir;
    nn::Variant variant;
  };
  const std::vector<Row> rows = {
      {"Baseline", "baseline", {false, false, false}},
      {"F2C", "f2c", {true, false, false}},
      {"F2C+SSC", "f2c_ssc", {true, true, false}},
      {"F2C+ABS", "f2c_abs", {true, false, true}},
      {"F2C+SSC+ABS", "full", {true, true, true}},
  };
  std::string grid = metrics::ablation_csv_header();
  for (const Row& row : rows) {
    RunConfig cfg = base;
    cfg.train.variant = row.variant;
    const fs::path run_dir = out_dir / row.dir;
    fs::create_directories(run_dir);
    if (cfg.train.precision == "f32")
      run_training<float>(cfg, ds, run_dir, "f32");
    else
      run_training<double>(cfg, ds, run_dir, "f64");
    nn::Checkpoint<double> ckpt =
        nn::load_checkpoint<double>(run_dir / "checkpoint_final.json");
    const metrics::EvalReport report = evaluate_checkpoint(ckpt, ds, ds.test);
    spit(run_dir / "report.json", metrics::report_to_json(report));
    grid += metrics::ablation_csv_row(row.name, report);
    std::cout << row.name << ": seg acc " << report.segmental.acc << ", cs "
              << report.cs_eligible << ", sub acc " << report.subsegmental.acc
              << "\n";
  }
  spit(out_dir / "ablation.csv", grid);
  std::cout << "ablation grid written to " << (out_dir / "ablation.csv").string()
            << "\n";
  return kExitOk;
}

int cmd_export_dot(const fs::path& tree_path, const fs::path& pred_path,
                   const fs::path& out_path) {
  const BranchGraph graph = load_tree(tree_path);
  const TreePrediction pred = load_predictions(pred_path);
  save_dot(out_path, graph.tree, graph.nomenclature, pred);
  std::cout << "dot graph written to " << out_path.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical airway anatomical labeling toolkit"};
  app.require_subcommand(1);

  std::string config, out, data, run, tree, pred, report, dump_prefix;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--config", config, "generator config JSON")->required();
  gen->add_option("--out", out, "output directory")->required();

  CLI::App* train = app.add_subcommand("train", "Train a model on a dataset");
  train->add_option("--data", data, "dataset directory (with manifest.json)")->required();
  train->add_option("--config", config, "run config JSON")->required();
  train->add_option("--out", out, "run output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a run on the test split");
  eval->add_option("--run", run, "run directory")->required();
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--report", report, "report output path")->required();

  CLI::App* predict = app.add_subcommand("predict", "Label one tree file");
  predict->add_option("--run", run, "run directory")->required();
  predict->add_option("--tree", tree, "tree interchange JSON")->required();
  predict->add_option("--out", out, "prediction output JSON")->required();
  predict->add_option("--dump-maps", dump_prefix,
                      "CSV dump prefix for subtree maps");

  CLI::App* ablate = app.add_subcommand("ablate", "Train and score all variants");
  ablate->add_option("--data", data, "dataset directory")->required();
  ablate->add_option("--config", config, "run config JSON")->required();
  ablate->add_option("--out", out, "output directory")->required();

  CLI::App* dot = app.add_subcommand("export-dot", "Graphviz export of predictions");
  dot->add_option("--tree", tree, "tree interchange JSON")->required();
  dot->add_option("--pred", pred, "prediction JSON")->required();
  dot->add_option("--out", out, "output .dot path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config, out);
    if (train->parsed()) return cmd_train(data, config, out);
    if (eval->parsed()) return cmd_eval(run, data, report);
    if (predict->parsed()) return cmd_predict(run, tree, out, dump_prefix);
    if (ablate->parsed()) return cmd_ablate(data, config, out);
    if (dot->parsed()) return cmd_export_dot(tree, pred, out);
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
