// ucd: synthetic urban change detection pipeline.
//
//   ucd synth-gen   scenes, labels and label-derived probabilities
//   ucd train       desk-scale training from a JSON config
//   ucd infer       network probabilities for one image series
//   ucd integrate   per-pixel MAP fusion of probabilities
//   ucd eval        F1/IoU for states or probabilities against labels
//   ucd ablate      grid over loss edges, TFR, MTI mode and series length
//   ucd replay      re-run a command from its manifest
//
// Every command writes into a fresh run directory (built as `<dir>.partial`
// and renamed on success) with manifest.json at its root.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ucd/json_io.hpp"
#include "ucd/mti.hpp"
#include "ucd/parallel.hpp"
#include "ucd/raster_io.hpp"

namespace fs = std::filesystem;
using namespace ucd;

namespace {

constexpr const char* kVersion = "0.1.0";

// Raised for invalid user input; exits with status 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------ run directory

class RunDir {
 public:
  RunDir(fs::path final_dir, std::string command, std::vector<std::string> argv)
      : final_(std::move(final_dir)), staging_(final_), command_(std::move(command)),
        argv_(std::move(argv)) {
    staging_ += ".partial";
    if (fs::exists(final_)) throw UsageError("run directory " + final_.string() + " already exists");
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;
  ~RunDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  fs::path path(const std::string& name) const { return staging_ / name; }

  // Records a produced file under `key` (path relative to the run directory).
  void add(const std::string& key, const std::string& relative) { files_[key] = relative; }

  json& extra() { return extra_; }

  void commit() {
    json manifest{{"tool", "ucd"},           {"version", kVersion}, {"command", command_},
                  {"argv", argv_},           {"files", files_}};
    for (auto& [k, v] : extra_.items()) manifest[k] = v;
    for (auto& [key, rel] : files_.items()) {
      if (!fs::exists(staging_ / rel.get<std::string>())) {
        throw std::logic_error("manifest references missing file " + rel.get<std::string>());
      }
    }
    write_file(staging_ / "manifest.json", manifest.dump(2) + "\n");
    fs::rename(staging_, final_);
    committed_ = true;
  }

  const fs::path& final_path() const { return final_; }

 private:
  fs::path final_, staging_;
  std::string command_;
  std::vector<std::string> argv_;
  json files_ = json::object();
  json extra_ = json::object();
  bool committed_ = false;
};

fs::path default_run_dir(const std::string& command, std::uint64_t seed) {
  const char* env = std::getenv("UCD_OUTPUT_DIR");
  const fs::path root = env && *env ? fs::path(env) : fs::path("ucd-runs");
  return root / (command + "-seed" + std::to_string(seed));
}

// ------------------------------------------------------------- JSON config

json load_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw UsageError(path + ": " + e.what());
  }
}

// Rejects keys that the defaults do not define, recursively.
void check_keys(const json& given, const json& known, const std::string& where) {
  if (!given.is_object()) throw UsageError(where + " must be a JSON object");
  for (auto& [k, v] : given.items()) {
    if (!known.contains(k)) throw UsageError("unknown config key " + where + "." + k);
    if (known[k].is_object() && v.is_object()) check_keys(v, known[k], where + "." + k);
  }
}

struct DataConfig {
  SceneSpec scene;
  std::size_t train_scenes = 8;
  std::size_t val_scenes = 2;
};

void to_json(json& j, const DataConfig& d) {
  j = json{{"scene", d.scene}, {"train_scenes", d.train_scenes}, {"val_scenes", d.val_scenes}};
}

void from_json(const json& j, DataConfig& d) {
  if (j.contains("scene")) j.at("scene").get_to(d.scene);
  if (j.contains("train_scenes")) j.at("train_scenes").get_to(d.train_scenes);
  if (j.contains("val_scenes")) j.at("val_scenes").get_to(d.val_scenes);
}

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::uint64_t seed = 0;
};

json to_json(const ExperimentConfig& e) {
  return json{{"model", e.model}, {"train", e.train}, {"data", e.data}, {"seed", e.seed}};
}

ExperimentConfig experiment_from_json(const json& j) {
  check_keys(j, to_json(ExperimentConfig{}), "config");
  ExperimentConfig e;
  if (j.contains("model")) j.at("model").get_to(e.model);
  if (j.contains("train")) j.at("train").get_to(e.train);
  if (j.contains("data")) j.at("data").get_to(e.data);
  if (j.contains("seed")) j.at("seed").get_to(e.seed);
  return e;
}

// One seed drives every random stream: scene i of the training split uses
// seed * 1000 + i, validation scenes seed * 1000 + 500 + i.
void apply_seed(ExperimentConfig& e) {
  e.model.seed = e.seed;
  e.train.seed = e.seed;
}

std::vector<Scene> make_scenes(const DataConfig& d, std::uint64_t seed, std::size_t first,
                               std::size_t count) {
  std::vector<Scene> out;
  for (std::size_t i = 0; i < count; ++i) {
    SceneSpec s = d.scene;
    s.seed = seed * 1000 + first + i;
    out.push_back(generate_scene(s));
  }
  return out;
}

// -------------------------------------------------------------- commands

struct Common {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

fs::path run_dir_for(const Common& c, const std::string& command) {
  return c.out.empty() ? default_run_dir(command, c.seed) : fs::path(c.out);
}

void write_log_line(std::ofstream& log, const json& line) { log << line.dump() << '\n'; }

// ---------------------------------------------------------------- synth-gen

struct SynthArgs {
  SceneSpec spec;
  std::size_t scenes = 1;
  double seg_noise = 0.45;
  double change_noise = 0.25;
  std::string edges = "dense";
};

void cmd_synth(const Common& c, const SynthArgs& a, const std::vector<std::string>& argv) {
  const EdgeKind kind = parse_edge_kind(a.edges);
  RunDir run(run_dir_for(c, "synth-gen"), "synth-gen", argv);
  json scenes = json::array();
  for (std::size_t i = 0; i < a.scenes; ++i) {
    SceneSpec spec = a.spec;
    spec.seed = c.seed + i;
    const Scene scene = generate_scene(spec);
    const NoisyOutputs probs =
        corrupt_to_probabilities(scene, a.seg_noise, a.change_noise, spec.seed ^ 0x5eedULL, kind);
    const std::string dir = "scene" + std::to_string(i);
    fs::create_directories(run.path(dir));
    const std::vector<std::pair<std::string, const Tensor*>> rasters{
        {"images", &scene.images},
        {"seg_labels", &scene.seg_labels},
        {"change_labels", nullptr},
        {"seg_probs", &probs.seg},
        {"change_probs", &probs.change}};
    const Tensor change_labels = scene.change_labels(probs.edges);
    json entry{{"seed", spec.seed}};
    for (const auto& [name, t] : rasters) {
      const std::string rel = dir + "/" + name + ".rts";
      write_raster(run.path(rel), t ? *t : change_labels);
      run.add(dir + "." + name, rel);
      entry[name] = rel;
    }
    write_file(run.path(dir + "/edges.json"), edges_to_json(probs.edges).dump(2));
    run.add(dir + ".edges", dir + "/edges.json");
    entry["edges"] = dir + "/edges.json";
    scenes.push_back(entry);
  }
  run.extra()["spec"] = a.spec;
  run.extra()["seed"] = c.seed;
  run.extra()["edges"] = edges_to_json(EdgeSet(kind, a.spec.length));
  run.extra()["seg_noise"] = a.seg_noise;
  run.extra()["change_noise"] = a.change_noise;
  run.extra()["scenes"] = scenes;
  run.commit();
  std::cout << run.final_path().string() << "\n";
}

// -------------------------------------------------------------------- train

void cmd_train(const Common& c, ExperimentConfig e, const std::vector<std::string>& argv) {
  apply_seed(e);
  e.model.edge_kind = e.train.edge_kind;
  e.data.scene.length = std::max(e.data.scene.length, e.train.train_length);
  try {
    e.model.validate();
    e.train.validate(e.model.backbone.divisor());
    e.data.scene.validate();
  } catch (const std::invalid_argument& err) {
    throw UsageError(err.what());
  }
  RunDir run(run_dir_for(c, "train"), "train", argv);
  const auto train_scenes = make_scenes(e.data, e.seed, 0, e.data.train_scenes);
  const auto val_scenes = make_scenes(e.data, e.seed, 500, e.data.val_scenes);

  std::ofstream log(run.path("train_log.jsonl"));
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result = train(train_scenes, val_scenes, e.model, e.train,
                             [&](const json& line) { write_log_line(log, line); });
  log.close();
  save_checkpoint(*result.model, run.path("model"));
  run.add("checkpoint_tensors", "model.rts");
  run.add("checkpoint_index", "model.json");
  run.add("log", "train_log.jsonl");
  run.extra()["config"] = to_json(e);
  run.extra()["seed"] = e.seed;
  run.extra()["edges"] = edges_to_json(EdgeSet(e.train.edge_kind, e.train.train_length));
  run.extra()["result"] = {{"best_val_loss", result.best_val_loss},
                           {"best_epoch", result.best_epoch},
                           {"epochs_run", result.epochs_run},
                           {"steps", result.steps}};
  run.commit();
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << run.final_path().string() << "\nbest_val_loss " << result.best_val_loss
            << " after " << result.steps << " steps (" << secs << " s)\n";
}

// -------------------------------------------------------------------- infer

void cmd_infer(const Common& c, const std::string& checkpoint, const std::string& images,
               const std::string& edge_kind, const std::vector<std::string>& argv) {
  auto model = load_checkpoint(checkpoint);
  if (!edge_kind.empty()) {
    // The change decoder is shared by every edge, so any edge kind applies.
    ModelConfig cfg = model->config();
    cfg.edge_kind = parse_edge_kind(edge_kind);
    auto rebuilt = std::make_unique<ChangeNet>(cfg);
    rebuilt->restore(model->snapshot());
    model = std::move(rebuilt);
  }
  const Tensor x = read_raster(images);
  RunDir run(run_dir_for(c, "infer"), "infer", argv);
  const Prediction p = [&] {
    try {
      return infer(*model, x);
    } catch (const std::invalid_argument& err) {
      throw UsageError(err.what());
    }
  }();
  write_raster(run.path("seg_probs.rts"), p.seg);
  write_raster(run.path("change_probs.rts"), p.change);
  write_file(run.path("edges.json"), edges_to_json(p.edges).dump(2));
  run.add("seg_probs", "seg_probs.rts");
  run.add("change_probs", "change_probs.rts");
  run.add("edges", "edges.json");
  run.extra()["checkpoint"] = fs::absolute(checkpoint).string();
  run.extra()["images"] = fs::absolute(images).string();
  run.extra()["model"] = model->config();
  run.extra()["edges"] = edges_to_json(p.edges);
  run.extra()["seed"] = c.seed;
  run.commit();
  std::cout << run.final_path().string() << "\n";
}

// ---------------------------------------------------------------- integrate

void cmd_integrate(const Common& c, const std::string& seg_path, const std::string& change_path,
                   const std::string& edges_path, const std::string& mode_name,
                   const std::vector<std::string>& argv) {
  const MtiMode mode = parse_mti_mode(mode_name);
  const Tensor seg = read_raster(seg_path);
  const Tensor change = read_raster(change_path);
  const EdgeSet edges = edges_from_json(load_json(edges_path));
  MapSeries m;
  try {
    m = integrate(seg, change, edges, mode);
  } catch (const std::invalid_argument& err) {
    throw UsageError(err.what());
  }
  RunDir run(run_dir_for(c, "integrate"), "integrate", argv);
  write_raster(run.path("states.rts"), m.states);
  run.add("states", "states.rts");
  const Tensor derived = m.derived_changes(edges);
  json per_edge = json::array();
  for (std::size_t n = 0; n < edges.size(); ++n) {
    const std::string name = "change_" + std::to_string(edges[n].earlier) + "_" +
                             std::to_string(edges[n].later) + ".pgm";
    const Tensor map = slice_map(derived, n);
    export_pgm(map, run.path(name));
    run.add(name, name);
    double changed = 0.0;
    for (double v : map.values()) changed += v;
    per_edge.push_back({{"edge", {edges[n].earlier, edges[n].later}},
                        {"changed_pixels", changed},
                        {"file", name}});
  }
  double mean_score = 0.0;
  for (double v : m.map_score.values()) mean_score += v;
  mean_score /= double(m.map_score.size());
  const json summary{{"mode", std::string(to_string(mode))},
                     {"mean_log_score", mean_score},
                     {"edges", per_edge}};
  write_file(run.path("summary.json"), summary.dump(2));
  run.add("summary", "summary.json");
  run.extra()["inputs"] = {{"seg_probs", fs::absolute(seg_path).string()},
                           {"change_probs", fs::absolute(change_path).string()},
                           {"edges", fs::absolute(edges_path).string()}};
  run.extra()["mode"] = to_string(mode);
  run.extra()["seed"] = c.seed;
  run.extra()["edges"] = edges_to_json(edges);
  run.commit();
  std::cout << run.final_path().string() << "\n";
}

// --------------------------------------------------------------------- eval

void print_report(const EvalReport& r, std::ostream& os) {
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %10s %10s %10s %10s %10s\n", "map", "tp", "fp", "fn",
                "f1", "iou");
  os << line;
  for (std::size_t i = 0; i < r.map_counts.size(); ++i) {
    const Counts& k = r.map_counts[i];
    std::snprintf(line, sizeof line, "%-16s %10zu %10zu %10zu %10.4f %10.4f\n",
                  r.map_names[i].c_str(), k.tp, k.fp, k.fn, k.f1(), k.iou());
    os << line;
  }
  std::snprintf(line, sizeof line, "%-16s %10s %10s %10s %10.4f %10.4f\n", "macro", "", "", "",
                r.f1, r.iou);
  os << line;
  std::snprintf(line, sizeof line, "%-16s %10s %10s %10s %10.4f %10.4f\n", "micro", "", "", "",
                r.f1_micro, r.iou_micro);
  os << line;
}

struct EvalArgs {
  std::string states, seg, change, edges, labels;
  std::string task = "continuous";
};

void cmd_eval(const Common& c, const EvalArgs& a, const std::vector<std::string>& argv) {
  const EvalTask task = parse_eval_task(a.task);
  const Tensor labels = read_raster(a.labels);
  EvalReport report;
  json inputs{{"labels", fs::absolute(a.labels).string()}};
  try {
    if (!a.states.empty()) {
      report = evaluate_states(read_raster(a.states), labels, task);
      inputs["states"] = fs::absolute(a.states).string();
    } else {
      if (a.seg.empty() || a.change.empty() || a.edges.empty()) {
        throw UsageError("eval needs --states, or --seg, --change and --edges");
      }
      report = evaluate_outputs(read_raster(a.seg), read_raster(a.change),
                                edges_from_json(load_json(a.edges)), labels, task);
      inputs["seg_probs"] = fs::absolute(a.seg).string();
      inputs["change_probs"] = fs::absolute(a.change).string();
      inputs["edges"] = fs::absolute(a.edges).string();
    }
  } catch (const std::invalid_argument& err) {
    throw UsageError(err.what());
  }
  RunDir run(run_dir_for(c, "eval"), "eval", argv);
  write_file(run.path("report.json"), json(report).dump(2));
  run.add("report", "report.json");
  run.extra()["inputs"] = inputs;
  run.extra()["task"] = to_string(task);
  run.extra()["seed"] = c.seed;
  run.commit();
  std::cout << "task " << to_string(task) << "\n";
  print_report(report, std::cout);
}

// ------------------------------------------------------------------- ablate

struct AblateGrid {
  std::vector<std::string> loss_edges{"dense"};
  std::vector<bool> tfr{true, false};
  std::vector<std::string> mti_modes{"degenerate", "adjacent", "cyclic", "dense"};
  std::vector<std::size_t> lengths{4};
};

MtiMode needed_kind(MtiMode m, EdgeKind& kind) {
  switch (m) {
    case MtiMode::adjacent: kind = EdgeKind::adjacent; break;
    case MtiMode::cyclic: kind = EdgeKind::cyclic; break;
    case MtiMode::dense: kind = EdgeKind::dense; break;
    case MtiMode::degenerate: break;
  }
  return m;
}

// Evaluates one model on held-out scenes under each MTI mode.
std::vector<json> evaluate_modes(ChangeNet& model, const std::vector<Scene>& scenes,
                                 const std::vector<std::string>& modes, json cell) {
  std::vector<json> rows;
  std::vector<Prediction> preds;
  for (const Scene& s : scenes) preds.push_back(infer(model, s.images));
  for (const std::string& name : modes) {
    json row = cell;
    const MtiMode mode = parse_mti_mode(name);
    row["mti_mode"] = name;
    EdgeKind kind = EdgeKind::adjacent;
    needed_kind(mode, kind);
    const EdgeSet& trained = preds.front().edges;
    if (mode != MtiMode::degenerate && !trained.contains(EdgeSet(kind, trained.length()))) {
      row["status"] = "skipped";
      row["reason"] = "MTI mode " + name + " needs edges the " +
                      std::string(to_string(trained.kind())) + " change decoder does not predict";
      rows.push_back(row);
      continue;
    }
    std::vector<EvalReport> cont, bi, seg;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const MapSeries m = integrate(preds[i].seg, preds[i].change, preds[i].edges, mode);
      cont.push_back(evaluate_states(m.states, scenes[i].seg_labels, EvalTask::continuous_cd));
      bi.push_back(evaluate_states(m.states, scenes[i].seg_labels, EvalTask::bitemporal_cd));
      seg.push_back(evaluate_states(m.states, scenes[i].seg_labels, EvalTask::segmentation));
    }
    row["status"] = "ok";
    row["continuous_f1"] = average_reports(cont).f1;
    row["continuous_iou"] = average_reports(cont).iou;
    row["bitemporal_f1"] = average_reports(bi).f1;
    row["bitemporal_iou"] = average_reports(bi).iou;
    row["segmentation_f1"] = average_reports(seg).f1;
    rows.push_back(row);
  }
  return rows;
}

void write_table(RunDir& run, const std::vector<json>& rows) {
  const std::vector<std::string> cols{"loss_edges",    "tfr",           "length",
                                      "edge_count",    "mti_mode",      "status",
                                      "continuous_f1", "continuous_iou", "bitemporal_f1",
                                      "bitemporal_iou", "segmentation_f1", "reason"};
  std::ostringstream csv;
  for (std::size_t i = 0; i < cols.size(); ++i) csv << (i ? "," : "") << cols[i];
  csv << "\n";
  for (const json& r : rows) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      csv << (i ? "," : "");
      if (!r.contains(cols[i])) continue;
      const json& v = r[cols[i]];
      if (v.is_string()) {
        csv << '"' << v.get<std::string>() << '"';
      } else {
        csv << v.dump();
      }
    }
    csv << "\n";
  }
  write_file(run.path("ablation.csv"), csv.str());
  write_file(run.path("ablation.json"), json(rows).dump(2));
  run.add("table_csv", "ablation.csv");
  run.add("table_json", "ablation.json");
}

void print_rows(const std::vector<json>& rows) {
  std::printf("%-9s %-5s %6s %5s %-11s %10s %10s\n", "loss", "tfr", "T", "N", "mti",
              "cont_f1", "bitemp_f1");
  for (const json& r : rows) {
    if (r["status"] == "ok") {
      std::printf("%-9s %-5s %6zu %5zu %-11s %10.4f %10.4f\n",
                  r["loss_edges"].get<std::string>().c_str(), r["tfr"].get<bool>() ? "on" : "off",
                  r["length"].get<std::size_t>(), r["edge_count"].get<std::size_t>(),
                  r["mti_mode"].get<std::string>().c_str(), r["continuous_f1"].get<double>(),
                  r["bitemporal_f1"].get<double>());
    } else {
      std::printf("%-9s %-5s %6zu %5zu %-11s %21s\n", r["loss_edges"].get<std::string>().c_str(),
                  r["tfr"].get<bool>() ? "on" : "off", r["length"].get<std::size_t>(),
                  r["edge_count"].get<std::size_t>(), r["mti_mode"].get<std::string>().c_str(),
                  "skipped");
    }
  }
}

void cmd_ablate(const Common& c, ExperimentConfig e, const AblateGrid& grid,
                const std::string& checkpoint, const std::vector<std::string>& argv) {
  apply_seed(e);
  for (const auto& m : grid.mti_modes) parse_mti_mode(m);
  for (const auto& k : grid.loss_edges) parse_edge_kind(k);
  RunDir run(run_dir_for(c, "ablate"), "ablate", argv);
  std::vector<json> rows;

  if (!checkpoint.empty()) {
    auto model = load_checkpoint(checkpoint);
    for (std::size_t len : grid.lengths) {
      const json cell{{"loss_edges", std::string(to_string(model->config().edge_kind))},
                      {"tfr", model->config().use_tfr},
                      {"length", len},
                      {"edge_count", len < 2 ? 0 : model->edges(len).size()}};
      if (len < 2) {
        json row = cell;
        row["status"] = "skipped";
        row["reason"] = "series length must be >= 2";
        rows.push_back(row);
        continue;
      }
      DataConfig data = e.data;
      data.scene.length = len;
      const auto scenes = make_scenes(data, e.seed, 500, data.val_scenes);
      auto cell_rows = evaluate_modes(*model, scenes, grid.mti_modes, cell);
      rows.insert(rows.end(), cell_rows.begin(), cell_rows.end());
    }
    run.extra()["checkpoint"] = fs::absolute(checkpoint).string();
  } else {
    for (std::size_t len : grid.lengths)
      for (const std::string& kind_name : grid.loss_edges)
        for (bool tfr : grid.tfr) {
          ExperimentConfig cell_cfg = e;
          cell_cfg.train.edge_kind = parse_edge_kind(kind_name);
          cell_cfg.model.edge_kind = cell_cfg.train.edge_kind;
          cell_cfg.model.use_tfr = tfr;
          cell_cfg.train.train_length = len;
          cell_cfg.data.scene.length = len;
          const json cell{{"loss_edges", kind_name},
                          {"tfr", tfr},
                          {"length", len},
                          {"edge_count", EdgeSet(cell_cfg.train.edge_kind, len).size()}};
          if (len < 2) {
            json row = cell;
            row["status"] = "skipped";
            row["reason"] = "series length must be >= 2";
            rows.push_back(row);
            continue;
          }
          const auto tr = make_scenes(cell_cfg.data, e.seed, 0, e.data.train_scenes);
          const auto va = make_scenes(cell_cfg.data, e.seed, 500, e.data.val_scenes);
          TrainResult r = train(tr, va, cell_cfg.model, cell_cfg.train);
          auto cell_rows = evaluate_modes(*r.model, va, grid.mti_modes, cell);
          for (auto& row : cell_rows) {
            row["steps"] = r.steps;
            row["best_val_loss"] = r.best_val_loss;
            row["attention_tensors"] = std::count_if(
                r.model->tensors().begin(), r.model->tensors().end(),
                [](Parameter* p) { return p->name.find(".attn.") != std::string::npos; });
          }
          rows.insert(rows.end(), cell_rows.begin(), cell_rows.end());
        }
  }
  write_table(run, rows);
  run.extra()["config"] = to_json(e);
  run.extra()["seed"] = e.seed;
  run.extra()["grid"] = {{"loss_edges", grid.loss_edges},
                         {"tfr", grid.tfr},
                         {"mti_modes", grid.mti_modes},
                         {"lengths", grid.lengths}};
  run.commit();
  std::cout << run.final_path().string() << "\n";
  print_rows(rows);
}

// -------------------------------------------------------------------- main

int run_cli(std::vector<std::string> args);

int cmd_replay(const std::string& manifest_path, const std::string& out) {
  const json manifest = load_json(manifest_path);
  if (!manifest.contains("argv")) throw UsageError(manifest_path + " has no recorded argv");
  std::vector<std::string> args = manifest["argv"].get<std::vector<std::string>>();
  if (!out.empty()) {
    args.push_back("--out");
    args.push_back(out);
  }
  return run_cli(args);
}

// Resolved argv for the manifest: the command line without --out (so replay
// can choose a new directory) and with the config file inlined as JSON.
std::vector<std::string> replay_argv(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out" && i + 1 < args.size()) {
      ++i;
      continue;
    }
    if (args[i].rfind("--out=", 0) == 0) continue;
    if (args[i] == "--config" && i + 1 < args.size()) {
      out.push_back("--config-json");
      out.push_back(load_json(args[++i]).dump());
      continue;
    }
    // Input files are recorded absolutely so replay works from any directory.
    std::error_code ec;
    if (args[i].rfind("-", 0) != 0 &&
        (fs::exists(args[i], ec) || fs::exists(args[i] + ".json", ec))) {
      out.push_back(fs::absolute(args[i]).string());
      continue;
    }
    out.push_back(args[i]);
  }
  return out;
}

int run_cli(std::vector<std::string> args) {
  CLI::App app{"Synthetic multi-temporal urban change detection"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", common.out,
                    "Run directory (default $UCD_OUTPUT_DIR/<command>-seed<seed>)");
    sub->add_option("--seed", common.seed, "Seed for every random stream");
    sub->add_option("--workers", common.workers, "Worker threads")
        ->check(CLI::PositiveNumber);
  };

  // synth-gen
  SynthArgs synth;
  auto* sg = app.add_subcommand("synth-gen", "Generate synthetic scenes and probabilities");
  add_common(sg);
  sg->add_option("--scenes", synth.scenes, "Number of scenes")->check(CLI::PositiveNumber);
  sg->add_option("--length", synth.spec.length, "Timestamps T");
  sg->add_option("--height", synth.spec.height);
  sg->add_option("--width", synth.spec.width);
  sg->add_option("--channels", synth.spec.channels);
  sg->add_option("--buildings", synth.spec.buildings);
  sg->add_option("--min-extent", synth.spec.min_extent);
  sg->add_option("--max-extent", synth.spec.max_extent);
  sg->add_option("--noise-sigma", synth.spec.noise_sigma);
  sg->add_option("--illumination-jitter", synth.spec.illumination_jitter);
  sg->add_option("--demolition-rate", synth.spec.demolition_rate);
  sg->add_option("--seg-noise", synth.seg_noise, "Std of noise on segmentation probabilities");
  sg->add_option("--change-noise", synth.change_noise, "Std of noise on change probabilities");
  sg->add_option("--edges", synth.edges, "Edge kind of the change probabilities");

  // train / ablate share the experiment config and its flag overrides.
  std::string config_path, config_inline;
  ExperimentConfig flags;
  bool no_tfr = false;
  std::string edge_flag;
  auto add_experiment = [&](CLI::App* sub) {
    add_common(sub);
    sub->add_option("--config", config_path, "JSON config {model, train, data, seed}");
    sub->add_option("--config-json", config_inline, "Inline JSON config")->group("");
    sub->add_option("--lr", flags.train.lr);
    sub->add_option("--batch-size", flags.train.batch_size);
    sub->add_option("--epochs", flags.train.max_epochs);
    sub->add_option("--patience", flags.train.patience);
    sub->add_option("--patch-size", flags.train.patch_size);
    sub->add_option("--steps-per-epoch", flags.train.steps_per_epoch);
    sub->add_option("--train-length", flags.train.train_length);
    sub->add_option("--edges", edge_flag, "Loss edge kind");
    sub->add_flag("--no-tfr", no_tfr, "Disable temporal feature refinement");
    sub->add_option("--train-scenes", flags.data.train_scenes);
    sub->add_option("--val-scenes", flags.data.val_scenes);
    sub->add_option("--scene-size", flags.data.scene.height, "Scene height and width");
  };
  auto* tr = app.add_subcommand("train", "Train a model");
  add_experiment(tr);

  auto* ab = app.add_subcommand("ablate", "Ablation grid");
  add_experiment(ab);
  AblateGrid grid;
  std::vector<std::string> tfr_grid{"on", "off"};
  std::string ablate_checkpoint;
  ab->add_option("--loss-edges", grid.loss_edges, "Loss edge kinds")->delimiter(',');
  ab->add_option("--tfr", tfr_grid, "TFR settings (on,off)")->delimiter(',');
  ab->add_option("--mti-modes", grid.mti_modes, "MTI modes")->delimiter(',');
  ab->add_option("--lengths", grid.lengths, "Series lengths T")->delimiter(',');
  ab->add_option("--checkpoint", ablate_checkpoint, "Evaluate this checkpoint instead of training");

  // infer
  std::string checkpoint, images, infer_edges;
  auto* in = app.add_subcommand("infer", "Network probabilities for one image series");
  add_common(in);
  in->add_option("--checkpoint", checkpoint, "Checkpoint stem (without .json/.rts)")->required();
  in->add_option("--images", images, "RTS1 images (T, C, H, W)")->required();
  in->add_option("--edges", infer_edges, "Edge kind (default: the checkpoint's)");

  // integrate
  std::string seg_path, change_path, edges_path, mode = "dense";
  auto* ig = app.add_subcommand("integrate", "Per-pixel MAP fusion");
  add_common(ig);
  ig->add_option("--seg", seg_path, "RTS1 segmentation probabilities (T, H, W)")->required();
  ig->add_option("--change", change_path, "RTS1 change probabilities (N, H, W)")->required();
  ig->add_option("--edges", edges_path, "JSON edge manifest")->required();
  ig->add_option("--mode", mode, "degenerate|adjacent|cyclic|dense");

  // eval
  EvalArgs eval;
  auto* ev = app.add_subcommand("eval", "Evaluate states or probabilities");
  add_common(ev);
  ev->add_option("--states", eval.states, "RTS1 binary states (T, H, W)");
  ev->add_option("--seg", eval.seg, "RTS1 segmentation probabilities");
  ev->add_option("--change", eval.change, "RTS1 change probabilities");
  ev->add_option("--edges", eval.edges, "JSON edge manifest for --change");
  ev->add_option("--labels", eval.labels, "RTS1 segmentation labels (T, H, W)")->required();
  ev->add_option("--task", eval.task, "bitemporal|continuous|segmentation");

  // replay
  std::string manifest_path, replay_out;
  auto* rp = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  rp->add_option("manifest", manifest_path)->required();
  rp->add_option("--out", replay_out, "Run directory for the replay");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  set_workers(common.workers);
  const std::vector<std::string> recorded = replay_argv(args);

  auto experiment = [&](CLI::App* sub) {
    json j = json::object();
    if (!config_path.empty()) j = load_json(config_path);
    if (!config_inline.empty()) j = json::parse(config_inline);
    ExperimentConfig e = experiment_from_json(j);
    if (sub->count("--seed")) e.seed = common.seed;
    common.seed = e.seed;
    if (sub->count("--lr")) e.train.lr = flags.train.lr;
    if (sub->count("--batch-size")) e.train.batch_size = flags.train.batch_size;
    if (sub->count("--epochs")) e.train.max_epochs = flags.train.max_epochs;
    if (sub->count("--patience")) e.train.patience = flags.train.patience;
    if (sub->count("--patch-size")) e.train.patch_size = flags.train.patch_size;
    if (sub->count("--steps-per-epoch")) e.train.steps_per_epoch = flags.train.steps_per_epoch;
    if (sub->count("--train-length")) e.train.train_length = flags.train.train_length;
    if (sub->count("--edges")) e.train.edge_kind = parse_edge_kind(edge_flag);
    if (no_tfr) e.model.use_tfr = false;
    if (sub->count("--train-scenes")) e.data.train_scenes = flags.data.train_scenes;
    if (sub->count("--val-scenes")) e.data.val_scenes = flags.data.val_scenes;
    if (sub->count("--scene-size")) {
      e.data.scene.height = e.data.scene.width = flags.data.scene.height;
    }
    return e;
  };

  if (*sg) cmd_synth(common, synth, recorded);
  if (*tr) cmd_train(common, experiment(tr), recorded);
  if (*ab) {
    grid.tfr.clear();
    for (const auto& t : tfr_grid) {
      if (t != "on" && t != "off") throw UsageError("--tfr takes on/off, got " + t);
      grid.tfr.push_back(t == "on");
    }
    cmd_ablate(common, experiment(ab), grid, ablate_checkpoint, recorded);
  }
  if (*in) cmd_infer(common, checkpoint, images, infer_edges, recorded);
  if (*ig) cmd_integrate(common, seg_path, change_path, edges_path, mode, recorded);
  if (*ev) cmd_eval(common, eval, recorded);
  if (*rp) return cmd_replay(manifest_path, replay_out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
