#include "commands.h"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rmnerf/image.h"
#include "rmnerf/motion_averaging.h"
#include "rmnerf/refiner.h"
#include "rmnerf/scenes.h"
#include "rmnerf/toy_benchmark.h"
#include "rmnerf/viewgraph.h"

#ifndef RMNERF_SOURCE_DATA_DIR
#define RMNERF_SOURCE_DATA_DIR ""
#endif
#ifndef RMNERF_INSTALL_DATA_DIR
#define RMNERF_INSTALL_DATA_DIR ""
#endif

namespace rmnerf::cli {
namespace fs = std::filesystem;
namespace {

constexpr char kRefinerFile[] = "refiner_default.bin";

void RequireOut(const CommonOptions& opts) {
  if (opts.out.empty()) throw UsageError("--out is required");
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void WriteJson(const fs::path& path, const nlohmann::json& j) { WriteText(path, j.dump(2) + "\n"); }

nlohmann::json ReadJson(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string Fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::json ConfigJson(const FlatConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : cfg.values()) j[k] = v;
  return j;
}

std::vector<fs::path> ImageFiles(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
  std::vector<fs::path> raw, png;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (e.path().extension() == ".raw") raw.push_back(e.path());
    if (e.path().extension() == ".png") png.push_back(e.path());
  }
  std::vector<fs::path>& pick = raw.empty() ? png : raw;
  std::sort(pick.begin(), pick.end());
  return pick;
}

Image ReadAny(const fs::path& p) {
  return p.extension() == ".raw" ? ReadRaw(p.string()) : ReadPng(p.string());
}

std::vector<CameraPose> ReadPoses(const fs::path& path) {
  const nlohmann::json j = ReadJson(path);
  if (!j.is_array() || j.empty()) throw std::invalid_argument(path.string() + ": expected a pose array");
  std::vector<CameraPose> out;
  try {
    for (const auto& p : j) out.push_back(PoseFromJson(p));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return out;
}

std::string PosesJson(const std::vector<CameraPose>& poses) {
  nlohmann::json j = nlohmann::json::array();
  for (const CameraPose& p : poses) j.push_back(PoseToJson(p));
  return j.dump(2) + "\n";
}

}  // namespace

FlatConfig BuildConfig(const CommonOptions& opts) {
  FlatConfig cfg = opts.config_path.empty() ? FlatConfig() : FlatConfig::Load(opts.config_path);
  for (const std::string& o : opts.overrides) cfg.Override(o);
  return cfg;
}

TrainConfig TrainConfigFrom(const FlatConfig& c, std::uint64_t seed) {
  TrainConfig t;
  t.lambda0 = c.GetDouble("lambda0", t.lambda0);
  t.decay_k = c.GetDouble("decay_k", t.decay_k);
  t.warmup_epochs = c.GetInt("warmup_epochs", t.warmup_epochs);
  t.lambda_floor = c.GetDouble("lambda_floor", t.lambda_floor);
  const std::string fixed = c.GetString("fixed_lambda", "none");
  if (fixed != "none") t.fixed_lambda = c.GetDouble("fixed_lambda", 0.0);
  t.beta = c.GetDouble("beta", t.beta);
  t.anneal_b = c.GetDouble("anneal_b", t.anneal_b);
  t.L_octaves = c.GetInt("L_octaves", t.L_octaves);
  t.dir_octaves = c.GetInt("dir_octaves", t.dir_octaves);
  t.hidden = c.GetInt("hidden", t.hidden);
  t.latent = c.GetInt("latent", t.latent);
  t.lr_field = c.GetDouble("lr_field", t.lr_field);
  t.lr_refiner = c.GetDouble("lr_refiner", t.lr_refiner);
  t.refiner_clip = c.GetDouble("refiner_clip", t.refiner_clip);
  t.lr_center = c.GetDouble("lr_center", t.lr_center);
  t.lr_anchor = c.GetDouble("lr_anchor", t.lr_anchor);
  t.epochs = c.GetInt("epochs", t.epochs);
  t.batch_rays = c.GetInt("batch_rays", t.batch_rays);
  t.num_samples = c.GetInt("num_samples", t.num_samples);
  t.scene_radius = c.GetDouble("scene_radius", t.scene_radius);
  t.freeze_poses = c.GetBool("freeze_poses", t.freeze_poses);
  t.seed = seed;
  return t.Resolved();
}

std::string DefaultRefinerPath() {
  std::vector<fs::path> dirs;
  if (const char* env = std::getenv("RMNERF_DATA_DIR")) dirs.emplace_back(env);
  dirs.emplace_back(RMNERF_SOURCE_DATA_DIR);
  dirs.emplace_back(RMNERF_INSTALL_DATA_DIR);
  for (const fs::path& d : dirs) {
    if (!d.empty() && fs::exists(d / kRefinerFile)) return (d / kRefinerFile).string();
  }
  throw std::runtime_error("bundled refiner parameters not found; set RMNERF_DATA_DIR");
}

void RunSynth(const CommonOptions& opts) {
  RequireOut(opts);
  const FlatConfig cfg = BuildConfig(opts);
  ToyBenchmarkSpec spec;
  spec.rig.num_cameras = cfg.GetInt("num_cameras", 12);
  spec.rig.scales = cfg.GetIntList("scales", {1, 2});
  spec.rig.base_size = cfg.GetInt("base_size", 24);
  spec.rig.focal_ratio = cfg.GetDouble("focal_ratio", spec.rig.focal_ratio);
  spec.num_heldout = cfg.GetInt("num_heldout", spec.num_heldout);
  spec.pose_sigma = cfg.GetDouble("pose_sigma", spec.pose_sigma);
  spec.edge_probability = cfg.GetDouble("edge_probability", spec.edge_probability);
  spec.edge_sigma = cfg.GetDouble("edge_sigma", spec.edge_sigma);
  spec.scene_radius = cfg.GetDouble("scene_radius", spec.scene_radius);
  const std::string scene_path = cfg.GetString("scene", "");
  cfg.RejectUnused();
  spec.seed = opts.seed;
  const AnalyticScene scene =
      scene_path.empty() ? DefaultScene() : SceneFromJson(ReadJson(scene_path));
  const ToyBenchmark bench = BuildToyBenchmark(scene, spec);
  SaveToyBenchmark(bench, spec, opts.out,
                   {{"command", "synth"}, {"config_hash", cfg.Hash()}, {"config", ConfigJson(cfg)}});
  std::cout << "synth: " << bench.train_cameras.size() << " training cameras x "
            << bench.rig.scales.size() << " scales, " << bench.heldout_cameras.size()
            << " held out, " << bench.problem.graph.num_edges() << " edges -> " << opts.out
            << "\n";
}

void RunSolvePoses(const CommonOptions& opts, const SolveOptions& solve) {
  RequireOut(opts);
  const FlatConfig cfg = BuildConfig(opts);
  if (solve.graph.empty()) throw UsageError("--graph is required");
  const std::string loss_text = cfg.GetString("loss", "l2");
  IrlsOptions irls;
  irls.max_iters = cfg.GetInt("irls_max_iters", irls.max_iters);
  irls.tol = cfg.GetDouble("irls_tol", irls.tol);
  const std::string refiner_path = cfg.GetString("refiner", "");
  cfg.RejectUnused();
  const RobustLoss loss = ParseRobustLoss(loss_text);
  const ViewGraph graph = LoadViewGraph(solve.graph);

  std::vector<UnitQuaternion> est;
  nlohmann::json report = {{"method", solve.method}, {"config_hash", cfg.Hash()}};
  if (solve.method == "tree") {
    est = SpanningTreeInit(graph);
  } else if (solve.method == "irls") {
    const IrlsResult r = IrlsRotationAverage(graph, loss, irls);
    est = r.rotations;
    report["loss"] = loss.Name();
    report["iterations"] = r.iterations;
    report["converged"] = r.converged;
    report["objective"] = r.objective.back();
  } else if (solve.method == "refiner") {
    const std::string path = refiner_path.empty() ? DefaultRefinerPath() : refiner_path;
    est = RefinerForward(graph, LoadRefiner(path));
    report["refiner"] = fs::path(path).filename().string();
  } else {
    throw UsageError("--method must be tree, irls, or refiner");
  }

  fs::create_directories(opts.out);
  ViewGraph out = graph;
  out.SetEstimates(est);
  SaveViewGraph(out, (fs::path(opts.out) / "graph.json").string());
  if (graph.HasGroundTruth()) {
    const PoseErrorReport errs = ComputePoseErrors(est, graph.GaugedGroundTruth());
    std::string csv = "vertex,error_rad\n";
    for (std::size_t v = 0; v < errs.per_camera.size(); ++v) {
      csv += std::to_string(v) + "," + Fixed(errs.per_camera[v]) + "\n";
    }
    WriteText(fs::path(opts.out) / "errors.csv", csv);
    report["mean_error_rad"] = errs.mean;
    report["median_error_rad"] = errs.median;
    std::cout << "solve-poses " << solve.method << ": mean error " << Fixed(errs.mean)
              << " rad, median " << Fixed(errs.median) << " rad\n";
  } else {
    std::cout << "solve-poses " << solve.method << ": no ground truth, estimates written\n";
  }
  WriteJson(fs::path(opts.out) / "report.json", report);
}

void RunTrain(const CommonOptions& opts, const TrainOptions& train) {
  RequireOut(opts);
  if (train.data.empty()) throw UsageError("--data is required");
  const FlatConfig cfg = BuildConfig(opts);
  const std::string refiner_arg = cfg.GetString("refiner", "");
  const TrainConfig tc = TrainConfigFrom(cfg, opts.seed);
  cfg.RejectUnused();
  const ToyBenchmark bench = LoadToyBenchmark(train.data);
  const std::string refiner_path = refiner_arg.empty() ? DefaultRefinerPath() : refiner_arg;
  const RefinerParams refiner = LoadRefiner(refiner_path);

  const fs::path out(opts.out);
  fs::create_directories(out);
  JointState state;
  std::string status = "ok";
  try {
    state = TrainJoint(bench.problem, tc, refiner);
  } catch (const JointDiverged& e) {
    state = e.last_good();
    status = std::string("diverged: ") + e.what();
  }
  WriteText(out / "metrics.csv", MetricsCsv(state.history));
  SaveField(state.params.field, (out / "field.bin").string(), cfg.Hash());
  SaveRefiner(state.params.refiner, (out / "refiner.bin").string(), cfg.Hash());
  WriteText(out / "poses.json", PosesJson(EstimatedPoses(state, bench.problem, tc)));

  nlohmann::json run = {{"command", "train"},
                        {"status", status},
                        {"seed", opts.seed},
                        {"config_hash", cfg.Hash()},
                        {"config", ConfigJson(cfg)},
                        {"epochs_completed", state.history.size()},
                        {"freeze_poses", tc.freeze_poses},
                        {"fixed_lambda", tc.fixed_lambda ? nlohmann::json(*tc.fixed_lambda)
                                                         : nlohmann::json(nullptr)},
                        {"data", fs::absolute(train.data).string()},
                        {"refiner", fs::path(refiner_path).filename().string()}};
  if (bench.problem.ground_truth) {
    const ToyEvaluation ev = EvaluateToy(bench, state, tc);
    const std::vector<UnitQuaternion> truth = PoseRotations(*bench.problem.ground_truth);
    WriteText(out / "heldout_poses_aligned.json",
              PosesJson(AlignToEstimate(bench.heldout_poses,
                                        EstimatedRotations(state, bench.problem, tc), truth)));
    run["initial_rot_err_rad"] = ev.initial_rot_err;
    run["final_rot_err_rad"] = ev.final_rot_err;
    run["heldout_psnr"] = ev.heldout_psnr;
    std::cout << "train: rotation error " << Fixed(ev.initial_rot_err) << " -> "
              << Fixed(ev.final_rot_err) << " rad, held-out PSNR " << Fixed(ev.heldout_psnr)
              << " dB\n";
  }
  WriteJson(out / "run.json", run);
  if (status != "ok") throw std::runtime_error(status);
}

void RunRender(const CommonOptions& opts, const RenderOptions& render) {
  RequireOut(opts);
  if (render.checkpoint.empty() || render.poses.empty()) {
    throw UsageError("--checkpoint and --poses are required");
  }
  const FlatConfig extra = BuildConfig(opts);
  extra.RejectUnused();
  const fs::path ck(render.checkpoint);
  const nlohmann::json run = ReadJson(ck / "run.json");
  FlatConfig cfg;
  for (const auto& [k, v] : run.at("config").items()) cfg.Set(k, v.get<std::string>());
  cfg.GetString("refiner", "");
  const TrainConfig tc = TrainConfigFrom(cfg, run.at("seed").get<std::uint64_t>());
  const RadianceField field = LoadField((ck / "field.bin").string());
  const std::vector<CameraPose> poses = ReadPoses(render.poses);
  const fs::path out(opts.out);
  fs::create_directories(out);
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const Image img =
        RenderImage(poses[k], field, RenderConfigFor(poses[k].Center(), tc, tc.L_octaves));
    char name[32];
    std::snprintf(name, sizeof(name), "render_%03zu", k);
    WriteRaw(img, (out / (std::string(name) + ".raw")).string());
    WritePng(img, (out / (std::string(name) + ".png")).string());
  }
  std::cout << "render: " << poses.size() << " images -> " << opts.out << "\n";
}

void RunEval(const CommonOptions& opts, const EvalOptions& eval) {
  RequireOut(opts);
  if (eval.renders.empty() || eval.references.empty()) {
    throw UsageError("--renders and --references are required");
  }
  const FlatConfig cfg = BuildConfig(opts);
  cfg.RejectUnused();
  const std::vector<fs::path> a = ImageFiles(eval.renders);
  const std::vector<fs::path> b = ImageFiles(eval.references);
  if (a.empty() || a.size() != b.size()) {
    throw std::invalid_argument("eval: found " + std::to_string(a.size()) + " renders and " +
                                std::to_string(b.size()) + " references");
  }
  std::string csv = "render,reference,psnr,ssim\n";
  double sum_p = 0.0, sum_s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const Image x = ReadAny(a[k]);
    const Image y = ReadAny(b[k]);
    const double p = Psnr(x, y), s = Ssim(x, y);
    sum_p += p;
    sum_s += s;
    csv += a[k].filename().string() + "," + b[k].filename().string() + "," + Fixed(p) + "," +
           Fixed(s) + "\n";
  }
  const double n = static_cast<double>(a.size());
  csv += "mean,," + Fixed(sum_p / n) + "," + Fixed(sum_s / n) + "\n";
  fs::create_directories(opts.out);
  WriteText(fs::path(opts.out) / "eval.csv", csv);
  std::cout << "eval: mean PSNR " << Fixed(sum_p / n) << " dB, mean SSIM " << Fixed(sum_s / n)
            << "\n";
}

void RunReport(const CommonOptions& opts, const std::vector<std::string>& runs) {
  RequireOut(opts);
  if (runs.empty()) throw UsageError("report needs at least one run directory");
  const FlatConfig cfg = BuildConfig(opts);
  cfg.RejectUnused();
  struct Row {
    std::string run, mode;
    double init = 0, final = 0, psnr = 0;
  };
  std::vector<Row> rows;
  for (const std::string& dir : runs) {
    const nlohmann::json j = ReadJson(fs::path(dir) / "run.json");
    Row r;
    r.run = fs::path(dir).filename().string();
    if (j.value("freeze_poses", false)) {
      r.mode = "frozen";
    } else if (!j.at("fixed_lambda").is_null()) {
      r.mode = "fixed-" + Fixed(j.at("fixed_lambda").get<double>());
    } else {
      r.mode = "annealed";
    }
    r.init = j.value("initial_rot_err_rad", 0.0);
    r.final = j.value("final_rot_err_rad", 0.0);
    r.psnr = j.value("heldout_psnr", 0.0);
    rows.push_back(r);
  }
  std::string csv = "run,mode,initial_rot_err_rad,final_rot_err_rad,heldout_psnr\n";
  std::ostringstream table;
  table << "| run | mode | rot err init | rot err final | held-out PSNR |\n"
        << "|---|---|---|---|---|\n";
  std::map<std::string, std::pair<double, int>> by_mode;
  for (const Row& r : rows) {
    csv += r.run + "," + r.mode + "," + Fixed(r.init) + "," + Fixed(r.final) + "," +
           Fixed(r.psnr) + "\n";
    char line[256];
    std::snprintf(line, sizeof(line), "| %s | %s | %.4f | %.4f | %.2f |\n", r.run.c_str(),
                  r.mode.c_str(), r.init, r.final, r.psnr);
    table << line;
    by_mode[r.mode].first += r.psnr;
    by_mode[r.mode].second += 1;
  }
  csv += "\nmode,runs,mean_heldout_psnr\n";
  for (const auto& [mode, acc] : by_mode) {
    csv += mode + "," + std::to_string(acc.second) + "," + Fixed(acc.first / acc.second) + "\n";
    char line[128];
    std::snprintf(line, sizeof(line), "mean held-out PSNR %-10s %.2f dB over %d runs\n",
                  mode.c_str(), acc.first / acc.second, acc.second);
    table << line;
  }
  fs::create_directories(opts.out);
  WriteText(fs::path(opts.out) / "report.csv", csv);
  WriteText(fs::path(opts.out) / "report.md", table.str());
  std::cout << table.str();
}

void RunTrainRefiner(const CommonOptions& opts) {
  RequireOut(opts);
  const FlatConfig cfg = BuildConfig(opts);
  const int num_graphs = cfg.GetInt("num_graphs", 200);
  const int vertices = cfg.GetInt("vertices", 20);
  const double p = cfg.GetDouble("edge_probability", 0.3);
  NoiseSpec noise;
  noise.rotation_sigma = cfg.GetDouble("sigma_deg", 5.0) * std::numbers::pi / 180.0;
  noise.outlier_fraction = cfg.GetDouble("outlier_fraction", 0.1);
  RefinerTrainConfig tc;
  tc.model.rounds = cfg.GetInt("rounds", tc.model.rounds);
  tc.model.hidden = cfg.GetInt("hidden", tc.model.hidden);
  tc.epochs = cfg.GetInt("epochs", tc.epochs);
  tc.step_size = cfg.GetDouble("step_size", tc.step_size);
  tc.step_growth = cfg.GetDouble("step_growth", tc.step_growth);
  tc.clip_norm = cfg.GetDouble("clip_norm", tc.clip_norm);
  tc.beta = cfg.GetDouble("beta", tc.beta);
  tc.init_scale = cfg.GetDouble("init_scale", tc.init_scale);
  cfg.RejectUnused();
  tc.seed = opts.seed;
  if (num_graphs < 1) throw std::invalid_argument("num_graphs must be >= 1");
  const std::vector<ViewGraph> data =
      SyntheticGraphDataset(num_graphs, vertices, p, noise, opts.seed);
  const RefinerTrainResult r = TrainRefiner(data, tc);
  const fs::path out(opts.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  SaveRefiner(r.params, out.string(), cfg.Hash());
  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < r.loss_history.size(); ++e) {
    csv += std::to_string(e) + "," + Fixed(r.loss_history[e]) + "\n";
  }
  WriteText(out.string() + ".loss.csv", csv);
  std::cout << "train-refiner: loss " << Fixed(r.loss_history.front()) << " -> "
            << Fixed(r.loss_history.back()) << " -> " << out.string() << "\n";
}

}  // namespace rmnerf::cli
