#include "rmnerf/toy_benchmark.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "rmnerf/motion_averaging.h"
#include "rmnerf/random.h"
#include "rmnerf/viewgraph.h"

namespace rmnerf {
namespace {

constexpr std::uint64_t kRigSalt = 0x9fb21c651e98df25ULL;
constexpr std::uint64_t kPoseSalt = 0xc2b2ae3d27d4eb4fULL;
constexpr std::uint64_t kPairSalt = 0x165667b19e3779f9ULL;
constexpr std::uint64_t kEdgeNoiseSalt = 0x85ebca77c2b2ae63ULL;

double NearFor(const Vec3& c, double radius) { return std::max(c.norm() - radius, 1e-3); }

nlohmann::json PosesToJson(const std::vector<CameraPose>& poses) {
  nlohmann::json out = nlohmann::json::array();
  for (const CameraPose& p : poses) out.push_back(PoseToJson(p));
  return out;
}

std::vector<CameraPose> PosesFromJson(const nlohmann::json& j) {
  std::vector<CameraPose> out;
  for (const auto& p : j) out.push_back(PoseFromJson(p));
  return out;
}

void WriteJson(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

nlohmann::json ReadJson(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string ViewName(const char* prefix, int camera, int scale) {
  return std::string("images/") + prefix + "_c" + std::to_string(camera) + "_s" +
         std::to_string(scale);
}

}  // namespace

void ToyBenchmarkSpec::Validate() const {
  if (rig.num_cameras < 3) throw std::invalid_argument("ToyBenchmarkSpec: need 3 training cameras");
  if (num_heldout < 1) throw std::invalid_argument("ToyBenchmarkSpec: need a held-out camera");
  if (!(pose_sigma >= 0.0) || !(edge_sigma >= 0.0) || !(scene_radius > 0.0) ||
      !(edge_probability >= 0.0 && edge_probability <= 1.0)) {
    throw std::invalid_argument("ToyBenchmarkSpec: bad noise or radius");
  }
}

ToyBenchmark BuildToyBenchmark(const AnalyticScene& scene, const ToyBenchmarkSpec& spec) {
  spec.Validate();
  scene.Validate();
  ToyBenchmark b;
  b.scene = scene;
  RigSpec rs = spec.rig;
  rs.num_cameras = spec.rig.num_cameras + spec.num_heldout;
  rs.seed = SplitMix64(spec.seed ^ kRigSalt);
  b.rig = BuildRig(rs);

  const int total = rs.num_cameras;
  const int stride = total / spec.num_heldout;
  for (int k = 0; k < total; ++k) {
    const bool held = k % stride == stride - 1 &&
                      static_cast<int>(b.heldout_cameras.size()) < spec.num_heldout;
    (held ? b.heldout_cameras : b.train_cameras).push_back(k);
  }

  std::vector<CameraPose> truth;
  for (int cam : b.train_cameras) truth.push_back(b.rig.poses[cam]);
  const int m = static_cast<int>(truth.size());

  for (int t = 0; t < m; ++t) {
    for (int s : b.rig.scales) {
      const CameraPose pose = b.rig.PoseAt(b.train_cameras[t], s);
      const Vec3 c = pose.Center();
      TrainView v;
      v.camera = t;
      v.scale = s;
      v.intrinsics = pose.intrinsics;
      v.image = AnalyticRender(scene, pose, NearFor(c, spec.scene_radius),
                               c.norm() + spec.scene_radius);
      b.problem.views.push_back(std::move(v));
    }
  }
  for (int cam : b.heldout_cameras) {
    for (int s : b.rig.scales) {
      const CameraPose pose = b.rig.PoseAt(cam, s);
      const Vec3 c = pose.Center();
      b.heldout_poses.push_back(pose);
      b.heldout_images.push_back(AnalyticRender(scene, pose, NearFor(c, spec.scene_radius),
                                                c.norm() + spec.scene_radius));
    }
  }

  b.problem.initial_poses =
      PerturbAbsolutePoses(truth, spec.pose_sigma, SplitMix64(spec.seed ^ kPoseSalt));
  b.problem.ground_truth = truth;

  std::vector<Vertex> vertices(m);
  const std::vector<UnitQuaternion> gt = PoseRotations(truth);
  for (int v = 0; v < m; ++v) {
    vertices[v].id = v;
    vertices[v].ground_truth = gt[v];
    vertices[v].estimate = gt[v];
  }
  std::vector<Edge> edges;
  const CounterRng pair_rng(SplitMix64(spec.seed ^ kPairSalt), 0);
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      const bool ring = j == i + 1 || (i == 0 && j == m - 1);
      if (ring || pair_rng.Uniform(static_cast<std::uint64_t>(i * m + j)) < spec.edge_probability) {
        edges.push_back({i, j, RelativeRotation(gt[i], gt[j]), false});
      }
    }
  }
  NoiseSpec ns;
  ns.rotation_sigma = spec.edge_sigma;
  ns.seed = SplitMix64(spec.seed ^ kEdgeNoiseSalt);
  b.problem.graph = PerturbEdges(ViewGraph(std::move(vertices), std::move(edges)), ns);
  b.problem.Validate();
  return b;
}

void SaveToyBenchmark(const ToyBenchmark& bench, const ToyBenchmarkSpec& spec,
                      const std::string& dir, const nlohmann::json& extra) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  fs::create_directories(root / "images");
  nlohmann::json views = nlohmann::json::array();
  for (const TrainView& v : bench.problem.views) {
    const std::string name = ViewName("train", bench.train_cameras[v.camera], v.scale);
    WriteRaw(v.image, (root / (name + ".raw")).string());
    WritePng(v.image, (root / (name + ".png")).string());
    views.push_back({{"camera", v.camera}, {"scale", v.scale}, {"image", name + ".raw"}});
  }
  nlohmann::json heldout = nlohmann::json::array();
  for (std::size_t k = 0; k < bench.heldout_images.size(); ++k) {
    const std::size_t per = bench.rig.scales.size();
    const std::string name =
        ViewName("heldout", bench.heldout_cameras[k / per], bench.rig.scales[k % per]);
    WriteRaw(bench.heldout_images[k], (root / (name + ".raw")).string());
    WritePng(bench.heldout_images[k], (root / (name + ".png")).string());
    heldout.push_back(name + ".raw");
  }
  nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
  manifest["format"] = "rmnerf-toy-1";
  manifest["seed"] = spec.seed;
  manifest["num_cameras"] = bench.train_cameras.size();
  manifest["num_heldout"] = bench.heldout_cameras.size();
  manifest["scales"] = bench.rig.scales;
  manifest["base_size"] = bench.rig.base.width;
  manifest["pose_sigma"] = spec.pose_sigma;
  manifest["edge_sigma"] = spec.edge_sigma;
  manifest["edge_probability"] = spec.edge_probability;
  manifest["scene_radius"] = spec.scene_radius;
  manifest["train_cameras"] = bench.train_cameras;
  manifest["heldout_cameras"] = bench.heldout_cameras;
  manifest["views"] = views;
  manifest["heldout_images"] = heldout;
  WriteJson(root / "manifest.json", manifest);
  WriteJson(root / "scene.json", SceneToJson(bench.scene));
  WriteJson(root / "rig.json", RigToJson(bench.rig));
  WriteJson(root / "poses_clean.json", PosesToJson(*bench.problem.ground_truth));
  WriteJson(root / "poses_perturbed.json", PosesToJson(bench.problem.initial_poses));
  WriteJson(root / "heldout_poses.json", PosesToJson(bench.heldout_poses));
  std::ofstream(root / "graph.json", std::ios::trunc) << ViewGraphToJson(bench.problem.graph);
}

ToyBenchmark LoadToyBenchmark(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  const nlohmann::json manifest = ReadJson(root / "manifest.json");
  ToyBenchmark b;
  try {
    if (manifest.at("format") != "rmnerf-toy-1") throw std::runtime_error("unknown format");
    b.scene = SceneFromJson(ReadJson(root / "scene.json"));
    b.rig = RigFromJson(ReadJson(root / "rig.json"));
    b.train_cameras = manifest.at("train_cameras").get<std::vector<int>>();
    b.heldout_cameras = manifest.at("heldout_cameras").get<std::vector<int>>();
    b.problem.ground_truth = PosesFromJson(ReadJson(root / "poses_clean.json"));
    b.problem.initial_poses = PosesFromJson(ReadJson(root / "poses_perturbed.json"));
    b.heldout_poses = PosesFromJson(ReadJson(root / "heldout_poses.json"));
    std::ifstream graph(root / "graph.json");
    if (!graph) throw std::runtime_error("missing graph.json");
    b.problem.graph = ViewGraphFromJson(
        std::string(std::istreambuf_iterator<char>(graph), std::istreambuf_iterator<char>()));
    for (const auto& v : manifest.at("views")) {
      TrainView view;
      view.camera = v.at("camera").get<int>();
      view.scale = v.at("scale").get<int>();
      if (view.camera < 0 || view.camera >= static_cast<int>(b.train_cameras.size())) {
        throw std::runtime_error("view camera out of range");
      }
      view.intrinsics = b.rig.IntrinsicsAt(view.scale);
      view.image = ReadRaw((root / v.at("image").get<std::string>()).string());
      b.problem.views.push_back(std::move(view));
    }
    for (const auto& name : manifest.at("heldout_images")) {
      b.heldout_images.push_back(ReadRaw((root / name.get<std::string>()).string()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(dir + ": malformed manifest: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(dir + ": " + e.what());
  }
  if (b.heldout_images.size() != b.heldout_poses.size()) {
    throw std::runtime_error(dir + ": held-out images and poses differ in count");
  }
  try {
    b.problem.Validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(dir + ": " + e.what());
  }
  return b;
}

std::vector<CameraPose> AlignToEstimate(const std::vector<CameraPose>& exact,
                                        const std::vector<UnitQuaternion>& train_estimates,
                                        const std::vector<UnitQuaternion>& train_truth) {
  if (train_estimates.size() != train_truth.size() || train_truth.empty()) {
    throw std::invalid_argument("AlignToEstimate: size mismatch");
  }
  Eigen::Vector4d sum = Eigen::Vector4d::Zero();
  for (std::size_t j = 0; j < train_truth.size(); ++j) {
    const Eigen::Vector4d c = (train_truth[j].Inverse() * train_estimates[j]).coeffs();
    sum += c.dot(sum) < 0.0 ? Eigen::Vector4d(-c) : c;
  }
  const RotationMatrix a = QuatToMatrix(UnitQuaternion(sum));
  std::vector<CameraPose> out;
  for (const CameraPose& p : exact) {
    out.push_back(CameraPose::FromCenter(p.rotation * a, a.matrix().transpose() * p.Center(),
                                         p.intrinsics));
  }
  return out;
}

ToyEvaluation EvaluateToy(const ToyBenchmark& bench, const JointState& state,
                          const TrainConfig& cfg) {
  const std::vector<UnitQuaternion> truth = PoseRotations(*bench.problem.ground_truth);
  const std::vector<UnitQuaternion> est = EstimatedRotations(state, bench.problem, cfg);
  ToyEvaluation e;
  e.initial_rot_err = MeanAngularError(PoseRotations(bench.problem.initial_poses), truth);
  e.final_rot_err = MeanAngularError(est, truth);
  const std::vector<CameraPose> aligned = AlignToEstimate(bench.heldout_poses, est, truth);
  e.heldout_psnr = MeanPsnr(state.params.field, aligned, bench.heldout_images, cfg.Resolved());
  return e;
}

}  // namespace rmnerf
