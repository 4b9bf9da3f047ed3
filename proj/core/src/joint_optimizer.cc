#include "rmnerf/joint_optimizer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

#include "rmnerf/motion_averaging.h"
#include "rmnerf/random.h"

namespace rmnerf {
namespace {

constexpr std::uint64_t kJitterSalt = 0x5bd1e995a4f3c2d1ULL;
constexpr std::uint64_t kBatchSalt = 0x27d4eb2f165667c5ULL;

struct Adam {
  Eigen::MatrixXd m;
  Eigen::MatrixXd v;
  int t = 0;

  void Step(Eigen::Ref<Eigen::MatrixXd> param, const Eigen::MatrixXd& grad, double lr) {
    constexpr double kB1 = 0.9;
    constexpr double kB2 = 0.999;
    constexpr double kEps = 1e-8;
    if (m.size() == 0) {
      m = Eigen::MatrixXd::Zero(grad.rows(), grad.cols());
      v = Eigen::MatrixXd::Zero(grad.rows(), grad.cols());
    }
    ++t;
    m = kB1 * m + (1.0 - kB1) * grad;
    v = kB2 * v + (1.0 - kB2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(kB1, t);
    const double c2 = 1.0 - std::pow(kB2, t);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
  }
};

// Quantities of a problem that stay fixed during training.
struct ProblemCache {
  RefinerGraph graph;
  Eigen::MatrixXd refiner_init;       // 4 x M, gauged to camera 0
  Eigen::MatrixXd absolute_targets;   // 4 x M spanning-tree estimates
  Eigen::MatrixXd initial_rotations;  // 4 x M
  std::optional<std::vector<UnitQuaternion>> truth;

  explicit ProblemCache(const JointProblem& p) {
    graph = RefinerGraph::FromViewGraph(p.graph);
    const std::vector<UnitQuaternion> initial = PoseRotations(p.initial_poses);
    initial_rotations = QuatsToMatrix(initial);
    std::vector<UnitQuaternion> gauged;
    const UnitQuaternion inv0 = initial[0].Inverse();
    for (const auto& q : initial) gauged.push_back(q * inv0);
    refiner_init = QuatsToMatrix(gauged);
    absolute_targets = QuatsToMatrix(SpanningTreeInit(p.graph));
    if (p.ground_truth) truth = PoseRotations(*p.ground_truth);
  }
};

struct LossTape {
  ad::Var total;
  ad::Var rgb;
  ad::Var mra;
  ad::Var rotations;  // 4 x M
  std::vector<ad::Var> field;
  std::vector<ad::Var> refiner;
  ad::Var centers;
  ad::Var omega;
};

Eigen::Vector3d CameraRay(const Intrinsics& k, const Eigen::Vector2d& pixel) {
  return Eigen::Vector3d((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0).normalized();
}

LossTape BuildLoss(ad::Tape& tape, const JointState& state, const RayBatch& batch,
                   const JointProblem& problem, const ProblemCache& cache,
                   const TrainConfig& cfg, double lambda, double anneal_t) {
  const JointParams& p = state.params;
  const int m = static_cast<int>(problem.initial_poses.size());
  LossTape lt;
  lt.field = p.field.Bind(tape, true);
  if (cfg.freeze_poses) {
    lt.rotations = tape.Constant(cache.initial_rotations);
    lt.mra = tape.Scalar(0.0);
    lt.centers = tape.Constant(p.centers);
  } else {
    for (const auto& w : p.refiner.weights) lt.refiner.push_back(tape.Leaf(w));
    const ad::Var refined = RefinerForwardTape(cache.graph, tape.Constant(cache.refiner_init),
                                               lt.refiner, p.refiner.config.rounds);
    lt.mra = MraLossTape(refined, cache.graph.edges, cache.graph.measured,
                         cache.absolute_targets, cfg.beta);
    lt.omega = tape.Leaf(p.anchor_omega);
    const ad::Var anchor_parts[] = {tape.Scalar(1.0), ad::Scale(lt.omega, 0.5)};
    const ad::Var anchor = ad::QuatMul(ad::NormalizeCols(ad::ConcatRows(anchor_parts)),
                                       tape.Constant(p.anchor_base));
    lt.rotations = ad::QuatMul(refined, ad::RepeatCols(anchor, m));
    lt.centers = tape.Leaf(p.centers);
  }

  // Rays arrive grouped by camera; build one direction block per camera.
  const int r_total = static_cast<int>(batch.view.size());
  std::vector<ad::Var> origin_blocks, dir_blocks;
  std::vector<double> radii(r_total);
  std::vector<RaySamplePlan> plans(r_total);
  const std::uint64_t jitter_seed = SplitMix64(cfg.seed ^ kJitterSalt);
  int start = 0;
  while (start < r_total) {
    const int cam = problem.views[batch.view[start]].camera;
    int end = start;
    while (end < r_total && problem.views[batch.view[end]].camera == cam) ++end;
    Eigen::Matrix3Xd cam_dirs(3, end - start);
    // Bounds come from the initial pose so the loss stays smooth in the centers.
    const double dist = problem.initial_poses[cam].Center().norm();
    const double near = std::max(dist - cfg.scene_radius, 1e-3);
    const double far = dist + cfg.scene_radius;
    for (int r = start; r < end; ++r) {
      const Intrinsics& k = problem.views[batch.view[r]].intrinsics;
      cam_dirs.col(r - start) = CameraRay(k, batch.pixel[r]);
      radii[r] = PixelRadius(k);
      plans[r] = StratifiedIntervals(
          near, far, cfg.num_samples, jitter_seed,
          static_cast<std::uint64_t>(state.epoch) * static_cast<std::uint64_t>(r_total) + r);
    }
    const ad::Var rot = ad::QuatToRotation(ad::GatherCols(lt.rotations, {cam}));
    dir_blocks.push_back(ad::MatMul(ad::Transpose(rot), tape.Constant(cam_dirs)));
    origin_blocks.push_back(ad::GatherCols(lt.centers, std::vector<int>(end - start, cam)));
    start = end;
  }
  EncodingConfig enc;
  enc.num_octaves = cfg.L_octaves;
  enc.anneal_b = cfg.anneal_b;
  enc.anneal_t = anneal_t;
  const ad::Var rgb = RenderRays(p.field, lt.field, ad::ConcatCols(origin_blocks),
                                 ad::ConcatCols(dir_blocks), radii, plans, enc);
  const ad::Var err = rgb - tape.Constant(batch.target);
  lt.rgb = ad::Sum(err * err);
  lt.total = ad::Scale(lt.mra, lambda) + ad::Scale(lt.rgb, 1.0 - lambda);
  return lt;
}

double MeanRotationError(const ad::Var& rotations, const ProblemCache& cache) {
  if (!cache.truth) return std::numeric_limits<double>::quiet_NaN();
  return MeanAngularError(MatrixToQuats(rotations.value()), *cache.truth);
}

double BatchPsnr(double l_rgb, int rays) {
  const double mse = l_rgb / (3.0 * rays);
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

LossValue Evaluate(const JointState& state, const RayBatch& batch, const JointProblem& problem,
                   const ProblemCache& cache, const TrainConfig& cfg, double lambda,
                   double anneal_t, JointGradients* gradients, double* rot_err) {
  ad::Tape tape;
  const LossTape lt = BuildLoss(tape, state, batch, problem, cache, cfg, lambda, anneal_t);
  LossValue v{lt.total.scalar(), lt.rgb.scalar(), lt.mra.scalar()};
  if (rot_err) *rot_err = MeanRotationError(lt.rotations, cache);
  if (gradients) {
    const ad::Gradients g = tape.Backward(lt.total);
    gradients->field.clear();
    for (const auto& f : lt.field) gradients->field.push_back(g.Wrt(f));
    gradients->refiner.clear();
    for (const auto& w : lt.refiner) gradients->refiner.push_back(g.Wrt(w));
    if (cfg.freeze_poses) {
      gradients->centers = Eigen::Matrix3Xd::Zero(3, state.params.centers.cols());
      gradients->anchor_omega.setZero();
    } else {
      gradients->centers = g.Wrt(lt.centers);
      gradients->anchor_omega = g.Wrt(lt.omega);
    }
  }
  return v;
}

}  // namespace

TrainConfig TrainConfig::Resolved() const {
  TrainConfig c = *this;
  if (c.epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (c.warmup_epochs < 0) c.warmup_epochs = static_cast<int>(std::lround(0.2 * c.epochs));
  if (c.decay_k <= 0.0) {
    c.decay_k = std::numbers::ln2 / std::max(1.0, 0.1 * c.epochs);
  }
  if (!(c.lambda_floor > 0.0 && c.lambda_floor < 1.0)) {
    throw std::invalid_argument("TrainConfig: lambda_floor must be in (0, 1)");
  }
  if (c.fixed_lambda && !(*c.fixed_lambda >= 0.0 && *c.fixed_lambda <= 1.0)) {
    throw std::invalid_argument("TrainConfig: fixed lambda must be in [0, 1]");
  }
  if (!(c.lr_field > 0.0 && c.lr_refiner > 0.0 && c.lr_center > 0.0 && c.lr_anchor > 0.0 &&
        c.refiner_clip > 0.0)) {
    throw std::invalid_argument("TrainConfig: rates must be positive");
  }
  if (!(c.anneal_b > 0.0) || c.L_octaves < 1 || c.dir_octaves < 1 ||
      c.dir_octaves > c.L_octaves || c.batch_rays < 1 || c.num_samples < 1 ||
      !(c.scene_radius > 0.0) || !(c.beta >= 0.0) || c.hidden < 1 || c.latent < 1) {
    throw std::invalid_argument("TrainConfig: invalid sizes or constants");
  }
  return c;
}

int TrainConfig::EffectiveWarmup() const { return fixed_lambda ? 0 : warmup_epochs; }

double LambdaSchedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("LambdaSchedule: negative epoch");
  if (cfg.fixed_lambda) return *cfg.fixed_lambda;
  if (epoch < cfg.warmup_epochs) return 1.0;
  return std::max(cfg.lambda0 * std::exp(-cfg.decay_k * (epoch - cfg.warmup_epochs)),
                  cfg.lambda_floor);
}

double AnnealProgress(int epoch, const TrainConfig& cfg) {
  const int warmup = cfg.EffectiveWarmup();
  if (epoch < warmup) return 0.0;
  const int span = std::max(1, cfg.epochs - 1 - warmup);
  return std::min(static_cast<double>(cfg.L_octaves),
                  cfg.L_octaves * static_cast<double>(epoch - warmup) / span);
}

void JointProblem::Validate() const {
  const int m = static_cast<int>(initial_poses.size());
  if (m < 2) throw std::invalid_argument("JointProblem: need at least 2 cameras");
  if (graph.num_vertices() != m) {
    throw std::invalid_argument("JointProblem: graph size differs from camera count");
  }
  if (views.empty()) throw std::invalid_argument("JointProblem: no training views");
  for (const TrainView& v : views) {
    if (v.camera < 0 || v.camera >= m) throw std::invalid_argument("JointProblem: bad view camera");
    if (v.image.width() != v.intrinsics.width || v.image.height() != v.intrinsics.height) {
      throw std::invalid_argument("JointProblem: image size differs from intrinsics");
    }
  }
  if (ground_truth && static_cast<int>(ground_truth->size()) != m) {
    throw std::invalid_argument("JointProblem: ground truth size mismatch");
  }
}

RayBatch SampleBatch(const JointProblem& problem, int num_rays, std::uint64_t seed, int epoch) {
  const CounterRng rng(SplitMix64(seed ^ kBatchSalt), static_cast<std::uint64_t>(epoch));
  struct Ray {
    int view;
    Eigen::Vector2d pixel;
  };
  std::vector<Ray> rays(num_rays);
  for (int r = 0; r < num_rays; ++r) {
    const int v = static_cast<int>(rng.Below(3 * r, problem.views.size()));
    const TrainView& view = problem.views[v];
    const int x = static_cast<int>(rng.Below(3 * r + 1, view.image.width()));
    const int y = static_cast<int>(rng.Below(3 * r + 2, view.image.height()));
    rays[r] = {v, Eigen::Vector2d(x + 0.5, y + 0.5)};
  }
  std::stable_sort(rays.begin(), rays.end(), [&](const Ray& a, const Ray& b) {
    return problem.views[a.view].camera < problem.views[b.view].camera;
  });
  RayBatch batch;
  batch.target.resize(3, num_rays);
  for (int r = 0; r < num_rays; ++r) {
    batch.view.push_back(rays[r].view);
    batch.pixel.push_back(rays[r].pixel);
    const int x = static_cast<int>(rays[r].pixel.x());
    const int y = static_cast<int>(rays[r].pixel.y());
    batch.target.col(r) = problem.views[rays[r].view].image.Pixel(x, y);
  }
  return batch;
}

JointState InitJointState(const JointProblem& problem, const TrainConfig& cfg_in,
                          const RefinerParams& refiner) {
  const TrainConfig cfg = cfg_in.Resolved();
  problem.Validate();
  JointState state;
  FieldConfig fc;
  fc.pos_octaves = cfg.L_octaves;
  fc.dir_octaves = cfg.dir_octaves;
  fc.hidden = cfg.hidden;
  fc.latent = cfg.latent;
  state.params.field = RadianceField(fc, cfg.seed);
  state.params.refiner = refiner;
  const int m = static_cast<int>(problem.initial_poses.size());
  state.params.centers.resize(3, m);
  for (int j = 0; j < m; ++j) state.params.centers.col(j) = problem.initial_poses[j].Center();
  if (!cfg.freeze_poses) {
    const ProblemCache cache(problem);
    ad::Tape tape;
    std::vector<ad::Var> w;
    for (const auto& x : refiner.weights) w.push_back(tape.Constant(x));
    const std::vector<UnitQuaternion> refined = MatrixToQuats(
        RefinerForwardTape(cache.graph, tape.Constant(cache.refiner_init), w,
                           refiner.config.rounds)
            .value());
    const std::vector<UnitQuaternion> initial = PoseRotations(problem.initial_poses);
    // Sign-aligned quaternion mean of q_f^-1 q_initial.
    Eigen::Vector4d sum = Eigen::Vector4d::Zero();
    for (int j = 0; j < m; ++j) {
      const Eigen::Vector4d c = (refined[j].Inverse() * initial[j]).coeffs();
      sum += c.dot(sum) < 0.0 ? Eigen::Vector4d(-c) : c;
    }
    state.params.anchor_base = UnitQuaternion(sum).coeffs();
  }
  return state;
}

LossValue CombinedLoss(const JointState& state, const RayBatch& batch,
                       const JointProblem& problem, const TrainConfig& cfg, double lambda,
                       double anneal_t) {
  return CombinedLossAndGradient(state, batch, problem, cfg, lambda, anneal_t, nullptr);
}

LossValue CombinedLossAndGradient(const JointState& state, const RayBatch& batch,
                                  const JointProblem& problem, const TrainConfig& cfg,
                                  double lambda, double anneal_t,
                                  JointGradients* gradients) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("CombinedLoss: lambda must be in [0, 1]");
  }
  const ProblemCache cache(problem);
  return Evaluate(state, batch, problem, cache, cfg, lambda, anneal_t, gradients, nullptr);
}

std::vector<UnitQuaternion> EstimatedRotations(const JointState& state,
                                               const JointProblem& problem,
                                               const TrainConfig& cfg) {
  const ProblemCache cache(problem);
  if (cfg.freeze_poses) return MatrixToQuats(cache.initial_rotations);
  ad::Tape tape;
  std::vector<ad::Var> w;
  for (const auto& x : state.params.refiner.weights) w.push_back(tape.Constant(x));
  const std::vector<UnitQuaternion> refined = MatrixToQuats(
      RefinerForwardTape(cache.graph, tape.Constant(cache.refiner_init), w,
                         state.params.refiner.config.rounds)
          .value());
  const Eigen::Vector3d& om = state.params.anchor_omega;
  const UnitQuaternion anchor = UnitQuaternion(1.0, 0.5 * om.x(), 0.5 * om.y(), 0.5 * om.z()) *
                                UnitQuaternion(Eigen::Vector4d(state.params.anchor_base));
  std::vector<UnitQuaternion> out;
  for (const auto& q : refined) out.push_back(q * anchor);
  return out;
}

std::vector<CameraPose> EstimatedPoses(const JointState& state, const JointProblem& problem,
                                       const TrainConfig& cfg) {
  const std::vector<UnitQuaternion> rot = EstimatedRotations(state, problem, cfg);
  std::vector<CameraPose> poses;
  for (std::size_t j = 0; j < rot.size(); ++j) {
    poses.push_back(CameraPose::FromCenter(QuatToMatrix(rot[j]),
                                           state.params.centers.col(static_cast<Eigen::Index>(j)),
                                           problem.initial_poses[j].intrinsics));
  }
  return poses;
}

JointState TrainJoint(const JointProblem& problem, const TrainConfig& cfg_in,
                      const RefinerParams& refiner,
                      const std::function<void(const EpochMetrics&)>& on_epoch) {
  const TrainConfig cfg = cfg_in.Resolved();
  JointState state = InitJointState(problem, cfg, refiner);
  const ProblemCache cache(problem);
  std::vector<Adam> field_adam(state.params.field.params().size());
  Adam center_adam, anchor_adam;
  JointGradients grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    state.epoch = epoch;
    const double lambda = LambdaSchedule(epoch, cfg);
    const double anneal_t = AnnealProgress(epoch, cfg);
    const RayBatch batch = SampleBatch(problem, cfg.batch_rays, cfg.seed, epoch);
    LossValue value;
    double rot_err = 0.0;
    try {
      value = Evaluate(state, batch, problem, cache, cfg, lambda, anneal_t, &grad, &rot_err);
    } catch (const std::domain_error& e) {
      throw JointDiverged("TrainJoint: non-finite value at epoch " + std::to_string(epoch) +
                              ": " + e.what(),
                          state);
    }
    if (!std::isfinite(value.total)) {
      throw JointDiverged("TrainJoint: loss diverged at epoch " + std::to_string(epoch), state);
    }
    EpochMetrics em{epoch, lambda, anneal_t, value.rgb, value.mra, rot_err,
                    BatchPsnr(value.rgb, cfg.batch_rays)};

    for (std::size_t k = 0; k < grad.field.size(); ++k) {
      field_adam[k].Step(state.params.field.params()[k], grad.field[k], cfg.lr_field);
    }
    if (!cfg.freeze_poses) {
      double norm2 = 0.0;
      for (const auto& g : grad.refiner) norm2 += g.squaredNorm();
      const double norm = std::sqrt(norm2);
      const double factor = norm > cfg.refiner_clip ? cfg.refiner_clip / norm : 1.0;
      for (std::size_t k = 0; k < grad.refiner.size(); ++k) {
        state.params.refiner.weights[k] -= cfg.lr_refiner * factor * grad.refiner[k];
      }
      center_adam.Step(state.params.centers, grad.centers, cfg.lr_center);
      anchor_adam.Step(state.params.anchor_omega, grad.anchor_omega, cfg.lr_anchor);
    }
    state.history.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  state.epoch = cfg.epochs;
  return state;
}

std::vector<UnitQuaternion> PoseRotations(const std::vector<CameraPose>& poses) {
  std::vector<UnitQuaternion> q;
  q.reserve(poses.size());
  for (const CameraPose& p : poses) q.push_back(MatrixToQuat(p.rotation));
  return q;
}

PoseErrorReport ComputePoseErrors(const std::vector<UnitQuaternion>& estimates,
                                  const std::vector<UnitQuaternion>& truth) {
  PoseErrorReport r;
  r.per_camera = GaugeAlignedErrors(estimates, truth);
  double s = 0.0;
  for (double e : r.per_camera) s += e;
  r.mean = s / static_cast<double>(r.per_camera.size());
  std::vector<double> sorted = r.per_camera;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return r;
}

RenderConfig RenderConfigFor(const Vec3& center, const TrainConfig& cfg, double anneal_t) {
  RenderConfig rc;
  const double dist = center.norm();
  rc.near = std::max(dist - cfg.scene_radius, 1e-3);
  rc.far = dist + cfg.scene_radius;
  rc.num_samples = cfg.num_samples;
  rc.encoding.num_octaves = cfg.L_octaves;
  rc.encoding.anneal_b = cfg.anneal_b;
  rc.encoding.anneal_t = anneal_t;
  return rc;
}

double MeanPsnr(const RadianceField& field, const std::vector<CameraPose>& poses,
                const std::vector<Image>& references, const TrainConfig& cfg) {
  if (poses.size() != references.size() || poses.empty()) {
    throw std::invalid_argument("MeanPsnr: pose/reference count mismatch");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const Image img =
        RenderImage(poses[k], field, RenderConfigFor(poses[k].Center(), cfg, cfg.L_octaves));
    total += Psnr(img, references[k]);
  }
  return total / static_cast<double>(poses.size());
}

std::string MetricsCsv(const std::vector<EpochMetrics>& history) {
  std::ostringstream out;
  out << "epoch,lambda,anneal_t,L_rgb,L_mra,mean_rot_err_rad,psnr\n";
  char line[512];
  for (const EpochMetrics& m : history) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.epoch,
                  m.lambda, m.anneal_t, m.l_rgb, m.l_mra, m.mean_rot_err_rad, m.psnr);
    out << line;
  }
  return out.str();
}

}  // namespace rmnerf
