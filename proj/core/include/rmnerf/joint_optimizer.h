#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rmnerf/autodiff.h"
#include "rmnerf/image.h"
#include "rmnerf/radiance_field.h"
#include "rmnerf/refiner.h"
#include "rmnerf/so3.h"
#include "rmnerf/viewgraph.h"

namespace rmnerf {

struct TrainConfig {
  double lambda0 = 1.0;
  // Values <= 0 (decay_k) or < 0 (warmup_epochs) select the defaults
  // ln 2 / (10% of epochs) and 20% of epochs.
  double decay_k = 0.0;
  int warmup_epochs = -1;
  double lambda_floor = 0.5;
  // Replaces the schedule with a constant (ablations, frozen baselines).
  std::optional<double> fixed_lambda;

  double beta = 1.0;
  double anneal_b = 1.0;
  int L_octaves = 6;
  int dir_octaves = 2;
  int hidden = 64;
  int latent = 16;

  double lr_field = 5e-3;     // Adam
  double lr_refiner = 0.02;   // gradient descent with clipping
  double refiner_clip = 1.0;
  double lr_center = 1e-3;    // Adam
  double lr_anchor = 2e-3;    // Adam

  int epochs = 600;
  int batch_rays = 256;
  int num_samples = 16;
  // Training rays are integrated over |c0| -/+ scene_radius with c0 the initial
  // camera center; evaluation renders use the current center.
  double scene_radius = 1.5;
  // Keep the initial poses fixed and skip the refiner.
  bool freeze_poses = false;
  std::uint64_t seed = 0;

  // Copy with defaults filled in; throws std::invalid_argument on bad values.
  TrainConfig Resolved() const;
  int EffectiveWarmup() const;
};

// lambda for an epoch: 1 during warmup, then max(lambda0 exp(-k (epoch -
// warmup)), floor). Expects a resolved config.
double LambdaSchedule(int epoch, const TrainConfig& cfg);
// Anneal progress: 0 during warmup, then linear up to L_octaves at the final
// epoch.
double AnnealProgress(int epoch, const TrainConfig& cfg);

// One training image.
struct TrainView {
  int camera = 0;  // index into JointProblem::initial_poses
  int scale = 1;
  Image image;
  Intrinsics intrinsics;
};

struct JointProblem {
  std::vector<TrainView> views;
  // Noisy starting poses with scale-1 intrinsics; camera 0 is the gauge.
  std::vector<CameraPose> initial_poses;
  // Relative rotation measurements between training cameras.
  ViewGraph graph;
  std::optional<std::vector<CameraPose>> ground_truth;

  void Validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double lambda = 0.0;
  double anneal_t = 0.0;
  double l_rgb = 0.0;
  double l_mra = 0.0;
  double mean_rot_err_rad = 0.0;  // NaN without ground truth
  double psnr = 0.0;              // of the epoch's training batch
};

struct JointParams {
  RadianceField field;
  RefinerParams refiner;
  Eigen::Matrix3Xd centers;
  Eigen::Vector3d anchor_omega = Eigen::Vector3d::Zero();
  Eigen::Vector4d anchor_base{1.0, 0.0, 0.0, 0.0};
};

struct JointState {
  JointParams params;
  int epoch = 0;
  std::vector<EpochMetrics> history;
};

// Rays drawn for one epoch, grouped by camera.
struct RayBatch {
  std::vector<int> view;
  std::vector<Eigen::Vector2d> pixel;
  Eigen::Matrix3Xd target;
};

RayBatch SampleBatch(const JointProblem& problem, int num_rays, std::uint64_t seed,
                     int epoch);

// Initial state: fresh field, the given refiner, centers from the initial
// poses, and an anchor that best maps the refiner output onto the initial
// rotations.
JointState InitJointState(const JointProblem& problem, const TrainConfig& cfg,
                          const RefinerParams& refiner);

struct LossValue {
  double total = 0.0;
  double rgb = 0.0;
  double mra = 0.0;
};

// lambda L_mra + (1 - lambda) L_rgb with L_rgb the summed squared error over
// the batch. Expects a resolved config.
LossValue CombinedLoss(const JointState& state, const RayBatch& batch,
                       const JointProblem& problem, const TrainConfig& cfg, double lambda,
                       double anneal_t);

// Gradients of CombinedLoss grouped by parameter block.
struct JointGradients {
  std::vector<Eigen::MatrixXd> field;
  std::vector<Eigen::MatrixXd> refiner;
  Eigen::Matrix3Xd centers;
  Eigen::Vector3d anchor_omega;
};
LossValue CombinedLossAndGradient(const JointState& state, const RayBatch& batch,
                                  const JointProblem& problem, const TrainConfig& cfg,
                                  double lambda, double anneal_t,
                                  JointGradients* gradients);

// Current world-to-camera rotations of the training cameras.
std::vector<UnitQuaternion> EstimatedRotations(const JointState& state,
                                               const JointProblem& problem,
                                               const TrainConfig& cfg);
std::vector<CameraPose> EstimatedPoses(const JointState& state, const JointProblem& problem,
                                       const TrainConfig& cfg);

// Thrown when the loss turns non-finite; carries the last finite state.
class JointDiverged : public std::runtime_error {
 public:
  JointDiverged(const std::string& what, JointState last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const JointState& last_good() const { return last_good_; }

 private:
  JointState last_good_;
};

// Warmup (lambda = 1, poses only) followed by the annealed joint phase. The
// refiner is expected to be pretrained.
JointState TrainJoint(const JointProblem& problem, const TrainConfig& cfg,
                      const RefinerParams& refiner,
                      const std::function<void(const EpochMetrics&)>& on_epoch = nullptr);

struct PoseErrorReport {
  std::vector<double> per_camera;
  double mean = 0.0;
  double median = 0.0;
};
// Geodesic rotation errors after aligning camera 0.
PoseErrorReport ComputePoseErrors(const std::vector<UnitQuaternion>& estimates,
                                  const std::vector<UnitQuaternion>& truth);
std::vector<UnitQuaternion> PoseRotations(const std::vector<CameraPose>& poses);

// Render configuration for a camera at `center` under cfg.
RenderConfig RenderConfigFor(const Vec3& center, const TrainConfig& cfg, double anneal_t);
// Mean PSNR of the field rendered at `poses` against `references`.
double MeanPsnr(const RadianceField& field, const std::vector<CameraPose>& poses,
                const std::vector<Image>& references, const TrainConfig& cfg);

// Per-epoch CSV with header epoch,lambda,anneal_t,L_rgb,L_mra,mean_rot_err_rad,psnr.
std::string MetricsCsv(const std::vector<EpochMetrics>& history);

}  // namespace rmnerf
