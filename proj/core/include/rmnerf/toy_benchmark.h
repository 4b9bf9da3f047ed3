#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rmnerf/image.h"
#include "rmnerf/joint_optimizer.h"
#include "rmnerf/scenes.h"

namespace rmnerf {

// Multi-scale pose-refinement benchmark on an analytic scene: training
// cameras with perturbed rotations, a relative-rotation graph between them,
// and held-out cameras with exact poses for novel-view evaluation.
struct ToyBenchmarkSpec {
  RigSpec rig;               // rig.num_cameras counts training cameras only
  int num_heldout = 2;
  double pose_sigma = 0.1;   // rad, per axis-angle component
  double edge_probability = 0.5;
  double edge_sigma = 0.02;  // rad, relative-rotation measurement noise
  double scene_radius = 1.5;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct ToyBenchmark {
  AnalyticScene scene;
  MultiScaleRig rig;  // all cameras, training and held out
  std::vector<int> train_cameras;
  std::vector<int> heldout_cameras;
  JointProblem problem;
  // Held-out views at every rig scale with their exact poses.
  std::vector<CameraPose> heldout_poses;
  std::vector<Image> heldout_images;
};

// Held-out cameras are spread evenly around the ring. Images are rendered
// analytically over |c| -/+ scene_radius. The graph holds a ring of
// consecutive training cameras plus seeded random extra pairs.
ToyBenchmark BuildToyBenchmark(const AnalyticScene& scene, const ToyBenchmarkSpec& spec);

// Directory layout: manifest.json, scene.json, rig.json, poses_clean.json,
// poses_perturbed.json, heldout_poses.json, graph.json and images/ holding a
// float32 .raw (exact reload) and an 8-bit .png (inspection) per view.
// `extra` is merged into the manifest. Throws std::runtime_error on I/O
// failures or an inconsistent directory.
void SaveToyBenchmark(const ToyBenchmark& bench, const ToyBenchmarkSpec& spec,
                      const std::string& dir, const nlohmann::json& extra = {});
ToyBenchmark LoadToyBenchmark(const std::string& dir);

// Maps exact poses into the frame of an estimate: with est_j ~ gt_j A for the
// training cameras, A is the sign-aligned quaternion mean of gt_j^-1 est_j and
// an exact pose (R, c) becomes (R A, A^T c).
std::vector<CameraPose> AlignToEstimate(const std::vector<CameraPose>& exact,
                                        const std::vector<UnitQuaternion>& train_estimates,
                                        const std::vector<UnitQuaternion>& train_truth);

struct ToyEvaluation {
  double initial_rot_err = 0.0;
  double final_rot_err = 0.0;
  double heldout_psnr = 0.0;
};

ToyEvaluation EvaluateToy(const ToyBenchmark& bench, const JointState& state,
                          const TrainConfig& cfg);

}  // namespace rmnerf
