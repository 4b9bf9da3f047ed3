#pragma once

#include <string>
#include <vector>

#include "rmnerf/so3.h"
#include "rmnerf/viewgraph.h"

namespace rmnerf {

enum class LossKind { kL2, kHuber, kGemanMcClure };

// rho(theta) on geodesic residual angles. All kinds agree with theta^2 / 2
// near zero:
//   L2             theta^2 / 2
//   Huber(delta)   theta^2 / 2 inside delta, delta (theta - delta / 2) outside
//   GM(sigma)      sigma^2 theta^2 / (2 (sigma^2 + theta^2))
struct RobustLoss {
  LossKind kind = LossKind::kL2;
  double scale = 1.0;  // delta for Huber, sigma for Geman-McClure

  static RobustLoss L2() { return {}; }
  static RobustLoss Huber(double delta);
  static RobustLoss GemanMcClure(double sigma);

  double Rho(double theta) const;
  // rho'(theta) / theta, the IRLS weight; finite at theta = 0.
  double Weight(double theta) const;
  std::string Name() const;
};

// Parses "l2", "huber:<delta>", "gm:<sigma>".
RobustLoss ParseRobustLoss(const std::string& text);

struct IrlsOptions {
  int max_iters = 50;
  double tol = 1e-8;  // mean tangent update norm, radians
};

struct IrlsResult {
  std::vector<UnitQuaternion> rotations;
  int iterations = 0;
  bool converged = false;
  // Objective before the first iteration and after each accepted one.
  std::vector<double> objective;
  double final_update = 0.0;
};

// Sum over edges of rho(angle(R~_ij, R_j R_i^T)).
double RotationAveragingObjective(const ViewGraph& graph,
                                  const std::vector<UnitQuaternion>& rotations,
                                  const RobustLoss& loss);

// Iteratively reweighted Gauss-Newton on left tangent perturbations
// R_v <- exp(w_v) R_v with w_0 = 0. Each step solves the weighted normal
// equations of w_j - A w_i = log(R~_ij A^T), A = R_j R_i^T, and backtracks
// until the objective does not increase. Starts from SpanningTreeInit unless
// `init` is given. Non-convergence is reported in the result, not thrown.
IrlsResult IrlsRotationAverage(const ViewGraph& graph, const RobustLoss& loss,
                               const IrlsOptions& options = {},
                               const std::vector<UnitQuaternion>* init = nullptr);

struct TranslationEdge {
  int i = 0;
  int j = 0;
  Vec3 t_ij = Vec3::Zero();  // measurement of t_j - R_ij t_i
};

// Least squares over t_j - R_j R_i^T t_i = t~_ij with t_0 = 0. Throws
// std::runtime_error when the stacked system is rank deficient.
std::vector<Vec3> TranslationSolve(const std::vector<RotationMatrix>& rotations,
                                   const std::vector<TranslationEdge>& edges);

// Geodesic error of each estimate after aligning both sets so vertex 0 is the
// identity.
std::vector<double> GaugeAlignedErrors(const std::vector<UnitQuaternion>& estimates,
                                       const std::vector<UnitQuaternion>& truth);
double MeanAngularError(const std::vector<UnitQuaternion>& estimates,
                        const std::vector<UnitQuaternion>& truth);

}  // namespace rmnerf
