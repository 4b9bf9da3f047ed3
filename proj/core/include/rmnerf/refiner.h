#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rmnerf/autodiff.h"
#include "rmnerf/so3.h"
#include "rmnerf/viewgraph.h"

namespace rmnerf {

struct RefinerConfig {
  int rounds = 4;
  int hidden = 32;

  void Validate() const;
};

// Per round r: W_msg (hidden x (4 + 2 hidden)), W_upd (hidden x 2 hidden),
// W_out (3 x hidden), stored in that order.
struct RefinerParams {
  RefinerConfig config;
  std::vector<Eigen::MatrixXd> weights;

  static RefinerParams Zeros(const RefinerConfig& cfg);
  // Uniform entries in [-scale, scale] keyed by seed.
  static RefinerParams Random(const RefinerConfig& cfg, std::uint64_t seed, double scale);

  int NumParams() const;
  bool AllFinite() const;
};

// Edge structure of a graph in the form the tape ops consume.
struct RefinerGraph {
  int num_vertices = 0;
  std::vector<std::pair<int, int>> edges;  // (i, j)
  Eigen::MatrixXd measured;                // 4 x E, columns (w, x, y, z)
  // Each edge feeds both endpoints: incidence 2e targets j from i using
  // R~_ij, incidence 2e + 1 targets i from j using R~_ij^-1.
  std::vector<int> target;
  std::vector<int> source;
  Eigen::MatrixXd incidence_measured;  // 4 x 2E
  Eigen::MatrixXd inverse_degree;      // 1 x V

  static RefinerGraph FromViewGraph(const ViewGraph& graph);
};

Eigen::MatrixXd QuatsToMatrix(const std::vector<UnitQuaternion>& q);
std::vector<UnitQuaternion> MatrixToQuats(const Eigen::MatrixXd& m);

// Message passing on a tape. init: 4 x V node quaternions. Each round forms
// the residual of every incidence, r = R~ q_src q_tgt^-1, with the
// sign-invariant feature [r_w r_xyz; 1 - r_w^2]; averages tanh(W_msg [feature; h_tgt; h_src]) over
// the incidences of each vertex; updates h += tanh(W_upd [h; a]); and rotates
// q <- normalize(q + [0; W_out h] q / 2). The output is right-multiplied by
// the inverse of vertex 0 and sign-canonicalized.
ad::Var RefinerForwardTape(const RefinerGraph& graph, const ad::Var& init,
                           std::span<const ad::Var> weights, int rounds);

// Runs the refiner from SpanningTreeInit(graph).
std::vector<UnitQuaternion> RefinerForward(const ViewGraph& graph,
                                           const RefinerParams& params);
std::vector<UnitQuaternion> RefinerForward(const ViewGraph& graph,
                                           const RefinerParams& params,
                                           const std::vector<UnitQuaternion>& init);

// sum_e d_Q(q_j q_i^-1, rel_e) + beta sum_v d_Q(q_v, abs_v) on a tape.
// pred: 4 x V, relative_targets: 4 x E, absolute_targets: 4 x V.
ad::Var MraLossTape(const ad::Var& pred, const std::vector<std::pair<int, int>>& edges,
                    const Eigen::MatrixXd& relative_targets,
                    const Eigen::MatrixXd& absolute_targets, double beta);

// Loss against the graph's gauge-fixed ground truth. Throws std::logic_error
// when ground truth is missing.
double MraLoss(const std::vector<UnitQuaternion>& pred, const ViewGraph& graph,
               double beta);

struct RefinerTrainConfig {
  RefinerConfig model;
  int epochs = 400;
  double step_size = 0.5;
  // After a rejected step the step halves; accepted steps grow it by this
  // factor up to step_size.
  double step_growth = 2.0;
  double clip_norm = 1.0;  // global gradient norm
  double beta = 1.0;
  double init_scale = 0.05;
  std::uint64_t seed = 0;
};

struct RefinerTrainResult {
  RefinerParams params;
  std::vector<double> loss_history;  // accepted mean loss per epoch, epochs + 1 entries
};

// Full-batch gradient descent on the mean per-graph loss with global-norm
// clipping. A step that raises the loss is undone and retried at half
// length, so the recorded loss history is non-increasing. Throws
// std::runtime_error if the loss becomes non-finite, and std::logic_error if
// any graph lacks ground truth.
RefinerTrainResult TrainRefiner(
    const std::vector<ViewGraph>& dataset, const RefinerTrainConfig& cfg,
    const std::function<void(int epoch, double loss)>& on_epoch = nullptr);

// Mean dataset loss and its gradient with respect to every weight tensor.
double RefinerLossAndGradient(const std::vector<ViewGraph>& dataset,
                              const RefinerParams& params, double beta,
                              std::vector<Eigen::MatrixXd>* gradient);

void SaveRefiner(const RefinerParams& params, const std::string& path,
                 const std::string& config_hash);
RefinerParams LoadRefiner(const std::string& path);

}  // namespace rmnerf
