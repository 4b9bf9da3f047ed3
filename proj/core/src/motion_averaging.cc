#include "rmnerf/motion_averaging.h"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

namespace rmnerf {
namespace {

double EdgeAngle(const Edge& e, const std::vector<UnitQuaternion>& r) {
  return GeodesicAngle(e.measured, RelativeRotation(r[e.i], r[e.j]));
}

}  // namespace

RobustLoss RobustLoss::Huber(double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("Huber: delta must be positive");
  return {LossKind::kHuber, delta};
}

RobustLoss RobustLoss::GemanMcClure(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("GemanMcClure: sigma must be positive");
  return {LossKind::kGemanMcClure, sigma};
}

double RobustLoss::Rho(double theta) const {
  switch (kind) {
    case LossKind::kL2:
      return 0.5 * theta * theta;
    case LossKind::kHuber:
      return theta <= scale ? 0.5 * theta * theta : scale * (theta - 0.5 * scale);
    case LossKind::kGemanMcClure: {
      const double s2 = scale * scale;
      return 0.5 * s2 * theta * theta / (s2 + theta * theta);
    }
  }
  return 0.0;
}

double RobustLoss::Weight(double theta) const {
  switch (kind) {
    case LossKind::kL2:
      return 1.0;
    case LossKind::kHuber:
      return theta <= scale ? 1.0 : scale / theta;
    case LossKind::kGemanMcClure: {
      const double s2 = scale * scale;
      const double d = s2 + theta * theta;
      return s2 * s2 / (d * d);
    }
  }
  return 1.0;
}

std::string RobustLoss::Name() const {
  std::ostringstream out;
  switch (kind) {
    case LossKind::kL2:
      return "l2";
    case LossKind::kHuber:
      out << "huber:" << scale;
      break;
    case LossKind::kGemanMcClure:
      out << "gm:" << scale;
      break;
  }
  return out.str();
}

RobustLoss ParseRobustLoss(const std::string& text) {
  if (text == "l2") return RobustLoss::L2();
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("unknown loss: " + text);
  const std::string name = text.substr(0, colon);
  double value = 0.0;
  try {
    std::size_t used = 0;
    value = std::stod(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw std::invalid_argument("bad loss parameter in: " + text);
  }
  if (name == "huber") return RobustLoss::Huber(value);
  if (name == "gm") return RobustLoss::GemanMcClure(value);
  throw std::invalid_argument("unknown loss: " + text);
}

double RotationAveragingObjective(const ViewGraph& graph,
                                  const std::vector<UnitQuaternion>& rotations,
                                  const RobustLoss& loss) {
  if (static_cast<int>(rotations.size()) != graph.num_vertices()) {
    throw std::invalid_argument("objective: rotation count mismatch");
  }
  double total = 0.0;
  for (const Edge& e : graph.edges()) total += loss.Rho(EdgeAngle(e, rotations));
  return total;
}

IrlsResult IrlsRotationAverage(const ViewGraph& graph, const RobustLoss& loss,
                               const IrlsOptions& options,
                               const std::vector<UnitQuaternion>* init) {
  if (!graph.IsConnected()) throw std::invalid_argument("IRLS: disconnected graph");
  const int n = graph.num_vertices();
  IrlsResult result;
  result.rotations = init ? *init : SpanningTreeInit(graph);
  if (static_cast<int>(result.rotations.size()) != n) {
    throw std::invalid_argument("IRLS: initialization size mismatch");
  }
  // Gauge: vertex 0 at the identity.
  const UnitQuaternion anchor = result.rotations[0].Inverse();
  for (auto& q : result.rotations) q = q * anchor;

  const int dim = 3 * (n - 1);
  double objective = RotationAveragingObjective(graph, result.rotations, loss);
  result.objective.push_back(objective);
  for (int iter = 0; iter < options.max_iters; ++iter) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
    for (const Edge& e : graph.edges()) {
      const UnitQuaternion a = RelativeRotation(result.rotations[e.i], result.rotations[e.j]);
      const Vec3 r = LogMap(e.measured * a.Inverse());
      const double w = loss.Weight(r.norm());
      const Mat3 am = QuatToMatrix(a).matrix();
      // Residual w_j - A w_i - r; blocks J_j = I, J_i = -A.
      const int bi = 3 * (e.i - 1);
      const int bj = 3 * (e.j - 1);
      if (e.i > 0) {
        h.block<3, 3>(bi, bi) += w * am.transpose() * am;
        g.segment<3>(bi) += w * (-am.transpose()) * r;
      }
      if (e.j > 0) {
        h.block<3, 3>(bj, bj) += w * Mat3::Identity();
        g.segment<3>(bj) += w * r;
      }
      if (e.i > 0 && e.j > 0) {
        h.block<3, 3>(bi, bj) += -w * am.transpose();
        h.block<3, 3>(bj, bi) += -w * am;
      }
    }
    const Eigen::VectorXd step = h.ldlt().solve(g);
    if (!step.allFinite()) break;

    double scale = 1.0;
    bool accepted = false;
    std::vector<UnitQuaternion> trial(n);
    double trial_objective = objective;
    for (int halving = 0; halving < 30; ++halving, scale *= 0.5) {
      trial[0] = result.rotations[0];
      for (int v = 1; v < n; ++v) {
        trial[v] = ExpMap(scale * step.segment<3>(3 * (v - 1))) * result.rotations[v];
      }
      trial_objective = RotationAveragingObjective(graph, trial, loss);
      if (trial_objective <= objective) {
        accepted = true;
        break;
      }
    }
    double mean_update = 0.0;
    for (int v = 1; v < n; ++v) mean_update += scale * step.segment<3>(3 * (v - 1)).norm();
    mean_update /= std::max(1, n - 1);
    result.final_update = accepted ? mean_update : 0.0;
    if (!accepted) {
      // No descent along the Gauss-Newton direction: a stationary point.
      result.converged = true;
      break;
    }
    result.rotations = trial;
    objective = trial_objective;
    result.objective.push_back(objective);
    result.iterations = iter + 1;
    if (mean_update < options.tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

std::vector<Vec3> TranslationSolve(const std::vector<RotationMatrix>& rotations,
                                   const std::vector<TranslationEdge>& edges) {
  const int n = static_cast<int>(rotations.size());
  if (n < 1) throw std::invalid_argument("TranslationSolve: no cameras");
  const int dim = 3 * (n - 1);
  std::vector<Vec3> out(n, Vec3::Zero());
  if (dim == 0) return out;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(3 * static_cast<Eigen::Index>(edges.size()), dim);
  Eigen::VectorXd b(3 * static_cast<Eigen::Index>(edges.size()));
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const TranslationEdge& e = edges[k];
    if (e.i < 0 || e.j < 0 || e.i >= n || e.j >= n || e.i == e.j) {
      throw std::invalid_argument("TranslationSolve: bad edge");
    }
    const Mat3 r_ij = RelativeRotation(rotations[e.i], rotations[e.j]).matrix();
    const Eigen::Index row = 3 * static_cast<Eigen::Index>(k);
    if (e.j > 0) a.block<3, 3>(row, 3 * (e.j - 1)) += Mat3::Identity();
    if (e.i > 0) a.block<3, 3>(row, 3 * (e.i - 1)) -= r_ij;
    b.segment<3>(row) = e.t_ij;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < dim) {
    throw std::runtime_error("TranslationSolve: rank-deficient system (rank " +
                             std::to_string(qr.rank()) + " of " + std::to_string(dim) + ")");
  }
  const Eigen::VectorXd x = qr.solve(b);
  for (int v = 1; v < n; ++v) out[v] = x.segment<3>(3 * (v - 1));
  return out;
}

std::vector<double> GaugeAlignedErrors(const std::vector<UnitQuaternion>& estimates,
                                       const std::vector<UnitQuaternion>& truth) {
  if (estimates.size() != truth.size() || estimates.empty()) {
    throw std::invalid_argument("GaugeAlignedErrors: size mismatch");
  }
  const UnitQuaternion ea = estimates[0].Inverse();
  const UnitQuaternion ta = truth[0].Inverse();
  std::vector<double> err(estimates.size());
  for (std::size_t v = 0; v < estimates.size(); ++v) {
    err[v] = GeodesicAngle(estimates[v] * ea, truth[v] * ta);
  }
  return err;
}

double MeanAngularError(const std::vector<UnitQuaternion>& estimates,
                        const std::vector<UnitQuaternion>& truth) {
  const std::vector<double> e = GaugeAlignedErrors(estimates, truth);
  double s = 0.0;
  for (double v : e) s += v;
  return s / static_cast<double>(e.size());
}

}  // namespace rmnerf
