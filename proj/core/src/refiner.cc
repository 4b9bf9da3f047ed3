#include "rmnerf/refiner.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "rmnerf/param_io.h"
#include "rmnerf/random.h"

namespace rmnerf {
namespace {

Eigen::Vector4d Conj(const Eigen::Vector4d& q) { return {q[0], -q[1], -q[2], -q[3]}; }

ad::Var DistanceQ(const ad::Var& p, const ad::Var& q) {
  return ad::Min(ad::ColumnNorm(p - q), ad::ColumnNorm(p + q));
}

struct GraphTargets {
  Eigen::MatrixXd relative;
  Eigen::MatrixXd absolute;
};

GraphTargets GroundTruthTargets(const ViewGraph& graph) {
  const std::vector<UnitQuaternion> gt = graph.GaugedGroundTruth();
  GraphTargets t;
  t.absolute = QuatsToMatrix(gt);
  t.relative.resize(4, graph.num_edges());
  for (int e = 0; e < graph.num_edges(); ++e) {
    const Edge& edge = graph.edges()[e];
    t.relative.col(e) = RelativeRotation(gt[edge.i], gt[edge.j]).coeffs();
  }
  return t;
}

}  // namespace

void RefinerConfig::Validate() const {
  if (rounds < 1 || hidden < 1) throw std::invalid_argument("RefinerConfig: sizes must be positive");
}

RefinerParams RefinerParams::Zeros(const RefinerConfig& cfg) {
  cfg.Validate();
  RefinerParams p;
  p.config = cfg;
  for (int r = 0; r < cfg.rounds; ++r) {
    p.weights.push_back(Eigen::MatrixXd::Zero(cfg.hidden, 4 + 2 * cfg.hidden));
    p.weights.push_back(Eigen::MatrixXd::Zero(cfg.hidden, 2 * cfg.hidden));
    p.weights.push_back(Eigen::MatrixXd::Zero(3, cfg.hidden));
  }
  return p;
}

RefinerParams RefinerParams::Random(const RefinerConfig& cfg, std::uint64_t seed,
                                    double scale) {
  RefinerParams p = Zeros(cfg);
  for (std::size_t t = 0; t < p.weights.size(); ++t) {
    const CounterRng rng(seed, t);
    std::uint64_t k = 0;
    for (Eigen::Index i = 0; i < p.weights[t].size(); ++i) {
      p.weights[t].data()[i] = scale * (2.0 * rng.Uniform(k++) - 1.0);
    }
  }
  return p;
}

int RefinerParams::NumParams() const {
  int n = 0;
  for (const auto& w : weights) n += static_cast<int>(w.size());
  return n;
}

bool RefinerParams::AllFinite() const {
  for (const auto& w : weights) {
    if (!w.allFinite()) return false;
  }
  return true;
}

RefinerGraph RefinerGraph::FromViewGraph(const ViewGraph& graph) {
  RefinerGraph g;
  g.num_vertices = graph.num_vertices();
  const int ne = graph.num_edges();
  g.measured.resize(4, ne);
  g.incidence_measured.resize(4, 2 * ne);
  std::vector<int> degree(g.num_vertices, 0);
  for (int e = 0; e < ne; ++e) {
    const Edge& edge = graph.edges()[e];
    g.edges.emplace_back(edge.i, edge.j);
    const Eigen::Vector4d m = edge.measured.coeffs();
    g.measured.col(e) = m;
    g.target.push_back(edge.j);
    g.source.push_back(edge.i);
    g.incidence_measured.col(2 * e) = m;
    g.target.push_back(edge.i);
    g.source.push_back(edge.j);
    g.incidence_measured.col(2 * e + 1) = Conj(m);
    ++degree[edge.i];
    ++degree[edge.j];
  }
  g.inverse_degree.resize(1, g.num_vertices);
  for (int v = 0; v < g.num_vertices; ++v) {
    g.inverse_degree(0, v) = degree[v] > 0 ? 1.0 / degree[v] : 0.0;
  }
  return g;
}

Eigen::MatrixXd QuatsToMatrix(const std::vector<UnitQuaternion>& q) {
  Eigen::MatrixXd m(4, static_cast<Eigen::Index>(q.size()));
  for (std::size_t v = 0; v < q.size(); ++v) m.col(static_cast<Eigen::Index>(v)) = q[v].coeffs();
  return m;
}

std::vector<UnitQuaternion> MatrixToQuats(const Eigen::MatrixXd& m) {
  if (m.rows() != 4) throw std::invalid_argument("MatrixToQuats: need 4 rows");
  std::vector<UnitQuaternion> q;
  q.reserve(m.cols());
  for (Eigen::Index v = 0; v < m.cols(); ++v) q.emplace_back(Eigen::Vector4d(m.col(v)));
  return q;
}

ad::Var RefinerForwardTape(const RefinerGraph& graph, const ad::Var& init,
                           std::span<const ad::Var> weights, int rounds) {
  if (static_cast<int>(weights.size()) != 3 * rounds) {
    throw std::invalid_argument("RefinerForwardTape: weight count mismatch");
  }
  ad::Tape& tape = *init.tape();
  const int n = graph.num_vertices;
  const int hidden = static_cast<int>(weights[0].rows());
  const ad::Var meas = tape.Constant(graph.incidence_measured);
  const ad::Var inv_deg = tape.Constant(graph.inverse_degree.replicate(hidden, 1));
  const ad::Var zero_row = tape.Constant(Eigen::MatrixXd::Zero(1, n));
  const ad::Var ones3 = tape.Constant(Eigen::MatrixXd::Ones(3, 1));
  ad::Var q = init;
  ad::Var h = tape.Constant(Eigen::MatrixXd::Zero(hidden, n));
  for (int r = 0; r < rounds; ++r) {
    const ad::Var& w_msg = weights[3 * r];
    const ad::Var& w_upd = weights[3 * r + 1];
    const ad::Var& w_out = weights[3 * r + 2];
    if (!graph.target.empty()) {
      const ad::Var q_src = ad::GatherCols(q, graph.source);
      const ad::Var q_tgt = ad::GatherCols(q, graph.target);
      const ad::Var res = ad::QuatMul(ad::QuatMul(meas, q_src), ad::QuatConj(q_tgt));
      // [w xyz; 1 - w^2] does not change under res -> -res.
      const ad::Var res_w = ad::SliceRows(res, 0, 1);
      const ad::Var feat_parts[] = {ad::SliceRows(res, 1, 3) * ad::MatMul(ones3, res_w),
                                    ad::AddConst(-(res_w * res_w), 1.0)};
      const ad::Var feat = ad::ConcatRows(feat_parts);
      const ad::Var msg_in[] = {feat, ad::GatherCols(h, graph.target),
                                ad::GatherCols(h, graph.source)};
      const ad::Var msg = ad::Tanh(ad::MatMul(w_msg, ad::ConcatRows(msg_in)));
      const ad::Var agg = ad::ScatterAddCols(msg, graph.target, n) * inv_deg;
      const ad::Var upd_in[] = {h, agg};
      h = h + ad::Tanh(ad::MatMul(w_upd, ad::ConcatRows(upd_in)));
    }
    const ad::Var delta_parts[] = {zero_row, ad::MatMul(w_out, h)};
    const ad::Var delta = ad::ConcatRows(delta_parts);
    q = ad::NormalizeCols(q + ad::Scale(ad::QuatMul(delta, q), 0.5));
  }
  const ad::Var anchor = ad::GatherCols(ad::QuatConj(q), std::vector<int>(n, 0));
  return ad::SignCanonical(ad::QuatMul(q, anchor));
}

std::vector<UnitQuaternion> RefinerForward(const ViewGraph& graph,
                                           const RefinerParams& params) {
  return RefinerForward(graph, params, SpanningTreeInit(graph));
}

std::vector<UnitQuaternion> RefinerForward(const ViewGraph& graph,
                                           const RefinerParams& params,
                                           const std::vector<UnitQuaternion>& init) {
  if (static_cast<int>(init.size()) != graph.num_vertices()) {
    throw std::invalid_argument("RefinerForward: init size mismatch");
  }
  const RefinerGraph rg = RefinerGraph::FromViewGraph(graph);
  ad::Tape tape;
  std::vector<ad::Var> w;
  for (const auto& m : params.weights) w.push_back(tape.Constant(m));
  const ad::Var out = RefinerForwardTape(rg, tape.Constant(QuatsToMatrix(init)), w,
                                         params.config.rounds);
  return MatrixToQuats(out.value());
}

ad::Var MraLossTape(const ad::Var& pred, const std::vector<std::pair<int, int>>& edges,
                    const Eigen::MatrixXd& relative_targets,
                    const Eigen::MatrixXd& absolute_targets, double beta) {
  ad::Tape& tape = *pred.tape();
  std::vector<int> src, dst;
  for (const auto& [i, j] : edges) {
    src.push_back(i);
    dst.push_back(j);
  }
  ad::Var total = ad::Scale(ad::Sum(DistanceQ(pred, tape.Constant(absolute_targets))), beta);
  if (!edges.empty()) {
    const ad::Var rel = ad::QuatMul(ad::GatherCols(pred, dst),
                                    ad::QuatConj(ad::GatherCols(pred, src)));
    total = ad::Sum(DistanceQ(rel, tape.Constant(relative_targets))) + total;
  }
  return total;
}

double MraLoss(const std::vector<UnitQuaternion>& pred, const ViewGraph& graph,
               double beta) {
  if (static_cast<int>(pred.size()) != graph.num_vertices()) {
    throw std::invalid_argument("MraLoss: prediction size mismatch");
  }
  const GraphTargets t = GroundTruthTargets(graph);
  double total = 0.0;
  for (int e = 0; e < graph.num_edges(); ++e) {
    const Edge& edge = graph.edges()[e];
    total += QuatDistance(RelativeRotation(pred[edge.i], pred[edge.j]),
                          UnitQuaternion(Eigen::Vector4d(t.relative.col(e))));
  }
  for (int v = 0; v < graph.num_vertices(); ++v) {
    total += beta * QuatDistance(pred[v], UnitQuaternion(Eigen::Vector4d(t.absolute.col(v))));
  }
  return total;
}

double RefinerLossAndGradient(const std::vector<ViewGraph>& dataset,
                              const RefinerParams& params, double beta,
                              std::vector<Eigen::MatrixXd>* gradient) {
  if (dataset.empty()) throw std::invalid_argument("refiner: empty dataset");
  if (gradient) {
    gradient->clear();
    for (const auto& w : params.weights) gradient->push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  }
  double loss = 0.0;
  // Graph order fixes the accumulation order.
  for (const ViewGraph& graph : dataset) {
    const GraphTargets t = GroundTruthTargets(graph);
    const RefinerGraph rg = RefinerGraph::FromViewGraph(graph);
    ad::Tape tape;
    std::vector<ad::Var> w;
    for (const auto& m : params.weights) w.push_back(tape.Leaf(m));
    const ad::Var init = tape.Constant(QuatsToMatrix(SpanningTreeInit(graph)));
    const ad::Var pred = RefinerForwardTape(rg, init, w, params.config.rounds);
    const ad::Var l = MraLossTape(pred, rg.edges, t.relative, t.absolute, beta);
    loss += l.scalar();
    if (gradient) {
      const ad::Gradients g = tape.Backward(l);
      for (std::size_t k = 0; k < w.size(); ++k) (*gradient)[k] += g.Wrt(w[k]);
    }
  }
  const double inv = 1.0 / static_cast<double>(dataset.size());
  if (gradient) {
    for (auto& g : *gradient) g *= inv;
  }
  return loss * inv;
}

RefinerTrainResult TrainRefiner(const std::vector<ViewGraph>& dataset,
                                const RefinerTrainConfig& cfg,
                                const std::function<void(int, double)>& on_epoch) {
  for (const ViewGraph& g : dataset) {
    if (!g.HasGroundTruth()) throw std::logic_error("TrainRefiner: graph without ground truth");
  }
  if (!(cfg.step_size > 0.0) || !(cfg.clip_norm > 0.0) || cfg.epochs < 0) {
    throw std::invalid_argument("TrainRefiner: bad step size, clip norm, or epochs");
  }
  RefinerTrainResult result;
  result.params = RefinerParams::Random(cfg.model, cfg.seed, cfg.init_scale);
  std::vector<Eigen::MatrixXd> grad, accepted_grad;
  RefinerParams accepted = result.params;
  double accepted_loss = std::numeric_limits<double>::infinity();
  double step = cfg.step_size;
  int epoch = 0;
  while (true) {
    double loss = 0.0;
    try {
      loss = RefinerLossAndGradient(dataset, result.params, cfg.beta, &grad);
    } catch (const std::domain_error& e) {
      throw std::runtime_error("TrainRefiner: non-finite value at epoch " +
                               std::to_string(epoch) + ": " + e.what());
    }
    if (!std::isfinite(loss)) {
      throw std::runtime_error("TrainRefiner: loss diverged at epoch " + std::to_string(epoch));
    }
    if (loss <= accepted_loss) {
      accepted = result.params;
      accepted_loss = loss;
      accepted_grad = grad;
      result.loss_history.push_back(loss);
      if (on_epoch) on_epoch(epoch, loss);
      step = std::min(cfg.step_size, step * cfg.step_growth);
    } else {
      // Reject: return to the last accepted point with a shorter step.
      result.params = accepted;
      step *= 0.5;
      result.loss_history.push_back(accepted_loss);
      if (on_epoch) on_epoch(epoch, accepted_loss);
    }
    if (epoch == cfg.epochs) break;
    ++epoch;
    double norm2 = 0.0;
    for (const auto& g : accepted_grad) norm2 += g.squaredNorm();
    const double norm = std::sqrt(norm2);
    const double factor = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
    for (std::size_t k = 0; k < accepted_grad.size(); ++k) {
      result.params.weights[k] = accepted.weights[k] - step * factor * accepted_grad[k];
    }
  }
  result.params = accepted;
  return result;
}

void SaveRefiner(const RefinerParams& params, const std::string& path,
                 const std::string& config_hash) {
  SaveParams(path, params.weights,
             {{"kind", "refiner"},
              {"config_hash", config_hash},
              {"rounds", params.config.rounds},
              {"hidden", params.config.hidden}});
}

RefinerParams LoadRefiner(const std::string& path) {
  ParamBlob blob = LoadParams(path);
  if (blob.meta.value("kind", "") != "refiner") {
    throw std::runtime_error("LoadRefiner: " + path + " is not a refiner");
  }
  RefinerConfig cfg;
  cfg.rounds = blob.meta.at("rounds").get<int>();
  cfg.hidden = blob.meta.at("hidden").get<int>();
  RefinerParams p = RefinerParams::Zeros(cfg);
  if (blob.tensors.size() != p.weights.size()) {
    throw std::runtime_error("LoadRefiner: tensor count mismatch");
  }
  for (std::size_t k = 0; k < p.weights.size(); ++k) {
    if (blob.tensors[k].rows() != p.weights[k].rows() ||
        blob.tensors[k].cols() != p.weights[k].cols()) {
      throw std::runtime_error("LoadRefiner: tensor shape mismatch");
    }
    p.weights[k] = std::move(blob.tensors[k]);
  }
  return p;
}

}  // namespace rmnerf
