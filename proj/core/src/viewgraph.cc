#include "rmnerf/viewgraph.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rmnerf/random.h"

namespace rmnerf {
namespace {

using nlohmann::json;

// Stream offsets so generation, edge noise, and outlier selection draw from
// disjoint counter-based streams.
constexpr std::uint64_t kRotationStream = 1ULL << 40;
constexpr std::uint64_t kEdgeStream = 2ULL << 40;
constexpr std::uint64_t kPatchStream = 3ULL << 40;
constexpr std::uint64_t kNoiseStream = 4ULL << 40;
constexpr std::uint64_t kOutlierStream = 5ULL << 40;
constexpr std::uint64_t kSelectStream = 6ULL << 40;
constexpr std::uint64_t kPoseStream = 7ULL << 40;

UnitQuaternion RandomRotation(const CounterRng& rng) {
  return QuatFromNormals(rng.Normal(0), rng.Normal(1), rng.Normal(2),
                         rng.Normal(3));
}

AxisAngle GaussianAxisAngle(const CounterRng& rng, double sigma) {
  return sigma * Vec3(rng.Normal(0), rng.Normal(1), rng.Normal(2));
}

// Union-find over vertex indices.
struct Components {
  explicit Components(int n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int Find(int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  }
  bool Union(int a, int b) {
    a = Find(a);
    b = Find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
  std::vector<int> parent;
};

json QuatToJson(const UnitQuaternion& q) {
  return json::array({q.w(), q.x(), q.y(), q.z()});
}

UnitQuaternion QuatFromJson(const json& j) {
  if (!j.is_array() || j.size() != 4) {
    throw std::invalid_argument("quaternion must be a [w, x, y, z] array");
  }
  return UnitQuaternion(j[0].get<double>(), j[1].get<double>(),
                        j[2].get<double>(), j[3].get<double>());
}

// Measurement of R_b R_a^T from an edge in either direction.
std::optional<UnitQuaternion> Measurement(const ViewGraph& graph, int a, int b) {
  for (const Edge& e : graph.edges()) {
    if (e.i == a && e.j == b) return e.measured;
    if (e.i == b && e.j == a) return e.measured.Inverse();
  }
  return std::nullopt;
}

}  // namespace

ViewGraph::ViewGraph(std::vector<Vertex> vertices, std::vector<Edge> edges)
    : vertices_(std::move(vertices)), edges_(std::move(edges)) {
  std::sort(vertices_.begin(), vertices_.end(),
            [](const Vertex& a, const Vertex& b) { return a.id < b.id; });
  std::sort(edges_.begin(), edges_.end(), [](const Edge& a, const Edge& b) {
    return std::tie(a.i, a.j) < std::tie(b.i, b.j);
  });
  const int n = num_vertices();
  if (n == 0) throw std::invalid_argument("ViewGraph: no vertices");
  for (int v = 0; v < n; ++v) {
    if (vertices_[v].id != v) {
      throw std::invalid_argument("ViewGraph: vertex ids must be 0..n-1");
    }
  }
  for (std::size_t k = 0; k < edges_.size(); ++k) {
    const Edge& e = edges_[k];
    if (e.i < 0 || e.j < 0 || e.i >= n || e.j >= n) {
      throw std::invalid_argument("ViewGraph: edge endpoint out of range");
    }
    if (e.i == e.j) throw std::invalid_argument("ViewGraph: self edge");
    if (k > 0 && edges_[k - 1].i == e.i && edges_[k - 1].j == e.j) {
      throw std::invalid_argument("ViewGraph: duplicate edge");
    }
  }
  if (!IsConnected()) throw std::invalid_argument("ViewGraph: disconnected");
}

bool ViewGraph::HasGroundTruth() const {
  return std::all_of(vertices_.begin(), vertices_.end(),
                     [](const Vertex& v) { return v.ground_truth.has_value(); });
}

std::vector<UnitQuaternion> ViewGraph::GaugedGroundTruth() const {
  if (!HasGroundTruth()) {
    throw std::logic_error("ViewGraph: ground truth rotations are missing");
  }
  const UnitQuaternion ref_inv = vertices_[0].ground_truth->Inverse();
  std::vector<UnitQuaternion> out;
  out.reserve(vertices_.size());
  for (const Vertex& v : vertices_) out.push_back(*v.ground_truth * ref_inv);
  return out;
}

std::vector<UnitQuaternion> ViewGraph::Estimates() const {
  std::vector<UnitQuaternion> out;
  out.reserve(vertices_.size());
  for (const Vertex& v : vertices_) out.push_back(v.estimate);
  return out;
}

void ViewGraph::SetEstimates(const std::vector<UnitQuaternion>& estimates) {
  if (estimates.size() != vertices_.size()) {
    throw std::invalid_argument("SetEstimates: size mismatch");
  }
  for (std::size_t v = 0; v < vertices_.size(); ++v) {
    vertices_[v].estimate = estimates[v];
  }
}

std::vector<std::vector<ViewGraph::Incidence>> ViewGraph::Adjacency() const {
  std::vector<std::vector<Incidence>> adj(vertices_.size());
  for (int k = 0; k < num_edges(); ++k) {
    adj[edges_[k].i].push_back({edges_[k].j, k});
    adj[edges_[k].j].push_back({edges_[k].i, k});
  }
  for (auto& list : adj) {
    std::sort(list.begin(), list.end(),
              [](const Incidence& a, const Incidence& b) {
                return std::tie(a.neighbor, a.edge) < std::tie(b.neighbor, b.edge);
              });
  }
  return adj;
}

bool ViewGraph::IsConnected() const {
  Components comps(num_vertices());
  int merges = 0;
  for (const Edge& e : edges_) merges += comps.Union(e.i, e.j) ? 1 : 0;
  return merges == num_vertices() - 1;
}

void NoiseSpec::Validate() const {
  if (!(rotation_sigma >= 0.0) || !std::isfinite(rotation_sigma)) {
    throw std::invalid_argument("NoiseSpec: sigma must be >= 0");
  }
  if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0)) {
    throw std::invalid_argument("NoiseSpec: outlier fraction must be in [0, 1]");
  }
}

ViewGraph GenerateSyntheticGraph(int n, double edge_probability,
                                 std::uint64_t seed) {
  if (n < 3) throw std::invalid_argument("GenerateSyntheticGraph: n < 3");
  if (!(edge_probability >= 0.0 && edge_probability <= 1.0)) {
    throw std::invalid_argument("GenerateSyntheticGraph: p not in [0, 1]");
  }
  std::vector<Vertex> vertices(n);
  for (int v = 0; v < n; ++v) {
    vertices[v].id = v;
    vertices[v].ground_truth = RandomRotation(CounterRng(seed, kRotationStream + v));
  }

  std::vector<std::pair<int, int>> pairs;
  const CounterRng edge_rng(seed, kEdgeStream);
  std::uint64_t counter = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (edge_rng.Uniform(counter++) < edge_probability) pairs.emplace_back(i, j);
    }
  }
  Components comps(n);
  for (const auto& [i, j] : pairs) comps.Union(i, j);
  // Join every remaining component to a random vertex of the component
  // containing vertex 0.
  const CounterRng patch_rng(seed, kPatchStream);
  std::uint64_t patch_counter = 0;
  for (int v = 1; v < n; ++v) {
    if (comps.Find(v) == comps.Find(0)) continue;
    std::vector<int> root_members;
    for (int u = 0; u < n; ++u) {
      if (comps.Find(u) == comps.Find(0)) root_members.push_back(u);
    }
    const int u = root_members[patch_rng.Below(patch_counter++, root_members.size())];
    pairs.emplace_back(std::min(u, v), std::max(u, v));
    comps.Union(u, v);
  }

  std::vector<Edge> edges;
  edges.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    Edge e;
    e.i = i;
    e.j = j;
    e.measured = RelativeRotation(*vertices[i].ground_truth, *vertices[j].ground_truth);
    e.outlier = false;
    edges.push_back(e);
  }
  ViewGraph graph(std::move(vertices), std::move(edges));
  graph.SetEstimates(SpanningTreeInit(graph));
  return graph;
}

ViewGraph PerturbEdges(const ViewGraph& graph, const NoiseSpec& spec) {
  spec.Validate();
  ViewGraph out = graph;
  auto& edges = out.mutable_edges();
  const int m = static_cast<int>(edges.size());
  if (spec.rotation_sigma > 0.0) {
    for (int k = 0; k < m; ++k) {
      const CounterRng rng(spec.seed, kNoiseStream + k);
      edges[k].measured = ExpMap(GaussianAxisAngle(rng, spec.rotation_sigma)) *
                          edges[k].measured;
    }
  }
  const int num_outliers =
      static_cast<int>(std::lround(spec.outlier_fraction * static_cast<double>(m)));
  if (num_outliers > 0) {
    // Partial Fisher-Yates over edge indices.
    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    const CounterRng select(spec.seed, kSelectStream);
    for (int k = 0; k < num_outliers; ++k) {
      const int pick = k + static_cast<int>(select.Below(k, m - k));
      std::swap(order[k], order[pick]);
    }
    for (int k = 0; k < m; ++k) {
      if (!edges[k].outlier.has_value()) edges[k].outlier = false;
    }
    for (int k = 0; k < num_outliers; ++k) {
      const int e = order[k];
      edges[e].measured = RandomRotation(CounterRng(spec.seed, kOutlierStream + e));
      edges[e].outlier = true;
    }
  }
  return out;
}

std::vector<ViewGraph> SyntheticGraphDataset(int count, int n, double edge_probability,
                                             const NoiseSpec& noise, std::uint64_t seed) {
  if (count < 0) throw std::invalid_argument("SyntheticGraphDataset: negative count");
  noise.Validate();
  std::vector<ViewGraph> out;
  out.reserve(count);
  const std::uint64_t graph_base = SplitMix64(seed);
  const std::uint64_t noise_base = SplitMix64(seed ^ 0x27d4eb2f165667c5ULL);
  for (int k = 0; k < count; ++k) {
    NoiseSpec ns = noise;
    ns.seed = noise_base + static_cast<std::uint64_t>(k);
    out.push_back(PerturbEdges(
        GenerateSyntheticGraph(n, edge_probability, graph_base + static_cast<std::uint64_t>(k)),
        ns));
  }
  return out;
}

std::vector<CameraPose> PerturbAbsolutePoses(const std::vector<CameraPose>& poses,
                                             double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("PerturbAbsolutePoses: sigma < 0");
  std::vector<CameraPose> out = poses;
  if (sigma == 0.0) return out;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const CounterRng rng(seed, kPoseStream + k);
    const RotationMatrix noise = QuatToMatrix(ExpMap(GaussianAxisAngle(rng, sigma)));
    const Vec3 center = poses[k].Center();
    out[k] = CameraPose::FromCenter(noise * poses[k].rotation, center,
                                    poses[k].intrinsics);
  }
  return out;
}

std::vector<UnitQuaternion> SpanningTreeInit(const ViewGraph& graph) {
  const int n = graph.num_vertices();
  if (!graph.IsConnected()) {
    throw std::invalid_argument("SpanningTreeInit: disconnected graph");
  }
  const auto adj = graph.Adjacency();
  std::vector<UnitQuaternion> est(n);
  std::vector<bool> seen(n, false);
  std::queue<int> frontier;
  seen[0] = true;
  frontier.push(0);
  while (!frontier.empty()) {
    const int v = frontier.front();
    frontier.pop();
    for (const auto& [u, k] : adj[v]) {
      if (seen[u]) continue;
      const Edge& e = graph.edges()[k];
      est[u] = (e.i == v) ? e.measured * est[v] : e.measured.Inverse() * est[v];
      seen[u] = true;
      frontier.push(u);
    }
  }
  return est;
}

double CycleError(const ViewGraph& graph, int i, int j, int k) {
  const auto ij = Measurement(graph, i, j);
  const auto jk = Measurement(graph, j, k);
  const auto ki = Measurement(graph, k, i);
  if (!ij || !jk || !ki) throw std::invalid_argument("CycleError: not a cycle");
  return GeodesicAngle(UnitQuaternion(), *ki * *jk * *ij);
}

std::string ViewGraphToJson(const ViewGraph& graph) {
  json j;
  j["vertices"] = json::array();
  for (const Vertex& v : graph.vertices()) {
    json jv;
    jv["id"] = v.id;
    if (v.ground_truth) jv["q_gt"] = QuatToJson(*v.ground_truth);
    jv["q_est"] = QuatToJson(v.estimate);
    j["vertices"].push_back(jv);
  }
  j["edges"] = json::array();
  for (const Edge& e : graph.edges()) {
    json je;
    je["i"] = e.i;
    je["j"] = e.j;
    je["q_meas"] = QuatToJson(e.measured);
    if (e.outlier) je["outlier"] = *e.outlier;
    j["edges"].push_back(je);
  }
  return j.dump(2);
}

ViewGraph ViewGraphFromJson(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& err) {
    throw std::invalid_argument(std::string("view graph: ") + err.what());
  }
  if (!j.contains("vertices") || !j.contains("edges")) {
    throw std::invalid_argument("view graph: missing vertices or edges");
  }
  std::vector<Vertex> vertices;
  for (const json& jv : j.at("vertices")) {
    Vertex v;
    v.id = jv.at("id").get<int>();
    if (jv.contains("q_gt")) v.ground_truth = QuatFromJson(jv["q_gt"]);
    v.estimate = jv.contains("q_est") ? QuatFromJson(jv["q_est"]) : UnitQuaternion();
    vertices.push_back(v);
  }
  std::vector<Edge> edges;
  for (const json& je : j.at("edges")) {
    Edge e;
    e.i = je.at("i").get<int>();
    e.j = je.at("j").get<int>();
    e.measured = QuatFromJson(je.at("q_meas"));
    if (je.contains("outlier")) e.outlier = je["outlier"].get<bool>();
    edges.push_back(e);
  }
  return ViewGraph(std::move(vertices), std::move(edges));
}

void SaveViewGraph(const ViewGraph& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << ViewGraphToJson(graph) << "\n";
}

ViewGraph LoadViewGraph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ViewGraphFromJson(ss.str());
}

}  // namespace rmnerf
