#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rmnerf/so3.h"

namespace rmnerf {

struct Vertex {
  int id = 0;
  std::optional<UnitQuaternion> ground_truth;
  UnitQuaternion estimate;
};

// Directed edge i -> j carrying a measurement of R_j R_i^T.
struct Edge {
  int i = 0;
  int j = 0;
  UnitQuaternion measured;
  std::optional<bool> outlier;
};

// Vertices are indexed 0..n-1 by id; vertex 0 is the gauge reference.
class ViewGraph {
 public:
  ViewGraph() = default;
  // Sorts vertices by id and edges lexicographically, then validates. Throws
  // std::invalid_argument on self edges, duplicate ordered pairs, ids that are
  // not 0..n-1, or a disconnected underlying graph.
  ViewGraph(std::vector<Vertex> vertices, std::vector<Edge> edges);

  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  const std::vector<Vertex>& vertices() const { return vertices_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::vector<Vertex>& mutable_vertices() { return vertices_; }
  std::vector<Edge>& mutable_edges() { return edges_; }

  bool HasGroundTruth() const;
  // Ground truth re-gauged so vertex 0 is the identity. Throws
  // std::logic_error when any vertex lacks ground truth.
  std::vector<UnitQuaternion> GaugedGroundTruth() const;
  std::vector<UnitQuaternion> Estimates() const;
  void SetEstimates(const std::vector<UnitQuaternion>& estimates);

  // Undirected adjacency lists sorted by neighbor id; each entry carries the
  // incident edge index.
  struct Incidence {
    int neighbor;
    int edge;
  };
  std::vector<std::vector<Incidence>> Adjacency() const;
  bool IsConnected() const;

 private:
  std::vector<Vertex> vertices_;
  std::vector<Edge> edges_;
};

enum class OutlierModel { kUniformRandomRotation };

struct NoiseSpec {
  double rotation_sigma = 0.0;  // radians, per axis-angle component
  double outlier_fraction = 0.0;
  OutlierModel outlier_model = OutlierModel::kUniformRandomRotation;
  std::uint64_t seed = 0;

  void Validate() const;
};

// Erdos-Renyi style graph on n vertices with uniform random ground-truth
// rotations and exact measurements. Disconnected samples are patched by
// joining components with seeded random edges. Throws for n < 3.
ViewGraph GenerateSyntheticGraph(int n, double edge_probability,
                                 std::uint64_t seed);

// Left-multiplies each measurement by ExpMap(N(0, sigma^2 I)) and replaces a
// round(fraction * |E|) subset with uniform random rotations flagged as
// outliers. Draws are keyed by (seed, edge index).
ViewGraph PerturbEdges(const ViewGraph& graph, const NoiseSpec& spec);

// `count` independent noisy graphs. Graph k uses generator seed
// SplitMix64(seed) + k and noise seed SplitMix64(seed ^ salt) + k, so
// datasets drawn with different seeds do not share graphs.
std::vector<ViewGraph> SyntheticGraphDataset(int count, int n, double edge_probability,
                                             const NoiseSpec& noise, std::uint64_t seed);

// Composes each rotation with ExpMap of a N(0, sigma^2 I) draw while keeping
// the camera center fixed.
std::vector<CameraPose> PerturbAbsolutePoses(const std::vector<CameraPose>& poses,
                                             double sigma, std::uint64_t seed);

// Chains measurements along a BFS tree rooted at vertex 0 (identity).
// Throws std::invalid_argument for a disconnected graph.
std::vector<UnitQuaternion> SpanningTreeInit(const ViewGraph& graph);

// Quaternion composition around the cycle i -> j -> k -> i; identity for
// consistent graphs. Returns the geodesic angle of the composition.
double CycleError(const ViewGraph& graph, int i, int j, int k);

std::string ViewGraphToJson(const ViewGraph& graph);
ViewGraph ViewGraphFromJson(const std::string& text);
void SaveViewGraph(const ViewGraph& graph, const std::string& path);
ViewGraph LoadViewGraph(const std::string& path);

}  // namespace rmnerf
