#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pmrt/mesh.hpp"
#include "pmrt/metrics.hpp"

namespace pmrt::geomdiag {

struct OrientedPointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // unit, from the source triangle

  std::size_t size() const { return points.size(); }
  void validate() const;
};

struct NCNDConfig {
  double x = 1.0;  // chamfer normalizer
  double y = 1.0;  // dissimilarity weight
  int n_points = 4096;

  void validate() const;
};

/// Area-uniform random surface points with face normals. Zero-area faces are
/// never drawn.
OrientedPointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);

/// Greedy farthest point sampling over `candidates` area-uniform surface
/// points, starting at the candidate farthest from the candidate centroid.
/// candidates = 0 picks max(10 n, 10000).
OrientedPointCloud farthest_point_sample(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed,
                                         std::size_t candidates = 0);
/// FPS over an existing cloud; returns indices in selection order.
std::vector<std::size_t> farthest_point_indices(std::span<const Vec3> points, std::size_t n);

/// Vertex centroid to the origin, then shifted so that min z = 0.
TriangleMesh align_geometry(TriangleMesh mesh);
/// Aligned, then scaled uniformly so the longest bounding-box edge is 1.
TriangleMesh unit_cube_scale(TriangleMesh mesh);

enum class NormalizeMode { aligned, scaled };
NormalizeMode normalize_mode_from_string(std::string_view s);
TriangleMesh normalize(TriangleMesh mesh, NormalizeMode mode);

// Exact nearest-neighbour queries over a fixed point set. Ties resolve to the
// lowest index.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);
  /// Index of the nearest point and its squared distance.
  std::pair<std::size_t, double> nearest(const Vec3& q) const;
  std::size_t size() const { return pts_.size(); }

 private:
  struct Node {
    Aabb box;
    std::uint32_t begin, end;  // range into order_
    std::int32_t left = -1, right = -1;
  };
  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3& q, std::size_t& best, double& best_d2) const;

  std::vector<Vec3> pts_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

struct NCNDParts {
  double chamfer = 0.0;  // symmetric mean point-to-point NN distance
  double dissim = 0.0;   // symmetric mean of (1 - cos) / 2 against the NN normal
};

NCNDParts ncnd_parts(const OrientedPointCloud& a, const OrientedPointCloud& b);
double ncnd(const NCNDParts& parts, const NCNDConfig& cfg);
double ncnd(const OrientedPointCloud& a, const OrientedPointCloud& b, const NCNDConfig& cfg);

/// x = 2 max(chamfer), y = 0.5 / max(dissim).
NCNDConfig calibrate_xy(std::span<const double> chamfer, std::span<const double> dissim, int n_points = 4096);

using Matrix = std::vector<std::vector<double>>;

/// Symmetric matrix with a zero diagonal; dist(i, j) is called once per i < j.
Matrix pairwise_matrix(std::size_t n, const std::function<double(std::size_t, std::size_t)>& dist);

struct PairwiseNCND {
  Matrix chamfer, dissim, value;
  NCNDConfig config;
};

/// Pairwise parts, calibration over all pairs, then the calibrated values.
PairwiseNCND pairwise_ncnd(std::span<const OrientedPointCloud> clouds, int n_points);

void write_matrix_csv(const Matrix& m, std::span<const std::string> names, std::ostream& out);

struct NNBaseline {
  double percent = 0.0;
  std::vector<std::size_t> nearest;  // train index per test sample
};

/// Predicts each test field with the field of the geometrically nearest train
/// sample (ties to the lowest index) and scores with relative_l2.
NNBaseline nn_field_baseline(std::span<const metrics::SampleRecord> train, std::span<const metrics::SampleRecord> test,
                             const std::function<double(std::size_t test, std::size_t train)>& geo_distance);

}  // namespace pmrt::geomdiag
