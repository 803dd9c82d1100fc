#pragma once

#include <cstdint>
#include <vector>

#include "pmrt/mesh.hpp"

namespace pmrt::detail {

/// Closest point on triangle (a, b, c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Signed solid angle subtended by triangle (a, b, c) at q, in steradians.
double solid_angle(const Vec3& q, const Vec3& a, const Vec3& b, const Vec3& c);

// Bounding-volume hierarchy over a mesh's triangles. Serves exact nearest
// distance queries and a hierarchical generalized winding number in which far
// clusters are replaced by their area-weighted dipole.
class TriangleBvh {
 public:
  explicit TriangleBvh(const TriangleMesh& mesh);

  /// Squared distance to the nearest triangle, searching only below `bound_sq`.
  /// Updates `tri` when a closer triangle is found; returns bound_sq otherwise.
  double nearest_sq(const Vec3& p, double bound_sq, std::uint32_t& tri) const;
  double triangle_distance_sq(const Vec3& p, std::uint32_t tri) const;

  double winding_number(const Vec3& q, double beta = 2.0) const;

 private:
  struct Node {
    Aabb box;
    Vec3 dipole;       // sum of area-weighted unit normals
    Vec3 center;       // area-weighted centroid
    double radius = 0; // max distance from center to a vertex under the node
    std::uint32_t left = 0, right = 0;  // children, when count == 0
    std::uint32_t first = 0, count = 0; // triangle range in order_, for leaves
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end);
  double winding_node(std::uint32_t node, const Vec3& q, double beta) const;

  const TriangleMesh& mesh_;
  std::vector<std::uint32_t> order_;
  std::vector<Aabb> leaf_boxes_;  // per triangle, in order_ order
  std::vector<Node> nodes_;
};

}  // namespace pmrt::detail
