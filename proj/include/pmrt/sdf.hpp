#pragma once

#include <span>
#include <utility>

#include "pmrt/grid.hpp"
#include "pmrt/mesh.hpp"

namespace pmrt::sdf {

/// Signed distance from each cell center to the mesh surface: negative inside,
/// positive outside. Inside means |generalized winding number| > 0.5, so a
/// consistently inverted winding does not flip the sign. Output is
/// independent of the thread count.
VoxelGrid voxelize_sdf(const TriangleMesh& mesh, const ROI& roi, Resolution res);
VoxelGrid voxelize_sdf(const TriangleMesh& mesh, const ROI& roi, GridShape shape);

/// Exact generalized winding number by summing solid angles over all faces.
double winding_number(const TriangleMesh& mesh, const Vec3& q);
/// Exact unsigned distance by brute force over all faces.
double unsigned_distance(const TriangleMesh& mesh, const Vec3& p);

struct MaskUsdf {
  VoxelGrid mask;  // 1 where sdf > 0 (fluid), 0 otherwise
  VoxelGrid usdf;  // |sdf|
};
MaskUsdf mask_usdf(const VoxelGrid& sdf);

struct FieldStats {
  double mean;
  double std;
};
/// Pooled mean / population std over every value of every grid (training split only).
FieldStats field_statistics(std::span<const VoxelGrid* const> grids);

VoxelGrid znorm_field(const VoxelGrid& grid, double mean, double std);
VoxelGrid denorm_field(const VoxelGrid& grid, double mean, double std);

}  // namespace pmrt::sdf
