#include "pmrt/sdf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "triangle_bvh.hpp"

namespace pmrt::sdf {

namespace {

constexpr const char* kModule = "sdf";

}  // namespace

double winding_number(const TriangleMesh& mesh, const Vec3& q) {
  double s = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto [a, b, c] = mesh.corners(t);
    s += detail::solid_angle(q, a, b, c);
  }
  return s / (4.0 * std::numbers::pi);
}

double unsigned_distance(const TriangleMesh& mesh, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto [a, b, c] = mesh.corners(t);
    best = std::min(best, norm2(p - detail::closest_point_on_triangle(p, a, b, c)));
  }
  return std::sqrt(best);
}

VoxelGrid voxelize_sdf(const TriangleMesh& mesh, const ROI& roi, Resolution res) {
  return voxelize_sdf(mesh, roi, shape_of(res));
}

// Distances come from the BVH. Signs come from the winding number, but it is
// evaluated only where needed: the winding number is constant along any
// segment that does not touch the surface, and the segment between two
// neighbouring cell centers a, b stays inside the open ball of radius d(a)
// around a whenever |a - b| < d(a). Such a neighbour inherits the sign.
VoxelGrid voxelize_sdf(const TriangleMesh& mesh, const ROI& roi, GridShape shape) {
  if (mesh.empty()) throw DataError(kModule, "cannot voxelize an empty mesh");
  validate_finite(mesh);
  roi.validate();
  if (!mesh.bounds().intersects(roi.box()))
    log_warn(kModule, "mesh bounding box does not intersect the ROI; field is entirely outside");

  VoxelGrid grid(shape, 1, roi, FieldTag::sdf);
  const detail::TriangleBvh bvh(mesh);
  const int nx = shape.nx, ny = shape.ny, nz = shape.nz;
  const Vec3 h = grid.spacing();
  auto& dist = grid.data;

  // Unsigned distance, one z-column per work item; the previous cell's nearest
  // triangle seeds the search bound. The minimum is exact, so seeding does not
  // change the result.
  parallel_for(static_cast<std::size_t>(nx) * ny, [&](std::size_t begin, std::size_t end) {
    for (std::size_t col = begin; col < end; ++col) {
      const int ix = static_cast<int>(col / ny), iy = static_cast<int>(col % ny);
      std::uint32_t hint = 0;
      for (int iz = 0; iz < nz; ++iz) {
        const Vec3 p = grid.cell_center(ix, iy, iz);
        const double seed = bvh.triangle_distance_sq(p, hint);
        std::uint32_t tri = hint;
        double best = bvh.nearest_sq(p, seed, tri);
        hint = tri;
        dist[grid.index(ix, iy, iz)] = std::sqrt(best);
      }
    }
  });

  const std::size_t cells = grid.cells();
  const std::size_t stride_y = static_cast<std::size_t>(nz);
  const std::size_t stride_x = static_cast<std::size_t>(ny) * nz;
  // Predecessor that can pass its sign to cell i, or -1 when none can.
  auto donor = [&](std::size_t i, int ix, int iy, int iz) -> std::int64_t {
    const double di = dist[i];
    if (iz > 0 && (di > h.z || dist[i - 1] > h.z)) return static_cast<std::int64_t>(i - 1);
    if (iy > 0 && (di > h.y || dist[i - stride_y] > h.y)) return static_cast<std::int64_t>(i - stride_y);
    if (ix > 0 && (di > h.x || dist[i - stride_x] > h.x)) return static_cast<std::int64_t>(i - stride_x);
    return -1;
  };

  std::vector<std::int64_t> donors(cells);
  std::vector<std::size_t> direct;
  for (int ix = 0; ix < nx; ++ix)
    for (int iy = 0; iy < ny; ++iy)
      for (int iz = 0; iz < nz; ++iz) {
        const std::size_t i = grid.index(ix, iy, iz);
        donors[i] = donor(i, ix, iy, iz);
        if (donors[i] < 0) direct.push_back(i);
      }

  std::vector<char> inside(cells, 0);
  parallel_for(direct.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const std::size_t i = direct[k];
      const int ix = static_cast<int>(i / stride_x);
      const int iy = static_cast<int>((i / stride_y) % ny);
      const int iz = static_cast<int>(i % stride_y);
      inside[i] = std::abs(bvh.winding_number(grid.cell_center(ix, iy, iz))) > 0.5 ? 1 : 0;
    }
  });
  // Donors always precede their recipients in linear order.
  for (std::size_t i = 0; i < cells; ++i) {
    if (donors[i] >= 0) inside[i] = inside[static_cast<std::size_t>(donors[i])];
    if (inside[i]) dist[i] = -dist[i];
  }
  log_info(kModule, "voxelized " + std::to_string(cells) + " cells, " + std::to_string(direct.size()) +
                        " direct winding evaluations");
  return grid;
}

MaskUsdf mask_usdf(const VoxelGrid& sdf) {
  if (sdf.tag != FieldTag::sdf) throw DataError(kModule, "mask_usdf expects an sdf-tagged grid");
  if (sdf.channels != 1) throw DataError(kModule, "sdf grid must have one channel");
  MaskUsdf out{VoxelGrid(sdf.shape, 1, sdf.roi, FieldTag::mask),
               VoxelGrid(sdf.shape, 1, sdf.roi, FieldTag::usdf)};
  for (std::size_t i = 0; i < sdf.data.size(); ++i) {
    out.mask.data[i] = sdf.data[i] > 0.0 ? 1.0 : 0.0;
    out.usdf.data[i] = std::abs(sdf.data[i]);
  }
  out.mask.meta = sdf.meta;
  out.usdf.meta = sdf.meta;
  return out;
}

FieldStats field_statistics(std::span<const VoxelGrid* const> grids) {
  std::vector<double> sums, counts;
  for (const auto* g : grids) {
    sums.push_back(pairwise_sum(g->data));
    counts.push_back(static_cast<double>(g->data.size()));
  }
  const double n = pairwise_sum(counts);
  if (!(n > 0.0)) throw DegenerateError(kModule, "field statistics over no values");
  const double mean = pairwise_sum(sums) / n;
  std::vector<double> sq;
  for (const auto* g : grids) {
    std::vector<double> dev(g->data.size());
    for (std::size_t i = 0; i < dev.size(); ++i) dev[i] = (g->data[i] - mean) * (g->data[i] - mean);
    sq.push_back(pairwise_sum(dev));
  }
  return {mean, std::sqrt(pairwise_sum(sq) / n)};
}

VoxelGrid znorm_field(const VoxelGrid& grid, double mean, double std) {
  if (!(std > 0.0) || !std::isfinite(std)) throw ConfigError(kModule, "normalization std must be > 0");
  VoxelGrid out = grid;
  for (double& v : out.data) v = (v - mean) / std;
  out.norm_mean = mean;
  out.norm_std = std;
  return out;
}

VoxelGrid denorm_field(const VoxelGrid& grid, double mean, double std) {
  if (!(std > 0.0) || !std::isfinite(std)) throw ConfigError(kModule, "normalization std must be > 0");
  VoxelGrid out = grid;
  for (double& v : out.data) v = v * std + mean;
  out.norm_mean.reset();
  out.norm_std.reset();
  return out;
}

}  // namespace pmrt::sdf
