#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pmrt/common.hpp"
#include "pmrt/mesh.hpp"

namespace pmrt {

/// Axis-aligned region of interest, meters.
struct ROI {
  Vec3 origin;
  Vec3 extent{9.28, 3.84, 2.66};

  void validate() const;
  Aabb box() const { return {origin, origin + extent}; }

  /// Default-extent ROI placed around a vehicle bounding box: starts `upstream`
  /// meters ahead of the body in x, centered laterally, bottom at `ground_z`.
  static ROI around_vehicle(const Aabb& body, double ground_z, double upstream = 1.0,
                            Vec3 extent = {9.28, 3.84, 2.66});
};

struct GridShape {
  int nx = 0, ny = 0, nz = 0;

  std::size_t cells() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  bool operator==(const GridShape&) const = default;
};

enum class Resolution { R128, R256, R512 };

GridShape shape_of(Resolution res);
Resolution resolution_from_string(std::string_view tag);
std::string_view resolution_name(Resolution res);
/// Resolution by schedule index (0 = R128).
Resolution resolution_from_index(int index);

enum class FieldTag { sdf, usdf, mask, velocity, weight, other };
std::string_view field_tag_name(FieldTag tag);
FieldTag field_tag_from_string(std::string_view tag);

// Dense field on a Cartesian ROI grid. Linear layout, channel outermost:
//   flat = c * cells + ((ix * ny) + iy) * nz + iz
// Cell (i) is centered at origin + (i + 0.5) * extent / n per axis.
struct VoxelGrid {
  GridShape shape;
  int channels = 1;
  ROI roi;
  FieldTag tag = FieldTag::other;
  std::vector<double> data;
  std::optional<double> norm_mean;  // set when the field has been z-normalized
  std::optional<double> norm_std;
  nlohmann::json meta = nlohmann::json::object();  // extra sidecar fields

  VoxelGrid() = default;
  VoxelGrid(GridShape shape_, int channels_, ROI roi_, FieldTag tag_, double fill = 0.0);

  std::size_t cells() const { return shape.cells(); }
  std::size_t index(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(ix) * static_cast<std::size_t>(shape.ny) +
            static_cast<std::size_t>(iy)) * static_cast<std::size_t>(shape.nz) +
           static_cast<std::size_t>(iz);
  }
  double& at(int ix, int iy, int iz, int c = 0) { return data[c * cells() + index(ix, iy, iz)]; }
  double at(int ix, int iy, int iz, int c = 0) const { return data[c * cells() + index(ix, iy, iz)]; }
  std::span<double> channel(int c) { return {data.data() + c * cells(), cells()}; }
  std::span<const double> channel(int c) const { return {data.data() + c * cells(), cells()}; }

  Vec3 spacing() const {
    return {roi.extent.x / shape.nx, roi.extent.y / shape.ny, roi.extent.z / shape.nz};
  }
  Vec3 cell_center(int ix, int iy, int iz) const;
  /// Throws DataError when another grid's shape differs.
  void require_same_shape(const VoxelGrid& other, std::string_view module) const;
};

// ROI file: {"origin": [x, y, z], "extent": [x, y, z]} with extent optional,
// or {"around_mesh": {"ground_z": z, "upstream": u}} to place a default-extent
// ROI around the mesh being voxelized.
ROI roi_from_json(const nlohmann::json& j, const Aabb* mesh_bounds = nullptr);
nlohmann::json roi_to_json(const ROI& roi);

/// Trilinear interpolation of channel c at p; p is clamped to the hull of cell centers.
double trilinear_sample(const VoxelGrid& grid, const Vec3& p, int channel = 0);
VoxelGrid resample_trilinear(const VoxelGrid& src, GridShape target);

// File format: <prefix>.json sidecar + <prefix>.bin payload (f32 little-endian,
// same linear order as in memory).
void write_grid(const VoxelGrid& grid, const std::filesystem::path& prefix);
VoxelGrid read_grid(const std::filesystem::path& prefix);
nlohmann::json grid_sidecar(const VoxelGrid& grid, const std::string& payload_name);

}  // namespace pmrt
