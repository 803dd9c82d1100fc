#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pmrt/common.hpp"

namespace pmrt {

using Triangle = std::array<std::uint32_t, 3>;

struct Aabb {
  Vec3 lo{1e300, 1e300, 1e300};
  Vec3 hi{-1e300, -1e300, -1e300};

  void expand(const Vec3& p) {
    lo = cwise_min(lo, p);
    hi = cwise_max(hi, p);
  }
  Vec3 extent() const { return hi - lo; }
  Vec3 center() const { return (lo + hi) * 0.5; }
  bool empty() const { return lo.x > hi.x; }
  bool intersects(const Aabb& o) const {
    return lo.x <= o.hi.x && hi.x >= o.lo.x && lo.y <= o.hi.y && hi.y >= o.lo.y &&
           lo.z <= o.hi.z && hi.z >= o.lo.z;
  }
};

// Triangle soup with shared vertices, meters. Watertightness is not required,
// but inside/outside classification degrades on open meshes.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  bool empty() const { return triangles.empty(); }
  std::array<Vec3, 3> corners(std::size_t t) const {
    const auto& f = triangles[t];
    return {vertices[f[0]], vertices[f[1]], vertices[f[2]]};
  }
  /// Unnormalized: |result| = 2 * area, direction from counter-clockwise winding.
  Vec3 area_normal(std::size_t t) const;
  Vec3 face_normal(std::size_t t) const;
  double face_area(std::size_t t) const;
  Aabb bounds() const;
  Vec3 vertex_centroid() const;
};

enum class MeshFormat { stl_binary, stl_ascii, obj };

struct MeshLoadReport {
  std::size_t degenerate_dropped = 0;
  std::size_t vertices_merged = 0;
};

/// Guesses the format from the extension and, for .stl, the header/size.
MeshFormat detect_mesh_format(const std::filesystem::path& path);

/// Parses a mesh, merges vertices closer than 1e-9 m and drops zero-area
/// triangles (with a warning). Throws ParseError / DataError.
TriangleMesh load_mesh(const std::filesystem::path& path, MeshFormat format,
                       MeshLoadReport* report = nullptr);
TriangleMesh load_mesh(const std::filesystem::path& path, MeshLoadReport* report = nullptr);

/// Applies the same merge/filter step as load_mesh to an in-memory soup.
TriangleMesh clean_mesh(std::span<const Vec3> vertices, std::span<const Triangle> triangles,
                        MeshLoadReport* report = nullptr);

void write_stl_binary(const TriangleMesh& mesh, const std::filesystem::path& path);
void write_stl_ascii(const TriangleMesh& mesh, const std::filesystem::path& path);
void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path);

// Builders. All produce outward-facing counter-clockwise windings.
TriangleMesh make_box(const Vec3& lo, const Vec3& hi);
/// Subdivided icosahedron projected onto the sphere; 20 * 4^subdivisions faces.
TriangleMesh make_icosphere(const Vec3& center, double radius, int subdivisions);
TriangleMesh make_ellipsoid(const Vec3& center, const Vec3& semi_axes, int subdivisions);

TriangleMesh translated(TriangleMesh mesh, const Vec3& offset);
TriangleMesh scaled(TriangleMesh mesh, double factor);
TriangleMesh flipped_winding(TriangleMesh mesh);
void validate_finite(const TriangleMesh& mesh);

}  // namespace pmrt
