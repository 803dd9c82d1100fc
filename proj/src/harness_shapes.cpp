#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "pmrt/harness.hpp"

namespace pmrt::harness {

namespace {

constexpr const char* kModule = "harness";

struct Xz {
  double x, z;
};

// Signed distance to a convex polygon in the x-z plane (negative inside).
double polygon_sdf(std::span<const Xz> v, Xz p) {
  const auto sub = [](Xz a, Xz b) { return Xz{a.x - b.x, a.z - b.z}; };
  const auto dot2 = [](Xz a, Xz b) { return a.x * b.x + a.z * b.z; };
  Xz d0 = sub(p, v[0]);
  double d = dot2(d0, d0);
  double s = 1.0;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i, ++i) {
    const Xz e = sub(v[j], v[i]);
    const Xz w = sub(p, v[i]);
    const double t = std::clamp(dot2(w, e) / dot2(e, e), 0.0, 1.0);
    const Xz b{w.x - e.x * t, w.z - e.z * t};
    d = std::min(d, dot2(b, b));
    const bool c1 = p.z >= v[i].z, c2 = p.z < v[j].z, c3 = e.x * w.z > e.z * w.x;
    if ((c1 && c2 && c3) || (!c1 && !c2 && !c3)) s = -s;
  }
  return s * std::sqrt(d);
}

std::array<Xz, 5> slant_profile(const ShapeSpec& s) {
  const double x0 = ShapeSpec::nose_x, z0 = ShapeSpec::clearance;
  const double run = s.slant_run();
  const double drop = run * std::tan(s.slant);
  return {{{x0, z0}, {x0 + s.length, z0}, {x0 + s.length, z0 + s.height - drop},
           {x0 + s.length - run, z0 + s.height}, {x0, z0 + s.height}}};
}

// Exact distance from p (relative to the center) to an ellipsoid with semi
// axes e. Newton on the Lagrange parameter from a lower bound; the secular
// function is convex and decreasing there, so the iterates increase
// monotonically to the root.
double ellipsoid_sdf(const Vec3& p, const Vec3& e) {
  std::array<int, 3> ax{0, 1, 2};
  std::sort(ax.begin(), ax.end(), [&](int a, int b) { return e[a] > e[b] || (e[a] == e[b] && a < b); });
  double a[3], y[3];
  for (int i = 0; i < 3; ++i) {
    a[i] = e[ax[i]];
    y[i] = std::abs(p[ax[i]]);
  }
  const double level = (y[0] / a[0]) * (y[0] / a[0]) + (y[1] / a[1]) * (y[1] / a[1]) + (y[2] / a[2]) * (y[2] / a[2]);
  const bool inside = level < 1.0;
  if (y[0] == 0.0 && y[1] == 0.0 && y[2] == 0.0) return -a[2];

  if (inside && y[2] == 0.0) {
    // Closest point may leave the y2 = 0 plane.
    const double d0 = a[0] * a[0] - a[2] * a[2], d1 = a[1] * a[1] - a[2] * a[2];
    const double x0 = d0 > 0.0 ? a[0] * a[0] * y[0] / d0 : 0.0;
    const double x1 = d1 > 0.0 ? a[1] * a[1] * y[1] / d1 : 0.0;
    const double q = (x0 / a[0]) * (x0 / a[0]) + (x1 / a[1]) * (x1 / a[1]);
    if (d1 > 0.0 && q < 1.0) {
      const double x2 = a[2] * std::sqrt(1.0 - q);
      return -std::sqrt((x0 - y[0]) * (x0 - y[0]) + (x1 - y[1]) * (x1 - y[1]) + x2 * x2);
    }
  }

  double t = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i)
    if (y[i] > 0.0) t = std::max(t, -a[i] * a[i] + a[i] * y[i]);
  for (int it = 0; it < 200; ++it) {
    double f = -1.0, df = 0.0;
    for (int i = 0; i < 3; ++i) {
      if (y[i] == 0.0) continue;
      const double r = a[i] * y[i] / (t + a[i] * a[i]);
      f += r * r;
      df += -2.0 * r * r / (t + a[i] * a[i]);
    }
    if (f <= 0.0 || df == 0.0) break;
    const double step = f / df;
    const double next = t - step;
    if (!(next > t)) break;
    t = next;
    if (-step <= 1e-15 * (std::abs(t) + a[0] * a[0])) break;
  }
  double d2 = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double x = a[i] * a[i] * y[i] / (t + a[i] * a[i]);
    d2 += (x - y[i]) * (x - y[i]);
  }
  const double d = std::sqrt(d2);
  return inside ? -d : d;
}

double rounded_box_sdf(const Vec3& p, const Vec3& center, const Vec3& half, double rc) {
  const Vec3 q{std::abs(p.x - center.x) - (half.x - rc), std::abs(p.y - center.y) - (half.y - rc),
               std::abs(p.z - center.z) - (half.z - rc)};
  const Vec3 out{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
  return norm(out) + std::min(std::max({q.x, q.y, q.z}), 0.0) - rc;
}

// Flips triangles whose normal points toward the body centroid. Valid for convex shapes.
TriangleMesh orient_outward_convex(TriangleMesh m) {
  const Vec3 c = m.vertex_centroid();
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto [a, b, d] = m.corners(t);
    if (dot(m.area_normal(t), (a + b + d) / 3.0 - c) < 0.0) std::swap(m.triangles[t][1], m.triangles[t][2]);
  }
  return m;
}

TriangleMesh rounded_box_mesh(const ShapeSpec& s, int detail) {
  const Aabb b = s.bounds();
  const Vec3 c = b.center(), half = b.extent() * 0.5;
  if (s.corner_radius <= 0.0) return make_box(b.lo, b.hi);
  const double rc = s.corner_radius;
  const Vec3 inner = half - Vec3{rc, rc, rc};
  const int n = std::max(2, 4 * detail);
  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  for (int axis = 0; axis < 3; ++axis)
    for (int side = -1; side <= 1; side += 2) {
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      const auto base = static_cast<std::uint32_t>(verts.size());
      for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
          Vec3 q;
          q[axis] = side * half[axis];
          q[u] = (-1.0 + 2.0 * i / n) * half[u];
          q[v] = (-1.0 + 2.0 * j / n) * half[v];
          const Vec3 clamped{std::clamp(q.x, -inner.x, inner.x), std::clamp(q.y, -inner.y, inner.y),
                             std::clamp(q.z, -inner.z, inner.z)};
          verts.push_back(c + clamped + normalized(q - clamped) * rc);
        }
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const std::uint32_t p00 = base + i * (n + 1) + j, p10 = p00 + (n + 1), p01 = p00 + 1, p11 = p10 + 1;
          tris.push_back({p00, p10, p11});
          tris.push_back({p00, p11, p01});
        }
    }
  return orient_outward_convex(clean_mesh(verts, tris));
}

TriangleMesh slant_mesh(const ShapeSpec& s) {
  const auto prof = slant_profile(s);
  std::vector<Vec3> verts;
  for (double y : {-0.5 * s.width, 0.5 * s.width})
    for (const auto& q : prof) verts.push_back({q.x, y, q.z});
  std::vector<Triangle> tris;
  for (std::uint32_t k = 1; k + 1 < 5; ++k) {
    tris.push_back({0, k, k + 1});
    tris.push_back({5, 5 + k, 5 + k + 1});
  }
  for (std::uint32_t k = 0; k < 5; ++k) {
    const std::uint32_t n = (k + 1) % 5;
    tris.push_back({k, n, 5 + n});
    tris.push_back({k, 5 + n, 5 + k});
  }
  TriangleMesh m;
  m.vertices = std::move(verts);
  m.triangles = std::move(tris);
  return orient_outward_convex(std::move(m));
}

}  // namespace

std::string_view family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::box: return "box";
    case ShapeFamily::ellipsoid: return "ellipsoid";
    case ShapeFamily::box_with_slant: return "box_with_slant";
  }
  return "?";
}

ShapeFamily family_from_string(std::string_view s) {
  if (s == "box") return ShapeFamily::box;
  if (s == "ellipsoid") return ShapeFamily::ellipsoid;
  if (s == "box_with_slant") return ShapeFamily::box_with_slant;
  throw ConfigError(kModule, "unknown shape family '" + std::string(s) + "'");
}

ROI harness_roi() { return ROI{{0.0, -1.92, 0.0}, {9.28, 3.84, 2.66}}; }

double ShapeSpec::slant_run() const {
  if (family != ShapeFamily::box_with_slant) return 0.0;
  return std::min(0.25 * length, 0.6 * height / std::tan(slant));
}

void ShapeSpec::validate() const {
  if (!(length > 0.0 && width > 0.0 && height > 0.0)) throw ConfigError(kModule, "shape extents must be > 0");
  if (family == ShapeFamily::box &&
      !(corner_radius >= 0.0 && corner_radius < 0.5 * std::min({length, width, height})))
    throw ConfigError(kModule, "corner radius must be in [0, half the smallest extent)");
  if (family == ShapeFamily::box_with_slant && !(slant > 0.0 && slant < 1.2))
    throw ConfigError(kModule, "slant angle must be in (0, 1.2) rad");
  const ROI roi = harness_roi();
  const Vec3 margin = roi.extent * (2.0 / 128.0);
  const Vec3 m{margin.x, 2.0 * roi.extent.y / 32.0, 2.0 * roi.extent.z / 32.0};
  const Aabb b = bounds();
  const Aabb r = roi.box();
  for (int a = 0; a < 3; ++a)
    if (b.lo[a] - r.lo[a] < m[a] || r.hi[a] - b.hi[a] < m[a])
      throw ConfigError(kModule, "shape does not fit the ROI with a two-cell margin at R128");
}

std::vector<double> ShapeSpec::params() const { return {length, width, height, corner_radius, slant}; }

Aabb ShapeSpec::bounds() const {
  return {{nose_x, -0.5 * width, clearance}, {nose_x + length, 0.5 * width, clearance + height}};
}

double shape_sdf(const ShapeSpec& spec, const Vec3& p) {
  const Aabb b = spec.bounds();
  switch (spec.family) {
    case ShapeFamily::box:
      return rounded_box_sdf(p, b.center(), b.extent() * 0.5, spec.corner_radius);
    case ShapeFamily::ellipsoid:
      return ellipsoid_sdf(p - b.center(), b.extent() * 0.5);
    case ShapeFamily::box_with_slant: {
      const auto prof = slant_profile(spec);
      const double d2 = polygon_sdf(prof, {p.x, p.z});
      const double dy = std::abs(p.y) - 0.5 * spec.width;
      const double ox = std::max(d2, 0.0), oy = std::max(dy, 0.0);
      return std::min(std::max(d2, dy), 0.0) + std::sqrt(ox * ox + oy * oy);
    }
  }
  return 0.0;
}

VoxelGrid sdf_grid(const ShapeSpec& spec, const ROI& roi, GridShape shape) {
  VoxelGrid g(shape, 1, roi, FieldTag::sdf);
  parallel_for(static_cast<std::size_t>(shape.nx), [&](std::size_t begin, std::size_t end) {
    for (std::size_t ix = begin; ix < end; ++ix)
      for (int iy = 0; iy < shape.ny; ++iy)
        for (int iz = 0; iz < shape.nz; ++iz) {
          const int i = static_cast<int>(ix);
          g.at(i, iy, iz) = shape_sdf(spec, g.cell_center(i, iy, iz));
        }
  });
  return g;
}

TriangleMesh shape_mesh(const ShapeSpec& spec, int detail) {
  switch (spec.family) {
    case ShapeFamily::box: return rounded_box_mesh(spec, detail);
    case ShapeFamily::ellipsoid: {
      const Aabb b = spec.bounds();
      return make_ellipsoid(b.center(), b.extent() * 0.5, std::clamp(detail / 2, 1, 5));
    }
    case ShapeFamily::box_with_slant: return slant_mesh(spec);
  }
  return {};
}

double frontal_area(const ShapeSpec& spec) {
  switch (spec.family) {
    case ShapeFamily::box:
      return spec.width * spec.height - (4.0 - std::numbers::pi) * spec.corner_radius * spec.corner_radius;
    case ShapeFamily::ellipsoid: return 0.25 * std::numbers::pi * spec.width * spec.height;
    case ShapeFamily::box_with_slant: return spec.width * spec.height;
  }
  return 0.0;
}

double bluffness(const ShapeSpec& spec) {
  switch (spec.family) {
    case ShapeFamily::box: return 1.0 - spec.corner_radius / (0.5 * std::min(spec.width, spec.height));
    case ShapeFamily::ellipsoid: return 0.0;
    case ShapeFamily::box_with_slant: return 1.0;
  }
  return 0.0;
}

double target_cd(const ShapeSpec& spec) {
  double cd = 0.20 + 0.04 * (frontal_area(spec) - 2.4) + 0.06 * bluffness(spec);
  if (spec.family == ShapeFamily::box_with_slant) {
    const double z = (spec.slant - 0.52) / 0.2;
    cd += 0.03 * std::exp(-z * z);
  }
  if (spec.sim_params.size() >= 3) cd += 0.01 * (spec.sim_params[0] - 0.5) + 0.005 * (spec.sim_params[2] - 0.5);
  return cd;
}

VoxelGrid velocity_field(const ShapeSpec& spec, const ROI& roi, GridShape shape) {
  constexpr double U = 1.0, delta = 0.25, wake_len = 2.0;
  const Aabb b = spec.bounds();
  const double x_rear = b.hi.x, zc = 0.5 * (b.lo.z + b.hi.z);
  const double sw = 0.35 * std::max(spec.width, spec.height);
  const double depth = 0.3 + 0.4 * bluffness(spec);
  VoxelGrid g(shape, 3, roi, FieldTag::velocity);
  const std::size_t cells = g.cells();
  parallel_for(static_cast<std::size_t>(shape.nx), [&](std::size_t begin, std::size_t end) {
    for (std::size_t ix = begin; ix < end; ++ix)
      for (int iy = 0; iy < shape.ny; ++iy)
        for (int iz = 0; iz < shape.nz; ++iz) {
          const int i = static_cast<int>(ix);
          const Vec3 p = g.cell_center(i, iy, iz);
          const double d = std::max(shape_sdf(spec, p), 0.0);
          const double bl = std::exp(-d / delta);
          const double s = p.x - x_rear;
          const double along = s > 0.0 ? std::exp(-s / wake_len) : std::exp(-(s / 0.5) * (s / 0.5));
          const double r2 = p.y * p.y + (p.z - zc) * (p.z - zc);
          const double wake = depth * std::exp(-r2 / (2.0 * sw * sw)) * along;
          const std::size_t k = g.index(i, iy, iz);
          g.data[k] = U * (1.0 - bl) * (1.0 - wake);
          g.data[cells + k] = 0.1 * U * p.y / spec.width * bl * (1.0 - bl);
          g.data[2 * cells + k] = 0.1 * U * (p.z - zc) / spec.height * bl * (1.0 - bl);
        }
  });
  return g;
}

std::vector<ToySample> generate_dataset(int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError(kModule, "dataset size must be >= 1");
  Rng rng(derive_seed(seed, "harness.dataset"));
  std::vector<ToySample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ShapeSpec s;
    s.family = static_cast<ShapeFamily>(i % 3);
    s.length = rng.uniform(3.5, 4.8);
    s.width = rng.uniform(1.5, 2.0);
    s.height = rng.uniform(1.2, 1.6);
    const double rc = rng.uniform(0.05, 0.3);
    const double slant = rng.uniform(10.0, 40.0) * std::numbers::pi / 180.0;
    const double s0 = rng.uniform(), s2 = rng.uniform(), u1 = rng.uniform(), u3 = rng.uniform();
    if (s.family == ShapeFamily::box) s.corner_radius = rc;
    if (s.family == ShapeFamily::box_with_slant) s.slant = slant;
    s.sim_params = {s0, 0.8 * s0 + 0.2 * u1, s2, 0.5 * (s0 + s2) + 0.1 * u3};
    s.validate();
    out.push_back({s, target_cd(s)});
  }
  return out;
}

}  // namespace pmrt::harness
