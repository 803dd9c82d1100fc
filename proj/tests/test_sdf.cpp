#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "pmrt/sdf.hpp"
#include "oracles.hpp"

using namespace pmrt;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  auto d = fs::temp_directory_path() / "pmrt_test_sdf";
  fs::create_directories(d);
  return d;
}

ROI centered_roi() { return ROI{{-4.64, -1.92, -1.33}, {9.28, 3.84, 2.66}}; }

using oracle::box_sdf;
using oracle::sphere_sdf;

template <class Analytic>
void check_against_analytic(const VoxelGrid& g, Analytic f) {
  const Vec3 h = g.spacing();
  const double edge = std::max({h.x, h.y, h.z});
  const double diag = norm(h);
  std::size_t bad = 0;
  for (int ix = 0; ix < g.shape.nx; ++ix)
    for (int iy = 0; iy < g.shape.ny; ++iy)
      for (int iz = 0; iz < g.shape.nz; ++iz) {
        const double ref = f(g.cell_center(ix, iy, iz));
        const double err = std::abs(g.at(ix, iy, iz) - ref);
        const double tol = std::abs(ref) < 2.0 * edge ? 1.5 * edge : 0.02 * std::abs(ref) + diag;
        if (err > tol) ++bad;
      }
  CHECK(bad == 0);
}

}  // namespace

TEST_CASE("box builder faces outward") {
  const auto m = make_box({0, 0, 0}, {1, 2, 3});
  REQUIRE(m.triangles.size() == 12);
  const Vec3 c{0.5, 1.0, 1.5};
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto [a, b, d] = m.corners(t);
    CHECK(dot(m.face_normal(t), (a + b + d) / 3.0 - c) > 0.0);
  }
  CHECK(sdf::winding_number(m, c) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(sdf::winding_number(m, {5, 5, 5})) < 1e-12);
}

TEST_CASE("load_mesh: STL and OBJ") {
  const auto dir = scratch_dir();
  const auto cube = make_box({0, 0, 0}, {1, 1, 1});

  SUBCASE("binary STL cube") {
    write_stl_binary(cube, dir / "cube.stl");
    CHECK(detect_mesh_format(dir / "cube.stl") == MeshFormat::stl_binary);
    MeshLoadReport rep;
    const auto m = load_mesh(dir / "cube.stl", &rep);
    CHECK(m.vertices.size() == 8);
    CHECK(m.triangles.size() == 12);
    CHECK(rep.vertices_merged == 28);
    CHECK(rep.degenerate_dropped == 0);
  }
  SUBCASE("ASCII STL cube") {
    write_stl_ascii(cube, dir / "cube_ascii.stl");
    CHECK(detect_mesh_format(dir / "cube_ascii.stl") == MeshFormat::stl_ascii);
    const auto m = load_mesh(dir / "cube_ascii.stl");
    CHECK(m.vertices.size() == 8);
    CHECK(m.triangles.size() == 12);
  }
  SUBCASE("OBJ with a zero-area triangle") {
    {
      std::ofstream o(dir / "degenerate.obj");
      o << "# test\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nvn 0 0 1\n"
           "f 1 2 3\nf 1/1/1 2/2/1 4/3/1\n";
    }
    MeshLoadReport rep;
    const auto m = load_mesh(dir / "degenerate.obj", &rep);
    CHECK(m.triangles.size() == 1);
    CHECK(rep.degenerate_dropped == 1);
    CHECK(m.vertices.size() == 3);
  }
  SUBCASE("OBJ quad and negative indices") {
    {
      std::ofstream o(dir / "quad.obj");
      o << "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2 -1\n";
    }
    CHECK(load_mesh(dir / "quad.obj").triangles.size() == 2);
  }
  SUBCASE("truncated binary STL") {
    write_stl_binary(cube, dir / "trunc.stl");
    fs::resize_file(dir / "trunc.stl", 84 + 50 * 7 + 10);
    try {
      load_mesh(dir / "trunc.stl", MeshFormat::stl_binary);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      const std::string what = e.what();
      CHECK(what.find("declares 12 triangles") != std::string::npos);
      CHECK(what.find("only 7") != std::string::npos);
      CHECK(e.offset() == 84 + 50 * 7);
    }
  }
  SUBCASE("malformed ASCII STL reports an offset") {
    {
      std::ofstream o(dir / "bad.stl");
      o << "solid x\n facet normal 0 0 1\n outer loop\n vertex 0 0 zero\n";
    }
    try {
      load_mesh(dir / "bad.stl", MeshFormat::stl_ascii);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 52);
    }
  }
  SUBCASE("empty and missing meshes") {
    {
      std::ofstream o(dir / "empty.obj");
      o << "v 0 0 0\n";
    }
    CHECK_THROWS_AS(load_mesh(dir / "empty.obj"), DataError);
    CHECK_THROWS_AS(load_mesh(dir / "nope.obj"), DataError);
  }
}

TEST_CASE("voxelize sphere at R128 against the analytic SDF") {
  // Off-lattice center: a sphere centered on a cell corner has a cell count
  // about 12 cells above its volume even for the exact field.
  const Vec3 c{0.2, 0.0, 0.1};
  const auto sphere = make_icosphere(c, 0.5, 5);
  REQUIRE(sphere.triangles.size() >= 10000);
  const auto g = sdf::voxelize_sdf(sphere, centered_roi(), Resolution::R128);
  CHECK(g.tag == FieldTag::sdf);
  check_against_analytic(g, [&](const Vec3& p) { return sphere_sdf(p, c, 0.5); });

  const auto [mask, usdf] = sdf::mask_usdf(g);
  double solid = 0.0;
  for (double m : mask.data) solid += 1.0 - m;
  const Vec3 h = g.spacing();
  const double cell_volume = h.x * h.y * h.z;
  const double sphere_volume = 4.0 / 3.0 * std::numbers::pi * 0.125;
  CHECK(std::abs(solid * cell_volume - sphere_volume) <= 2.0 * cell_volume);
}

TEST_CASE("voxelize box against the analytic SDF") {
  const Vec3 lo{-1.2, -0.5, -0.4}, hi{1.4, 0.6, 0.5};
  const auto g = sdf::voxelize_sdf(make_box(lo, hi), centered_roi(), Resolution::R128);
  check_against_analytic(g, [&](const Vec3& p) { return box_sdf(p, lo, hi); });
}

TEST_CASE("cell center on a mesh vertex has zero distance") {
  // R128 cell (64, 16, 16) of the centered ROI.
  const ROI roi = centered_roi();
  VoxelGrid probe(shape_of(Resolution::R128), 1, roi, FieldTag::sdf);
  const Vec3 p = probe.cell_center(64, 16, 16);
  const auto box = make_box(p, p + Vec3{0.5, 0.4, 0.3});
  const auto g = sdf::voxelize_sdf(box, roi, Resolution::R128);
  CHECK(std::abs(g.at(64, 16, 16)) <= 1e-9);
}

TEST_CASE("sign and distance invariants") {
  const auto mesh = make_ellipsoid({0.3, 0.1, -0.2}, {1.2, 0.5, 0.4}, 3);
  const GridShape small{48, 20, 16};
  const auto g = sdf::voxelize_sdf(mesh, centered_roi(), small);

  SUBCASE("flipping the winding keeps the field") {
    const auto f = sdf::voxelize_sdf(flipped_winding(mesh), centered_roi(), small);
    std::size_t sign_changes = 0;
    double worst = 0.0;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      if ((f.data[i] < 0.0) != (g.data[i] < 0.0)) ++sign_changes;
      worst = std::max(worst, std::abs(std::abs(f.data[i]) - std::abs(g.data[i])));
    }
    CHECK(sign_changes == 0);
    CHECK(worst < 1e-12);
  }
  SUBCASE("sign matches the exact winding number") {
    for (int ix = 0; ix < small.nx; ix += 3)
      for (int iy = 0; iy < small.ny; iy += 2)
        for (int iz = 0; iz < small.nz; iz += 2) {
          const double w = sdf::winding_number(mesh, g.cell_center(ix, iy, iz));
          CHECK((g.at(ix, iy, iz) < 0.0) == (w > 0.5));
        }
  }
  SUBCASE("distance matches brute force") {
    for (int ix = 1; ix < small.nx; ix += 7)
      for (int iy = 0; iy < small.ny; iy += 5)
        for (int iz = 0; iz < small.nz; iz += 3) {
          const double d = sdf::unsigned_distance(mesh, g.cell_center(ix, iy, iz));
          CHECK(std::abs(g.at(ix, iy, iz)) == d);
        }
  }
  SUBCASE("1-Lipschitz on sampled pairs") {
    Rng rng(17);
    for (int k = 0; k < 5000; ++k) {
      const int a[3] = {static_cast<int>(rng.index(small.nx)), static_cast<int>(rng.index(small.ny)),
                        static_cast<int>(rng.index(small.nz))};
      const int b[3] = {static_cast<int>(rng.index(small.nx)), static_cast<int>(rng.index(small.ny)),
                        static_cast<int>(rng.index(small.nz))};
      const double lhs = std::abs(g.at(a[0], a[1], a[2]) - g.at(b[0], b[1], b[2]));
      const double rhs = norm(g.cell_center(a[0], a[1], a[2]) - g.cell_center(b[0], b[1], b[2]));
      CHECK(lhs <= rhs + 1e-12);
    }
  }
  SUBCASE("thread count does not change the output") {
    set_thread_count(1);
    const auto one = sdf::voxelize_sdf(mesh, centered_roi(), small);
    set_thread_count(4);
    const auto four = sdf::voxelize_sdf(mesh, centered_roi(), small);
    set_thread_count(0);
    CHECK(one.data == four.data);
    CHECK(one.data == g.data);
  }
}

TEST_CASE("resolution consistency R256 to R128") {
  const Vec3 c{0.2, 0.0, 0.1};
  const auto sphere = make_icosphere(c, 0.6, 4);
  const auto fine = sdf::voxelize_sdf(sphere, centered_roi(), Resolution::R256);
  const auto coarse = sdf::voxelize_sdf(sphere, centered_roi(), Resolution::R128);
  const auto down = resample_trilinear(fine, coarse.shape);
  const double diag = norm(fine.spacing());
  double worst = 0.0;
  for (std::size_t i = 0; i < coarse.data.size(); ++i)
    worst = std::max(worst, std::abs(down.data[i] - coarse.data[i]));
  CHECK(worst <= diag);
}

TEST_CASE("mesh outside the ROI gives an all-positive field") {
  const auto far = make_box({20, 20, 20}, {21, 21, 21});
  const auto g = sdf::voxelize_sdf(far, centered_roi(), GridShape{8, 4, 4});
  for (double v : g.data) CHECK(v > 0.0);
}

TEST_CASE("voxelize rejects bad input") {
  TriangleMesh m = make_box({0, 0, 0}, {1, 1, 1});
  m.vertices[3].x = std::nan("");
  CHECK_THROWS_AS(sdf::voxelize_sdf(m, centered_roi(), Resolution::R128), DataError);
  CHECK_THROWS_AS(sdf::voxelize_sdf(TriangleMesh{}, centered_roi(), Resolution::R128), DataError);
}

TEST_CASE("mask_usdf") {
  VoxelGrid g({3, 1, 1}, 1, centered_roi(), FieldTag::sdf);
  g.data = {-1.0, 0.0, 2.0};
  const auto [mask, usdf] = sdf::mask_usdf(g);
  CHECK(mask.data == std::vector<double>{0.0, 0.0, 1.0});
  CHECK(usdf.data == std::vector<double>{1.0, 0.0, 2.0});
  CHECK(mask.tag == FieldTag::mask);
  g.data = {0.5, 1.0, 3.0};
  CHECK(sdf::mask_usdf(g).mask.data == std::vector<double>{1.0, 1.0, 1.0});
  g.tag = FieldTag::usdf;
  CHECK_THROWS_AS(sdf::mask_usdf(g), DataError);
}

TEST_CASE("znorm_field") {
  VoxelGrid g({4, 3, 2}, 1, centered_roi(), FieldTag::sdf);
  Rng rng(3);
  for (double& v : g.data) v = rng.uniform(-5.0, 5.0);
  CHECK(sdf::znorm_field(g, 0.0, 1.0).data == g.data);

  VoxelGrid c = g;
  std::fill(c.data.begin(), c.data.end(), 2.5);
  for (double v : sdf::znorm_field(c, 2.5, 1.0).data) CHECK(v == 0.0);

  const auto n = sdf::znorm_field(g, 0.7, 2.3);
  CHECK(n.norm_mean == 0.7);
  const auto back = sdf::denorm_field(n, 0.7, 2.3);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.data.size(); ++i) worst = std::max(worst, std::abs(back.data[i] - g.data[i]));
  CHECK(worst < 1e-12);
  CHECK_THROWS_AS(sdf::znorm_field(g, 0.0, 0.0), ConfigError);
  CHECK_THROWS_AS(sdf::znorm_field(g, 0.0, -1.0), ConfigError);

  const VoxelGrid* both[] = {&g, &c};
  const auto stats = sdf::field_statistics(both);
  double s = 0.0, s2 = 0.0;
  for (const auto* x : both)
    for (double v : x->data) s += v;
  const double mean = s / 48.0;
  for (const auto* x : both)
    for (double v : x->data) s2 += (v - mean) * (v - mean);
  CHECK(stats.mean == doctest::Approx(mean).epsilon(1e-13));
  CHECK(stats.std == doctest::Approx(std::sqrt(s2 / 48.0)).epsilon(1e-13));
}

TEST_CASE("grid file round trip") {
  VoxelGrid g({5, 4, 3}, 3, centered_roi(), FieldTag::velocity);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = 0.25 * static_cast<double>(i) - 7.0;
  g.norm_mean = 1.5;
  g.meta["seed"] = 42;
  const auto prefix = scratch_dir() / "vel";
  write_grid(g, prefix);
  CHECK(fs::file_size(scratch_dir() / "vel.bin") == g.data.size() * 4);
  const auto r = read_grid(scratch_dir() / "vel.json");
  CHECK(r.shape == g.shape);
  CHECK(r.channels == 3);
  CHECK(r.tag == FieldTag::velocity);
  CHECK(r.data == g.data);  // quarter steps are exact in f32
  CHECK(r.norm_mean == 1.5);
  CHECK(!r.norm_std.has_value());
  CHECK(r.meta["seed"] == 42);
  CHECK(r.at(4, 3, 2, 2) == g.data.back());

  fs::resize_file(scratch_dir() / "vel.bin", 10);
  CHECK_THROWS_AS(read_grid(prefix), ParseError);
}

TEST_CASE("trilinear sampling reproduces linear fields") {
  VoxelGrid g({6, 5, 4}, 1, centered_roi(), FieldTag::other);
  for (int ix = 0; ix < 6; ++ix)
    for (int iy = 0; iy < 5; ++iy)
      for (int iz = 0; iz < 4; ++iz) {
        const Vec3 p = g.cell_center(ix, iy, iz);
        g.at(ix, iy, iz) = 2.0 * p.x - p.y + 0.5 * p.z + 1.0;
      }
  const Vec3 q{0.37, -0.21, 0.11};
  CHECK(trilinear_sample(g, q) == doctest::Approx(2.0 * q.x - q.y + 0.5 * q.z + 1.0).epsilon(1e-12));
}
