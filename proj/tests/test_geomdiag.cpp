#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "pmrt/geomdiag.hpp"
#include "pmrt/sdf.hpp"

using namespace pmrt;
using namespace pmrt::geomdiag;

namespace {

double min_pair_distance(std::span<const Vec3> p) {
  double best = 1e300;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j) best = std::min(best, norm(p[i] - p[j]));
  return best;
}

OrientedPointCloud plate(double z, int n, Vec3 normal) {
  OrientedPointCloud c;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      c.points.push_back({(i + 0.5) / n, (j + 0.5) / n, z});
      c.normals.push_back(normal);
    }
  return c;
}

std::pair<double, double> brute_parts(const OrientedPointCloud& a, const OrientedPointCloud& b) {
  auto oneway = [](const OrientedPointCloud& f, const OrientedPointCloud& t) {
    double d = 0.0, s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < t.size(); ++j)
        if (norm2(f.points[i] - t.points[j]) < norm2(f.points[i] - t.points[best])) best = j;
      d += norm(f.points[i] - t.points[best]);
      s += 0.5 * (1.0 - dot(f.normals[i], t.normals[best]));
    }
    return std::pair{d / f.size(), s / f.size()};
  };
  const auto ab = oneway(a, b), ba = oneway(b, a);
  return {0.5 * (ab.first + ba.first), 0.5 * (ab.second + ba.second)};
}

metrics::SampleRecord field_record(std::string id, std::vector<double> u) {
  metrics::SampleRecord r;
  r.dataset_id = "d";
  r.sample_id = std::move(id);
  VoxelGrid g({static_cast<int>(u.size() / 3), 1, 1}, 3, ROI{}, FieldTag::velocity);
  g.data = std::move(u);
  r.field_true = g;
  return r;
}

}  // namespace

TEST_CASE("farthest_point_sample") {
  const TriangleMesh sphere = make_icosphere({0.3, -0.2, 1.0}, 0.5, 3);
  SUBCASE("n = 1 picks the candidate farthest from the centroid") {
    const auto pool = sample_surface(sphere, 2000, 9);
    Vec3 c;
    for (const auto& p : pool.points) c += p;
    c = c / 2000.0;
    std::size_t far = 0;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (norm2(pool.points[i] - c) > norm2(pool.points[far] - c)) far = i;
    const auto one = farthest_point_sample(sphere, 1, 9, 2000);
    CHECK(one.points[0] == pool.points[far]);
    CHECK(one.normals[0] == pool.normals[far]);
  }
  SUBCASE("n = 2 on a sphere is near-antipodal") {
    const auto two = farthest_point_sample(sphere, 2, 4);
    const Vec3 c{0.3, -0.2, 1.0};
    const double cosang = dot(normalized(two.points[0] - c), normalized(two.points[1] - c));
    CHECK(std::acos(cosang) > 150.0 * std::numbers::pi / 180.0);
  }
  SUBCASE("spread beats random subsets") {
    const auto pool = sample_surface(sphere, 3000, 5);
    const auto idx = farthest_point_indices(pool.points, 64);
    std::vector<Vec3> chosen;
    for (auto i : idx) chosen.push_back(pool.points[i]);
    const double fps = min_pair_distance(chosen);
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Vec3> sub;
      std::vector<std::size_t> perm(pool.size());
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t k = 0; k < 64; ++k) {
        std::swap(perm[k], perm[k + rng.index(perm.size() - k)]);
        sub.push_back(pool.points[perm[k]]);
      }
      CHECK(fps >= min_pair_distance(sub));
    }
  }
  SUBCASE("points lie on the surface with unit face normals") {
    const auto c = farthest_point_sample(sphere, 200, 7);
    c.validate();
    for (std::size_t i = 0; i < c.size(); ++i) {
      CHECK(sdf::unsigned_distance(sphere, c.points[i]) < 1e-12);
      CHECK(dot(c.normals[i], c.points[i] - Vec3{0.3, -0.2, 1.0}) > 0.0);
    }
  }
  SUBCASE("deterministic") {
    const auto a = farthest_point_sample(sphere, 100, 3), b = farthest_point_sample(sphere, 100, 3);
    CHECK(a.points == b.points);
    CHECK(farthest_point_sample(sphere, 100, 4).points != a.points);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(farthest_point_sample(sphere, 50, 1, 20), ConfigError);
    CHECK_THROWS_AS(farthest_point_sample(TriangleMesh{}, 5, 1), DataError);
    CHECK_THROWS_AS(farthest_point_sample(sphere, 0, 1), ConfigError);
  }
}

TEST_CASE("alignment and scaling") {
  const TriangleMesh cube = make_box({3.0, -2.0, 5.0}, {4.5, -0.5, 6.5});
  const auto a = align_geometry(cube);
  const Vec3 c = a.vertex_centroid();
  CHECK(std::abs(c.x) < 1e-12);
  CHECK(std::abs(c.y) < 1e-12);
  CHECK(c.z == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(a.bounds().lo.z == doctest::Approx(0.0).epsilon(1e-12));
  const auto again = align_geometry(a);
  for (std::size_t i = 0; i < a.vertices.size(); ++i) CHECK(norm(again.vertices[i] - a.vertices[i]) < 1e-12);
  const auto moved = align_geometry(translated(cube, {10.0, 7.0, -3.0}));
  for (std::size_t i = 0; i < a.vertices.size(); ++i) CHECK(norm(moved.vertices[i] - a.vertices[i]) < 1e-12);

  const auto box = unit_cube_scale(make_box({0, 0, 0}, {2, 1, 1}));
  const Vec3 e = box.bounds().extent();
  CHECK(e.x == doctest::Approx(1.0));
  CHECK(e.y == doctest::Approx(0.5));
  CHECK(e.z == doctest::Approx(0.5));
  const auto twice = unit_cube_scale(box);
  for (std::size_t i = 0; i < box.vertices.size(); ++i) CHECK(norm(twice.vertices[i] - box.vertices[i]) < 1e-12);
  const auto unit = unit_cube_scale(make_box({0, 0, 0}, {1, 1, 1}));
  CHECK(unit.bounds().extent().x == 1.0);
  TriangleMesh flat;
  flat.vertices = {{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
  flat.triangles = {{0, 1, 2}};
  CHECK_THROWS_AS(unit_cube_scale(flat), DataError);
  CHECK_THROWS_AS(normalize_mode_from_string("rotated"), ConfigError);
}

TEST_CASE("KdTree matches brute force") {
  Rng rng(8);
  std::vector<Vec3> pts;
  for (int i = 0; i < 1500; ++i) pts.push_back({rng.uniform(), rng.uniform(), rng.uniform() * 0.2});
  for (int i = 0; i < 40; ++i) pts.push_back(pts[static_cast<std::size_t>(i) * 7]);  // exact duplicates
  for (int i = 0; i < 100; ++i) pts.push_back({std::round(rng.uniform() * 4) / 4, 0.5, 0.1});
  const KdTree tree(pts);
  for (int k = 0; k < 600; ++k) {
    const Vec3 q = k < 100 ? pts[static_cast<std::size_t>(k) * 7] : Vec3{rng.uniform(-0.2, 1.2), rng.uniform(), rng.uniform()};
    std::size_t best = 0;
    for (std::size_t i = 1; i < pts.size(); ++i)
      if (norm2(pts[i] - q) < norm2(pts[best] - q)) best = i;
    const auto [idx, d2] = tree.nearest(q);
    CHECK(idx == best);
    CHECK(d2 == norm2(pts[best] - q));
  }
}

TEST_CASE("ncnd") {
  const TriangleMesh sphere = make_icosphere({0, 0, 0}, 0.5, 2);
  const TriangleMesh box = make_box({-0.4, -0.3, -0.2}, {0.4, 0.3, 0.2});
  const auto a = farthest_point_sample(sphere, 512, 1), b = farthest_point_sample(box, 512, 2);
  NCNDConfig cfg;
  cfg.x = 0.3;
  cfg.y = 0.7;

  CHECK(ncnd(a, a, cfg) == 0.0);
  CHECK(ncnd(a, b, cfg) == ncnd(b, a, cfg));
  CHECK(ncnd(a, b, cfg) > 0.0);

  SUBCASE("flipped normals") {
    OrientedPointCloud f = a;
    for (auto& n : f.normals) n = -n;
    const auto p = ncnd_parts(a, f);
    CHECK(p.chamfer == 0.0);
    CHECK(p.dissim == 1.0);
    CHECK(ncnd(a, f, cfg) == 0.7);
  }
  SUBCASE("parallel plates") {
    const double d = 0.37;
    const auto lo = plate(0.0, 12, {0, 0, 1}), hi = plate(d, 12, {0, 0, 1});
    const auto p = ncnd_parts(lo, hi);
    CHECK(p.chamfer == doctest::Approx(d).epsilon(1e-14));
    CHECK(p.dissim == 0.0);
    CHECK(ncnd(lo, hi, cfg) == doctest::Approx(d / 0.3).epsilon(1e-14));
  }
  SUBCASE("agrees with brute-force nearest neighbours") {
    const auto [ch, di] = brute_parts(a, b);
    const auto p = ncnd_parts(a, b);
    CHECK(p.chamfer == doctest::Approx(ch).epsilon(1e-12));
    CHECK(p.dissim == doctest::Approx(di).epsilon(1e-12));
  }
  SUBCASE("translation invariance") {
    OrientedPointCloud ta = a, tb = b;
    for (auto& p : ta.points) p += Vec3{2.0, -1.0, 0.5};
    for (auto& p : tb.points) p += Vec3{2.0, -1.0, 0.5};
    CHECK(std::abs(ncnd(ta, tb, cfg) - ncnd(a, b, cfg)) < 1e-12);
    const auto m1 = farthest_point_sample(align_geometry(box), 256, 3);
    const auto m2 = farthest_point_sample(align_geometry(translated(box, {5.0, 1.0, -2.0})), 256, 3);
    const auto s = farthest_point_sample(align_geometry(sphere), 256, 4);
    CHECK(std::abs(ncnd(m1, s, cfg) - ncnd(m2, s, cfg)) < 1e-9);
  }
}

TEST_CASE("calibrate_xy") {
  const double ch[] = {0.1, 0.4, 0.2}, di[] = {0.8, 0.3, 0.5};
  const auto cfg = calibrate_xy(ch, di);
  CHECK(cfg.x == 0.8);
  CHECK(cfg.y == 0.625);
  CHECK(ncnd(NCNDParts{0.4, 0.8}, cfg) == 1.0);
  const double zeros[] = {0.0, 0.0};
  CHECK_THROWS_AS(calibrate_xy(zeros, di), DegenerateError);
  CHECK_THROWS_AS(calibrate_xy(ch, zeros), DegenerateError);
}

TEST_CASE("pairwise_matrix") {
  const auto same = pairwise_matrix(2, [](std::size_t, std::size_t) { return 0.0; });
  CHECK(same == Matrix{{0.0, 0.0}, {0.0, 0.0}});
  const std::vector<double> v{1.0, 4.0, 9.5};
  int calls = 0;
  const auto m = pairwise_matrix(3, [&](std::size_t i, std::size_t j) {
    ++calls;
    return std::abs(v[i] - v[j]);
  });
  CHECK(calls == 3);
  CHECK(m[0][1] == 3.0);
  CHECK(m[1][2] == 5.5);
  CHECK(m[2][0] == 8.5);
  for (int i = 0; i < 3; ++i) {
    CHECK(m[i][i] == 0.0);
    for (int j = 0; j < 3; ++j) CHECK(m[i][j] == m[j][i]);
  }
  const std::size_t perm[] = {2, 0, 1};
  const auto p = pairwise_matrix(3, [&](std::size_t i, std::size_t j) { return std::abs(v[perm[i]] - v[perm[j]]); });
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(p[i][j] == m[perm[i]][perm[j]]);
  CHECK_THROWS_AS(pairwise_matrix(1, [](std::size_t, std::size_t) { return 0.0; }), DataError);

  SUBCASE("calibrated ncnd set") {
    std::vector<OrientedPointCloud> clouds;
    for (int k = 0; k < 4; ++k)
      clouds.push_back(farthest_point_sample(unit_cube_scale(make_box({0, 0, 0}, {1.0 + k * 0.5, 1.0, 1.0})), 256,
                                             static_cast<std::uint64_t>(k)));
    const auto r = pairwise_ncnd(clouds, 256);
    double top = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(r.value[i][j] >= 0.0);
        CHECK(r.value[i][j] <= 1.0 + 1e-12);
        CHECK(r.value[i][j] == r.value[j][i]);
        top = std::max(top, r.value[i][j]);
      }
    CHECK(top > 0.5);
    std::ostringstream csv;
    const std::string names[] = {"a.stl", "b.stl", "c.stl", "d.stl"};
    write_matrix_csv(r.value, names, csv);
    CHECK(csv.str().starts_with("mesh,a.stl,b.stl,c.stl,d.stl\na.stl,0,"));
  }
}

TEST_CASE("nn_field_baseline") {
  SUBCASE("identical geometry in train") {
    const metrics::SampleRecord train[] = {field_record("t0", {1, 2, 3}), field_record("t1", {4, 5, 6})};
    const metrics::SampleRecord test[] = {field_record("q0", {4, 5, 6})};
    const auto r = nn_field_baseline(train, test, [](std::size_t, std::size_t j) { return j == 1 ? 0.0 : 1.0; });
    CHECK(r.percent == 0.0);
    CHECK(r.nearest == std::vector<std::size_t>{1});
  }
  SUBCASE("single train sample") {
    const metrics::SampleRecord train[] = {field_record("t0", {1, 0, 0})};
    const metrics::SampleRecord test[] = {field_record("q0", {2, 0, 0}), field_record("q1", {0, 1, 0})};
    const auto r = nn_field_baseline(train, test, [](std::size_t, std::size_t) { return 0.3; });
    CHECK(r.percent == doctest::Approx(100.0 * (0.5 + std::sqrt(2.0)) / 2.0).epsilon(1e-14));
  }
  SUBCASE("ties go to the lowest index") {
    const metrics::SampleRecord train[] = {field_record("t0", {1, 0, 0}), field_record("t1", {0, 1, 0})};
    const metrics::SampleRecord test[] = {field_record("q0", {1, 0, 0})};
    CHECK(nn_field_baseline(train, test, [](std::size_t, std::size_t) { return 1.0; }).nearest[0] == 0);
  }
  SUBCASE("smooth family against brute-force nearest parameter") {
    // Field u(t) = (1 + t, sin t, t^2) per cell, shapes are spheres of radius 0.3 + 0.1 t.
    const double train_t[] = {0.0, 1.0, 2.0, 3.0, 4.0};
    const double test_t[] = {0.4, 1.7, 3.9};
    auto field_of = [](double t) {
      return std::vector<double>{1 + t, 1 + 2 * t, std::sin(t), std::cos(t), t * t, 0.5 * t};
    };
    std::vector<metrics::SampleRecord> train, test;
    std::vector<OrientedPointCloud> tc, qc;
    for (double t : train_t) {
      train.push_back(field_record("t", field_of(t)));
      tc.push_back(farthest_point_sample(make_icosphere({0, 0, 0}, 0.3 + 0.1 * t, 2), 128, 1));
    }
    for (double t : test_t) {
      test.push_back(field_record("q", field_of(t)));
      qc.push_back(farthest_point_sample(make_icosphere({0, 0, 0}, 0.3 + 0.1 * t, 2), 128, 2));
    }
    NCNDConfig cfg;
    const auto r = nn_field_baseline(train, test, [&](std::size_t i, std::size_t j) { return ncnd(qc[i], tc[j], cfg); });
    std::vector<metrics::SampleRecord> brute;
    for (std::size_t i = 0; i < 3; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < 5; ++j)
        if (std::abs(train_t[j] - test_t[i]) < std::abs(train_t[best] - test_t[i])) best = j;
      CHECK(r.nearest[i] == best);
      auto rec = test[i];
      rec.field_pred = train[best].field_true;
      brute.push_back(rec);
    }
    CHECK(r.percent == metrics::relative_l2(brute));
  }
  SUBCASE("errors") {
    const metrics::SampleRecord test[] = {field_record("q0", {1, 0, 0})};
    CHECK_THROWS_AS(nn_field_baseline({}, test, [](std::size_t, std::size_t) { return 0.0; }), DataError);
  }
}
