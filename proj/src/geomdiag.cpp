#include "pmrt/geomdiag.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

namespace pmrt::geomdiag {

namespace {

constexpr const char* kModule = "geomdiag";
constexpr std::uint32_t kLeafSize = 8;

double box_dist2(const Aabb& b, const Vec3& q) {
  double d2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double lo = b.lo[a] - q[a], hi = q[a] - b.hi[a];
    const double d = std::max({lo, hi, 0.0});
    d2 += d * d;
  }
  return d2;
}

struct OneWay {
  double dist, dissim;
};

OneWay one_way(const OrientedPointCloud& from, const OrientedPointCloud& to, const KdTree& tree) {
  std::vector<double> d(from.size()), s(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    const auto [j, d2] = tree.nearest(from.points[i]);
    d[i] = std::sqrt(d2);
    const Vec3& na = from.normals[i];
    const Vec3& nb = to.normals[j];
    // Identical and opposite normals are exact; a unit vector dotted with itself may not give 1.
    const double c = na == nb ? 1.0 : (na == -nb ? -1.0 : std::clamp(dot(na, nb), -1.0, 1.0));
    s[i] = 0.5 * (1.0 - c);
  }
  return {pairwise_mean(d), pairwise_mean(s)};
}

NCNDParts combine(const OneWay& ab, const OneWay& ba) {
  return {0.5 * (ab.dist + ba.dist), 0.5 * (ab.dissim + ba.dissim)};
}

Matrix square(std::size_t n) { return Matrix(n, std::vector<double>(n, 0.0)); }

}  // namespace

void OrientedPointCloud::validate() const {
  if (points.empty()) throw DataError(kModule, "point cloud is empty");
  if (points.size() != normals.size()) throw DataError(kModule, "point and normal counts differ");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!is_finite(points[i])) throw DataError(kModule, "non-finite point " + std::to_string(i));
    if (std::abs(norm(normals[i]) - 1.0) > 1e-6) throw DataError(kModule, "normal " + std::to_string(i) + " is not unit");
  }
}

void NCNDConfig::validate() const {
  if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError(kModule, "ncnd x must be > 0");
  if (!(y > 0.0) || !std::isfinite(y)) throw ConfigError(kModule, "ncnd y must be > 0");
  if (n_points < 1) throw ConfigError(kModule, "n_points must be >= 1");
}

OrientedPointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (mesh.empty()) throw DataError(kModule, "mesh has no triangles");
  if (n == 0) throw ConfigError(kModule, "sample count must be >= 1");
  validate_finite(mesh);
  std::vector<double> cum(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) cum[t] = total += mesh.face_area(t);
  if (!(total > 0.0)) throw DataError(kModule, "mesh has zero surface area");

  Rng rng(seed);
  OrientedPointCloud out;
  out.points.reserve(n);
  out.normals.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double pick = rng.uniform() * total;
    std::size_t t = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), pick) - cum.begin());
    t = std::min(t, cum.size() - 1);
    while (mesh.face_area(t) <= 0.0) --t;  // only reachable through rounding at the top end
    const auto [a, b, c] = mesh.corners(t);
    const double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    out.points.push_back(a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2));
    out.normals.push_back(mesh.face_normal(t));
  }
  return out;
}

std::vector<std::size_t> farthest_point_indices(std::span<const Vec3> points, std::size_t n) {
  if (points.empty()) throw DataError(kModule, "no candidate points");
  if (n == 0) throw ConfigError(kModule, "sample count must be >= 1");
  if (n > points.size())
    throw ConfigError(kModule, "requested " + std::to_string(n) + " points from only " +
                                   std::to_string(points.size()) + " candidates");
  Vec3 centroid;
  for (const auto& p : points) centroid += p;
  centroid = centroid / static_cast<double>(points.size());

  std::vector<double> d2(points.size());
  std::size_t first = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    d2[i] = norm2(points[i] - centroid);
    if (d2[i] > d2[first]) first = i;
  }
  std::vector<std::size_t> chosen{first};
  std::fill(d2.begin(), d2.end(), std::numeric_limits<double>::infinity());
  while (chosen.size() < n) {
    const Vec3 last = points[chosen.back()];
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      d2[i] = std::min(d2[i], norm2(points[i] - last));
      if (d2[i] > best_d) {
        best_d = d2[i];
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

OrientedPointCloud farthest_point_sample(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed,
                                         std::size_t candidates) {
  if (n == 0) throw ConfigError(kModule, "sample count must be >= 1");
  if (candidates == 0) candidates = std::max<std::size_t>(10 * n, 10000);
  if (n > candidates)
    throw ConfigError(kModule, "requested " + std::to_string(n) + " points from only " +
                                   std::to_string(candidates) + " candidates");
  const OrientedPointCloud pool = sample_surface(mesh, candidates, seed);
  OrientedPointCloud out;
  for (std::size_t i : farthest_point_indices(pool.points, n)) {
    out.points.push_back(pool.points[i]);
    out.normals.push_back(pool.normals[i]);
  }
  return out;
}

TriangleMesh align_geometry(TriangleMesh mesh) {
  if (mesh.vertices.empty()) throw DataError(kModule, "mesh has no vertices");
  const Vec3 c = mesh.vertex_centroid();
  double zmin = 1e300;
  for (const auto& v : mesh.vertices) zmin = std::min(zmin, v.z - c.z);
  const Vec3 shift{-c.x, -c.y, -c.z - zmin};
  for (auto& v : mesh.vertices) v += shift;
  return mesh;
}

TriangleMesh unit_cube_scale(TriangleMesh mesh) {
  mesh = align_geometry(std::move(mesh));
  const Vec3 e = mesh.bounds().extent();
  const double longest = std::max({e.x, e.y, e.z});
  if (!(longest > 0.0)) throw DataError(kModule, "mesh bounding box has zero extent");
  for (auto& v : mesh.vertices) v *= 1.0 / longest;
  return mesh;
}

NormalizeMode normalize_mode_from_string(std::string_view s) {
  if (s == "aligned") return NormalizeMode::aligned;
  if (s == "scaled") return NormalizeMode::scaled;
  throw ConfigError(kModule, "unknown mode '" + std::string(s) + "' (expected aligned or scaled)");
}

TriangleMesh normalize(TriangleMesh mesh, NormalizeMode mode) {
  return mode == NormalizeMode::aligned ? align_geometry(std::move(mesh)) : unit_cube_scale(std::move(mesh));
}

KdTree::KdTree(std::span<const Vec3> points) : pts_(points.begin(), points.end()) {
  if (pts_.empty()) throw DataError(kModule, "k-d tree needs at least one point");
  order_.resize(pts_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * pts_.size() / kLeafSize + 2);
  build(0, static_cast<std::uint32_t>(pts_.size()));
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  Node node;
  node.begin = begin;
  node.end = end;
  for (std::uint32_t i = begin; i < end; ++i) node.box.expand(pts_[order_[i]]);
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= kLeafSize) return id;
  const Vec3 e = node.box.extent();
  const int axis = e.x >= e.y && e.x >= e.z ? 0 : (e.y >= e.z ? 1 : 2);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return pts_[a][axis] < pts_[b][axis] || (pts_[a][axis] == pts_[b][axis] && a < b);
                   });
  const std::int32_t l = build(begin, mid);
  const std::int32_t r = build(mid, end);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

void KdTree::search(std::int32_t id, const Vec3& q, std::size_t& best, double& best_d2) const {
  const Node& node = nodes_[id];
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t k = order_[i];
      const double d2 = norm2(pts_[k] - q);
      if (d2 < best_d2 || (d2 == best_d2 && k < best)) {
        best_d2 = d2;
        best = k;
      }
    }
    return;
  }
  const double dl = box_dist2(nodes_[node.left].box, q), dr = box_dist2(nodes_[node.right].box, q);
  const auto first = dl <= dr ? node.left : node.right, second = dl <= dr ? node.right : node.left;
  const double d_first = std::min(dl, dr), d_second = std::max(dl, dr);
  if (d_first <= best_d2) search(first, q, best, best_d2);
  if (d_second <= best_d2) search(second, q, best, best_d2);
}

std::pair<std::size_t, double> KdTree::nearest(const Vec3& q) const {
  std::size_t best = pts_.size();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(0, q, best, best_d2);
  return {best, best_d2};
}

NCNDParts ncnd_parts(const OrientedPointCloud& a, const OrientedPointCloud& b) {
  a.validate();
  b.validate();
  const KdTree ta(a.points), tb(b.points);
  return combine(one_way(a, b, tb), one_way(b, a, ta));
}

double ncnd(const NCNDParts& parts, const NCNDConfig& cfg) {
  cfg.validate();
  return parts.chamfer / cfg.x + cfg.y * parts.dissim;
}

double ncnd(const OrientedPointCloud& a, const OrientedPointCloud& b, const NCNDConfig& cfg) {
  return ncnd(ncnd_parts(a, b), cfg);
}

NCNDConfig calibrate_xy(std::span<const double> chamfer, std::span<const double> dissim, int n_points) {
  if (chamfer.empty() || dissim.empty()) throw DataError(kModule, "calibration needs at least one pair");
  const double mc = *std::max_element(chamfer.begin(), chamfer.end());
  const double md = *std::max_element(dissim.begin(), dissim.end());
  if (!(mc > 0.0)) throw DegenerateError(kModule, "calibration failed: all chamfer distances are zero");
  if (!(md > 0.0)) throw DegenerateError(kModule, "calibration failed: all normal dissimilarities are zero");
  NCNDConfig cfg;
  cfg.x = 2.0 * mc;
  cfg.y = 0.5 / md;
  cfg.n_points = n_points;
  return cfg;
}

Matrix pairwise_matrix(std::size_t n, const std::function<double(std::size_t, std::size_t)>& dist) {
  if (n < 2) throw DataError(kModule, "pairwise matrix needs at least 2 items");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  std::vector<double> values(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) values[k] = dist(pairs[k].first, pairs[k].second);
  });
  Matrix m = square(n);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    m[i][j] = m[j][i] = values[k];
  }
  return m;
}

PairwiseNCND pairwise_ncnd(std::span<const OrientedPointCloud> clouds, int n_points) {
  for (const auto& c : clouds) c.validate();
  std::vector<KdTree> trees;
  trees.reserve(clouds.size());
  for (const auto& c : clouds) trees.emplace_back(c.points);
  PairwiseNCND out;
  const std::size_t n = clouds.size();
  out.chamfer = square(n);
  out.dissim = square(n);
  Matrix packed = pairwise_matrix(n, [&](std::size_t i, std::size_t j) {
    const NCNDParts p = combine(one_way(clouds[i], clouds[j], trees[j]), one_way(clouds[j], clouds[i], trees[i]));
    // Both parts travel through one double matrix: write the dissimilarity
    // here and return the chamfer.
    out.dissim[i][j] = out.dissim[j][i] = p.dissim;
    return p.chamfer;
  });
  out.chamfer = std::move(packed);
  std::vector<double> ch, di;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      ch.push_back(out.chamfer[i][j]);
      di.push_back(out.dissim[i][j]);
    }
  out.config = calibrate_xy(ch, di, n_points);
  out.value = square(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) out.value[i][j] = ncnd(NCNDParts{out.chamfer[i][j], out.dissim[i][j]}, out.config);
  return out;
}

void write_matrix_csv(const Matrix& m, std::span<const std::string> names, std::ostream& out) {
  if (names.size() != m.size()) throw DataError(kModule, "matrix and name counts differ");
  out << "mesh";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  char buf[40];
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << names[i];
    for (double v : m[i]) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

NNBaseline nn_field_baseline(std::span<const metrics::SampleRecord> train, std::span<const metrics::SampleRecord> test,
                             const std::function<double(std::size_t, std::size_t)>& geo_distance) {
  if (train.empty()) throw DataError(kModule, "nearest-neighbour baseline needs training samples");
  if (test.empty()) throw DataError(kModule, "nearest-neighbour baseline needs test samples");
  for (const auto& r : train)
    if (!r.field_true) throw DataError(kModule, "training sample '" + r.sample_id + "' has no field");
  NNBaseline out;
  std::vector<metrics::SampleRecord> scored;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (!test[i].field_true) throw DataError(kModule, "test sample '" + test[i].sample_id + "' has no field");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < train.size(); ++j) {
      const double d = geo_distance(i, j);
      if (std::isnan(d)) throw DataError(kModule, "geometry distance is NaN");
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    out.nearest.push_back(best);
    metrics::SampleRecord r = test[i];
    r.field_pred = train[best].field_true;
    r.cd_pred = train[best].cd_true;
    scored.push_back(std::move(r));
  }
  out.percent = metrics::relative_l2(scored);
  return out;
}

}  // namespace pmrt::geomdiag
