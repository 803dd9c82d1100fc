#include "triangle_bvh.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pmrt::detail {

namespace {

constexpr std::uint32_t kLeafSize = 4;

double box_distance_sq(const Aabb& b, const Vec3& p) {
  double d = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double v = p[a] < b.lo[a] ? b.lo[a] - p[a] : (p[a] > b.hi[a] ? p[a] - b.hi[a] : 0.0);
    d += v * v;
  }
  return d;
}

}  // namespace

// Ericson, Real-Time Collision Detection, 5.1.5.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

double solid_angle(const Vec3& q, const Vec3& a_, const Vec3& b_, const Vec3& c_) {
  const Vec3 a = a_ - q, b = b_ - q, c = c_ - q;
  const double la = norm(a), lb = norm(b), lc = norm(c);
  const double num = dot(a, cross(b, c));
  const double den = la * lb * lc + dot(a, b) * lc + dot(b, c) * la + dot(c, a) * lb;
  return 2.0 * std::atan2(num, den);
}

TriangleBvh::TriangleBvh(const TriangleMesh& mesh) : mesh_(mesh) {
  order_.resize(mesh.triangles.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(2 * order_.size() / kLeafSize + 2);
  if (!order_.empty()) build(0, static_cast<std::uint32_t>(order_.size()));
  leaf_boxes_.resize(order_.size());
  for (std::size_t i = 0; i < order_.size(); ++i)
    for (const auto& v : mesh.corners(order_[i])) leaf_boxes_[i].expand(v);
}

std::uint32_t TriangleBvh::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.emplace_back();
  Node node;
  Aabb centroids;
  double area_sum = 0.0;
  Vec3 weighted;
  for (std::uint32_t i = begin; i < end; ++i) {
    const auto t = order_[i];
    const auto [a, b, c] = mesh_.corners(t);
    node.box.expand(a);
    node.box.expand(b);
    node.box.expand(c);
    const Vec3 cen = (a + b + c) / 3.0;
    centroids.expand(cen);
    const Vec3 an = mesh_.area_normal(t) * 0.5;
    node.dipole += an;
    const double area = norm(an);
    area_sum += area;
    weighted += cen * area;
  }
  node.center = area_sum > 0.0 ? weighted / area_sum : node.box.center();
  for (std::uint32_t i = begin; i < end; ++i)
    for (const auto& v : mesh_.corners(order_[i]))
      node.radius = std::max(node.radius, norm(v - node.center));

  if (end - begin <= kLeafSize) {
    node.first = begin;
    node.count = end - begin;
  } else {
    const Vec3 ext = centroids.extent();
    const int axis = ext.x >= ext.y && ext.x >= ext.z ? 0 : (ext.y >= ext.z ? 1 : 2);
    auto key = [&](std::uint32_t t) {
      const auto [a, b, c] = mesh_.corners(t);
      return a[axis] + b[axis] + c[axis];
    };
    std::sort(order_.begin() + begin, order_.begin() + end, [&](std::uint32_t l, std::uint32_t r) {
      const double kl = key(l), kr = key(r);
      return kl < kr || (kl == kr && l < r);
    });
    const std::uint32_t mid = begin + (end - begin) / 2;
    node.left = build(begin, mid);
    node.right = build(mid, end);
  }
  nodes_[id] = node;
  return id;
}

double TriangleBvh::triangle_distance_sq(const Vec3& p, std::uint32_t tri) const {
  const auto [a, b, c] = mesh_.corners(tri);
  return norm2(p - closest_point_on_triangle(p, a, b, c));
}

double TriangleBvh::nearest_sq(const Vec3& p, double bound_sq, std::uint32_t& tri) const {
  if (nodes_.empty()) return bound_sq;
  double best = bound_sq;
  std::uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& n = nodes_[stack[--top]];
    if (box_distance_sq(n.box, p) >= best) continue;
    if (n.count > 0) {
      for (std::uint32_t i = n.first; i < n.first + n.count; ++i) {
        if (box_distance_sq(leaf_boxes_[i], p) > best) continue;
        const double d = triangle_distance_sq(p, order_[i]);
        if (d < best || (d == best && order_[i] < tri)) {
          best = d;
          tri = order_[i];
        }
      }
      continue;
    }
    const double dl = box_distance_sq(nodes_[n.left].box, p);
    const double dr = box_distance_sq(nodes_[n.right].box, p);
    // Push the farther child first so the nearer one is visited next.
    if (dl <= dr) {
      if (dr < best) stack[top++] = n.right;
      if (dl < best) stack[top++] = n.left;
    } else {
      if (dl < best) stack[top++] = n.left;
      if (dr < best) stack[top++] = n.right;
    }
  }
  return best;
}

double TriangleBvh::winding_node(std::uint32_t id, const Vec3& q, double beta) const {
  const Node& n = nodes_[id];
  const Vec3 r = n.center - q;
  const double dist = norm(r);
  if (dist > beta * n.radius) return dot(n.dipole, r) / (dist * dist * dist);
  if (n.count > 0) {
    double s = 0.0;
    for (std::uint32_t i = n.first; i < n.first + n.count; ++i) {
      const auto [a, b, c] = mesh_.corners(order_[i]);
      s += solid_angle(q, a, b, c);
    }
    return s;
  }
  return winding_node(n.left, q, beta) + winding_node(n.right, q, beta);
}

double TriangleBvh::winding_number(const Vec3& q, double beta) const {
  if (nodes_.empty()) return 0.0;
  return winding_node(0, q, beta) / (4.0 * std::numbers::pi);
}

}  // namespace pmrt::detail
