#include "pmrt/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>

namespace pmrt {

namespace {

constexpr const char* kModule = "sdf";
constexpr double kMergeTolerance = 1e-9;

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(kModule, "cannot open mesh file '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_u32_le(const char* p) {
  const auto* b = reinterpret_cast<const unsigned char*>(p);
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

float read_f32_le(const char* p) {
  const std::uint32_t bits = read_u32_le(p);
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void write_f32_le(std::ostream& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  write_u32_le(out, bits);
}

struct Soup {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
};

Soup parse_stl_binary(const std::vector<char>& buf) {
  if (buf.size() < 84)
    throw ParseError(kModule, "binary STL shorter than its 84-byte header", buf.size());
  const std::uint32_t count = read_u32_le(buf.data() + 80);
  const std::size_t expected = 84 + std::size_t{50} * count;
  if (buf.size() < expected) {
    const std::size_t complete = (buf.size() - 84) / 50;
    throw ParseError(kModule,
                     "truncated binary STL: header declares " + std::to_string(count) +
                         " triangles but only " + std::to_string(complete) +
                         " are present (expected " + std::to_string(expected) + " bytes, got " +
                         std::to_string(buf.size()) + ")",
                     84 + complete * 50);
  }
  Soup s;
  s.vertices.reserve(std::size_t{3} * count);
  for (std::uint32_t t = 0; t < count; ++t) {
    const char* rec = buf.data() + 84 + std::size_t{50} * t + 12;  // skip stored normal
    Triangle tri{};
    for (int k = 0; k < 3; ++k) {
      const char* v = rec + 12 * k;
      tri[static_cast<std::size_t>(k)] = static_cast<std::uint32_t>(s.vertices.size());
      s.vertices.emplace_back(read_f32_le(v), read_f32_le(v + 4), read_f32_le(v + 8));
    }
    s.triangles.push_back(tri);
  }
  return s;
}

class Tokenizer {
 public:
  explicit Tokenizer(std::string_view text) : text_(text) {}

  std::size_t offset() const { return pos_; }
  bool done() {
    skip_ws();
    return pos_ >= text_.size();
  }
  std::string_view next() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !is_ws(text_[pos_])) ++pos_;
    return text_.substr(start, pos_ - start);
  }
  void skip_line() {
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
  }
  void expect(std::string_view word) {
    const std::size_t at = (skip_ws(), pos_);
    const auto tok = next();
    if (tok != word)
      throw ParseError(kModule, "expected '" + std::string(word) + "' but found '" +
                                    std::string(tok) + "'", at);
  }
  double number() {
    const std::size_t at = (skip_ws(), pos_);
    const auto tok = next();
    double v = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
      throw ParseError(kModule, "expected a number but found '" + std::string(tok) + "'", at);
    return v;
  }

 private:
  static bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }
  void skip_ws() {
    while (pos_ < text_.size() && is_ws(text_[pos_])) ++pos_;
  }
  std::string_view text_;
  std::size_t pos_ = 0;
};

Soup parse_stl_ascii(const std::vector<char>& buf) {
  Tokenizer tk(std::string_view(buf.data(), buf.size()));
  tk.expect("solid");
  tk.skip_line();
  Soup s;
  while (true) {
    if (tk.done()) throw ParseError(kModule, "ASCII STL ended without 'endsolid'", tk.offset());
    const std::size_t at = tk.offset();
    const auto tok = tk.next();
    if (tok == "endsolid") break;
    if (tok != "facet")
      throw ParseError(kModule, "expected 'facet' or 'endsolid' but found '" + std::string(tok) + "'", at);
    tk.expect("normal");
    tk.number();
    tk.number();
    tk.number();
    tk.expect("outer");
    tk.expect("loop");
    Triangle tri{};
    for (int k = 0; k < 3; ++k) {
      tk.expect("vertex");
      const double x = tk.number();
      const double y = tk.number();
      const double z = tk.number();
      tri[static_cast<std::size_t>(k)] = static_cast<std::uint32_t>(s.vertices.size());
      s.vertices.emplace_back(x, y, z);
    }
    tk.expect("endloop");
    tk.expect("endfacet");
    s.triangles.push_back(tri);
  }
  return s;
}

Soup parse_obj(const std::vector<char>& buf) {
  const std::string_view text(buf.data(), buf.size());
  Soup s;
  std::size_t line_start = 0;
  while (line_start < text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = text.size();
    const auto line = text.substr(line_start, line_end - line_start);
    Tokenizer tk(line);
    if (!tk.done()) {
      const auto kw = tk.next();
      if (kw == "v") {
        const double x = tk.number(), y = tk.number(), z = tk.number();
        s.vertices.emplace_back(x, y, z);
      } else if (kw == "f") {
        std::vector<std::uint32_t> poly;
        while (!tk.done()) {
          const std::size_t at = line_start + tk.offset();
          auto tok = tk.next();
          tok = tok.substr(0, tok.find('/'));
          long long idx = 0;
          const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), idx);
          if (res.ec != std::errc() || idx == 0)
            throw ParseError(kModule, "bad face index '" + std::string(tok) + "'", at);
          const long long n = static_cast<long long>(s.vertices.size());
          const long long resolved = idx > 0 ? idx - 1 : n + idx;
          if (resolved < 0 || resolved >= n)
            throw ParseError(kModule, "face index " + std::to_string(idx) + " out of range", at);
          poly.push_back(static_cast<std::uint32_t>(resolved));
        }
        if (poly.size() < 3)
          throw ParseError(kModule, "face with fewer than 3 vertices", line_start);
        for (std::size_t k = 1; k + 1 < poly.size(); ++k)
          s.triangles.push_back({poly[0], poly[k], poly[k + 1]});
      }
      // Other records (vt, vn, g, usemtl, ...) carry nothing we use.
    }
    line_start = line_end + 1;
  }
  return s;
}

struct CellKey {
  long long x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = splitmix64(static_cast<std::uint64_t>(k.x));
    h = splitmix64(h ^ static_cast<std::uint64_t>(k.y));
    return static_cast<std::size_t>(splitmix64(h ^ static_cast<std::uint64_t>(k.z)));
  }
};

}  // namespace

Vec3 TriangleMesh::area_normal(std::size_t t) const {
  const auto [a, b, c] = corners(t);
  return cross(b - a, c - a);
}

Vec3 TriangleMesh::face_normal(std::size_t t) const { return normalized(area_normal(t)); }

double TriangleMesh::face_area(std::size_t t) const { return 0.5 * norm(area_normal(t)); }

Aabb TriangleMesh::bounds() const {
  Aabb box;
  for (const auto& v : vertices) box.expand(v);
  return box;
}

Vec3 TriangleMesh::vertex_centroid() const {
  Vec3 c;
  for (const auto& v : vertices) c += v;
  return vertices.empty() ? c : c / static_cast<double>(vertices.size());
}

TriangleMesh clean_mesh(std::span<const Vec3> vertices, std::span<const Triangle> triangles,
                        MeshLoadReport* report) {
  TriangleMesh out;
  std::vector<std::uint32_t> remap(vertices.size());
  std::unordered_map<CellKey, std::vector<std::uint32_t>, CellKeyHash> cells;
  auto key_of = [](const Vec3& p) {
    return CellKey{std::llround(p.x / kMergeTolerance), std::llround(p.y / kMergeTolerance),
                   std::llround(p.z / kMergeTolerance)};
  };
  std::size_t merged = 0;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const Vec3& p = vertices[i];
    const CellKey k = key_of(p);
    std::int64_t found = -1;
    for (long long dx = -1; dx <= 1 && found < 0; ++dx)
      for (long long dy = -1; dy <= 1 && found < 0; ++dy)
        for (long long dz = -1; dz <= 1 && found < 0; ++dz) {
          const auto it = cells.find({k.x + dx, k.y + dy, k.z + dz});
          if (it == cells.end()) continue;
          for (std::uint32_t cand : it->second)
            if (norm(out.vertices[cand] - p) <= kMergeTolerance) {
              found = cand;
              break;
            }
        }
    if (found >= 0) {
      remap[i] = static_cast<std::uint32_t>(found);
      ++merged;
    } else {
      remap[i] = static_cast<std::uint32_t>(out.vertices.size());
      cells[k].push_back(remap[i]);
      out.vertices.push_back(p);
    }
  }

  std::size_t dropped = 0;
  for (const auto& t : triangles) {
    for (auto idx : t)
      if (idx >= vertices.size()) throw DataError(kModule, "triangle index out of range");
    const Triangle r{remap[t[0]], remap[t[1]], remap[t[2]]};
    if (r[0] == r[1] || r[1] == r[2] || r[0] == r[2]) {
      ++dropped;
      continue;
    }
    const Vec3 a = out.vertices[r[0]], b = out.vertices[r[1]], c = out.vertices[r[2]];
    const double longest = std::max({norm2(b - a), norm2(c - b), norm2(a - c)});
    if (norm(cross(b - a, c - a)) <= 1e-14 * longest) {
      ++dropped;
      continue;
    }
    out.triangles.push_back(r);
  }
  if (dropped > 0)
    log_warn(kModule, "dropped " + std::to_string(dropped) + " degenerate (zero-area) triangle(s)");

  // Drop vertices no surviving triangle references.
  std::vector<std::int64_t> used(out.vertices.size(), -1);
  std::vector<Vec3> kept;
  for (auto& t : out.triangles)
    for (auto& idx : t) {
      if (used[idx] < 0) {
        used[idx] = static_cast<std::int64_t>(kept.size());
        kept.push_back(out.vertices[idx]);
      }
      idx = static_cast<std::uint32_t>(used[idx]);
    }
  out.vertices = std::move(kept);

  if (report) *report = {dropped, merged};
  return out;
}

MeshFormat detect_mesh_format(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".obj") return MeshFormat::obj;
  if (ext != ".stl") throw DataError(kModule, "cannot infer mesh format of '" + path.string() + "'");
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw DataError(kModule, "cannot open mesh file '" + path.string() + "'");
  std::ifstream in(path, std::ios::binary);
  char head[84] = {};
  in.read(head, sizeof head);
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got == 84 && 84 + std::uintmax_t{50} * read_u32_le(head + 80) == size)
    return MeshFormat::stl_binary;
  if (got >= 5 && std::string_view(head, 5) == "solid") return MeshFormat::stl_ascii;
  return MeshFormat::stl_binary;
}

TriangleMesh load_mesh(const std::filesystem::path& path, MeshFormat format,
                       MeshLoadReport* report) {
  const auto buf = read_file(path);
  Soup s;
  switch (format) {
    case MeshFormat::stl_binary: s = parse_stl_binary(buf); break;
    case MeshFormat::stl_ascii: s = parse_stl_ascii(buf); break;
    case MeshFormat::obj: s = parse_obj(buf); break;
  }
  for (const auto& v : s.vertices)
    if (!is_finite(v)) throw DataError(kModule, "mesh '" + path.string() + "' has non-finite vertex coordinates");
  auto mesh = clean_mesh(s.vertices, s.triangles, report);
  if (mesh.empty()) throw DataError(kModule, "mesh '" + path.string() + "' has no usable triangles");
  return mesh;
}

TriangleMesh load_mesh(const std::filesystem::path& path, MeshLoadReport* report) {
  return load_mesh(path, detect_mesh_format(path), report);
}

void write_stl_binary(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(kModule, "cannot write '" + path.string() + "'");
  char header[80] = {};
  std::memcpy(header, "pmrt binary stl", 15);
  out.write(header, 80);
  write_u32_le(out, static_cast<std::uint32_t>(mesh.triangles.size()));
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Vec3 n = mesh.face_normal(t);
    write_f32_le(out, n.x);
    write_f32_le(out, n.y);
    write_f32_le(out, n.z);
    for (const auto& v : mesh.corners(t)) {
      write_f32_le(out, v.x);
      write_f32_le(out, v.y);
      write_f32_le(out, v.z);
    }
    out.write("\0\0", 2);
  }
}

void write_stl_ascii(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError(kModule, "cannot write '" + path.string() + "'");
  out.precision(17);
  out << "solid pmrt\n";
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Vec3 n = mesh.face_normal(t);
    out << "  facet normal " << n.x << ' ' << n.y << ' ' << n.z << "\n    outer loop\n";
    for (const auto& v : mesh.corners(t)) out << "      vertex " << v.x << ' ' << v.y << ' ' << v.z << '\n';
    out << "    endloop\n  endfacet\n";
  }
  out << "endsolid pmrt\n";
}

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError(kModule, "cannot write '" + path.string() + "'");
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

TriangleMesh make_box(const Vec3& lo, const Vec3& hi) {
  TriangleMesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.emplace_back(i & 1 ? hi.x : lo.x, i & 2 ? hi.y : lo.y, i & 4 ? hi.z : lo.z);
  // Two triangles per face, counter-clockwise seen from outside.
  m.triangles = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
                 {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
  return m;
}

TriangleMesh make_icosphere(const Vec3& center, double radius, int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
                         {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
                         {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p = normalized(p);
  std::vector<Triangle> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      const auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      const auto idx = static_cast<std::uint32_t>(v.size());
      v.push_back(normalized((v[a] + v[b]) * 0.5));
      mid.emplace(key, idx);
      return idx;
    };
    std::vector<Triangle> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const auto a = midpoint(tri[0], tri[1]);
      const auto b = midpoint(tri[1], tri[2]);
      const auto c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  TriangleMesh m;
  m.vertices.reserve(v.size());
  for (const auto& p : v) m.vertices.push_back(center + p * radius);
  m.triangles = std::move(f);
  for (std::size_t i = 0; i < m.triangles.size(); ++i) {
    const auto [a, b, c] = m.corners(i);
    if (dot(m.area_normal(i), (a + b + c) / 3.0 - center) < 0.0)
      std::swap(m.triangles[i][1], m.triangles[i][2]);
  }
  return m;
}

TriangleMesh make_ellipsoid(const Vec3& center, const Vec3& semi_axes, int subdivisions) {
  TriangleMesh m = make_icosphere({0, 0, 0}, 1.0, subdivisions);
  for (auto& p : m.vertices)
    p = center + Vec3{p.x * semi_axes.x, p.y * semi_axes.y, p.z * semi_axes.z};
  return m;
}

TriangleMesh translated(TriangleMesh mesh, const Vec3& offset) {
  for (auto& v : mesh.vertices) v += offset;
  return mesh;
}

TriangleMesh scaled(TriangleMesh mesh, double factor) {
  for (auto& v : mesh.vertices) v *= factor;
  return mesh;
}

TriangleMesh flipped_winding(TriangleMesh mesh) {
  for (auto& t : mesh.triangles) std::swap(t[1], t[2]);
  return mesh;
}

void validate_finite(const TriangleMesh& mesh) {
  for (const auto& v : mesh.vertices)
    if (!is_finite(v)) throw DataError(kModule, "mesh has non-finite vertex coordinates");
}

}  // namespace pmrt
