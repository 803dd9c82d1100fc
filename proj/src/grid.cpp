#include "pmrt/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace pmrt {

namespace {

constexpr const char* kModule = "sdf";

std::filesystem::path strip_json(const std::filesystem::path& p) {
  if (p.extension() == ".json" || p.extension() == ".bin") {
    auto q = p;
    q.replace_extension();
    return q;
  }
  return p;
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

}  // namespace

void ROI::validate() const {
  if (!is_finite(origin)) throw ConfigError(kModule, "ROI origin must be finite");
  if (!(extent.x > 0 && extent.y > 0 && extent.z > 0 && is_finite(extent)))
    throw ConfigError(kModule, "ROI extents must be finite and > 0");
}

ROI ROI::around_vehicle(const Aabb& body, double ground_z, double upstream, Vec3 extent) {
  ROI r;
  r.extent = extent;
  r.origin = {body.lo.x - upstream, body.center().y - 0.5 * extent.y, ground_z};
  r.validate();
  return r;
}

GridShape shape_of(Resolution res) {
  switch (res) {
    case Resolution::R128: return {128, 32, 32};
    case Resolution::R256: return {256, 64, 64};
    case Resolution::R512: return {512, 128, 128};
  }
  return {};
}

Resolution resolution_from_string(std::string_view tag) {
  if (tag == "R128") return Resolution::R128;
  if (tag == "R256") return Resolution::R256;
  if (tag == "R512") return Resolution::R512;
  throw ConfigError(kModule, "unknown resolution '" + std::string(tag) + "' (expected R128|R256|R512)");
}

std::string_view resolution_name(Resolution res) {
  switch (res) {
    case Resolution::R128: return "R128";
    case Resolution::R256: return "R256";
    case Resolution::R512: return "R512";
  }
  return "?";
}

Resolution resolution_from_index(int index) {
  if (index < 0 || index > 2) throw ConfigError(kModule, "resolution index must be 0, 1 or 2");
  return static_cast<Resolution>(index);
}

std::string_view field_tag_name(FieldTag tag) {
  switch (tag) {
    case FieldTag::sdf: return "sdf";
    case FieldTag::usdf: return "usdf";
    case FieldTag::mask: return "mask";
    case FieldTag::velocity: return "velocity";
    case FieldTag::weight: return "weight";
    case FieldTag::other: return "other";
  }
  return "other";
}

FieldTag field_tag_from_string(std::string_view tag) {
  for (auto t : {FieldTag::sdf, FieldTag::usdf, FieldTag::mask, FieldTag::velocity, FieldTag::weight, FieldTag::other})
    if (field_tag_name(t) == tag) return t;
  throw DataError(kModule, "unknown field tag '" + std::string(tag) + "'");
}

VoxelGrid::VoxelGrid(GridShape shape_, int channels_, ROI roi_, FieldTag tag_, double fill)
    : shape(shape_), channels(channels_), roi(roi_), tag(tag_) {
  if (shape.nx < 1 || shape.ny < 1 || shape.nz < 1) throw ConfigError(kModule, "grid shape must be positive");
  if (channels < 1) throw ConfigError(kModule, "grid needs at least one channel");
  roi.validate();
  data.assign(shape.cells() * static_cast<std::size_t>(channels), fill);
}

Vec3 VoxelGrid::cell_center(int ix, int iy, int iz) const {
  const Vec3 h = spacing();
  return {roi.origin.x + (ix + 0.5) * h.x, roi.origin.y + (iy + 0.5) * h.y,
          roi.origin.z + (iz + 0.5) * h.z};
}

void VoxelGrid::require_same_shape(const VoxelGrid& other, std::string_view module) const {
  if (!(shape == other.shape))
    throw DataError(std::string(module), "grid shape mismatch");
}

double trilinear_sample(const VoxelGrid& grid, const Vec3& p, int channel) {
  const Vec3 h = grid.spacing();
  const int n[3] = {grid.shape.nx, grid.shape.ny, grid.shape.nz};
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    double u = (p[a] - grid.roi.origin[a]) / h[a] - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(n[a] - 1));
    i0[a] = std::min(static_cast<int>(std::floor(u)), std::max(0, n[a] - 2));
    f[a] = n[a] > 1 ? u - i0[a] : 0.0;
  }
  double acc = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    int idx[3];
    double w = 1.0;
    for (int a = 0; a < 3; ++a) {
      const int bit = (corner >> a) & 1;
      idx[a] = std::min(i0[a] + bit, n[a] - 1);
      w *= bit ? f[a] : 1.0 - f[a];
    }
    if (w != 0.0) acc += w * grid.at(idx[0], idx[1], idx[2], channel);
  }
  return acc;
}

VoxelGrid resample_trilinear(const VoxelGrid& src, GridShape target) {
  VoxelGrid out(target, src.channels, src.roi, src.tag);
  for (int c = 0; c < src.channels; ++c)
    for (int ix = 0; ix < target.nx; ++ix)
      for (int iy = 0; iy < target.ny; ++iy)
        for (int iz = 0; iz < target.nz; ++iz)
          out.at(ix, iy, iz, c) = trilinear_sample(src, out.cell_center(ix, iy, iz), c);
  return out;
}

ROI roi_from_json(const nlohmann::json& j, const Aabb* mesh_bounds) {
  if (!j.is_object()) throw ConfigError(kModule, "ROI must be a JSON object");
  const auto vec = [](const nlohmann::json& a) {
    if (!a.is_array() || a.size() != 3) throw ConfigError(kModule, "ROI vectors need 3 numbers");
    return Vec3{a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
  };
  ROI roi;
  try {
    for (const auto& [key, _] : j.items())
      if (key != "origin" && key != "extent" && key != "around_mesh")
        throw ConfigError(kModule, "unknown ROI key '" + key + "'");
    if (j.contains("extent")) roi.extent = vec(j["extent"]);
    if (j.contains("around_mesh")) {
      if (j.contains("origin")) throw ConfigError(kModule, "ROI takes either origin or around_mesh");
      if (!mesh_bounds) throw ConfigError(kModule, "around_mesh ROI needs a mesh");
      const auto& a = j["around_mesh"];
      roi = ROI::around_vehicle(*mesh_bounds, a.value("ground_z", mesh_bounds->lo.z), a.value("upstream", 1.0),
                                roi.extent);
    } else if (j.contains("origin")) {
      roi.origin = vec(j["origin"]);
    } else {
      throw ConfigError(kModule, "ROI needs origin or around_mesh");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(kModule, std::string("bad ROI: ") + ex.what());
  }
  roi.validate();
  return roi;
}

nlohmann::json roi_to_json(const ROI& roi) {
  return {{"origin", {roi.origin.x, roi.origin.y, roi.origin.z}}, {"extent", {roi.extent.x, roi.extent.y, roi.extent.z}}};
}

nlohmann::json grid_sidecar(const VoxelGrid& grid, const std::string& payload_name) {
  nlohmann::json j = {
      {"shape", {grid.shape.nx, grid.shape.ny, grid.shape.nz}},
      {"channels", grid.channels},
      {"roi", {{"origin", {grid.roi.origin.x, grid.roi.origin.y, grid.roi.origin.z}},
               {"extent", {grid.roi.extent.x, grid.roi.extent.y, grid.roi.extent.z}}}},
      {"field_tag", field_tag_name(grid.tag)},
      {"mean", grid.norm_mean ? nlohmann::json(*grid.norm_mean) : nlohmann::json(nullptr)},
      {"std", grid.norm_std ? nlohmann::json(*grid.norm_std) : nlohmann::json(nullptr)},
      {"linearization", "x-major-then-y-then-z"},
      {"dtype", "f32-little-endian"},
      {"payload", payload_name},
  };
  if (!grid.meta.empty()) j["meta"] = grid.meta;
  return j;
}

void write_grid(const VoxelGrid& grid, const std::filesystem::path& prefix_in) {
  const auto prefix = strip_json(prefix_in);
  const auto bin_path = with_suffix(prefix, ".bin");
  {
    std::ofstream out(bin_path, std::ios::binary);
    if (!out) throw DataError(kModule, "cannot write '" + bin_path.string() + "'");
    std::vector<char> buf(grid.data.size() * 4);
    for (std::size_t i = 0; i < grid.data.size(); ++i) {
      const float f = static_cast<float>(grid.data[i]);
      std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
      if constexpr (std::endian::native == std::endian::big)
        bits = ((bits & 0xff) << 24) | ((bits & 0xff00) << 8) | ((bits >> 8) & 0xff00) | (bits >> 24);
      std::memcpy(buf.data() + 4 * i, &bits, 4);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  const auto json_path = with_suffix(prefix, ".json");
  std::ofstream js(json_path);
  if (!js) throw DataError(kModule, "cannot write '" + json_path.string() + "'");
  js << grid_sidecar(grid, bin_path.filename().string()).dump(2) << '\n';
}

VoxelGrid read_grid(const std::filesystem::path& prefix_in) {
  const auto prefix = strip_json(prefix_in);
  const auto json_path = with_suffix(prefix, ".json");
  std::ifstream js(json_path);
  if (!js) throw DataError(kModule, "cannot open grid sidecar '" + json_path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(kModule, "bad grid sidecar '" + json_path.string() + "': " + ex.what());
  }
  VoxelGrid g;
  try {
    if (j.at("dtype") != "f32-little-endian" || j.at("linearization") != "x-major-then-y-then-z")
      throw DataError(kModule, "unsupported grid dtype or linearization in '" + json_path.string() + "'");
    const auto& s = j.at("shape");
    const auto& o = j.at("roi").at("origin");
    const auto& e = j.at("roi").at("extent");
    ROI roi{{o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>()},
            {e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>()}};
    g = VoxelGrid({s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()}, j.at("channels").get<int>(),
                  roi, field_tag_from_string(j.at("field_tag").get<std::string>()));
    if (j.contains("mean") && !j["mean"].is_null()) g.norm_mean = j["mean"].get<double>();
    if (j.contains("std") && !j["std"].is_null()) g.norm_std = j["std"].get<double>();
    if (j.contains("meta")) g.meta = j["meta"];
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(kModule, "bad grid sidecar '" + json_path.string() + "': " + ex.what());
  }
  const std::string payload = j.value("payload", with_suffix(prefix, ".bin").filename().string());
  const auto bin_path = json_path.parent_path() / payload;
  std::ifstream in(bin_path, std::ios::binary);
  if (!in) throw DataError(kModule, "cannot open grid payload '" + bin_path.string() + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() != g.data.size() * 4)
    throw ParseError(kModule, "grid payload '" + bin_path.string() + "' has " + std::to_string(buf.size()) +
                                  " bytes, sidecar implies " + std::to_string(g.data.size() * 4),
                     std::min(buf.size(), g.data.size() * 4));
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, buf.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big)
      bits = ((bits & 0xff) << 24) | ((bits & 0xff00) << 8) | ((bits >> 8) & 0xff00) | (bits >> 24);
    g.data[i] = std::bit_cast<float>(bits);
  }
  return g;
}

}  // namespace pmrt
