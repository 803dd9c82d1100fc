#include "pmrt/weights.hpp"

#include <cmath>

namespace pmrt::weights {

namespace {

constexpr const char* kModule = "weights";

void require_shape(const VoxelGrid& a, const VoxelGrid& b) { a.require_same_shape(b, kModule); }

VoxelGrid add(const VoxelGrid& a, const VoxelGrid& b) {
  VoxelGrid out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

}  // namespace

void WeightConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError(kModule, "alpha must be > 0");
  if (!(c >= 0.0)) throw ConfigError(kModule, "c must be >= 0");
  if (!(grad_exponent > 0.0)) throw ConfigError(kModule, "grad_exponent must be > 0");
  if (!(mean_guard >= 0.0)) throw ConfigError(kModule, "mean_guard must be >= 0");
}

VoxelGrid distance_weight(const VoxelGrid& usdf, const VoxelGrid& mask, const WeightConfig& cfg) {
  cfg.validate();
  require_shape(usdf, mask);
  if (usdf.channels != 1 || mask.channels != 1)
    throw DataError(kModule, "usdf and mask must have one channel");
  VoxelGrid out(usdf.shape, 1, usdf.roi, FieldTag::weight);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double d = usdf.data[i];
    if (!(d >= 0.0)) throw DataError(kModule, "usdf must be non-negative and finite");
    out.data[i] = cfg.c + cfg.alpha * mask.data[i] / (cfg.alpha + d);
  }
  return out;
}

VoxelGrid gradient_weight(const VoxelGrid& velocity, const WeightConfig& cfg) {
  return gradient_weight(velocity, velocity.roi, cfg);
}

VoxelGrid gradient_weight(const VoxelGrid& velocity, const ROI& roi, const WeightConfig& cfg) {
  cfg.validate();
  roi.validate();
  if (velocity.channels != 3) throw DataError(kModule, "velocity grid must have 3 channels");
  const GridShape s = velocity.shape;
  if (s.nx < 2 || s.ny < 2 || s.nz < 2)
    throw DataError(kModule, "gradient needs at least 2 cells along every axis");

  const std::size_t cells = velocity.cells();
  std::vector<double> mag(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    const double u = velocity.data[i], v = velocity.data[cells + i], w = velocity.data[2 * cells + i];
    mag[i] = std::sqrt(u * u + v * v + w * w);
  }
  const double h[3] = {roi.extent.x / s.nx, roi.extent.y / s.ny, roi.extent.z / s.nz};
  const int n[3] = {s.nx, s.ny, s.nz};
  const std::size_t stride[3] = {static_cast<std::size_t>(s.ny) * s.nz, static_cast<std::size_t>(s.nz), 1};

  VoxelGrid out(s, 1, roi, FieldTag::weight);
  parallel_for(static_cast<std::size_t>(s.nx), [&](std::size_t begin, std::size_t end) {
    for (std::size_t ix = begin; ix < end; ++ix)
      for (int iy = 0; iy < s.ny; ++iy)
        for (int iz = 0; iz < s.nz; ++iz) {
          const int idx[3] = {static_cast<int>(ix), iy, iz};
          const std::size_t i = out.index(idx[0], iy, iz);
          double g2 = 0.0;
          for (int a = 0; a < 3; ++a) {
            double d;
            if (idx[a] == 0)
              d = (mag[i + stride[a]] - mag[i]) / h[a];
            else if (idx[a] == n[a] - 1)
              d = (mag[i] - mag[i - stride[a]]) / h[a];
            else
              d = (mag[i + stride[a]] - mag[i - stride[a]]) / (2.0 * h[a]);
            g2 += d * d;
          }
          out.data[i] = std::pow(std::sqrt(g2), cfg.grad_exponent);
        }
  });
  return out;
}

VoxelGrid unit_mean_normalize(const VoxelGrid& grid, double guard) {
  const double mean = pairwise_mean(grid.data);
  if (!(mean > guard))
    throw DegenerateError(kModule, "field mean " + std::to_string(mean) + " is not above the guard; cannot normalize");
  VoxelGrid out = grid;
  for (double& v : out.data) v /= mean;
  return out;
}

VoxelGrid combined_weight(const VoxelGrid& usdf, const VoxelGrid& mask, const VoxelGrid& velocity,
                          const WeightConfig& cfg) {
  require_shape(usdf, velocity);
  const VoxelGrid nd = unit_mean_normalize(distance_weight(usdf, mask, cfg), cfg.mean_guard);
  const VoxelGrid ng = unit_mean_normalize(gradient_weight(velocity, usdf.roi, cfg), cfg.mean_guard);
  return unit_mean_normalize(add(nd, ng), cfg.mean_guard);
}

WeightBuild build_weight(const VoxelGrid& usdf, const VoxelGrid& mask, const VoxelGrid& velocity,
                         const WeightConfig& cfg) {
  require_shape(usdf, velocity);
  const VoxelGrid dist = distance_weight(usdf, mask, cfg);
  WeightBuild out;
  out.distance_mean = pairwise_mean(dist.data);
  const VoxelGrid nd = unit_mean_normalize(dist, cfg.mean_guard);
  const VoxelGrid grad = gradient_weight(velocity, usdf.roi, cfg);
  out.gradient_mean = pairwise_mean(grad.data);
  if (!(out.gradient_mean > cfg.mean_guard)) {
    log_warn(kModule, "gradient term has zero mean; using distance-only weighting");
    out.weight = nd;
    out.distance_only = true;
    return out;
  }
  out.weight = unit_mean_normalize(add(nd, unit_mean_normalize(grad, cfg.mean_guard)), cfg.mean_guard);
  return out;
}

}  // namespace pmrt::weights
