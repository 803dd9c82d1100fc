#pragma once

#include <optional>

#include "pmrt/grid.hpp"

namespace pmrt::weights {

struct WeightConfig {
  double alpha = 5.5;
  double c = 0.75;
  double grad_exponent = 0.25;
  double mean_guard = 1e-12;

  void validate() const;
};

/// c + alpha * mask / (alpha + usdf), per cell. Fluid cells touching the
/// surface get c + 1; solid cells get exactly c.
VoxelGrid distance_weight(const VoxelGrid& usdf, const VoxelGrid& mask, const WeightConfig& cfg = {});

/// |grad |u||^p with p = grad_exponent. Central differences in physical units,
/// one-sided at boundary cells. Cell spacing comes from `roi` and the grid shape.
VoxelGrid gradient_weight(const VoxelGrid& velocity, const ROI& roi, const WeightConfig& cfg = {});
VoxelGrid gradient_weight(const VoxelGrid& velocity, const WeightConfig& cfg = {});

/// grid / mean(grid). Throws DegenerateError when the mean is <= guard.
VoxelGrid unit_mean_normalize(const VoxelGrid& grid, double guard = 1e-12);

/// N(N(distance term) + N(gradient term)). Throws when either term cannot be normalized.
VoxelGrid combined_weight(const VoxelGrid& usdf, const VoxelGrid& mask, const VoxelGrid& velocity,
                          const WeightConfig& cfg = {});

struct WeightBuild {
  VoxelGrid weight;
  double distance_mean = 0.0;
  double gradient_mean = 0.0;  // 0 when the gradient term vanished
  bool distance_only = false;
};

/// combined_weight, falling back to N(distance term) with a warning when the
/// gradient term is degenerate. Reports the component means used.
WeightBuild build_weight(const VoxelGrid& usdf, const VoxelGrid& mask, const VoxelGrid& velocity,
                         const WeightConfig& cfg = {});

}  // namespace pmrt::weights
