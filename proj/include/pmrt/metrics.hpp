#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmrt/grid.hpp"

namespace pmrt::metrics {

struct SampleRecord {
  std::string dataset_id;
  std::string sample_id;
  double cd_true = 0.0;
  double cd_pred = 0.0;
  std::optional<VoxelGrid> field_true;
  std::optional<VoxelGrid> field_pred;

  bool has_fields() const { return field_true.has_value() && field_pred.has_value(); }
  void validate() const;
};

/// Mean over samples of |u - u_hat| / |u| in percent. All channels and cells of
/// a sample are flattened into one vector.
double relative_l2(std::span<const SampleRecord> samples);
/// Per-sample ratios (not percent), in input order.
std::vector<double> relative_l2_ratios(std::span<const SampleRecord> samples);

struct DragMetrics {
  double mae_counts = 0.0;
  double maxae_counts = 0.0;
  double r2 = 0.0;
};

/// One drag count is 0.001 of cd. Throws DegenerateError when cd_true has no variance.
DragMetrics drag_metrics(std::span<const SampleRecord> samples);
double r_squared(std::span<const double> truth, std::span<const double> pred);

struct DatasetMetrics {
  std::string dataset;
  std::size_t n = 0;
  double mae_counts = 0.0;
  double maxae_counts = 0.0;
  std::optional<double> r2;              // absent for n < 2 or constant cd_true
  std::optional<double> rel_l2_percent;  // absent when no sample carries fields
};

/// Metrics of one dataset. Fields must be present on all samples or on none.
DatasetMetrics dataset_metrics(const std::string& dataset, std::span<const SampleRecord> samples);

struct GroupMetrics {
  std::string group;
  std::vector<std::string> datasets;
  double mae_counts = 0.0;
  double maxae_counts = 0.0;
  std::optional<double> r2;
  std::optional<double> rel_l2_percent;
};

struct MetricReport {
  std::vector<DatasetMetrics> datasets;  // sorted by name
  std::vector<GroupMetrics> groups;      // sorted by name
  GroupMetrics overall;                  // group == "overall"

  nlohmann::json to_json() const;
};

/// group -> member datasets.
using Grouping = std::map<std::string, std::vector<std::string>>;

// Within a group every dataset counts once; the overall value weights every
// group once. MaxAE is the max within a group and the mean across groups.
// Optional metrics average over the members that have them.
MetricReport group_aggregate(std::span<const DatasetMetrics> datasets, const Grouping& grouping);

/// Splits records by dataset_id and aggregates.
MetricReport compute_report(std::span<const SampleRecord> samples, const Grouping& grouping);

/// Rounds to `digits` significant digits.
double round_significant(double v, int digits = 4);

// On-disk layout used by `metrics compute`:
//   <dir>/cd.csv                    header dataset_id,sample_id,cd
//   <dir>/fields/<sample_id>.json   optional velocity grid (grid sidecar + .bin)
// Grouping JSON: {"groups": {"<group>": ["<dataset>", ...], ...}}.
Grouping grouping_from_json(const nlohmann::json& j);
std::vector<SampleRecord> load_records(const std::filesystem::path& pred_dir, const std::filesystem::path& truth_dir);
void write_records(std::span<const SampleRecord> samples, const std::filesystem::path& dir, bool predictions);

}  // namespace pmrt::metrics
