#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pmrt/grid.hpp"
#include "pmrt/mesh.hpp"
#include "pmrt/schedule.hpp"
#include "pmrt/weights.hpp"

namespace pmrt::harness {

// ---------------------------------------------------------------------------
// Synthetic parametric shapes

enum class ShapeFamily { box, ellipsoid, box_with_slant };
std::string_view family_name(ShapeFamily f);
ShapeFamily family_from_string(std::string_view s);

// Shapes sit in a fixed ROI: nose at x = 1.0 m, centered in y, underbody
// `clearance` above the ROI floor.
struct ShapeSpec {
  ShapeFamily family = ShapeFamily::box;
  double length = 4.0, width = 1.8, height = 1.4;  // bounding extents, m
  double corner_radius = 0.0;                      // box only, m
  double slant = 0.0;                              // box_with_slant only, rad
  std::vector<double> sim_params;                  // solver-setting stand-ins

  static constexpr double nose_x = 1.0;
  static constexpr double clearance = 0.2;

  void validate() const;
  std::vector<double> params() const;
  Aabb bounds() const;
  /// Length of the rear-top cut along x for box_with_slant.
  double slant_run() const;
};

ROI harness_roi();

/// Exact signed distance to the analytic shape (negative inside).
double shape_sdf(const ShapeSpec& spec, const Vec3& p);
VoxelGrid sdf_grid(const ShapeSpec& spec, const ROI& roi, GridShape shape);
/// Closed triangle mesh of the shape; `detail` controls tessellation density.
TriangleMesh shape_mesh(const ShapeSpec& spec, int detail = 8);

double frontal_area(const ShapeSpec& spec);
/// Bluffness in [0, 1]: 1 for a sharp-edged front, 0 for the ellipsoid.
double bluffness(const ShapeSpec& spec);
// Drag proxy:
//   cd = 0.20 + 0.04 (A - 2.4) + 0.06 b + 0.03 exp(-((theta - 0.52) / 0.2)^2) [slant only]
//        + 0.01 (s0 - 0.5) + 0.005 (s2 - 0.5)
// with A the frontal area, b the bluffness, s the simulation parameters.
double target_cd(const ShapeSpec& spec);

// Free stream along +x with a boundary-layer factor and a Gaussian wake:
//   ux = U (1 - exp(-d / delta)) (1 - D exp(-r^2 / (2 sw^2)) exp(-(x - x_r) / Lw) [x > x_r])
//   uz = 0.1 U (z - z_c) / H * exp(-d / delta) * (1 - exp(-d / delta))
// d = max(sdf, 0), x_r the shape's rear, r the distance to the wake axis.
VoxelGrid velocity_field(const ShapeSpec& spec, const ROI& roi, GridShape shape);

struct ToySample {
  ShapeSpec spec;
  double target_cd = 0.0;
};

/// Shape families cycle box, ellipsoid, box_with_slant; parameters are drawn
/// uniformly: length [3.5, 4.8], width [1.5, 2.0], height [1.2, 1.6],
/// corner radius [0.05, 0.3], slant [10, 40] deg, s0, s2, u [0, 1].
/// Simulation parameters are (s0, 0.8 s0 + 0.2 u, s2, 0.5 (s0 + s2) + 0.1 u').
std::vector<ToySample> generate_dataset(int n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Simulation-parameter encoding

struct SimParamEncoder {
  std::vector<double> mean, std;               // per original dimension
  std::vector<std::size_t> kept;               // dimensions with nonzero variance
  std::vector<std::vector<double>> components; // k rows over the kept dimensions
  std::vector<double> eigenvalues;             // all, descending
  double explained_variance_ratio = 0.0;       // of the first k

  std::vector<double> encode(std::span<const double> v) const;
  std::size_t k() const { return components.size(); }
};

/// Z-normalizes every dimension (sample std, n - 1) and keeps the top-k
/// principal components. Each component's largest-magnitude loading is positive.
SimParamEncoder fit_sim_encoder(std::span<const std::vector<double>> train, int k);
std::vector<std::vector<double>> encode_sim_params(std::span<const std::vector<double>> vectors, int k);

// ---------------------------------------------------------------------------
// Splitting, losses, learning rate

/// Quantile-binned split. Bins with fewer members than partitions merge into a
/// neighbour. Returns one index list per fraction, each sorted ascending.
std::vector<std::vector<std::size_t>> stratified_split(std::span<const double> targets,
                                                       std::span<const double> fractions, int bins,
                                                       std::uint64_t seed);

double cyclic_lr(long step, double base_lr, double max_lr, long half_cycle);
double smooth_l1(double r, double beta = 1.0);
double smooth_l1_grad(double r, double beta = 1.0);

// ---------------------------------------------------------------------------
// Features

// Average-pool pyramid over the SDF: for levels (4,1,1) and (8,2,2), the mean
// SDF and the solid volume fraction of every bin. The dimension does not
// depend on the input resolution; every supported grid divides evenly.
inline constexpr int kFeatureDim = 2 * (4 + 32);

std::vector<double> extract_features(const ShapeSpec& spec, const ROI& roi, GridShape shape);
std::vector<double> extract_features(const VoxelGrid& sdf);

enum class WeightMode { uniform, eq1 };
std::string_view weight_mode_name(WeightMode m);
WeightMode weight_mode_from_string(std::string_view s);

struct FieldConfig {
  GridShape shape{16, 4, 4};
};

// Per-sample model inputs at every resolution: pooled features standardized
// with the highest-resolution training statistics, optionally whitened (PCA
// components with eigenvalue above whiten_threshold * largest, scaled to unit
// variance), followed by the encoded simulation parameters.
struct FeatureBank {
  std::vector<std::vector<std::vector<double>>> features;  // [resolution][sample]
  std::vector<double> targets;                             // raw cd
  double target_mean = 0.0, target_std = 1.0;              // training split
  std::vector<double> feat_mean, feat_std;
  std::vector<std::vector<double>> whitening;  // rows over standardized features; empty = identity
  SimParamEncoder encoder;
  GridShape field_shape;
  std::vector<std::vector<double>> field_truth;   // eq1 only: 3 * cells per sample
  std::vector<std::vector<double>> field_weight;  // eq1 only: cells per sample

  std::size_t dim() const { return (whitening.empty() ? feat_mean.size() : whitening.size()) + encoder.k(); }
  std::size_t samples() const { return targets.size(); }
  int resolutions() const { return static_cast<int>(features.size()); }
};

struct BankOptions {
  int resolutions = 3;
  int pca_k = 2;
  double whiten_threshold = 1e-5;  // 0 disables whitening
  bool with_fields = false;
  FieldConfig field;
  weights::WeightConfig weight_cfg;
};

/// Raw (unstandardized) pooled features per resolution and sample.
std::vector<std::vector<std::vector<double>>> raw_features(std::span<const ToySample> data, const ROI& roi,
                                                           int resolutions);
FeatureBank build_feature_bank(std::span<const ToySample> data, std::span<const std::size_t> train,
                               const BankOptions& opts = {});
FeatureBank build_feature_bank(std::span<const ToySample> data, std::span<const std::size_t> train,
                               std::vector<std::vector<std::vector<double>>> raw, const BankOptions& opts);

// ---------------------------------------------------------------------------
// Toy model

// Linear readout: cd_hat = w . f + b (normalized target units), and in eq1 mode
// a per-cell linear field head u_hat[o] = W[o] . f + c[o].
struct ToyModel {
  std::vector<double> w;
  double b = 0.0;
  std::vector<double> field_w;  // outputs x dim, row-major
  std::vector<double> field_b;  // outputs

  static ToyModel zeros(std::size_t dim, std::size_t field_outputs = 0);
  std::size_t dim() const { return w.size(); }
  std::size_t field_outputs() const { return field_b.size(); }
  double predict(std::span<const double> f) const;
  /// Flat parameter view: w, b, field_w, field_b.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
};

struct LossOptions {
  double beta = 1.0;
  double field_loss_weight = 1.0;  // eq1 only
};

struct BatchItem {
  std::span<const double> features;
  double target;                       // normalized
  std::span<const double> field_truth;  // empty in uniform mode
  std::span<const double> field_weight;
};

/// Mean Smooth-L1 over the batch (+ weighted field term), with the analytic
/// gradient in flatten() order written to `grad` when non-null.
double batch_loss(const ToyModel& model, std::span<const BatchItem> batch, const LossOptions& opts,
                  std::vector<double>* grad);

struct CostEntry {
  int epoch;
  int resolution;
  int batch_size;
  std::int64_t voxels;  // batch_size * cells(resolution)
};

struct CostLog {
  std::vector<CostEntry> entries;
  std::int64_t cumulative_voxels = 0;

  void add(int epoch, int resolution, int batch_size);
  /// Cost units: one highest-resolution sample is 1.0.
  double cumulative() const;
  static std::int64_t voxels_per_sample(int resolution);
};

enum class EpochMode { fixed_samples, fixed_batches };

struct TrainOptions {
  WeightMode weight_mode = WeightMode::uniform;
  EpochMode epoch_mode = EpochMode::fixed_samples;
  int batches_per_epoch = 10;  // fixed_batches only
  double base_lr = 0.002;
  double max_lr = 0.02;
  long half_cycle = 200;
  LossOptions loss;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ToyModel model;
  CostLog cost;
  std::vector<double> val_mse;  // per epoch, cd units, highest resolution
  double final_val_mse = 0.0;
  double final_val_mae_counts = 0.0;
  double final_train_mse = 0.0;
  bool diverged = false;
  int last_good_epoch = -1;
};

struct Split {
  std::vector<std::size_t> train, val;
};

TrainResult train_toy(const FeatureBank& bank, const Split& split, const sched::Schedule& schedule,
                      const TrainOptions& opts);
/// MSE (cd units) of the model on `idx` with features of the given resolution.
double evaluate_mse(const FeatureBank& bank, const ToyModel& model, std::span<const std::size_t> idx,
                    int resolution);

// ---------------------------------------------------------------------------
// Schedule comparison

struct NamedSchedule {
  std::string name;
  sched::Schedule schedule;
};

struct ComparisonRow {
  std::string schedule;
  std::uint64_t seed;
  double val_mse;
  double val_mae_counts;
  double cost;
  bool diverged;
};

struct ComparisonSummary {
  std::string schedule;
  double mse_mean, mse_std;
  double mae_mean, mae_std;
  double cost_mean, cost_std;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  std::vector<ComparisonSummary> summary;
  std::vector<TrainResult> results;  // parallel to rows

  const ComparisonSummary& of(std::string_view schedule) const;
};

ComparisonReport compare_schedules(const FeatureBank& bank, const Split& split,
                                   std::span<const NamedSchedule> schedules,
                                   std::span<const std::uint64_t> seeds, TrainOptions opts);
void write_comparison_csv(const ComparisonReport& report, std::ostream& out);

/// Schedule by name: a variant name ("pmrt", "hard_switch", ...) or
/// "single_R128" / "single_R256" / "single_R512".
sched::Schedule schedule_by_name(std::string_view name, const sched::ScheduleConfig& cfg);

// ---------------------------------------------------------------------------
// End-to-end run (CLI `harness run`)

struct RunConfig {
  int n_samples = 200;
  std::uint64_t dataset_seed = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::string> schedules{"pmrt", "single_R512", "constant_equal", "hard_switch"};
  sched::ScheduleConfig schedule = sched::ScheduleConfig::defaults(3, 200);
  TrainOptions train;
  double train_fraction = 0.85;
  int split_bins = 10;
  int pca_k = 2;
  FieldConfig field;

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Writes comparison.csv, cost_log.csv, validation.csv, schedule.csv and run.json into `dir`.
ComparisonReport run_harness(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace pmrt::harness
