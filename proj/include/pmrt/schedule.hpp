#pragma once

// Progressive multi-resolution sampling schedule.
//
// A schedule is a fully materialized table with one probability vector over
// R resolution levels per epoch. It has three phases:
//   warm-up    uniform -> first pre-training row, linear in the epoch index;
//   pre-train  discretized Gaussian over resolution indices whose mean moves up
//              and whose width shrinks, clipped at a floor and renormalized; the
//              last T rows blend linearly into the fine-tuning row;
//   fine-tune  one-hot on the highest resolution.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pmrt/common.hpp"

namespace pmrt::sched {

struct ScheduleConfig {
  int resolutions = 3;      // R
  int pretrain_epochs = 200;  // E
  int warmup_epochs = 10;
  int finetune_epochs = 50;
  int blend_epochs = 5;     // T, counted inside the pre-training epochs
  double gamma = 0.45;
  double mu_start = -1.5;   // default -R/2
  double mu_end = 2.0;      // default R-1
  double sigma_start = 1.5; // default R/2
  double sigma_end = 0.5;
  double epsilon = 0.1;     // probability floor
  int batch_multiplier = 4;
  int base_batch = 16;

  /// Defaults with the R-dependent Gaussian endpoints filled in.
  static ScheduleConfig defaults(int resolutions, int pretrain_epochs);

  /// Throws ConfigError when an invariant does not hold.
  void validate() const;

  int total_epochs() const { return warmup_epochs + pretrain_epochs + finetune_epochs; }
};

/// Unspecified keys take the R-dependent defaults.
ScheduleConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ScheduleConfig& cfg);

enum class Phase { warmup, pretrain, finetune };
std::string_view phase_name(Phase p);

struct ScheduleRow {
  Phase phase;
  int epoch;        // global epoch index, 0-based
  int phase_epoch;  // index within the phase
  std::vector<double> probs;
};

struct Schedule {
  ScheduleConfig config;
  std::vector<ScheduleRow> rows;

  int resolutions() const { return config.resolutions; }
  std::size_t size() const { return rows.size(); }
  const ScheduleRow& at(int epoch) const;
};

struct EpochGaussian {
  double mu;
  double sigma;
  double epoch_norm;
};

/// Standard normal CDF via erf.
double normal_cdf(double x);

EpochGaussian pretrain_gaussian(int epoch, const ScheduleConfig& cfg);

/// Bin masses of N(mu, sigma) over [r - 1/2, r + 1/2), with the lowest bin
/// open below. Upper-tail mass above R - 1/2 is dropped.
std::vector<double> raw_probabilities(const EpochGaussian& g, int resolutions);

/// Single-pass clip at eps then renormalize.
std::vector<double> floor_renormalize(std::span<const double> raw, double eps);

Schedule build_schedule(const ScheduleConfig& cfg);

enum class Variant { pmrt, no_floor, no_warmup, no_finetune, hard_switch, constant_equal };
Variant variant_from_string(std::string_view tag);
std::string_view variant_name(Variant v);

Schedule build_variant(const ScheduleConfig& cfg, Variant variant);

/// Every row one-hot on `resolution`, same epoch layout as cfg. Baseline for
/// single-resolution training.
Schedule build_single_resolution(const ScheduleConfig& cfg, int resolution);

// Owns one generator; transferable between threads, never shared.
class SamplingStream {
 public:
  explicit SamplingStream(std::uint64_t seed) : rng_(seed) {}
  std::uint64_t seed() const noexcept { return rng_.seed(); }
  std::uint64_t draws() const noexcept { return draws_; }
  double next_uniform() {
    ++draws_;
    return rng_.uniform();
  }

 private:
  Rng rng_;
  std::uint64_t draws_ = 0;
};

/// Inverse-CDF categorical draw; consumes exactly one uniform variate.
int sample_resolution(std::span<const double> probs, SamplingStream& stream);

struct BatchDraw {
  int resolution;
  int batch_size;
};

/// Batch size for a draw at `resolution` during `phase`.
int batch_size_for(const ScheduleConfig& cfg, Phase phase, int resolution);

/// Fixed number of batches per epoch.
std::vector<BatchDraw> batch_plan(int epoch, const Schedule& sched, int batches_per_epoch,
                                  SamplingStream& stream);

/// Draws batches until at least `samples_per_epoch` samples are covered.
std::vector<BatchDraw> batch_plan_by_samples(int epoch, const Schedule& sched,
                                             int samples_per_epoch, SamplingStream& stream);

/// Mean probability vector over the rows whose phase is in `phases`.
std::vector<double> expected_ratios(const Schedule& sched, std::span<const Phase> phases);

enum class ExportFormat { csv, json };
void export_schedule(const Schedule& sched, ExportFormat format, std::ostream& out,
                     std::uint64_t seed);

}  // namespace pmrt::sched
