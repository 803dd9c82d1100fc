#include "pmrt/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

namespace pmrt::sched {

namespace {

constexpr const char* kModule = "schedule";

std::vector<double> uniform_row(int r) {
  return std::vector<double>(static_cast<std::size_t>(r), 1.0 / r);
}

std::vector<double> one_hot(int r, int index) {
  std::vector<double> v(static_cast<std::size_t>(r), 0.0);
  v[static_cast<std::size_t>(index)] = 1.0;
  return v;
}

std::vector<double> lerp(std::span<const double> a, std::span<const double> b, double t) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - t) * a[i] + t * b[i];
  return out;
}

void append_phase(Schedule& s, Phase phase, std::vector<std::vector<double>> rows) {
  int local = 0;
  for (auto& p : rows) {
    s.rows.push_back({phase, static_cast<int>(s.rows.size()), local++, std::move(p)});
  }
}

// Warm-up rows: linear from uniform (row 0) to `target` (last row).
std::vector<std::vector<double>> warmup_rows(int resolutions, int count,
                                             std::span<const double> target) {
  std::vector<std::vector<double>> rows;
  const auto uni = uniform_row(resolutions);
  for (int k = 0; k < count; ++k) {
    const double t = count > 1 ? static_cast<double>(k) / (count - 1) : 0.0;
    rows.push_back(lerp(uni, target, t));
  }
  return rows;
}

Schedule assemble(const ScheduleConfig& cfg, std::vector<std::vector<double>> pretrain) {
  Schedule s;
  s.config = cfg;
  s.rows.reserve(static_cast<std::size_t>(cfg.total_epochs()));
  append_phase(s, Phase::warmup, warmup_rows(cfg.resolutions, cfg.warmup_epochs, pretrain.front()));
  append_phase(s, Phase::pretrain, std::move(pretrain));
  append_phase(s, Phase::finetune,
               std::vector<std::vector<double>>(static_cast<std::size_t>(cfg.finetune_epochs),
                                                one_hot(cfg.resolutions, cfg.resolutions - 1)));
  return s;
}

}  // namespace

ScheduleConfig ScheduleConfig::defaults(int resolutions, int pretrain_epochs) {
  ScheduleConfig c;
  c.resolutions = resolutions;
  c.pretrain_epochs = pretrain_epochs;
  c.mu_start = -resolutions / 2.0;
  c.mu_end = resolutions - 1.0;
  c.sigma_start = resolutions / 2.0;
  return c;
}

void ScheduleConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(kModule, msg); };
  if (resolutions < 2) fail("resolution count R must be >= 2");
  if (pretrain_epochs < 2) fail("pre-training epoch count E must be >= 2 (epoch normalization divides by E-1)");
  if (warmup_epochs < 0) fail("warmup_epochs must be >= 0");
  if (finetune_epochs < 0) fail("finetune_epochs must be >= 0");
  if (blend_epochs < 0) fail("blend length T must be >= 0");
  if (blend_epochs == 1) fail("blend length T must be >= 2 when non-zero (interpolation divides by T-1)");
  if (blend_epochs > pretrain_epochs) fail("blend length T must not exceed E");
  if (!(std::isfinite(gamma) && gamma > 0.0)) fail("gamma must be finite and > 0");
  if (!(std::isfinite(mu_start) && std::isfinite(mu_end))) fail("mu_start/mu_end must be finite");
  if (mu_start > mu_end) fail("mu_start must be <= mu_end");
  if (!(sigma_start > 0.0 && sigma_end > 0.0)) fail("sigma_start and sigma_end must be > 0");
  if (sigma_end > sigma_start) fail("sigma_end must be <= sigma_start");
  if (!(epsilon >= 0.0 && epsilon * resolutions < 1.0)) fail("epsilon must lie in [0, 1/R)");
  if (batch_multiplier < 1) fail("batch_multiplier must be >= 1");
  if (base_batch < 1) fail("base_batch must be >= 1");
}

ScheduleConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError(kModule, "schedule config must be a JSON object");
  try {
    const int r = j.value("R", 3);
    const int e = j.value("E", 200);
    ScheduleConfig c = ScheduleConfig::defaults(r, e);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
    c.blend_epochs = j.value("T", c.blend_epochs);
    c.gamma = j.value("gamma", c.gamma);
    c.mu_start = j.value("mu_start", c.mu_start);
    c.mu_end = j.value("mu_end", c.mu_end);
    c.sigma_start = j.value("sigma_start", c.sigma_start);
    c.sigma_end = j.value("sigma_end", c.sigma_end);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.batch_multiplier = j.value("batch_multiplier", c.batch_multiplier);
    c.base_batch = j.value("base_batch", c.base_batch);
    static const char* known[] = {"R", "E", "warmup_epochs", "finetune_epochs", "T", "gamma",
                                  "mu_start", "mu_end", "sigma_start", "sigma_end", "epsilon",
                                  "batch_multiplier", "base_batch"};
    for (const auto& [key, _] : j.items()) {
      if (std::find(std::begin(known), std::end(known), key) == std::end(known))
        throw ConfigError(kModule, "unknown schedule config key '" + key + "'");
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(kModule, std::string("bad schedule config: ") + ex.what());
  }
}

nlohmann::json to_json(const ScheduleConfig& c) {
  return {{"R", c.resolutions},         {"E", c.pretrain_epochs},
          {"warmup_epochs", c.warmup_epochs}, {"finetune_epochs", c.finetune_epochs},
          {"T", c.blend_epochs},         {"gamma", c.gamma},
          {"mu_start", c.mu_start},      {"mu_end", c.mu_end},
          {"sigma_start", c.sigma_start}, {"sigma_end", c.sigma_end},
          {"epsilon", c.epsilon},        {"batch_multiplier", c.batch_multiplier},
          {"base_batch", c.base_batch}};
}

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::warmup: return "warmup";
    case Phase::pretrain: return "pretrain";
    case Phase::finetune: return "finetune";
  }
  return "?";
}

const ScheduleRow& Schedule::at(int epoch) const {
  if (epoch < 0 || static_cast<std::size_t>(epoch) >= rows.size())
    throw ConfigError(kModule, "epoch " + std::to_string(epoch) + " outside schedule of length " +
                                   std::to_string(rows.size()));
  return rows[static_cast<std::size_t>(epoch)];
}

double normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); }

EpochGaussian pretrain_gaussian(int epoch, const ScheduleConfig& cfg) {
  if (cfg.pretrain_epochs < 2)
    throw ConfigError(kModule, "pre-training epoch count E must be >= 2");
  if (epoch < 0 || epoch >= cfg.pretrain_epochs)
    throw ConfigError(kModule, "pre-training epoch " + std::to_string(epoch) + " out of range");
  const double en = static_cast<double>(epoch) / (cfg.pretrain_epochs - 1);
  const double s = std::pow(en, cfg.gamma);
  return {cfg.mu_start + (cfg.mu_end - cfg.mu_start) * s,
          cfg.sigma_start - (cfg.sigma_start - cfg.sigma_end) * s, en};
}

std::vector<double> raw_probabilities(const EpochGaussian& g, int resolutions) {
  if (resolutions < 2) throw ConfigError(kModule, "resolution count must be >= 2");
  if (!(g.sigma > 0.0)) throw ConfigError(kModule, "sigma must be > 0");
  std::vector<double> out(static_cast<std::size_t>(resolutions));
  double lower = 0.0;
  for (int r = 0; r < resolutions; ++r) {
    const double upper = normal_cdf((r + 0.5 - g.mu) / g.sigma);
    out[static_cast<std::size_t>(r)] = std::max(0.0, upper - lower);
    lower = upper;
  }
  return out;
}

std::vector<double> floor_renormalize(std::span<const double> raw, double eps) {
  if (raw.empty()) throw ConfigError(kModule, "empty probability vector");
  if (eps < 0.0) throw ConfigError(kModule, "probability floor must be >= 0");
  std::vector<double> out(raw.begin(), raw.end());
  double total = 0.0;
  for (double& p : out) {
    if (!(p >= 0.0)) throw DataError(kModule, "raw probabilities must be non-negative");
    p = std::max(p, eps);
    total += p;
  }
  if (!(total > 0.0))
    throw DegenerateError(kModule, "all raw probabilities are zero and the floor is zero");
  for (double& p : out) p /= total;
  return out;
}

Schedule build_schedule(const ScheduleConfig& cfg) {
  cfg.validate();
  const int r = cfg.resolutions;
  const int e = cfg.pretrain_epochs;
  std::vector<std::vector<double>> pre;
  pre.reserve(static_cast<std::size_t>(e));
  for (int i = 0; i < e; ++i)
    pre.push_back(floor_renormalize(raw_probabilities(pretrain_gaussian(i, cfg), r), cfg.epsilon));

  const int t_len = cfg.blend_epochs;
  if (t_len > 0) {
    const auto fine = one_hot(r, r - 1);
    const auto base = pre[static_cast<std::size_t>(e - t_len)];
    for (int t = 0; t < t_len; ++t)
      pre[static_cast<std::size_t>(e - t_len + t)] =
          lerp(base, fine, static_cast<double>(t) / (t_len - 1));
  }
  return assemble(cfg, std::move(pre));
}

Variant variant_from_string(std::string_view tag) {
  if (tag == "pmrt") return Variant::pmrt;
  if (tag == "no_floor") return Variant::no_floor;
  if (tag == "no_warmup") return Variant::no_warmup;
  if (tag == "no_finetune") return Variant::no_finetune;
  if (tag == "hard_switch") return Variant::hard_switch;
  if (tag == "constant_equal") return Variant::constant_equal;
  throw ConfigError(kModule, "unknown schedule variant '" + std::string(tag) + "'");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::pmrt: return "pmrt";
    case Variant::no_floor: return "no_floor";
    case Variant::no_warmup: return "no_warmup";
    case Variant::no_finetune: return "no_finetune";
    case Variant::hard_switch: return "hard_switch";
    case Variant::constant_equal: return "constant_equal";
  }
  return "?";
}

Schedule build_variant(const ScheduleConfig& cfg, Variant variant) {
  ScheduleConfig c = cfg;
  switch (variant) {
    case Variant::pmrt:
      return build_schedule(c);
    case Variant::no_floor:
      c.epsilon = 0.0;
      return build_schedule(c);
    case Variant::no_warmup:
      c.warmup_epochs = 0;
      return build_schedule(c);
    case Variant::no_finetune:
      c.finetune_epochs = 0;
      return build_schedule(c);
    case Variant::hard_switch: {
      // Consecutive one-hot blocks, lowest resolution first; nothing to warm up from.
      c.warmup_epochs = 0;
      c.validate();
      const int r = c.resolutions;
      const int e = c.pretrain_epochs;
      std::vector<std::vector<double>> pre;
      for (int i = 0; i < e; ++i) {
        const int block = static_cast<int>((static_cast<long long>(i) * r) / e);
        pre.push_back(one_hot(r, block));
      }
      return assemble(c, std::move(pre));
    }
    case Variant::constant_equal: {
      c.validate();
      std::vector<std::vector<double>> pre(static_cast<std::size_t>(c.pretrain_epochs),
                                           uniform_row(c.resolutions));
      return assemble(c, std::move(pre));
    }
  }
  throw ConfigError(kModule, "unknown schedule variant");
}

Schedule build_single_resolution(const ScheduleConfig& cfg, int resolution) {
  cfg.validate();
  if (resolution < 0 || resolution >= cfg.resolutions)
    throw ConfigError(kModule, "resolution index out of range");
  Schedule s;
  s.config = cfg;
  const auto row = one_hot(cfg.resolutions, resolution);
  append_phase(s, Phase::warmup,
               std::vector<std::vector<double>>(static_cast<std::size_t>(cfg.warmup_epochs), row));
  append_phase(s, Phase::pretrain,
               std::vector<std::vector<double>>(static_cast<std::size_t>(cfg.pretrain_epochs), row));
  append_phase(s, Phase::finetune,
               std::vector<std::vector<double>>(static_cast<std::size_t>(cfg.finetune_epochs), row));
  return s;
}

int sample_resolution(std::span<const double> probs, SamplingStream& stream) {
  if (probs.empty()) throw DataError(kModule, "empty probability vector");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw DataError(kModule, "probability vector has a negative entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw DataError(kModule, "probability vector does not sum to 1");

  const double u = stream.next_uniform();
  double cum = 0.0;
  int last_positive = 0;
  for (std::size_t r = 0; r < probs.size(); ++r) {
    if (probs[r] > 0.0) last_positive = static_cast<int>(r);
    cum += probs[r];
    if (u < cum) return static_cast<int>(r);
  }
  // u landed in the rounding gap above the accumulated sum.
  return last_positive;
}

int batch_size_for(const ScheduleConfig& cfg, Phase phase, int resolution) {
  const bool boosted = resolution < cfg.resolutions - 1 && phase != Phase::finetune;
  return boosted ? cfg.base_batch * cfg.batch_multiplier : cfg.base_batch;
}

std::vector<BatchDraw> batch_plan(int epoch, const Schedule& sched, int batches_per_epoch,
                                  SamplingStream& stream) {
  const auto& row = sched.at(epoch);
  if (batches_per_epoch < 0) throw ConfigError(kModule, "batches_per_epoch must be >= 0");
  std::vector<BatchDraw> plan;
  plan.reserve(static_cast<std::size_t>(batches_per_epoch));
  for (int b = 0; b < batches_per_epoch; ++b) {
    const int r = sample_resolution(row.probs, stream);
    plan.push_back({r, batch_size_for(sched.config, row.phase, r)});
  }
  return plan;
}

std::vector<BatchDraw> batch_plan_by_samples(int epoch, const Schedule& sched,
                                             int samples_per_epoch, SamplingStream& stream) {
  const auto& row = sched.at(epoch);
  if (samples_per_epoch < 1) throw ConfigError(kModule, "samples_per_epoch must be >= 1");
  std::vector<BatchDraw> plan;
  long long covered = 0;
  while (covered < samples_per_epoch) {
    const int r = sample_resolution(row.probs, stream);
    const int bs = batch_size_for(sched.config, row.phase, r);
    plan.push_back({r, bs});
    covered += bs;
  }
  return plan;
}

std::vector<double> expected_ratios(const Schedule& sched, std::span<const Phase> phases) {
  std::vector<std::vector<double>> columns(static_cast<std::size_t>(sched.resolutions()));
  for (const auto& row : sched.rows) {
    if (std::find(phases.begin(), phases.end(), row.phase) == phases.end()) continue;
    for (std::size_t r = 0; r < row.probs.size(); ++r) columns[r].push_back(row.probs[r]);
  }
  if (columns.empty() || columns.front().empty())
    throw DataError(kModule, "no schedule rows match the phase filter");
  std::vector<double> out;
  for (const auto& col : columns) out.push_back(pairwise_mean(col));
  return out;
}

void export_schedule(const Schedule& sched, ExportFormat format, std::ostream& out,
                     std::uint64_t seed) {
  char buf[64];
  if (format == ExportFormat::csv) {
    out << "phase,epoch";
    for (int r = 0; r < sched.resolutions(); ++r) out << ",p_" << r;
    out << '\n';
    for (const auto& row : sched.rows) {
      out << phase_name(row.phase) << ',' << row.epoch;
      for (double p : row.probs) {
        std::snprintf(buf, sizeof buf, "%.9f", p);
        out << ',' << buf;
      }
      out << '\n';
    }
    return;
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : sched.rows) {
    nlohmann::json probs = nlohmann::json::array();
    for (double p : row.probs) probs.push_back(std::round(p * 1e9) / 1e9);
    rows.push_back({{"phase", phase_name(row.phase)}, {"epoch", row.epoch}, {"p", probs}});
  }
  nlohmann::json doc = {{"config", to_json(sched.config)}, {"seed", seed}, {"rows", rows}};
  out << doc.dump(2) << '\n';
}

}  // namespace pmrt::sched
