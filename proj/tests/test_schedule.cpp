#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "pmrt/schedule.hpp"
#include "oracles.hpp"

using namespace pmrt;
using namespace pmrt::sched;

namespace {


double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

const ScheduleConfig kDefault = ScheduleConfig::defaults(3, 200);

}  // namespace

TEST_CASE("pretrain_gaussian endpoints and linear case") {
  auto g0 = pretrain_gaussian(0, kDefault);
  CHECK(g0.epoch_norm == 0.0);
  CHECK(g0.mu == doctest::Approx(-1.5).epsilon(1e-15));
  CHECK(g0.sigma == doctest::Approx(1.5).epsilon(1e-15));

  auto g1 = pretrain_gaussian(199, kDefault);
  CHECK(g1.epoch_norm == 1.0);
  CHECK(g1.mu == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(g1.sigma == doctest::Approx(0.5).epsilon(1e-15));

  ScheduleConfig lin = ScheduleConfig::defaults(3, 201);
  lin.gamma = 1.0;
  auto gm = pretrain_gaussian(100, lin);
  CHECK(gm.mu == doctest::Approx(0.5 * (lin.mu_start + lin.mu_end)).epsilon(1e-14));

  ScheduleConfig bad = kDefault;
  bad.pretrain_epochs = 1;
  CHECK_THROWS_AS(pretrain_gaussian(0, bad), ConfigError);
  CHECK_THROWS_AS(pretrain_gaussian(200, kDefault), ConfigError);
}

TEST_CASE("raw_probabilities against quadrature oracle") {
  struct Case {
    double mu, sigma;
    std::vector<double> frozen;
  };
  const Case cases[] = {
      {2.0, 0.5, {0.001350, 0.157305, 0.682689}},
      {-1.5, 1.5, {0.908789, 0.068461, 0.018919}},
  };
  for (const auto& c : cases) {
    const auto got = raw_probabilities({c.mu, c.sigma, 0.0}, 3);
    const auto ref = oracle::schedule_raw(c.mu, c.sigma, 3);
    REQUIRE(got.size() == 3);
    for (int r = 0; r < 3; ++r) {
      CHECK(got[r] == doctest::Approx(ref[r]).epsilon(1e-9));
      CHECK(std::abs(got[r] - c.frozen[r]) < 1e-6);
      CHECK(got[r] >= 0.0);
    }
    CHECK(sum(got) <= 1.0);
    CHECK(sum(got) == doctest::Approx(normal_cdf((2.5 - c.mu) / c.sigma)).epsilon(1e-14));
  }

  // Far below the grid all mass sits in the open-below lowest bin; far above
  // it every edge saturates at 0 and the bins vanish.
  CHECK(raw_probabilities({-1e6, 1.0, 0.0}, 3) == std::vector<double>{1.0, 0.0, 0.0});
  for (double p : raw_probabilities({1e6, 1.0, 0.0}, 3)) CHECK(p == 0.0);

  CHECK_THROWS_AS(raw_probabilities({0.0, 0.0, 0.0}, 3), ConfigError);
  CHECK_THROWS_AS(raw_probabilities({0.0, 1.0, 0.0}, 1), ConfigError);
}

TEST_CASE("raw_probabilities translation consistency") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const double mu = rng.uniform(-3.0, 4.0);
    const double sigma = rng.uniform(0.2, 3.0);
    const auto a = raw_probabilities({mu, sigma, 0.0}, 6);
    const auto b = raw_probabilities({mu + 1.0, sigma, 0.0}, 7);
    // Bins 1..5 of `a` correspond to bins 2..6 of `b`.
    for (int r = 1; r < 6; ++r) CHECK(b[r + 1] == doctest::Approx(a[r]).epsilon(1e-9));
  }
}

TEST_CASE("floor_renormalize examples") {
  const auto a = floor_renormalize(std::vector<double>{0.001350, 0.157305, 0.682689}, 0.1);
  const std::vector<double> ea{0.106383, 0.167347, 0.726270};
  for (int r = 0; r < 3; ++r) CHECK(std::abs(a[r] - ea[r]) < 1e-5);

  const auto b = floor_renormalize(std::vector<double>{0.908789, 0.068461, 0.018919}, 0.1);
  const std::vector<double> eb{0.819625, 0.090188, 0.090188};
  for (int r = 0; r < 3; ++r) CHECK(std::abs(b[r] - eb[r]) < 1e-5);

  const std::vector<double> ok{0.2, 0.3, 0.5};
  const auto c = floor_renormalize(ok, 0.1);
  for (int r = 0; r < 3; ++r) CHECK(c[r] == ok[r]);

  CHECK_THROWS_AS(floor_renormalize(std::vector<double>{0.0, 0.0}, 0.0), DegenerateError);
  CHECK_THROWS_AS(floor_renormalize(std::vector<double>{-0.1, 0.5}, 0.1), DataError);
}

TEST_CASE("build_schedule phase layout") {
  const auto s = build_schedule(kDefault);
  REQUIRE(s.size() == 260);
  CHECK(s.rows[0].phase == Phase::warmup);
  for (double p : s.rows[0].probs) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const auto& last_warm = s.rows[9];
  const auto& first_pre = s.rows[10];
  CHECK(last_warm.phase == Phase::warmup);
  CHECK(first_pre.phase == Phase::pretrain);
  CHECK(first_pre.phase_epoch == 0);
  for (int r = 0; r < 3; ++r) CHECK(last_warm.probs[r] == doctest::Approx(first_pre.probs[r]).epsilon(1e-15));

  // Last blended pre-training row is the fine-tuning row.
  const auto& end_pre = s.rows[10 + 199];
  CHECK(end_pre.probs == std::vector<double>{0.0, 0.0, 1.0});
  // Row E-T is untouched by the blend.
  const auto base = floor_renormalize(raw_probabilities(pretrain_gaussian(195, kDefault), 3), 0.1);
  CHECK(s.rows[10 + 195].probs == base);

  for (int e = 210; e < 260; ++e) {
    CHECK(s.rows[e].phase == Phase::finetune);
    CHECK(s.rows[e].probs == std::vector<double>{0.0, 0.0, 1.0});
  }
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s.rows[i].epoch == static_cast<int>(i));
}

TEST_CASE("final pre-training epoch before the blend equals the CDF oracle") {
  ScheduleConfig c = kDefault;
  c.blend_epochs = 0;
  const auto s = build_schedule(c);
  const auto& row = s.rows[10 + 199];
  const auto ref = oracle::schedule_floor(oracle::schedule_raw(2.0, 0.5, 3), 0.1);
  const std::vector<double> frozen{0.10638, 0.16735, 0.72627};
  for (int r = 0; r < 3; ++r) {
    CHECK(row.probs[r] == doctest::Approx(ref[r]).epsilon(1e-9));
    CHECK(std::abs(row.probs[r] - frozen[r]) < 1e-4);
  }
}

TEST_CASE("expected ratios reproduce the reported mix") {
  const auto s = build_schedule(kDefault);
  const Phase pre[] = {Phase::pretrain};
  const auto ratios = expected_ratios(s, pre);
  CHECK(std::abs(ratios[0] - 0.33) < 0.01);
  CHECK(std::abs(ratios[1] - 0.35) < 0.01);
  CHECK(std::abs(ratios[2] - 0.32) < 0.01);

  const Phase fine[] = {Phase::finetune};
  CHECK(expected_ratios(s, fine) == std::vector<double>{0.0, 0.0, 1.0});

  const auto eq = build_variant(kDefault, Variant::constant_equal);
  for (double p : expected_ratios(eq, pre)) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  ScheduleConfig nofine = kDefault;
  nofine.finetune_epochs = 0;
  CHECK_THROWS_AS(expected_ratios(build_schedule(nofine), fine), DataError);
}

TEST_CASE("schedule invariants over random configurations") {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const int r = 2 + static_cast<int>(rng.index(5));
    const int e = 2 + static_cast<int>(rng.index(120));
    ScheduleConfig c = ScheduleConfig::defaults(r, e);
    c.warmup_epochs = static_cast<int>(rng.index(12));
    c.finetune_epochs = static_cast<int>(rng.index(10));
    c.blend_epochs = rng.uniform() < 0.2 ? 0 : 2 + static_cast<int>(rng.index(std::min(e, 8) - 1));
    c.gamma = rng.uniform(0.1, 3.0);
    c.epsilon = rng.uniform(0.0, 0.99 / r);
    c.sigma_end = rng.uniform(0.05, c.sigma_start);
    c.mu_start = rng.uniform(-2.0 * r, r - 1.0);
    c.mu_end = rng.uniform(c.mu_start, 2.0 * r);
    const auto s = build_schedule(c);
    REQUIRE(s.size() == static_cast<std::size_t>(c.total_epochs()));
    const double floor = c.epsilon / (1.0 + r * c.epsilon);
    for (const auto& row : s.rows) {
      double total = 0.0;
      for (double p : row.probs) {
        CHECK(p >= 0.0);
        total += p;
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
      const bool in_blend = row.phase == Phase::pretrain && row.phase_epoch >= e - c.blend_epochs;
      if (row.phase == Phase::pretrain && !in_blend) {
        CHECK(*std::min_element(row.probs.begin(), row.probs.end()) >= floor * (1.0 - 1e-12));
      }
      if (row.phase == Phase::finetune) CHECK(row.probs.back() == 1.0);
    }
  }
}

TEST_CASE("default schedule shifts toward high resolution monotonically") {
  const auto s = build_schedule(kDefault);
  double prev = -1.0;
  for (const auto& row : s.rows) {
    if (row.phase != Phase::pretrain || row.phase_epoch >= 195) continue;
    double mean_index = 0.0;
    for (int r = 0; r < 3; ++r) mean_index += r * row.probs[r];
    CHECK(mean_index >= prev - 1e-15);
    prev = mean_index;
  }
}

TEST_CASE("configuration validation") {
  ScheduleConfig c = kDefault;
  c.blend_epochs = 1;
  CHECK_THROWS_AS(build_schedule(c), ConfigError);
  c = kDefault;
  c.epsilon = 1.0 / 3.0;
  CHECK_THROWS_AS(build_schedule(c), ConfigError);
  c = kDefault;
  c.sigma_end = 2.0;
  CHECK_THROWS_AS(build_schedule(c), ConfigError);
  c = kDefault;
  c.blend_epochs = 201;
  CHECK_THROWS_AS(build_schedule(c), ConfigError);
  c = kDefault;
  c.blend_epochs = 0;
  CHECK_NOTHROW(build_schedule(c));
}

TEST_CASE("ablation variants") {
  const Phase pre[] = {Phase::pretrain};
  SUBCASE("constant_equal") {
    const auto s = build_variant(kDefault, Variant::constant_equal);
    for (const auto& row : s.rows)
      if (row.phase == Phase::pretrain)
        for (double p : row.probs) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("hard_switch") {
    auto c = ScheduleConfig::defaults(3, 300);
    const auto s = build_variant(c, Variant::hard_switch);
    CHECK(s.rows.front().phase == Phase::pretrain);
    for (const auto& row : s.rows) {
      if (row.phase != Phase::pretrain) continue;
      const int expect = row.phase_epoch / 100;
      CHECK(row.probs[expect] == 1.0);
    }
  }
  SUBCASE("no_floor") {
    auto c = kDefault;
    c.blend_epochs = 0;
    const auto s = build_variant(c, Variant::no_floor);
    const auto raw = raw_probabilities(pretrain_gaussian(199, c), 3);
    const double total = sum(raw);
    const auto& row = s.rows[10 + 199].probs;
    for (int r = 0; r < 3; ++r) CHECK(row[r] == doctest::Approx(raw[r] / total).epsilon(1e-14));
  }
  SUBCASE("no_warmup / no_finetune") {
    const auto a = build_variant(kDefault, Variant::no_warmup);
    CHECK(a.rows.front().phase == Phase::pretrain);
    CHECK(a.size() == 250);
    const auto b = build_variant(kDefault, Variant::no_finetune);
    CHECK(b.rows.back().phase == Phase::pretrain);
    CHECK(b.size() == 210);
    CHECK(expected_ratios(b, pre) == expected_ratios(build_schedule(kDefault), pre));
  }
  CHECK_THROWS_AS(variant_from_string("cosine"), ConfigError);
  CHECK(variant_from_string("hard_switch") == Variant::hard_switch);
}

TEST_CASE("sample_resolution") {
  SamplingStream one_hot(1);
  const std::vector<double> top{0.0, 0.0, 1.0};
  for (int i = 0; i < 1000; ++i) CHECK(sample_resolution(top, one_hot) == 2);
  CHECK(one_hot.draws() == 1000);

  auto frequencies = [](const std::vector<double>& p, int n, std::uint64_t seed) {
    SamplingStream s(seed);
    std::vector<double> f(p.size(), 0.0);
    for (int i = 0; i < n; ++i) f[sample_resolution(p, s)] += 1.0 / n;
    return f;
  };
  for (double f : frequencies({1.0 / 3, 1.0 / 3, 1.0 / 3}, 30000, 11)) CHECK(std::abs(f - 1.0 / 3) < 0.01);
  const std::vector<double> skewed{0.82, 0.09, 0.09};
  const auto fs = frequencies(skewed, 100000, 12);
  for (int r = 0; r < 3; ++r) CHECK(std::abs(fs[r] - skewed[r]) < 0.005);

  SamplingStream a(99), b(99);
  for (int i = 0; i < 500; ++i) CHECK(sample_resolution(skewed, a) == sample_resolution(skewed, b));

  SamplingStream s(3);
  CHECK_THROWS_AS(sample_resolution(std::vector<double>{1.2, -0.2}, s), DataError);
  CHECK_THROWS_AS(sample_resolution(std::vector<double>{0.5, 0.2}, s), DataError);
}

TEST_CASE("batch_plan batch sizes") {
  const auto s = build_schedule(kDefault);
  SamplingStream stream(5);
  for (const auto& d : batch_plan(250, s, 40, stream)) {
    CHECK(d.resolution == 2);
    CHECK(d.batch_size == 16);
  }
  int low = 0;
  for (const auto& d : batch_plan(10, s, 200, stream)) {
    if (d.resolution < 2) {
      CHECK(d.batch_size == 64);
      ++low;
    } else {
      CHECK(d.batch_size == 16);
    }
  }
  CHECK(low > 0);

  auto c = kDefault;
  c.batch_multiplier = 1;
  const auto s1 = build_schedule(c);
  for (int e : {0, 50, 120, 259})
    for (const auto& d : batch_plan(e, s1, 25, stream)) CHECK(d.batch_size == 16);

  const auto by_samples = batch_plan_by_samples(250, s, 170, stream);
  CHECK(by_samples.size() == 11);  // ceil(170 / 16)
  CHECK_THROWS_AS(batch_plan(260, s, 1, stream), ConfigError);
}

TEST_CASE("export formats") {
  auto c = ScheduleConfig::defaults(3, 4);
  c.warmup_epochs = 1;
  c.finetune_epochs = 1;
  c.blend_epochs = 2;
  const auto s = build_schedule(c);
  std::ostringstream csv;
  export_schedule(s, ExportFormat::csv, csv, 42);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "phase,epoch,p_0,p_1,p_2");
  std::getline(lines, line);
  CHECK(line == "warmup,0,0.333333333,0.333333333,0.333333333");
  int count = 1;
  while (std::getline(lines, line)) ++count;
  CHECK(count == 6);

  std::ostringstream js;
  export_schedule(s, ExportFormat::json, js, 42);
  const auto doc = nlohmann::json::parse(js.str());
  CHECK(doc["seed"] == 42);
  CHECK(doc["rows"].size() == 6);
  CHECK(config_from_json(doc["config"]).pretrain_epochs == 4);
}

TEST_CASE("config JSON defaults depend on R") {
  const auto c = config_from_json(nlohmann::json{{"R", 4}, {"E", 50}});
  CHECK(c.mu_start == -2.0);
  CHECK(c.mu_end == 3.0);
  CHECK(c.sigma_start == 2.0);
  CHECK(c.sigma_end == 0.5);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"R", 3}, {"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"R", "three"}}), ConfigError);
}
