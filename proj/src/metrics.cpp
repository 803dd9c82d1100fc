#include "pmrt/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace pmrt::metrics {

namespace {

constexpr const char* kModule = "metrics";

double mean_of(std::span<const double> v) { return pairwise_mean(v); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

struct CdRow {
  std::string dataset, sample;
  double cd;
};

std::vector<CdRow> read_cd_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(kModule, "cannot open " + path.string());
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line)) throw ParseError(kModule, path.string() + ": empty file", 0);
  if (split_csv_line(line) != std::vector<std::string>{"dataset_id", "sample_id", "cd"})
    throw ParseError(kModule, path.string() + ": header must be dataset_id,sample_id,cd", 0);
  offset += line.size() + 1;
  std::vector<CdRow> rows;
  while (std::getline(in, line)) {
    const std::size_t here = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3 || f[0].empty() || f[1].empty())
      throw ParseError(kModule, path.string() + ": expected 3 fields", here);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), v);
    if (ec != std::errc() || ptr != f[2].data() + f[2].size() || !std::isfinite(v))
      throw ParseError(kModule, path.string() + ": bad cd value '" + f[2] + "'", here);
    rows.push_back({f[0], f[1], v});
  }
  return rows;
}

std::optional<VoxelGrid> read_field(const std::filesystem::path& dir, const std::string& sample) {
  const auto prefix = dir / "fields" / sample;
  if (!std::filesystem::exists(prefix.string() + ".json")) return std::nullopt;
  return read_grid(prefix);
}

std::optional<double> mean_present(const std::vector<std::optional<double>>& values) {
  std::vector<double> have;
  for (const auto& v : values)
    if (v) have.push_back(*v);
  if (have.empty()) return std::nullopt;
  return mean_of(have);
}

nlohmann::json metric_fields(double mae, double maxae, const std::optional<double>& r2,
                             const std::optional<double>& rel) {
  nlohmann::json j, full;
  j["mae_counts"] = round_significant(mae);
  full["mae_counts"] = mae;
  j["maxae_counts"] = round_significant(maxae);
  full["maxae_counts"] = maxae;
  j["r2"] = r2 ? nlohmann::json(round_significant(*r2)) : nlohmann::json(nullptr);
  full["r2"] = r2 ? nlohmann::json(*r2) : nlohmann::json(nullptr);
  j["rel_l2_percent"] = rel ? nlohmann::json(round_significant(*rel)) : nlohmann::json(nullptr);
  full["rel_l2_percent"] = rel ? nlohmann::json(*rel) : nlohmann::json(nullptr);
  j["full_precision"] = full;
  return j;
}

}  // namespace

void SampleRecord::validate() const {
  if (!std::isfinite(cd_true) || !std::isfinite(cd_pred))
    throw DataError(kModule, "sample '" + sample_id + "': cd values must be finite");
  if (field_true.has_value() != field_pred.has_value())
    throw DataError(kModule, "sample '" + sample_id + "': only one of the true and predicted fields is present");
  if (has_fields()) {
    field_true->require_same_shape(*field_pred, kModule);
    if (field_true->channels != field_pred->channels)
      throw DataError(kModule, "sample '" + sample_id + "': field channel counts differ");
  }
}

std::vector<double> relative_l2_ratios(std::span<const SampleRecord> samples) {
  if (samples.empty()) throw DataError(kModule, "relative_l2 needs at least one sample");
  std::vector<double> ratios(samples.size());
  for (const auto& s : samples) {
    s.validate();
    if (!s.has_fields()) throw DataError(kModule, "sample '" + s.sample_id + "' has no fields");
  }
  parallel_for(samples.size(), [&](std::size_t b, std::size_t e) {
    std::vector<double> den, num;
    for (std::size_t i = b; i < e; ++i) {
      const auto& u = samples[i].field_true->data;
      const auto& p = samples[i].field_pred->data;
      den.resize(u.size());
      num.resize(u.size());
      for (std::size_t k = 0; k < u.size(); ++k) {
        den[k] = u[k] * u[k];
        num[k] = (u[k] - p[k]) * (u[k] - p[k]);
      }
      const double d = std::sqrt(pairwise_sum(den));
      ratios[i] = d > 0.0 ? std::sqrt(pairwise_sum(num)) / d : std::nan("");
    }
  });
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (std::isnan(ratios[i]))
      throw DegenerateError(kModule, "sample '" + samples[i].sample_id + "' has a zero true field");
  return ratios;
}

double relative_l2(std::span<const SampleRecord> samples) { return 100.0 * mean_of(relative_l2_ratios(samples)); }

double r_squared(std::span<const double> truth, std::span<const double> pred) {
  if (truth.size() != pred.size()) throw DataError(kModule, "r2 inputs differ in length");
  if (truth.size() < 2) throw DataError(kModule, "r2 needs at least 2 samples");
  const double m = mean_of(truth);
  std::vector<double> res(truth.size()), tot(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    res[i] = (truth[i] - pred[i]) * (truth[i] - pred[i]);
    tot[i] = (truth[i] - m) * (truth[i] - m);
  }
  const double t = pairwise_sum(tot);
  if (!(t > 0.0)) throw DegenerateError(kModule, "r2 is undefined: true values have zero variance");
  return 1.0 - pairwise_sum(res) / t;
}

DragMetrics drag_metrics(std::span<const SampleRecord> samples) {
  if (samples.empty()) throw DataError(kModule, "drag metrics need at least one sample");
  std::vector<double> ae, t, p;
  for (const auto& s : samples) {
    s.validate();
    ae.push_back(std::abs(s.cd_pred - s.cd_true) * 1000.0);
    t.push_back(s.cd_true);
    p.push_back(s.cd_pred);
  }
  DragMetrics m;
  m.mae_counts = mean_of(ae);
  m.maxae_counts = *std::max_element(ae.begin(), ae.end());
  m.r2 = r_squared(t, p);
  return m;
}

DatasetMetrics dataset_metrics(const std::string& dataset, std::span<const SampleRecord> samples) {
  if (samples.empty()) throw DataError(kModule, "dataset '" + dataset + "' has no samples");
  DatasetMetrics d;
  d.dataset = dataset;
  d.n = samples.size();
  std::vector<double> ae, t, p;
  std::size_t with_fields = 0;
  for (const auto& s : samples) {
    s.validate();
    ae.push_back(std::abs(s.cd_pred - s.cd_true) * 1000.0);
    t.push_back(s.cd_true);
    p.push_back(s.cd_pred);
    with_fields += s.has_fields() ? 1 : 0;
  }
  d.mae_counts = mean_of(ae);
  d.maxae_counts = *std::max_element(ae.begin(), ae.end());
  if (samples.size() >= 2) {
    try {
      d.r2 = r_squared(t, p);
    } catch (const DegenerateError&) {
      log_warn(kModule, "dataset '" + dataset + "': cd_true is constant; r2 omitted");
    }
  }
  if (with_fields == samples.size()) {
    d.rel_l2_percent = relative_l2(samples);
  } else if (with_fields > 0) {
    throw DataError(kModule, "dataset '" + dataset + "': fields present on only " + std::to_string(with_fields) +
                                 " of " + std::to_string(samples.size()) + " samples");
  }
  return d;
}

MetricReport group_aggregate(std::span<const DatasetMetrics> datasets, const Grouping& grouping) {
  if (grouping.empty()) throw ConfigError(kModule, "grouping has no groups");
  std::map<std::string, const DatasetMetrics*> by_name;
  for (const auto& d : datasets)
    if (!by_name.emplace(d.dataset, &d).second) throw DataError(kModule, "duplicate dataset '" + d.dataset + "'");
  std::map<std::string, std::string> owner;
  for (const auto& [g, members] : grouping) {
    if (members.empty()) throw DataError(kModule, "group '" + g + "' is empty");
    for (const auto& m : members) {
      if (!owner.emplace(m, g).second)
        throw DataError(kModule, "dataset '" + m + "' is assigned to more than one group");
      if (!by_name.count(m)) throw DataError(kModule, "group '" + g + "' lists unknown dataset '" + m + "'");
    }
  }
  for (const auto& [name, _] : by_name)
    if (!owner.count(name)) throw DataError(kModule, "dataset '" + name + "' is not assigned to a group");

  MetricReport rep;
  for (const auto& [_, d] : by_name) rep.datasets.push_back(*d);
  std::vector<double> mae, maxae;
  std::vector<std::optional<double>> r2, rel;
  for (const auto& [g, members_in] : grouping) {
    auto members = members_in;
    std::sort(members.begin(), members.end());
    GroupMetrics gm;
    gm.group = g;
    gm.datasets = members;
    std::vector<double> m1, m2;
    std::vector<std::optional<double>> m3, m4;
    for (const auto& name : members) {
      const auto& d = *by_name.at(name);
      m1.push_back(d.mae_counts);
      m2.push_back(d.maxae_counts);
      m3.push_back(d.r2);
      m4.push_back(d.rel_l2_percent);
    }
    gm.mae_counts = mean_of(m1);
    gm.maxae_counts = *std::max_element(m2.begin(), m2.end());
    gm.r2 = mean_present(m3);
    gm.rel_l2_percent = mean_present(m4);
    mae.push_back(gm.mae_counts);
    maxae.push_back(gm.maxae_counts);
    r2.push_back(gm.r2);
    rel.push_back(gm.rel_l2_percent);
    rep.groups.push_back(std::move(gm));
  }
  rep.overall.group = "overall";
  for (const auto& [name, _] : by_name) rep.overall.datasets.push_back(name);
  rep.overall.mae_counts = mean_of(mae);
  rep.overall.maxae_counts = mean_of(maxae);
  rep.overall.r2 = mean_present(r2);
  rep.overall.rel_l2_percent = mean_present(rel);
  return rep;
}

MetricReport compute_report(std::span<const SampleRecord> samples, const Grouping& grouping) {
  std::map<std::string, std::vector<SampleRecord>> by_dataset;
  for (const auto& s : samples) by_dataset[s.dataset_id].push_back(s);
  std::vector<DatasetMetrics> ds;
  for (const auto& [name, recs] : by_dataset) ds.push_back(dataset_metrics(name, recs));
  return group_aggregate(ds, grouping);
}

double round_significant(double v, int digits) {
  if (!std::isfinite(v) || v == 0.0) return v;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return std::strtod(buf, nullptr);
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["datasets"] = nlohmann::json::array();
  for (const auto& d : datasets) {
    auto e = metric_fields(d.mae_counts, d.maxae_counts, d.r2, d.rel_l2_percent);
    e["dataset"] = d.dataset;
    e["n"] = d.n;
    j["datasets"].push_back(e);
  }
  j["groups"] = nlohmann::json::array();
  for (const auto& g : groups) {
    auto e = metric_fields(g.mae_counts, g.maxae_counts, g.r2, g.rel_l2_percent);
    e["group"] = g.group;
    e["datasets"] = g.datasets;
    j["groups"].push_back(e);
  }
  j["overall"] = metric_fields(overall.mae_counts, overall.maxae_counts, overall.r2, overall.rel_l2_percent);
  return j;
}

Grouping grouping_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("groups") || !j["groups"].is_object())
    throw ConfigError(kModule, "grouping JSON must be an object with a \"groups\" object");
  Grouping g;
  for (const auto& [name, members] : j["groups"].items()) {
    if (!members.is_array()) throw ConfigError(kModule, "group '" + name + "' must list dataset names");
    for (const auto& m : members) {
      if (!m.is_string()) throw ConfigError(kModule, "group '" + name + "' must list dataset names");
      g[name].push_back(m.get<std::string>());
    }
    g[name];
  }
  return g;
}

std::vector<SampleRecord> load_records(const std::filesystem::path& pred_dir, const std::filesystem::path& truth_dir) {
  const auto truth = read_cd_csv(truth_dir / "cd.csv");
  const auto pred = read_cd_csv(pred_dir / "cd.csv");
  std::map<std::string, CdRow> pred_by_id;
  for (const auto& r : pred)
    if (!pred_by_id.emplace(r.sample, r).second)
      throw DataError(kModule, "duplicate prediction for sample '" + r.sample + "'");
  std::set<std::string> seen;
  std::vector<SampleRecord> out;
  for (const auto& t : truth) {
    if (!seen.insert(t.sample).second) throw DataError(kModule, "duplicate truth for sample '" + t.sample + "'");
    const auto it = pred_by_id.find(t.sample);
    if (it == pred_by_id.end()) throw DataError(kModule, "no prediction for sample '" + t.sample + "'");
    if (it->second.dataset != t.dataset)
      throw DataError(kModule, "sample '" + t.sample + "' has different dataset ids in truth and prediction");
    SampleRecord r;
    r.dataset_id = t.dataset;
    r.sample_id = t.sample;
    r.cd_true = t.cd;
    r.cd_pred = it->second.cd;
    r.field_true = read_field(truth_dir, t.sample);
    r.field_pred = read_field(pred_dir, t.sample);
    r.validate();
    out.push_back(std::move(r));
  }
  if (pred_by_id.size() != truth.size()) throw DataError(kModule, "predictions list samples without truth");
  return out;
}

void write_records(std::span<const SampleRecord> samples, const std::filesystem::path& dir, bool predictions) {
  std::filesystem::create_directories(dir);
  std::ofstream o(dir / "cd.csv");
  o << "dataset_id,sample_id,cd\n";
  char buf[64];
  for (const auto& s : samples) {
    std::snprintf(buf, sizeof buf, "%.17g", predictions ? s.cd_pred : s.cd_true);
    o << s.dataset_id << ',' << s.sample_id << ',' << buf << '\n';
    const auto& f = predictions ? s.field_pred : s.field_true;
    if (f) {
      std::filesystem::create_directories(dir / "fields");
      write_grid(*f, dir / "fields" / s.sample_id);
    }
  }
  if (!o) throw DataError(kModule, "cannot write " + (dir / "cd.csv").string());
}

}  // namespace pmrt::metrics
