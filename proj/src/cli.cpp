#include "pmrt/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pmrt/geomdiag.hpp"
#include "pmrt/harness.hpp"
#include "pmrt/metrics.hpp"
#include "pmrt/schedule.hpp"
#include "pmrt/sdf.hpp"
#include "pmrt/weights.hpp"

namespace pmrt::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t parse_u64(const std::string& text, const char* what) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos, 0);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != text.size() || text.front() == '-')
    throw UsageError(std::string(what) + " must be a non-negative integer, got '" + text + "'");
  return v;
}

unsigned parse_threads(const std::string& text, const char* what) {
  if (text == "auto") return 0;
  const std::uint64_t v = parse_u64(text, what);
  if (v > 4096) throw UsageError(std::string(what) + " is out of range");
  return static_cast<unsigned>(v);
}

json read_json_file(const fs::path& path, const char* module) {
  std::ifstream in(path);
  if (!in) throw DataError(module, "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(module, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Context {
  GlobalOptions g;
  std::vector<std::string> argv;
  std::ostream* out;

  fs::path resolve(const fs::path& p) const {
    return g.output_dir.empty() || p.is_absolute() ? p : g.output_dir / p;
  }

  json provenance(const std::string& command) const {
    return {{"command", command}, {"seed", g.seed}, {"threads", g.threads}};
  }

  // Timestamps live only here, so primary outputs stay byte-identical across reruns.
  void write_meta(const fs::path& primary, const std::string& command, json extra = json::object()) const {
    json j = provenance(command);
    j["argv"] = argv;
    j["created_utc"] = utc_now();
    for (auto& [k, v] : extra.items()) j[k] = v;
    const fs::path meta = primary.string() + ".meta.json";
    std::ofstream o(meta);
    if (!o) throw DataError("cli", "cannot write '" + meta.string() + "'");
    o << j.dump(2) << '\n';
  }
};

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ---------------------------------------------------------------------------

struct ScheduleArgs {
  std::string config, format = "csv", out, variant = "pmrt";
};

void cmd_schedule_export(const Context& ctx, const ScheduleArgs& a) {
  const json j = a.config.empty() ? json::object() : read_json_file(a.config, "schedule");
  const auto cfg = sched::config_from_json(j);
  const auto s = harness::schedule_by_name(a.variant, cfg);
  const auto format = a.format == "json" ? sched::ExportFormat::json : sched::ExportFormat::csv;
  const std::uint64_t seed = derive_seed(ctx.g.seed, "schedule");
  if (a.out.empty() || a.out == "-") {
    sched::export_schedule(s, format, *ctx.out, seed);
    return;
  }
  const fs::path out = ctx.resolve(a.out);
  ensure_parent(out);
  {
    std::ofstream o(out);
    if (!o) throw DataError("schedule", "cannot write '" + out.string() + "'");
    sched::export_schedule(s, format, o, seed);
  }
  ctx.write_meta(out, "schedule export", {{"config", sched::to_json(cfg)}, {"variant", a.variant}});
}

struct SdfArgs {
  std::string mesh, roi, res = "R128", out;
  bool emit_usdf = false;
};

void cmd_sdf_voxelize(const Context& ctx, const SdfArgs& a) {
  MeshLoadReport report;
  const TriangleMesh mesh = load_mesh(a.mesh, &report);
  const Aabb bounds = mesh.bounds();
  const ROI roi = roi_from_json(read_json_file(a.roi, "sdf"), &bounds);
  const Resolution res = resolution_from_string(a.res);
  VoxelGrid g = sdf::voxelize_sdf(mesh, roi, res);
  g.meta = ctx.provenance("sdf voxelize");
  g.meta["mesh"] = fs::path(a.mesh).filename().string();
  g.meta["vertices_merged"] = report.vertices_merged;
  g.meta["degenerate_dropped"] = report.degenerate_dropped;
  const fs::path out = ctx.resolve(a.out);
  ensure_parent(out);
  write_grid(g, out);
  if (a.emit_usdf) {
    auto [mask, usdf] = sdf::mask_usdf(g);
    mask.meta = usdf.meta = g.meta;
    write_grid(mask, out.string() + "_mask");
    write_grid(usdf, out.string() + "_usdf");
  }
  ctx.write_meta(out, "sdf voxelize", {{"roi", roi_to_json(roi)}, {"resolution", a.res}});
}

struct WeightArgs {
  std::string usdf, mask, velocity, out;
  weights::WeightConfig cfg;
};

void cmd_weights_build(const Context& ctx, const WeightArgs& a) {
  const VoxelGrid usdf = read_grid(a.usdf), mask = read_grid(a.mask), vel = read_grid(a.velocity);
  auto b = weights::build_weight(usdf, mask, vel, a.cfg);
  b.weight.meta = ctx.provenance("weights build");
  b.weight.meta["distance_mean"] = b.distance_mean;
  b.weight.meta["gradient_mean"] = b.gradient_mean;
  b.weight.meta["distance_only"] = b.distance_only;
  b.weight.meta["alpha"] = a.cfg.alpha;
  b.weight.meta["c"] = a.cfg.c;
  b.weight.meta["grad_exponent"] = a.cfg.grad_exponent;
  const fs::path out = ctx.resolve(a.out);
  ensure_parent(out);
  write_grid(b.weight, out);
  ctx.write_meta(out, "weights build");
}

struct MetricArgs {
  std::string pred, truth, grouping, out;
};

void cmd_metrics_compute(const Context& ctx, const MetricArgs& a) {
  const auto records = metrics::load_records(a.pred, a.truth);
  const auto grouping = metrics::grouping_from_json(read_json_file(a.grouping, "metrics"));
  const auto rep = metrics::compute_report(records, grouping);
  json j = rep.to_json();
  j["seed"] = ctx.g.seed;
  const fs::path out = ctx.resolve(a.out);
  ensure_parent(out);
  {
    std::ofstream o(out);
    if (!o) throw DataError("metrics", "cannot write '" + out.string() + "'");
    o << j.dump(2) << '\n';
  }
  ctx.write_meta(out, "metrics compute");
}

struct NcndArgs {
  std::string meshes, mode = "aligned", out;
  int points = 4096;
  std::optional<std::uint64_t> seed;
};

void cmd_geomdiag_ncnd(const Context& ctx, const NcndArgs& a) {
  if (!fs::is_directory(a.meshes)) throw DataError("geomdiag", "'" + a.meshes + "' is not a directory");
  if (a.points < 1) throw ConfigError("geomdiag", "--points must be >= 1");
  const auto mode = geomdiag::normalize_mode_from_string(a.mode);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.meshes)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".stl" || ext == ".obj") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 2) throw DataError("geomdiag", "need at least 2 meshes in '" + a.meshes + "'");

  const std::uint64_t base = derive_seed(a.seed.value_or(ctx.g.seed), "geomdiag");
  std::vector<std::string> names;
  std::vector<geomdiag::OrientedPointCloud> clouds;
  for (const auto& f : files) {
    names.push_back(f.filename().string());
    const auto mesh = geomdiag::normalize(load_mesh(f), mode);
    clouds.push_back(geomdiag::farthest_point_sample(mesh, static_cast<std::size_t>(a.points),
                                                     derive_seed(base, names.back())));
  }
  const auto r = geomdiag::pairwise_ncnd(clouds, a.points);
  const fs::path out = ctx.resolve(a.out);
  ensure_parent(out);
  const auto write = [&](const fs::path& p, const geomdiag::Matrix& m) {
    std::ofstream o(p);
    if (!o) throw DataError("geomdiag", "cannot write '" + p.string() + "'");
    geomdiag::write_matrix_csv(m, names, o);
  };
  write(out, r.value);
  fs::path stem = out;
  stem.replace_extension();
  write(stem.string() + ".chamfer.csv", r.chamfer);
  write(stem.string() + ".dissim.csv", r.dissim);
  ctx.write_meta(out, "geomdiag ncnd",
                 {{"x", r.config.x}, {"y", r.config.y}, {"n_points", a.points}, {"mode", a.mode},
                  {"sampling_seed", base}});
}

struct HarnessArgs {
  std::string config, out;
};

void cmd_harness_run(const Context& ctx, const HarnessArgs& a) {
  const json j = a.config.empty() ? json::object() : read_json_file(a.config, "harness");
  auto cfg = harness::RunConfig::from_json(j);
  // A global seed replaces the seeds the config leaves unset.
  if (ctx.g.seed_given && !j.contains("dataset_seed")) cfg.dataset_seed = derive_seed(ctx.g.seed, "harness.dataset");
  if (ctx.g.seed_given && !j.contains("seeds")) {
    const std::size_t n = cfg.seeds.size();
    cfg.seeds.clear();
    for (std::size_t k = 0; k < n; ++k)
      cfg.seeds.push_back(derive_seed(ctx.g.seed, "harness.train." + std::to_string(k)));
  }
  const fs::path dir = ctx.resolve(a.out);
  fs::create_directories(dir);
  const auto rep = harness::run_harness(cfg, dir);
  for (const auto& s : rep.summary)
    *ctx.out << s.schedule << ": val_mse " << s.mse_mean << " +- " << s.mse_std << ", cost " << s.cost_mean << '\n';
  ctx.write_meta(dir / "run", "harness run", {{"resolved_config", cfg.to_json()}});
}

std::string module_of(const std::string& sub) {
  for (const char* m : {"schedule", "sdf", "weights", "metrics", "geomdiag", "harness"})
    if (sub == m) return m;
  return "cli";
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Progressive multi-resolution training toolkit", "pmrt"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string seed_text, threads_text;
  int verbose = 0;
  bool quiet = false;
  std::string output_dir;
  app.add_option("--seed", seed_text, "Global seed (overrides PMRT_SEED)");
  app.add_option("--threads", threads_text, "Worker threads or 'auto' (overrides PMRT_THREADS)");
  app.add_flag("-v,--verbose", verbose, "More logging; repeat for debug");
  app.add_flag("-q,--quiet", quiet, "Errors only");
  app.add_option("--output-dir", output_dir, "Directory for relative output paths");

  ScheduleArgs sa;
  auto* sch = app.add_subcommand("schedule", "Resolution sampling schedules");
  sch->require_subcommand(1);
  auto* sch_export = sch->add_subcommand("export", "Write the per-epoch probability table");
  sch_export->add_option("--config", sa.config, "Schedule config JSON");
  sch_export->add_option("--format", sa.format)->check(CLI::IsMember({"csv", "json"}));
  sch_export->add_option("--variant", sa.variant, "pmrt, no_floor, no_warmup, no_finetune, hard_switch, constant_equal");
  sch_export->add_option("--out", sa.out, "Output file (default stdout)");

  SdfArgs da;
  auto* sdf_cmd = app.add_subcommand("sdf", "Signed distance fields");
  sdf_cmd->require_subcommand(1);
  auto* vox = sdf_cmd->add_subcommand("voxelize", "Voxelize a mesh into an SDF grid");
  vox->add_option("--mesh", da.mesh)->required();
  vox->add_option("--roi", da.roi, "ROI JSON")->required();
  vox->add_option("--res", da.res)->check(CLI::IsMember({"R128", "R256", "R512"}));
  vox->add_option("--out", da.out, "Output prefix")->required();
  vox->add_flag("--emit-usdf", da.emit_usdf, "Also write <out>_mask and <out>_usdf");

  WeightArgs wa;
  auto* w_cmd = app.add_subcommand("weights", "Loss weight fields");
  w_cmd->require_subcommand(1);
  auto* wb = w_cmd->add_subcommand("build", "Build the combined weight field");
  wb->add_option("--usdf", wa.usdf)->required();
  wb->add_option("--mask", wa.mask)->required();
  wb->add_option("--velocity", wa.velocity)->required();
  wb->add_option("--out", wa.out)->required();
  wb->add_option("--alpha", wa.cfg.alpha);
  wb->add_option("--c", wa.cfg.c);
  wb->add_option("--grad-exponent", wa.cfg.grad_exponent);

  MetricArgs ma;
  auto* m_cmd = app.add_subcommand("metrics", "Evaluation metrics");
  m_cmd->require_subcommand(1);
  auto* mc = m_cmd->add_subcommand("compute", "Drag and field metrics with group aggregation");
  mc->add_option("--pred", ma.pred)->required();
  mc->add_option("--truth", ma.truth)->required();
  mc->add_option("--grouping", ma.grouping)->required();
  mc->add_option("--out", ma.out)->required();

  NcndArgs na;
  std::string ncnd_seed;
  auto* g_cmd = app.add_subcommand("geomdiag", "Geometry diagnostics");
  g_cmd->require_subcommand(1);
  auto* gn = g_cmd->add_subcommand("ncnd", "Pairwise NCND matrix over a mesh directory");
  gn->add_option("--meshes", na.meshes)->required();
  gn->add_option("--mode", na.mode)->check(CLI::IsMember({"aligned", "scaled"}));
  gn->add_option("--points", na.points);
  gn->add_option("--seed", ncnd_seed, "Sampling seed (default: global seed)");
  gn->add_option("--out", na.out)->required();

  HarnessArgs ha;
  auto* h_cmd = app.add_subcommand("harness", "Synthetic end-to-end comparison");
  h_cmd->require_subcommand(1);
  auto* hr = h_cmd->add_subcommand("run", "Train the toy model under several schedules");
  hr->add_option("--config", ha.config, "Harness config JSON");
  hr->add_option("--out", ha.out)->required();

  std::string module = "cli";
  for (const auto& a : args)
    if (module_of(a) != "cli") {
      module = module_of(a);
      break;
    }

  try {
    if (!args.empty() && !args.front().starts_with("-") && module_of(args.front()) == "cli")
      throw CLI::ParseError("unknown subcommand '" + args.front() + "'", CLI::ExitCodes::ExtrasError);
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);

    Context ctx;
    ctx.argv.assign(args.begin(), args.end());
    ctx.out = &out;
    if (const char* e = std::getenv("PMRT_SEED"); e && *e) {
      ctx.g.seed = parse_u64(e, "PMRT_SEED");
      ctx.g.seed_given = true;
    }
    if (const char* e = std::getenv("PMRT_THREADS"); e && *e) ctx.g.threads = parse_threads(e, "PMRT_THREADS");
    if (!seed_text.empty()) {
      ctx.g.seed = parse_u64(seed_text, "--seed");
      ctx.g.seed_given = true;
    }
    if (!threads_text.empty()) ctx.g.threads = parse_threads(threads_text, "--threads");
    if (!ncnd_seed.empty()) na.seed = parse_u64(ncnd_seed, "--seed");
    ctx.g.verbosity = quiet ? 0 : 1 + verbose;
    ctx.g.output_dir = output_dir;
    set_log_level(static_cast<LogLevel>(std::min(ctx.g.verbosity, 3)));
    set_thread_count(ctx.g.threads);

    if (sch_export->parsed()) cmd_schedule_export(ctx, sa);
    else if (vox->parsed()) cmd_sdf_voxelize(ctx, da);
    else if (wb->parsed()) cmd_weights_build(ctx, wa);
    else if (mc->parsed()) cmd_metrics_compute(ctx, ma);
    else if (gn->parsed()) cmd_geomdiag_ncnd(ctx, na);
    else if (hr->parsed()) cmd_harness_run(ctx, ha);
    return kOk;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error[cli]: " << e.what() << '\n' << app.help();
    return kUsage;
  } catch (const UsageError& e) {
    err << "error[cli]: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "error[" << e.module() << "]: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    err << "error[" << e.module() << "]: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "error[" << module << "]: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "error[" << module << "]: " << e.what() << '\n';
    return kData;
  }
}

int main_entry(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace pmrt::cli
