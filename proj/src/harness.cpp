#include "pmrt/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "pmrt/sdf.hpp"

namespace pmrt::harness {

namespace {

constexpr const char* kModule = "harness";
constexpr int kBinsX = 8, kBinsY = 2, kBinsZ = 2;
constexpr int kFineBins = kBinsX * kBinsY * kBinsZ;

double mean_of(std::span<const double> v) { return pairwise_mean(v); }

double sample_std(std::span<const double> v, double mean) {
  if (v.size() < 2) return 0.0;
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - mean) * (v[i] - mean);
  return std::sqrt(pairwise_sum(sq) / static_cast<double>(v.size() - 1));
}

template <class Value>
std::vector<double> pooled_features(GridShape shape, Value value) {
  if (shape.nx % kBinsX != 0 || shape.ny % kBinsY != 0 || shape.nz % kBinsZ != 0)
    throw DataError(kModule, "grid shape is not divisible by the (8, 2, 2) pooling bins");
  const int cx = shape.nx / kBinsX, cy = shape.ny / kBinsY, cz = shape.nz / kBinsZ;
  std::vector<double> sum(kFineBins, 0.0), solid(kFineBins, 0.0);
  parallel_for(kBinsX, [&](std::size_t begin, std::size_t end) {
    for (std::size_t bx = begin; bx < end; ++bx)
      for (int ix = static_cast<int>(bx) * cx; ix < static_cast<int>(bx + 1) * cx; ++ix)
        for (int iy = 0; iy < shape.ny; ++iy)
          for (int iz = 0; iz < shape.nz; ++iz) {
            const double v = value(ix, iy, iz);
            const std::size_t b = (bx * kBinsY + iy / cy) * kBinsZ + iz / cz;
            sum[b] += v;
            if (v <= 0.0) solid[b] += 1.0;
          }
  });
  const double fine_cells = static_cast<double>(cx) * cy * cz;
  std::vector<double> out;
  out.reserve(kFeatureDim);
  for (int pass = 0; pass < 2; ++pass)
    for (int coarse = 0; coarse < kBinsX / 2; ++coarse) {
      double acc = 0.0;
      for (int b = coarse * 2 * kBinsY * kBinsZ; b < (coarse + 1) * 2 * kBinsY * kBinsZ; ++b)
        acc += pass == 0 ? sum[b] : solid[b];
      out.push_back(acc / (fine_cells * 2 * kBinsY * kBinsZ));
    }
  for (int b = 0; b < kFineBins; ++b) out.push_back(sum[b] / fine_cells);
  for (int b = 0; b < kFineBins; ++b) out.push_back(solid[b] / fine_cells);
  return out;
}

void write_field_csv_header(std::ostream& o) { o << "schedule,seed,epoch,val_mse\n"; }

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<double> SimParamEncoder::encode(std::span<const double> v) const {
  if (v.size() != mean.size()) throw DataError(kModule, "simulation parameter vector has the wrong dimension");
  std::vector<double> z;
  for (std::size_t d : kept) z.push_back((v[d] - mean[d]) / std[d]);
  std::vector<double> out;
  for (const auto& c : components) {
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += c[i] * z[i];
    out.push_back(s);
  }
  return out;
}

SimParamEncoder fit_sim_encoder(std::span<const std::vector<double>> train, int k) {
  if (train.size() < 2) throw DataError(kModule, "PCA needs at least 2 vectors");
  const std::size_t dim = train.front().size();
  for (const auto& v : train)
    if (v.size() != dim) throw DataError(kModule, "simulation parameter vectors differ in length");
  if (k < 0 || static_cast<std::size_t>(k) > dim)
    throw ConfigError(kModule, "k must be in [0, dimension]");

  SimParamEncoder enc;
  enc.mean.resize(dim);
  enc.std.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    std::vector<double> col;
    for (const auto& v : train) col.push_back(v[d]);
    enc.mean[d] = mean_of(col);
    enc.std[d] = sample_std(col, enc.mean[d]);
    if (enc.std[d] > 1e-12 * std::max(1.0, std::abs(enc.mean[d])))
      enc.kept.push_back(d);
    else
      log_warn(kModule, "simulation parameter " + std::to_string(d) + " has zero variance; dropped");
  }
  const auto m = static_cast<Eigen::Index>(enc.kept.size());
  const auto n = static_cast<Eigen::Index>(train.size());
  Eigen::MatrixXd z(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const std::size_t d = enc.kept[static_cast<std::size_t>(j)];
      z(i, j) = (train[static_cast<std::size_t>(i)][d] - enc.mean[d]) / enc.std[d];
    }
  const Eigen::MatrixXd cov = (z.transpose() * z) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw DegenerateError(kModule, "covariance eigendecomposition failed");

  double total = 0.0, top = 0.0;
  for (Eigen::Index j = m - 1; j >= 0; --j) enc.eigenvalues.push_back(std::max(es.eigenvalues()(j), 0.0));
  for (double e : enc.eigenvalues) total += e;
  const double tol = 1e-10 * std::max(total, 1.0);
  const auto rank = static_cast<int>(std::count_if(enc.eigenvalues.begin(), enc.eigenvalues.end(),
                                                   [&](double e) { return e > tol; }));
  if (k > rank)
    throw ConfigError(kModule, "k = " + std::to_string(k) + " exceeds the data rank " + std::to_string(rank));
  for (int c = 0; c < k; ++c) {
    const Eigen::VectorXd v = es.eigenvectors().col(m - 1 - c);
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < m; ++j)
      if (std::abs(v(j)) > std::abs(v(arg))) arg = j;
    const double sign = v(arg) < 0.0 ? -1.0 : 1.0;
    std::vector<double> row(static_cast<std::size_t>(m));
    for (Eigen::Index j = 0; j < m; ++j) row[static_cast<std::size_t>(j)] = sign * v(j);
    enc.components.push_back(std::move(row));
    top += enc.eigenvalues[static_cast<std::size_t>(c)];
  }
  enc.explained_variance_ratio = total > 0.0 ? top / total : 0.0;
  return enc;
}

std::vector<std::vector<double>> encode_sim_params(std::span<const std::vector<double>> vectors, int k) {
  const SimParamEncoder enc = fit_sim_encoder(vectors, k);
  std::vector<std::vector<double>> out;
  for (const auto& v : vectors) out.push_back(enc.encode(v));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> stratified_split(std::span<const double> targets,
                                                       std::span<const double> fractions, int bins,
                                                       std::uint64_t seed) {
  if (fractions.empty()) throw ConfigError(kModule, "no split fractions given");
  double fsum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError(kModule, "split fractions must be >= 0");
    fsum += f;
  }
  if (std::abs(fsum - 1.0) > 1e-9) throw ConfigError(kModule, "split fractions must sum to 1");
  if (bins < 1) throw ConfigError(kModule, "bins must be >= 1");
  const std::size_t n = targets.size();
  const auto parts = static_cast<std::size_t>(
      std::count_if(fractions.begin(), fractions.end(), [](double f) { return f > 0.0; }));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return targets[a] < targets[b] || (targets[a] == targets[b] && a < b);
  });
  std::vector<std::vector<std::size_t>> groups;
  for (int b = 0; b < bins; ++b) {
    const std::size_t lo = n * b / bins, hi = n * (b + 1) / bins;
    groups.emplace_back(order.begin() + lo, order.begin() + hi);
  }
  bool merged = false;
  for (std::size_t g = 0; g < groups.size() && groups.size() > 1;) {
    if (groups[g].size() >= parts) {
      ++g;
      continue;
    }
    const std::size_t into = g + 1 < groups.size() ? g + 1 : g - 1;
    auto& dst = groups[into];
    dst.insert(into > g ? dst.begin() : dst.end(), groups[g].begin(), groups[g].end());
    groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(g));
    merged = true;
    if (into < g) --g;
  }
  if (merged) log_warn(kModule, "merged undersized split bins; " + std::to_string(groups.size()) + " bins remain");

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> out(fractions.size());
  // Cut points are rounded on the running total so the per-bin rounding
  // errors do not accumulate.
  std::size_t before = 0;
  const auto cut = [](double cum, std::size_t count) {
    return static_cast<std::size_t>(std::llround(cum * static_cast<double>(count)));
  };
  for (auto& g : groups) {
    for (std::size_t i = g.size(); i > 1; --i) std::swap(g[i - 1], g[rng.index(i)]);
    const std::size_t after = before + g.size();
    double cum = 0.0;
    std::size_t taken = 0;
    for (std::size_t p = 0; p < fractions.size(); ++p) {
      cum += fractions[p];
      const std::size_t upto =
          p + 1 == fractions.size() ? g.size() : std::min(g.size(), cut(cum, after) - cut(cum, before));
      for (; taken < upto; ++taken) out[p].push_back(g[taken]);
    }
    before = after;
  }
  for (auto& part : out) std::sort(part.begin(), part.end());
  return out;
}

double cyclic_lr(long step, double base_lr, double max_lr, long half_cycle) {
  if (half_cycle < 1) throw ConfigError(kModule, "half_cycle must be >= 1");
  if (!(base_lr <= max_lr)) throw ConfigError(kModule, "base_lr must be <= max_lr");
  if (step < 0) throw ConfigError(kModule, "step must be >= 0");
  const long pos = step % (2 * half_cycle);
  const double frac = pos <= half_cycle ? static_cast<double>(pos) / half_cycle
                                        : static_cast<double>(2 * half_cycle - pos) / half_cycle;
  return base_lr + (max_lr - base_lr) * frac;
}

double smooth_l1(double r, double beta) {
  const double a = std::abs(r);
  return a < beta ? 0.5 * r * r / beta : a - 0.5 * beta;
}

double smooth_l1_grad(double r, double beta) {
  if (std::abs(r) < beta) return r / beta;
  return r > 0.0 ? 1.0 : -1.0;
}

// ---------------------------------------------------------------------------

std::vector<double> extract_features(const ShapeSpec& spec, const ROI& roi, GridShape shape) {
  const Vec3 h{roi.extent.x / shape.nx, roi.extent.y / shape.ny, roi.extent.z / shape.nz};
  return pooled_features(shape, [&](int ix, int iy, int iz) {
    const Vec3 p{roi.origin.x + (ix + 0.5) * h.x, roi.origin.y + (iy + 0.5) * h.y, roi.origin.z + (iz + 0.5) * h.z};
    return shape_sdf(spec, p);
  });
}

std::vector<double> extract_features(const VoxelGrid& sdf) {
  if (sdf.channels != 1) throw DataError(kModule, "feature extraction expects a one-channel sdf grid");
  return pooled_features(sdf.shape, [&](int ix, int iy, int iz) { return sdf.at(ix, iy, iz); });
}

std::string_view weight_mode_name(WeightMode m) { return m == WeightMode::uniform ? "uniform" : "eq1"; }

WeightMode weight_mode_from_string(std::string_view s) {
  if (s == "uniform") return WeightMode::uniform;
  if (s == "eq1") return WeightMode::eq1;
  throw ConfigError(kModule, "unknown weight mode '" + std::string(s) + "'");
}

std::vector<std::vector<std::vector<double>>> raw_features(std::span<const ToySample> data, const ROI& roi,
                                                           int resolutions) {
  if (resolutions < 1 || resolutions > 3) throw ConfigError(kModule, "resolutions must be in [1, 3]");
  std::vector<std::vector<std::vector<double>>> out(static_cast<std::size_t>(resolutions));
  for (int r = 0; r < resolutions; ++r) {
    const GridShape shape = shape_of(resolution_from_index(r));
    for (const auto& s : data) out[static_cast<std::size_t>(r)].push_back(extract_features(s.spec, roi, shape));
  }
  return out;
}

FeatureBank build_feature_bank(std::span<const ToySample> data, std::span<const std::size_t> train,
                               const BankOptions& opts) {
  return build_feature_bank(data, train, raw_features(data, harness_roi(), opts.resolutions), opts);
}

FeatureBank build_feature_bank(std::span<const ToySample> data, std::span<const std::size_t> train,
                               std::vector<std::vector<std::vector<double>>> raw, const BankOptions& opts) {
  if (train.empty()) throw DataError(kModule, "training split is empty");
  if (raw.empty() || raw.front().size() != data.size())
    throw DataError(kModule, "raw feature table does not match the dataset");
  FeatureBank bank;
  const auto& top = raw.back();
  const std::size_t fd = top.front().size();
  bank.feat_mean.assign(fd, 0.0);
  bank.feat_std.assign(fd, 1.0);
  for (std::size_t j = 0; j < fd; ++j) {
    std::vector<double> col;
    for (std::size_t i : train) col.push_back(top[i][j]);
    bank.feat_mean[j] = mean_of(col);
    std::vector<double> sq;
    for (double v : col) sq.push_back((v - bank.feat_mean[j]) * (v - bank.feat_mean[j]));
    const double sd = std::sqrt(pairwise_mean(sq));
    bank.feat_std[j] = sd > 1e-12 ? sd : 1.0;
  }
  if (opts.whiten_threshold > 0.0) {
    const auto n = static_cast<Eigen::Index>(train.size());
    const auto m = static_cast<Eigen::Index>(fd);
    Eigen::MatrixXd z(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto jj = static_cast<std::size_t>(j);
        z(i, j) = (top[train[static_cast<std::size_t>(i)]][jj] - bank.feat_mean[jj]) / bank.feat_std[jj];
      }
    const Eigen::MatrixXd cov = (z.transpose() * z) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw DegenerateError(kModule, "feature covariance eigendecomposition failed");
    const double lmax = es.eigenvalues()(m - 1);
    for (Eigen::Index c = m - 1; c >= 0 && es.eigenvalues()(c) > opts.whiten_threshold * lmax; --c) {
      const Eigen::VectorXd v = es.eigenvectors().col(c);
      Eigen::Index arg = 0;
      for (Eigen::Index j = 1; j < m; ++j)
        if (std::abs(v(j)) > std::abs(v(arg))) arg = j;
      const double scale = (v(arg) < 0.0 ? -1.0 : 1.0) / std::sqrt(es.eigenvalues()(c));
      std::vector<double> row(fd);
      for (std::size_t j = 0; j < fd; ++j) row[j] = scale * v(static_cast<Eigen::Index>(j));
      bank.whitening.push_back(std::move(row));
    }
  }
  std::vector<std::vector<double>> sims;
  for (std::size_t i : train) sims.push_back(data[i].spec.sim_params);
  if (opts.pca_k > 0) bank.encoder = fit_sim_encoder(sims, opts.pca_k);

  bank.features.resize(raw.size());
  for (std::size_t r = 0; r < raw.size(); ++r)
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::vector<double> f(fd);
      for (std::size_t j = 0; j < fd; ++j) f[j] = (raw[r][i][j] - bank.feat_mean[j]) / bank.feat_std[j];
      if (!bank.whitening.empty()) {
        std::vector<double> wf;
        for (const auto& row : bank.whitening) {
          double acc = 0.0;
          for (std::size_t j = 0; j < fd; ++j) acc += row[j] * f[j];
          wf.push_back(acc);
        }
        f = std::move(wf);
      }
      if (opts.pca_k > 0)
        for (double e : bank.encoder.encode(data[i].spec.sim_params)) f.push_back(e);
      bank.features[r].push_back(std::move(f));
    }

  for (const auto& s : data) bank.targets.push_back(s.target_cd);
  std::vector<double> tt;
  for (std::size_t i : train) tt.push_back(bank.targets[i]);
  bank.target_mean = mean_of(tt);
  std::vector<double> sq;
  for (double v : tt) sq.push_back((v - bank.target_mean) * (v - bank.target_mean));
  const double sd = std::sqrt(pairwise_mean(sq));
  bank.target_std = sd > 1e-12 ? sd : 1.0;

  if (opts.with_fields) {
    bank.field_shape = opts.field.shape;
    const ROI roi = harness_roi();
    for (const auto& s : data) {
      const VoxelGrid vel = velocity_field(s.spec, roi, opts.field.shape);
      const auto mu = sdf::mask_usdf(sdf_grid(s.spec, roi, opts.field.shape));
      bank.field_truth.push_back(vel.data);
      bank.field_weight.push_back(weights::build_weight(mu.usdf, mu.mask, vel, opts.weight_cfg).weight.data);
    }
  }
  return bank;
}

// ---------------------------------------------------------------------------

ToyModel ToyModel::zeros(std::size_t dim, std::size_t field_outputs) {
  ToyModel m;
  m.w.assign(dim, 0.0);
  m.field_w.assign(dim * field_outputs, 0.0);
  m.field_b.assign(field_outputs, 0.0);
  return m;
}

double ToyModel::predict(std::span<const double> f) const {
  double s = b;
  for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * f[j];
  return s;
}

std::vector<double> ToyModel::flatten() const {
  std::vector<double> out(w);
  out.push_back(b);
  out.insert(out.end(), field_w.begin(), field_w.end());
  out.insert(out.end(), field_b.begin(), field_b.end());
  return out;
}

void ToyModel::assign(std::span<const double> flat) {
  if (flat.size() != w.size() + 1 + field_w.size() + field_b.size())
    throw DataError(kModule, "parameter vector has the wrong size");
  auto it = flat.begin();
  std::copy(it, it + static_cast<std::ptrdiff_t>(w.size()), w.begin());
  it += static_cast<std::ptrdiff_t>(w.size());
  b = *it++;
  std::copy(it, it + static_cast<std::ptrdiff_t>(field_w.size()), field_w.begin());
  it += static_cast<std::ptrdiff_t>(field_w.size());
  std::copy(it, it + static_cast<std::ptrdiff_t>(field_b.size()), field_b.begin());
}

double batch_loss(const ToyModel& model, std::span<const BatchItem> batch, const LossOptions& opts,
                  std::vector<double>* grad) {
  if (batch.empty()) throw DataError(kModule, "empty batch");
  const std::size_t dim = model.dim(), outs = model.field_outputs();
  if (grad) grad->assign(dim + 1 + dim * outs + outs, 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double field_scale = outs > 0 ? opts.field_loss_weight / static_cast<double>(outs) : 0.0;
  double loss = 0.0;
  for (const auto& item : batch) {
    const double r = model.predict(item.features) - item.target;
    loss += smooth_l1(r, opts.beta);
    if (grad) {
      const double g = smooth_l1_grad(r, opts.beta) * inv_b;
      for (std::size_t j = 0; j < dim; ++j) (*grad)[j] += g * item.features[j];
      (*grad)[dim] += g;
    }
    if (outs == 0) continue;
    if (item.field_truth.size() != outs) throw DataError(kModule, "field target size does not match the model");
    const std::size_t cells = item.field_weight.size();
    for (std::size_t o = 0; o < outs; ++o) {
      const double* row = model.field_w.data() + o * dim;
      double u = model.field_b[o];
      for (std::size_t j = 0; j < dim; ++j) u += row[j] * item.features[j];
      const double wgt = item.field_weight[o % cells];
      const double fr = u - item.field_truth[o];
      loss += field_scale * wgt * smooth_l1(fr, opts.beta);
      if (grad) {
        const double g = field_scale * wgt * smooth_l1_grad(fr, opts.beta) * inv_b;
        double* grow = grad->data() + dim + 1 + o * dim;
        for (std::size_t j = 0; j < dim; ++j) grow[j] += g * item.features[j];
        (*grad)[dim + 1 + dim * outs + o] += g;
      }
    }
  }
  return loss * inv_b;
}

// ---------------------------------------------------------------------------

std::int64_t CostLog::voxels_per_sample(int resolution) {
  return static_cast<std::int64_t>(shape_of(resolution_from_index(resolution)).cells());
}

void CostLog::add(int epoch, int resolution, int batch_size) {
  const std::int64_t v = static_cast<std::int64_t>(batch_size) * voxels_per_sample(resolution);
  entries.push_back({epoch, resolution, batch_size, v});
  cumulative_voxels += v;
}

double CostLog::cumulative() const {
  return static_cast<double>(cumulative_voxels) / static_cast<double>(voxels_per_sample(2));
}

double evaluate_mse(const FeatureBank& bank, const ToyModel& model, std::span<const std::size_t> idx,
                    int resolution) {
  if (idx.empty()) throw DataError(kModule, "cannot evaluate on an empty split");
  std::vector<double> sq;
  for (std::size_t i : idx) {
    const double pred = model.predict(bank.features[static_cast<std::size_t>(resolution)][i]) * bank.target_std +
                        bank.target_mean;
    sq.push_back((pred - bank.targets[i]) * (pred - bank.targets[i]));
  }
  return pairwise_mean(sq);
}

TrainResult train_toy(const FeatureBank& bank, const Split& split, const sched::Schedule& schedule,
                      const TrainOptions& opts) {
  if (split.train.empty() || split.val.empty()) throw DataError(kModule, "empty train or validation split");
  if (schedule.config.resolutions > bank.resolutions())
    throw ConfigError(kModule, "schedule has more resolutions than the feature bank");
  const bool eq1 = opts.weight_mode == WeightMode::eq1;
  if (eq1 && bank.field_truth.empty()) throw ConfigError(kModule, "eq1 weight mode needs field targets in the bank");
  const int top = bank.resolutions() - 1;

  TrainResult res;
  res.model = ToyModel::zeros(bank.dim(), eq1 ? bank.field_truth.front().size() : 0);
  sched::SamplingStream stream(derive_seed(opts.seed, "harness.schedule"));
  Rng pick(derive_seed(opts.seed, "harness.batch"));
  ToyModel good = res.model;
  std::vector<double> params = res.model.flatten(), grad;
  std::vector<BatchItem> batch;
  long step = 0;
  const int n_train = static_cast<int>(split.train.size());

  for (int epoch = 0; epoch < schedule.config.total_epochs() && !res.diverged; ++epoch) {
    const auto plan = opts.epoch_mode == EpochMode::fixed_samples
                          ? sched::batch_plan_by_samples(epoch, schedule, n_train, stream)
                          : sched::batch_plan(epoch, schedule, opts.batches_per_epoch, stream);
    for (const auto& draw : plan) {
      res.cost.add(epoch, draw.resolution, draw.batch_size);
      batch.clear();
      for (int k = 0; k < draw.batch_size; ++k) {
        const std::size_t i = split.train[pick.index(split.train.size())];
        const double t = (bank.targets[i] - bank.target_mean) / bank.target_std;
        BatchItem item{bank.features[static_cast<std::size_t>(draw.resolution)][i], t, {}, {}};
        if (eq1) {
          item.field_truth = bank.field_truth[i];
          item.field_weight = bank.field_weight[i];
        }
        batch.push_back(item);
      }
      const double loss = batch_loss(res.model, batch, opts.loss, &grad);
      const double lr = cyclic_lr(step++, opts.base_lr, opts.max_lr, opts.half_cycle);
      bool finite = std::isfinite(loss);
      for (std::size_t j = 0; j < params.size() && finite; ++j) {
        params[j] -= lr * grad[j];
        finite = std::isfinite(params[j]);
      }
      if (!finite) {
        res.diverged = true;
        break;
      }
      res.model.assign(params);
    }
    if (res.diverged) break;
    const double mse = evaluate_mse(bank, res.model, split.val, top);
    if (!std::isfinite(mse)) {
      res.diverged = true;
      break;
    }
    res.val_mse.push_back(mse);
    good = res.model;
    res.last_good_epoch = epoch;
  }
  if (res.diverged) {
    log_warn(kModule, "training diverged; keeping the model from epoch " + std::to_string(res.last_good_epoch));
    res.model = good;
  }
  res.final_val_mse = evaluate_mse(bank, res.model, split.val, top);
  res.final_train_mse = evaluate_mse(bank, res.model, split.train, top);
  std::vector<double> ae;
  for (std::size_t i : split.val) {
    const double pred = res.model.predict(bank.features[static_cast<std::size_t>(top)][i]) * bank.target_std +
                        bank.target_mean;
    ae.push_back(std::abs(pred - bank.targets[i]) * 1000.0);
  }
  res.final_val_mae_counts = pairwise_mean(ae);
  return res;
}

// ---------------------------------------------------------------------------

const ComparisonSummary& ComparisonReport::of(std::string_view schedule) const {
  for (const auto& s : summary)
    if (s.schedule == schedule) return s;
  throw DataError(kModule, "no schedule named '" + std::string(schedule) + "' in the report");
}

ComparisonReport compare_schedules(const FeatureBank& bank, const Split& split,
                                   std::span<const NamedSchedule> schedules,
                                   std::span<const std::uint64_t> seeds, TrainOptions opts) {
  if (schedules.size() < 2) throw ConfigError(kModule, "compare_schedules needs at least 2 schedules");
  if (seeds.empty()) throw ConfigError(kModule, "compare_schedules needs at least one seed");
  ComparisonReport rep;
  for (const auto& ns : schedules) {
    std::vector<double> mse, mae, cost;
    for (std::uint64_t seed : seeds) {
      opts.seed = seed;
      TrainResult r = train_toy(bank, split, ns.schedule, opts);
      rep.rows.push_back({ns.name, seed, r.final_val_mse, r.final_val_mae_counts, r.cost.cumulative(), r.diverged});
      mse.push_back(r.final_val_mse);
      mae.push_back(r.final_val_mae_counts);
      cost.push_back(r.cost.cumulative());
      rep.results.push_back(std::move(r));
    }
    const double m1 = mean_of(mse), m2 = mean_of(mae), m3 = mean_of(cost);
    rep.summary.push_back({ns.name, m1, sample_std(mse, m1), m2, sample_std(mae, m2), m3, sample_std(cost, m3)});
  }
  return rep;
}

void write_comparison_csv(const ComparisonReport& report, std::ostream& out) {
  out << "schedule,seed,val_mse,val_mae_counts,cost,diverged\n";
  for (const auto& r : report.rows)
    out << r.schedule << ',' << r.seed << ',' << fmt(r.val_mse) << ',' << fmt(r.val_mae_counts) << ','
        << fmt(r.cost) << ',' << (r.diverged ? 1 : 0) << '\n';
  for (const auto& s : report.summary) {
    out << s.schedule << ",mean," << fmt(s.mse_mean) << ',' << fmt(s.mae_mean) << ',' << fmt(s.cost_mean) << ",\n";
    out << s.schedule << ",std," << fmt(s.mse_std) << ',' << fmt(s.mae_std) << ',' << fmt(s.cost_std) << ",\n";
  }
}

sched::Schedule schedule_by_name(std::string_view name, const sched::ScheduleConfig& cfg) {
  if (name.starts_with("single_")) {
    const Resolution res = resolution_from_string(name.substr(7));
    const int r = static_cast<int>(res);
    if (r >= cfg.resolutions) throw ConfigError(kModule, "schedule '" + std::string(name) + "' exceeds R");
    return sched::build_single_resolution(cfg, r);
  }
  return sched::build_variant(cfg, sched::variant_from_string(name));
}

// ---------------------------------------------------------------------------

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError(kModule, "harness config must be a JSON object");
  RunConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_samples") c.n_samples = v.get<int>();
      else if (key == "dataset_seed") c.dataset_seed = v.get<std::uint64_t>();
      else if (key == "seeds") c.seeds = v.get<std::vector<std::uint64_t>>();
      else if (key == "schedules") c.schedules = v.get<std::vector<std::string>>();
      else if (key == "schedule") c.schedule = sched::config_from_json(v);
      else if (key == "weight_mode") c.train.weight_mode = weight_mode_from_string(v.get<std::string>());
      else if (key == "epoch_mode") {
        const auto s = v.get<std::string>();
        if (s == "fixed_samples") c.train.epoch_mode = EpochMode::fixed_samples;
        else if (s == "fixed_batches") c.train.epoch_mode = EpochMode::fixed_batches;
        else throw ConfigError(kModule, "unknown epoch_mode '" + s + "'");
      } else if (key == "batches_per_epoch") c.train.batches_per_epoch = v.get<int>();
      else if (key == "base_lr") c.train.base_lr = v.get<double>();
      else if (key == "max_lr") c.train.max_lr = v.get<double>();
      else if (key == "half_cycle") c.train.half_cycle = v.get<long>();
      else if (key == "beta") c.train.loss.beta = v.get<double>();
      else if (key == "field_loss_weight") c.train.loss.field_loss_weight = v.get<double>();
      else if (key == "train_fraction") c.train_fraction = v.get<double>();
      else if (key == "split_bins") c.split_bins = v.get<int>();
      else if (key == "pca_k") c.pca_k = v.get<int>();
      else if (key == "field_shape") {
        const auto s = v.get<std::vector<int>>();
        if (s.size() != 3) throw ConfigError(kModule, "field_shape needs 3 entries");
        c.field.shape = {s[0], s[1], s[2]};
      } else
        throw ConfigError(kModule, "unknown harness config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(kModule, std::string("bad harness config value: ") + e.what());
  }
  if (c.n_samples < 2) throw ConfigError(kModule, "n_samples must be >= 2");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0))
    throw ConfigError(kModule, "train_fraction must be in (0, 1)");
  if (!(c.train.loss.beta > 0.0)) throw ConfigError(kModule, "beta must be > 0");
  if (c.seeds.empty()) throw ConfigError(kModule, "seeds must not be empty");
  c.schedule.validate();
  return c;
}

nlohmann::json RunConfig::to_json() const {
  return {{"n_samples", n_samples},
          {"dataset_seed", dataset_seed},
          {"seeds", seeds},
          {"schedules", schedules},
          {"schedule", sched::to_json(schedule)},
          {"weight_mode", weight_mode_name(train.weight_mode)},
          {"epoch_mode", train.epoch_mode == EpochMode::fixed_samples ? "fixed_samples" : "fixed_batches"},
          {"batches_per_epoch", train.batches_per_epoch},
          {"base_lr", train.base_lr},
          {"max_lr", train.max_lr},
          {"half_cycle", train.half_cycle},
          {"beta", train.loss.beta},
          {"field_loss_weight", train.loss.field_loss_weight},
          {"train_fraction", train_fraction},
          {"split_bins", split_bins},
          {"pca_k", pca_k},
          {"field_shape", {field.shape.nx, field.shape.ny, field.shape.nz}}};
}

ComparisonReport run_harness(const RunConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto data = generate_dataset(cfg.n_samples, cfg.dataset_seed);
  std::vector<double> targets;
  for (const auto& s : data) targets.push_back(s.target_cd);
  const double fr[2] = {cfg.train_fraction, 1.0 - cfg.train_fraction};
  const auto parts = stratified_split(targets, fr, cfg.split_bins, derive_seed(cfg.dataset_seed, "harness.split"));
  const Split split{parts[0], parts[1]};

  BankOptions bo;
  bo.resolutions = cfg.schedule.resolutions;
  bo.pca_k = cfg.pca_k;
  bo.with_fields = cfg.train.weight_mode == WeightMode::eq1;
  bo.field = cfg.field;
  const FeatureBank bank = build_feature_bank(data, split.train, bo);

  std::vector<NamedSchedule> scheds;
  for (const auto& name : cfg.schedules) scheds.push_back({name, schedule_by_name(name, cfg.schedule)});
  const ComparisonReport rep = compare_schedules(bank, split, scheds, cfg.seeds, cfg.train);

  {
    std::ofstream o(dir / "comparison.csv");
    write_comparison_csv(rep, o);
  }
  {
    std::ofstream cost(dir / "cost_log.csv"), val(dir / "validation.csv");
    cost << "schedule,seed,epoch,resolution,batch_size,voxels,cumulative_units\n";
    write_field_csv_header(val);
    const double unit = static_cast<double>(CostLog::voxels_per_sample(2));
    for (std::size_t k = 0; k < rep.rows.size(); ++k) {
      const auto& row = rep.rows[k];
      const auto& r = rep.results[k];
      std::int64_t cum = 0;
      for (const auto& e : r.cost.entries) {
        cum += e.voxels;
        cost << row.schedule << ',' << row.seed << ',' << e.epoch << ',' << e.resolution << ',' << e.batch_size << ','
             << e.voxels << ',' << fmt(static_cast<double>(cum) / unit) << '\n';
      }
      for (std::size_t e = 0; e < r.val_mse.size(); ++e)
        val << row.schedule << ',' << row.seed << ',' << e << ',' << fmt(r.val_mse[e]) << '\n';
    }
  }
  for (const auto& ns : scheds) {
    std::ofstream o(dir / ("schedule_" + ns.name + ".csv"));
    sched::export_schedule(ns.schedule, sched::ExportFormat::csv, o, cfg.dataset_seed);
  }
  nlohmann::json meta = {{"config", cfg.to_json()},
                         {"dataset_seed", cfg.dataset_seed},
                         {"training_seeds", cfg.seeds},
                         {"train_size", split.train.size()},
                         {"val_size", split.val.size()},
                         {"feature_dim", bank.dim()},
                         {"summary", nlohmann::json::array()}};
  for (const auto& s : rep.summary)
    meta["summary"].push_back({{"schedule", s.schedule},
                               {"val_mse_mean", s.mse_mean},
                               {"val_mse_std", s.mse_std},
                               {"val_mae_counts_mean", s.mae_mean},
                               {"cost_mean", s.cost_mean}});
  std::ofstream(dir / "run.json") << meta.dump(2) << '\n';
  return rep;
}

}  // namespace pmrt::harness
