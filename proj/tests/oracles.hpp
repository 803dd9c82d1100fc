#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance run. None of these call into the library under test.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "pmrt/common.hpp"

namespace oracle {

// Simpson quadrature of the Gaussian density over [lo, hi].
inline double gaussian_mass(double lo, double hi, double mu, double sigma) {
  if (hi <= lo) return 0.0;
  const int n = 20000;
  const double h = (hi - lo) / n;
  auto pdf = [&](double x) {
    const double z = (x - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
  };
  double s = pdf(lo) + pdf(hi);
  for (int i = 1; i < n; ++i) s += pdf(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Bin masses for bins [.., 0.5), [0.5, 1.5), ...; the lowest bin starts 40
// sigma below the mean instead of at -infinity.
inline std::vector<double> schedule_raw(double mu, double sigma, int r) {
  std::vector<double> out;
  double lo = mu - 40.0 * sigma;
  for (int i = 0; i < r; ++i) {
    const double hi = i + 0.5;
    out.push_back(gaussian_mass(lo, std::max(lo, hi), mu, sigma));
    lo = std::max(lo, hi);
  }
  return out;
}

inline std::vector<double> schedule_floor(std::vector<double> raw, double eps) {
  double s = 0.0;
  for (double& p : raw) {
    p = p < eps ? eps : p;
    s += p;
  }
  for (double& p : raw) p /= s;
  return raw;
}

// Pre-training row at epoch e with an E-epoch pre-training phase.
inline std::vector<double> schedule_row(int e, int E, int r, double gamma, double mu0, double mu1, double s0,
                                        double s1, double eps) {
  const double t = std::pow(static_cast<double>(e) / (E - 1), gamma);
  return schedule_floor(schedule_raw(mu0 + (mu1 - mu0) * t, s0 - (s0 - s1) * t, r), eps);
}

inline double sphere_sdf(const pmrt::Vec3& p, const pmrt::Vec3& c, double r) { return pmrt::norm(p - c) - r; }

inline double box_sdf(const pmrt::Vec3& p, const pmrt::Vec3& lo, const pmrt::Vec3& hi) {
  const pmrt::Vec3 c = (lo + hi) * 0.5, half = (hi - lo) * 0.5;
  const pmrt::Vec3 q{std::abs(p.x - c.x) - half.x, std::abs(p.y - c.y) - half.y, std::abs(p.z - c.z) - half.z};
  const pmrt::Vec3 outside{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
  return pmrt::norm(outside) + std::min(std::max({q.x, q.y, q.z}), 0.0);
}

// Cyclic Jacobi eigenvalue iteration for a symmetric matrix; eigenvalues descending.
inline std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  std::sort(ev.begin(), ev.end(), [](double x, double y) { return x > y; });
  return ev;
}

// Correlation matrix (sample covariance of z-normed columns) of row vectors.
inline std::vector<std::vector<double>> correlation(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size(), d = rows.front().size();
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j] / n;
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (r[j] - mean[j]) * (r[j] - mean[j]) / (n - 1);
  for (double& s : sd) s = std::sqrt(s);
  std::vector<std::vector<double>> c(d, std::vector<double>(d, 0.0));
  for (const auto& r : rows)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        c[i][j] += (r[i] - mean[i]) / sd[i] * (r[j] - mean[j]) / sd[j] / (n - 1);
  return c;
}

}  // namespace oracle
