#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pmrt {

// Error hierarchy. Every error names the module that raised it so the CLI can
// print `error[<module>]: ...`.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(what), module_(std::move(module)) {}
  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

/// Invalid hyperparameters or option values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad or missing input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed file; carries the byte offset where parsing failed.
class ParseError : public DataError {
 public:
  ParseError(std::string module, const std::string& what, std::size_t offset)
      : DataError(std::move(module), what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A reduction or normalization hit a degenerate input (zero mean, zero variance, ...).
class DegenerateError : public DataError {
 public:
  using DataError::DataError;
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  constexpr Vec3() = default;
  constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x; y += o.y; z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x; y -= o.y; z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s; y *= s; z *= s;
    return *this;
  }
  constexpr bool operator==(const Vec3&) const = default;
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
constexpr double norm2(const Vec3& v) { return dot(v, v); }
inline double norm(const Vec3& v) { return std::sqrt(norm2(v)); }
inline Vec3 normalized(const Vec3& v) { return v / norm(v); }
constexpr Vec3 cwise_min(const Vec3& a, const Vec3& b) {
  return {a.x < b.x ? a.x : b.x, a.y < b.y ? a.y : b.y, a.z < b.z ? a.z : b.z};
}
constexpr Vec3 cwise_max(const Vec3& a, const Vec3& b) {
  return {a.x > b.x ? a.x : b.x, a.y > b.y ? a.y : b.y, a.z > b.z ? a.z : b.z};
}
inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

/// Deterministic pairwise (cascade) summation; result is independent of thread count.
double pairwise_sum(std::span<const double> values);
double pairwise_mean(std::span<const double> values);

/// 64-bit mixing function used for seed derivation.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view text);
/// Per-module seed: splitmix64(seed ^ fnv1a(module)).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view module);

// Seeded generator. Each uniform() consumes exactly one 64-bit engine output,
// so draw sequences are portable across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  /// Standard normal via Box-Muller (two uniforms per call).
  double normal();

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
};

// Thread pool knob shared by the parallel kernels. 0 means hardware concurrency.
void set_thread_count(unsigned n);
unsigned thread_count();

/// Runs body(begin, end) over static contiguous chunks of [0, n).
/// Bodies must write only to position-indexed outputs.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

// Minimal stderr logging with a process-wide verbosity.
enum class LogLevel { quiet = 0, warn = 1, info = 2, debug = 3 };
void set_log_level(LogLevel level);
LogLevel log_level();
void log_warn(std::string_view module, std::string_view message);
void log_info(std::string_view module, std::string_view message);

}  // namespace pmrt
