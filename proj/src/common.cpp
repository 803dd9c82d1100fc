#include "pmrt/common.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <iostream>
#include <numbers>
#include <thread>
#include <vector>

namespace pmrt {

namespace {

double pairwise_sum_impl(const double* data, std::size_t n) {
  constexpr std::size_t kBlock = 128;
  if (n <= kBlock) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += data[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum_impl(data, half) + pairwise_sum_impl(data + half, n - half);
}

std::atomic<unsigned> g_threads{0};
std::atomic<int> g_log_level{static_cast<int>(LogLevel::warn)};

}  // namespace

double pairwise_sum(std::span<const double> values) {
  return pairwise_sum_impl(values.data(), values.size());
}

double pairwise_mean(std::span<const double> values) {
  if (values.empty()) throw DegenerateError("common", "mean of an empty range");
  return pairwise_sum(values) / static_cast<double>(values.size());
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view module) {
  return splitmix64(seed ^ fnv1a(module));
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw ConfigError("common", "Rng::index on empty range");
  const auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
  return std::min(i, n - 1);
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void set_thread_count(unsigned n) { g_threads = n; }

unsigned thread_count() {
  const unsigned n = g_threads.load();
  if (n != 0) return n;
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t workers = std::min<std::size_t>(thread_count(), n);
  if (workers <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::exception_ptr> failures(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    const std::size_t chunk = (n + workers - 1) / workers;
    auto run = [&body, &failures](std::size_t w, std::size_t begin, std::size_t end) {
      try {
        body(begin, end);
      } catch (...) {
        failures[w] = std::current_exception();
      }
    };
    for (std::size_t w = 1; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(run, w, begin, end);
    }
    run(0, 0, std::min(n, chunk));
  }
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);
}

void set_log_level(LogLevel level) { g_log_level = static_cast<int>(level); }
LogLevel log_level() { return static_cast<LogLevel>(g_log_level.load()); }

void log_warn(std::string_view module, std::string_view message) {
  if (g_log_level.load() >= static_cast<int>(LogLevel::warn))
    std::cerr << "warning[" << module << "]: " << message << '\n';
}

void log_info(std::string_view module, std::string_view message) {
  if (g_log_level.load() >= static_cast<int>(LogLevel::info))
    std::cerr << "info[" << module << "]: " << message << '\n';
}

}  // namespace pmrt
