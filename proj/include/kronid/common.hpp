#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace kronid {

/// Network dimensions: p1 modules of p2 nodes, m exogenous inputs.
/// Output channels are indexed (h,k), h in 1..p1, k in 1..p2, stacked
/// row-major so channel (h,k) sits at position (h-1)*p2 + k.
struct Dims {
  int p1 = 1;
  int p2 = 1;
  int m = 0;

  Dims() = default;
  Dims(int p1_, int p2_, int m_) : p1(p1_), p2(p2_), m(m_) {
    if (p1 < 1 || p2 < 1 || m < 0) {
      throw std::invalid_argument("Dims: require p1 >= 1, p2 >= 1, m >= 0");
    }
  }

  int channels() const { return p1 * p2; }

  // 0-based channel index for 0-based (h, k).
  int channel(int h, int k) const { return h * p2 + k; }

  bool operator==(const Dims& o) const { return p1 == o.p1 && p2 == o.p2 && m == o.m; }
};

class CholeskyError : public std::runtime_error {
 public:
  CholeskyError(const std::string& what, int channel)
      : std::runtime_error(what), channel_(channel) {}
  int channel() const { return channel_; }

 private:
  int channel_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic RNG with hand-rolled distributions so streams are
/// reproducible independent of the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}

  // Independent substream derived from (seed, stream).
  static Rng child(std::uint64_t seed, std::uint64_t stream) {
    return Rng(splitmix64(seed) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
  }

  // Uniform on (0, 1), never exactly 0 or 1.
  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double log_uniform(double a, double b) {
    return std::exp(uniform(std::log(a), std::log(b)));
  }

  // Standard normal via Box-Muller, second value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Inclusive range.
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(gen_() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  Eigen::MatrixXd normal_matrix(int rows, int cols) {
    Eigen::MatrixXd a(rows, cols);
    for (int j = 0; j < cols; ++j)
      for (int i = 0; i < rows; ++i) a(i, j) = normal();
    return a;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Thread cap: KRONID_THREADS env var, else hardware concurrency.
inline int max_threads() {
  if (const char* env = std::getenv("KRONID_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace detail {
inline bool& in_parallel_region() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

/// Runs fn(0..n-1) on up to max_threads() workers. Results must be written
/// to per-index slots; merge order is the caller's, so output stays
/// deterministic regardless of scheduling. Nested calls run serially.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(n, max_threads());
  if (workers <= 1 || detail::in_parallel_region()) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      detail::in_parallel_region() = true;
      for (int i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
      detail::in_parallel_region() = false;
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Type-7 quantile (linear interpolation), the convention used in all
/// summary outputs.
inline double quantile_type7(std::vector<double> xs, double p) {
  if (xs.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(xs.begin(), xs.end());
  const double h = (static_cast<double>(xs.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline double median(std::vector<double> xs) { return quantile_type7(std::move(xs), 0.5); }

}  // namespace kronid
