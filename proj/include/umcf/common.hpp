#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace umcf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments, inconsistent shapes, invalid configuration. CLI exit 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Unreadable, malformed or truncated files. CLI exit 2.
class IoError : public Error {
 public:
  using Error::Error;
};

// Norms below this collapse to the flagged zero-fallback vector.
inline constexpr double kNormEps = 1e-12;

// Probability mass below this marks a class as degenerate.
inline constexpr double kMassEps = 1e-8;

// Seed shared by every embedding projection unless the caller overrides it.
inline constexpr std::uint64_t kDefaultProjectionSeed = 7;

// Worker count: UMCF_THREADS if set, hardware concurrency otherwise.
// Results never depend on it; it only caps parallel_for fan-out.
std::size_t thread_count();

namespace detail {
inline constexpr std::size_t kPairwiseLeaf = 64;
}

// Deterministic tree reduction over term(i), i in [begin, end).
// The split points depend only on the range, never on the worker count.
template <typename Term>
double pairwise_sum_of(std::size_t begin, std::size_t end, Term&& term) {
  const std::size_t n = end - begin;
  if (n <= detail::kPairwiseLeaf) {
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += term(i);
    return s;
  }
  const std::size_t mid = begin + n / 2;
  return pairwise_sum_of(begin, mid, term) + pairwise_sum_of(mid, end, term);
}

inline double pairwise_sum(const double* v, std::size_t n) {
  return pairwise_sum_of(0, n, [v](std::size_t i) { return v[i]; });
}

inline double pairwise_sum(const std::vector<double>& v) {
  return pairwise_sum(v.data(), v.size());
}

// Runs fn(begin, end) over disjoint contiguous chunks of [0, n).
// Every element is computed by exactly one worker with the same inner
// arithmetic, so outputs are bit-identical for any thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  if (n == 0) return;
  std::size_t workers = thread_count();
  workers = std::min(workers, std::max<std::size_t>(n / 2048, 1));
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t i = 1; i < workers; ++i) {
    const std::size_t b = std::min(i * chunk, n);
    const std::size_t e = std::min(b + chunk, n);
    if (b < e) pool.emplace_back(fn, b, e);
  }
  fn(std::size_t{0}, std::min(chunk, n));
  for (auto& t : pool) t.join();
}

}  // namespace umcf
