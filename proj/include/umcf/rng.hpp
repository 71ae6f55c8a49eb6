#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace umcf {

// Deterministic random source. mt19937_64 is fully specified by the
// standard and doubles are derived from raw bits, so sequences are
// reproducible across compilers and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // [-1, 1)
  double uniform_sym() { return 2.0 * uniform() - 1.0; }

  // Box-Muller; keeps the spare sample so consumption stays sequential.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace umcf
