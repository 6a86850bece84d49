#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgelab {

// All randomness in the library flows through this generator so that runs are
// reproducible bit-for-bit across platforms. The std:: distributions are
// implementation-defined, so uniform/normal/categorical draws are derived
// from raw bits here instead.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform integer in [0, n)
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // Box-Muller; one draw per call, the spare is kept.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = next_double();
    double u2 = next_double();
    double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return mag * std::cos(2.0 * M_PI * u2);
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Stateless hash mix used to derive per-task/per-step constants.
inline uint64_t hash_mix(uint64_t a, uint64_t b) {
  uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct InvariantViolation : std::runtime_error {
  explicit InvariantViolation(const std::string& name)
      : std::runtime_error("invariant violation: " + name), which(name) {}
  std::string which;
};

struct DimensionMismatch : std::runtime_error {
  explicit DimensionMismatch(const std::string& what)
      : std::runtime_error("dimension mismatch: " + what) {}
};

struct NonpositiveTemperature : std::runtime_error {
  NonpositiveTemperature() : std::runtime_error("temperature must be > 0") {}
};

// Fixed float formatting shared by every CSV/JSON artifact writer so that a
// (config, seed) pair reproduces identical bytes.
inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::string(buf);
}

inline int worker_count() {
  const char* s = std::getenv("SGELAB_THREADS");
  if (!s) return 1;
  int n = std::atoi(s);
  return n > 0 ? n : 1;
}

}  // namespace sgelab
