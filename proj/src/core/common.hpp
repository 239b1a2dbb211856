#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmr {

// Contract violations (bad dimensions, invalid arguments, broken invariants).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// File / serialization problems.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent configuration.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

#define MMR_REQUIRE(cond, msg)                         \
  do {                                                 \
    if (!(cond)) throw ::mmr::ContractError(msg);      \
  } while (0)

inline constexpr double kPi = 3.14159265358979323846;

// Normalize an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Deterministic RNG. All randomness in the system flows from one base seed
// through named sub-streams so that components can be replayed in isolation.
// Distribution transforms are hand-rolled on top of mt19937_64 (whose output
// sequence is fully specified) so results are identical across platforms.
class Rng {
 public:
  Rng() : engine_(0), seed_(0) {}
  explicit Rng(uint64_t seed) : engine_(seed), seed_(seed) {}
  Rng(uint64_t base_seed, const std::string& stream)
      : Rng(base_seed ^ fnv1a64(stream)) {}

  // Derives an independent child stream without disturbing this one.
  Rng stream(const std::string& name) const {
    return Rng(seed_ ^ fnv1a64(name) ^ 0x9e3779b97f4a7c15ULL);
  }

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) {  // [0, n)
    MMR_REQUIRE(n > 0, "uniform_int: n must be positive");
    return static_cast<int>(uniform() * n) % n;
  }

  // Box-Muller; one value per call, spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * kPi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  // Inverse-CDF sample over unnormalized nonnegative weights.
  int categorical(const std::vector<double>& w) {
    double total = 0.0;
    for (double x : w) total += x;
    MMR_REQUIRE(total > 0.0, "categorical: weights sum to zero");
    double u = uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
      acc += w[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(w.size()) - 1;
  }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mmr
