#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sbs {

using Index = std::int64_t;

enum class Phase { Train, Eval };

/// Shape mismatches between tensors or between a tensor and an operation.
class ShapeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameter values, degenerate inputs, contract violations.
class ValueError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// File system and format failures; the message names the offending path.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Mismatched experiment grids (fold/seed layouts that should agree).
class ConsistencyError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void str_append(std::ostringstream&) {}

template <class T, class... Rest>
void str_append(std::ostringstream& os, const T& head, const Rest&... rest) {
  os << head;
  str_append(os, rest...);
}

}  // namespace detail

template <class... Args>
std::string str(const Args&... args) {
  std::ostringstream os;
  detail::str_append(os, args...);
  return os.str();
}

// splitmix64; used to derive independent seeds from (root, tag, indices).
inline std::uint64_t seed_mix(std::uint64_t state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t seed_combine(std::uint64_t a, std::uint64_t b) {
  return seed_mix(a ^ (seed_mix(b) + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

inline std::uint64_t tag_hash(std::string_view tag) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives a child seed from a root seed, a purpose tag, and indices.
/// Distinct tags yield decoupled random streams, so e.g. toggling shake
/// does not perturb the dropout or data-order draws.
template <class... Ids>
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, Ids... ids) {
  std::uint64_t h = seed_combine(root, tag_hash(tag));
  ((h = seed_combine(h, static_cast<std::uint64_t>(ids))), ...);
  return h;
}

/// Deterministic random stream. All distributions are implemented on top of
/// raw 64-bit draws so results are reproducible across standard libraries.
class RandomStream {
public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Unit-rate exponential draw.
  double exponential() { return -std::log1p(-uniform01()); }

  /// Standard normal via Box-Muller (pair cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    // avoid log(0)
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw ValueError("uniform_int: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace sbs
