#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace labelprop {

// ---------------------------------------------------------------------------
// Error hierarchy. Validation failures throw; callers that need exit codes
// (the CLI) translate Error -> 1 and NonFiniteValueError -> 2.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : Error {
  using Error::Error;
};
struct MissingTokenError : Error {
  explicit MissingTokenError(const std::string& label)
      : Error("missing token for label: " + label) {}
};
struct DimensionMismatchError : Error {
  using Error::Error;
};
struct IndexOutOfRangeError : Error {
  using Error::Error;
};
struct UnknownConceptError : Error {
  explicit UnknownConceptError(const std::string& c)
      : Error("unknown concept: " + c) {}
};
struct UnmappedLabelError : Error {
  explicit UnmappedLabelError(const std::string& l)
      : Error("label has no taxonomy concept: " + l) {}
};
struct UnknownLabelError : Error {
  explicit UnknownLabelError(const std::string& l)
      : Error("unknown label: " + l) {}
};
struct DuplicateNameError : Error {
  explicit DuplicateNameError(const std::string& n)
      : Error("duplicate name: " + n) {}
};
struct NonFiniteValueError : Error {
  using Error::Error;
};
struct ProbabilityOutOfRangeError : Error {
  using Error::Error;
};
struct InvalidConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. std::mt19937_64 output is pinned by the standard; the
// distributions are not, so doubles are derived from raw bits directly and
// normals via Box-Muller. Streams are therefore reproducible across
// platforms and standard-library versions.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1): 53 mantissa bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Standard normal via Box-Muller; consumes two uniforms per pair.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Derives an independent stream seed; used to keep the synthetic generator's
// stages decoupled (adding labels must not reshuffle feature noise).
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

// ---------------------------------------------------------------------------
// FNV-1a 64-bit, used for manifest provenance hashes.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Shortest-exact decimal: %.17g always round-trips a finite double.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw NonFiniteValueError(std::string("non-finite value in ") + what);
  }
}

}  // namespace labelprop
