#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mgoe {

// Error hierarchy. Everything user-facing throws one of these; the CLI maps
// them to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

using RawId = std::int64_t;

namespace detail {

// Engine-portable uniforms: std::uniform_*_distribution is implementation
// defined, so seeded runs would not reproduce across standard libraries.
inline double rand_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double rand_range(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * rand_unit(rng);
}

// Unbiased integer in [0, n) by rejection.
inline std::uint64_t rand_index(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw Error("rand_index: empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

}  // namespace detail

}  // namespace mgoe
