#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace gemini {

/// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates an operation's precondition (bad image size, empty list, ...).
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

/// Configuration or manifest problem detected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// No valid positive/negative can be drawn for a class.
class SamplingError : public Error {
 public:
  using Error::Error;
};

/// Tensor or vector dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

// Independent random stream keyed by (seed, stream ids). Every sampling and
// initialization site derives its own stream so that results never depend
// on the order in which unrelated components consumed randomness.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream_a = 0, std::uint64_t stream_b = 0,
                    std::uint64_t stream_c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream_a), static_cast<std::uint32_t>(stream_a >> 32),
                    static_cast<std::uint32_t>(stream_b), static_cast<std::uint32_t>(stream_b >> 32),
                    static_cast<std::uint32_t>(stream_c), static_cast<std::uint32_t>(stream_c >> 32)};
  return Rng(seq);
}

// Stream tags, so call sites don't collide by accident.
namespace stream {
inline constexpr std::uint64_t kSynthetic = 0x5359'4e54;
inline constexpr std::uint64_t kSplit = 0x5350'4c54;
inline constexpr std::uint64_t kTriplets = 0x5452'4950;
inline constexpr std::uint64_t kPairs = 0x5041'4952;
inline constexpr std::uint64_t kInit = 0x494e'4954;
inline constexpr std::uint64_t kBatch = 0x4241'5443;
inline constexpr std::uint64_t kFusion = 0x4655'5345;
inline constexpr std::uint64_t kEval = 0x4556'414c;
}  // namespace stream

// Uniform integer in [0, n). std::uniform_int_distribution is fine here: the
// toolchain is fixed per build, and reproducibility is a same-binary contract.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace gemini
