#ifndef COPT_RNG_HPP
#define COPT_RNG_HPP

#include <cstdint>
#include <random>

namespace copt {

/// Seeded random stream. Identical (seed, stream_id) pairs reproduce identical
/// draws on every platform: all distributions are derived from raw mt19937_64
/// output here rather than through std:: distribution objects, whose results
/// are implementation-defined.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01();

  /// Uniform integer in [0, n). Unbiased (rejection); n must be >= 1.
  std::uint64_t uniform_int(std::uint64_t n);

  /// Standard normal via Box-Muller on raw uniforms.
  double normal();

  /// Derive a statistically independent child stream. Children with distinct
  /// ids are independent of each other and of the parent's remaining draws.
  RngStream split(std::uint64_t child_id) const;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::mt19937_64 eng_;
};

/// splitmix64 finalizer; used for seed/stream mixing and stable hashing.
std::uint64_t mix64(std::uint64_t x);

/// FNV-1a over a byte range.
std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace copt

#endif
