#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace kdvr {

/// Seedable random stream.
///
/// Engine: std::mt19937_64, seeded through std::seed_seq from the 64-bit
/// seed and a 64-bit stream id (both split into 32-bit words). Both the
/// engine and seed_seq are fully specified by the standard, so a
/// (seed, stream) pair names the same raw sequence everywhere; the
/// distribution adaptors below come from the standard library and are
/// reproducible for a given toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  /// Independent child stream. Deterministic in (seed, stream, id) and
  /// does not advance this stream.
  Rng substream(std::uint64_t id) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on {0, ..., n-1}; n must be positive.
  std::size_t uniform_index(std::size_t n);
  /// Uniform on [0, 1).
  double uniform01();
  double normal();

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

}  // namespace kdvr
