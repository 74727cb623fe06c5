#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace pff {

/// Counter-based generator (Philox4x32-10). The output stream is a pure
/// function of (seed, stream, counter), so any implementation of the same
/// algorithm reproduces it bit-for-bit.
class CounterRng {
 public:
  static constexpr std::string_view kName = "philox4x32-10/v1";

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (the spare value is cached).
  double normal();

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// FNV-1a 64-bit; used to turn labels into stream ids.
std::uint64_t fnv1a64(std::string_view text);

/// Child seed for a labelled sub-task (per shape, per epoch, ...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index = 0);

/// One Philox4x32-10 block; exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

}  // namespace pff
