#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

namespace advit {

/// Serializable generator position: the stream key plus the number of
/// 64-bit words drawn so far.
struct RngState {
  std::uint64_t key = 0;
  std::uint64_t counter = 0;

  friend bool operator==(const RngState&, const RngState&) = default;
};

/// Counter-based SplitMix64 generator.
///
/// Word k of a stream with key K is mix64(K + (k + 1) * 0x9E3779B97F4A7C15),
/// where mix64 is the SplitMix64 finalizer. The whole state is (K, k), so a
/// generator can be checkpointed and restored exactly, and independent
/// substreams are derived by hashing the parent key with a stream id. The
/// algorithm and every distribution transform below are part of the stable
/// contract: changing any of them changes every seeded run.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static Rng from_state(RngState state);
  RngState state() const { return {key_, counter_}; }

  /// Independent child stream; does not advance this generator.
  Rng substream(std::uint64_t stream_id) const;

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer on [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// true with probability p_true.
  bool bernoulli(double p_true);
  /// Standard normal via Box-Muller (two words per draw, no caching).
  double normal();
  /// Gamma(shape, 1) via Marsaglia-Tsang.
  double gamma(double shape);
  double beta(double a, double b);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace advit
