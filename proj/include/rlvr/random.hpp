#pragma once

#include <cstdint>
#include <limits>

namespace rlvr {

// Purpose tags that keep the different consumers of a master seed on
// disjoint streams.
enum class StreamDomain : std::uint64_t {
  batch = 1,
  metrics = 2,
  estimate = 3,
  verify = 4,
  replicate = 5,
};

namespace detail {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// SplitMix64 engine. Satisfies std::uniform_random_bit_generator; cheap to
/// construct, so every batch slot can own a fresh stream.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit constexpr Rng(std::uint64_t seed) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return detail::mix64(state_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  constexpr bool bernoulli(double p) noexcept { return uniform() < p; }

  constexpr std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift; the bias is < n / 2^64 and irrelevant here.
    __extension__ using u128 = unsigned __int128;
    return static_cast<std::uint64_t>((static_cast<u128>((*this)()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

/// Derives an independent stream from (master seed, domain, iteration, index).
/// The result depends only on these values, never on scheduling.
constexpr Rng stream(std::uint64_t master_seed, StreamDomain domain, std::uint64_t iteration,
                     std::uint64_t index) noexcept {
  std::uint64_t h = detail::mix64(master_seed ^ 0x6a09e667f3bcc909ULL);
  h = detail::mix64(h ^ static_cast<std::uint64_t>(domain));
  h = detail::mix64(h ^ (iteration * 0x9e3779b97f4a7c15ULL));
  h = detail::mix64(h ^ (index + 0x3c6ef372fe94f82bULL));
  return Rng(h);
}

/// Master seed of one (grid point, replicate) job inside a sweep.
constexpr std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t grid_index,
                                    std::uint64_t replicate) noexcept {
  return stream(master_seed, StreamDomain::replicate, grid_index, replicate)();
}

}  // namespace rlvr
