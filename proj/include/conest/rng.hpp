#pragma once

#include <cstdint>

#include "conest/normal.hpp"

namespace conest {

namespace detail {

// SplitMix64 finalizer: a bijective 64-bit mixer with good avalanche.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

}  // namespace detail

// Counter-based generator keyed by (seed, stream).  Output i of a stream is a
// pure function of the key and i, so streams can be created in any order, on
// any thread, and always replay the same sequence.  Streams with different
// ids are statistically independent.
//
// Stream id conventions used by the simulation driver:
//   0      population response noise
//   1      stratification auxiliary noise
//   2 + r  everything specific to replication r (sampling, grouping)
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream)
      : key_(detail::mix64(detail::mix64(seed + detail::kGolden) ^
                           detail::mix64(stream * detail::kGolden + 1))) {}

  // Child stream determined by (this stream's key, tag); advancing the parent
  // afterwards does not disturb children already derived.
  RngStream derive(std::uint64_t tag) const { return RngStream(key_, tag); }

  std::uint64_t next_u64() { return detail::mix64(key_ + (counter_++) * detail::kGolden); }

  // Uniform on the open interval (0,1); never returns 0 or 1 exactly.
  double next_double() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53; }

  // Uniform integer in [0, n), n >= 1.  Multiply-shift with rejection, so the
  // distribution is exactly uniform.
  std::uint64_t next_below(std::uint64_t n) {
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      const std::uint64_t t = (0 - n) % n;
      while (lo < t) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Standard normal draw by inversion, so a stream's normal sequence is as
  // reproducible as its uniform sequence.
  double next_normal() { return normal_quantile(next_double()); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace conest
