#pragma once

// Philox4x32-10 counter-based generator; every draw is a pure function of
// (key, counter), so path streams do not depend on scheduling.

#include <array>
#include <cmath>
#include <cstdint>

namespace cordes {

using Philox4x32 = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

inline Philox4x32 philox4x32_10(Philox4x32 ctr, PhiloxKey key) {
  constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
  constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
  for (int r = 0; r < 10; ++r) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += W0;
    key[1] += W1;
  }
  return ctr;
}

/// Uniform in the open interval (0, 1) from 53 random bits.
inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

/// Deterministic stream of standard normals and uniforms for one (seed, path, lane).
class PathStream {
public:
  PathStream(std::uint64_t seed, std::uint64_t path, std::uint32_t lane = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32) ^ lane * 0x85EBCA6Bu},
        path_(path) {}

  /// The k-th standard normal of the stream (two per Philox block, Box–Muller).
  double normal(std::uint64_t k) {
    const std::uint64_t block = k >> 1;
    if (block != cached_block_ || !have_) fill(block);
    return cache_[k & 1];
  }

  /// The k-th uniform of the stream (two per Philox block).
  double uniform(std::uint64_t k) {
    const auto r = philox4x32_10(counter(k >> 1), key_);
    return (k & 1) ? to_unit(r[2], r[3]) : to_unit(r[0], r[1]);
  }

private:
  PhiloxKey key_;
  std::uint64_t path_;
  std::uint64_t cached_block_ = 0;
  bool have_ = false;
  double cache_[2] = {0.0, 0.0};

  Philox4x32 counter(std::uint64_t block) const {
    return {static_cast<std::uint32_t>(path_), static_cast<std::uint32_t>(path_ >> 32), static_cast<std::uint32_t>(block),
            static_cast<std::uint32_t>(block >> 32)};
  }

  void fill(std::uint64_t block) {
    const auto r = philox4x32_10(counter(block), key_);
    const double u1 = to_unit(r[0], r[1]), u2 = to_unit(r[2], r[3]);
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * 3.14159265358979323846 * u2;
    cache_[0] = rad * std::cos(ang);
    cache_[1] = rad * std::sin(ang);
    cached_block_ = block;
    have_ = true;
  }
};

} // namespace cordes
