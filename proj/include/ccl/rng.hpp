#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ccl {

// splitmix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Folds a sequence of words into one seed. Order matters.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t s = splitmix64(base);
  for (auto p : parts) s = splitmix64(s ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  return s;
}

using Rng = std::mt19937_64;

// Per-purpose seeds expanded from one master seed.
// 
// Stream i is splitmix64 applied i+1 times to the master seed, walking the
// usual splitmix state increment. Purposes are fixed in the order below so
// that adding a purpose later never changes existing ones.
struct SeedStreams {
  std::uint64_t init0 = 0;
  std::uint64_t init1 = 0;
  std::uint64_t noise = 0;
  std::uint64_t shuffle = 0;
  std::uint64_t augment = 0;
  std::uint64_t data = 0;
  std::uint64_t metrics = 0;

  static SeedStreams from_master(std::uint64_t master) {
    SeedStreams s;
    std::uint64_t state = master;
    auto next = [&state] {
      state += 0x9E3779B97F4A7C15ULL;
      std::uint64_t z = state;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
      return z ^ (z >> 31);
    };
    s.init0 = next();
    s.init1 = next();
    s.noise = next();
    s.shuffle = next();
    s.augment = next();
    s.data = next();
    s.metrics = next();
    return s;
  }
};

}  // namespace ccl
