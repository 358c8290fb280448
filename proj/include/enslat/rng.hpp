#pragma once

#include <cstdint>
#include <vector>

namespace enslat {

// Seedable counter-free generator (xoshiro256++) with deterministic
// sub-stream derivation. A stream is fully determined by its root seed and
// fork keys, so sub-streams for distinct purposes never depend on how much
// of any other stream was consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Derives an independent stream keyed on (a, b) from this stream's root
  // seed. fork(a) and fork(a, b) with distinct keys give distinct streams.
  Rng fork(std::uint64_t a, std::uint64_t b = 0) const;

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform01();

  // Standard normal via Box-Muller; consumes two uniforms per call.
  double normal();

  // Unbiased integer on [0, n).
  std::uint64_t below(std::uint64_t n);

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t s_[4] = {0, 0, 0, 0};
};

}  // namespace enslat
