#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ilnet {

// Deterministic random source. All distributions are derived from raw
// mt19937 words by hand so that streams are identical across standard
// library implementations, not just across runs of the same binary.
class RandomSource {
 public:
  explicit RandomSource(uint64_t seed)
      : seed_(seed), gen_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

  // uniform in [0,1)
  float uniform() {
    return static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f);
  }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  uint32_t next_below(uint32_t n) {
    // rejection sampling keeps the distribution exact
    uint32_t limit = UINT32_MAX - UINT32_MAX % n;
    uint32_t v;
    do {
      v = gen_();
    } while (v >= limit);
    return v % n;
  }

  int range_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(next_below(static_cast<uint32_t>(hi - lo + 1)));
  }

  float gaussian() {
    // Box-Muller, cached pair
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    float u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 1e-12f);
    u2 = uniform();
    float mag = std::sqrt(-2.0f * std::log(u1));
    spare_ = mag * std::sin(6.2831853071795864769f * u2);
    has_spare_ = true;
    return mag * std::cos(6.2831853071795864769f * u2);
  }

  // split off an independent stream, e.g. one per dataset sample
  RandomSource fork(uint64_t stream) const {
    uint64_t s = (seed_ + 0x9e3779b97f4a7c15ull) * 0xbf58476d1ce4e5b9ull;
    s ^= stream + 0x94d049bb133111ebull;
    s *= 0xff51afd7ed558ccdull;
    s ^= s >> 33;
    return RandomSource(s);
  }

 private:
  uint64_t seed_;
  std::mt19937 gen_;
  float spare_ = 0.0f;
  bool has_spare_ = false;
};

}  // namespace ilnet
