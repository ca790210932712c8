#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ctdx {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Deterministic random source. The distribution transforms are implemented
// here instead of using <random> distributions because the standard leaves
// their algorithms implementation-defined; this way the same seed yields the
// same corpus and the same training run on any toolchain.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();

  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  int uniform_int(int lo, int hi);         // inclusive range
  double normal();                         // standard normal
  double gamma(double shape);              // shape > 0, unit scale
  double beta(double a, double b);

  // Independent deterministic substream. Depends only on the construction
  // seed and the stream id, not on how many draws happened on this object.
  Rng fork(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i)));
      std::swap(v[i], v[j]);
    }
  }

private:
  std::uint64_t seed_ = 0;
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ctdx
