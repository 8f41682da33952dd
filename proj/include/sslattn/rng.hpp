#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

namespace sslattn {

// Seedable random stream. Streams are derived from a tuple of integers
// (global seed, epoch, sample index, purpose tag, ...) so that results do not
// depend on which worker thread produced them.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static Rng derive(std::initializer_list<std::uint64_t> parts);

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return p > 0.0 && uniform() < p; }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::string serialize() const;
  void deserialize(const std::string& state);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Purpose tags for derived streams.
enum class Stream : std::uint64_t {
  shuffle = 1,
  views = 2,
  positives = 3,
  positive_views = 4,
  kmeans = 5,
  subset = 6,
  probe = 7,
};

}  // namespace sslattn
