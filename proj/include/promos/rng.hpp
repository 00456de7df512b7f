#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string_view>
#include <vector>

namespace promos {

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_name(std::string_view name);

/// Counter-based random stream. Output k is a pure function of (key, k), so
/// substreams derived by name never depend on how much of a sibling stream was
/// consumed. Distributions are implemented here rather than with <random> so
/// draws are identical across standard libraries.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t key) : key_(key) {}

  /// Named substream of a root seed ("teacher-init", "mask", "kmeans-g", ...).
  static Rng stream(std::uint64_t root_seed, std::string_view name);

  Rng split(std::string_view name) const;
  Rng split(std::uint64_t index) const;

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal();                       // standard normal, Box-Muller
  std::uint64_t below(std::uint64_t n);  // [0, n)
  bool bernoulli(double p);

  /// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace promos
