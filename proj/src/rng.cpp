#include "promos/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace promos {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng Rng::stream(std::uint64_t root_seed, std::string_view name) {
  return Rng(mix64(root_seed + 0x9e3779b97f4a7c15ULL) ^ hash_name(name)).split(0);
}

Rng Rng::split(std::string_view name) const { return Rng(mix64(key_ ^ hash_name(name)) + 1); }

Rng Rng::split(std::uint64_t index) const {
  return Rng(mix64(key_ + 0x632be59bd9b4e019ULL * (index + 1)));
}

Rng::result_type Rng::operator()() {
  const std::uint64_t c = counter_++;
  return mix64(key_ ^ mix64(c * 0x9e3779b97f4a7c15ULL + 0xd1b54a32d192ed03ULL));
}

double Rng::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: empty range");
  // Lemire's multiply-shift with rejection of the biased low zone.
  const std::uint64_t threshold = (0 - n) % n;
  while (true) {
    const unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
    if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
  }
}

bool Rng::bernoulli(double p) { return uniform() < p; }

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace promos
