#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "promos/rng.hpp"

using promos::Rng;

TEST_CASE("streams are reproducible and independent") {
  Rng a = Rng::stream(42, "mask"), b = Rng::stream(42, "mask"), c = Rng::stream(42, "kmeans-g");
  bool differs = false;
  for (int i = 0; i < 16; ++i) {
    const auto x = a(), y = b(), z = c();
    CHECK(x == y);
    differs = differs || x != z;
  }
  CHECK(differs);
  CHECK(Rng::stream(1, "mask").key() != Rng::stream(2, "mask").key());
  CHECK(Rng(5).split("a").key() != Rng(5).split("b").key());
  CHECK(Rng(5).split(std::uint64_t{0}).key() != Rng(5).split(std::uint64_t{1}).key());
}

TEST_CASE("uniform moments and range") {
  Rng r(7);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    s += u;
    s2 += u * u;
  }
  CHECK(s / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(s2 / n - (s / n) * (s / n) == doctest::Approx(1.0 / 12.0).epsilon(0.02));
}

TEST_CASE("normal moments") {
  Rng r(11);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("below is unbiased over a small range and rejects zero") {
  Rng r(3);
  std::vector<int> counts(6, 0);
  for (int i = 0; i < 60000; ++i) ++counts[r.below(6)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);
  CHECK_THROWS(r.below(0));
}

TEST_CASE("sample_without_replacement yields distinct indices") {
  Rng r(9);
  auto s = r.sample_without_replacement(50, 20);
  CHECK(s.size() == 20);
  CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 20);
  for (auto v : s) CHECK(v < 50);
  auto all = Rng(9).sample_without_replacement(10, 10);
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(all[i] == i);
  CHECK_THROWS(r.sample_without_replacement(3, 4));
}
