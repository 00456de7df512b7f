#include "promos/synthetic.hpp"

#include <cmath>
#include <vector>

#include "promos/error.hpp"
#include "promos/rng.hpp"

namespace promos {

Graph generate_sbm(const SbmSpec& spec) {
  if (spec.nodes == 0 || spec.blocks == 0 || spec.feature_dim == 0) {
    throw ValidationError("generate_sbm: nodes, blocks and feature_dim must be positive");
  }
  if (spec.p_in < 0 || spec.p_in > 1 || spec.p_out < 0 || spec.p_out > 1) {
    throw ValidationError("generate_sbm: edge probabilities must lie in [0, 1]");
  }
  const std::size_t n = spec.nodes, d = spec.feature_dim;

  Rng mean_rng = Rng::stream(spec.mean_seed, "sbm-means");
  std::vector<std::vector<double>> means(spec.blocks, std::vector<double>(d));
  for (auto& m : means) {
    double s = 0.0;
    for (double& v : m) {
      v = mean_rng.normal();
      s += v * v;
    }
    const double f = spec.mean_scale / std::sqrt(s);
    for (double& v : m) v *= f;
  }

  // Geometric skipping over the upper triangle keeps generation O(n + |E|).
  Rng edge_rng = Rng::stream(spec.seed, "sbm-edges");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  const std::size_t b = spec.blocks;
  for (std::size_t u = 0; u < n; ++u) {
    const std::size_t later = n - 1 - u;
    const std::size_t same_count = later / b;
    for (int same = 1; same >= 0; --same) {
      const double p = same ? spec.p_in : spec.p_out;
      const std::size_t count = same ? same_count : later - same_count;
      if (p <= 0.0 || count == 0) continue;
      // t-th candidate offset: same block -> b*(t+1); other blocks -> skip multiples of b.
      auto offset = [&](std::size_t t) { return same ? b * (t + 1) : t + t / (b - 1) + 1; };
      const double log_q = p >= 1.0 ? 0.0 : std::log1p(-p);
      std::size_t t = 0;
      while (true) {
        if (p < 1.0) {
          const double r = 1.0 - edge_rng.uniform();
          t += static_cast<std::size_t>(std::floor(std::log(r) / log_q));
        }
        if (t >= count) break;
        edges.emplace_back(static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(u + offset(t)));
        ++t;
      }
    }
  }

  Rng noise_rng = Rng::stream(spec.seed, "sbm-features");
  const double sigma = spec.noise / std::sqrt(static_cast<double>(d));
  Tensor x = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = means[sbm_block(i, spec.blocks)];
    for (std::size_t c = 0; c < d; ++c) x(i, c) = m[c] + sigma * noise_rng.normal();
  }
  return Graph::from_edges(spec.name, n, edges, std::move(x));
}

}  // namespace promos
