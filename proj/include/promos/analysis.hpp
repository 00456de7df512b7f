#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "promos/rng.hpp"

namespace promos {

/// Students with common variance v, pairwise correlation rho and common mean,
/// combined with simplex weights g.
struct EquicorrelatedEnsemble {
  std::size_t n = 2;
  double v = 1.0;
  double rho = 0.0;
  std::vector<double> g{0.5, 0.5};
  double mu_f = 0.0;
  double sigma2 = 0.0;
  double f_star = 0.0;

  /// Throws ValidationError on a non-PSD correlation or weights off the simplex.
  void validate() const;
  double weight_norm2() const;
};

/// v (rho + (1 - rho) ||g||^2).
double closed_form_variance(const EquicorrelatedEnsemble& e);
/// -v (1 - rho) (1 - ||g||^2); never positive for a valid ensemble.
double error_gap(const EquicorrelatedEnsemble& e);

struct MonteCarloResult {
  double mos_mse = 0.0;
  double single_mse = 0.0;  // student 0
  double gap = 0.0;         // mos_mse - single_mse
  double gap_se = 0.0;      // standard error of the per-trial difference
  double mos_bias = 0.0;
  double single_bias = 0.0;
  std::size_t trials = 0;
};

MonteCarloResult monte_carlo_gap(const EquicorrelatedEnsemble& e, std::size_t trials, std::uint64_t seed);

/// Lower-triangular L with L L^T = a for a PSD matrix (row-major, n x n).
/// Zero pivots yield zero columns; a clearly negative pivot throws.
std::vector<double> psd_cholesky(const std::vector<double>& a, std::size_t n);

/// N in [2, 6], rho over its full valid range, g drawn on the simplex.
EquicorrelatedEnsemble random_ensemble(Rng& rng);

}  // namespace promos
