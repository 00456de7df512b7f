#include "promos/analysis.hpp"

#include <cmath>
#include <string>

#include "promos/error.hpp"

namespace promos {

void EquicorrelatedEnsemble::validate() const {
  if (n < 1) throw ValidationError("ensemble: need at least one student");
  if (g.size() != n) throw ValidationError("ensemble: weight vector length must equal N");
  if (!(v >= 0.0)) throw ValidationError("ensemble: variance must be non-negative");
  if (!(sigma2 >= 0.0)) throw ValidationError("ensemble: noise variance must be non-negative");
  const double lower = n > 1 ? -1.0 / static_cast<double>(n - 1) : -1.0;
  if (!(rho >= lower - 1e-12 && rho <= 1.0)) {
    throw ValidationError("ensemble: rho=" + std::to_string(rho) + " outside [" + std::to_string(lower) +
                          ", 1]; covariance would not be PSD");
  }
  double s = 0.0;
  for (double w : g) {
    if (w < 0.0) throw ValidationError("ensemble: weights must be non-negative");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ValidationError("ensemble: weights must sum to 1");
}

double EquicorrelatedEnsemble::weight_norm2() const {
  double s = 0.0;
  for (double w : g) s += w * w;
  return s;
}

double closed_form_variance(const EquicorrelatedEnsemble& e) {
  e.validate();
  return e.v * (e.rho + (1.0 - e.rho) * e.weight_norm2());
}

double error_gap(const EquicorrelatedEnsemble& e) {
  e.validate();
  return -e.v * (1.0 - e.rho) * (1.0 - e.weight_norm2());
}

std::vector<double> psd_cholesky(const std::vector<double>& a, std::size_t n) {
  std::vector<double> l(n * n, 0.0);
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(a[i * n + i]));
  const double tol = 1e-12 * std::max(scale, 1.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (d < -tol) throw ValidationError("cholesky: matrix is not positive semidefinite");
    if (d <= tol) continue;  // zero column
    const double ljj = std::sqrt(d);
    l[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / ljj;
    }
  }
  return l;
}

MonteCarloResult monte_carlo_gap(const EquicorrelatedEnsemble& e, std::size_t trials, std::uint64_t seed) {
  e.validate();
  if (trials < 1) throw ValidationError("monte_carlo_gap: trials must be >= 1");
  const std::size_t n = e.n;
  std::vector<double> cov(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cov[i * n + j] = i == j ? e.v : e.v * e.rho;
  const auto l = psd_cholesky(cov, n);
  const double sigma = std::sqrt(e.sigma2);

  Rng rng = Rng::stream(seed, "theorem");
  std::vector<double> z(n), f(n);
  double mos_sq = 0.0, single_sq = 0.0, diff_sum = 0.0, diff_sq = 0.0, mos_err = 0.0, single_err = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (auto& x : z) x = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
      double s = e.mu_f;
      for (std::size_t k = 0; k <= i; ++k) s += l[i * n + k] * z[k];
      f[i] = s;
    }
    const double y = e.f_star + sigma * rng.normal();
    double mos = 0.0;
    for (std::size_t i = 0; i < n; ++i) mos += e.g[i] * f[i];
    const double em = mos - y, es = f[0] - y;
    mos_sq += em * em;
    single_sq += es * es;
    mos_err += mos - e.f_star;
    single_err += f[0] - e.f_star;
    const double d = em * em - es * es;
    diff_sum += d;
    diff_sq += d * d;
  }
  const double T = static_cast<double>(trials);
  MonteCarloResult r;
  r.trials = trials;
  r.mos_mse = mos_sq / T;
  r.single_mse = single_sq / T;
  r.gap = diff_sum / T;
  const double var = trials > 1 ? std::max(0.0, (diff_sq - T * r.gap * r.gap) / (T - 1.0)) : 0.0;
  r.gap_se = std::sqrt(var / T);
  r.mos_bias = mos_err / T;
  r.single_bias = single_err / T;
  return r;
}

EquicorrelatedEnsemble random_ensemble(Rng& rng) {
  EquicorrelatedEnsemble e;
  e.n = 2 + static_cast<std::size_t>(rng.below(5));
  e.v = rng.uniform(0.1, 3.0);
  const double lower = -1.0 / static_cast<double>(e.n - 1);
  e.rho = rng.uniform(lower, 1.0);
  e.g.assign(e.n, 0.0);
  double s = 0.0;
  for (auto& w : e.g) {
    w = -std::log(1.0 - rng.uniform());
    s += w;
  }
  for (auto& w : e.g) w /= s;
  e.mu_f = rng.uniform(-2.0, 2.0);
  e.f_star = e.mu_f + rng.uniform(-1.0, 1.0);
  e.sigma2 = rng.uniform(0.0, 1.0);
  return e;
}

}  // namespace promos
