#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "chaosgrad/core/error.hpp"
#include "chaosgrad/core/linalg.hpp"
#include "chaosgrad/core/rng.hpp"

namespace chaosgrad::systems {

/// d_k = prod_{i=1..k} det(A_i), entries of every A_i drawn i.i.d. N(0, sigma^2).
struct GaussianMatrixConfig {
  std::size_t n = 2;
  double sigma = 1.0;
  std::size_t k = 1;
  std::size_t samples = 100000;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1) throw DomainError("GaussianMatrixConfig: n must be at least 1");
    if (!(sigma > 0.0)) throw DomainError("GaussianMatrixConfig: sigma must be positive");
    if (k < 1) throw DomainError("GaussianMatrixConfig: k must be at least 1");
    if (samples < 1) throw DomainError("GaussianMatrixConfig: samples must be at least 1");
  }
};

struct DeterminantProductStats {
  double mean = 0.0;
  double variance = 0.0;         // unbiased sample variance of d_k
  double variance_stderr = 0.0;  // standard error of `variance`
  double mean_stderr = 0.0;      // sqrt(variance / samples)
  double paper_formula = 0.0;    // 4^k sigma^(4k)
  double oracle_formula = 0.0;   // (n! sigma^(2n))^k = E[d_k^2]
};

inline double factorial(std::size_t n) {
  double f = 1.0;
  for (std::size_t i = 2; i <= n; ++i) f *= static_cast<double>(i);
  return f;
}

/// Second moment of d_k under the claimed closed form 4^k sigma^(4k).
inline double determinant_variance_paper_formula(std::size_t k, double sigma) {
  return std::pow(4.0, static_cast<double>(k)) * std::pow(sigma, 4.0 * static_cast<double>(k));
}

/// E[det(A)^2] = n! sigma^(2n) for one n x n Gaussian matrix, so
/// E[d_k^2] = (n! sigma^(2n))^k by independence.
inline double determinant_variance_oracle(std::size_t n, std::size_t k, double sigma) {
  return std::pow(factorial(n) * std::pow(sigma, 2.0 * static_cast<double>(n)),
                  static_cast<double>(k));
}

/// Monte Carlo over `samples` independent draws of d_k. Sample j consumes the
/// RNG stream (seed, j), so any subset of samples is reproducible on its own.
inline DeterminantProductStats gaussian_determinant_product(const GaussianMatrixConfig& c) {
  c.validate();
  std::vector<double> d(c.samples);
  Matrix a(c.n, c.n);
  for (std::size_t j = 0; j < c.samples; ++j) {
    const CounterRng rng(c.seed, j);
    std::uint64_t counter = 0;
    double prod = 1.0;
    for (std::size_t f = 0; f < c.k; ++f) {
      for (double& x : a.data()) x = c.sigma * rng.normal_at(counter++);
      prod *= c.n == 2 ? a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0) : determinant(a);
    }
    d[j] = prod;
  }

  DeterminantProductStats st;
  const double count = static_cast<double>(c.samples);
  double sum = 0.0;
  for (double x : d) sum += x;
  st.mean = sum / count;
  double m2 = 0.0, m4 = 0.0;
  for (double x : d) {
    const double e = (x - st.mean) * (x - st.mean);
    m2 += e;
    m4 += e * e;
  }
  st.variance = c.samples > 1 ? m2 / (count - 1.0) : 0.0;
  const double m2n = m2 / count;
  const double m4n = m4 / count;
  st.variance_stderr = std::sqrt(std::max(0.0, m4n - m2n * m2n) / count);
  st.mean_stderr = std::sqrt(st.variance / count);
  st.paper_formula = determinant_variance_paper_formula(c.k, c.sigma);
  st.oracle_formula = determinant_variance_oracle(c.n, c.k, c.sigma);
  return st;
}

}  // namespace chaosgrad::systems
