#pragma once

// Unconstrained parameterizations of covariance matrices, written once for
// plain doubles and for autodiff scalars.

#include <cmath>
#include <span>
#include <vector>

#include "votacast/inference/autodiff.hpp"

namespace votacast::inference {

using ad::value_of;

/// Dense row-major K x K lower-triangular factor.
template <class T>
struct Cholesky {
  std::size_t k = 0;
  std::vector<T> l;  // k * k, upper part zero

  explicit Cholesky(std::size_t n = 0) : k(n), l(n * n, T(0.0)) {}
  T& operator()(std::size_t i, std::size_t j) { return l[i * k + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return l[i * k + j]; }
};

inline std::size_t cpc_count(std::size_t k) { return k * (k - 1) / 2; }

/// Maps y in R^{K(K-1)/2} to the Cholesky factor of a correlation matrix via
/// canonical partial correlations z = tanh(y). Adds log|d L / d y| to
/// log_jacobian.
template <class T>
Cholesky<T> corr_cholesky_from_unconstrained(std::span<const T> y, std::size_t k, T& log_jacobian) {
  using std::log, std::sqrt, std::tanh;
  using ad::log, ad::sqrt, ad::tanh;
  Cholesky<T> out(k);
  if (k == 0) return out;
  out(0, 0) = T(1.0);
  std::size_t at = 0;
  for (std::size_t i = 1; i < k; ++i) {
    T sum_sq(0.0);
    for (std::size_t j = 0; j < i; ++j) {
      const T z = tanh(y[at++]);
      log_jacobian += log(1.0 - z * z);
      if (j == 0) {
        out(i, j) = z;
      } else {
        const T rest = 1.0 - sum_sq;
        log_jacobian += 0.5 * log(rest);
        out(i, j) = z * sqrt(rest);
      }
      sum_sq += out(i, j) * out(i, j);
    }
    out(i, i) = sqrt(1.0 - sum_sq);
  }
  return out;
}

/// log LKJ(eta) density of the correlation matrix, expressed on its
/// Cholesky factor (up to a constant).
template <class T>
T lkj_corr_cholesky_log_density(const Cholesky<T>& l, double eta) {
  using std::log;
  using ad::log;
  T lp(0.0);
  const double k = static_cast<double>(l.k);
  for (std::size_t r = 1; r < l.k; ++r)
    lp += (k - static_cast<double>(r) - 1.0 + 2.0 * eta - 2.0) * log(l(r, r));
  return lp;
}

/// Cholesky factor of diag(scale) * Omega * diag(scale).
template <class T>
Cholesky<T> scale_rows(const Cholesky<T>& corr, std::span<const T> scale) {
  Cholesky<T> out(corr.k);
  for (std::size_t i = 0; i < corr.k; ++i)
    for (std::size_t j = 0; j <= i; ++j) out(i, j) = scale[i] * corr(i, j);
  return out;
}

/// Full matrix L * L^T.
template <class T>
std::vector<T> multiply_transpose(const Cholesky<T>& l) {
  std::vector<T> out(l.k * l.k, T(0.0));
  for (std::size_t i = 0; i < l.k; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      T s(0.0);
      for (std::size_t m = 0; m <= j; ++m) s += l(i, m) * l(j, m);
      out[i * l.k + j] = s;
      out[j * l.k + i] = s;
    }
  return out;
}

/// Cholesky decomposition of a small dense symmetric matrix; returns false
/// when it is not numerically positive definite.
template <class T>
bool cholesky_decompose(const std::vector<T>& a, std::size_t k, Cholesky<T>& out) {
  using std::sqrt;
  using ad::sqrt;
  out = Cholesky<T>(k);
  for (std::size_t j = 0; j < k; ++j) {
    T d = a[j * k + j];
    for (std::size_t m = 0; m < j; ++m) d -= out(j, m) * out(j, m);
    if (!(value_of(d) > 0.0)) return false;
    out(j, j) = sqrt(d);
    for (std::size_t i = j + 1; i < k; ++i) {
      T s = a[i * k + j];
      for (std::size_t m = 0; m < j; ++m) s -= out(i, m) * out(j, m);
      out(i, j) = s / out(j, j);
    }
  }
  return true;
}

/// log N(r; 0, L L^T) for a residual r.
template <class T>
T mvn_log_density_chol(std::span<const T> r, const Cholesky<T>& l) {
  using std::log;
  using ad::log;
  constexpr double log_2pi = 1.8378770664093454835606594728112;
  std::vector<T> w(l.k);
  T quad(0.0), log_det(0.0);
  for (std::size_t i = 0; i < l.k; ++i) {
    T s = r[i];
    for (std::size_t m = 0; m < i; ++m) s -= l(i, m) * w[m];
    w[i] = s / l(i, i);
    quad += w[i] * w[i];
    log_det += log(l(i, i));
  }
  return -0.5 * quad - log_det - 0.5 * static_cast<double>(l.k) * log_2pi;
}

}  // namespace votacast::inference
