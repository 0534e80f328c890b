#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "votacast/error.hpp"
#include "votacast/inference/hmc.hpp"

namespace votacast::inference {

struct RhatResult {
  std::vector<double> values;
  std::vector<bool> degenerate;  // zero within-chain variance

  [[nodiscard]] double max() const {
    double m = 1.0;
    for (double v : values) m = std::max(m, v);
    return m;
  }
  [[nodiscard]] bool converged(double bound = 1.05) const {
    for (std::size_t d = 0; d < values.size(); ++d)
      if (degenerate[d] || !(values[d] < bound)) return false;
    return true;
  }
};

/// Split potential scale reduction from per-chain sequences of one scalar.
/// Returns the value and whether the within-chain variance vanished.
inline std::pair<double, bool> split_rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) fail(ErrorKind::insufficient_chains, "split rhat needs at least 2 chains");
  const std::size_t n = chains.front().size();
  for (const auto& c : chains)
    if (c.size() != n) fail(ErrorKind::invalid_input, "chains differ in length");
  if (n < 4) fail(ErrorKind::insufficient_chains, "split rhat needs at least 4 draws per chain");

  const std::size_t half = n / 2;
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    for (std::size_t start : {std::size_t{0}, n - half}) {
      double m = 0.0;
      for (std::size_t i = 0; i < half; ++i) m += c[start + i];
      m /= static_cast<double>(half);
      double v = 0.0;
      for (std::size_t i = 0; i < half; ++i) v += (c[start + i] - m) * (c[start + i] - m);
      means.push_back(m);
      vars.push_back(v / static_cast<double>(half - 1));
    }
  }
  const double k = static_cast<double>(means.size());
  const double nh = static_cast<double>(half);
  double w = 0.0, grand = 0.0;
  for (std::size_t j = 0; j < means.size(); ++j) {
    w += vars[j];
    grand += means[j];
  }
  w /= k;
  grand /= k;
  double b = 0.0;
  for (double m : means) b += (m - grand) * (m - grand);
  b *= nh / (k - 1.0);

  if (!(w > 0.0)) return {b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0, true};
  const double var_plus = (nh - 1.0) / nh * w + b / nh;
  return {std::max(1.0, std::sqrt(var_plus / w)), false};
}

inline std::vector<std::vector<double>> chain_columns(const ChainSet& set, std::size_t d) {
  std::vector<std::vector<double>> cols(set.chains(), std::vector<double>(set.draws_per_chain()));
  for (std::size_t c = 0; c < set.chains(); ++c)
    for (std::size_t i = 0; i < set.draws_per_chain(); ++i) cols[c][i] = set.at(c, i, d);
  return cols;
}

inline RhatResult rhat(const ChainSet& set) {
  if (set.chains() < 2) fail(ErrorKind::insufficient_chains, "split rhat needs at least 2 chains");
  RhatResult out;
  for (std::size_t d = 0; d < set.dimension(); ++d) {
    const auto [value, degenerate] = split_rhat(chain_columns(set, d));
    out.values.push_back(value);
    out.degenerate.push_back(degenerate);
  }
  return out;
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
inline double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  if (m == 0) fail(ErrorKind::invalid_input, "no chains");
  const std::size_t n = chains.front().size();
  if (n < 4) fail(ErrorKind::invalid_input, "too few draws for ESS");

  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    double s = 0.0;
    for (double x : chains[c]) s += x;
    means[c] = s / static_cast<double>(n);
    double v = 0.0;
    for (double x : chains[c]) v += (x - means[c]) * (x - means[c]);
    vars[c] = v / static_cast<double>(n - 1);
  }
  double w = 0.0, grand = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    w += vars[c];
    grand += means[c];
  }
  w /= static_cast<double>(m);
  grand /= static_cast<double>(m);
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b = m > 1 ? b * static_cast<double>(n) / static_cast<double>(m - 1) : 0.0;
  const double nd = static_cast<double>(n);
  const double var_plus = (nd - 1.0) / nd * w + b / nd;
  if (!(var_plus > 0.0)) return static_cast<double>(m * n);

  auto autocov = [&](std::size_t c, std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (chains[c][i] - means[c]) * (chains[c][i + lag] - means[c]);
    return s / nd;
  };
  auto rho = [&](std::size_t lag) {
    double mean_acov = 0.0;
    for (std::size_t c = 0; c < m; ++c) mean_acov += autocov(c, lag);
    mean_acov /= static_cast<double>(m);
    return 1.0 - (w - mean_acov) / var_plus;
  };

  double tau = -1.0;  // accumulates 2 * sum of paired autocorrelations minus 1
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t + 1 < n; t += 2) {
    double pair = rho(t) + rho(t + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / std::log10(static_cast<double>(m * n)));
  return static_cast<double>(m * n) / tau;
}

inline double effective_sample_size(const ChainSet& set, std::size_t d) {
  return effective_sample_size(chain_columns(set, d));
}

}  // namespace votacast::inference
