#pragma once

// Generators for synthetic data drawn from the models' own generative
// processes. Used by the calibration tests and the bundled demo data.

#include <random>
#include <vector>

#include "votacast/fundamental.hpp"

namespace votacast::synthetic {

/// Every combination of demographic levels for every province, zero counts.
inline std::vector<fundamental::Stratum> full_grid(const fundamental::Layout& layout) {
  std::vector<fundamental::Stratum> cells;
  const auto& factors = layout.demographic();
  for (int province : layout.province_ids()) {
    std::vector<int> code(factors.size(), 1);
    for (std::size_t n = 0; n < layout.cells_per_province(); ++n) {
      cells.push_back({province, code, std::vector<int>(layout.canon().size(), 0), 0.0});
      for (std::size_t k = factors.size(); k-- > 0;) {
        if (++code[k] <= factors[k].levels) break;
        code[k] = 1;
      }
    }
  }
  return cells;
}

/// Random census weights: Gamma(shape) cell masses, normalized per province.
inline void randomize_weights(std::vector<fundamental::Stratum>& cells, double shape, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(shape, 1.0);
  std::map<int, double> totals;
  for (auto& c : cells) totals[c.province_id] += (c.weight = g(rng));
  for (auto& c : cells) c.weight /= totals[c.province_id];
}

inline fundamental::Params draw_prior_params(const fundamental::Layout& layout, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  auto p = fundamental::Params::zeros(layout);
  for (auto& a : p.alpha) a = z(rng);
  for (Eigen::Index k = 0; k < p.sigma.rows(); ++k)
    for (Eigen::Index r = 0; r < p.sigma.cols(); ++r) {
      const double s = std::abs(z(rng));
      p.sigma(k, r) = s;
      for (std::size_t j = 0; j < layout.levels(static_cast<std::size_t>(k)); ++j)
        p.beta(static_cast<Eigen::Index>(layout.level_row(static_cast<std::size_t>(k), j)), r) = s * z(rng);
    }
  return p;
}

/// Respondents placed in cells with probability proportional to
/// province_mass * cell weight, then voting from the cell's probabilities.
/// Returns the cells with survey counts filled in.
inline std::vector<fundamental::Stratum> draw_survey(const fundamental::Layout& layout,
                                                     const fundamental::Params& params,
                                                     std::vector<fundamental::Stratum> cells,
                                                     const std::map<int, double>& province_mass, int respondents,
                                                     std::mt19937_64& rng) {
  std::vector<double> mass;
  for (const auto& c : cells) {
    auto it = province_mass.find(c.province_id);
    mass.push_back(c.weight * (it == province_mass.end() ? 1.0 : it->second));
  }
  std::discrete_distribution<std::size_t> pick_cell(mass.begin(), mass.end());
  std::vector<std::discrete_distribution<std::size_t>> vote;
  for (const auto& c : cells) {
    const auto mu = fundamental::stratum_probabilities(layout, params, c);
    vote.emplace_back(mu.values().data(), mu.values().data() + mu.size());
  }
  for (auto& c : cells) std::fill(c.counts.begin(), c.counts.end(), 0);
  for (int n = 0; n < respondents; ++n) {
    const std::size_t cell = pick_cell(rng);
    ++cells[cell].counts[vote[cell](rng)];
  }
  return cells;
}

}  // namespace votacast::synthetic

#include "votacast/polls.hpp"

namespace votacast::synthetic {

struct PollScenario {
  std::vector<polls::Poll> polls;
  std::map<std::string, Vector> results;  // full canon shares per election
  polls::PollsParams truth;
};

inline Matrix random_covariance(std::size_t r, double scale, double correlation_jitter, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r));
  for (auto& x : a.reshaped()) x = z(rng);
  Matrix c = Matrix::Identity(a.rows(), a.cols()) + correlation_jitter * (a * a.transpose()) / static_cast<double>(r);
  const Vector d = c.diagonal().cwiseSqrt().cwiseInverse();
  c = d.asDiagonal() * c * d.asDiagonal();
  return scale * scale * c;
}

/// Polls generated from the hierarchical error model: each pollster
/// publishes `per_cell` polls in every election, at uniform days 0..window.
/// `results` supplies the true full-canon result per election.
inline PollScenario draw_polls(const PartyCanon& canon, const std::vector<std::string>& pollsters,
                               const std::map<std::string, Vector>& results, int per_cell, double effect_scale,
                               double trend_scale, double noise_scale, int window, std::mt19937_64& rng) {
  const std::size_t r = canon.reduced_size();
  const auto R = static_cast<Eigen::Index>(r);
  std::normal_distribution<double> z(0.0, 1.0);
  PollScenario out;
  out.results = results;
  auto& h = out.truth.hypers;
  h.sigma_gamma = random_covariance(r, effect_scale, 0.5, rng);
  h.sigma_delta = random_covariance(r, effect_scale, 0.5, rng);
  h.sigma_epsilon = random_covariance(r, trend_scale, 0.5, rng);
  auto draw = [&](const Matrix& cov) {
    Vector e(R);
    for (auto& x : e) x = z(rng);
    return Vector(Eigen::LLT<Matrix>(cov).matrixL() * e);
  };
  for (const auto& j : pollsters) {
    h.sigma_pollster[j] = random_covariance(r, noise_scale * (0.5 + std::abs(z(rng)) * 0.5), 0.3, rng);
    out.truth.gamma[j] = draw(h.sigma_gamma);
  }
  std::uniform_int_distribution<int> day(0, window);
  int id = 0;
  for (const auto& [election, v] : results) {
    out.truth.delta[election] = draw(h.sigma_delta);
    out.truth.epsilon[election] = draw(h.sigma_epsilon);
    for (const auto& j : pollsters)
      for (int k = 0; k < per_cell; ++k) {
        polls::Poll p;
        p.poll_id = "P" + std::to_string(++id);
        p.pollster = j;
        p.election = election;
        p.days_before = day(rng);
        const Vector mean = v.head(R) + polls::poll_error_mean(out.truth, p, r);
        const Vector noisy = mean + draw(h.sigma_pollster[j]);
        p.shares = Vector::Constant(static_cast<Eigen::Index>(canon.size()), std::nan(""));
        for (Eigen::Index l = 0; l < R; ++l)
          if (std::isfinite(v[l])) p.shares[l] = std::clamp(noisy[l], 0.0, 1.0);
        double used = 0.0;
        for (Eigen::Index l = 0; l < R; ++l)
          if (std::isfinite(p.shares[l])) used += p.shares[l];
        if (used > 1.0) p.shares.head(R) /= used;
        p.shares[R] = std::max(0.0, 1.0 - std::min(used, 1.0));
        out.polls.push_back(std::move(p));
      }
  }
  return out;
}

}  // namespace votacast::synthetic
