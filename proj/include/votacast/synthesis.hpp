#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "votacast/ensemble.hpp"
#include "votacast/polls.hpp"
#include "votacast/seats.hpp"

namespace votacast::synthesis {

inline constexpr double kDefaultEssFloor = 50.0;

/// Sets log W_s from an arbitrary log-likelihood of the national shares.
inline void importance_weights(SimulationEnsemble& ensemble,
                               const std::function<double(std::span<const double>)>& log_likelihood,
                               double ess_floor = kDefaultEssFloor) {
  std::vector<double> log_w(ensemble.draws());
  for (std::size_t s = 0; s < ensemble.draws(); ++s) log_w[s] = log_likelihood(ensemble.national(s));
  ensemble.set_log_weights(std::move(log_w));
  if (ensemble.ess() < ess_floor)
    ensemble.warnings.push_back("degenerate importance weights: effective sample size " +
                                std::to_string(ensemble.ess()) + " below " + std::to_string(ess_floor));
}

/// Weights each simulation by the polls likelihood of its national shares.
inline void importance_weights(SimulationEnsemble& ensemble, std::span<const polls::Poll> new_polls,
                               const polls::PollsPosterior& posterior, std::size_t max_draws = 100,
                               double ess_floor = kDefaultEssFloor) {
  if (!(ensemble.canon() == posterior.canon))
    fail(ErrorKind::alignment, "ensemble and polls posterior use different party canons");
  const polls::PollsLikelihood likelihood(new_polls, posterior, max_draws);
  for (const auto& j : likelihood.unseen_pollsters())
    ensemble.warnings.push_back("pollster " + j + " has no training polls; its house effect is integrated over the prior");
  const auto r = static_cast<Eigen::Index>(ensemble.canon().reduced_size());
  importance_weights(
      ensemble,
      [&](std::span<const double> v) {
        return likelihood.log_density(Vector(Eigen::Map<const Vector>(v.data(), r)));
      },
      ess_floor);
}

struct Summary {
  double estimate = 0.0;
  std::vector<double> probabilities;
  std::vector<double> quantiles;
  std::vector<std::string> warnings;
};

/// Smallest value whose cumulative normalized weight reaches p.
inline std::vector<double> weighted_quantiles(std::span<const double> values, std::span<const double> weights,
                                              std::span<const double> probabilities) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> out;
  for (double p : probabilities) {
    double cum = 0.0;
    double q = values.empty() ? std::nan("") : values[order.back()];
    for (std::size_t i : order) {
      if (weights[i] <= 0.0) continue;
      cum += weights[i];
      if (cum >= p - 1e-12) {
        q = values[i];
        break;
      }
    }
    out.push_back(q);
  }
  return out;
}

inline Summary summarize_values(std::span<const double> values, std::span<const double> weights,
                                std::vector<double> probabilities = {0.05, 0.5, 0.95}) {
  Summary out;
  for (std::size_t s = 0; s < values.size(); ++s) out.estimate += weights[s] * values[s];
  out.quantiles = weighted_quantiles(values, weights, probabilities);
  out.probabilities = std::move(probabilities);
  return out;
}

/// Self-normalized estimate of E[g] with weighted quantiles. g sees the whole
/// ensemble and the index of one simulated election.
inline Summary weighted_summary(const SimulationEnsemble& ensemble,
                                const std::function<double(const SimulationEnsemble&, std::size_t)>& g,
                                std::vector<double> probabilities = {0.05, 0.5, 0.95}) {
  const auto w = ensemble.normalized_weights();
  std::vector<double> values(ensemble.draws());
  for (std::size_t s = 0; s < ensemble.draws(); ++s) values[s] = g(ensemble, s);
  auto out = summarize_values(values, w, std::move(probabilities));
  out.warnings = ensemble.warnings;
  return out;
}

struct SeatDistribution {
  PartyCanon canon;
  std::vector<std::vector<int>> national;             // [draw][party]
  std::vector<std::map<int, double>> histogram;       // [party] seats -> weight
  std::vector<double> mean, median, lower, upper;     // 90% interval
  std::vector<std::string> warnings;
};

/// Per-draw seat allocation. Province votes are shares times electorate.
inline SeatDistribution seat_distribution(const SimulationEnsemble& ensemble, const std::map<int, int>& contingents,
                                          double threshold) {
  const std::size_t parties = ensemble.parties();
  std::vector<seats::ProvinceVotes> provinces(ensemble.provinces());
  for (std::size_t i = 0; i < ensemble.provinces(); ++i) {
    const int id = ensemble.province_ids()[i];
    const auto it = contingents.find(id);
    if (it == contingents.end()) fail(ErrorKind::lookup, "no seat contingent for province " + std::to_string(id));
    provinces[i].province_id = id;
    provinces[i].contingent = it->second;
    provinces[i].votes.resize(parties);
  }
  SeatDistribution out;
  out.canon = ensemble.canon();
  out.warnings = ensemble.warnings;
  out.national.reserve(ensemble.draws());
  for (std::size_t s = 0; s < ensemble.draws(); ++s) {
    for (std::size_t i = 0; i < ensemble.provinces(); ++i) {
      const auto v = ensemble.local(s, i);
      for (std::size_t l = 0; l < parties; ++l) provinces[i].votes[l] = v[l] * ensemble.electorate()[i];
    }
    out.national.push_back(seats::allocate_nation(provinces, threshold).national);
  }
  const auto w = ensemble.normalized_weights();
  out.histogram.resize(parties);
  std::vector<double> column(ensemble.draws());
  for (std::size_t l = 0; l < parties; ++l) {
    for (std::size_t s = 0; s < ensemble.draws(); ++s) {
      column[s] = out.national[s][l];
      if (w[s] > 0.0) out.histogram[l][out.national[s][l]] += w[s];
    }
    const auto summary = summarize_values(column, w, {0.05, 0.5, 0.95});
    out.mean.push_back(summary.estimate);
    out.lower.push_back(summary.quantiles[0]);
    out.median.push_back(summary.quantiles[1]);
    out.upper.push_back(summary.quantiles[2]);
  }
  return out;
}

struct PriorWeight {
  std::vector<double> per_party;  // reduced dimensions
  std::vector<bool> clipped;
  double summary = 0.0;
  std::vector<std::string> warnings;
};

/// Share of the synthesized belief attributable to the fundamental prior,
/// from Gaussian moment matching: w = prior precision / posterior precision
/// = posterior variance / prior variance, per reduced party.
inline PriorWeight prior_weight_gaussian(std::span<const std::vector<double>> prior_draws,
                                         const SimulationEnsemble& ensemble) {
  if (prior_draws.size() < 100) fail(ErrorKind::invalid_input, "at least 100 prior draws are required");
  if (ensemble.ess() < kDefaultEssFloor)
    fail(ErrorKind::invalid_input, "posterior effective sample size " + std::to_string(ensemble.ess()) + " below 50");
  const std::size_t r = ensemble.canon().reduced_size();
  const auto w = ensemble.normalized_weights();
  PriorWeight out;
  for (std::size_t l = 0; l < r; ++l) {
    double m = 0.0, v = 0.0;
    for (const auto& d : prior_draws) m += d[l];
    m /= static_cast<double>(prior_draws.size());
    for (const auto& d : prior_draws) v += (d[l] - m) * (d[l] - m);
    v /= static_cast<double>(prior_draws.size() - 1);
    if (!(v > 0.0))
      fail(ErrorKind::undefined_weight, "prior variance of " + ensemble.canon().label(l) + " is zero");
    double pm = 0.0, pv = 0.0;
    for (std::size_t s = 0; s < ensemble.draws(); ++s) pm += w[s] * ensemble.national(s)[l];
    for (std::size_t s = 0; s < ensemble.draws(); ++s) pv += w[s] * std::pow(ensemble.national(s)[l] - pm, 2);
    double weight = pv / v;
    const bool clip = weight < 0.0 || weight > 1.0;
    if (clip) {
      out.warnings.push_back("prior weight of " + ensemble.canon().label(l) + " clipped from " + std::to_string(weight));
      weight = std::clamp(weight, 0.0, 1.0);
    }
    out.per_party.push_back(weight);
    out.clipped.push_back(clip);
    out.summary += weight / static_cast<double>(r);
  }
  return out;
}

/// Prior draws taken straight from the (unweighted) ensemble.
inline PriorWeight prior_weight_gaussian(const SimulationEnsemble& ensemble) {
  std::vector<std::vector<double>> prior(ensemble.draws());
  for (std::size_t s = 0; s < ensemble.draws(); ++s)
    prior[s].assign(ensemble.national(s).begin(), ensemble.national(s).end());
  return prior_weight_gaussian(prior, ensemble);
}

}  // namespace votacast::synthesis
