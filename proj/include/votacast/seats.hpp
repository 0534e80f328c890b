#pragma once

#include <cmath>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "votacast/error.hpp"

namespace votacast::seats {

/// One province's ballots. Votes may be real-valued (shares times electorate).
struct ProvinceVotes {
  int province_id = 0;
  std::vector<double> votes;
  int contingent = 0;
};

struct SeatAllocation {
  std::vector<int> province_ids;
  std::vector<std::vector<int>> by_province;  // [province][party]
  std::vector<int> national;                  // [party]

  [[nodiscard]] int total() const { return std::accumulate(national.begin(), national.end(), 0); }
};

namespace detail {

inline void validate(std::span<const double> votes, int contingent, double threshold) {
  if (contingent < 1) fail(ErrorKind::invalid_input, "contingent must be at least 1");
  if (!(threshold >= 0.0 && threshold < 1.0)) fail(ErrorKind::invalid_input, "threshold must lie in [0, 1)");
  if (votes.empty()) fail(ErrorKind::invalid_input, "no parties");
  for (double v : votes)
    if (!std::isfinite(v) || v < 0.0) fail(ErrorKind::invalid_input, "votes must be finite and non-negative");
}

/// Parties with positive votes whose share of the valid vote reaches the threshold.
inline std::vector<bool> eligible_parties(std::span<const double> votes, double threshold) {
  const double total = std::accumulate(votes.begin(), votes.end(), 0.0);
  std::vector<bool> eligible(votes.size(), false);
  bool any = false;
  for (std::size_t l = 0; l < votes.size(); ++l) {
    eligible[l] = votes[l] > 0.0 && votes[l] >= threshold * total;
    any = any || eligible[l];
  }
  if (!any) fail(ErrorKind::no_eligible_party, "no party reaches the threshold");
  return eligible;
}

}  // namespace detail

/// Highest-averages allocation: each seat goes to the largest quotient
/// votes / (seats + 1). Ties go to the party with more votes, then to the
/// earlier party in input order.
inline std::vector<int> dhondt_allocate(std::span<const double> votes, int contingent, double threshold) {
  detail::validate(votes, contingent, threshold);
  const auto eligible = detail::eligible_parties(votes, threshold);
  std::vector<int> seats(votes.size(), 0);
  for (int seat = 0; seat < contingent; ++seat) {
    std::size_t best = votes.size();
    for (std::size_t l = 0; l < votes.size(); ++l) {
      if (!eligible[l]) continue;
      if (best == votes.size()) {
        best = l;
        continue;
      }
      // Compare votes[l]/(seats[l]+1) against votes[best]/(seats[best]+1) without dividing.
      const double lhs = votes[l] * (seats[best] + 1);
      const double rhs = votes[best] * (seats[l] + 1);
      if (lhs > rhs || (lhs == rhs && votes[l] > votes[best])) best = l;
    }
    ++seats[best];
  }
  return seats;
}

struct JeffersonResult {
  std::vector<int> seats;
  double price = 0.0;  // largest price per seat at which demand covers supply
};

/// Divisor form of the same rule: bisect on the price per seat until the
/// aggregate demand sum(floor(votes / price)) meets the fixed supply.
inline JeffersonResult jefferson_allocate_with_price(std::span<const double> votes, int contingent,
                                                     double threshold) {
  detail::validate(votes, contingent, threshold);
  const auto eligible = detail::eligible_parties(votes, threshold);
  const std::size_t n = votes.size();

  auto demand_at = [&](double price, std::vector<int>* out) {
    long long demand = 0;
    for (std::size_t l = 0; l < n; ++l) {
      const int d = eligible[l] ? static_cast<int>(std::floor(votes[l] / price)) : 0;
      if (out) (*out)[l] = d;
      demand += d;
    }
    return demand;
  };

  double eligible_total = 0.0;
  double top = 0.0;
  int parties = 0;
  for (std::size_t l = 0; l < n; ++l) {
    if (!eligible[l]) continue;
    eligible_total += votes[l];
    top = std::max(top, votes[l]);
    ++parties;
  }
  // demand(lo) >= contingent > demand(hi) throughout the bisection.
  double lo = eligible_total / static_cast<double>(contingent + parties);
  double hi = top * 2.0;
  for (int iter = 0; iter < 2000; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (demand_at(mid, nullptr) >= contingent) lo = mid;
    else hi = mid;
  }

  JeffersonResult result{std::vector<int>(n, 0), lo};
  const long long demand_lo = demand_at(lo, &result.seats);
  if (demand_lo == contingent) return result;

  // Several parties tie exactly at the boundary price: start from the
  // allocation just above it and hand out the remaining seats by vote count,
  // then input order.
  std::vector<int> above(n, 0);
  const long long demand_hi = demand_at(hi, &above);
  std::vector<std::size_t> tied;
  for (std::size_t l = 0; l < n; ++l)
    if (result.seats[l] > above[l]) tied.push_back(l);
  std::stable_sort(tied.begin(), tied.end(), [&](std::size_t a, std::size_t b) { return votes[a] > votes[b]; });
  long long remaining = contingent - demand_hi;
  result.seats = above;
  for (std::size_t l : tied) {
    if (remaining == 0) break;
    ++result.seats[l];
    --remaining;
  }
  if (remaining != 0) fail(ErrorKind::numerical, "price bisection failed to clear the seat market");
  return result;
}

inline std::vector<int> jefferson_allocate(std::span<const double> votes, int contingent, double threshold) {
  return jefferson_allocate_with_price(votes, contingent, threshold).seats;
}

/// Allocates every province independently and sums the national chamber.
inline SeatAllocation allocate_nation(std::span<const ProvinceVotes> provinces, double threshold) {
  if (provinces.empty()) fail(ErrorKind::invalid_input, "no provinces");
  const std::size_t parties = provinces.front().votes.size();
  SeatAllocation out;
  out.national.assign(parties, 0);
  std::set<int> seen;
  for (const auto& p : provinces) {
    if (!seen.insert(p.province_id).second)
      fail(ErrorKind::invalid_input, "duplicate province id " + std::to_string(p.province_id));
    if (p.votes.size() != parties) fail(ErrorKind::invalid_input, "provinces disagree on the party list");
    auto seats = dhondt_allocate(p.votes, p.contingent, threshold);
    for (std::size_t l = 0; l < parties; ++l) out.national[l] += seats[l];
    out.province_ids.push_back(p.province_id);
    out.by_province.push_back(std::move(seats));
  }
  return out;
}

}  // namespace votacast::seats
