#pragma once

// Regression baselines on the national history table: a fundamentals model
// (lagged result, GDP growth), a polls model (simple poll average) and a
// hybrid of both, fitted separately for the incumbent and the challenger.

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "votacast/ingest.hpp"
#include "votacast/inference/ols.hpp"
#include "votacast/io/csv.hpp"
#include "votacast/polls.hpp"

namespace votacast::benchmarks {

using ingest::HistoryRow;

/// Per-party mean over the polls published within the window. Parties that
/// no poll reports come out NaN.
inline Vector polls_simple_average(std::span<const polls::Poll> election_polls, std::size_t parties,
                                   int window_days = 30) {
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(parties));
  std::vector<int> n(parties, 0);
  std::size_t used = 0;
  for (const auto& p : election_polls) {
    if (p.days_before > window_days) continue;
    if (static_cast<std::size_t>(p.shares.size()) != parties)
      fail(ErrorKind::invalid_input, "poll " + p.poll_id + " has the wrong number of shares");
    ++used;
    for (std::size_t l = 0; l < parties; ++l)
      if (std::isfinite(p.shares[static_cast<Eigen::Index>(l)])) {
        sum[static_cast<Eigen::Index>(l)] += p.shares[static_cast<Eigen::Index>(l)];
        ++n[l];
      }
  }
  if (used == 0) fail(ErrorKind::invalid_input, "no polls within " + std::to_string(window_days) + " days");
  for (std::size_t l = 0; l < parties; ++l)
    sum[static_cast<Eigen::Index>(l)] = n[l] ? sum[static_cast<Eigen::Index>(l)] / n[l] : std::nan("");
  return sum;
}

enum class AltModel { fundamental, polls, hybrid };

inline const char* to_string(AltModel m) {
  switch (m) {
    case AltModel::fundamental: return "fundamental";
    case AltModel::polls: return "polls";
    case AltModel::hybrid: return "hybrid";
  }
  return "?";
}

struct AltPrediction {
  AltModel model{};
  std::string election, party, role;
  std::vector<std::string> train_elections;
  Vector vote_coefficients, seat_coefficients;
  double votes = 0.0;
  double log_seats = 0.0;
  double seats = 0.0;
};

namespace detail {

inline std::vector<double> vote_covariates(AltModel m, const HistoryRow& h) {
  switch (m) {
    case AltModel::fundamental: return {1.0, h.lagged_result, h.gdp_growth};
    case AltModel::polls: return {1.0, h.polls_average};
    case AltModel::hybrid: return {1.0, h.lagged_result, h.gdp_growth, h.polls_average};
  }
  return {};
}

inline std::vector<double> seat_covariates(AltModel m, const HistoryRow& h) {
  const double ls = std::log(h.lagged_seats);
  switch (m) {
    case AltModel::fundamental: return {1.0, ls, h.gdp_growth};
    case AltModel::polls: return {1.0, h.polls_average};
    case AltModel::hybrid: return {1.0, ls, h.gdp_growth, h.polls_average};
  }
  return {};
}

inline bool usable(AltModel m, const HistoryRow& h) {
  return m == AltModel::fundamental || std::isfinite(h.polls_average);
}

}  // namespace detail

inline std::vector<std::string> coefficient_names(AltModel m, bool seats) {
  const std::string lag = seats ? "log_lagged_seats" : "lagged_result";
  switch (m) {
    case AltModel::fundamental: return {"intercept", lag, "gdp_growth"};
    case AltModel::polls: return {"intercept", "polls_average"};
    case AltModel::hybrid: return {"intercept", lag, "gdp_growth", "polls_average"};
  }
  return {};
}

/// Fits `model` on every earlier election of the target's role and predicts
/// the target out of sample. Seats are regressed on the log scale.
inline AltPrediction alt_predict(AltModel model, std::span<const HistoryRow> history, const std::string& election,
                                 const std::string& role) {
  const HistoryRow* target = nullptr;
  std::vector<const HistoryRow*> train;
  for (const auto& h : history) {
    if (h.role != role) continue;
    if (h.election_date == election) target = &h;
    else if (h.election_date < election && detail::usable(model, h)) train.push_back(&h);
  }
  if (!target) fail(ErrorKind::lookup, "no " + role + " row for election " + election);
  if (!detail::usable(model, *target))
    fail(ErrorKind::invalid_input, "target row " + election + " has no polls average");
  if (train.size() < 3)
    fail(ErrorKind::invalid_input, "need at least 3 training rows for the " + role + " series, got " +
                                       std::to_string(train.size()));
  const auto n = static_cast<Eigen::Index>(train.size());
  const auto pv = static_cast<Eigen::Index>(detail::vote_covariates(model, *target).size());
  Matrix xv(n, pv), xs(n, pv);
  Vector yv(n), ys(n);
  AltPrediction out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& h = *train[static_cast<std::size_t>(i)];
    const auto a = detail::vote_covariates(model, h), b = detail::seat_covariates(model, h);
    for (Eigen::Index c = 0; c < pv; ++c) {
      xv(i, c) = a[static_cast<std::size_t>(c)];
      xs(i, c) = b[static_cast<std::size_t>(c)];
    }
    yv[i] = h.result;
    ys[i] = std::log(h.seats);
    out.train_elections.push_back(h.election_date);
  }
  out.model = model;
  out.election = election;
  out.party = target->party;
  out.role = role;
  out.vote_coefficients = inference::ols_fit(xv, yv, coefficient_names(model, false)).coefficients;
  out.seat_coefficients = inference::ols_fit(xs, ys, coefficient_names(model, true)).coefficients;
  const auto a = detail::vote_covariates(model, *target), b = detail::seat_covariates(model, *target);
  out.votes = Eigen::Map<const Vector>(a.data(), pv).dot(out.vote_coefficients);
  out.log_seats = Eigen::Map<const Vector>(b.data(), pv).dot(out.seat_coefficients);
  out.seats = std::exp(out.log_seats);
  return out;
}

inline AltPrediction alt_fundamental(std::span<const HistoryRow> h, const std::string& e, const std::string& role) {
  return alt_predict(AltModel::fundamental, h, e, role);
}
inline AltPrediction alt_polls(std::span<const HistoryRow> h, const std::string& e, const std::string& role) {
  return alt_predict(AltModel::polls, h, e, role);
}
inline AltPrediction alt_hybrid(std::span<const HistoryRow> h, const std::string& e, const std::string& role) {
  return alt_predict(AltModel::hybrid, h, e, role);
}

struct Key {
  std::string election, party;
  friend auto operator<=>(const Key&, const Key&) = default;
};

struct ComparisonRow {
  std::string election, party;
  double outcome = 0.0;
  double alt_estimate = 0.0, alt_residual = 0.0;
  double our_estimate = 0.0, our_residual = 0.0;
};

/// Residual = outcome - estimate for both models. All three maps must cover
/// the same (election, party) keys.
inline std::vector<ComparisonRow> comparison_table(const std::map<Key, double>& ours,
                                                   const std::map<Key, double>& alternative,
                                                   const std::map<Key, double>& outcomes) {
  auto keys = [](const std::map<Key, double>& m) {
    std::vector<Key> k;
    for (const auto& [key, v] : m) k.push_back(key);
    return k;
  };
  if (keys(ours) != keys(outcomes) || keys(alternative) != keys(outcomes)) {
    std::string missing;
    for (const auto* m : {&ours, &alternative})
      for (const auto& [k, v] : outcomes)
        if (!m->count(k)) missing += " " + k.election + "/" + k.party;
    for (const auto* m : {&ours, &alternative})
      for (const auto& [k, v] : *m)
        if (!outcomes.count(k)) missing += " " + k.election + "/" + k.party + "(no outcome)";
    fail(ErrorKind::alignment, "comparison keys do not line up:" + missing);
  }
  std::vector<ComparisonRow> rows;
  for (const auto& [k, y] : outcomes) {
    const double a = alternative.at(k), o = ours.at(k);
    rows.push_back({k.election, k.party, y, a, y - a, o, y - o});
  }
  return rows;
}

inline io::CsvWriter write_comparison(std::span<const ComparisonRow> rows) {
  io::CsvWriter w({"election", "party", "outcome", "alternative_estimate", "alternative_residual", "our_estimate",
                   "our_residual"});
  for (const auto& r : rows)
    w.row({r.election, r.party, io::format_double(r.outcome), io::format_double(r.alt_estimate),
           io::format_double(r.alt_residual), io::format_double(r.our_estimate), io::format_double(r.our_residual)});
  return w;
}

}  // namespace votacast::benchmarks
