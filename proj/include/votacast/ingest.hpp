#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "votacast/core.hpp"
#include "votacast/fundamental.hpp"
#include "votacast/io/csv.hpp"
#include "votacast/polls.hpp"

namespace votacast::ingest {

using io::parse_double;
using io::parse_int;

inline std::optional<std::chrono::sys_days> parse_date(std::string_view s) {
  s = io::trim(s);
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  const auto y = parse_int(s.substr(0, 4)), m = parse_int(s.substr(5, 2)), d = parse_int(s.substr(8, 2));
  if (!y || !m || !d) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{static_cast<int>(*y)},
                                        std::chrono::month{static_cast<unsigned>(*m)},
                                        std::chrono::day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  return std::chrono::sys_days{ymd};
}

/// Maps raw party labels to canon labels: canon labels map to themselves,
/// aliases (e.g. coalition names) to their canon party.
struct PartyMap {
  PartyCanon canon;
  std::map<std::string, std::string> aliases;

  [[nodiscard]] std::optional<std::size_t> resolve(const std::string& label) const {
    if (auto i = canon.find(label)) return i;
    auto it = aliases.find(label);
    if (it == aliases.end()) return std::nullopt;
    return canon.find(it->second);
  }
};

// ---------------------------------------------------------------- survey

inline constexpr const char* kSurveyFactors[] = {"municipality_size", "gender", "age", "education", "activity"};
inline constexpr int kSurveyLevels[] = {3, 2, 3, 3, 3};

struct SurveyLoad {
  std::vector<fundamental::Stratum> strata;  // observed cells only
  std::size_t respondents = 0;               // rows read, before drops
  std::size_t dropped = 0;                   // no reported intention
  std::vector<std::string> warnings;
};

/// Respondents grouped into strata with per-party counts. Intention is the
/// 1-based canon code; empty means not reported and the respondent is dropped.
inline SurveyLoad load_survey_table(const io::CsvTable& t, const PartyCanon& canon) {
  const std::size_t c_id = t.require("respondent_id"), c_prov = t.require("province"),
                    c_int = t.require("intention");
  std::size_t c_fac[5];
  for (int k = 0; k < 5; ++k) c_fac[k] = t.require(kSurveyFactors[k]);
  io::RowErrors errors{t.source, t.rows.size(), {}};
  std::map<std::vector<int>, std::vector<int>> cells;
  std::set<std::string> ids;
  SurveyLoad out;
  for (const auto& row : t.rows) {
    if (row.fields.size() != t.header.size()) {
      errors.add(row.line, "expected " + std::to_string(t.header.size()) + " fields");
      continue;
    }
    const auto& f = row.fields;
    if (io::trim(f[c_id]).empty() || !ids.insert(std::string(io::trim(f[c_id]))).second) {
      errors.add(row.line, "missing or duplicate respondent_id");
      continue;
    }
    std::vector<int> key;
    const auto prov = parse_int(f[c_prov]);
    if (!prov || *prov < 1 || *prov > 52) {
      errors.add(row.line, "province must be an INE code 1-52");
      continue;
    }
    key.push_back(static_cast<int>(*prov));
    bool ok = true;
    for (int k = 0; k < 5 && ok; ++k) {
      const auto v = parse_int(f[c_fac[k]]);
      if (!v || *v < 1 || *v > kSurveyLevels[k]) {
        errors.add(row.line, std::string(kSurveyFactors[k]) + " must be in 1-" + std::to_string(kSurveyLevels[k]));
        ok = false;
      } else {
        key.push_back(static_cast<int>(*v));
      }
    }
    if (!ok) continue;
    ++out.respondents;
    if (io::trim(f[c_int]).empty()) {
      ++out.dropped;
      continue;
    }
    const auto code = parse_int(f[c_int]);
    if (!code || *code < 1 || static_cast<std::size_t>(*code) > canon.size()) {
      --out.respondents;
      errors.add(row.line, "intention must be a party code 1-" + std::to_string(canon.size()) + " or empty");
      continue;
    }
    auto& counts = cells[key];
    counts.resize(canon.size(), 0);
    ++counts[static_cast<std::size_t>(*code - 1)];
  }
  errors.check();
  out.warnings = errors.messages;
  if (out.dropped)
    out.warnings.push_back(std::to_string(out.dropped) + " respondents without a reported intention were dropped");
  for (auto& [key, counts] : cells)
    out.strata.push_back({key[0], std::vector<int>(key.begin() + 1, key.end()), counts, 0.0});
  return out;
}

inline SurveyLoad load_survey(const std::string& path, const PartyCanon& canon) {
  return load_survey_table(io::read_csv(path), canon);
}

/// One row per respondent, reproducing the strata on reload.
inline io::CsvWriter write_survey(std::span<const fundamental::Stratum> strata) {
  io::CsvWriter w({"respondent_id", "province", "municipality_size", "gender", "age", "education", "activity",
                   "intention"});
  long id = 0;
  for (const auto& s : strata)
    for (std::size_t l = 0; l < s.counts.size(); ++l)
      for (int n = 0; n < s.counts[l]; ++n) {
        std::vector<std::string> row{std::to_string(++id), std::to_string(s.province_id)};
        for (int v : s.levels) row.push_back(std::to_string(v));
        row.push_back(std::to_string(l + 1));
        w.row(row);
      }
  return w;
}

// ---------------------------------------------------------------- census

struct CensusLoad {
  fundamental::Census census;
  std::vector<double> counts;                // raw count of each census cell
  std::map<int, std::size_t> imputed_cells;  // per province, cells absent from the file
  std::vector<std::string> warnings;
};

/// Stratum counts per province, normalized to weights. Cells absent from the
/// file get zero weight and are reported. The optional electorate column
/// gives the province's registered voters; otherwise the counts are summed.
inline CensusLoad load_census_table(const io::CsvTable& t) {
  const std::size_t c_prov = t.require("province"), c_count = t.require("count");
  const auto c_elec = t.find("electorate");
  std::size_t c_fac[5];
  for (int k = 0; k < 5; ++k) c_fac[k] = t.require(kSurveyFactors[k]);
  io::RowErrors errors{t.source, t.rows.size(), {}};
  std::map<int, std::map<std::vector<int>, double>> counts;
  std::map<int, double> electorate;
  for (const auto& row : t.rows) {
    if (row.fields.size() != t.header.size()) {
      errors.add(row.line, "expected " + std::to_string(t.header.size()) + " fields");
      continue;
    }
    const auto& f = row.fields;
    const auto prov = parse_int(f[c_prov]);
    if (!prov || *prov < 1 || *prov > 52) {
      errors.add(row.line, "province must be an INE code 1-52");
      continue;
    }
    std::vector<int> levels;
    bool ok = true;
    for (int k = 0; k < 5 && ok; ++k) {
      const auto v = parse_int(f[c_fac[k]]);
      if (!v || *v < 1 || *v > kSurveyLevels[k]) {
        errors.add(row.line, std::string(kSurveyFactors[k]) + " must be in 1-" + std::to_string(kSurveyLevels[k]));
        ok = false;
      } else {
        levels.push_back(static_cast<int>(*v));
      }
    }
    if (!ok) continue;
    const auto count = parse_double(f[c_count]);
    if (!count || *count < 0.0) {
      errors.add(row.line, "count must be a non-negative number");
      continue;
    }
    const int p = static_cast<int>(*prov);
    if (counts[p].count(levels)) {
      errors.add(row.line, "duplicate census cell");
      continue;
    }
    if (c_elec && !io::trim(f[*c_elec]).empty()) {
      const auto e = parse_double(f[*c_elec]);
      if (!e || *e <= 0.0) {
        errors.add(row.line, "electorate must be positive");
        continue;
      }
      auto [it, fresh] = electorate.emplace(p, *e);
      if (!fresh && it->second != *e) {
        errors.add(row.line, "electorate disagrees with an earlier row of the same province");
        continue;
      }
    }
    counts[p][levels] = *count;
  }
  errors.check();
  CensusLoad out;
  out.warnings = errors.messages;
  std::size_t full = 1;
  for (int l : kSurveyLevels) full *= static_cast<std::size_t>(l);
  for (const auto& [p, cells] : counts) {
    double total = 0.0;
    for (const auto& [k, c] : cells) total += c;
    if (!(total > 0.0)) fail(ErrorKind::missing_census, t.source + ": province " + std::to_string(p) + " has zero total count");
    for (const auto& [k, c] : cells) {
      out.census.cells.push_back({p, k, {}, c / total});
      out.counts.push_back(c);
    }
    out.census.electorate[p] = electorate.count(p) ? electorate[p] : total;
    if (cells.size() < full) {
      out.imputed_cells[p] = full - cells.size();
    }
  }
  if (!out.imputed_cells.empty()) {
    std::size_t n = 0;
    for (const auto& [p, k] : out.imputed_cells) n += k;
    out.warnings.push_back("census coverage: " + std::to_string(n) + " cells in " +
                           std::to_string(out.imputed_cells.size()) + " provinces imputed as zero weight");
  }
  return out;
}

inline CensusLoad load_census(const std::string& path) { return load_census_table(io::read_csv(path)); }

inline io::CsvWriter write_census(const CensusLoad& load) {
  io::CsvWriter w({"province", "municipality_size", "gender", "age", "education", "activity", "count", "electorate"});
  for (std::size_t i = 0; i < load.census.cells.size(); ++i) {
    const auto& c = load.census.cells[i];
    std::vector<std::string> row{std::to_string(c.province_id)};
    for (int v : c.levels) row.push_back(std::to_string(v));
    row.push_back(io::format_double(load.counts[i]));
    row.push_back(io::format_double(load.census.electorate.at(c.province_id)));
    w.row(row);
  }
  return w;
}

// ---------------------------------------------------------------- polls

struct PollsLoad {
  std::vector<polls::Poll> polls;
  std::size_t excluded_by_window = 0;
  std::map<std::string, std::size_t> per_election;
  std::vector<std::string> warnings;
};

/// Polls archive. Shares are fractions; a blank share marks a party the
/// poll does not report. When publish_date is present, days_before is
/// derived from it (a conflicting given value is overridden with a warning).
inline PollsLoad load_polls_table(const io::CsvTable& t, const PartyCanon& canon, int window_days = 30) {
  const std::size_t c_id = t.require("poll_id"), c_j = t.require("pollster"), c_e = t.require("election_date");
  const auto c_d = t.find("days_before"), c_pub = t.find("publish_date"), c_n = t.find("sample_size");
  if (!c_d && !c_pub) fail(ErrorKind::validation, t.source + ": need days_before or publish_date");
  std::vector<std::size_t> c_party;
  for (const auto& label : canon.labels()) c_party.push_back(t.require(label));
  if (t.rows.empty()) fail(ErrorKind::validation, t.source + ": no polls");
  io::RowErrors errors{t.source, t.rows.size(), {}};
  PollsLoad out;
  std::set<std::string> ids;
  for (const auto& row : t.rows) {
    if (row.fields.size() != t.header.size()) {
      errors.add(row.line, "expected " + std::to_string(t.header.size()) + " fields");
      continue;
    }
    const auto& f = row.fields;
    polls::Poll p;
    p.poll_id = std::string(io::trim(f[c_id]));
    p.pollster = std::string(io::trim(f[c_j]));
    p.election = std::string(io::trim(f[c_e]));
    if (p.poll_id.empty() || !ids.insert(p.poll_id).second) {
      errors.add(row.line, "missing or duplicate poll_id");
      continue;
    }
    if (p.pollster.empty()) {
      errors.add(row.line, "missing pollster");
      continue;
    }
    const auto election = parse_date(p.election);
    if (!election) {
      errors.add(row.line, "election_date must be YYYY-MM-DD");
      continue;
    }
    std::optional<long long> days;
    if (c_d && !io::trim(f[*c_d]).empty()) {
      days = parse_int(f[*c_d]);
      if (!days) {
        errors.add(row.line, "days_before must be an integer");
        continue;
      }
    }
    if (c_pub && !io::trim(f[*c_pub]).empty()) {
      const auto pub = parse_date(f[*c_pub]);
      if (!pub) {
        errors.add(row.line, "publish_date must be YYYY-MM-DD");
        continue;
      }
      const long long derived = (*election - *pub).count();
      if (days && *days != derived)
        out.warnings.push_back(t.source + ":" + std::to_string(row.line) + ": days_before " + std::to_string(*days) +
                               " replaced by " + std::to_string(derived) + " from publish_date");
      days = derived;
    }
    if (!days || *days < 0) {
      errors.add(row.line, "days_before missing or negative");
      continue;
    }
    p.days_before = static_cast<int>(*days);
    if (c_n && !io::trim(f[*c_n]).empty()) {
      const auto n = parse_int(f[*c_n]);
      if (!n || *n <= 0) {
        errors.add(row.line, "sample_size must be a positive integer");
        continue;
      }
      p.sample_size = static_cast<int>(*n);
    }
    p.shares = Vector::Constant(static_cast<Eigen::Index>(canon.size()), std::nan(""));
    bool ok = true;
    for (std::size_t l = 0; l < canon.size() && ok; ++l) {
      if (io::trim(f[c_party[l]]).empty()) continue;
      const auto v = parse_double(f[c_party[l]]);
      if (!v) {
        errors.add(row.line, "share of " + canon.label(l) + " is not a number");
        ok = false;
      } else {
        p.shares[static_cast<Eigen::Index>(l)] = *v;
      }
    }
    if (!ok) continue;
    try {
      polls::validate_poll(p, canon.size());
    } catch (const Error& e) {
      errors.add(row.line, e.what());
      continue;
    }
    if (p.days_before > window_days) {
      ++out.excluded_by_window;
      continue;
    }
    ++out.per_election[p.election];
    out.polls.push_back(std::move(p));
  }
  errors.check();
  for (auto& m : errors.messages) out.warnings.push_back(m);
  if (out.excluded_by_window)
    out.warnings.push_back(std::to_string(out.excluded_by_window) + " polls published more than " +
                           std::to_string(window_days) + " days before their election were excluded");
  return out;
}

inline PollsLoad load_polls(const std::string& path, const PartyCanon& canon, int window_days = 30) {
  return load_polls_table(io::read_csv(path), canon, window_days);
}

inline io::CsvWriter write_polls(std::span<const polls::Poll> polls, const PartyCanon& canon) {
  std::vector<std::string> header{"poll_id", "pollster", "election_date", "days_before", "sample_size"};
  for (const auto& l : canon.labels()) header.push_back(l);
  io::CsvWriter w(header);
  for (const auto& p : polls) {
    std::vector<std::string> row{p.poll_id, p.pollster, p.election, std::to_string(p.days_before),
                                 p.sample_size ? std::to_string(*p.sample_size) : ""};
    for (double s : p.shares) row.push_back(io::format_double(s));
    w.row(row);
  }
  return w;
}

// ---------------------------------------------------------------- results

/// Vote counts by election, province and raw party label. Province 0 holds
/// national totals for elections without province-level returns.
struct Results {
  std::map<std::string, std::map<int, std::map<std::string, double>>> votes;

  /// National vote shares in canon order; canon parties with no votes
  /// recorded for the election are NaN (not on the ballot).
  [[nodiscard]] Vector national_shares(const std::string& election, const PartyMap& map) const {
    auto it = votes.find(election);
    if (it == votes.end()) fail(ErrorKind::lookup, "no results for election " + election);
    const auto L = static_cast<Eigen::Index>(map.canon.size());
    Vector v = Vector::Zero(L);
    std::vector<bool> seen(map.canon.size(), false);
    const bool national_only = it->second.count(0) > 0;
    for (const auto& [prov, parties] : it->second) {
      if (national_only && prov != 0) continue;
      for (const auto& [party, n] : parties) {
        const auto l = map.resolve(party);
        if (!l) fail(ErrorKind::lookup, "party '" + party + "' is not in the canon or the alias table");
        v[static_cast<Eigen::Index>(*l)] += n;
        seen[*l] = true;
      }
    }
    const double total = v.sum();
    if (!(total > 0.0)) fail(ErrorKind::invalid_input, "election " + election + " has no votes");
    v /= total;
    for (std::size_t l = 0; l < seen.size(); ++l)
      if (!seen[l]) v[static_cast<Eigen::Index>(l)] = std::nan("");
    return v;
  }
};

inline Results load_results_table(const io::CsvTable& t, const PartyMap* map = nullptr) {
  const std::size_t c_e = t.require("election_date"), c_p = t.require("province"), c_party = t.require("party"),
                    c_v = t.require("votes");
  io::RowErrors errors{t.source, t.rows.size(), {}};
  Results out;
  for (const auto& row : t.rows) {
    if (row.fields.size() != t.header.size()) {
      errors.add(row.line, "expected " + std::to_string(t.header.size()) + " fields");
      continue;
    }
    const auto& f = row.fields;
    const std::string election(io::trim(f[c_e]));
    const std::string party(io::trim(f[c_party]));
    const auto prov = parse_int(f[c_p]);
    const auto v = parse_double(f[c_v]);
    if (!parse_date(election)) {
      errors.add(row.line, "election_date must be YYYY-MM-DD");
    } else if (!prov || *prov < 0 || *prov > 52) {
      errors.add(row.line, "province must be 0 (national) or an INE code 1-52");
    } else if (party.empty() || (map && !map->resolve(party))) {
      errors.add(row.line, "party '" + party + "' does not resolve against the canon");
    } else if (!v || *v < 0.0) {
      errors.add(row.line, "votes must be a non-negative number");
    } else if (!out.votes[election][static_cast<int>(*prov)].emplace(party, *v).second) {
      errors.add(row.line, "duplicate (election, province, party)");
    }
  }
  errors.check();
  return out;
}

inline Results load_results(const std::string& path, const PartyMap* map = nullptr) {
  return load_results_table(io::read_csv(path), map);
}

inline io::CsvWriter write_results(const Results& r) {
  io::CsvWriter w({"election_date", "province", "party", "votes"});
  for (const auto& [e, provs] : r.votes)
    for (const auto& [p, parties] : provs)
      for (const auto& [party, v] : parties) w.row({e, std::to_string(p), party, io::format_double(v)});
  return w;
}

// ---------------------------------------------------------------- contingents

using Contingents = std::map<std::string, std::map<int, int>>;  // election -> province -> seats

inline Contingents load_contingents_table(const io::CsvTable& t) {
  const std::size_t c_e = t.require("election_date"), c_p = t.require("province"), c_s = t.require("seats");
  io::RowErrors errors{t.source, t.rows.size(), {}};
  Contingents out;
  for (const auto& row : t.rows) {
    if (row.fields.size() != t.header.size()) {
      errors.add(row.line, "expected " + std::to_string(t.header.size()) + " fields");
      continue;
    }
    const auto& f = row.fields;
    const std::string election(io::trim(f[c_e]));
    const auto prov = parse_int(f[c_p]);
    const auto seats = parse_int(f[c_s]);
    if (!parse_date(election)) {
      errors.add(row.line, "election_date must be YYYY-MM-DD");
    } else if (!prov || *prov < 1 || *prov > 52) {
      errors.add(row.line, "province must be an INE code 1-52");
    } else if (!seats || *seats < 1) {
      errors.add(row.line, "seats must be a positive integer");
    } else if (!out[election].emplace(static_cast<int>(*prov), static_cast<int>(*seats)).second) {
      errors.add(row.line, "duplicate (election, province)");
    }
  }
  errors.check();
  return out;
}

inline Contingents load_contingents(const std::string& path) { return load_contingents_table(io::read_csv(path)); }

inline io::CsvWriter write_contingents(const Contingents& c) {
  io::CsvWriter w({"election_date", "province", "seats"});
  for (const auto& [e, provs] : c)
    for (const auto& [p, s] : provs) w.row({e, std::to_string(p), std::to_string(s)});
  return w;
}

// ---------------------------------------------------------------- history

struct HistoryRow {
  std::string election_date;
  std::string party;
  std::string role;  // incumbent | challenger
  double result = 0.0;
  double lagged_result = 0.0;
  double gdp_growth = 0.0;      // percent, preceding year
  double polls_average = 0.0;   // NaN when no polls are available
  double seats = 0.0;
  double lagged_seats = 0.0;

  friend bool operator==(const HistoryRow& a, const HistoryRow& b) {
    auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
    return a.election_date == b.election_date && a.party == b.party && a.role == b.role && same(a.result, b.result) &&
           same(a.lagged_result, b.lagged_result) && same(a.gdp_growth, b.gdp_growth) &&
           same(a.polls_average, b.polls_average) && same(a.seats, b.seats) && same(a.lagged_seats, b.lagged_seats);
  }
};

inline std::vector<HistoryRow> load_history_table(const io::CsvTable& t) {
  const std::size_t c_e = t.require("election_date"), c_party = t.require("party"), c_role = t.require("role"),
                    c_r = t.require("result"), c_lr = t.require("lagged_result"), c_g = t.require("gdp_growth"),
                    c_pa = t.require("polls_average"), c_s = t.require("seats"), c_ls = t.require("lagged_seats");
  io::RowErrors errors{t.source, t.rows.size(), {}};
  std::vector<HistoryRow> out;
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& row : t.rows) {
    if (row.fields.size() != t.header.size()) {
      errors.add(row.line, "expected " + std::to_string(t.header.size()) + " fields");
      continue;
    }
    const auto& f = row.fields;
    HistoryRow h;
    h.election_date = std::string(io::trim(f[c_e]));
    h.party = std::string(io::trim(f[c_party]));
    h.role = std::string(io::trim(f[c_role]));
    const auto r = parse_double(f[c_r]), lr = parse_double(f[c_lr]), g = parse_double(f[c_g]),
               s = parse_double(f[c_s]), ls = parse_double(f[c_ls]);
    const bool pa_blank = io::trim(f[c_pa]).empty();
    const auto pa = parse_double(f[c_pa]);
    auto share = [](const std::optional<double>& x) { return x && *x >= 0.0 && *x <= 1.0; };
    if (!parse_date(h.election_date)) {
      errors.add(row.line, "election_date must be YYYY-MM-DD");
    } else if (h.role != "incumbent" && h.role != "challenger") {
      errors.add(row.line, "role must be incumbent or challenger");
    } else if (!share(r) || !share(lr) || (!pa_blank && !share(pa))) {
      errors.add(row.line, "shares must lie in [0, 1]");
    } else if (!g) {
      errors.add(row.line, "gdp_growth must be a number");
    } else if (!s || !ls || *s < 0.0 || *ls < 0.0) {
      errors.add(row.line, "seats must be non-negative");
    } else if (!keys.emplace(h.election_date, h.role).second) {
      errors.add(row.line, "duplicate (election_date, role)");
    } else {
      h.result = *r;
      h.lagged_result = *lr;
      h.gdp_growth = *g;
      h.polls_average = pa_blank ? std::nan("") : *pa;
      h.seats = *s;
      h.lagged_seats = *ls;
      out.push_back(h);
    }
  }
  errors.check();
  return out;
}

inline std::vector<HistoryRow> load_history(const std::string& path) { return load_history_table(io::read_csv(path)); }

inline io::CsvWriter write_history(std::span<const HistoryRow> rows) {
  io::CsvWriter w({"election_date", "party", "role", "result", "lagged_result", "gdp_growth", "polls_average", "seats",
                   "lagged_seats"});
  for (const auto& h : rows)
    w.row({h.election_date, h.party, h.role, io::format_double(h.result), io::format_double(h.lagged_result),
           io::format_double(h.gdp_growth), io::format_double(h.polls_average), io::format_double(h.seats),
           io::format_double(h.lagged_seats)});
  return w;
}

}  // namespace votacast::ingest
