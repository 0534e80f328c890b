// Writes the synthetic survey, census, polls archive and history table of the
// bundled dataset. Reads results.csv (from reconstruct_2015_votes.py) for
// the 2015 province geography the survey is built around.

#include <filesystem>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "votacast/benchmarks.hpp"
#include "votacast/fundamental.hpp"
#include "votacast/ingest.hpp"
#include "votacast/synthetic.hpp"

using namespace votacast;
namespace fs = std::filesystem;

namespace {

const PartyCanon kCanon({"PSOE", "PP", "Podemos", "C's", "others"});
const std::map<std::string, std::string> kAliases{{"IU", "Podemos"}, {"ERC", "others"}, {"DL", "others"},
                                                  {"PNV", "others"},  {"Bildu", "others"}, {"CC", "others"}};
constexpr const char* kTarget = "2015-12-20";

// Demographic effects on the logit scale for PSOE, PP, Podemos, C's against
// the rest, by factor level.
const double kEffects[5][3][4] = {
    {{0.2, 0.3, -0.2, -0.3}, {0, 0, 0, 0}, {-0.1, -0.1, 0.2, 0.2}},       // municipality size
    {{0, 0, 0.05, 0.05}, {0.05, 0.05, 0, 0}, {0, 0, 0, 0}},               // gender
    {{-0.5, -0.6, 0.5, 0.3}, {0, 0, 0, 0}, {0.4, 0.5, -0.5, -0.3}},       // age
    {{0.3, 0.2, -0.2, -0.4}, {0, 0, 0, 0}, {-0.2, 0, 0.2, 0.3}},          // education
    {{0, 0, 0, 0}, {0, -0.3, 0.3, 0}, {0.2, 0.2, 0, 0}},                  // activity
};

struct Province {
  int id = 0;
  double valid = 0.0;
  Vector shares;  // canon order
};

std::vector<Province> provinces_2015(const ingest::Results& results, const ingest::PartyMap& map) {
  std::vector<Province> out;
  for (const auto& [id, parties] : results.votes.at(kTarget)) {
    Province p{id, 0.0, Vector::Zero(static_cast<Eigen::Index>(kCanon.size()))};
    for (const auto& [party, v] : parties) {
      p.shares[static_cast<Eigen::Index>(*map.resolve(party))] += v;
      p.valid += v;
    }
    p.shares /= p.valid;
    out.push_back(p);
  }
  return out;
}

// Census counts: electorate times a product of province-specific marginals,
// with cell-level noise.
ingest::CensusLoad make_census(const std::vector<Province>& provinces, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  ingest::CensusLoad out;
  for (const auto& p : provinces) {
    const double electorate = std::round(p.valid / 0.70);
    const double urban = std::clamp(0.25 + 0.12 * std::log(p.valid / 300000.0), 0.08, 0.75);
    const double rural = std::clamp(0.35 - 0.10 * std::log(p.valid / 300000.0), 0.08, 0.6);
    std::vector<std::vector<double>> marg{
        {rural, 1.0 - rural - urban, urban},
        {0.49, 0.51},
        {0.26 + 0.02 * z(rng), 0.37 + 0.02 * z(rng), 0.37},
        {0.35 + 0.03 * z(rng), 0.40, 0.25 + 0.03 * z(rng)},
        {0.45 + 0.03 * z(rng), 0.15 + 0.02 * z(rng), 0.40}};
    for (auto& m : marg) {
      double s = 0.0;
      for (double& x : m) s += (x = std::max(x, 0.02));
      for (double& x : m) x /= s;
    }
    std::vector<fundamental::Stratum> cells;
    std::vector<double> counts;
    double total = 0.0;
    for (int a = 1; a <= 3; ++a)
      for (int b = 1; b <= 2; ++b)
        for (int c = 1; c <= 3; ++c)
          for (int d = 1; d <= 3; ++d)
            for (int e = 1; e <= 3; ++e) {
              const double m = marg[0][a - 1] * marg[1][b - 1] * marg[2][c - 1] * marg[3][d - 1] * marg[4][e - 1];
              const double n = std::max(1.0, std::round(electorate * m * std::exp(0.15 * z(rng))));
              cells.push_back({p.id, {a, b, c, d, e}, {}, 0.0});
              counts.push_back(n);
              total += n;
            }
    for (std::size_t k = 0; k < cells.size(); ++k) {
      cells[k].weight = counts[k] / total;
      out.census.cells.push_back(cells[k]);
      out.counts.push_back(counts[k]);
    }
    out.census.electorate[p.id] = electorate;
  }
  return out;
}

// Truth parameters: fixed demographic effects, province effects raked so
// that the post-stratified province shares match the 2015 geography.
fundamental::Params truth_params(const fundamental::Layout& layout, const std::vector<Province>& provinces,
                                 const fundamental::Census& census) {
  auto params = fundamental::Params::zeros(layout);
  const std::size_t r = layout.reduced();
  for (std::size_t k = 1; k < layout.factor_count(); ++k)
    for (std::size_t j = 0; j < layout.levels(k); ++j)
      for (std::size_t l = 0; l < r; ++l)
        params.beta(static_cast<Eigen::Index>(layout.level_row(k, j)), static_cast<Eigen::Index>(l)) =
            kEffects[k - 1][j][l];
  for (int it = 0; it < 50; ++it) {
    const auto current = fundamental::poststratify(layout, params, census.cells);
    for (std::size_t i = 0; i < provinces.size(); ++i) {
      const auto& t = provinces[i].shares;
      const auto& c = current[i].values();
      const auto row = static_cast<Eigen::Index>(layout.level_row(0, layout.province_level(provinces[i].id)));
      for (std::size_t l = 0; l < r; ++l) {
        const auto L = static_cast<Eigen::Index>(l);
        params.beta(row, L) += std::log(t[L] / t[static_cast<Eigen::Index>(r)]) -
                               std::log(c[L] / c[static_cast<Eigen::Index>(r)]);
      }
    }
  }
  return params;
}

std::string make_survey(const fundamental::Layout& layout, const fundamental::Params& params,
                        const std::vector<Province>& provinces, const fundamental::Census& census, int respondents,
                        std::mt19937_64& rng) {
  // Quotas: a floor per province plus the rest in proportion to the vote.
  const int floor_n = std::min(100, respondents / static_cast<int>(provinces.size()));
  double total = 0.0;
  for (const auto& p : provinces) total += p.valid;
  std::vector<int> quota;
  int assigned = 0;
  const int rest = respondents - floor_n * static_cast<int>(provinces.size());
  for (const auto& p : provinces) {
    quota.push_back(floor_n + static_cast<int>(std::floor(rest * p.valid / total)));
    assigned += quota.back();
  }
  for (std::size_t i = 0; assigned < respondents; i = (i + 1) % quota.size(), ++assigned) ++quota[i];

  std::bernoulli_distribution missing(0.25);
  io::CsvWriter w({"respondent_id", "province", "municipality_size", "gender", "age", "education", "activity",
                   "intention"});
  long id = 0;
  for (std::size_t i = 0; i < provinces.size(); ++i) {
    std::vector<const fundamental::Stratum*> cells;
    std::vector<double> mass;
    for (const auto& c : census.cells)
      if (c.province_id == provinces[i].id) {
        cells.push_back(&c);
        mass.push_back(c.weight);
      }
    std::discrete_distribution<std::size_t> pick(mass.begin(), mass.end());
    for (int n = 0; n < quota[i]; ++n) {
      const auto& cell = *cells[pick(rng)];
      const auto mu = fundamental::stratum_probabilities(layout, params, cell);
      std::discrete_distribution<std::size_t> vote(mu.values().data(), mu.values().data() + mu.size());
      const std::size_t choice = vote(rng);
      std::vector<std::string> row{std::to_string(++id), std::to_string(cell.province_id)};
      for (int v : cell.levels) row.push_back(std::to_string(v));
      row.push_back(missing(rng) ? "" : std::to_string(choice + 1));
      w.row(row);
    }
  }
  return w.str();
}

struct ElectionPlan {
  std::string date;
  double psoe, pp;
  int polls, stale;
  std::vector<std::string> pollsters;
};

// Poll errors follow the hierarchical model: house effect + election effect
// + days * trend + pollster noise, rounded to a tenth of a point.
std::vector<polls::Poll> make_polls(std::mt19937_64& rng) {
  const std::size_t r = kCanon.reduced_size();
  const auto R = static_cast<Eigen::Index>(r);
  const Matrix sg = synthetic::random_covariance(r, 0.012, 0.5, rng);
  const Matrix sd = synthetic::random_covariance(r, 0.012, 0.5, rng);
  const Matrix se = synthetic::random_covariance(r, 0.0003, 0.5, rng);
  std::normal_distribution<double> z(0.0, 1.0);
  auto draw = [&](const Matrix& cov) {
    Vector e(R);
    for (auto& x : e) x = z(rng);
    return Vector(Eigen::LLT<Matrix>(cov).matrixL() * e);
  };
  const std::vector<std::string> houses{"CIS",         "Sigma Dos", "Metroscopia", "GAD3",  "NC Report",
                                        "Invymark",    "TNS Demoscopia", "Opina", "Ipsos", "DYM",
                                        "Celeste-Tel", "Vox Pública", "Demoscopia y Servicios", "Noxa",
                                        "Simple Lógica", "GESOP"};
  std::map<std::string, Vector> gamma;
  std::map<std::string, Matrix> noise;
  for (const auto& j : houses) {
    gamma[j] = draw(sg);
    noise[j] = synthetic::random_covariance(r, 0.008 + 0.006 * std::abs(z(rng)), 0.3, rng);
  }
  const std::vector<ElectionPlan> plans{
      {"1996-03-03", 0.3763, 0.3879, 25, 3, {"CIS", "Sigma Dos", "Demoscopia y Servicios", "Opina", "Noxa", "Vox Pública"}},
      {"2000-03-12", 0.3416, 0.4452, 30, 3, {"CIS", "Sigma Dos", "Demoscopia y Servicios", "Opina", "Noxa", "Vox Pública", "Invymark"}},
      {"2004-03-14", 0.4259, 0.3771, 28, 3, {"CIS", "Sigma Dos", "Opina", "Noxa", "Invymark", "Ipsos", "TNS Demoscopia", "Celeste-Tel"}},
      {"2008-03-09", 0.4387, 0.3994, 36, 3, {"CIS", "Sigma Dos", "Opina", "Noxa", "Invymark", "Metroscopia", "GAD3", "TNS Demoscopia", "Celeste-Tel", "DYM"}},
      {"2011-11-20", 0.2876, 0.4463, 38, 2, {"CIS", "Sigma Dos", "Metroscopia", "GAD3", "NC Report", "Invymark", "TNS Demoscopia", "Celeste-Tel", "DYM", "Ipsos"}},
  };
  std::vector<polls::Poll> out;
  int id = 0;
  std::uniform_int_distribution<int> day(5, 30), stale_day(31, 60);
  std::uniform_int_distribution<int> size(800, 2500);
  auto emit = [&](const std::string& election, const std::string& j, int days, const Vector& truth,
                  const Vector& delta, const Vector& eps, bool full) {
    polls::Poll p;
    p.poll_id = "P" + std::to_string(++id);
    p.pollster = j;
    p.election = election;
    p.days_before = days;
    p.sample_size = j == "CIS" ? 2 * size(rng) : size(rng);
    const Vector y = truth + gamma[j] + delta + static_cast<double>(days) * eps + draw(noise[j]);
    p.shares = Vector::Constant(static_cast<Eigen::Index>(kCanon.size()), std::nan(""));
    double used = 0.0;
    for (Eigen::Index l = 0; l < R; ++l)
      if (full || l < 2) used += (p.shares[l] = std::round(std::clamp(y[l], 0.005, 0.8) * 1000.0) / 1000.0);
    p.shares[R] = std::round((1.0 - used) * 1000.0) / 1000.0;
    out.push_back(p);
  };
  for (const auto& plan : plans) {
    Vector truth = Vector::Zero(R);
    truth[0] = plan.psoe;
    truth[1] = plan.pp;
    const Vector delta = draw(sd), eps = draw(se);
    for (int k = 0; k < plan.polls; ++k)
      emit(plan.date, plan.pollsters[static_cast<std::size_t>(k) % plan.pollsters.size()], day(rng), truth, delta,
           eps, false);
    for (int k = 0; k < plan.stale; ++k)
      emit(plan.date, plan.pollsters[static_cast<std::size_t>(k) % plan.pollsters.size()], stale_day(rng), truth,
           delta, eps, false);
  }

  // 2015: every party reported; the within-window averages are pinned to
  // PSOE 0.211, PP 0.2736, Podemos 0.218, C's 0.184 by a common shift (an
  // election effect) and unit adjustments of the rounded shares.
  const std::vector<std::string> active{"CIS",       "Sigma Dos",   "Metroscopia", "GAD3",          "NC Report",
                                        "Invymark",  "TNS Demoscopia", "DYM",      "Celeste-Tel",   "Ipsos",
                                        "Simple Lógica", "GESOP"};
  const std::size_t first = out.size();
  Vector truth(R);
  truth << 0.2201, 0.2871, 0.2435, 0.1394;
  const Vector eps = draw(se);
  const Vector zero = Vector::Zero(R);
  for (int k = 0; k < 51; ++k) emit(kTarget, active[static_cast<std::size_t>(k) % active.size()], day(rng), truth, zero, eps, true);
  const std::size_t last = out.size();
  for (int k = 0; k < 6; ++k) emit(kTarget, active[static_cast<std::size_t>(k)], stale_day(rng), truth, zero, eps, true);
  const double target[] = {0.211, 0.2736, 0.218, 0.184};
  const double n = static_cast<double>(last - first);
  for (Eigen::Index l = 0; l < R; ++l) {
    double mean = 0.0;
    for (std::size_t k = first; k < last; ++k) mean += out[k].shares[l] / n;
    long total = 0;
    for (std::size_t k = first; k < last; ++k) {
      auto& s = out[k].shares[l];
      s = std::round((s + target[l] - mean) * 1000.0);
      total += static_cast<long>(s);
    }
    const long want = std::lround(target[l] * n * 1000.0);
    for (std::size_t k = first; total != want; k = k + 1 < last ? k + 1 : first) {
      const long step = want > total ? 1 : -1;
      out[k].shares[l] += static_cast<double>(step);
      total += step;
    }
    for (std::size_t k = first; k < last; ++k) out[k].shares[l] /= 1000.0;
  }
  for (std::size_t k = first; k < last; ++k) {
    long used = 0;
    for (Eigen::Index l = 0; l < R; ++l) used += std::lround(out[k].shares[l] * 1000.0);
    out[k].shares[R] = static_cast<double>(1000 - used) / 1000.0;
  }
  return out;
}

std::vector<ingest::HistoryRow> make_history(const std::vector<polls::Poll>& archive) {
  const double nan = std::nan("");
  std::vector<ingest::HistoryRow> rows{
      {"1996-03-03", "PSOE", "incumbent", .3763, .3878, 2.8, nan, 141, 159},
      {"2000-03-12", "PP", "incumbent", .4452, .3879, 4.5, nan, 183, 156},
      {"2004-03-14", "PP", "incumbent", .3771, .4452, 3.2, nan, 148, 183},
      {"2008-03-09", "PSOE", "incumbent", .4387, .4259, 3.8, nan, 169, 164},
      {"2011-11-20", "PSOE", "incumbent", .2876, .4387, 0.0, nan, 110, 169},
      {"2015-12-20", "PP", "incumbent", .2871, .4463, 1.4, nan, 123, 186},
      {"2016-06-26", "PP", "incumbent", .3301, .2871, 3.2, nan, 137, 123},
      {"1996-03-03", "PP", "challenger", .3879, .3476, 2.8, nan, 156, 141},
      {"2000-03-12", "PSOE", "challenger", .3416, .3763, 4.5, nan, 125, 141},
      {"2004-03-14", "PSOE", "challenger", .4259, .3416, 3.2, nan, 164, 125},
      {"2008-03-09", "PP", "challenger", .3994, .3771, 3.8, nan, 154, 148},
      {"2011-11-20", "PP", "challenger", .4463, .3994, 0.0, nan, 186, 154},
      {"2015-12-20", "PSOE", "challenger", .2201, .2876, 1.4, nan, 90, 110},
      {"2016-06-26", "PSOE", "challenger", .2263, .2201, 3.2, nan, 85, 90},
  };
  for (auto& h : rows) {
    std::vector<polls::Poll> ps;
    for (const auto& p : archive)
      if (p.election == h.election_date) ps.push_back(p);
    if (ps.empty()) continue;
    h.polls_average = benchmarks::polls_simple_average(ps, kCanon.size())[static_cast<Eigen::Index>(
        kCanon.index_of(h.party))];
  }
  return rows;
}

void save(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + p.string());
  f << text;
  std::cout << p.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Writes the synthetic survey, census, polls and history files"};
  std::string dir = "data";
  std::uint64_t seed = 20151220;
  std::string out;
  int respondents = 17452;
  app.add_option("--data", dir, "dataset directory holding results.csv");
  app.add_option("--out", out, "where to write (defaults to --data)");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--respondents", respondents, "survey rows to write")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  if (out.empty()) out = dir;
  try {
    fs::create_directories(out);
    const ingest::PartyMap map{kCanon, kAliases};
    const auto results = ingest::load_results((fs::path(dir) / "results.csv").string(), &map);
    const auto provinces = provinces_2015(results, map);
    std::mt19937_64 rng(seed);
    const auto census = make_census(provinces, rng);
    std::vector<int> ids;
    for (const auto& p : provinces) ids.push_back(p.id);
    const auto layout = fundamental::Layout::spanish(kCanon, ids);
    const auto params = truth_params(layout, provinces, census.census);
    save(fs::path(out) / "census.csv", ingest::write_census(census).str());
    save(fs::path(out) / "survey.csv", make_survey(layout, params, provinces, census.census, respondents, rng));
    const auto archive = make_polls(rng);
    save(fs::path(out) / "polls.csv", ingest::write_polls(archive, kCanon).str());
    std::vector<polls::Poll> in_window;
    for (const auto& p : archive)
      if (p.days_before <= 30) in_window.push_back(p);
    save(fs::path(out) / "history.csv", ingest::write_history(make_history(in_window)).str());
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  return 0;
}
