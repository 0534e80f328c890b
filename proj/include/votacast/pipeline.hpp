#pragma once

// Stage orchestration behind the command line: each stage reads its inputs
// (and the artifacts of earlier stages) from disk and writes CSV outputs
// with a JSON provenance sidecar into the output directory.

#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "votacast/benchmarks.hpp"
#include "votacast/fundamental.hpp"
#include "votacast/hash.hpp"
#include "votacast/ingest.hpp"
#include "votacast/io/csv.hpp"
#include "votacast/io/draws.hpp"
#include "votacast/polls.hpp"
#include "votacast/seats.hpp"
#include "votacast/synthesis.hpp"

namespace votacast::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

struct Inputs {
  std::string survey, census, polls, results, contingents, history;
};

struct RunConfig {
  std::vector<std::string> canon{"PSOE", "PP", "Podemos", "C's", "others"};
  std::map<std::string, std::string> aliases;
  Inputs inputs;
  std::string target_election;
  std::vector<std::string> pollster_registry;
  inference::SamplerConfig fundamental_sampler;
  inference::SamplerConfig polls_sampler;
  fundamental::Parameterization parameterization = fundamental::Parameterization::centered;
  polls::HyperPrior polls_prior;
  std::size_t likelihood_draws = 100;
  std::size_t simulations = 4000;
  double inflation_factor = 1.5;
  double threshold = 0.03;
  int window_days = 30;
  double ess_floor = synthesis::kDefaultEssFloor;
  std::uint64_t seed = 20151220;
  std::string output_dir = "out";
  bool force = false;

  [[nodiscard]] PartyCanon party_canon() const { return PartyCanon(canon); }
  [[nodiscard]] ingest::PartyMap party_map() const { return {party_canon(), aliases}; }
  [[nodiscard]] fs::path out(const std::string& name) const { return fs::path(output_dir) / name; }
};

// ---------------------------------------------------------------- config

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(ErrorKind::configuration, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) fail(ErrorKind::configuration, "unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline inference::SamplerConfig sampler_from_json(const json& j, const std::string& where) {
  inference::SamplerConfig c;
  check_keys(j, where,
             {"chains", "iterations", "warmup_fraction", "target_accept", "max_leapfrog", "max_divergence_rate",
              "init_radius", "parallel"});
  read(j, "chains", c.chains);
  read(j, "iterations", c.iterations);
  read(j, "warmup_fraction", c.warmup_fraction);
  read(j, "target_accept", c.target_accept);
  read(j, "max_leapfrog", c.max_leapfrog);
  read(j, "max_divergence_rate", c.max_divergence_rate);
  read(j, "init_radius", c.init_radius);
  read(j, "parallel", c.parallel);
  c.validate();
  return c;
}

inline json sampler_to_json(const inference::SamplerConfig& c) {
  return {{"chains", c.chains},
          {"iterations", c.iterations},
          {"warmup_fraction", c.warmup_fraction},
          {"target_accept", c.target_accept},
          {"max_leapfrog", c.max_leapfrog},
          {"max_divergence_rate", c.max_divergence_rate},
          {"init_radius", c.init_radius},
          {"parallel", c.parallel}};
}

}  // namespace detail

/// Effective configuration, with input paths as resolved.
inline json to_json(const RunConfig& c) {
  return {{"canon", c.canon},
          {"aliases", c.aliases},
          {"inputs",
           {{"survey", c.inputs.survey},
            {"census", c.inputs.census},
            {"polls", c.inputs.polls},
            {"results", c.inputs.results},
            {"contingents", c.inputs.contingents},
            {"history", c.inputs.history}}},
          {"target_election", c.target_election},
          {"pollster_registry", c.pollster_registry},
          {"fundamental_sampler", detail::sampler_to_json(c.fundamental_sampler)},
          {"polls_sampler", detail::sampler_to_json(c.polls_sampler)},
          {"parameterization",
           c.parameterization == fundamental::Parameterization::centered ? "centered" : "non_centered"},
          {"polls_prior",
           {{"scale", c.polls_prior.scale},
            {"trend_scale", c.polls_prior.trend_scale},
            {"lkj_eta", c.polls_prior.lkj_eta}}},
          {"likelihood_draws", c.likelihood_draws},
          {"simulations", c.simulations},
          {"inflation_factor", c.inflation_factor},
          {"threshold", c.threshold},
          {"window_days", c.window_days},
          {"ess_floor", c.ess_floor},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"force", c.force}};
}

/// Reads a JSON run configuration. Relative input paths and output_dir are
/// taken relative to the configuration file; `out` overrides output_dir
/// (relative to the working directory).
inline RunConfig parse_config(const json& j, const fs::path& base, std::optional<std::uint64_t> seed = {},
                              std::optional<std::string> out = {}) {
  RunConfig c;
  try {
    detail::check_keys(j, "config",
                       {"canon", "aliases", "inputs", "target_election", "pollster_registry", "fundamental_sampler",
                        "polls_sampler", "parameterization", "polls_prior", "likelihood_draws", "simulations",
                        "inflation_factor", "threshold", "window_days", "ess_floor", "seed", "output_dir", "force"});
    detail::read(j, "canon", c.canon);
    detail::read(j, "aliases", c.aliases);
    if (!j.contains("inputs")) fail(ErrorKind::configuration, "config needs an inputs section");
    const auto& in = j.at("inputs");
    detail::check_keys(in, "inputs", {"survey", "census", "polls", "results", "contingents", "history"});
    auto path = [&](const char* key) {
      if (!in.contains(key)) fail(ErrorKind::configuration, std::string("inputs.") + key + " is required");
      const fs::path p = in.at(key).get<std::string>();
      return (p.is_absolute() ? p : base / p).lexically_normal().string();
    };
    c.inputs = {path("survey"), path("census"), path("polls"), path("results"), path("contingents"), path("history")};
    if (!j.contains("target_election")) fail(ErrorKind::configuration, "target_election is required");
    c.target_election = j.at("target_election").get<std::string>();
    detail::read(j, "pollster_registry", c.pollster_registry);
    if (j.contains("fundamental_sampler"))
      c.fundamental_sampler = detail::sampler_from_json(j.at("fundamental_sampler"), "fundamental_sampler");
    if (j.contains("polls_sampler")) c.polls_sampler = detail::sampler_from_json(j.at("polls_sampler"), "polls_sampler");
    if (j.contains("parameterization")) {
      const auto p = j.at("parameterization").get<std::string>();
      if (p == "centered") c.parameterization = fundamental::Parameterization::centered;
      else if (p == "non_centered") c.parameterization = fundamental::Parameterization::non_centered;
      else fail(ErrorKind::configuration, "parameterization must be centered or non_centered");
    }
    if (j.contains("polls_prior")) {
      const auto& p = j.at("polls_prior");
      detail::check_keys(p, "polls_prior", {"scale", "trend_scale", "lkj_eta"});
      detail::read(p, "scale", c.polls_prior.scale);
      detail::read(p, "trend_scale", c.polls_prior.trend_scale);
      detail::read(p, "lkj_eta", c.polls_prior.lkj_eta);
    }
    detail::read(j, "likelihood_draws", c.likelihood_draws);
    detail::read(j, "simulations", c.simulations);
    detail::read(j, "inflation_factor", c.inflation_factor);
    detail::read(j, "threshold", c.threshold);
    detail::read(j, "window_days", c.window_days);
    detail::read(j, "ess_floor", c.ess_floor);
    detail::read(j, "seed", c.seed);
    detail::read(j, "force", c.force);
    std::string dir = c.output_dir;
    detail::read(j, "output_dir", dir);
    c.output_dir = (fs::path(dir).is_absolute() ? fs::path(dir) : base / dir).lexically_normal().string();
  } catch (const json::exception& e) {
    fail(ErrorKind::configuration, std::string("malformed config: ") + e.what());
  }
  if (seed) c.seed = *seed;
  if (out) c.output_dir = *out;

  const PartyCanon canon = c.party_canon();
  for (const auto& [alias, target] : c.aliases)
    if (!canon.find(target)) fail(ErrorKind::configuration, "alias '" + alias + "' maps to unknown party " + target);
  if (!ingest::parse_date(c.target_election))
    fail(ErrorKind::configuration, "target_election must be YYYY-MM-DD");
  if (!(c.inflation_factor >= 1.0)) fail(ErrorKind::configuration, "inflation_factor must be at least 1");
  if (!(c.threshold >= 0.0 && c.threshold < 1.0)) fail(ErrorKind::configuration, "threshold must lie in [0, 1)");
  if (c.window_days < 0) fail(ErrorKind::configuration, "window_days must be non-negative");
  if (c.simulations == 0) fail(ErrorKind::configuration, "simulations must be positive");
  if (c.likelihood_draws == 0) fail(ErrorKind::configuration, "likelihood_draws must be positive");
  if (!(c.polls_prior.scale > 0.0 && c.polls_prior.trend_scale > 0.0 && c.polls_prior.lkj_eta > 0.0))
    fail(ErrorKind::configuration, "polls_prior scales and lkj_eta must be positive");
  for (const auto* p : {&c.inputs.survey, &c.inputs.census, &c.inputs.polls, &c.inputs.results,
                        &c.inputs.contingents, &c.inputs.history})
    if (!fs::is_regular_file(*p)) fail(ErrorKind::validation, "input file not found: " + *p);
  return c;
}

inline RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed = {},
                             std::optional<std::string> out = {}) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::configuration, path + ": " + e.what());
  }
  return parse_config(j, fs::path(path).parent_path(), seed, std::move(out));
}

// ---------------------------------------------------------------- helpers

struct StageResult {
  std::string stage;
  std::vector<std::string> written;
  std::vector<std::string> warnings;
  bool diagnostic_failure = false;
  std::string diagnostic;
};

namespace detail {

inline void save(StageResult& r, const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot write " + path.string());
  f << text;
  if (!f) fail(ErrorKind::io, "failed writing " + path.string());
  r.written.push_back(path.string());
}

inline void save_json(StageResult& r, const fs::path& path, const json& j) { save(r, path, j.dump(2) + "\n"); }

inline std::string file_hash(const std::string& path) { return Fnv1a().text(io::read_file(path)).hex(); }

inline json provenance(const RunConfig& c, const std::string& stage, const std::vector<std::string>& inputs) {
  json in = json::object();
  const std::map<std::string, std::string> paths{{"survey", c.inputs.survey},   {"census", c.inputs.census},
                                                 {"polls", c.inputs.polls},     {"results", c.inputs.results},
                                                 {"contingents", c.inputs.contingents}, {"history", c.inputs.history}};
  for (const auto& name : inputs) {
    const auto& p = paths.at(name);
    in[name] = {{"path", p}, {"fnv1a", file_hash(p)}};
  }
  return {{"tool", "votacast"}, {"version", kVersion}, {"stage", stage},
          {"seed", c.seed},     {"inputs", in},        {"config", to_json(c)}};
}

inline fs::path require_artifact(const RunConfig& c, const std::string& name, const std::string& producer) {
  const fs::path p = c.out(name);
  if (!fs::is_regular_file(p))
    fail(ErrorKind::dependency, "missing artifact " + p.string() + "; run `votacast " + producer + "` first");
  return p;
}

inline json read_json(const fs::path& p) {
  try {
    return json::parse(io::read_file(p.string()));
  } catch (const json::exception& e) {
    fail(ErrorKind::validation, p.string() + ": " + e.what());
  }
}

inline void check_canon(const RunConfig& c, const json& sidecar, const std::string& what) {
  if (sidecar.at("canon").get<std::vector<std::string>>() != c.canon)
    fail(ErrorKind::alignment, what + " was fitted with a different party canon; rerun it");
}

/// Inputs whose content changed since an artifact was produced.
inline void warn_stale(const json& sidecar, StageResult& r) {
  for (const auto& [name, info] : sidecar.at("inputs").items()) {
    const auto path = info.at("path").get<std::string>();
    if (!fs::is_regular_file(path) || file_hash(path) != info.at("fnv1a").get<std::string>())
      r.warnings.push_back(sidecar.at("stage").get<std::string>() + " used a different version of " + name +
                           "; rerun it");
  }
}

inline std::vector<std::string> header_with(std::vector<std::string> head, const std::vector<std::string>& parties) {
  head.insert(head.end(), parties.begin(), parties.end());
  return head;
}

inline std::vector<std::string> strings(std::initializer_list<std::string> a, std::span<const double> values) {
  std::vector<std::string> row(a);
  for (double v : values) row.push_back(io::format_double(v));
  return row;
}

inline json chain_stats_json(const std::vector<inference::ChainStats>& stats) {
  json out = json::array();
  for (const auto& s : stats)
    out.push_back({{"step_size", s.step_size},
                   {"leapfrog_steps", s.leapfrog_steps},
                   {"accept_rate", s.accept_rate},
                   {"divergences", s.divergences}});
  return out;
}

inline json worst_rhat(const inference::RhatResult& rhat, const std::vector<std::string>& names, std::size_t n = 5) {
  std::vector<std::size_t> order(rhat.values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double x = std::isfinite(rhat.values[a]) ? rhat.values[a] : 1e300;
    const double y = std::isfinite(rhat.values[b]) ? rhat.values[b] : 1e300;
    return x > y;
  });
  json out = json::array();
  for (std::size_t k = 0; k < std::min(n, order.size()); ++k) {
    const std::size_t d = order[k];
    const double v = rhat.values[d];
    out.push_back({{"parameter", d < names.size() ? names[d] : "coordinate " + std::to_string(d)},
                   {"rhat", std::isfinite(v) ? json(v) : json(nullptr)},
                   {"degenerate", static_cast<bool>(rhat.degenerate[d])}});
  }
  return out;
}

inline std::vector<polls::Poll> polls_for(std::span<const polls::Poll> all, const std::string& election) {
  std::vector<polls::Poll> out;
  for (const auto& p : all)
    if (p.election == election) out.push_back(p);
  return out;
}

}  // namespace detail

/// Seats from province-level returns, by raw party label. Elections stored
/// only as national totals cannot be allocated.
inline std::map<std::string, int> allocate_official(const ingest::Results& results, const std::string& election,
                                                    const std::map<int, int>& contingents, double threshold) {
  const auto it = results.votes.find(election);
  if (it == results.votes.end()) fail(ErrorKind::lookup, "no results for election " + election);
  std::vector<std::string> labels;
  for (const auto& [prov, parties] : it->second)
    for (const auto& [party, v] : parties)
      if (std::find(labels.begin(), labels.end(), party) == labels.end()) labels.push_back(party);
  std::sort(labels.begin(), labels.end());
  std::vector<seats::ProvinceVotes> provinces;
  for (const auto& [id, seats_here] : contingents) {
    const auto p = it->second.find(id);
    if (p == it->second.end())
      fail(ErrorKind::lookup, "election " + election + " has no returns for province " + std::to_string(id));
    seats::ProvinceVotes pv;
    pv.province_id = id;
    pv.contingent = seats_here;
    for (const auto& l : labels) pv.votes.push_back(p->second.count(l) ? p->second.at(l) : 0.0);
    provinces.push_back(std::move(pv));
  }
  for (const auto& [id, parties] : it->second)
    if (!contingents.count(id))
      fail(ErrorKind::lookup, "province " + std::to_string(id) + " has returns but no seat contingent");
  const auto alloc = seats::allocate_nation(provinces, threshold);
  std::map<std::string, int> out;
  for (std::size_t l = 0; l < labels.size(); ++l) out[labels[l]] = alloc.national[l];
  return out;
}

// ---------------------------------------------------------------- fit-fundamental

inline StageResult fit_fundamental_stage(const RunConfig& c) {
  StageResult r{"fit-fundamental", {}, {}, false, {}};
  const PartyCanon canon = c.party_canon();
  const auto survey = ingest::load_survey(c.inputs.survey, canon);
  const auto census = ingest::load_census(c.inputs.census);
  r.warnings.insert(r.warnings.end(), survey.warnings.begin(), survey.warnings.end());
  r.warnings.insert(r.warnings.end(), census.warnings.begin(), census.warnings.end());
  std::vector<int> provinces;
  for (const auto& [id, e] : census.census.electorate) provinces.push_back(id);
  for (const auto& s : survey.strata)
    if (!census.census.electorate.count(s.province_id))
      fail(ErrorKind::validation, "survey province " + std::to_string(s.province_id) + " is missing from the census");
  const auto layout = fundamental::Layout::spanish(canon, provinces);
  auto sampler = c.fundamental_sampler;
  sampler.seed = c.seed;
  const auto post = fundamental::fit_fundamental(layout, survey.strata, sampler, c.parameterization);
  r.warnings.insert(r.warnings.end(), post.warnings.begin(), post.warnings.end());

  fs::create_directories(c.output_dir);
  detail::save(r, c.out("fundamental_draws.csv"), io::fundamental_draws_csv(post));
  std::size_t respondents = 0;
  for (const auto& s : survey.strata) respondents += static_cast<std::size_t>(s.respondents());
  json factors = json::array();
  for (const auto& f : layout.demographic()) factors.push_back({{"name", f.name}, {"levels", f.levels}});
  auto side = detail::provenance(c, "fit-fundamental", {"survey", "census"});
  side["canon"] = c.canon;
  side["province_ids"] = layout.province_ids();
  side["factors"] = factors;
  side["chains"] = post.chains;
  side["draws"] = post.draws.size();
  side["data"] = {{"respondents_read", survey.respondents},
                  {"respondents_dropped", survey.dropped},
                  {"respondents_used", respondents},
                  {"observed_strata", survey.strata.size()},
                  {"data_hash", post.data_hash}};
  side["diagnostics"] = {{"converged", post.converged},
                         {"max_rhat", post.rhat.max()},
                         {"divergence_rate", post.divergence_rate},
                         {"divergence_failure", post.diagnostic_failure},
                         {"chains", detail::chain_stats_json(post.chain_stats)},
                         {"worst_rhat", detail::worst_rhat(post.rhat, fundamental::parameter_names(layout))}};
  side["warnings"] = r.warnings;
  detail::save_json(r, c.out("fundamental_draws.json"), side);
  if (!post.converged) {
    r.diagnostic_failure = true;
    r.diagnostic = "fundamental model did not converge (max rhat " + std::to_string(post.rhat.max()) + ")";
  }
  return r;
}

// ---------------------------------------------------------------- fit-polls

struct PollsInputs {
  ingest::PollsLoad archive;
  std::vector<polls::Poll> training, target;
  std::map<std::string, Vector> results;
};

/// Splits the archive into training polls (elections with known results,
/// other than the target) and the target election's polls.
inline PollsInputs load_polls_inputs(const RunConfig& c, std::vector<std::string>& warnings) {
  const PartyCanon canon = c.party_canon();
  const auto map = c.party_map();
  PollsInputs out;
  out.archive = ingest::load_polls(c.inputs.polls, canon, c.window_days);
  warnings.insert(warnings.end(), out.archive.warnings.begin(), out.archive.warnings.end());
  const auto results = ingest::load_results(c.inputs.results, &map);
  if (!c.pollster_registry.empty())
    for (const auto& p : out.archive.polls)
      if (std::find(c.pollster_registry.begin(), c.pollster_registry.end(), p.pollster) == c.pollster_registry.end())
        fail(ErrorKind::validation, "poll " + p.poll_id + " names pollster '" + p.pollster +
                                        "', which is not in the pollster registry");
  std::map<std::string, std::size_t> unused;
  for (const auto& p : out.archive.polls) {
    if (p.election == c.target_election) {
      out.target.push_back(p);
    } else if (results.votes.count(p.election)) {
      if (!out.results.count(p.election)) out.results[p.election] = results.national_shares(p.election, map);
      out.training.push_back(p);
    } else {
      ++unused[p.election];
    }
  }
  for (const auto& [e, n] : unused)
    warnings.push_back(std::to_string(n) + " polls for election " + e + " have no known result and were not used");
  return out;
}

inline StageResult fit_polls_stage(const RunConfig& c) {
  StageResult r{"fit-polls", {}, {}, false, {}};
  const auto in = load_polls_inputs(c, r.warnings);
  auto sampler = c.polls_sampler;
  sampler.seed = c.seed + 1;
  const auto post = polls::fit_polls(c.party_canon(), in.training, in.results, sampler, c.pollster_registry,
                                     c.polls_prior, c.window_days);
  r.warnings.insert(r.warnings.end(), post.warnings.begin(), post.warnings.end());

  fs::create_directories(c.output_dir);
  detail::save(r, c.out("polls_draws.csv"), io::polls_draws_csv(post));
  auto side = detail::provenance(c, "fit-polls", {"polls", "results"});
  side["canon"] = c.canon;
  side["pollsters"] = post.pollsters;
  side["elections"] = post.elections;
  side["chains"] = post.chains;
  side["draws"] = post.draws.size();
  side["data"] = {{"training_polls", post.poll_count},
                  {"target_polls", in.target.size()},
                  {"polls_per_election", in.archive.per_election},
                  {"excluded_by_window", in.archive.excluded_by_window}};
  side["diagnostics"] = {{"converged", post.converged},
                         {"max_rhat", post.rhat.max()},
                         {"divergence_rate", post.divergence_rate},
                         {"divergence_failure", post.diagnostic_failure},
                         {"chains", detail::chain_stats_json(post.chain_stats)},
                         {"worst_rhat", detail::worst_rhat(post.rhat, {})}};
  side["warnings"] = r.warnings;
  detail::save_json(r, c.out("polls_draws.json"), side);
  if (!post.converged) {
    r.diagnostic_failure = true;
    r.diagnostic = "polls model did not converge (max rhat " + std::to_string(post.rhat.max()) + ")";
  }
  return r;
}

// ---------------------------------------------------------------- synthesize

inline fundamental::Posterior load_fundamental_posterior(const RunConfig& c, StageResult& r) {
  const auto csv = detail::require_artifact(c, "fundamental_draws.csv", "fit-fundamental");
  const auto side = detail::read_json(detail::require_artifact(c, "fundamental_draws.json", "fit-fundamental"));
  detail::check_canon(c, side, "the fundamental model");
  detail::warn_stale(side, r);
  std::vector<fundamental::Factor> factors;
  for (const auto& f : side.at("factors")) factors.push_back({f.at("name"), f.at("levels")});
  const fundamental::Layout layout(c.party_canon(), side.at("province_ids").get<std::vector<int>>(), factors);
  auto post = io::read_fundamental_draws(csv.string(), layout);
  post.converged = side.at("diagnostics").at("converged").get<bool>();
  return post;
}

inline polls::PollsPosterior load_polls_posterior(const RunConfig& c, StageResult& r) {
  const auto csv = detail::require_artifact(c, "polls_draws.csv", "fit-polls");
  const auto side = detail::read_json(detail::require_artifact(c, "polls_draws.json", "fit-polls"));
  detail::check_canon(c, side, "the polls model");
  detail::warn_stale(side, r);
  auto post = io::read_polls_draws(csv.string(), c.party_canon(), side.at("pollsters"), side.at("elections"));
  post.converged = side.at("diagnostics").at("converged").get<bool>();
  post.poll_count = side.at("data").at("training_polls").get<std::size_t>();
  return post;
}

namespace detail {

inline const std::vector<double>& summary_probabilities() {
  static const std::vector<double> p{0.05, 0.5, 0.95};
  return p;
}

inline void summary_rows(io::CsvWriter& w, const std::string& source, const PartyCanon& canon,
                         const std::vector<std::vector<double>>& draws, const std::vector<double>& weights) {
  std::vector<double> column(draws.size());
  for (std::size_t l = 0; l < canon.size(); ++l) {
    for (std::size_t s = 0; s < draws.size(); ++s) column[s] = draws[s][l];
    const auto sum = synthesis::summarize_values(column, weights, summary_probabilities());
    w.row({canon.label(l), source + "_mean", io::format_double(sum.estimate)});
    w.row({canon.label(l), source + "_q05", io::format_double(sum.quantiles[0])});
    w.row({canon.label(l), source + "_q50", io::format_double(sum.quantiles[1])});
    w.row({canon.label(l), source + "_q95", io::format_double(sum.quantiles[2])});
  }
}

}  // namespace detail

inline StageResult synthesize_stage(const RunConfig& c) {
  StageResult r{"synthesize", {}, {}, false, {}};
  const PartyCanon canon = c.party_canon();
  auto fund = load_fundamental_posterior(c, r);
  auto polls_post = load_polls_posterior(c, r);
  if (!polls_post.converged) {
    if (!c.force) fail(ErrorKind::diagnostic, "polls posterior is not converged; rerun fit-polls or set force");
    r.warnings.push_back("polls posterior not converged (forced)");
  }
  std::vector<std::string> load_warnings;
  const auto in = load_polls_inputs(c, load_warnings);
  if (in.target.empty()) fail(ErrorKind::validation, "no polls for the target election " + c.target_election);
  const auto census = ingest::load_census(c.inputs.census);

  auto ens = fundamental::simulate_local_results(fundamental::inflate_alpha(std::move(fund), c.inflation_factor),
                                                 census.census, c.simulations, c.seed + 2, c.force);
  std::vector<std::vector<double>> prior(ens.draws());
  for (std::size_t s = 0; s < ens.draws(); ++s) prior[s].assign(ens.national(s).begin(), ens.national(s).end());
  synthesis::importance_weights(ens, in.target, polls_post, c.likelihood_draws, c.ess_floor);
  const auto predictive = polls::predictive_flat_prior(in.target, polls_post, c.simulations, c.seed + 3,
                                                       c.likelihood_draws);
  r.warnings.insert(r.warnings.end(), ens.warnings.begin(), ens.warnings.end());
  r.warnings.insert(r.warnings.end(), predictive.warnings.begin(), predictive.warnings.end());
  std::optional<synthesis::PriorWeight> weight;
  try {
    weight = synthesis::prior_weight_gaussian(prior, ens);
    r.warnings.insert(r.warnings.end(), weight->warnings.begin(), weight->warnings.end());
  } catch (const Error& e) {
    r.warnings.push_back(std::string("prior weight not computed: ") + e.what());
  }

  fs::create_directories(c.output_dir);
  const auto& labels = canon.labels();
  const auto w = ens.normalized_weights();
  {
    io::CsvWriter p({"province", "electorate"});
    for (std::size_t i = 0; i < ens.provinces(); ++i)
      p.row({std::to_string(ens.province_ids()[i]), io::format_double(ens.electorate()[i])});
    detail::save(r, c.out("ensemble_provinces.csv"), p.str());
  }
  {
    io::CsvWriter n(detail::header_with({"draw", "source_draw", "log_weight", "weight"}, labels));
    for (std::size_t s = 0; s < ens.draws(); ++s)
      n.row(detail::strings({std::to_string(s), std::to_string(ens.source_draw[s]),
                             io::format_double(ens.log_weights()[s]), io::format_double(w[s])},
                            ens.national(s)));
    detail::save(r, c.out("ensemble_national.csv"), n.str());
  }
  {
    io::CsvWriter l(detail::header_with({"draw", "province"}, labels));
    for (std::size_t s = 0; s < ens.draws(); ++s)
      for (std::size_t i = 0; i < ens.provinces(); ++i)
        l.row(detail::strings({std::to_string(s), std::to_string(ens.province_ids()[i])}, ens.local(s, i)));
    detail::save(r, c.out("ensemble_local.csv"), l.str());
  }
  std::vector<std::vector<double>> polls_draws;
  for (const auto& v : predictive.draws) polls_draws.emplace_back(v.values().begin(), v.values().end());
  const std::vector<double> equal_prior(prior.size(), 1.0 / static_cast<double>(prior.size()));
  const std::vector<double> equal_polls(polls_draws.size(), 1.0 / static_cast<double>(polls_draws.size()));
  {
    io::CsvWriter d(detail::header_with({"source", "draw", "weight"}, labels));
    for (std::size_t s = 0; s < prior.size(); ++s)
      d.row(detail::strings({"fundamental", std::to_string(s), io::format_double(equal_prior[s])}, prior[s]));
    for (std::size_t s = 0; s < polls_draws.size(); ++s)
      d.row(detail::strings({"polls", std::to_string(s), io::format_double(equal_polls[s])}, polls_draws[s]));
    for (std::size_t s = 0; s < prior.size(); ++s)
      d.row(detail::strings({"hybrid", std::to_string(s), io::format_double(w[s])}, prior[s]));
    detail::save(r, c.out("national_predictive.csv"), d.str());
  }
  {
    io::CsvWriter sum({"party", "statistic", "value"});
    detail::summary_rows(sum, "fundamental", canon, prior, equal_prior);
    detail::summary_rows(sum, "polls", canon, polls_draws, equal_polls);
    detail::summary_rows(sum, "hybrid", canon, prior, w);
    detail::save(r, c.out("national_summary.csv"), sum.str());
  }
  {
    io::CsvWriter pw({"party", "weight", "clipped"});
    if (weight) {
      for (std::size_t l = 0; l < weight->per_party.size(); ++l)
        pw.row({canon.label(l), io::format_double(weight->per_party[l]), weight->clipped[l] ? "true" : "false"});
      pw.row({"summary", io::format_double(weight->summary), "false"});
    }
    detail::save(r, c.out("prior_weight.csv"), pw.str());
  }
  auto side = detail::provenance(c, "synthesize", {"polls", "results", "census"});
  side["canon"] = c.canon;
  side["simulations"] = ens.draws();
  side["target_polls"] = in.target.size();
  side["ess"] = ens.ess();
  side["ess_floor"] = c.ess_floor;
  side["inflation_factor"] = c.inflation_factor;
  side["predictive"] = {{"rejected", predictive.rejected}, {"evidence_ess", predictive.evidence_ess}};
  side["prior_weight_definition"] =
      "posterior variance / prior variance per party, from Gaussian moment matching (conjugate precision ratio)";
  side["ensemble_warnings"] = ens.warnings;
  side["warnings"] = r.warnings;
  detail::save_json(r, c.out("synthesize.json"), side);
  if (ens.ess() < c.ess_floor) {
    r.diagnostic_failure = true;
    r.diagnostic = "importance weights are degenerate: ESS " + std::to_string(ens.ess());
  }
  return r;
}

// ---------------------------------------------------------------- allocate

/// Rebuilds the weighted ensemble written by synthesize.
inline SimulationEnsemble load_ensemble(const RunConfig& c) {
  const auto prov = io::read_csv(detail::require_artifact(c, "ensemble_provinces.csv", "synthesize").string());
  const auto nat = io::read_csv(detail::require_artifact(c, "ensemble_national.csv", "synthesize").string());
  const auto loc = io::read_csv(detail::require_artifact(c, "ensemble_local.csv", "synthesize").string());
  const auto side = detail::read_json(detail::require_artifact(c, "synthesize.json", "synthesize"));
  detail::check_canon(c, side, "the ensemble");
  auto num = [](const io::CsvTable& t, const io::CsvRow& row, std::size_t col) {
    if (col >= row.fields.size()) fail(ErrorKind::validation, t.source + ":" + std::to_string(row.line) + ": short row");
    const auto v = io::parse_double(row.fields[col]);
    if (!v) fail(ErrorKind::validation, t.source + ":" + std::to_string(row.line) + ": not a number");
    return *v;
  };
  std::vector<int> ids;
  std::vector<double> electorate;
  for (const auto& row : prov.rows) {
    ids.push_back(static_cast<int>(num(prov, row, prov.require("province"))));
    electorate.push_back(num(prov, row, prov.require("electorate")));
  }
  const PartyCanon canon = c.party_canon();
  SimulationEnsemble ens(canon, ids, electorate, nat.rows.size());
  std::vector<std::size_t> cols;
  for (const auto& l : canon.labels()) cols.push_back(loc.require(l));
  if (loc.rows.size() != nat.rows.size() * ids.size())
    fail(ErrorKind::validation, loc.source + ": expected one row per draw and province");
  for (std::size_t k = 0; k < loc.rows.size(); ++k) {
    auto dst = ens.local(k / ids.size(), k % ids.size());
    for (std::size_t l = 0; l < cols.size(); ++l) dst[l] = num(loc, loc.rows[k], cols[l]);
  }
  std::vector<double> log_w;
  const std::size_t c_lw = nat.require("log_weight"), c_src = nat.require("source_draw");
  for (std::size_t s = 0; s < nat.rows.size(); ++s) {
    ens.aggregate(s);
    log_w.push_back(num(nat, nat.rows[s], c_lw));
    ens.source_draw.push_back(static_cast<std::size_t>(num(nat, nat.rows[s], c_src)));
  }
  ens.set_log_weights(std::move(log_w));
  ens.warnings = side.at("ensemble_warnings").get<std::vector<std::string>>();
  return ens;
}

inline StageResult allocate_stage(const RunConfig& c) {
  StageResult r{"allocate", {}, {}, false, {}};
  const auto ens = load_ensemble(c);
  const auto contingents = ingest::load_contingents(c.inputs.contingents);
  const auto it = contingents.find(c.target_election);
  if (it == contingents.end()) fail(ErrorKind::validation, "no seat contingents for " + c.target_election);
  int chamber = 0;
  for (const auto& [p, s] : it->second) chamber += s;
  const auto dist = synthesis::seat_distribution(ens, it->second, c.threshold);
  r.warnings.insert(r.warnings.end(), dist.warnings.begin(), dist.warnings.end());

  const auto& labels = dist.canon.labels();
  const auto w = ens.normalized_weights();
  {
    io::CsvWriter d(detail::header_with({"draw", "weight"}, labels));
    for (std::size_t s = 0; s < dist.national.size(); ++s) {
      std::vector<std::string> row{std::to_string(s), io::format_double(w[s])};
      for (int n : dist.national[s]) row.push_back(std::to_string(n));
      d.row(row);
    }
    detail::save(r, c.out("seat_draws.csv"), d.str());
  }
  {
    io::CsvWriter s({"party", "statistic", "value"});
    for (std::size_t l = 0; l < labels.size(); ++l) {
      s.row({labels[l], "mean", io::format_double(dist.mean[l])});
      s.row({labels[l], "median", io::format_double(dist.median[l])});
      s.row({labels[l], "q05", io::format_double(dist.lower[l])});
      s.row({labels[l], "q95", io::format_double(dist.upper[l])});
    }
    detail::save(r, c.out("seat_summary.csv"), s.str());
  }
  {
    io::CsvWriter h({"party", "seats", "weight"});
    for (std::size_t l = 0; l < labels.size(); ++l)
      for (const auto& [n, p] : dist.histogram[l]) h.row({labels[l], std::to_string(n), io::format_double(p)});
    detail::save(r, c.out("seat_histogram.csv"), h.str());
  }
  json official = nullptr;
  const auto results = ingest::load_results(c.inputs.results);
  const auto rv = results.votes.find(c.target_election);
  if (rv != results.votes.end() && !rv->second.count(0)) {
    const auto seats_by_party = allocate_official(results, c.target_election, it->second, c.threshold);
    std::vector<std::pair<std::string, int>> rows(seats_by_party.begin(), seats_by_party.end());
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    io::CsvWriter o({"party", "seats"});
    for (const auto& [party, n] : rows) o.row({party, std::to_string(n)});
    detail::save(r, c.out("official_seats.csv"), o.str());
    official = seats_by_party;
  } else {
    r.warnings.push_back("no province-level results for " + c.target_election + "; official allocation skipped");
  }
  auto side = detail::provenance(c, "allocate", {"contingents", "results"});
  side["canon"] = c.canon;
  side["chamber_size"] = chamber;
  side["threshold"] = c.threshold;
  side["official_allocation"] = official;
  side["warnings"] = r.warnings;
  detail::save_json(r, c.out("allocate.json"), side);
  return r;
}

// ---------------------------------------------------------------- benchmark

inline StageResult benchmark_stage(const RunConfig& c) {
  using benchmarks::AltModel;
  StageResult r{"benchmark", {}, {}, false, {}};
  const auto history = ingest::load_history(c.inputs.history);
  std::set<std::string> elections;
  for (const auto& h : history)
    if (h.election_date >= c.target_election) elections.insert(h.election_date);
  if (!elections.count(c.target_election))
    r.warnings.push_back("history has no rows for the target election " + c.target_election);

  // Cross-check the stored poll averages against the archive.
  const PartyCanon canon = c.party_canon();
  const auto map = c.party_map();
  const auto archive = ingest::load_polls(c.inputs.polls, canon, c.window_days);
  for (const auto& h : history) {
    if (std::isnan(h.polls_average)) continue;
    const auto l = map.resolve(h.party);
    const auto ps = detail::polls_for(archive.polls, h.election_date);
    if (!l || ps.empty()) continue;
    const double a = benchmarks::polls_simple_average(ps, canon.size(), c.window_days)[static_cast<Eigen::Index>(*l)];
    if (std::isfinite(a) && std::abs(a - h.polls_average) > 5e-4)
      r.warnings.push_back("history polls_average for " + h.party + " " + h.election_date + " (" +
                           io::format_double(h.polls_average) + ") differs from the archive mean " +
                           io::format_double(a));
  }

  io::CsvWriter pred({"model", "election", "party", "role", "votes", "log_seats", "seats", "training_elections"});
  io::CsvWriter coef({"model", "election", "role", "response", "coefficient", "value"});
  for (auto m : {AltModel::fundamental, AltModel::polls, AltModel::hybrid})
    for (const auto& e : elections)
      for (const char* role : {"incumbent", "challenger"}) {
        benchmarks::AltPrediction p;
        try {
          p = benchmarks::alt_predict(m, history, e, role);
        } catch (const Error& err) {
          r.warnings.push_back(std::string(to_string(m)) + " " + role + " " + e + " skipped: " + err.what());
          continue;
        }
        std::string train;
        for (const auto& t : p.train_elections) train += (train.empty() ? "" : ";") + t;
        pred.row({to_string(m), e, p.party, role, io::format_double(p.votes), io::format_double(p.log_seats),
                  io::format_double(p.seats), train});
        const auto vn = benchmarks::coefficient_names(m, false), sn = benchmarks::coefficient_names(m, true);
        for (std::size_t k = 0; k < vn.size(); ++k)
          coef.row({to_string(m), e, role, "votes", vn[k],
                    io::format_double(p.vote_coefficients[static_cast<Eigen::Index>(k)])});
        for (std::size_t k = 0; k < sn.size(); ++k)
          coef.row({to_string(m), e, role, "log_seats", sn[k],
                    io::format_double(p.seat_coefficients[static_cast<Eigen::Index>(k)])});
      }
  fs::create_directories(c.output_dir);
  detail::save(r, c.out("benchmark_predictions.csv"), pred.str());
  detail::save(r, c.out("benchmark_coefficients.csv"), coef.str());
  auto side = detail::provenance(c, "benchmark", {"history", "polls"});
  side["elections"] = elections;
  side["warnings"] = r.warnings;
  detail::save_json(r, c.out("benchmark.json"), side);
  return r;
}

// ---------------------------------------------------------------- report

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace detail

/// Small-multiple bar charts of the weighted seat histograms.
inline std::string seat_histogram_svg(const std::vector<std::string>& parties,
                                      const std::vector<std::map<int, double>>& histogram) {
  const double width = 720, panel = 150, left = 90, right = 20, top = 30;
  int lo = std::numeric_limits<int>::max(), hi = 0;
  for (const auto& h : histogram)
    for (const auto& [n, w] : h) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
  if (lo > hi) lo = hi = 0;
  const double span = std::max(1, hi - lo + 1);
  const double bar = (width - left - right) / span;
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  const double height = top + panel * static_cast<double>(parties.size()) + 30;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<text x=\"" << left << "\" y=\"18\">Seat distribution (weighted)</text>\n";
  for (std::size_t l = 0; l < parties.size(); ++l) {
    const double y0 = top + panel * static_cast<double>(l);
    double peak = 0.0;
    for (const auto& [n, w] : histogram[l]) peak = std::max(peak, w);
    const std::string name = detail::xml_escape(parties[l]);
    os << "<text x=\"10\" y=\"" << y0 + panel / 2 << "\">" << name << "</text>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << y0 + panel - 20 << "\" x2=\"" << width - right << "\" y2=\""
       << y0 + panel - 20 << "\" stroke=\"#444\"/>\n";
    for (const auto& [n, w] : histogram[l]) {
      const double h = peak > 0 ? (panel - 30) * w / peak : 0.0;
      os << "<rect x=\"" << left + bar * (n - lo) << "\" y=\"" << y0 + panel - 20 - h << "\" width=\""
         << std::max(bar - 1.0, 0.5) << "\" height=\"" << h << "\" fill=\"#4a6fa5\"><title>" << name << " "
         << n << " seats: " << w << "</title></rect>\n";
    }
  }
  const double axis = top + panel * static_cast<double>(parties.size()) + 5;
  for (int n = lo; n <= hi; n += std::max(1, (hi - lo) / 10))
    os << "<text x=\"" << left + bar * (n - lo) << "\" y=\"" << axis + 12 << "\">" << n << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

inline StageResult report_stage(const RunConfig& c) {
  StageResult r{"report", {}, {}, false, {}};
  const auto summary_path = detail::require_artifact(c, "national_summary.csv", "synthesize");
  const auto predictive_path = detail::require_artifact(c, "national_predictive.csv", "synthesize");
  const auto weight_path = detail::require_artifact(c, "prior_weight.csv", "synthesize");
  const auto seats_path = detail::require_artifact(c, "seat_summary.csv", "allocate");
  const auto hist_path = detail::require_artifact(c, "seat_histogram.csv", "allocate");
  const auto bench_path = detail::require_artifact(c, "benchmark_predictions.csv", "benchmark");
  const auto history = ingest::load_history(c.inputs.history);
  const auto map = c.party_map();
  const PartyCanon canon = c.party_canon();

  auto stat_table = [](const fs::path& p) {
    const auto t = io::read_csv(p.string());
    std::map<std::pair<std::string, std::string>, double> out;
    const std::size_t a = t.require("party"), b = t.require("statistic"), v = t.require("value");
    for (const auto& row : t.rows)
      if (const auto x = io::parse_double(row.fields.at(v))) out[{row.fields.at(a), row.fields.at(b)}] = *x;
    return out;
  };
  const auto national = stat_table(summary_path);
  const auto seat_stats = stat_table(seats_path);
  std::map<std::tuple<std::string, std::string>, std::pair<double, double>> alt;  // (model, party) -> votes, seats
  {
    const auto t = io::read_csv(bench_path.string());
    const std::size_t m = t.require("model"), e = t.require("election"), p = t.require("party"),
                      v = t.require("votes"), s = t.require("seats");
    for (const auto& row : t.rows)
      if (row.fields.at(e) == c.target_election)
        alt[{row.fields.at(m), row.fields.at(p)}] = {io::parse_double(row.fields.at(v)).value_or(std::nan("")),
                                                     io::parse_double(row.fields.at(s)).value_or(std::nan(""))};
  }

  const fs::path dir = c.out("report");
  fs::create_directories(dir);
  json tables = json::array();
  struct Spec {
    std::string file, model, ours;
    bool seats;
  };
  for (const Spec& spec : {Spec{"table_fundamental_votes.csv", "fundamental", "fundamental_mean", false},
                           Spec{"table_polls_votes.csv", "polls", "polls_mean", false},
                           Spec{"table_hybrid_votes.csv", "hybrid", "hybrid_mean", false},
                           Spec{"table_hybrid_seats.csv", "hybrid", "mean", true}}) {
    std::map<benchmarks::Key, double> ours, alternative, outcomes;
    bool complete = true;
    for (const auto& h : history) {
      if (h.election_date != c.target_election) continue;
      const auto l = map.resolve(h.party);
      if (!l) {
        r.warnings.push_back("history party " + h.party + " is not in the canon; left out of the tables");
        continue;
      }
      const std::string label = canon.label(*l);
      const benchmarks::Key key{h.election_date, h.party};
      const auto a = alt.find({spec.model, h.party});
      if (a == alt.end()) {
        complete = false;
        break;
      }
      alternative[key] = spec.seats ? a->second.second : a->second.first;
      const auto& src = spec.seats ? seat_stats : national;
      const auto o = src.find({label, spec.ours});
      if (o == src.end()) fail(ErrorKind::validation, "summary has no " + spec.ours + " for " + label);
      ours[key] = o->second;
      outcomes[key] = spec.seats ? h.seats : h.result;
    }
    if (!complete || outcomes.empty()) {
      r.warnings.push_back(spec.file + " skipped: no " + spec.model + " benchmark for " + c.target_election);
      continue;
    }
    const auto rows = benchmarks::comparison_table(ours, alternative, outcomes);
    detail::save(r, dir / spec.file, benchmarks::write_comparison(rows).str());
    tables.push_back(spec.file);
  }

  for (const auto& p : {summary_path, predictive_path, weight_path, hist_path})
    detail::save(r, dir / p.filename(), io::read_file(p.string()));
  {
    const auto t = io::read_csv(hist_path.string());
    std::vector<std::map<int, double>> hist(canon.size());
    const std::size_t a = t.require("party"), n = t.require("seats"), w = t.require("weight");
    for (const auto& row : t.rows) {
      const auto l = canon.find(row.fields.at(a));
      const auto seats_here = io::parse_int(row.fields.at(n));
      const auto weight = io::parse_double(row.fields.at(w));
      if (!l || !seats_here || !weight) fail(ErrorKind::validation, t.source + ": malformed histogram row");
      hist[*l][static_cast<int>(*seats_here)] = *weight;
    }
    detail::save(r, dir / "seat_histogram.svg", seat_histogram_svg(canon.labels(), hist));
  }
  auto side = detail::provenance(c, "report", {"history"});
  side["tables"] = tables;
  std::vector<std::string> files;
  for (const auto& f : r.written) files.push_back(fs::path(f).filename().string());
  side["files"] = files;
  side["warnings"] = r.warnings;
  detail::save_json(r, dir / "report.json", side);
  return r;
}

// ---------------------------------------------------------------- dispatch

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"fit-fundamental", "fit-polls", "synthesize",
                                              "allocate",        "benchmark", "report"};
  return names;
}

inline StageResult run_stage(const RunConfig& c, const std::string& stage) {
  if (stage == "fit-fundamental") return fit_fundamental_stage(c);
  if (stage == "fit-polls") return fit_polls_stage(c);
  if (stage == "synthesize") return synthesize_stage(c);
  if (stage == "allocate") return allocate_stage(c);
  if (stage == "benchmark") return benchmark_stage(c);
  if (stage == "report") return report_stage(c);
  fail(ErrorKind::configuration, "unknown subcommand '" + stage + "'");
}

/// 3 for sampler and importance-sampling diagnostics, 2 for everything the
/// user can fix in the inputs or configuration.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::diagnostic:
    case ErrorKind::numerical:
    case ErrorKind::init:
      return 3;
    default:
      return 2;
  }
}

}  // namespace votacast::pipeline
