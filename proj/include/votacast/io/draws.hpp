#pragma once

// Posterior draws on disk: one row per (draw, parameter), columns
// draw, chain, parameter_name, value. Values use the shortest decimal that
// round-trips, so reloading gives bit-identical draws.

#include <string>
#include <unordered_map>
#include <vector>

#include "votacast/fundamental.hpp"
#include "votacast/io/csv.hpp"
#include "votacast/polls.hpp"

namespace votacast::io {

namespace detail {

inline void draw_rows(std::string& out, std::size_t draw, std::size_t chain, const std::vector<std::string>& names,
                      const std::vector<double>& values) {
  const std::string prefix = std::to_string(draw) + "," + std::to_string(chain) + ",";
  for (std::size_t k = 0; k < names.size(); ++k) {
    out += prefix;
    out += quote(names[k]);
    out += ',';
    out += format_double(values[k]);
    out += '\n';
  }
}

/// Reads a long draws file into per-draw vectors ordered like `names`,
/// checking that every draw carries every parameter exactly once.
inline std::vector<std::vector<double>> read_draw_rows(const std::string& path, const std::vector<std::string>& names,
                                                       std::vector<std::size_t>& chain_of) {
  std::unordered_map<std::string, std::size_t> slot;
  for (std::size_t k = 0; k < names.size(); ++k) slot.emplace(names[k], k);
  const std::string text = read_file(path);
  std::vector<std::vector<double>> draws;
  std::vector<std::size_t> filled;
  bool header = true;
  scan_csv(text, path, [&](std::size_t line, std::vector<std::string>& f) {
    auto bad = [&](const std::string& m) { fail(ErrorKind::validation, path + ":" + std::to_string(line) + ": " + m); };
    if (header) {
      clean_header(f);
      if (f != std::vector<std::string>{"draw", "chain", "parameter_name", "value"})
        bad("expected columns draw,chain,parameter_name,value");
      header = false;
      return;
    }
    if (f.size() != 4) bad("expected 4 fields");
    const auto d = parse_int(f[0]), c = parse_int(f[1]);
    const auto v = parse_double(f[3]);
    if (!d || *d < 0 || !c || *c < 0 || !v) bad("malformed draw row");
    const auto it = slot.find(f[2]);
    if (it == slot.end()) bad("unknown parameter '" + f[2] + "'");
    const auto di = static_cast<std::size_t>(*d);
    if (di >= draws.size()) {
      if (di != draws.size()) bad("draws must be numbered consecutively from 0");
      draws.emplace_back(names.size(), std::nan(""));
      filled.push_back(0);
      chain_of.push_back(static_cast<std::size_t>(*c));
    }
    if (chain_of[di] != static_cast<std::size_t>(*c)) bad("draw changes chain");
    if (!std::isnan(draws[di][it->second])) bad("duplicate parameter '" + f[2] + "'");
    draws[di][it->second] = *v;
    ++filled[di];
  });
  if (header) fail(ErrorKind::validation, path + ": empty file");
  for (std::size_t d = 0; d < draws.size(); ++d)
    if (filled[d] != names.size())
      fail(ErrorKind::validation, path + ": draw " + std::to_string(d) + " has " + std::to_string(filled[d]) + " of " +
                                      std::to_string(names.size()) + " parameters");
  if (draws.empty()) fail(ErrorKind::validation, path + ": no draws");
  return draws;
}

}  // namespace detail

inline std::string fundamental_draws_csv(const fundamental::Posterior& post) {
  const auto names = fundamental::parameter_names(post.layout);
  const std::size_t per_chain = post.chains ? post.draws.size() / post.chains : post.draws.size();
  std::string out = "draw,chain,parameter_name,value\n";
  for (std::size_t d = 0; d < post.draws.size(); ++d)
    detail::draw_rows(out, d, per_chain ? d / per_chain : 0, names, post.draws[d].flatten());
  return out;
}

/// Draws only; diagnostics and provenance live in the sidecar.
inline fundamental::Posterior read_fundamental_draws(const std::string& path, const fundamental::Layout& layout) {
  fundamental::Posterior post;
  post.layout = layout;
  std::vector<std::size_t> chain_of;
  for (const auto& x : detail::read_draw_rows(path, fundamental::parameter_names(layout), chain_of))
    post.draws.push_back(fundamental::Params::unflatten(layout, x));
  post.chains = chain_of.empty() ? 0 : chain_of.back() + 1;
  return post;
}

// ---------------------------------------------------------------- polls

/// gamma[pollster,party], delta[election,party], epsilon[election,party],
/// full covariance matrices Sigma_gamma[p,q], Sigma_delta[p,q],
/// Sigma_epsilon[p,q] and Sigma_pollster[pollster,p,q].
inline std::vector<std::string> polls_parameter_names(const PartyCanon& canon, const std::vector<std::string>& pollsters,
                                                      const std::vector<std::string>& elections) {
  const std::size_t r = canon.reduced_size();
  std::vector<std::string> names;
  auto effects = [&](const std::string& what, const std::vector<std::string>& ids) {
    for (const auto& id : ids)
      for (std::size_t l = 0; l < r; ++l) names.push_back(what + "[" + id + "," + canon.label(l) + "]");
  };
  auto cov = [&](const std::string& what) {
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < r; ++b) names.push_back(what + canon.label(a) + "," + canon.label(b) + "]");
  };
  effects("gamma", pollsters);
  effects("delta", elections);
  effects("epsilon", elections);
  cov("Sigma_gamma[");
  cov("Sigma_delta[");
  cov("Sigma_epsilon[");
  for (const auto& j : pollsters) cov("Sigma_pollster[" + j + ",");
  return names;
}

inline std::vector<double> flatten_polls(const polls::PollsParams& p, std::size_t r,
                                         const std::vector<std::string>& pollsters,
                                         const std::vector<std::string>& elections) {
  std::vector<double> out;
  auto effects = [&](const std::map<std::string, Vector>& m, const std::vector<std::string>& ids) {
    for (const auto& id : ids)
      for (std::size_t l = 0; l < r; ++l) out.push_back(m.at(id)[static_cast<Eigen::Index>(l)]);
  };
  auto cov = [&](const Matrix& m) {
    for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(r); ++a)
      for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(r); ++b) out.push_back(m(a, b));
  };
  effects(p.gamma, pollsters);
  effects(p.delta, elections);
  effects(p.epsilon, elections);
  cov(p.hypers.sigma_gamma);
  cov(p.hypers.sigma_delta);
  cov(p.hypers.sigma_epsilon);
  for (const auto& j : pollsters) cov(p.hypers.sigma_pollster.at(j));
  return out;
}

inline polls::PollsParams unflatten_polls(std::span<const double> x, std::size_t r,
                                          const std::vector<std::string>& pollsters,
                                          const std::vector<std::string>& elections) {
  polls::PollsParams p;
  std::size_t at = 0;
  auto effects = [&](std::map<std::string, Vector>& m, const std::vector<std::string>& ids) {
    for (const auto& id : ids) {
      Vector v(static_cast<Eigen::Index>(r));
      for (auto& e : v) e = x[at++];
      m[id] = v;
    }
  };
  auto cov = [&] {
    Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r));
    for (Eigen::Index a = 0; a < m.rows(); ++a)
      for (Eigen::Index b = 0; b < m.cols(); ++b) m(a, b) = x[at++];
    return m;
  };
  effects(p.gamma, pollsters);
  effects(p.delta, elections);
  effects(p.epsilon, elections);
  p.hypers.sigma_gamma = cov();
  p.hypers.sigma_delta = cov();
  p.hypers.sigma_epsilon = cov();
  for (const auto& j : pollsters) p.hypers.sigma_pollster[j] = cov();
  return p;
}

inline std::string polls_draws_csv(const polls::PollsPosterior& post) {
  const auto names = polls_parameter_names(post.canon, post.pollsters, post.elections);
  const std::size_t r = post.canon.reduced_size();
  const std::size_t per_chain = post.chains ? post.draws.size() / post.chains : post.draws.size();
  std::string out = "draw,chain,parameter_name,value\n";
  for (std::size_t d = 0; d < post.draws.size(); ++d)
    detail::draw_rows(out, d, per_chain ? d / per_chain : 0, names,
                      flatten_polls(post.draws[d], r, post.pollsters, post.elections));
  return out;
}

/// Draws only; the canon, pollster and election lists come from the sidecar.
inline polls::PollsPosterior read_polls_draws(const std::string& path, const PartyCanon& canon,
                                              std::vector<std::string> pollsters, std::vector<std::string> elections) {
  polls::PollsPosterior post;
  post.canon = canon;
  post.pollsters = std::move(pollsters);
  post.elections = std::move(elections);
  std::vector<std::size_t> chain_of;
  const auto rows =
      detail::read_draw_rows(path, polls_parameter_names(canon, post.pollsters, post.elections), chain_of);
  for (const auto& x : rows)
    post.draws.push_back(unflatten_polls(x, canon.reduced_size(), post.pollsters, post.elections));
  post.chains = chain_of.empty() ? 0 : chain_of.back() + 1;
  return post;
}

}  // namespace votacast::io
