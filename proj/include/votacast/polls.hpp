#pragma once

// Poll-error model: poll k of pollster j in election t is
//   p_k ~ N(v_t + gamma_j + delta_t + d_k * epsilon_t, Sigma_j)
// on the reduced simplex, with Gaussian random effects. Marginally the polls
// form a Gaussian process over (pollster, election, days-before).

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "votacast/core.hpp"
#include "votacast/error.hpp"
#include "votacast/inference/autodiff.hpp"
#include "votacast/inference/diagnostics.hpp"
#include "votacast/inference/hmc.hpp"
#include "votacast/inference/transforms.hpp"

namespace votacast::polls {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct Poll {
  std::string poll_id;
  std::string pollster;
  std::string election;
  int days_before = 0;
  Vector shares;  // full canon order; NaN marks a party the poll does not report
  std::optional<int> sample_size;

  /// Reduced dimensions with a reported share.
  [[nodiscard]] std::vector<std::size_t> observed(std::size_t reduced) const {
    std::vector<std::size_t> dims;
    for (std::size_t l = 0; l < reduced; ++l)
      if (std::isfinite(shares[static_cast<Eigen::Index>(l)])) dims.push_back(l);
    return dims;
  }
};

/// Checks the sub-simplex constraint on a poll's reported shares.
inline void validate_poll(const Poll& poll, std::size_t parties) {
  if (static_cast<std::size_t>(poll.shares.size()) != parties)
    fail(ErrorKind::invalid_input, "poll " + poll.poll_id + " has the wrong number of shares");
  if (poll.days_before < 0) fail(ErrorKind::invalid_input, "poll " + poll.poll_id + " has negative days_before");
  double total = 0.0;
  for (double s : poll.shares) {
    if (std::isnan(s)) continue;
    if (!std::isfinite(s) || s < 0.0 || s > 1.0)
      fail(ErrorKind::invalid_input, "poll " + poll.poll_id + " has a share outside [0, 1]");
    total += s;
  }
  if (total > 1.0 + 1e-6) fail(ErrorKind::invalid_input, "poll " + poll.poll_id + " shares sum above 1");
}

struct Hypers {
  Matrix sigma_gamma, sigma_delta, sigma_epsilon;
  std::map<std::string, Matrix> sigma_pollster;
};

struct PollsParams {
  std::map<std::string, Vector> gamma;    // by pollster
  std::map<std::string, Vector> delta;    // by election
  std::map<std::string, Vector> epsilon;  // by election, per day
  Hypers hypers;
};

/// gamma_j + delta_t + d * epsilon_t. Ids missing from the params are an
/// error unless allow_new is set, in which case the missing effect is its
/// prior mean, zero.
inline Vector poll_error_mean(const PollsParams& params, const Poll& poll, std::size_t reduced,
                              bool allow_new = false) {
  auto pick = [&](const std::map<std::string, Vector>& m, const std::string& key, const char* what) -> Vector {
    auto it = m.find(key);
    if (it != m.end()) return it->second;
    if (!allow_new) fail(ErrorKind::lookup, std::string("unknown ") + what + " '" + key + "'");
    return Vector::Zero(static_cast<Eigen::Index>(reduced));
  };
  return pick(params.gamma, poll.pollster, "pollster") + pick(params.delta, poll.election, "election") +
         static_cast<double>(poll.days_before) * pick(params.epsilon, poll.election, "election");
}

struct MeanCov {
  Vector mean;
  Matrix cov;
  double jitter = 0.0;
};

namespace detail {

/// Adds the smallest diagonal jitter (up to 1e-8) that makes `cov` positive
/// definite, and returns the jitter used.
inline double repair_psd(Matrix& cov) {
  if (cov.rows() == 0) return 0.0;
  for (double jitter : {0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8}) {
    Matrix trial = cov;
    trial.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(trial);
    if (llt.info() == Eigen::Success) {
      cov = std::move(trial);
      return jitter;
    }
  }
  fail(ErrorKind::model_misconfiguration, "poll covariance is not positive definite even with jitter 1e-8");
}

}  // namespace detail

/// Stacked mean and covariance of the polls, R = canon.reduced_size()
/// entries per poll in input order.
inline MeanCov marginal_mean_cov(std::span<const Poll> polls, const std::map<std::string, Vector>& results,
                                 const Hypers& hypers, std::size_t reduced) {
  const auto r = static_cast<Eigen::Index>(reduced);
  const auto n = static_cast<Eigen::Index>(polls.size());
  for (const Matrix* m : {&hypers.sigma_gamma, &hypers.sigma_delta, &hypers.sigma_epsilon})
    if (m->rows() != r || m->cols() != r) fail(ErrorKind::invalid_input, "hyper-covariance has the wrong size");
  CovMatrix(hypers.sigma_gamma);
  CovMatrix(hypers.sigma_delta);
  CovMatrix(hypers.sigma_epsilon);
  MeanCov out{Vector::Zero(n * r), Matrix::Zero(n * r, n * r), 0.0};
  for (Eigen::Index k = 0; k < n; ++k) {
    const Poll& a = polls[static_cast<std::size_t>(k)];
    auto res = results.find(a.election);
    if (res == results.end()) fail(ErrorKind::lookup, "no result for election '" + a.election + "'");
    out.mean.segment(k * r, r) = res->second.head(r);
    for (Eigen::Index q = 0; q <= k; ++q) {
      const Poll& b = polls[static_cast<std::size_t>(q)];
      Matrix block = Matrix::Zero(r, r);
      if (a.election == b.election)
        block += hypers.sigma_delta + static_cast<double>(a.days_before * b.days_before) * hypers.sigma_epsilon;
      if (a.pollster == b.pollster) block += hypers.sigma_gamma;
      if (k == q) {
        auto it = hypers.sigma_pollster.find(a.pollster);
        if (it == hypers.sigma_pollster.end()) fail(ErrorKind::lookup, "no covariance for pollster '" + a.pollster + "'");
        block += it->second;
      }
      out.cov.block(k * r, q * r, r, r) = block;
      out.cov.block(q * r, k * r, r, r) = block.transpose();
    }
  }
  out.jitter = detail::repair_psd(out.cov);
  return out;
}

/// Multivariate normal log-density of the stacked polls, dropping every
/// unreported party dimension.
inline double log_lik_polls(std::span<const Poll> polls, const std::map<std::string, Vector>& results,
                            const Hypers& hypers, std::size_t reduced) {
  const auto mc = marginal_mean_cov(polls, results, hypers, reduced);
  std::vector<Eigen::Index> keep;
  std::vector<double> y;
  for (std::size_t k = 0; k < polls.size(); ++k)
    for (std::size_t l : polls[k].observed(reduced)) {
      keep.push_back(static_cast<Eigen::Index>(k * reduced + l));
      y.push_back(polls[k].shares[static_cast<Eigen::Index>(l)]);
    }
  const auto m = static_cast<Eigen::Index>(keep.size());
  if (m == 0) fail(ErrorKind::invalid_input, "no observed poll shares");
  Matrix c(m, m);
  Vector resid(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    resid[i] = y[static_cast<std::size_t>(i)] - mc.mean[keep[static_cast<std::size_t>(i)]];
    for (Eigen::Index j = 0; j < m; ++j) c(i, j) = mc.cov(keep[static_cast<std::size_t>(i)], keep[static_cast<std::size_t>(j)]);
  }
  Eigen::LLT<Matrix> llt(c);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(c, Eigen::EigenvaluesOnly);
    fail(ErrorKind::numerical, "masked poll covariance is singular (eigenvalues in [" +
                                   std::to_string(eig.eigenvalues().minCoeff()) + ", " +
                                   std::to_string(eig.eigenvalues().maxCoeff()) + "])");
  }
  const Vector w = llt.matrixL().solve(resid);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * w.squaredNorm() - 0.5 * log_det - 0.5 * static_cast<double>(m) * kLog2Pi;
}

struct HyperPrior {
  double scale = 0.05;          // half-normal scale for gamma, delta and pollster noise
  double trend_scale = 0.05;    // half-normal scale for epsilon, per day
  double lkj_eta = 2.0;
};

/// Hierarchical training density with explicit, non-centered effects.
/// Coordinates: for each of Sigma_gamma, Sigma_delta, Sigma_epsilon and then
/// each pollster's Sigma_j, R log-scales followed by R(R-1)/2 correlation
/// coordinates; then the standardized effects z_gamma (J x R),
/// z_delta (T x R), z_epsilon (T x R).
class PollsTarget {
 public:
  PollsTarget(std::size_t reduced, std::vector<std::string> pollsters, std::vector<std::string> elections,
              std::span<const Poll> polls, const std::map<std::string, Vector>& results, HyperPrior prior = {})
      : r_(reduced), pollsters_(std::move(pollsters)), elections_(std::move(elections)), prior_(prior) {
    for (const auto& p : polls) {
      Row row;
      row.pollster = index_of(pollsters_, p.pollster, "pollster");
      row.election = index_of(elections_, p.election, "election");
      row.days = static_cast<double>(p.days_before);
      const Vector& v = results.at(p.election);
      for (std::size_t l : p.observed(r_)) {
        if (!std::isfinite(v[static_cast<Eigen::Index>(l)])) continue;
        row.dims.push_back(l);
        row.y.push_back(p.shares[static_cast<Eigen::Index>(l)]);
        row.v.push_back(v[static_cast<Eigen::Index>(l)]);
      }
      if (row.dims.empty()) continue;
      auto it = std::find(masks_.begin(), masks_.end(), row.dims);
      row.mask = static_cast<std::size_t>(it - masks_.begin());
      if (it == masks_.end()) masks_.push_back(row.dims);
      rows_.push_back(std::move(row));
    }
  }

  [[nodiscard]] std::size_t block_size() const { return r_ + inference::cpc_count(r_); }
  [[nodiscard]] std::size_t dimension() const {
    return (3 + pollsters_.size()) * block_size() + (pollsters_.size() + 2 * elections_.size()) * r_;
  }
  [[nodiscard]] std::size_t reduced() const { return r_; }
  [[nodiscard]] const std::vector<std::string>& pollsters() const { return pollsters_; }
  [[nodiscard]] const std::vector<std::string>& elections() const { return elections_; }
  [[nodiscard]] std::size_t observations() const { return rows_.size(); }

  double log_density(std::span<const double> u) const { return evaluate<double>(u); }

  double log_density_gradient(std::span<const double> u, std::span<double> g) const {
    return ad::value_and_gradient([this](std::span<const ad::Var> x) { return evaluate<ad::Var>(x); }, u, g);
  }

  template <class T>
  struct Decoded {
    std::vector<inference::Cholesky<T>> hyper;     // gamma, delta, epsilon
    std::vector<inference::Cholesky<T>> pollster;  // Sigma_j factors
    std::vector<std::vector<T>> gamma, delta, epsilon;
    T log_prior = T(0.0);
  };

  template <class T>
  Decoded<T> decode(std::span<const T> u) const {
    using std::exp;
    using ad::exp;
    Decoded<T> d;
    std::size_t at = 0;
    auto block = [&](double scale) {
      std::vector<T> s(r_);
      for (std::size_t l = 0; l < r_; ++l) {
        const T eta = u[at++];
        s[l] = exp(eta);
        d.log_prior += eta - 0.5 * (s[l] / scale) * (s[l] / scale);
      }
      const auto corr = inference::corr_cholesky_from_unconstrained<T>(u.subspan(at, inference::cpc_count(r_)), r_,
                                                                       d.log_prior);
      at += inference::cpc_count(r_);
      d.log_prior += inference::lkj_corr_cholesky_log_density(corr, prior_.lkj_eta);
      return inference::scale_rows<T>(corr, s);
    };
    d.hyper.push_back(block(prior_.scale));
    d.hyper.push_back(block(prior_.scale));
    d.hyper.push_back(block(prior_.trend_scale));
    for (std::size_t j = 0; j < pollsters_.size(); ++j) d.pollster.push_back(block(prior_.scale));
    auto effects = [&](const inference::Cholesky<T>& l, std::size_t count) {
      std::vector<std::vector<T>> out(count, std::vector<T>(r_, T(0.0)));
      for (std::size_t e = 0; e < count; ++e) {
        const std::size_t base = at;
        for (std::size_t i = 0; i < r_; ++i) {
          const T z = u[base + i];
          d.log_prior -= 0.5 * z * z;
          for (std::size_t m = i; m < r_; ++m) out[e][m] += l(m, i) * z;
        }
        at += r_;
      }
      return out;
    };
    d.gamma = effects(d.hyper[0], pollsters_.size());
    d.delta = effects(d.hyper[1], elections_.size());
    d.epsilon = effects(d.hyper[2], elections_.size());
    return d;
  }

  /// Natural-scale parameters at an unconstrained point.
  [[nodiscard]] PollsParams to_params(std::span<const double> u) const {
    const auto d = decode<double>(u);
    auto to_vec = [&](const std::vector<double>& x) {
      return Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(r_)).eval();
    };
    auto to_mat = [&](const inference::Cholesky<double>& l) {
      const auto full = inference::multiply_transpose(l);
      Matrix m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          full.data(), static_cast<Eigen::Index>(r_), static_cast<Eigen::Index>(r_));
      return Matrix(0.5 * (m + m.transpose()));
    };
    PollsParams p;
    p.hypers.sigma_gamma = to_mat(d.hyper[0]);
    p.hypers.sigma_delta = to_mat(d.hyper[1]);
    p.hypers.sigma_epsilon = to_mat(d.hyper[2]);
    for (std::size_t j = 0; j < pollsters_.size(); ++j) {
      p.hypers.sigma_pollster[pollsters_[j]] = to_mat(d.pollster[j]);
      p.gamma[pollsters_[j]] = to_vec(d.gamma[j]);
    }
    for (std::size_t t = 0; t < elections_.size(); ++t) {
      p.delta[elections_[t]] = to_vec(d.delta[t]);
      p.epsilon[elections_[t]] = to_vec(d.epsilon[t]);
    }
    return p;
  }

 private:
  struct Row {
    std::size_t pollster = 0, election = 0, mask = 0;
    double days = 0.0;
    std::vector<std::size_t> dims;
    std::vector<double> y, v;
  };

  static std::size_t index_of(const std::vector<std::string>& v, const std::string& key, const char* what) {
    auto it = std::find(v.begin(), v.end(), key);
    if (it == v.end()) fail(ErrorKind::lookup, std::string("unknown ") + what + " '" + key + "'");
    return static_cast<std::size_t>(it - v.begin());
  }

  template <class T>
  T evaluate(std::span<const T> u) const {
    const auto d = decode<T>(u);
    T lp = d.log_prior;
    // Noise factors restricted to each observed-dimension pattern, built lazily.
    std::vector<std::optional<inference::Cholesky<T>>> noise(pollsters_.size() * masks_.size());
    std::vector<T> resid;
    for (const auto& row : rows_) {
      auto& chol = noise[row.pollster * masks_.size() + row.mask];
      if (!chol) {
        const auto& dims = masks_[row.mask];
        if (dims.size() == r_) {
          chol = d.pollster[row.pollster];
        } else {
          const auto full = inference::multiply_transpose(d.pollster[row.pollster]);
          std::vector<T> sub(dims.size() * dims.size());
          for (std::size_t i = 0; i < dims.size(); ++i)
            for (std::size_t j = 0; j < dims.size(); ++j) sub[i * dims.size() + j] = full[dims[i] * r_ + dims[j]];
          inference::Cholesky<T> c;
          if (!inference::cholesky_decompose(sub, dims.size(), c)) return T(-INFINITY);
          chol = std::move(c);
        }
      }
      resid.resize(row.dims.size());
      for (std::size_t i = 0; i < row.dims.size(); ++i) {
        const std::size_t l = row.dims[i];
        resid[i] = row.y[i] - row.v[i] - d.gamma[row.pollster][l] - d.delta[row.election][l] -
                   row.days * d.epsilon[row.election][l];
      }
      lp += inference::mvn_log_density_chol<T>(resid, *chol);
    }
    return lp;
  }

  std::size_t r_;
  std::vector<std::string> pollsters_, elections_;
  HyperPrior prior_;
  std::vector<Row> rows_;
  std::vector<std::vector<std::size_t>> masks_;
};

struct PollsPosterior {
  PartyCanon canon;
  std::vector<std::string> pollsters, elections;
  std::size_t poll_count = 0;
  std::vector<PollsParams> draws;
  std::size_t chains = 0;
  inference::RhatResult rhat;  // over the unconstrained coordinates
  bool converged = false;
  double divergence_rate = 0.0;
  bool diagnostic_failure = false;
  std::vector<inference::ChainStats> chain_stats;
  inference::SamplerConfig config;
  std::vector<std::string> warnings;

  [[nodiscard]] bool knows_pollster(const std::string& j) const {
    return std::find(pollsters.begin(), pollsters.end(), j) != pollsters.end();
  }
};

/// Fits the hierarchical model to historical polls with known results.
/// `results` maps election id to the full-canon result shares; parties not
/// on an election's ballot carry NaN there and are masked. Pollsters listed
/// in `registry` without training polls are dropped with a warning.
inline PollsPosterior fit_polls(const PartyCanon& canon, std::span<const Poll> polls,
                                const std::map<std::string, Vector>& results, const inference::SamplerConfig& config,
                                const std::vector<std::string>& registry = {}, HyperPrior prior = {},
                                int window_days = 30) {
  PollsPosterior post;
  post.canon = canon;
  post.config = config;
  const std::size_t r = canon.reduced_size();
  std::vector<Poll> used;
  std::set<std::string> pollsters, elections;
  std::size_t outside = 0;
  for (const auto& p : polls) {
    validate_poll(p, canon.size());
    if (!results.count(p.election)) fail(ErrorKind::lookup, "training poll " + p.poll_id + " has no known result");
    if (p.days_before > window_days) {
      ++outside;
      continue;
    }
    if (p.observed(r).empty()) continue;
    used.push_back(p);
    pollsters.insert(p.pollster);
    elections.insert(p.election);
  }
  if (used.empty()) fail(ErrorKind::invalid_input, "no training polls");
  if (outside)
    post.warnings.push_back(std::to_string(outside) + " training polls outside the " + std::to_string(window_days) +
                            "-day window were excluded");
  for (const auto& j : registry)
    if (!pollsters.count(j)) post.warnings.push_back("pollster '" + j + "' has no training polls and was excluded");
  if (elections.size() == 1)
    post.warnings.push_back("only one training election: house effects and the election effect are confounded");

  post.pollsters.assign(pollsters.begin(), pollsters.end());
  post.elections.assign(elections.begin(), elections.end());
  post.poll_count = used.size();
  std::map<std::string, Vector> reduced_results;
  for (const auto& [id, v] : results) reduced_results[id] = v.head(static_cast<Eigen::Index>(r));

  const PollsTarget target(r, post.pollsters, post.elections, used, reduced_results, prior);
  const auto set = inference::hmc_sample(target, config);
  post.chains = set.chains();
  post.chain_stats = set.stats();
  post.divergence_rate = set.divergence_rate();
  post.diagnostic_failure = set.diagnostic_failure;
  for (std::size_t s = 0; s < set.total_draws(); ++s) post.draws.push_back(target.to_params(set.draw(s)));
  if (set.chains() >= 2 && set.draws_per_chain() >= 4) {
    post.rhat = inference::rhat(set);
    post.converged = post.rhat.converged(1.05) && !post.diagnostic_failure;
    if (!post.converged) post.warnings.push_back("polls model not converged: max rhat " + std::to_string(post.rhat.max()));
  } else {
    post.warnings.push_back("convergence not assessed: need at least 2 chains of 4 draws");
  }
  if (post.diagnostic_failure)
    post.warnings.push_back("divergence rate " + std::to_string(post.divergence_rate) + " exceeds the limit");
  return post;
}

/// Gaussian likelihood of a new election's polls as a function of its
/// reduced result v, averaged over thinned posterior draws. For each draw
/// the density is exp(-(q - 2 b'v + v'Pv)/2 + c), so every hypothesis costs
/// O(R^2) per draw once the stacked covariance has been factorized.
class PollsLikelihood {
 public:
  PollsLikelihood(std::span<const Poll> new_polls, const PollsPosterior& posterior, std::size_t max_draws = 100)
      : r_(posterior.canon.reduced_size()) {
    if (new_polls.empty()) fail(ErrorKind::invalid_input, "no polls for the new election");
    if (posterior.draws.empty()) fail(ErrorKind::invalid_input, "polls posterior has no draws");
    const std::string& election = new_polls.front().election;
    for (const auto& p : new_polls) {
      validate_poll(p, posterior.canon.size());
      if (p.election != election) fail(ErrorKind::invalid_input, "new polls must share one election id");
      if (!posterior.knows_pollster(p.pollster)) unseen_.insert(p.pollster);
    }
    const std::size_t n = std::min(max_draws, posterior.draws.size());
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t at = i * posterior.draws.size() / n;
      terms_.push_back(build(new_polls, posterior.draws[at]));
    }
  }

  [[nodiscard]] std::size_t draws() const { return terms_.size(); }
  [[nodiscard]] const std::set<std::string>& unseen_pollsters() const { return unseen_; }

  /// log( mean_d N(polls | v, draw d) ).
  [[nodiscard]] double log_density(const Vector& v_reduced) const {
    std::vector<double> each(terms_.size());
    for (std::size_t d = 0; d < terms_.size(); ++d) each[d] = terms_[d].at(v_reduced);
    return log_mean_exp(each);
  }
  [[nodiscard]] double log_density(const ShareVector& v) const {
    return log_density(Vector(v.values().head(static_cast<Eigen::Index>(r_))));
  }

  struct Term {
    Vector b;
    Matrix p;
    double q = 0.0, log_det = 0.0;
    std::size_t n = 0;
    [[nodiscard]] double at(const Vector& v) const {
      return -0.5 * (q - 2.0 * b.dot(v) + v.dot(p * v)) - 0.5 * log_det - 0.5 * static_cast<double>(n) * kLog2Pi;
    }
    /// log of the integral over v (flat prior) of the density.
    [[nodiscard]] double log_evidence() const {
      Eigen::LLT<Matrix> llt(p);
      const Vector m = llt.solve(b);
      const double log_det_p = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      return -0.5 * (q - b.dot(m)) - 0.5 * log_det - 0.5 * static_cast<double>(n - static_cast<std::size_t>(p.rows())) * kLog2Pi -
             0.5 * log_det_p;
    }
  };
  [[nodiscard]] const std::vector<Term>& terms() const { return terms_; }

  static double log_mean_exp(const std::vector<double>& x) {
    double top = -INFINITY;
    for (double v : x) top = std::max(top, v);
    if (top == -INFINITY) return top;
    double s = 0.0;
    for (double v : x) s += std::exp(v - top);
    return top + std::log(s / static_cast<double>(x.size()));
  }

 private:
  Term build(std::span<const Poll> polls, const PollsParams& draw) const {
    const auto r = static_cast<Eigen::Index>(r_);
    const Hypers& h = draw.hypers;
    Matrix pooled_noise = Matrix::Zero(r, r);
    for (const auto& [j, m] : h.sigma_pollster) pooled_noise += m;
    pooled_noise /= static_cast<double>(std::max<std::size_t>(1, h.sigma_pollster.size()));

    struct Obs {
      std::size_t poll;
      Eigen::Index dim;
    };
    std::vector<Obs> obs;
    for (std::size_t k = 0; k < polls.size(); ++k)
      for (std::size_t l : polls[k].observed(r_)) obs.push_back({k, static_cast<Eigen::Index>(l)});
    const auto m = static_cast<Eigen::Index>(obs.size());
    Matrix c(m, m);
    Vector y(m);
    Matrix a = Matrix::Zero(m, r);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Poll& pi = polls[obs[static_cast<std::size_t>(i)].poll];
      const Eigen::Index li = obs[static_cast<std::size_t>(i)].dim;
      const bool seen_i = !unseen_.count(pi.pollster);
      double offset = seen_i ? draw.gamma.at(pi.pollster)[li] : 0.0;
      y[i] = pi.shares[li] - offset;
      a(i, li) = 1.0;
      for (Eigen::Index j = 0; j <= i; ++j) {
        const Poll& pj = polls[obs[static_cast<std::size_t>(j)].poll];
        const Eigen::Index lj = obs[static_cast<std::size_t>(j)].dim;
        double v = h.sigma_delta(li, lj) + static_cast<double>(pi.days_before * pj.days_before) * h.sigma_epsilon(li, lj);
        if (!seen_i && pi.pollster == pj.pollster) v += h.sigma_gamma(li, lj);
        if (obs[static_cast<std::size_t>(i)].poll == obs[static_cast<std::size_t>(j)].poll) {
          const Matrix& noise = seen_i ? h.sigma_pollster.at(pi.pollster) : pooled_noise;
          v += noise(li, lj);
        }
        c(i, j) = c(j, i) = v;
      }
    }
    detail::repair_psd(c);
    Eigen::LLT<Matrix> llt(c);
    const Matrix ci_a = llt.solve(a);
    const Vector ci_y = llt.solve(y);
    Term t;
    t.b = a.transpose() * ci_y;
    t.p = a.transpose() * ci_a;
    t.q = y.dot(ci_y);
    t.log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    t.n = static_cast<std::size_t>(m);
    return t;
  }

  std::size_t r_;
  std::set<std::string> unseen_;
  std::vector<Term> terms_;
};

inline double polls_likelihood_at(const ShareVector& v, std::span<const Poll> new_polls,
                                  const PollsPosterior& posterior, std::size_t max_draws = 100) {
  return PollsLikelihood(new_polls, posterior, max_draws).log_density(v);
}

struct Predictive {
  std::vector<ShareVector> draws;
  std::size_t rejected = 0;
  double evidence_ess = 0.0;  // effective number of hyper draws after evidence weighting
  std::vector<std::string> warnings;
};

/// Samples the new election's result under a flat prior on v. Given a
/// hyper draw, v | polls is Gaussian with mean P^-1 b and covariance P^-1;
/// hyper draws are mixed in proportion to their evidence (the integral of
/// the likelihood over v). Draws outside the simplex are rejected.
inline Predictive predictive_flat_prior(std::span<const Poll> new_polls, const PollsPosterior& posterior,
                                        std::size_t S, std::uint64_t seed, std::size_t max_draws = 100) {
  if (new_polls.empty()) fail(ErrorKind::invalid_input, "flat prior alone is improper: no polls");
  const PollsLikelihood lik(new_polls, posterior, max_draws);
  const std::size_t r = posterior.canon.reduced_size();
  struct Component {
    Vector mean;
    Matrix chol;
  };
  std::vector<Component> comps;
  std::vector<double> log_z;
  for (const auto& t : lik.terms()) {
    Eigen::LLT<Matrix> llt(t.p);
    if (llt.info() != Eigen::Success)
      fail(ErrorKind::invalid_input, "polls do not identify every party: flat-prior posterior is improper");
    const Matrix cov = llt.solve(Matrix::Identity(t.p.rows(), t.p.cols()));
    comps.push_back({llt.solve(t.b), Eigen::LLT<Matrix>(cov).matrixL()});
    log_z.push_back(t.log_evidence());
  }
  const double top = *std::max_element(log_z.begin(), log_z.end());
  std::vector<double> w;
  double sum = 0.0, sum_sq = 0.0;
  for (double lz : log_z) {
    w.push_back(std::exp(lz - top));
    sum += w.back();
    sum_sq += w.back() * w.back();
  }
  Predictive out;
  out.evidence_ess = sum * sum / sum_sq;

  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::normal_distribution<double> z(0.0, 1.0);
  const PartyCanon& canon = posterior.canon;
  std::size_t attempts = 0;
  const std::size_t limit = 1000 * S + 1000;
  while (out.draws.size() < S) {
    if (++attempts > limit) fail(ErrorKind::numerical, "predictive rejection sampling did not finish");
    const auto& c = comps[pick(rng)];
    Vector e(static_cast<Eigen::Index>(r));
    for (auto& x : e) x = z(rng);
    const Vector v = c.mean + c.chol * e;
    if ((v.array() < 0.0).any() || v.sum() > 1.0) {
      ++out.rejected;
      continue;
    }
    out.draws.push_back(lift(ReducedVector(v), canon));
  }
  const double rate = static_cast<double>(out.rejected) / static_cast<double>(attempts);
  if (rate > 0.5)
    out.warnings.push_back("flat-prior predictive rejected " + std::to_string(rate * 100.0) +
                           "% of draws outside the simplex");
  return out;
}

}  // namespace votacast::polls
