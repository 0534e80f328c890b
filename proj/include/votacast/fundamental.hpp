#pragma once

// Survey-trained multinomial logit with hierarchical factor priors,
// post-stratified to provinces.
//
// Parameters are kept in reduced form: every party except the pivot has an
// intercept, one coefficient per factor level, and one prior scale per
// factor. The pivot's coefficients are structurally zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "votacast/core.hpp"
#include "votacast/ensemble.hpp"
#include "votacast/error.hpp"
#include "votacast/hash.hpp"
#include "votacast/inference/diagnostics.hpp"
#include "votacast/inference/hmc.hpp"

namespace votacast::fundamental {

struct Factor {
  std::string name;
  int levels = 0;  // coded 1..levels
};

/// Factor structure of the model. Factor 0 is the province, whose levels
/// are the registered province ids; the remaining factors are demographic.
class Layout {
 public:
  Layout() = default;
  Layout(PartyCanon canon, std::vector<int> province_ids, std::vector<Factor> demographic)
      : canon_(std::move(canon)), province_ids_(std::move(province_ids)), factors_(std::move(demographic)) {
    if (province_ids_.empty()) fail(ErrorKind::invalid_input, "layout needs at least one province");
    std::sort(province_ids_.begin(), province_ids_.end());
    if (std::adjacent_find(province_ids_.begin(), province_ids_.end()) != province_ids_.end())
      fail(ErrorKind::invalid_input, "duplicate province id in layout");
    for (const auto& f : factors_)
      if (f.levels < 1) fail(ErrorKind::invalid_input, "factor '" + f.name + "' has no levels");
    offsets_.push_back(0);
    for (std::size_t k = 0; k < factor_count(); ++k) offsets_.push_back(offsets_.back() + levels(k));
  }

  /// Municipality size, gender, age, education and activity, as in the
  /// survey codebook.
  static Layout spanish(PartyCanon canon, std::vector<int> province_ids) {
    return Layout(std::move(canon), std::move(province_ids),
                  {{"municipality_size", 3}, {"gender", 2}, {"age", 3}, {"education", 3}, {"activity", 3}});
  }

  [[nodiscard]] const PartyCanon& canon() const { return canon_; }
  [[nodiscard]] std::size_t reduced() const { return canon_.reduced_size(); }
  [[nodiscard]] const std::vector<int>& province_ids() const { return province_ids_; }
  [[nodiscard]] const std::vector<Factor>& demographic() const { return factors_; }
  [[nodiscard]] std::size_t factor_count() const { return factors_.size() + 1; }
  [[nodiscard]] std::size_t levels(std::size_t k) const {
    return k == 0 ? province_ids_.size() : static_cast<std::size_t>(factors_[k - 1].levels);
  }
  [[nodiscard]] std::string factor_name(std::size_t k) const { return k == 0 ? "province" : factors_[k - 1].name; }
  [[nodiscard]] std::size_t total_levels() const { return offsets_.back(); }
  /// Row of factor k, level index j (0-based) in the stacked level table.
  [[nodiscard]] std::size_t level_row(std::size_t k, std::size_t j) const { return offsets_[k] + j; }

  [[nodiscard]] std::size_t province_level(int province_id) const {
    auto it = std::lower_bound(province_ids_.begin(), province_ids_.end(), province_id);
    if (it == province_ids_.end() || *it != province_id)
      fail(ErrorKind::invalid_input, "invalid stratum: unknown province " + std::to_string(province_id));
    return static_cast<std::size_t>(it - province_ids_.begin());
  }

  [[nodiscard]] std::size_t cells_per_province() const {
    std::size_t n = 1;
    for (const auto& f : factors_) n *= static_cast<std::size_t>(f.levels);
    return n;
  }

  /// Unconstrained parameter count: intercepts, level coefficients, scales.
  [[nodiscard]] std::size_t parameter_count() const { return reduced() * (1 + total_levels() + factor_count()); }

 private:
  PartyCanon canon_;
  std::vector<int> province_ids_;
  std::vector<Factor> factors_;
  std::vector<std::size_t> offsets_;
};

/// A demographic cell: survey counts per party and its share of the
/// province electorate. Levels use the 1-based survey codes, one per
/// demographic factor.
struct Stratum {
  int province_id = 0;
  std::vector<int> levels;
  std::vector<int> counts;
  double weight = 0.0;

  [[nodiscard]] int respondents() const {
    int n = 0;
    for (int c : counts) n += c;
    return n;
  }
};

struct Params {
  Vector alpha;  // reduced
  Matrix beta;   // stacked levels x reduced
  Matrix sigma;  // factors x reduced

  static Params zeros(const Layout& layout) {
    const auto r = static_cast<Eigen::Index>(layout.reduced());
    return {Vector::Zero(r), Matrix::Zero(static_cast<Eigen::Index>(layout.total_levels()), r),
            Matrix::Ones(static_cast<Eigen::Index>(layout.factor_count()), r)};
  }

  /// Flat natural-scale vector: [alpha, beta row-major, sigma row-major].
  [[nodiscard]] std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(alpha.size() + beta.size() + sigma.size()));
    for (Eigen::Index r = 0; r < alpha.size(); ++r) out.push_back(alpha[r]);
    for (Eigen::Index i = 0; i < beta.rows(); ++i)
      for (Eigen::Index r = 0; r < beta.cols(); ++r) out.push_back(beta(i, r));
    for (Eigen::Index k = 0; k < sigma.rows(); ++k)
      for (Eigen::Index r = 0; r < sigma.cols(); ++r) out.push_back(sigma(k, r));
    return out;
  }

  static Params unflatten(const Layout& layout, std::span<const double> x) {
    if (x.size() != layout.parameter_count()) fail(ErrorKind::invalid_input, "parameter vector has wrong length");
    Params p = zeros(layout);
    std::size_t at = 0;
    for (Eigen::Index r = 0; r < p.alpha.size(); ++r) p.alpha[r] = x[at++];
    for (Eigen::Index i = 0; i < p.beta.rows(); ++i)
      for (Eigen::Index r = 0; r < p.beta.cols(); ++r) p.beta(i, r) = x[at++];
    for (Eigen::Index k = 0; k < p.sigma.rows(); ++k)
      for (Eigen::Index r = 0; r < p.sigma.cols(); ++r) p.sigma(k, r) = x[at++];
    return p;
  }
};

/// Names matching Params::flatten order, e.g. "beta[age=2,PP]".
inline std::vector<std::string> parameter_names(const Layout& layout) {
  std::vector<std::string> names;
  const auto& canon = layout.canon();
  for (std::size_t r = 0; r < layout.reduced(); ++r) names.push_back("alpha[" + canon.label(r) + "]");
  for (std::size_t k = 0; k < layout.factor_count(); ++k)
    for (std::size_t j = 0; j < layout.levels(k); ++j) {
      const std::string level = k == 0 ? std::to_string(layout.province_ids()[j]) : std::to_string(j + 1);
      for (std::size_t r = 0; r < layout.reduced(); ++r)
        names.push_back("beta[" + layout.factor_name(k) + "=" + level + "," + canon.label(r) + "]");
    }
  for (std::size_t k = 0; k < layout.factor_count(); ++k)
    for (std::size_t r = 0; r < layout.reduced(); ++r)
      names.push_back("sigma[" + layout.factor_name(k) + "," + canon.label(r) + "]");
  return names;
}

/// Rows of the stacked level table that a stratum activates, one per factor.
inline std::vector<std::size_t> stratum_rows(const Layout& layout, const Stratum& s) {
  if (s.levels.size() != layout.demographic().size())
    fail(ErrorKind::invalid_input, "invalid stratum: expected " + std::to_string(layout.demographic().size()) +
                                       " factor levels, got " + std::to_string(s.levels.size()));
  std::vector<std::size_t> rows;
  rows.reserve(layout.factor_count());
  rows.push_back(layout.level_row(0, layout.province_level(s.province_id)));
  for (std::size_t k = 1; k < layout.factor_count(); ++k) {
    const int code = s.levels[k - 1];
    if (code < 1 || static_cast<std::size_t>(code) > layout.levels(k))
      fail(ErrorKind::invalid_input, "invalid stratum: level " + std::to_string(code) + " of factor '" +
                                         layout.factor_name(k) + "'");
    rows.push_back(layout.level_row(k, static_cast<std::size_t>(code - 1)));
  }
  return rows;
}

/// f_n = alpha + sum_k beta_(k, j_k[n]), with the pivot component 0.
inline Vector linear_predictor(const Layout& layout, const Params& params, const Stratum& stratum) {
  const auto rows = stratum_rows(layout, stratum);
  Vector f = Vector::Zero(static_cast<Eigen::Index>(layout.canon().size()));
  f.head(params.alpha.size()) = params.alpha;
  for (std::size_t row : rows) f.head(params.alpha.size()) += params.beta.row(static_cast<Eigen::Index>(row)).transpose();
  return f;
}

inline ShareVector stratum_probabilities(const Layout& layout, const Params& params, const Stratum& stratum) {
  return softmax(linear_predictor(layout, params, stratum));
}

namespace detail {

/// Observed strata flattened for fast likelihood evaluation.
struct SurveyData {
  std::size_t factors = 0, parties = 0;
  std::vector<std::size_t> rows;    // strata x factors
  std::vector<double> counts;       // strata x parties
  std::vector<double> totals;       // strata

  SurveyData(const Layout& layout, std::span<const Stratum> strata) : factors(layout.factor_count()),
                                                                      parties(layout.canon().size()) {
    for (const auto& s : strata) {
      if (s.counts.size() != parties) fail(ErrorKind::invalid_input, "stratum counts do not match the canon");
      int n = 0;
      for (int c : s.counts) {
        if (c < 0) fail(ErrorKind::invalid_input, "negative survey count");
        n += c;
      }
      const auto r = stratum_rows(layout, s);
      if (n == 0) continue;
      rows.insert(rows.end(), r.begin(), r.end());
      for (int c : s.counts) counts.push_back(c);
      totals.push_back(n);
    }
  }

  [[nodiscard]] std::size_t size() const { return totals.size(); }

  /// Multinomial log-likelihood (without the count constant). Adds
  /// d/d beta_row to g_beta (rows x reduced, row-major) and d/d alpha to g_alpha.
  double log_likelihood(std::span<const double> alpha, std::span<const double> beta, double* g_alpha,
                        double* g_beta) const {
    const std::size_t r = parties - 1;
    std::vector<double> f(parties), e(parties), g(r);
    double lp = 0.0;
    for (std::size_t n = 0; n < size(); ++n) {
      const std::size_t* row = rows.data() + n * factors;
      std::copy(alpha.begin(), alpha.end(), f.begin());
      f[r] = 0.0;
      for (std::size_t k = 0; k < factors; ++k) {
        const double* b = beta.data() + row[k] * r;
        for (std::size_t l = 0; l < r; ++l) f[l] += b[l];
      }
      const double top = *std::max_element(f.begin(), f.end());
      double z = 0.0;
      for (std::size_t l = 0; l < parties; ++l) z += (e[l] = std::exp(f[l] - top));
      const double log_z = top + std::log(z);
      const double* s = counts.data() + n * parties;
      double dot = 0.0;
      for (std::size_t l = 0; l < r; ++l) dot += s[l] * f[l];
      lp += dot - totals[n] * log_z;
      if (!g_alpha) continue;
      const double scale = totals[n] / z;
      for (std::size_t l = 0; l < r; ++l) {
        g[l] = s[l] - scale * e[l];
        g_alpha[l] += g[l];
      }
      for (std::size_t k = 0; k < factors; ++k) {
        double* gb = g_beta + row[k] * r;
        for (std::size_t l = 0; l < r; ++l) gb[l] += g[l];
      }
    }
    return lp;
  }
};

}  // namespace detail

/// Log posterior on the natural scale (alpha, beta, sigma > 0), up to a
/// constant. Used for checks; sampling uses SamplerTarget.
class NaturalPosterior {
 public:
  NaturalPosterior(Layout layout, std::span<const Stratum> strata)
      : layout_(std::move(layout)), data_(layout_, strata) {}

  [[nodiscard]] std::size_t dimension() const { return layout_.parameter_count(); }
  [[nodiscard]] const Layout& layout() const { return layout_; }

  double log_density(std::span<const double> x) const { return evaluate(x, nullptr); }
  double log_density_gradient(std::span<const double> x, std::span<double> g) const { return evaluate(x, g.data()); }

  /// Natural perturbation scale per coordinate: 1 for intercepts, the
  /// factor's sigma for its coefficients and for sigma itself.
  [[nodiscard]] std::vector<double> standard_scale(std::span<const double> x) const {
    const std::size_t r = layout_.reduced();
    const std::size_t nb = layout_.total_levels() * r;
    std::vector<double> scale(x.size(), 1.0);
    for (std::size_t k = 0; k < layout_.factor_count(); ++k)
      for (std::size_t l = 0; l < r; ++l) {
        const double s = x[r + nb + k * r + l];
        scale[r + nb + k * r + l] = s;
        for (std::size_t j = 0; j < layout_.levels(k); ++j) scale[r + layout_.level_row(k, j) * r + l] = s;
      }
    return scale;
  }

  [[nodiscard]] double log_likelihood(const Params& p) const {
    const auto flat = p.flatten();
    const std::size_t r = layout_.reduced();
    return data_.log_likelihood({flat.data(), r}, {flat.data() + r, layout_.total_levels() * r}, nullptr, nullptr);
  }

 private:
  double evaluate(std::span<const double> x, double* grad) const {
    const std::size_t r = layout_.reduced();
    const std::size_t nb = layout_.total_levels() * r;
    const double* alpha = x.data();
    const double* beta = alpha + r;
    const double* sigma = beta + nb;
    for (std::size_t i = 0; i < layout_.factor_count() * r; ++i)
      if (!(sigma[i] > 0.0)) {
        if (grad) std::fill(grad, grad + dimension(), 0.0);
        return -INFINITY;
      }
    if (grad) std::fill(grad, grad + dimension(), 0.0);
    double lp = data_.log_likelihood({alpha, r}, {beta, nb}, grad, grad ? grad + r : nullptr);
    for (std::size_t l = 0; l < r; ++l) {
      lp -= 0.5 * alpha[l] * alpha[l];
      if (grad) grad[l] -= alpha[l];
    }
    for (std::size_t k = 0; k < layout_.factor_count(); ++k)
      for (std::size_t l = 0; l < r; ++l) {
        const double s = sigma[k * r + l];
        double sum_sq = 0.0;
        for (std::size_t j = 0; j < layout_.levels(k); ++j) {
          const std::size_t at = layout_.level_row(k, j) * r + l;
          const double b = beta[at];
          sum_sq += b * b;
          if (grad) grad[r + at] -= b / (s * s);
        }
        const double nl = static_cast<double>(layout_.levels(k));
        lp += -0.5 * sum_sq / (s * s) - nl * std::log(s) - 0.5 * s * s;
        if (grad) grad[r + nb + k * r + l] += sum_sq / (s * s * s) - nl / s - s;
      }
    return lp;
  }

  Layout layout_;
  detail::SurveyData data_;
};

enum class Parameterization { centered, non_centered };

/// Sampler-facing density over an unconstrained point u. Centered:
/// u = [alpha, beta, log sigma]. Non-centered: u = [alpha, z, log sigma] with
/// beta = sigma * z per factor and party. Both include the log-scale Jacobian.
class SamplerTarget {
 public:
  SamplerTarget(Layout layout, std::span<const Stratum> strata, Parameterization form = Parameterization::centered)
      : layout_(std::move(layout)), data_(layout_, strata), form_(form) {}

  [[nodiscard]] std::size_t dimension() const { return layout_.parameter_count(); }
  [[nodiscard]] const Layout& layout() const { return layout_; }
  [[nodiscard]] Parameterization form() const { return form_; }
  [[nodiscard]] std::size_t observed_strata() const { return data_.size(); }

  double log_density(std::span<const double> u) const { return evaluate(u, nullptr); }
  double log_density_gradient(std::span<const double> u, std::span<double> g) const {
    return evaluate(u, g.data());
  }

  /// Natural-scale parameters for an unconstrained point.
  [[nodiscard]] Params to_params(std::span<const double> u) const {
    const std::size_t r = layout_.reduced();
    const std::size_t nb = layout_.total_levels() * r;
    std::vector<double> flat(u.begin(), u.end());
    for (std::size_t i = 0; i < layout_.factor_count() * r; ++i) flat[r + nb + i] = std::exp(u[r + nb + i]);
    if (form_ == Parameterization::non_centered)
      for (std::size_t k = 0; k < layout_.factor_count(); ++k)
        for (std::size_t j = 0; j < layout_.levels(k); ++j)
          for (std::size_t l = 0; l < r; ++l) flat[r + layout_.level_row(k, j) * r + l] *= flat[r + nb + k * r + l];
    return Params::unflatten(layout_, flat);
  }

 private:
  double evaluate(std::span<const double> u, double* grad) const {
    const std::size_t r = layout_.reduced();
    const std::size_t nb = layout_.total_levels() * r;
    const std::size_t kf = layout_.factor_count();
    const bool centered = form_ == Parameterization::centered;
    const double* alpha = u.data();
    const double* b = alpha + r;  // beta (centered) or z (non-centered)
    const double* eta = b + nb;

    std::vector<double> sigma(kf * r), beta(b, b + nb), g_beta;
    for (std::size_t i = 0; i < kf * r; ++i) sigma[i] = std::exp(eta[i]);
    if (!centered)
      for (std::size_t k = 0; k < kf; ++k)
        for (std::size_t j = 0; j < layout_.levels(k); ++j)
          for (std::size_t l = 0; l < r; ++l) {
            const std::size_t at = layout_.level_row(k, j) * r + l;
            beta[at] = sigma[k * r + l] * b[at];
          }
    if (grad) {
      std::fill(grad, grad + dimension(), 0.0);
      g_beta.assign(nb, 0.0);
    }
    double lp = data_.log_likelihood({alpha, r}, beta, grad, grad ? g_beta.data() : nullptr);

    for (std::size_t l = 0; l < r; ++l) {
      lp -= 0.5 * alpha[l] * alpha[l];
      if (grad) grad[l] -= alpha[l];
    }
    for (std::size_t k = 0; k < kf; ++k)
      for (std::size_t l = 0; l < r; ++l) {
        const double s = sigma[k * r + l];
        const double nl = static_cast<double>(layout_.levels(k));
        double sum_sq = 0.0, acc = 0.0;
        for (std::size_t j = 0; j < layout_.levels(k); ++j) {
          const std::size_t at = layout_.level_row(k, j) * r + l;
          sum_sq += b[at] * b[at];
          if (!grad) continue;
          if (centered) {
            grad[r + at] = g_beta[at] - b[at] / (s * s);
          } else {
            grad[r + at] = s * g_beta[at] - b[at];
            acc += g_beta[at] * b[at];
          }
        }
        const double e = eta[k * r + l];
        if (centered) {
          // beta ~ N(0, s^2): -sum/(2 s^2) - nl * eta; half-normal on s; Jacobian eta.
          lp += -0.5 * sum_sq / (s * s) - nl * e - 0.5 * s * s + e;
          if (grad) grad[r + nb + k * r + l] = sum_sq / (s * s) - nl - s * s + 1.0;
        } else {
          lp += -0.5 * sum_sq - 0.5 * s * s + e;
          if (grad) grad[r + nb + k * r + l] = s * acc - s * s + 1.0;
        }
      }
    return lp;
  }

  Layout layout_;
  detail::SurveyData data_;
  Parameterization form_;
};

struct Posterior {
  Layout layout;
  std::vector<Params> draws;
  std::size_t chains = 0;
  inference::RhatResult rhat;  // per natural-scale parameter, flatten order
  bool converged = false;
  bool inflated = false;
  double inflation_factor = 1.0;
  double divergence_rate = 0.0;
  bool diagnostic_failure = false;
  std::vector<inference::ChainStats> chain_stats;
  inference::SamplerConfig config;
  std::string data_hash;
  std::vector<std::string> warnings;
};

inline std::string hash_strata(std::span<const Stratum> strata) {
  Fnv1a h;
  for (const auto& s : strata) {
    h.value(s.province_id).value(s.weight);
    for (int v : s.levels) h.value(v);
    for (int c : s.counts) h.value(c);
  }
  return h.hex();
}

inline Posterior fit_fundamental(const Layout& layout, std::span<const Stratum> strata,
                                 const inference::SamplerConfig& config,
                                 Parameterization form = Parameterization::centered) {
  SamplerTarget target(layout, strata, form);
  if (target.observed_strata() == 0) fail(ErrorKind::invalid_input, "survey has no respondents");
  const auto set = inference::hmc_sample(target, config);

  Posterior post;
  post.layout = layout;
  post.chains = set.chains();
  post.config = config;
  post.chain_stats = set.stats();
  post.divergence_rate = set.divergence_rate();
  post.diagnostic_failure = set.diagnostic_failure;
  post.data_hash = hash_strata(strata);

  inference::ChainSet natural(set.chains(), set.draws_per_chain(), target.dimension(), set.warmup(), set.seed());
  post.draws.reserve(set.total_draws());
  for (std::size_t c = 0; c < set.chains(); ++c)
    for (std::size_t i = 0; i < set.draws_per_chain(); ++i) {
      post.draws.push_back(target.to_params(set.draw(c, i)));
      const auto flat = post.draws.back().flatten();
      std::copy(flat.begin(), flat.end(), natural.draw(c, i).begin());
    }
  if (set.chains() >= 2 && set.draws_per_chain() >= 4) {
    post.rhat = inference::rhat(natural);
    post.converged = post.rhat.converged(1.05) && !post.diagnostic_failure;
    if (!post.converged)
      post.warnings.push_back("fundamental model not converged: max rhat " + std::to_string(post.rhat.max()));
  } else {
    post.warnings.push_back("convergence not assessed: need at least 2 chains of 4 draws");
  }
  if (post.diagnostic_failure)
    post.warnings.push_back("divergence rate " + std::to_string(post.divergence_rate) + " exceeds the limit");
  return post;
}

/// Scales every intercept draw by `factor` to widen the predictive spread.
inline Posterior inflate_alpha(Posterior posterior, double factor = 1.5) {
  if (!(factor >= 1.0)) fail(ErrorKind::invalid_input, "inflation factor must be at least 1");
  for (auto& d : posterior.draws) d.alpha *= factor;
  posterior.inflated = true;
  posterior.inflation_factor *= factor;
  return posterior;
}

/// Census side of post-stratification: stratum weights per province and the
/// electorate used for national aggregation.
struct Census {
  std::vector<Stratum> cells;           // counts unused; weight = share of province electorate
  std::map<int, double> electorate;     // province id -> registered voters
};

/// Census cells resolved against a layout once, so that post-stratifying
/// many draws does not repeat the lookups.
class CellTable {
 public:
  CellTable(const Layout& layout, std::span<const Stratum> cells)
      : factors_(layout.factor_count()), parties_(layout.canon().size()), weight_(layout.province_ids().size(), 0.0) {
    for (const auto& cell : cells) {
      if (!(cell.weight >= 0.0) || !std::isfinite(cell.weight))
        fail(ErrorKind::invalid_input, "census weights must be finite and non-negative");
      const auto r = stratum_rows(layout, cell);
      if (cell.weight == 0.0) continue;
      const std::size_t p = layout.province_level(cell.province_id);
      rows_.insert(rows_.end(), r.begin(), r.end());
      province_.push_back(p);
      cell_weight_.push_back(cell.weight);
      weight_[p] += cell.weight;
    }
    for (std::size_t p = 0; p < weight_.size(); ++p)
      if (!(weight_[p] > 0.0))
        fail(ErrorKind::missing_census, "province " + std::to_string(layout.province_ids()[p]) +
                                            " has no census weight");
  }

  /// Province-by-party shares (row-major) for one parameter draw.
  void shares(const Params& params, std::vector<double>& out) const {
    const std::size_t np = weight_.size();
    const std::size_t r = parties_ - 1;
    out.assign(np * parties_, 0.0);
    std::vector<double> f(parties_), mu(parties_);
    for (std::size_t c = 0; c < province_.size(); ++c) {
      for (std::size_t l = 0; l < r; ++l) f[l] = params.alpha[static_cast<Eigen::Index>(l)];
      f[r] = 0.0;
      for (std::size_t k = 0; k < factors_; ++k) {
        const auto row = static_cast<Eigen::Index>(rows_[c * factors_ + k]);
        for (std::size_t l = 0; l < r; ++l) f[l] += params.beta(row, static_cast<Eigen::Index>(l));
      }
      softmax_into(f, mu);
      double* dst = out.data() + province_[c] * parties_;
      for (std::size_t l = 0; l < parties_; ++l) dst[l] += cell_weight_[c] * mu[l];
    }
    for (std::size_t p = 0; p < np; ++p) {
      double* row = out.data() + p * parties_;
      double sum = 0.0;
      for (std::size_t l = 0; l < parties_; ++l) sum += (row[l] /= weight_[p]);
      for (std::size_t l = 0; l < parties_; ++l) row[l] /= sum;
    }
  }

 private:
  std::size_t factors_, parties_;
  std::vector<std::size_t> rows_;
  std::vector<std::size_t> province_;
  std::vector<double> cell_weight_;
  std::vector<double> weight_;
};

/// Per-province vote shares sum_n mu_n w_{i,n}, in layout province order.
/// Weights are renormalized per province.
inline std::vector<ShareVector> poststratify(const Layout& layout, const Params& params,
                                             std::span<const Stratum> cells) {
  const CellTable table(layout, cells);
  std::vector<double> flat;
  table.shares(params, flat);
  const std::size_t L = layout.canon().size();
  std::vector<ShareVector> out;
  for (std::size_t p = 0; p < layout.province_ids().size(); ++p)
    out.emplace_back(Eigen::Map<const Vector>(flat.data() + p * L, static_cast<Eigen::Index>(L)));
  return out;
}

/// Draws S simulated local results from the posterior. With S up to the
/// number of draws, draws are taken at evenly spaced positions; beyond it,
/// they are resampled with replacement (recorded as a warning).
inline SimulationEnsemble simulate_local_results(const Posterior& posterior, const Census& census, std::size_t S,
                                                 std::uint64_t seed, bool force = false) {
  if (S == 0) fail(ErrorKind::invalid_input, "S must be positive");
  if (posterior.draws.empty()) fail(ErrorKind::invalid_input, "posterior has no draws");
  if (!posterior.converged && !force)
    fail(ErrorKind::diagnostic, "fundamental posterior is not converged; rerun or force");
  const auto& layout = posterior.layout;
  std::vector<double> electorate;
  for (int id : layout.province_ids()) {
    auto it = census.electorate.find(id);
    if (it == census.electorate.end())
      fail(ErrorKind::missing_census, "no electorate size for province " + std::to_string(id));
    electorate.push_back(it->second);
  }
  SimulationEnsemble ens(layout.canon(), layout.province_ids(), electorate, S);
  const std::size_t available = posterior.draws.size();
  if (S <= available) {
    for (std::size_t s = 0; s < S; ++s) ens.source_draw.push_back(s * available / S);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, available - 1);
    for (std::size_t s = 0; s < S; ++s) ens.source_draw.push_back(pick(rng));
    ens.warnings.push_back("requested " + std::to_string(S) + " simulations from " + std::to_string(available) +
                           " posterior draws; resampled with replacement");
  }
  if (!posterior.converged) ens.warnings.push_back("fundamental posterior not converged (forced)");
  const CellTable table(layout, census.cells);
  std::vector<double> shares;
  for (std::size_t s = 0; s < S; ++s) {
    table.shares(posterior.draws[ens.source_draw[s]], shares);
    for (std::size_t i = 0; i < layout.province_ids().size(); ++i) {
      auto dst = ens.local(s, i);
      std::copy_n(shares.begin() + static_cast<long>(i * dst.size()), dst.size(), dst.begin());
    }
    ens.aggregate(s);
  }
  return ens;
}

}  // namespace votacast::fundamental
