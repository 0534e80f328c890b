#include <gtest/gtest.h>

#include <random>

#include "votacast/fundamental.hpp"
#include "votacast/inference/gradient_check.hpp"
#include "votacast/synthetic.hpp"

using namespace votacast;
using namespace votacast::fundamental;

namespace {

PartyCanon five() { return PartyCanon({"PSOE", "PP", "Podemos", "Cs", "others"}); }

Layout small_layout() { return Layout::spanish(five(), {2, 8, 28, 46}); }

// Two provinces, one 2-level factor, two parties.
Layout toy_layout() { return Layout(PartyCanon({"A", "others"}), {1, 2}, {{"gender", 2}}); }

std::vector<Stratum> small_survey(const Layout& layout, std::uint64_t seed, int respondents,
                                  Params* truth = nullptr) {
  std::mt19937_64 rng(seed);
  auto cells = synthetic::full_grid(layout);
  synthetic::randomize_weights(cells, 2.0, rng);
  const auto params = synthetic::draw_prior_params(layout, rng);
  if (truth) *truth = params;
  return synthetic::draw_survey(layout, params, cells, {}, respondents, rng);
}

Params random_params(const Layout& layout, std::mt19937_64& rng) { return synthetic::draw_prior_params(layout, rng); }

}  // namespace

TEST(LinearPredictor, ZeroParamsGiveZero) {
  const auto layout = small_layout();
  const Stratum s{8, {1, 2, 3, 1, 2}, {}, 0.0};
  EXPECT_TRUE(linear_predictor(layout, Params::zeros(layout), s).isZero(0.0));
}

TEST(LinearPredictor, InterceptOnly) {
  const auto layout = small_layout();
  auto p = Params::zeros(layout);
  p.alpha[0] = 1.0;
  const auto f = linear_predictor(layout, p, Stratum{2, {3, 1, 1, 3, 3}, {}, 0.0});
  EXPECT_EQ(f, (Vector(5) << 1.0, 0.0, 0.0, 0.0, 0.0).finished());
}

TEST(LinearPredictor, HandBuiltTwoFactorSum) {
  const Layout layout(PartyCanon({"A", "B", "others"}), {5, 9}, {{"gender", 2}});
  auto p = Params::zeros(layout);
  p.alpha << 0.5, -0.25;
  p.beta.row(static_cast<Eigen::Index>(layout.level_row(0, 1))) << 0.125, 1.0;   // province 9
  p.beta.row(static_cast<Eigen::Index>(layout.level_row(1, 1))) << -2.0, 0.375;  // gender 2
  const auto f = linear_predictor(layout, p, Stratum{9, {2}, {}, 0.0});
  EXPECT_DOUBLE_EQ(f[0], 0.5 + 0.125 - 2.0);
  EXPECT_DOUBLE_EQ(f[1], -0.25 + 1.0 + 0.375);
  EXPECT_EQ(f[2], 0.0);
}

TEST(LinearPredictor, UnknownLevelIsInvalid) {
  const auto layout = small_layout();
  const auto p = Params::zeros(layout);
  EXPECT_THROW(linear_predictor(layout, p, Stratum{8, {4, 1, 1, 1, 1}, {}, 0.0}), Error);
  EXPECT_THROW(linear_predictor(layout, p, Stratum{3, {1, 1, 1, 1, 1}, {}, 0.0}), Error);
  EXPECT_THROW(linear_predictor(layout, p, Stratum{8, {1, 1, 1, 1}, {}, 0.0}), Error);
}

TEST(StratumProbabilities, ZeroIsUniformAndLargeInterceptSaturates) {
  const auto layout = small_layout();
  auto p = Params::zeros(layout);
  const Stratum s{28, {1, 1, 1, 1, 1}, {}, 0.0};
  for (std::size_t l = 0; l < 5; ++l) EXPECT_DOUBLE_EQ(stratum_probabilities(layout, p, s)[l], 0.2);
  p.alpha[1] = 20.0;
  EXPECT_GT(stratum_probabilities(layout, p, s)[1], 0.999);
}

TEST(StratumProbabilities, ComposesSoftmaxAndLinearPredictor) {
  const auto layout = small_layout();
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto p = random_params(layout, rng);
    const Stratum s{46, {t % 3 + 1, t % 2 + 1, 2, 3, 1}, {}, 0.0};
    const auto a = stratum_probabilities(layout, p, s);
    const auto b = softmax(linear_predictor(layout, p, s));
    for (std::size_t l = 0; l < 5; ++l) EXPECT_EQ(a[l], b[l]);
    EXPECT_NEAR(a.values().sum(), 1.0, 1e-9);
  }
}

TEST(LogPosterior, SingleRespondentTermIsLogProbability) {
  const auto layout = small_layout();
  std::mt19937_64 rng(4);
  const auto p = random_params(layout, rng);
  const std::vector<Stratum> strata{{8, {2, 1, 3, 2, 1}, {0, 0, 1, 0, 0}, 0.0}};
  const NaturalPosterior post(layout, strata);
  EXPECT_NEAR(post.log_likelihood(p), std::log(stratum_probabilities(layout, p, strata[0])[2]), 1e-12);
}

TEST(LogPosterior, DoublingCountsDoublesLikelihood) {
  const auto layout = small_layout();
  auto strata = small_survey(layout, 5, 400);
  std::mt19937_64 rng(6);
  const auto p = random_params(layout, rng);
  const double once = NaturalPosterior(layout, strata).log_likelihood(p);
  for (auto& s : strata)
    for (int& c : s.counts) c *= 2;
  EXPECT_NEAR(NaturalPosterior(layout, strata).log_likelihood(p), 2.0 * once, 1e-9 * std::abs(once));
}

TEST(LogPosterior, GradientsMatchFiniteDifferences) {
  const auto layout = small_layout();
  const auto strata = small_survey(layout, 7, 2000);
  const NaturalPosterior natural(layout, strata);
  const SamplerTarget centered(layout, strata, Parameterization::centered);
  const SamplerTarget noncentered(layout, strata, Parameterization::non_centered);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int point = 0; point < 20; ++point) {
    const auto x = random_params(layout, rng).flatten();
    const auto scale = natural.standard_scale(x);
    EXPECT_LE(inference::check_gradient(natural, std::span<const double>(x), 1e-5, scale).max_relative_error, 1e-5);
    std::vector<double> u(centered.dimension());
    for (double& v : u) v = z(rng);
    EXPECT_LE(inference::check_gradient(centered, std::span<const double>(u)).max_relative_error, 1e-5);
    EXPECT_LE(inference::check_gradient(noncentered, std::span<const double>(u)).max_relative_error, 1e-5);
  }
}

TEST(LogPosterior, NonCenteredDensityIsNaturalDensityPlusJacobian) {
  const auto layout = small_layout();
  const auto strata = small_survey(layout, 9, 500);
  const NaturalPosterior natural(layout, strata);
  const SamplerTarget centered(layout, strata, Parameterization::centered);
  const SamplerTarget noncentered(layout, strata, Parameterization::non_centered);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> z(0.0, 0.7);
  std::vector<double> u(noncentered.dimension());
  for (double& v : u) v = z(rng);
  const std::size_t r = layout.reduced();
  const std::size_t eta0 = r + layout.total_levels() * r;
  double log_sigma = 0.0, scaled = 0.0;
  for (std::size_t k = 0; k < layout.factor_count(); ++k)
    for (std::size_t l = 0; l < r; ++l) {
      log_sigma += u[eta0 + k * r + l];
      scaled += static_cast<double>(layout.levels(k)) * u[eta0 + k * r + l];
    }
  EXPECT_NEAR(centered.log_density(u), natural.log_density(centered.to_params(u).flatten()) + log_sigma, 1e-8);
  EXPECT_NEAR(noncentered.log_density(u),
              natural.log_density(noncentered.to_params(u).flatten()) + log_sigma + scaled, 1e-8);
}

TEST(InflateAlpha, ScalesInterceptsOnly) {
  Posterior post;
  post.layout = small_layout();
  auto p = Params::zeros(post.layout);
  p.alpha << 0.2, -0.4, 0.1, 0.0;
  p.beta(3, 1) = 0.7;
  post.draws = {p};
  const auto same = inflate_alpha(post, 1.0);
  EXPECT_EQ(same.draws[0].alpha, p.alpha);
  const auto wide = inflate_alpha(post, 1.5);
  EXPECT_NEAR(wide.draws[0].alpha[0], 0.3, 1e-15);
  EXPECT_NEAR(wide.draws[0].alpha[1], -0.6, 1e-15);
  EXPECT_EQ(wide.draws[0].beta, p.beta);
  EXPECT_EQ(wide.draws[0].sigma, p.sigma);
  EXPECT_TRUE(wide.inflated);
  EXPECT_THROW(inflate_alpha(post, 0.9), Error);
}

TEST(Poststratify, WeightedAverageOfTwoStrata) {
  const auto layout = toy_layout();
  auto p = Params::zeros(layout);
  p.beta(static_cast<Eigen::Index>(layout.level_row(1, 1)), 0) = std::log(1.0 / 9.0);
  const std::vector<Stratum> cells{{1, {1}, {}, 0.6}, {1, {2}, {}, 0.4}, {2, {1}, {}, 1.0}};
  const auto shares = poststratify(layout, p, cells);
  EXPECT_NEAR(shares[0][0], 0.34, 1e-12);
  EXPECT_NEAR(shares[0][1], 0.66, 1e-12);
  EXPECT_NEAR(shares[1][0], 0.5, 1e-12);
}

TEST(Poststratify, IdenticalStrataReturnTheirProbabilities) {
  const auto layout = small_layout();
  auto p = Params::zeros(layout);
  p.alpha << 0.3, 0.1, -0.5, 0.2;
  std::mt19937_64 rng(11);
  auto cells = synthetic::full_grid(layout);
  synthetic::randomize_weights(cells, 1.0, rng);
  const auto mu = stratum_probabilities(layout, p, cells[0]);
  for (const auto& share : poststratify(layout, p, cells))
    for (std::size_t l = 0; l < 5; ++l) EXPECT_NEAR(share[l], mu[l], 1e-12);
}

TEST(Poststratify, ProvinceSharesInsideStrataHull) {
  const auto layout = small_layout();
  std::mt19937_64 rng(12);
  auto cells = synthetic::full_grid(layout);
  for (int t = 0; t < 10; ++t) {
    synthetic::randomize_weights(cells, 0.5, rng);
    const auto p = random_params(layout, rng);
    const auto shares = poststratify(layout, p, cells);
    for (std::size_t i = 0; i < shares.size(); ++i) {
      EXPECT_NEAR(shares[i].values().sum(), 1.0, 1e-9);
      const int id = layout.province_ids()[i];
      for (std::size_t l = 0; l < 5; ++l) {
        double lo = 1.0, hi = 0.0;
        for (const auto& c : cells)
          if (c.province_id == id) {
            const double mu = stratum_probabilities(layout, p, c)[l];
            lo = std::min(lo, mu);
            hi = std::max(hi, mu);
          }
        EXPECT_GE(shares[i][l], lo - 1e-12);
        EXPECT_LE(shares[i][l], hi + 1e-12);
      }
    }
  }
}

TEST(Poststratify, ProvinceWithoutCensusIsAnError) {
  const auto layout = toy_layout();
  const std::vector<Stratum> cells{{1, {1}, {}, 1.0}, {2, {1}, {}, 0.0}};
  try {
    poststratify(layout, Params::zeros(layout), cells);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_census);
  }
}

TEST(Simulate, DegeneratePosteriorGivesIdenticalDraws) {
  Posterior post;
  post.layout = toy_layout();
  post.converged = true;
  auto p = Params::zeros(post.layout);
  p.alpha[0] = 0.4;
  post.draws = {p};
  Census census{{{1, {1}, {}, 0.5}, {1, {2}, {}, 0.5}, {2, {1}, {}, 1.0}}, {{1, 100.0}, {2, 300.0}}};
  const auto ens = simulate_local_results(post, census, 5, 1);
  ASSERT_EQ(ens.draws(), 5u);
  EXPECT_FALSE(ens.warnings.empty());  // resampled
  const double expected = 1.0 / (1.0 + std::exp(-0.4));
  for (std::size_t s = 0; s < 5; ++s) {
    EXPECT_NEAR(ens.national(s)[0], expected, 1e-12);
    EXPECT_EQ(ens.local(s, 1)[0], ens.local(0, 1)[0]);
  }
}

TEST(Simulate, NationalAggregateIsElectorateWeighted) {
  Posterior post;
  post.layout = toy_layout();
  post.converged = true;
  auto p = Params::zeros(post.layout);
  p.beta(1, 0) = 1.0;  // province 2 leans to A
  post.draws = {p};
  Census census{{{1, {1}, {}, 1.0}, {2, {1}, {}, 1.0}}, {{1, 100.0}, {2, 300.0}}};
  const auto ens = simulate_local_results(post, census, 1, 1);
  const double a2 = 1.0 / (1.0 + std::exp(-1.0));
  EXPECT_NEAR(ens.national(0)[0], 0.25 * 0.5 + 0.75 * a2, 1e-12);
}

TEST(Simulate, UnconvergedPosteriorNeedsForce) {
  Posterior post;
  post.layout = toy_layout();
  post.draws = {Params::zeros(post.layout)};
  Census census{{{1, {1}, {}, 1.0}, {2, {1}, {}, 1.0}}, {{1, 1.0}, {2, 1.0}}};
  EXPECT_THROW(simulate_local_results(post, census, 1, 1), Error);
  EXPECT_NO_THROW(simulate_local_results(post, census, 1, 1, true));
}

TEST(Fit, EmptySurveyIsAnError) {
  const auto layout = small_layout();
  const auto cells = synthetic::full_grid(layout);
  EXPECT_THROW(fit_fundamental(layout, cells, inference::SamplerConfig{}), Error);
}

TEST(Fit, SmallSurveyConvergesAndInflationWidensNationalSpread) {
  const auto layout = small_layout();
  Params truth;
  auto strata = small_survey(layout, 13, 2000, &truth);
  inference::SamplerConfig config;
  config.iterations = 600;
  config.seed = 14;
  const auto post = fit_fundamental(layout, strata, config);
  EXPECT_TRUE(post.converged) << post.rhat.max();
  ASSERT_EQ(post.draws.size(), 1200u);

  Census census;
  census.cells = strata;
  for (int id : layout.province_ids()) census.electorate[id] = 1000.0 + id;
  double previous = 0.0;
  for (double factor : {1.0, 1.5, 2.0}) {
    const auto ens = simulate_local_results(inflate_alpha(post, factor), census, 1200, 15);
    double mean = 0.0, sq = 0.0;
    for (std::size_t s = 0; s < ens.draws(); ++s) {
      mean += ens.national(s)[0];
      sq += ens.national(s)[0] * ens.national(s)[0];
    }
    mean /= static_cast<double>(ens.draws());
    const double var = sq / static_cast<double>(ens.draws()) - mean * mean;
    EXPECT_GE(var, previous) << "factor " << factor;
    previous = var;
  }
}
