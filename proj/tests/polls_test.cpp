#include <gtest/gtest.h>

#include <random>

#include "votacast/inference/gradient_check.hpp"
#include "votacast/polls.hpp"
#include "votacast/synthetic.hpp"

using namespace votacast;
using namespace votacast::polls;

namespace {

Poll make_poll(std::string id, std::string pollster, std::string election, int days, std::vector<double> shares) {
  Poll p;
  p.poll_id = std::move(id);
  p.pollster = std::move(pollster);
  p.election = std::move(election);
  p.days_before = days;
  p.shares = Eigen::Map<const Vector>(shares.data(), static_cast<Eigen::Index>(shares.size()));
  return p;
}

Hypers diagonal_hypers(std::size_t r, double g, double d, double e, std::map<std::string, double> noise) {
  const auto R = static_cast<Eigen::Index>(r);
  Hypers h{g * Matrix::Identity(R, R), d * Matrix::Identity(R, R), e * Matrix::Identity(R, R), {}};
  for (const auto& [j, s] : noise) h.sigma_pollster[j] = s * Matrix::Identity(R, R);
  return h;
}

}  // namespace

TEST(PollErrorMean, Examples) {
  PollsParams params;
  params.gamma["A"] = Vector::Constant(2, 0.01);
  params.delta["2015"] = Vector::Constant(2, -0.02);
  params.epsilon["2015"] = Vector::Constant(2, 0.001);
  auto poll = make_poll("1", "A", "2015", 10, {0.3, 0.3, 0.4});
  EXPECT_NEAR(poll_error_mean(params, poll, 2).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  poll.days_before = 0;
  EXPECT_NEAR(poll_error_mean(params, poll, 2)[0], -0.01, 1e-15);
  PollsParams zero;
  zero.gamma["A"] = zero.delta["2015"] = zero.epsilon["2015"] = Vector::Zero(2);
  EXPECT_TRUE(poll_error_mean(zero, poll, 2).isZero(0.0));
  poll.pollster = "B";
  try {
    poll_error_mean(params, poll, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::lookup);
  }
  EXPECT_NEAR(poll_error_mean(params, poll, 2, true)[0], -0.02, 1e-15);
}

TEST(MarginalMeanCov, BlockStructure) {
  Matrix sg(2, 2), sd(2, 2), se(2, 2), sj(2, 2);
  sg << 4, 1, 1, 3;
  sd << 2, 0.5, 0.5, 1;
  se << 0.01, 0.002, 0.002, 0.02;
  sj << 1, 0.2, 0.2, 2;
  Hypers h{sg, sd, se, {{"A", sj}, {"B", 2.0 * sj}}};
  const std::vector<Poll> polls{make_poll("1", "A", "e1", 5, {0.3, 0.3, 0.4}),
                                make_poll("2", "B", "e1", 10, {0.3, 0.3, 0.4}),
                                make_poll("3", "B", "e2", 7, {0.3, 0.3, 0.4})};
  const std::map<std::string, Vector> results{{"e1", Vector::Constant(2, 0.3)}, {"e2", Vector::Constant(2, 0.2)}};
  const auto mc = marginal_mean_cov(polls, results, h, 2);
  EXPECT_EQ(mc.jitter, 0.0);
  EXPECT_EQ(mc.mean[4], 0.2);
  EXPECT_TRUE(mc.cov.block(0, 2, 2, 2).isApprox(sd + 50.0 * se, 1e-15));
  EXPECT_TRUE(mc.cov.block(0, 4, 2, 2).isZero(0.0));            // different election and pollster
  EXPECT_TRUE(mc.cov.block(2, 4, 2, 2).isApprox(sg, 1e-15));     // same pollster only
  EXPECT_TRUE(mc.cov.block(4, 4, 2, 2).isApprox(sd + 49.0 * se + sg + 2.0 * sj, 1e-15));
  EXPECT_TRUE(mc.cov.isApprox(mc.cov.transpose(), 0.0));
}

TEST(LogLikPolls, OnePollAtTheResultUnderIdentity) {
  const std::vector<Poll> polls{make_poll("1", "A", "e", 3, {0.2, 0.3, 0.1, 0.4})};
  const std::map<std::string, Vector> results{{"e", (Vector(4) << 0.2, 0.3, 0.1, 0.4).finished()}};
  const auto h = diagonal_hypers(3, 0.0, 0.0, 0.0, {{"A", 1.0}});
  EXPECT_NEAR(log_lik_polls(polls, results, h, 3), -1.5 * std::log(2.0 * M_PI), 1e-12);
}

TEST(LogLikPolls, VanishingHypersGiveIndependentPolls) {
  const double s2 = 0.0004;
  const std::vector<Poll> polls{make_poll("1", "A", "e", 3, {0.25, 0.30, 0.45}),
                                make_poll("2", "A", "e", 9, {0.21, 0.35, 0.44})};
  const Vector v = (Vector(3) << 0.22, 0.33, 0.45).finished();
  const std::map<std::string, Vector> results{{"e", v}};
  const auto h = diagonal_hypers(2, 0.0, 0.0, 0.0, {{"A", s2}});
  double expected = 0.0;
  for (const auto& p : polls)
    for (int l = 0; l < 2; ++l) {
      const double d = p.shares[l] - v[l];
      expected += -0.5 * d * d / s2 - 0.5 * std::log(2.0 * M_PI * s2);
    }
  EXPECT_NEAR(log_lik_polls(polls, results, h, 2), expected, 1e-9);
}

TEST(LogLikPolls, MaskedDimensionsAreDropped) {
  const double nan = std::nan("");
  const std::vector<Poll> polls{make_poll("1", "A", "e", 0, {0.25, nan, 0.45})};
  const std::map<std::string, Vector> results{{"e", (Vector(3) << 0.2, 0.3, 0.5).finished()}};
  const auto h = diagonal_hypers(2, 0.0, 0.0, 0.0, {{"A", 0.01}});
  EXPECT_NEAR(log_lik_polls(polls, results, h, 2), -0.5 * 0.0025 / 0.01 - 0.5 * std::log(2.0 * M_PI * 0.01), 1e-12);
}

TEST(LogLikPolls, PermutationInvariant) {
  std::mt19937_64 rng(3);
  const PartyCanon canon({"A", "B", "C", "others"});
  const std::map<std::string, Vector> results{{"e1", (Vector(4) << 0.3, 0.3, 0.2, 0.2).finished()},
                                              {"e2", (Vector(4) << 0.4, 0.2, 0.1, 0.3).finished()}};
  auto scenario = synthetic::draw_polls(canon, {"x", "y", "z"}, results, 2, 0.02, 0.001, 0.01, 30, rng);
  const double base = log_lik_polls(scenario.polls, results, scenario.truth.hypers, 3);
  for (int t = 0; t < 5; ++t) {
    std::shuffle(scenario.polls.begin(), scenario.polls.end(), rng);
    EXPECT_NEAR(log_lik_polls(scenario.polls, results, scenario.truth.hypers, 3), base, 1e-10);
  }
}

TEST(LogLikPolls, MatchesMonteCarloOverExplicitEffects) {
  // Three polls: two pollsters, one shared election. Average the
  // conditional density over draws of the effects and compare.
  Matrix sg(2, 2), sd(2, 2), se(2, 2);
  sg << 4e-4, 1e-4, 1e-4, 3e-4;
  sd << 2e-4, -5e-5, -5e-5, 2.5e-4;
  se << 1e-6, 0, 0, 2e-6;
  Hypers h{sg, sd, se, {{"A", 1e-4 * Matrix::Identity(2, 2)}, {"B", 2e-4 * Matrix::Identity(2, 2)}}};
  const std::vector<Poll> polls{make_poll("1", "A", "e", 4, {0.31, 0.28, 0.41}),
                                make_poll("2", "B", "e", 12, {0.27, 0.30, 0.43}),
                                make_poll("3", "A", "e", 20, {0.33, 0.26, 0.41})};
  const Vector v = (Vector(3) << 0.30, 0.29, 0.41).finished();
  const std::map<std::string, Vector> results{{"e", v}};
  const double exact = log_lik_polls(polls, results, h, 2);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0.0, 1.0);
  auto draw = [&](const Matrix& c) {
    const Vector e = (Vector(2) << z(rng), z(rng)).finished();
    return Vector(Eigen::LLT<Matrix>(c).matrixL() * e);
  };
  const int n = 200000;
  std::vector<double> dens(n);
  for (int i = 0; i < n; ++i) {
    PollsParams p;
    p.gamma["A"] = draw(sg);
    p.gamma["B"] = draw(sg);
    p.delta["e"] = draw(sd);
    p.epsilon["e"] = draw(se);
    double lp = 0.0;
    for (const auto& poll : polls) {
      const Vector r = poll.shares.head(2) - v.head(2) - poll_error_mean(p, poll, 2);
      const Matrix& c = h.sigma_pollster.at(poll.pollster);
      lp += -0.5 * r.dot(c.inverse() * r) - 0.5 * std::log(c.determinant()) - std::log(2.0 * M_PI);
    }
    dens[static_cast<std::size_t>(i)] = lp;
  }
  const double top = *std::max_element(dens.begin(), dens.end());
  double mean = 0.0, sq = 0.0;
  for (double d : dens) {
    const double e = std::exp(d - top);
    mean += e;
    sq += e * e;
  }
  mean /= n;
  const double se_rel = std::sqrt((sq / n - mean * mean) / n) / mean;
  const double mc = top + std::log(mean);
  EXPECT_NEAR(mc, exact, 3.0 * se_rel) << "relative MC error " << se_rel;
}

TEST(PollsTarget, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const PartyCanon canon({"A", "B", "C", "others"});
  std::map<std::string, Vector> results{{"e1", (Vector(4) << 0.3, 0.3, std::nan(""), 0.4).finished()},
                                        {"e2", (Vector(4) << 0.4, 0.2, 0.1, 0.3).finished()}};
  const auto scenario = synthetic::draw_polls(canon, {"x", "y"}, results, 3, 0.02, 0.001, 0.01, 30, rng);
  std::map<std::string, Vector> reduced;
  for (const auto& [k, v] : results) reduced[k] = v.head(3);
  const PollsTarget target(3, {"x", "y"}, {"e1", "e2"}, scenario.polls, reduced);
  const std::vector<double> center(target.dimension(), 0.0);
  std::vector<double> c = center;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = (i % (target.block_size()) < 3 && i < 5 * target.block_size()) ? -4.0 : 0.0;
  EXPECT_LE(inference::check_gradient_random(target, c, 0.5, 20, 6).max_relative_error, 1e-5);
}

TEST(Lkj, CorrelationMarginalMatchesBeta) {
  // LKJ(2) on 4x4: each correlation is 2 * Beta(3, 3) - 1, variance 1/7.
  struct Target {
    std::size_t dimension() const { return 6; }
    double log_density(std::span<const double> y) const {
      double lj = 0.0;
      const auto l = inference::corr_cholesky_from_unconstrained<double>(y, 4, lj);
      return lj + inference::lkj_corr_cholesky_log_density(l, 2.0);
    }
    double log_density_gradient(std::span<const double> y, std::span<double> g) const {
      return ad::value_and_gradient(
          [](std::span<const ad::Var> x) {
            ad::Var lj = 0.0;
            const auto l = inference::corr_cholesky_from_unconstrained<ad::Var>(x, 4, lj);
            return lj + inference::lkj_corr_cholesky_log_density(l, 2.0);
          },
          y, g);
    }
  };
  inference::SamplerConfig config;
  config.seed = 7;
  config.iterations = 8000;
  const auto set = inference::hmc_sample(Target{}, config);
  double sum = 0.0, sq = 0.0, n = 0.0;
  for (std::size_t s = 0; s < set.total_draws(); ++s) {
    double lj = 0.0;
    const auto l = inference::corr_cholesky_from_unconstrained<double>(set.draw(s), 4, lj);
    const auto omega = inference::multiply_transpose(l);
    for (std::size_t i = 1; i < 4; ++i)
      for (std::size_t j = 0; j < i; ++j) {
        const double rho = omega[i * 4 + j];
        sum += rho;
        sq += rho * rho;
        n += 1.0;
      }
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 7.0, 0.006);
}

TEST(FitPolls, SingleElectionWarnsAboutConfounding) {
  std::mt19937_64 rng(8);
  const PartyCanon canon({"A", "B", "others"});
  const std::map<std::string, Vector> results{{"e1", (Vector(3) << 0.4, 0.35, 0.25).finished()}};
  const auto scenario = synthetic::draw_polls(canon, {"x", "y"}, results, 3, 0.02, 0.0005, 0.01, 30, rng);
  inference::SamplerConfig config;
  config.iterations = 200;
  const auto post = fit_polls(canon, scenario.polls, results, config, {"x", "y", "ghost"});
  const auto has = [&](const std::string& needle) {
    return std::any_of(post.warnings.begin(), post.warnings.end(),
                       [&](const std::string& w) { return w.find(needle) != std::string::npos; });
  };
  EXPECT_TRUE(has("confounded"));
  EXPECT_TRUE(has("ghost"));
  EXPECT_EQ(post.pollsters.size(), 2u);
}

TEST(FitPolls, TrendSignConvention) {
  // With epsilon > 0, polls further from election day overestimate more.
  PollsParams p;
  p.gamma["A"] = Vector::Zero(1);
  p.delta["e"] = Vector::Zero(1);
  p.epsilon["e"] = Vector::Constant(1, 0.001);
  const auto early = make_poll("1", "A", "e", 25, {0.3, 0.7});
  const auto late = make_poll("2", "A", "e", 2, {0.3, 0.7});
  EXPECT_GT(poll_error_mean(p, early, 1)[0], poll_error_mean(p, late, 1)[0]);
  EXPECT_GT(poll_error_mean(p, late, 1)[0], 0.0);
}

TEST(PollsLikelihood, CollapsesToIidCase) {
  PollsPosterior post;
  post.canon = PartyCanon({"A", "B", "others"});
  post.pollsters = {"A"};
  PollsParams d;
  const double s2 = 0.0009;
  d.hypers = diagonal_hypers(2, 0.0, 0.0, 0.0, {{"A", s2}});
  d.gamma["A"] = Vector::Zero(2);
  post.draws = {d};
  const std::vector<Poll> polls{make_poll("1", "A", "new", 6, {0.31, 0.42, 0.27})};
  const ShareVector v((Vector(3) << 0.30, 0.40, 0.30).finished());
  const double expected = -0.5 * (0.0001 + 0.0004) / s2 - std::log(2.0 * M_PI * s2);
  EXPECT_NEAR(polls_likelihood_at(v, polls, post), expected, 1e-10);
}

TEST(PollsLikelihood, MaximizedNearHouseCorrectedMean) {
  PollsPosterior post;
  post.canon = PartyCanon({"A", "others"});
  post.pollsters = {"A"};
  PollsParams d;
  d.hypers = diagonal_hypers(1, 1e-4, 1e-4, 1e-7, {{"A", 4e-4}});
  d.gamma["A"] = Vector::Constant(1, 0.02);
  post.draws = {d};
  const std::vector<Poll> polls{make_poll("1", "A", "new", 3, {0.41, 0.59}), make_poll("2", "A", "new", 8, {0.45, 0.55}),
                                make_poll("3", "A", "new", 1, {0.43, 0.57})};
  const PollsLikelihood lik(polls, post);
  double best_v = 0.0, best = -INFINITY;
  for (int i = 0; i <= 10000; ++i) {
    const double v = i / 10000.0;
    const double ll = lik.log_density(Vector::Constant(1, v));
    if (ll > best) best = ll, best_v = v;
  }
  // Equal-noise polls: GLS mean is a weighted mean close to 0.43 - 0.02.
  EXPECT_NEAR(best_v, 0.41, 0.01);
}

TEST(PollsLikelihood, UnseenPollsterIsIntegrated) {
  PollsPosterior post;
  post.canon = PartyCanon({"A", "others"});
  post.pollsters = {"A"};
  PollsParams d;
  d.hypers = diagonal_hypers(1, 4e-4, 0.0, 0.0, {{"A", 1e-4}});
  d.gamma["A"] = Vector::Zero(1);
  post.draws = {d};
  const std::vector<Poll> polls{make_poll("1", "Z", "new", 0, {0.45, 0.55})};
  const PollsLikelihood lik(polls, post);
  EXPECT_EQ(lik.unseen_pollsters().count("Z"), 1u);
  const double var = 4e-4 + 1e-4;
  EXPECT_NEAR(lik.log_density(Vector::Constant(1, 0.40)), -0.5 * 0.0025 / var - 0.5 * std::log(2.0 * M_PI * var), 1e-10);
}

TEST(Predictive, ConjugateClosedForm) {
  PollsPosterior post;
  post.canon = PartyCanon({"A", "B", "others"});
  post.pollsters = {"A"};
  PollsParams d;
  Matrix sj(2, 2);
  sj << 4e-4, 1e-4, 1e-4, 3e-4;
  d.hypers = diagonal_hypers(2, 0.0, 1e-4, 0.0, {});
  d.hypers.sigma_pollster["A"] = sj;
  d.gamma["A"] = (Vector(2) << 0.01, -0.02).finished();
  post.draws = {d};
  const std::vector<Poll> polls{make_poll("1", "A", "new", 0, {0.30, 0.40, 0.30})};
  const auto pred = predictive_flat_prior(polls, post, 20000, 9);
  ASSERT_EQ(pred.draws.size(), 20000u);
  const Vector mean_expected = (Vector(2) << 0.29, 0.42).finished();
  const Matrix cov_expected = sj + 1e-4 * Matrix::Identity(2, 2);
  for (int l = 0; l < 2; ++l) {
    double m = 0.0;
    for (const auto& v : pred.draws) m += v[static_cast<std::size_t>(l)];
    m /= 20000.0;
    EXPECT_NEAR(m, mean_expected[l], 3.0 * std::sqrt(cov_expected(l, l) / 20000.0));
  }
  EXPECT_THROW(predictive_flat_prior(std::vector<Poll>{}, post, 10, 1), Error);
}

TEST(FitPolls, RecoversHouseEffects) {
  std::mt19937_64 rng(10);
  const PartyCanon canon({"A", "B", "others"});
  std::map<std::string, Vector> results;
  std::uniform_real_distribution<double> u(0.3, 0.45);
  for (const auto* e : {"1996", "2000", "2004", "2008", "2011"}) {
    const double a = u(rng), b = u(rng);
    results[e] = (Vector(3) << a, b, 1.0 - a - b).finished();
  }
  const std::vector<std::string> pollsters{"p1", "p2", "p3", "p4", "p5", "p6"};
  const auto scenario = synthetic::draw_polls(canon, pollsters, results, 5, 0.02, 0.0005, 0.01, 30, rng);
  inference::SamplerConfig config;
  config.iterations = 1000;
  const auto post = fit_polls(canon, scenario.polls, results, config, pollsters);
  EXPECT_LT(post.divergence_rate, 0.10);
  std::vector<double> truth, estimate;
  for (const auto& j : pollsters) {
    Vector mean = Vector::Zero(2);
    for (const auto& d : post.draws) mean += d.gamma.at(j);
    mean /= static_cast<double>(post.draws.size());
    for (int l = 0; l < 2; ++l) {
      truth.push_back(scenario.truth.gamma.at(j)[l]);
      estimate.push_back(mean[l]);
    }
  }
  const auto n = static_cast<Eigen::Index>(truth.size());
  const Vector t = Eigen::Map<Vector>(truth.data(), n), e = Eigen::Map<Vector>(estimate.data(), n);
  const Vector tc = t.array() - t.mean(), ec = e.array() - e.mean();
  const double r = tc.dot(ec) / (tc.norm() * ec.norm());
  EXPECT_GE(r, 0.8) << "max rhat " << post.rhat.max();
}
