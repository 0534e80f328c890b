#include <gtest/gtest.h>

#include <random>

#include "votacast/synthesis.hpp"

using namespace votacast;
using namespace votacast::synthesis;

namespace {

// One province, two parties, first share drawn from N(mean, sd).
SimulationEnsemble gaussian_ensemble(std::size_t draws, double mean, double sd, std::uint64_t seed) {
  SimulationEnsemble e(PartyCanon({"A", "others"}), {1}, {1.0}, draws);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(mean, sd);
  for (std::size_t s = 0; s < draws; ++s) {
    const double x = z(rng);
    e.local(s, 0)[0] = x;
    e.local(s, 0)[1] = 1.0 - x;
    e.aggregate(s);
  }
  return e;
}

double first_share(const SimulationEnsemble& e, std::size_t s) { return e.national(s)[0]; }

}  // namespace

TEST(ImportanceWeights, ConstantLikelihoodGivesEqualWeights) {
  auto e = gaussian_ensemble(500, 0.4, 0.02, 1);
  importance_weights(e, [](std::span<const double>) { return -1234.5; });
  EXPECT_DOUBLE_EQ(e.ess(), 500.0);
  for (double w : e.normalized_weights()) EXPECT_NEAR(w, 1.0 / 500.0, 1e-15);
  EXPECT_TRUE(e.warnings.empty());
}

TEST(ImportanceWeights, LogTwoApartGivesTwoThirds) {
  auto e = gaussian_ensemble(2, 0.4, 0.02, 2);
  std::size_t calls = 0;
  importance_weights(e, [&](std::span<const double>) { return calls++ == 0 ? std::log(2.0) - 700.0 : -700.0; }, 0.0);
  const auto w = e.normalized_weights();
  EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-12);
}

TEST(ImportanceWeights, InvariantToConstantFactor) {
  auto a = gaussian_ensemble(300, 0.4, 0.02, 3);
  auto b = a;
  const auto lik = [](std::span<const double> v) { return -0.5 * std::pow((v[0] - 0.41) / 0.01, 2); };
  importance_weights(a, lik);
  importance_weights(b, [&](std::span<const double> v) { return lik(v) + 812.0; });
  const auto wa = a.normalized_weights(), wb = b.normalized_weights();
  for (std::size_t s = 0; s < wa.size(); ++s) EXPECT_NEAR(wa[s], wb[s], 1e-14);
  EXPECT_NEAR(a.ess(), b.ess(), 1e-9);
}

TEST(ImportanceWeights, DegenerateWeightsWarn) {
  auto e = gaussian_ensemble(1000, 0.4, 0.02, 4);
  importance_weights(e, [](std::span<const double> v) { return -0.5 * std::pow((v[0] - 0.4) / 1e-5, 2); });
  EXPECT_GE(e.ess(), 1.0);
  EXPECT_LT(e.ess(), 50.0);
  ASSERT_EQ(e.warnings.size(), 1u);
  EXPECT_NE(e.warnings[0].find("degenerate"), std::string::npos);
  EXPECT_EQ(weighted_summary(e, first_share).warnings.size(), 1u);
}

TEST(ImportanceWeights, EssBoundsOnRandomWeights) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(0.0, 3.0);
  for (int t = 0; t < 50; ++t) {
    auto e = gaussian_ensemble(100, 0.4, 0.02, 6);
    importance_weights(e, [&](std::span<const double>) { return z(rng); }, 0.0);
    EXPECT_GE(e.ess(), 1.0);
    EXPECT_LE(e.ess(), 100.0);
    const auto w = e.normalized_weights();
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(WeightedSummary, EqualWeightsIsPlainMean) {
  const auto e = gaussian_ensemble(101, 0.3, 0.05, 7);
  double mean = 0.0;
  for (std::size_t s = 0; s < 101; ++s) mean += e.national(s)[0];
  mean /= 101.0;
  EXPECT_NEAR(weighted_summary(e, first_share).estimate, mean, 1e-14);
}

TEST(WeightedSummary, AllWeightOnOneDraw) {
  auto e = gaussian_ensemble(20, 0.3, 0.05, 8);
  std::size_t s = 0;
  importance_weights(e, [&](std::span<const double>) { return s++ == 13 ? 0.0 : -INFINITY; }, 0.0);
  const auto sum = weighted_summary(e, first_share);
  EXPECT_DOUBLE_EQ(sum.estimate, e.national(13)[0]);
  for (double q : sum.quantiles) EXPECT_DOUBLE_EQ(q, e.national(13)[0]);
}

TEST(WeightedSummary, HandComputedWeightedMean) {
  SimulationEnsemble e(PartyCanon({"A", "B", "others"}), {1, 2}, {100.0, 300.0}, 3);
  const double local[3][2][3] = {{{0.2, 0.5, 0.3}, {0.4, 0.3, 0.3}},
                                 {{0.3, 0.3, 0.4}, {0.2, 0.6, 0.2}},
                                 {{0.5, 0.1, 0.4}, {0.1, 0.1, 0.8}}};
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t l = 0; l < 3; ++l) e.local(s, i)[l] = local[s][i][l];
    e.aggregate(s);
  }
  // National A per draw: 0.35, 0.225, 0.2; weights 1:2:1.
  std::size_t s = 0;
  const double lw[3] = {0.0, std::log(2.0), 0.0};
  importance_weights(e, [&](std::span<const double>) { return lw[s++]; }, 0.0);
  EXPECT_NEAR(weighted_summary(e, first_share).estimate, (0.35 + 2 * 0.225 + 0.2) / 4.0, 1e-14);
  const auto sum = weighted_summary(e, first_share);
  EXPECT_DOUBLE_EQ(sum.quantiles[1], 0.225);
}

TEST(SeatDistribution, PointMassForRepeatedDraw) {
  SimulationEnsemble e(PartyCanon({"A", "B", "others"}), {1, 2}, {1000.0, 2000.0}, 10);
  for (std::size_t s = 0; s < 10; ++s) {
    const double p1[3] = {0.5, 0.3, 0.2}, p2[3] = {0.2, 0.45, 0.35};
    std::copy(p1, p1 + 3, e.local(s, 0).begin());
    std::copy(p2, p2 + 3, e.local(s, 1).begin());
    e.aggregate(s);
  }
  const auto d = seat_distribution(e, {{1, 5}, {2, 7}}, 0.03);
  // D'Hondt: province 1 (500, 300, 200) over 5 seats -> 3, 1, 1;
  // province 2 (400, 900, 700) over 7 seats -> 1, 3, 3.
  const std::vector<int> expected{4, 4, 4};
  for (std::size_t l = 0; l < 3; ++l) {
    ASSERT_EQ(d.histogram[l].size(), 1u);
    EXPECT_NEAR(d.histogram[l].at(expected[l]), 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(d.median[l], expected[l]);
    EXPECT_DOUBLE_EQ(d.lower[l], d.upper[l]);
  }
  EXPECT_THROW(seat_distribution(e, {{1, 5}}, 0.03), Error);
}

TEST(SeatDistribution, MeanSeatsSumToChamber) {
  std::mt19937_64 rng(9);
  std::gamma_distribution<double> g(2.0, 1.0);
  const std::vector<int> ids{1, 2, 3, 4, 5};
  std::map<int, int> contingents{{1, 3}, {2, 8}, {3, 10}, {4, 31}, {5, 1}};
  SimulationEnsemble e(PartyCanon({"A", "B", "C", "D", "others"}), ids, {1, 2, 3, 4, 5}, 200);
  for (std::size_t s = 0; s < 200; ++s) {
    for (std::size_t i = 0; i < 5; ++i) {
      double total = 0.0;
      for (auto& x : e.local(s, i)) total += (x = g(rng));
      for (auto& x : e.local(s, i)) x /= total;
    }
    e.aggregate(s);
  }
  std::normal_distribution<double> z(0.0, 2.0);
  importance_weights(e, [&](std::span<const double>) { return z(rng); }, 0.0);
  const auto d = seat_distribution(e, contingents, 0.03);
  for (const auto& n : d.national) EXPECT_EQ(std::accumulate(n.begin(), n.end(), 0), 53);
  EXPECT_NEAR(std::accumulate(d.mean.begin(), d.mean.end(), 0.0), 53.0, 1e-9);
}

TEST(PriorWeight, ConjugateToy) {
  // Prior N(0, 1) and likelihood N(1, 1) on a share axis scaled by 0.01:
  // posterior variance is half the prior variance.
  auto e = gaussian_ensemble(100000, 0.5, 0.01, 10);
  importance_weights(e, [](std::span<const double> v) { return -0.5 * std::pow((v[0] - 0.51) / 0.01, 2); });
  const auto w = prior_weight_gaussian(e);
  ASSERT_EQ(w.per_party.size(), 1u);
  EXPECT_NEAR(w.per_party[0], 0.5, 0.02);
  EXPECT_NEAR(w.summary, 0.5, 0.02);
}

TEST(PriorWeight, FlatLikelihoodGivesOne) {
  auto e = gaussian_ensemble(1000, 0.5, 0.01, 11);
  importance_weights(e, [](std::span<const double>) { return 0.0; });
  std::vector<std::vector<double>> prior;
  for (std::size_t s = 0; s < e.draws(); ++s) prior.emplace_back(e.national(s).begin(), e.national(s).end());
  const auto w = prior_weight_gaussian(prior, e);
  // Unbiased prior variance against the plug-in posterior variance.
  EXPECT_NEAR(w.per_party[0], 999.0 / 1000.0, 1e-12);
  EXPECT_FALSE(w.clipped[0]);
}

TEST(PriorWeight, ZeroPriorVarianceIsUndefined) {
  auto e = gaussian_ensemble(200, 0.5, 0.0, 12);
  try {
    prior_weight_gaussian(e);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::undefined_weight);
  }
}

TEST(FlatLikelihoodSynthesis, ReproducesFundamentalMeans) {
  const auto prior = gaussian_ensemble(4000, 0.3, 0.02, 13);
  auto e = prior;
  importance_weights(e, [](std::span<const double>) { return 0.0; });
  const auto sum = weighted_summary(e, first_share);
  EXPECT_NEAR(sum.estimate, 0.3, 3.0 * 0.02 / std::sqrt(4000.0));
  EXPECT_DOUBLE_EQ(sum.estimate, weighted_summary(prior, first_share).estimate);
}
