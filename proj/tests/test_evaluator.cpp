#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace mvglmm;

TEST(LogLoss, Examples) {
  EXPECT_NEAR(log_loss(0.5, 1.0), 0.693147, 1e-6);
  EXPECT_DOUBLE_EQ(log_loss(0.5, 1.0), std::log(2.0));
  EXPECT_NEAR(log_loss(0.9, 1.0), 0.105361, 1e-6);
  EXPECT_NEAR(log_loss(0.9, 0.0), 2.302585, 1e-6);
  EXPECT_DOUBLE_EQ(log_loss(0.9, 0.5), 0.5 * (-std::log(0.9) - std::log(0.1)));
  // Clamped rather than infinite.
  EXPECT_TRUE(std::isfinite(log_loss(0.0, 1.0)));
  EXPECT_NEAR(log_loss(0.0, 1.0), -std::log(probability_floor), 1e-9);
  EXPECT_THROW(log_loss(0.5, 2.0), DomainError);
  EXPECT_THROW(log_loss(std::nan(""), 1.0), DomainError);
}

TEST(LogLoss, ConstantHalfBaselineIsLog2) {
  const std::vector<Outcome> outcomes = {Outcome::home_win, Outcome::away_win, Outcome::home_win,
                                         Outcome::tie, Outcome::away_win};
  double total = 0.0;
  for (Outcome o : outcomes) total += log_loss(0.5, outcome_value(o));
  EXPECT_NEAR(total / static_cast<double>(outcomes.size()), std::log(2.0), 1e-15);
}

TEST(SignTest, BinomialExamples) {
  std::vector<double> nine(9, 1.0);
  nine.push_back(-1.0);
  auto r = sign_test(nine);
  ASSERT_TRUE(r.defined);
  EXPECT_NEAR(r.p_value, 2.0 * (10.0 + 1.0) / 1024.0, 1e-15);
  EXPECT_NEAR(r.p_value, 0.021484, 1e-6);
  EXPECT_EQ(r.majority_direction, 1);

  std::vector<double> five = {1, 1, 1, 1, 1, -1, -1, -1, -1, -1};
  EXPECT_DOUBLE_EQ(sign_test(five).p_value, 1.0);

  std::vector<double> ten(10, -0.3);
  r = sign_test(ten);
  EXPECT_NEAR(r.p_value, 2.0 / 1024.0, 1e-15);
  EXPECT_NEAR(r.p_value, 0.001953, 1e-6);
  EXPECT_EQ(r.majority_direction, -1);
}

TEST(SignTest, ZerosAreDroppedAndAllZeroIsUndefined) {
  auto r = sign_test({0.0, 0.0, 0.0});
  EXPECT_FALSE(r.defined);
  EXPECT_TRUE(std::isnan(r.p_value));
  EXPECT_EQ(r.zeros, 3u);
  r = sign_test({1.0, 0.0, 1.0});
  EXPECT_EQ(r.zeros, 1u);
  EXPECT_DOUBLE_EQ(r.p_value, 0.5);
  EXPECT_FALSE(sign_test({}).defined);
}

TEST(PairedTTest, Examples) {
  const auto r = paired_t_test({0.5, 0.7, 0.6, 0.8});
  EXPECT_NEAR(r.mean, 0.65, 1e-12);
  EXPECT_NEAR(r.sd, 0.1291, 1e-4);
  EXPECT_NEAR(r.t_statistic, 0.65 / (std::sqrt(1.0 / 60.0) / 2.0), 1e-9);
  EXPECT_NEAR(r.t_statistic, 10.07, 1e-2);
  EXPECT_LT(r.ci_low, 0.65);
  EXPECT_GT(r.ci_high, 0.65);
  EXPECT_LT(r.p_value, 0.01);

  const auto sym = paired_t_test({1.0, -1.0});
  EXPECT_DOUBLE_EQ(sym.t_statistic, 0.0);
  EXPECT_DOUBLE_EQ(sym.p_value, 1.0);

  const auto zero = paired_t_test({0.0, 0.0, 0.0});
  EXPECT_TRUE(zero.degenerate);
  EXPECT_DOUBLE_EQ(zero.t_statistic, 0.0);
  EXPECT_THROW(paired_t_test({1.0}), ValidationError);
}

TEST(CvPlan, FoldsPartitionGamesDeterministically) {
  const auto a = CvPlan::make(103, 10, 42);
  const auto b = CvPlan::make(103, 10, 42);
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_NE(a.assignments, CvPlan::make(103, 10, 43).assignments);
  std::vector<std::size_t> sizes(10, 0);
  for (auto f : a.assignments) ++sizes.at(f);
  const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  EXPECT_LE(*hi - *lo, 1u);
  EXPECT_EQ(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}), 103u);
  EXPECT_THROW(CvPlan::make(5, 1, 1), ValidationError);
  EXPECT_THROW(CvPlan::make(5, 6, 1), ValidationError);
}

TEST(CrossValidate, LeaveOneOut) {
  std::mt19937_64 rng(13);
  const Dataset d(oracle::random_games(rng, 4, 7));
  ModelSpec s;
  s.method = Method::N;
  const auto plan = CvPlan::make(d.original_games(), d.original_games(), 1);
  const auto cv = cross_validate(d, s, plan);
  ASSERT_EQ(cv.folds.size(), 7u);
  for (const auto& f : cv.folds) {
    EXPECT_EQ(f.train_games, 6u);
    EXPECT_EQ(f.test_games, 1u);
  }
  EXPECT_EQ(cv.predicted_games(), 7u);
  for (const auto& g : cv.games) {
    EXPECT_TRUE(g.abs_residual.has_value());
    EXPECT_FALSE(g.log_loss.has_value());
  }
}

TEST(CrossValidate, ReportsAreReproducible) {
  const auto sim = simulate_season(profile_config(SimulationProfile::sacks, 12, 6, 2));
  ModelSpec s;
  s.method = Method::PB0;
  const auto plan = CvPlan::make(sim.data.original_games(), 10, 7);
  std::ostringstream a, b;
  write_cv_games(a, cross_validate(sim.data, s, plan));
  write_cv_games(b, cross_validate(sim.data, s, plan));
  EXPECT_EQ(a.str(), b.str());
}

TEST(CompareModels, SelfComparisonIsUndefined) {
  const auto sim = simulate_season(profile_config(SimulationProfile::sacks, 12, 6, 3));
  ModelSpec s;
  s.method = Method::P0;
  const auto plan = CvPlan::make(sim.data.original_games(), 5, 1);
  const auto cv = cross_validate(sim.data, s, plan);
  const auto pc = compare_pair(cv, cv, Metric::abs_residual);
  EXPECT_FALSE(pc.sign.defined);
  EXPECT_EQ(pc.sign.zeros, pc.differences.size());
  for (double x : pc.differences) EXPECT_EQ(x, 0.0);
  EXPECT_FALSE(pc.preferred.has_value());
  EXPECT_FALSE(pc.significant);
  const auto rep = compare_models({cv, cv}, "self");
  EXPECT_FALSE(rep.response.best.has_value());
}

TEST(CompareModels, JointModelWinsOnCorrelatedRatings) {
  const auto sim = simulate_season(profile_config(SimulationProfile::yards_per_play, 40, 12, 1001));
  const auto plan = CvPlan::make(sim.data.original_games(), 10, 1);
  ModelSpec nb, b;
  nb.method = Method::NB;
  b.method = Method::B;
  const auto rep = compare_models({cross_validate(sim.data, nb, plan), cross_validate(sim.data, b, plan)}, "sim");
  ASSERT_TRUE(rep.outcome.best.has_value());
  EXPECT_EQ(*rep.outcome.best, Method::NB);
  EXPECT_TRUE(rep.outcome.significant);
  EXPECT_LT(rep.outcome.p_value, 0.05);
  // Only NB predicts scores.
  EXPECT_EQ(rep.response.best, Method::NB);
  std::ostringstream out;
  write_comparison_summary(out, {rep});
  EXPECT_NE(out.str().find("sim,NB,NB*,"), std::string::npos);
  const auto& pair = rep.pairs.back();
  EXPECT_LT(pair.median_a, pair.median_b);
}

TEST(Contrast, ZeroWeightsAndMissingHessian) {
  FitResult f;
  f.spec.method = Method::N;
  f.parameter_names = {"LocationAway", "LocationHome"};
  f.parameter_values = Eigen::Vector2d(5.45, 5.8);
  const auto zero = contrast(f, Eigen::VectorXd::Zero(2));
  EXPECT_TRUE(zero.available);
  EXPECT_EQ(zero.estimate, 0.0);
  EXPECT_EQ(zero.p_value, 1.0);
  const auto c = home_away_contrast(f);
  EXPECT_FALSE(c.available);
  EXPECT_NEAR(c.estimate, 0.35, 1e-12);
  f.hessian = Eigen::Matrix2d::Identity() * 100.0;
  const auto h = home_away_contrast(f);
  ASSERT_TRUE(h.available);
  EXPECT_NEAR(h.std_error, std::sqrt(0.02), 1e-12);
  EXPECT_THROW(contrast(f, Eigen::VectorXd::Zero(3)), ValidationError);
}

TEST(Contrast, CalibratedUnderEqualMeans) {
  int inside = 0;
  const int reps = 40;
  for (int seed = 1; seed <= reps; ++seed) {
    auto cfg = profile_config(SimulationProfile::yards_per_play, 20, 8, static_cast<std::uint64_t>(500 + seed));
    cfg.truth.beta << 5.5, 5.5, 5.5;
    const auto sim = simulate_season(cfg);
    ModelSpec s;
    s.method = Method::N;
    s.compute_hessian = true;
    const auto r = home_away_contrast(fit(sim.data, s));
    ASSERT_TRUE(r.available) << r.note;
    if (std::abs(r.z) < 1.96) ++inside;
  }
  // Nominal 95%; allow binomial noise.
  EXPECT_GE(inside, 34);
}
