#include <cmath>
#include <random>

#include <boost/math/distributions/normal.hpp>
#include <gtest/gtest.h>

#include "support.hpp"

using namespace mvglmm;

namespace {

const double log_2pi = std::log(2.0 * oracle::pi);

Dataset one_game(double yh, double ya, Outcome o = Outcome::home_win) {
  GameRecord g;
  g.home_team = "A";
  g.away_team = "B";
  g.home_response = yh;
  g.away_response = ya;
  g.binary_outcome = o;
  return Dataset({g});
}

ModelSpec spec_for(Method m) {
  ModelSpec s;
  s.method = m;
  return s;
}

}  // namespace

TEST(NormalLikelihood, HandExamples) {
  const Dataset d = one_game(0.0, 0.0);
  const ScoreDesign s = build_score_design(d, false);
  const Eigen::VectorXd b = Eigen::VectorXd::Zero(6);
  Parameters par;
  EXPECT_NEAR(normal_cond_loglik(score_responses(d), s, par, b), -1.837877, 1e-6);

  Eigen::VectorXd y(2);
  y << 1.0, 0.0;
  EXPECT_NEAR(normal_cond_loglik(y, s, par, b), -2.337877, 1e-6);

  par.Rstar << 1.0, 0.5, 0.5, 1.0;
  y << 1.0, 1.0;
  const double expected = -log_2pi - 0.5 * std::log(0.75) - 0.5 * (4.0 / 3.0);
  EXPECT_NEAR(normal_cond_loglik(y, s, par, b), expected, 1e-12);
  EXPECT_NEAR(expected, -2.360, 1e-3);
}

TEST(NormalLikelihood, ResidualSubtractsFixedAndRandomParts) {
  const Dataset d = one_game(6.0, 5.0);
  const ScoreDesign s = build_score_design(d, false);
  Parameters par;
  par.beta << 5.0, 4.0, 0.0;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(6);
  b[0] = 1.0;   // A offense lifts the home row
  b[4] = -1.0;  // B defense enters the home row with a minus sign
  // home residual 6 - 5 - (1 - (-1)) = -1, away residual 5 - 4 - 0 = 1.
  EXPECT_NEAR(normal_cond_loglik(score_responses(d), s, par, b), -log_2pi - 1.0, 1e-12);
}

TEST(NormalLikelihood, RejectsIndefiniteR) {
  const Dataset d = one_game(0.0, 0.0);
  Parameters par;
  par.Rstar << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(normal_cond_loglik(score_responses(d), build_score_design(d, false), par,
                                  Eigen::VectorXd::Zero(6)),
               NumericError);
}

TEST(PoissonLikelihood, HandExamples) {
  const Dataset d = one_game(0.0, 0.0);
  const ScoreDesign s = build_score_design(d, false);
  Parameters par;
  EXPECT_NEAR(poisson_cond_loglik(score_responses(d), s, par, Eigen::VectorXd::Zero(6)), -2.0, 1e-14);

  const Dataset d3 = one_game(3.0, 0.0);
  par.beta << std::log(3.0), 0.0, 0.0;
  const double total = poisson_cond_loglik(score_responses(d3), s, par, Eigen::VectorXd::Zero(6));
  // The away row (y=0, eta=0) contributes -1.
  EXPECT_NEAR(total + 1.0, 3.0 * std::log(3.0) - 3.0 - std::log(6.0), 1e-12);
  EXPECT_NEAR(total + 1.0, -1.495923, 1e-6);
}

TEST(PoissonLikelihood, EmptyAndNonPositive) {
  const Dataset empty(std::vector<GameRecord>{}, {"A", "B"});
  EXPECT_EQ(poisson_cond_loglik(Eigen::VectorXd(0), build_score_design(empty, false), Parameters{},
                                Eigen::VectorXd::Zero(6)),
            0.0);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> z(0.0, 1.0);
  const Dataset d(oracle::random_games(rng, 5, 20, true));
  const ScoreDesign s = build_score_design(d, false);
  for (int rep = 0; rep < 20; ++rep) {
    Parameters par;
    par.beta << z(rng), z(rng), z(rng);
    Eigen::VectorXd b(15);
    for (Eigen::Index k = 0; k < b.size(); ++k) b[k] = z(rng);
    // Every term is a log pmf, hence non-positive.
    EXPECT_LE(poisson_cond_loglik(score_responses(d), s, par, b), 0.0);
  }
  Eigen::VectorXd bad(2);
  bad << 1.5, 0.0;
  EXPECT_THROW(poisson_cond_loglik(bad, s, Parameters{}, Eigen::VectorXd::Zero(15)), DomainError);
}

TEST(BinaryLikelihood, HandExamples) {
  const Dataset win = one_game(0, 0, Outcome::home_win);
  const Dataset loss = one_game(0, 0, Outcome::away_win);
  Parameters par;
  const Eigen::VectorXd b = Eigen::VectorXd::Zero(6);
  EXPECT_NEAR(binary_cond_loglik(binary_outcomes(win), build_binary_design(win), par, b), -0.693147, 1e-6);
  EXPECT_NEAR(binary_cond_loglik(binary_outcomes(loss), build_binary_design(loss), par, b), -0.693147, 1e-6);
  const boost::math::normal_distribution<double> nd;
  par.alpha = boost::math::quantile(nd, 0.9);
  EXPECT_NEAR(par.alpha, 1.281552, 1e-6);
  EXPECT_NEAR(binary_cond_loglik(binary_outcomes(win), build_binary_design(win), par, b), std::log(0.9), 1e-12);
}

TEST(NormalMath, LogCdfIsStableInBothTails) {
  const boost::math::normal_distribution<double> nd;
  for (double x : {-30.0, -8.5, -5.0, -1.0, 0.0, 2.0, 7.0}) {
    const double expected = std::log(boost::math::cdf(nd, x));
    EXPECT_NEAR(log_norm_cdf(x), expected, 1e-12 * std::max(1.0, std::abs(expected))) << x;
  }
  // Beyond double underflow of the CDF itself: asymptotic series.
  const double x = -45.0;
  const double asym = -0.5 * x * x - std::log(-x) - 0.5 * log_2pi +
                      std::log(1.0 - 1.0 / (x * x) + 3.0 / std::pow(x, 4) - 15.0 / std::pow(x, 6) + 105.0 / std::pow(x, 8));
  EXPECT_NEAR(log_norm_cdf(x), asym, 1e-10);
  EXPECT_NEAR(inverse_mills(-45.0), std::exp(norm_log_pdf(-45.0) - log_norm_cdf(-45.0)), 1e-9);
}

TEST(Prior, HandExamples) {
  const auto layout = EffectLayout::for_method(Method::NB, 1, 0);
  Parameters par;
  par.Gstar = Eigen::Matrix3d::Identity();
  EXPECT_NEAR(prior_loglik(Eigen::VectorXd::Zero(3), par, layout), -2.756816, 1e-6);
  par.Gstar = Eigen::Vector3d(4, 1, 1).asDiagonal();
  Eigen::VectorXd b(3);
  b << 2, 0, 0;
  EXPECT_NEAR(prior_loglik(b, par, layout), -2.756816 - 0.5 * std::log(4.0) - 0.5, 1e-6);
}

TEST(Prior, ZeroEffectsGiveLogDetTerm) {
  std::mt19937_64 rng(5);
  Parameters par;
  par.Gstar = oracle::random_spd(rng, 3, 0.2, 2.0);
  const std::size_t p = 7;
  const auto layout = EffectLayout::for_method(Method::NB, p, 0);
  const double expected = -1.5 * static_cast<double>(p) * log_2pi -
                          0.5 * static_cast<double>(p) * std::log(par.Gstar.determinant());
  EXPECT_NEAR(prior_loglik(Eigen::VectorXd::Zero(21), par, layout), expected, 1e-10);
}

TEST(JointObjective, NoGamesIsPriorOnly) {
  const Dataset d(std::vector<GameRecord>{}, {"A", "B", "C"});
  const ModelData md = ModelData::build(d, spec_for(Method::B));
  Parameters par;
  par.Gstar(2, 2) = 0.5;
  Eigen::VectorXd b(3);
  b << 0.3, -0.2, 0.7;
  const auto obj = joint_penalized_loglik(md, par, b);
  EXPECT_NEAR(obj.value, prior_loglik(b, par, md.layout), 1e-14);
  EXPECT_TRUE(obj.gradient.isApprox(-b / 0.5, 1e-14));
}

TEST(JointObjective, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> z(0.0, 1.0);
  for (Method m : all_methods) {
    const bool counts = score_family(m) == ScoreFamily::poisson;
    const Dataset d(oracle::random_games(rng, 5, 12, counts));
    const ModelData md = ModelData::build(d, spec_for(m));
    const Parameters par = oracle::random_parameters(rng, m);
    Eigen::VectorXd b(static_cast<Eigen::Index>(md.layout.dim()));
    for (Eigen::Index k = 0; k < b.size(); ++k) b[k] = 0.3 * z(rng);
    const auto obj = joint_penalized_loglik(md, par, b);
    const auto fd = oracle::fd_gradient(
        [&](const Eigen::VectorXd& x) { return joint_penalized_loglik(md, par, x, false).value; }, b);
    EXPECT_LT(oracle::relative_error(fd, obj.gradient), 1e-6) << to_string(m);
  }
}

TEST(JointObjective, SeparatesWhenCrossCovariancesAreZero) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0.0, 1.0);
  const Dataset d(oracle::random_games(rng, 4, 10));
  Parameters par = oracle::random_parameters(rng, Method::NB);
  for (int k = 0; k < 2; ++k) par.Gstar(k, 2) = par.Gstar(2, k) = 0.0;
  const ModelData nb = ModelData::build(d, spec_for(Method::NB));
  const ModelData n = ModelData::build(d, spec_for(Method::N));
  const ModelData bo = ModelData::build(d, spec_for(Method::B));
  Eigen::VectorXd b(12), bn(8), bb(4);
  for (int j = 0; j < 4; ++j) {
    bn[2 * j] = b[3 * j] = z(rng);
    bn[2 * j + 1] = b[3 * j + 1] = z(rng);
    bb[j] = b[3 * j + 2] = z(rng);
  }
  const double joint = joint_penalized_loglik(nb, par, b).value;
  const double parts = joint_penalized_loglik(n, par, bn).value + joint_penalized_loglik(bo, par, bb).value;
  EXPECT_NEAR(joint, parts, 1e-10);
}
