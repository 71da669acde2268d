#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvglmm/data_model.hpp"
#include "mvglmm/errors.hpp"
#include "mvglmm/likelihoods.hpp"
#include "mvglmm/model_spec.hpp"

namespace mvglmm {

struct SimulationConfig {
  std::size_t teams = 50;
  std::size_t games_per_team = 12;  // rounds of random pairings; teams must be even
  double neutral_fraction = 0.05;
  ScoreFamily family = ScoreFamily::normal;
  // Outcome is 1{home response > away response} (ties resolved by a coin
  // flip) instead of an independent probit draw on the win propensities.
  bool outcome_from_scores = false;
  Parameters truth;
  std::uint64_t seed = 1;
};

struct SimulatedSeason {
  Dataset data;
  Eigen::MatrixXd effects;  // p x 3 true (offense, defense, win)
};

inline std::string synthetic_team_name(std::size_t j) {
  std::string s = std::to_string(j);
  return "Team " + std::string(3 - std::min<std::size_t>(3, s.size()), '0') + s;
}

// Random round-robin-style schedule: each round is a random perfect matching.
inline SimulatedSeason simulate_season(const SimulationConfig& cfg) {
  if (cfg.teams < 2 || cfg.teams % 2 != 0)
    throw ValidationError("simulation needs an even number of teams (at least 2)");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const auto p = static_cast<Eigen::Index>(cfg.teams);
  Eigen::MatrixXd effects(p, 3);
  {
    Eigen::LLT<Eigen::Matrix3d> llt(cfg.truth.Gstar);
    Eigen::Matrix3d L = Eigen::Matrix3d::Zero();
    if (llt.info() == Eigen::Success) {
      L = llt.matrixL();
    } else {
      // Semi-definite truth (e.g. unused components): symmetric square root.
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cfg.truth.Gstar);
      L = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    }
    for (Eigen::Index j = 0; j < p; ++j) {
      Eigen::Vector3d z(std_normal(rng), std_normal(rng), std_normal(rng));
      effects.row(j) = (L * z).transpose();
    }
  }
  Eigen::Matrix2d RL = Eigen::Matrix2d::Identity();
  if (cfg.family == ScoreFamily::normal) {
    Eigen::LLT<Eigen::Matrix2d> rl(cfg.truth.Rstar);
    if (rl.info() != Eigen::Success) throw ValidationError("simulation Rstar is not positive-definite");
    RL = rl.matrixL();
  }

  std::vector<std::size_t> order(cfg.teams);
  std::vector<GameRecord> games;
  std::size_t id = 0;
  for (std::size_t round = 0; round < cfg.games_per_team; ++round) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t k = order.size(); k > 1; --k) {
      std::uniform_int_distribution<std::size_t> pick(0, k - 1);
      std::swap(order[k - 1], order[pick(rng)]);
    }
    for (std::size_t k = 0; k + 1 < order.size(); k += 2) {
      const auto h = static_cast<Eigen::Index>(order[k]);
      const auto a = static_cast<Eigen::Index>(order[k + 1]);
      GameRecord g;
      g.game_id = std::to_string(++id);
      g.home_team = synthetic_team_name(order[k]);
      g.away_team = synthetic_team_name(order[k + 1]);
      g.neutral_site = unif(rng) < cfg.neutral_fraction;
      const double mh = g.neutral_site ? cfg.truth.beta[2] : cfg.truth.beta[0];
      const double ma = g.neutral_site ? cfg.truth.beta[2] : cfg.truth.beta[1];
      const double eta_h = mh + effects(h, 0) - effects(a, 1);
      const double eta_a = ma + effects(a, 0) - effects(h, 1);
      if (cfg.family == ScoreFamily::normal) {
        const Eigen::Vector2d e = RL * Eigen::Vector2d(std_normal(rng), std_normal(rng));
        g.home_response = eta_h + e[0];
        g.away_response = eta_a + e[1];
      } else if (cfg.family == ScoreFamily::poisson) {
        double ge = 0.0;
        if (cfg.truth.sigma2_g > 0) ge = std::sqrt(cfg.truth.sigma2_g) * std_normal(rng);
        std::poisson_distribution<long> ph(std::exp(eta_h + ge));
        std::poisson_distribution<long> pa(std::exp(eta_a + ge));
        g.home_response = static_cast<double>(ph(rng));
        g.away_response = static_cast<double>(pa(rng));
      }
      bool home_win = false;
      if (cfg.outcome_from_scores && g.home_response) {
        if (*g.home_response == *g.away_response)
          home_win = unif(rng) < 0.5;
        else
          home_win = *g.home_response > *g.away_response;
      } else {
        const double eta =
            (g.neutral_site ? 0.0 : cfg.truth.alpha) + effects(h, 2) - effects(a, 2);
        home_win = eta + std_normal(rng) > 0;
      }
      g.binary_outcome = home_win ? Outcome::home_win : Outcome::away_win;
      games.push_back(std::move(g));
    }
  }
  return {Dataset(std::move(games)), effects};
}

// Parameter sets shaped like the fitted football covariance matrices:
// yards-per-play (normal, strongly correlated), sacks (counts, moderately
// correlated with win propensity), fumbles (counts, no correlation with win
// propensity), an uncorrelated yards-per-play variant, and scores with the
// outcome derived from the score margin.
enum class SimulationProfile { yards_per_play, sacks, fumbles, independent, scores };

inline SimulationConfig profile_config(SimulationProfile profile, std::size_t teams,
                                       std::size_t games_per_team, std::uint64_t seed) {
  SimulationConfig cfg;
  cfg.teams = teams;
  cfg.games_per_team = games_per_team;
  cfg.seed = seed;
  auto& t = cfg.truth;
  switch (profile) {
    case SimulationProfile::yards_per_play:
      cfg.family = ScoreFamily::normal;
      t.beta << 5.8, 5.45, 5.5;
      t.alpha = 0.22;
      t.Gstar << 0.55, 0.22, 0.58,
                 0.22, 0.35, 0.44,
                 0.58, 0.44, 0.84;
      t.Rstar << 1.4, 0.18,
                 0.18, 1.1;
      break;
    case SimulationProfile::independent:
      cfg.family = ScoreFamily::normal;
      t.beta << 5.8, 5.45, 5.5;
      t.alpha = 0.22;
      t.Gstar << 0.55, 0.22, 0.0,
                 0.22, 0.35, 0.0,
                 0.0, 0.0, 0.84;
      t.Rstar << 1.4, 0.18,
                 0.18, 1.1;
      break;
    case SimulationProfile::sacks:
      cfg.family = ScoreFamily::poisson;
      t.beta << std::log(2.4), std::log(2.1), std::log(2.2);
      t.alpha = 0.22;
      t.Gstar << 0.07, 0.03, 0.17,
                 0.03, 0.09, 0.14,
                 0.17, 0.14, 0.55;
      break;
    case SimulationProfile::fumbles:
      cfg.family = ScoreFamily::poisson;
      t.beta << std::log(2.0), std::log(2.0), std::log(2.0);
      t.alpha = 0.22;
      t.Gstar << 0.02, 0.005, 0.0,
                 0.005, 0.01, 0.0,
                 0.0, 0.0, 0.44;
      break;
    case SimulationProfile::scores:
      cfg.family = ScoreFamily::normal;
      cfg.outcome_from_scores = true;
      t.beta << 29.0, 26.0, 27.5;
      t.alpha = 0.0;
      t.Gstar << 30.0, 15.0, 0.0,
                 15.0, 25.0, 0.0,
                 0.0, 0.0, 0.0;
      t.Rstar << 100.0, 10.0,
                 10.0, 100.0;
      break;
  }
  return cfg;
}

}  // namespace mvglmm
