#pragma once

// Independent oracles shared by the unit and acceptance tests. Nothing here
// calls into the library's design or likelihood code: designs are rebuilt
// densely from the game list and integrals are done by brute force.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvglmm/mvglmm.hpp"

namespace mvglmm::oracle {

inline constexpr double pi = 3.14159265358979323846;

// Random schedule of n games among p teams (p >= 2) with random responses.
inline std::vector<GameRecord> random_games(std::mt19937_64& rng, std::size_t p, std::size_t n,
                                            bool counts = false, double neutral_prob = 0.2) {
  std::uniform_int_distribution<std::size_t> team(0, p - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::poisson_distribution<int> pois(2.5);
  std::vector<GameRecord> games;
  for (std::size_t i = 0; i < n; ++i) {
    GameRecord g;
    g.game_id = "g" + std::to_string(i);
    const std::size_t h = team(rng);
    std::size_t a = team(rng);
    while (a == h) a = team(rng);
    g.home_team = "T" + std::to_string(h);
    g.away_team = "T" + std::to_string(a);
    g.neutral_site = u(rng) < neutral_prob;
    if (counts) {
      g.home_response = pois(rng);
      g.away_response = pois(rng);
    } else {
      g.home_response = 5.0 + z(rng);
      g.away_response = 4.5 + z(rng);
    }
    g.binary_outcome = u(rng) < 0.55 ? Outcome::home_win : Outcome::away_win;
    games.push_back(std::move(g));
  }
  return games;
}

// Random symmetric positive-definite k x k matrix with eigenvalues in [lo, hi].
inline Eigen::MatrixXd random_spd(std::mt19937_64& rng, int k, double lo, double hi) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd A(k, k);
  for (int a = 0; a < k; ++a)
    for (int c = 0; c < k; ++c) A(a, c) = z(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  const Eigen::MatrixXd Q = qr.householderQ();
  Eigen::VectorXd d(k);
  for (int a = 0; a < k; ++a) d[a] = u(rng);
  return Q * d.asDiagonal() * Q.transpose();
}

// Dense score design in the full [team (o,d,w)..., game effects] layout.
struct DenseScoreDesign {
  Eigen::MatrixXd X;
  Eigen::MatrixXd Z;
};

inline DenseScoreDesign dense_score_design(const Dataset& d, bool game_effect) {
  const auto n = static_cast<Eigen::Index>(d.n());
  const auto p = static_cast<Eigen::Index>(d.p());
  DenseScoreDesign out;
  out.X = Eigen::MatrixXd::Zero(2 * n, 3);
  out.Z = Eigen::MatrixXd::Zero(2 * n, 3 * p + (game_effect ? n : 0));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& g = d.game(static_cast<std::size_t>(i));
    const auto h = static_cast<Eigen::Index>(*d.team_index(g.home_team));
    const auto a = static_cast<Eigen::Index>(*d.team_index(g.away_team));
    out.X(2 * i, g.neutral_site ? 2 : 0) = 1.0;
    out.X(2 * i + 1, g.neutral_site ? 2 : 1) = 1.0;
    out.Z(2 * i, 3 * h) = 1.0;
    out.Z(2 * i, 3 * a + 1) = -1.0;
    out.Z(2 * i + 1, 3 * a) = 1.0;
    out.Z(2 * i + 1, 3 * h + 1) = -1.0;
    if (game_effect) {
      out.Z(2 * i, 3 * p + i) = 1.0;
      out.Z(2 * i + 1, 3 * p + i) = 1.0;
    }
  }
  return out;
}

// log N(y; X beta, Z G Z' + R) for a normal score model, from dense matrices.
inline double dense_normal_marginal(const Dataset& d, const Parameters& par) {
  const auto n = static_cast<Eigen::Index>(d.n());
  const auto p = static_cast<Eigen::Index>(d.p());
  const DenseScoreDesign D = dense_score_design(d, false);
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(3 * p, 3 * p);
  for (Eigen::Index j = 0; j < p; ++j) G.block(3 * j, 3 * j, 3, 3) = par.Gstar;
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) R.block(2 * i, 2 * i, 2, 2) = par.Rstar;
  Eigen::VectorXd y(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y[2 * i] = *d.game(static_cast<std::size_t>(i)).home_response;
    y[2 * i + 1] = *d.game(static_cast<std::size_t>(i)).away_response;
  }
  const Eigen::MatrixXd V = D.Z * G * D.Z.transpose() + R;
  const Eigen::VectorXd e = y - D.X * par.beta;
  Eigen::LLT<Eigen::MatrixXd> llt(V);
  const Eigen::MatrixXd L = llt.matrixL();
  double log_det = 0.0;
  for (Eigen::Index k = 0; k < L.rows(); ++k) log_det += 2.0 * std::log(L(k, k));
  return -0.5 * static_cast<double>(2 * n) * std::log(2.0 * pi) - 0.5 * log_det -
         0.5 * e.dot(llt.solve(e));
}

// Gauss-Hermite rule for weight exp(-x^2) by the Golub-Welsch eigenvalue method.
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

inline QuadratureRule gauss_hermite(int m) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, m);
  for (int k = 1; k < m; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(0.5 * k);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  QuadratureRule q;
  q.nodes = es.eigenvalues();
  q.weights.resize(m);
  for (int k = 0; k < m; ++k)
    q.weights[k] = std::sqrt(pi) * es.eigenvectors()(0, k) * es.eigenvectors()(0, k);
  return q;
}

// E[f(b)] for b ~ N(0, C) on a tensor Gauss-Hermite grid of m points per axis.
inline double gaussian_expectation(const Eigen::MatrixXd& C, int m,
                                   const std::function<double(const Eigen::VectorXd&)>& f) {
  const auto d = static_cast<int>(C.rows());
  const QuadratureRule q = gauss_hermite(m);
  const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(C).matrixL();
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  double total = 0.0;
  Eigen::VectorXd x(d);
  while (true) {
    double w = 1.0;
    for (int k = 0; k < d; ++k) {
      x[k] = std::sqrt(2.0) * q.nodes[idx[static_cast<std::size_t>(k)]];
      w *= q.weights[idx[static_cast<std::size_t>(k)]] / std::sqrt(pi);
    }
    total += w * f(L * x);
    int k = 0;
    while (k < d && ++idx[static_cast<std::size_t>(k)] == m) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == d) break;
  }
  return total;
}

// Likelihood of a binary-only (probit) season, integrated over the win
// propensities b ~ N(0, g I_p) by quadrature.
inline double quadrature_binary_likelihood(const Dataset& d, double alpha, double g, int m) {
  const auto p = static_cast<int>(d.p());
  const Eigen::MatrixXd C = g * Eigen::MatrixXd::Identity(p, p);
  return gaussian_expectation(C, m, [&](const Eigen::VectorXd& b) {
    double like = 1.0;
    for (std::size_t i = 0; i < d.n(); ++i) {
      const auto& rec = d.game(i);
      const double eta = (rec.neutral_site ? 0.0 : alpha) +
                         b[static_cast<Eigen::Index>(*d.team_index(rec.home_team))] -
                         b[static_cast<Eigen::Index>(*d.team_index(rec.away_team))];
      const double phi = 0.5 * std::erfc(-eta / std::sqrt(2.0));
      like *= rec.binary_outcome == Outcome::home_win ? phi : 1.0 - phi;
    }
    return like;
  });
}

// Central-difference gradient of a scalar function.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    g[k] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// Central-difference Jacobian of a vector function.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::MatrixXd J(x.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    J.col(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

inline double relative_error(const Eigen::MatrixXd& approx, const Eigen::MatrixXd& exact) {
  const double scale = std::max(exact.cwiseAbs().maxCoeff(), 1e-12);
  return (approx - exact).cwiseAbs().maxCoeff() / scale;
}

// Valid random parameters for `method` on data with `p` teams.
inline Parameters random_parameters(std::mt19937_64& rng, Method method) {
  std::normal_distribution<double> z(0.0, 1.0);
  Parameters par;
  const bool poisson = score_family(method) == ScoreFamily::poisson;
  par.beta << (poisson ? 0.9 : 5.0) + 0.1 * z(rng), (poisson ? 0.8 : 4.5) + 0.1 * z(rng),
      (poisson ? 0.85 : 4.8) + 0.1 * z(rng);
  par.alpha = 0.2 + 0.1 * z(rng);
  const EffectLayout layout = EffectLayout::for_method(method, 1, 0);
  const auto m = static_cast<int>(layout.per_team());
  par.Gstar = embed_block(random_spd(rng, m, poisson ? 0.05 : 0.2, poisson ? 0.3 : 1.0), layout);
  par.sigma2_g = has_game_effect(method) ? 0.05 + 0.1 * std::abs(z(rng)) : 0.0;
  par.Rstar = random_spd(rng, 2, 0.5, 1.5);
  return par;
}

}  // namespace mvglmm::oracle
