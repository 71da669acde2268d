#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "mvglmm/data_model.hpp"
#include "mvglmm/design.hpp"
#include "mvglmm/errors.hpp"
#include "mvglmm/model_spec.hpp"
#include "mvglmm/normal_math.hpp"

namespace mvglmm {

// beta = (home mean, away mean, neutral mean) on the linear-predictor scale
// of the score model; alpha is the probit home-field effect. Gstar rows and
// columns for components a method does not use are left at zero.
struct Parameters {
  Eigen::Vector3d beta = Eigen::Vector3d::Zero();
  double alpha = 0.0;
  Eigen::Matrix3d Gstar = Eigen::Matrix3d::Zero();
  double sigma2_g = 0.0;
  Eigen::Matrix2d Rstar = Eigen::Matrix2d::Identity();
};

// Rows/columns of Gstar for the layout's active components.
inline Eigen::MatrixXd active_block(const Eigen::Matrix3d& G, const EffectLayout& layout) {
  const auto& comps = layout.components();
  const auto m = static_cast<Eigen::Index>(comps.size());
  Eigen::MatrixXd out(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index c = 0; c < m; ++c)
      out(a, c) = G(static_cast<int>(comps[a]), static_cast<int>(comps[c]));
  return out;
}

inline Eigen::Matrix3d embed_block(const Eigen::MatrixXd& block, const EffectLayout& layout) {
  const auto& comps = layout.components();
  Eigen::Matrix3d G = Eigen::Matrix3d::Zero();
  for (std::size_t a = 0; a < comps.size(); ++a)
    for (std::size_t c = 0; c < comps.size(); ++c)
      G(static_cast<int>(comps[a]), static_cast<int>(comps[c])) =
          block(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
  return G;
}

// Interleaved (home, away) responses, length 2n. Missing values become NaN.
inline Eigen::VectorXd score_responses(const Dataset& data) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(2 * data.n()));
  const double nan = std::nan("");
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto& g = data.game(i);
    y[static_cast<Eigen::Index>(2 * i)] = g.home_response.value_or(nan);
    y[static_cast<Eigen::Index>(2 * i + 1)] = g.away_response.value_or(nan);
  }
  return y;
}

// 1 for a home win, 0 for an away win, NaN when absent.
inline Eigen::VectorXd binary_outcomes(const Dataset& data) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(data.n()));
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto& o = data.game(i).binary_outcome;
    r[static_cast<Eigen::Index>(i)] =
        !o ? std::nan("") : (*o == Outcome::home_win ? 1.0 : 0.0);
  }
  return r;
}

namespace detail {

struct Inverse2 {
  Eigen::Matrix2d inv;
  double log_det;
};

inline Inverse2 invert_error_covariance(const Eigen::Matrix2d& R) {
  const double det = R(0, 0) * R(1, 1) - R(0, 1) * R(1, 0);
  if (!(R(0, 0) > 0) || !(det > 0) || !std::isfinite(det))
    throw NumericError("error covariance Rstar is not positive-definite");
  Eigen::Matrix2d inv;
  inv << R(1, 1), -R(0, 1), -R(1, 0), R(0, 0);
  return {inv / det, std::log(det)};
}

struct PriorFactor {
  Eigen::MatrixXd inv;
  double log_det;
};

inline PriorFactor invert_team_covariance(const Eigen::MatrixXd& G) {
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  if (llt.info() != Eigen::Success || !G.allFinite())
    throw NumericError("team covariance Gstar is not positive-definite");
  const Eigen::MatrixXd L = llt.matrixL();
  double log_det = 0.0;
  for (Eigen::Index k = 0; k < L.rows(); ++k) {
    if (!(L(k, k) > 0)) throw NumericError("team covariance Gstar is not positive-definite");
    log_det += 2.0 * std::log(L(k, k));
  }
  return {llt.solve(Eigen::MatrixXd::Identity(G.rows(), G.cols())), log_det};
}

inline double log_factorial(double y) { return std::lgamma(y + 1.0); }

inline bool is_count(double y) { return std::isfinite(y) && y >= 0 && std::floor(y) == y; }

}  // namespace detail

// Bivariate normal log-density of the scores given b, normalising constants included.
inline double normal_cond_loglik(const Eigen::VectorXd& y, const ScoreDesign& design,
                                 const Parameters& params, const Eigen::VectorXd& b) {
  const auto [Rinv, log_det] = detail::invert_error_covariance(params.Rstar);
  const Eigen::VectorXd e = y - design.X * params.beta - design.Z * b;
  double total = 0.0;
  for (Eigen::Index i = 0; i + 1 < e.size(); i += 2) {
    const Eigen::Vector2d ei(e[i], e[i + 1]);
    total += -log_two_pi - 0.5 * log_det - 0.5 * ei.dot(Rinv * ei);
  }
  return total;
}

inline double poisson_cond_loglik(const Eigen::VectorXd& y, const ScoreDesign& design,
                                  const Parameters& params, const Eigen::VectorXd& b) {
  const Eigen::VectorXd eta = design.X * params.beta + design.Z * b;
  double total = 0.0;
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    if (!detail::is_count(y[k]))
      throw DomainError("Poisson response " + std::to_string(y[k]) +
                        " is not a non-negative integer count");
    total += y[k] * eta[k] - std::exp(eta[k]) - detail::log_factorial(y[k]);
  }
  return total;
}

// r holds 1 (home win) or 0 (away win).
inline double binary_cond_loglik(const Eigen::VectorXd& r, const BinaryDesign& design,
                                 const Parameters& params, const Eigen::VectorXd& b) {
  const Eigen::VectorXd eta = design.W * params.alpha + design.S * b;
  double total = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i)
    total += log_norm_cdf(r[i] > 0.5 ? eta[i] : -eta[i]);
  return total;
}

// log N(b; 0, G) using the block structure of G; b is in `layout` order.
inline double prior_loglik(const Eigen::VectorXd& b, const Parameters& params,
                           const EffectLayout& layout) {
  const auto m = static_cast<Eigen::Index>(layout.per_team());
  double total = 0.0;
  if (m > 0 && layout.teams() > 0) {
    const auto [Ginv, log_det] = detail::invert_team_covariance(active_block(params.Gstar, layout));
    for (std::size_t j = 0; j < layout.teams(); ++j) {
      const auto bj = b.segment(static_cast<Eigen::Index>(j) * m, m);
      total += -0.5 * static_cast<double>(m) * log_two_pi - 0.5 * log_det -
               0.5 * bj.dot(Ginv * bj);
    }
  }
  if (layout.game_effects() > 0) {
    if (!(params.sigma2_g > 0)) throw NumericError("game-effect variance must be positive");
    const double log_s2 = std::log(params.sigma2_g);
    for (std::size_t i = 0; i < layout.game_effects(); ++i) {
      const double a = b[static_cast<Eigen::Index>(layout.game_index(i))];
      total += -0.5 * (log_two_pi + log_s2) - 0.5 * a * a / params.sigma2_g;
    }
  }
  return total;
}

// Everything a fit needs that does not change across iterations: designs
// compressed to the active effects, responses, and identifiability of the
// fixed effects.
struct ModelData {
  ModelSpec spec;
  EffectLayout layout;
  std::size_t n = 0;
  std::size_t p = 0;
  ScoreDesign score;
  BinaryDesign binary;
  Eigen::VectorXd y;
  Eigen::VectorXd r;
  std::array<bool, 3> beta_identified{false, false, false};
  bool alpha_identified = false;

  static ModelData build(const Dataset& data, const ModelSpec& spec) {
    ModelData md;
    md.spec = spec;
    md.n = data.n();
    md.p = data.p();
    md.layout = EffectLayout::for_method(spec.method, data.p(), data.n());
    const SparseMatrix sel = md.layout.selection();
    if (spec.scores()) {
      md.score = build_score_design(data, spec.game_effect());
      md.score.Z = SparseRowMatrix(md.score.Z * sel);
      md.y = score_responses(data);
      for (std::size_t i = 0; i < md.n; ++i) {
        const bool neutral = data.game(i).neutral_site;
        md.beta_identified[neutral ? 2 : 0] = true;
        md.beta_identified[neutral ? 2 : 1] = true;
      }
    }
    if (spec.binary()) {
      md.binary = build_binary_design(data, spec.game_effect());
      md.binary.S = SparseRowMatrix(md.binary.S * sel);
      md.r = binary_outcomes(data);
      md.alpha_identified = md.binary.W.sum() > 0;
    }
    return md;
  }
};

struct PenalizedObjective {
  double value = 0.0;
  Eigen::VectorXd gradient;
  SparseMatrix negative_hessian;
};

namespace detail {

using Triplets = std::vector<Eigen::Triplet<double>>;

inline void add_outer(Triplets& t, const SparseRowMatrix& M, Eigen::Index r1, Eigen::Index r2,
                      double w) {
  for (SparseRowMatrix::InnerIterator a(M, r1); a; ++a)
    for (SparseRowMatrix::InnerIterator c(M, r2); c; ++c)
      t.emplace_back(static_cast<int>(a.col()), static_cast<int>(c.col()),
                     w * a.value() * c.value());
}

inline void add_row(Eigen::VectorXd& g, const SparseRowMatrix& M, Eigen::Index r, double w) {
  for (SparseRowMatrix::InnerIterator a(M, r); a; ++a) g[a.col()] += w * a.value();
}

}  // namespace detail

// h(b) = conditional log-likelihood(s) + log prior, with the exact gradient
// and negative Hessian in b. Terms are accumulated in game order.
inline PenalizedObjective joint_penalized_loglik(const ModelData& md, const Parameters& params,
                                                 const Eigen::VectorXd& b,
                                                 bool with_curvature = true) {
  const auto q = static_cast<Eigen::Index>(md.layout.dim());
  PenalizedObjective out;
  out.gradient = Eigen::VectorXd::Zero(q);
  detail::Triplets trip;
  if (with_curvature) trip.reserve(static_cast<std::size_t>(16 * md.n + 9 * md.p + q));

  if (md.spec.family() == ScoreFamily::normal && md.n > 0) {
    const auto [Rinv, log_det] = detail::invert_error_covariance(params.Rstar);
    const Eigen::VectorXd e = md.y - md.score.X * params.beta - md.score.Z * b;
    const auto& Z = md.score.Z;
    for (std::size_t i = 0; i < md.n; ++i) {
      const auto rh = static_cast<Eigen::Index>(2 * i);
      const Eigen::Vector2d ei(e[rh], e[rh + 1]);
      const Eigen::Vector2d u = Rinv * ei;
      out.value += -log_two_pi - 0.5 * log_det - 0.5 * ei.dot(u);
      detail::add_row(out.gradient, Z, rh, u[0]);
      detail::add_row(out.gradient, Z, rh + 1, u[1]);
      if (with_curvature)
        for (int s = 0; s < 2; ++s)
          for (int t = 0; t < 2; ++t) detail::add_outer(trip, Z, rh + s, rh + t, Rinv(s, t));
    }
  } else if (md.spec.family() == ScoreFamily::poisson && md.n > 0) {
    const Eigen::VectorXd eta = md.score.X * params.beta + md.score.Z * b;
    const auto& Z = md.score.Z;
    for (Eigen::Index k = 0; k < eta.size(); ++k) {
      const double mu = std::exp(eta[k]);
      out.value += md.y[k] * eta[k] - mu - detail::log_factorial(md.y[k]);
      detail::add_row(out.gradient, Z, k, md.y[k] - mu);
      if (with_curvature) detail::add_outer(trip, Z, k, k, mu);
    }
  }

  if (md.spec.binary() && md.n > 0) {
    const Eigen::VectorXd eta = md.binary.W * params.alpha + md.binary.S * b;
    const auto& S = md.binary.S;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double sign = md.r[i] > 0.5 ? 1.0 : -1.0;
      const double x = sign * eta[i];
      const double lambda = inverse_mills(x);
      out.value += log_norm_cdf(x);
      detail::add_row(out.gradient, S, i, sign * lambda);
      if (with_curvature) detail::add_outer(trip, S, i, i, lambda * (lambda + x));
    }
  }

  const auto& layout = md.layout;
  const auto m = static_cast<Eigen::Index>(layout.per_team());
  if (m > 0 && layout.teams() > 0) {
    const auto [Ginv, log_det] = detail::invert_team_covariance(active_block(params.Gstar, layout));
    for (std::size_t j = 0; j < layout.teams(); ++j) {
      const Eigen::Index o = static_cast<Eigen::Index>(j) * m;
      const auto bj = b.segment(o, m);
      const Eigen::VectorXd gb = Ginv * bj;
      out.value += -0.5 * static_cast<double>(m) * log_two_pi - 0.5 * log_det - 0.5 * bj.dot(gb);
      out.gradient.segment(o, m) -= gb;
      if (with_curvature)
        for (Eigen::Index a = 0; a < m; ++a)
          for (Eigen::Index c = 0; c < m; ++c)
            trip.emplace_back(static_cast<int>(o + a), static_cast<int>(o + c), Ginv(a, c));
    }
  }
  if (layout.game_effects() > 0) {
    if (!(params.sigma2_g > 0)) throw NumericError("game-effect variance must be positive");
    const double log_s2 = std::log(params.sigma2_g);
    for (std::size_t i = 0; i < layout.game_effects(); ++i) {
      const auto k = static_cast<Eigen::Index>(layout.game_index(i));
      out.value += -0.5 * (log_two_pi + log_s2) - 0.5 * b[k] * b[k] / params.sigma2_g;
      out.gradient[k] -= b[k] / params.sigma2_g;
      if (with_curvature)
        trip.emplace_back(static_cast<int>(k), static_cast<int>(k), 1.0 / params.sigma2_g);
    }
  }

  if (with_curvature) {
    out.negative_hessian.resize(q, q);
    out.negative_hessian.setFromTriplets(trip.begin(), trip.end());
  }
  return out;
}

}  // namespace mvglmm
