#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "mvglmm/data_model.hpp"
#include "mvglmm/design.hpp"
#include "mvglmm/errors.hpp"
#include "mvglmm/likelihoods.hpp"
#include "mvglmm/model_spec.hpp"
#include "mvglmm/normal_math.hpp"

namespace mvglmm {

using CurvatureFactor = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;

// Mode of the penalized log-likelihood h and the curvature there. b is in
// the compressed layout; full() gives the [team (o,d,w)..., games] vector.
struct RandomEffectsState {
  EffectLayout layout;
  Eigen::VectorXd b;
  SparseMatrix negative_curvature;
  double h = 0.0;
  double log_det = 0.0;  // log |negative_curvature|
  int newton_iterations = 0;
  int ridge_escalations = 0;
  std::shared_ptr<const CurvatureFactor> factor;

  Eigen::VectorXd full() const { return layout.expand(b); }
};

// Newton failed to reach the gradient tolerance; carries the last iterate.
class ModeNotFound : public NumericError {
 public:
  ModeNotFound(const std::string& what, Eigen::VectorXd last)
      : NumericError(what), last_iterate(std::move(last)) {}
  Eigen::VectorXd last_iterate;
};

namespace detail {

inline double log_det_from_factor(const CurvatureFactor& f) {
  const SparseMatrix& L = f.matrixL().nestedExpression();
  double s = 0.0;
  for (Eigen::Index k = 0; k < L.outerSize(); ++k) s += std::log(L.coeff(k, k));
  return 2.0 * s;
}

// Factorizes A, adding a ridge lambda*I (1e-6, x10 each retry) if A is not
// positive-definite. Returns the number of escalations used.
inline int factorize_with_ridge(CurvatureFactor& f, const SparseMatrix& A) {
  f.compute(A);
  if (f.info() == Eigen::Success) return 0;
  SparseMatrix I(A.rows(), A.cols());
  I.setIdentity();
  double lambda = 1e-6;
  for (int k = 1; k <= 20; ++k, lambda *= 10.0) {
    f.compute(A + lambda * I);
    if (f.info() == Eigen::Success) return k;
  }
  throw NumericError("curvature factorization failed even with ridge stabilization");
}

}  // namespace detail

// Newton's method on h with step halving. Converges when the max-norm of the
// gradient drops below spec.newton_tolerance.
inline RandomEffectsState find_mode(const Parameters& params, const ModelData& md,
                                    const Eigen::VectorXd& b_init) {
  const auto q = static_cast<Eigen::Index>(md.layout.dim());
  if (b_init.size() != q) throw ValidationError("initial random effects have the wrong length");
  if (!b_init.allFinite()) throw ValidationError("initial random effects are not finite");

  RandomEffectsState st;
  st.layout = md.layout;
  Eigen::VectorXd b = b_init;
  PenalizedObjective obj = joint_penalized_loglik(md, params, b);
  auto factor = std::make_shared<CurvatureFactor>();
  constexpr double eps = std::numeric_limits<double>::epsilon();

  bool converged = false;
  for (int it = 0; it < md.spec.max_newton_iterations; ++it) {
    const double gmax = q > 0 ? obj.gradient.cwiseAbs().maxCoeff() : 0.0;
    if (gmax < md.spec.newton_tolerance) {
      converged = true;
      break;
    }
    st.ridge_escalations += detail::factorize_with_ridge(*factor, obj.negative_hessian);
    const Eigen::VectorXd step = factor->solve(obj.gradient);
    // Newton decrement at round-off level: with a near-singular G* the prior
    // precision is large enough that the gradient cannot reach the absolute
    // tolerance, yet the remaining ascent is negligible. One last full step
    // still removes the residual error in b (quadratic convergence); it is
    // kept unless h drops by more than round-off.
    if (obj.gradient.dot(step) <= 100 * eps * (1.0 + std::abs(obj.value))) {
      Eigen::VectorXd cand = b + step;
      PenalizedObjective next = joint_penalized_loglik(md, params, cand);
      if (std::isfinite(next.value) && next.value >= obj.value - 64 * eps * (1.0 + std::abs(obj.value))) {
        b = std::move(cand);
        obj = std::move(next);
        ++st.newton_iterations;
      }
      converged = true;
      break;
    }
    ++st.newton_iterations;

    double t = 1.0;
    bool accepted = false;
    for (int halving = 0; halving <= 30; ++halving, t *= 0.5) {
      Eigen::VectorXd cand = b + t * step;
      PenalizedObjective next = joint_penalized_loglik(md, params, cand);
      const bool up = next.value >= obj.value;
      // Round-off tie: accept only if the gradient shrinks.
      const bool tie = std::abs(next.value - obj.value) <= 64 * eps * (1.0 + std::abs(obj.value)) &&
                       next.gradient.cwiseAbs().maxCoeff() < gmax;
      if (std::isfinite(next.value) && (up || tie)) {
        b = std::move(cand);
        obj = std::move(next);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // No representable ascent remains. With an ill-conditioned G* the
      // round-off in h grows with its condition number, so accept when the
      // predicted gain is negligible relative to |h|.
      if (obj.gradient.dot(step) <= 1e-8 * (1.0 + std::abs(obj.value))) {
        converged = true;
        break;
      }
      throw ModeNotFound("line search failed to increase the penalized log-likelihood", b);
    }
  }
  if (!converged) {
    const double gmax = q > 0 ? obj.gradient.cwiseAbs().maxCoeff() : 0.0;
    if (gmax >= md.spec.newton_tolerance)
      throw ModeNotFound("Newton mode search did not converge in " +
                             std::to_string(md.spec.max_newton_iterations) + " iterations",
                         b);
  }

  factor->compute(obj.negative_hessian);
  if (factor->info() != Eigen::Success)
    throw NumericError("negative curvature is not positive-definite at the mode");
  st.b = std::move(b);
  st.h = obj.value;
  st.negative_curvature = std::move(obj.negative_hessian);
  st.log_det = q > 0 ? detail::log_det_from_factor(*factor) : 0.0;
  st.factor = std::move(factor);
  return st;
}

// First-order Laplace approximation at an already-found mode.
inline double laplace_marginal_loglik(const RandomEffectsState& st) {
  return st.h + 0.5 * static_cast<double>(st.b.size()) * log_two_pi - 0.5 * st.log_det;
}

inline double laplace_marginal_loglik(const Parameters& params, const ModelData& md,
                                      const Eigen::VectorXd* warm_start = nullptr) {
  const Eigen::VectorXd b0 =
      warm_start ? *warm_start : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(md.layout.dim()));
  return laplace_marginal_loglik(find_mode(params, md, b0));
}

// Selected entries of the inverse negative curvature: all columns for the
// team effects (dim x team_dim) and the diagonal for game effects.
struct PosteriorBlocks {
  Eigen::MatrixXd team_columns;
  Eigen::VectorXd game_variances;

  Eigen::MatrixXd team_block(std::size_t team, std::size_t m) const {
    const auto o = static_cast<Eigen::Index>(team * m);
    const auto mm = static_cast<Eigen::Index>(m);
    return team_columns.block(o, o, mm, mm);
  }
};

// Solves the stored factorization against unit vectors, in batches.
inline PosteriorBlocks posterior_blocks(const RandomEffectsState& st) {
  const auto q = static_cast<Eigen::Index>(st.layout.dim());
  const auto qt = static_cast<Eigen::Index>(st.layout.team_dim());
  const auto ng = static_cast<Eigen::Index>(st.layout.game_effects());
  constexpr Eigen::Index batch = 128;
  PosteriorBlocks out;
  out.team_columns.resize(q, qt);
  out.game_variances.resize(ng);
  if (q == 0) return out;
  for (Eigen::Index c0 = 0; c0 < qt; c0 += batch) {
    const Eigen::Index w = std::min(batch, qt - c0);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(q, w);
    for (Eigen::Index k = 0; k < w; ++k) rhs(c0 + k, k) = 1.0;
    out.team_columns.middleCols(c0, w) = st.factor->solve(rhs);
  }
  for (Eigen::Index c0 = 0; c0 < ng; c0 += batch) {
    const Eigen::Index w = std::min(batch, ng - c0);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(q, w);
    for (Eigen::Index k = 0; k < w; ++k) rhs(qt + c0 + k, k) = 1.0;
    const Eigen::MatrixXd sol = st.factor->solve(rhs);
    for (Eigen::Index k = 0; k < w; ++k) out.game_variances[c0 + k] = sol(qt + c0 + k, k);
  }
  return out;
}

struct CovarianceUpdate {
  Eigen::Matrix3d Gstar = Eigen::Matrix3d::Zero();
  double sigma2_g = 0.0;
};

// G*_new = mean_j (b_j b_j' + V_j); sigma2_g,new = mean_i (a_i^2 + v_i).
inline CovarianceUpdate em_update_G(const RandomEffectsState& st, const PosteriorBlocks& post,
                                    const Parameters& params, const ModelSpec& spec) {
  const auto& layout = st.layout;
  const std::size_t m = layout.per_team();
  CovarianceUpdate out;
  out.Gstar = params.Gstar;
  out.sigma2_g = params.sigma2_g;
  if (layout.teams() > 0 && m > 0) {
    const auto mm = static_cast<Eigen::Index>(m);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(mm, mm);
    for (std::size_t j = 0; j < layout.teams(); ++j) {
      const Eigen::VectorXd bj = st.b.segment(static_cast<Eigen::Index>(j * m), mm);
      acc += bj * bj.transpose() + post.team_block(j, m);
    }
    acc /= static_cast<double>(layout.teams());
    acc = 0.5 * (acc + acc.transpose()).eval();
    out.Gstar = embed_block(acc, layout);
    if (spec.independent_blocks) {
      for (int k = 0; k < 2; ++k) {
        out.Gstar(k, 2) = 0.0;
        out.Gstar(2, k) = 0.0;
      }
    }
  }
  if (layout.game_effects() > 0) {
    double acc = 0.0;
    for (std::size_t i = 0; i < layout.game_effects(); ++i) {
      const double a = st.b[static_cast<Eigen::Index>(layout.game_index(i))];
      acc += a * a + post.game_variances[static_cast<Eigen::Index>(i)];
    }
    out.sigma2_g = acc / static_cast<double>(layout.game_effects());
  }
  return out;
}

// R*_new = mean_i (e_i e_i' + Z_i V Z_i'), residuals taken at `beta`.
inline Eigen::Matrix2d em_update_R(const RandomEffectsState& st, const PosteriorBlocks& post,
                                   const Eigen::Vector3d& beta, const ModelData& md) {
  if (md.spec.family() != ScoreFamily::normal)
    throw ValidationError("error covariance is only estimated for normal score models");
  if (md.n == 0) return Eigen::Matrix2d::Identity();
  const auto& Z = md.score.Z;
  const Eigen::VectorXd e = md.y - md.score.X * beta - Z * st.b;
  Eigen::Matrix2d acc = Eigen::Matrix2d::Zero();
  for (std::size_t i = 0; i < md.n; ++i) {
    const auto rh = static_cast<Eigen::Index>(2 * i);
    const Eigen::Vector2d ei(e[rh], e[rh + 1]);
    acc += ei * ei.transpose();
    for (int s = 0; s < 2; ++s)
      for (int t = 0; t < 2; ++t)
        for (SparseRowMatrix::InnerIterator a(Z, rh + s); a; ++a)
          for (SparseRowMatrix::InnerIterator c(Z, rh + t); c; ++c)
            acc(s, t) += a.value() * c.value() * post.team_columns(a.col(), c.col());
  }
  acc /= static_cast<double>(md.n);
  return 0.5 * (acc + acc.transpose());
}

struct FixedEffectsUpdate {
  Eigen::Vector3d beta = Eigen::Vector3d::Zero();
  double alpha = 0.0;
};

// beta: GLS at b (normal) or one Fisher-scoring step at b (Poisson).
// alpha: one Fisher-scoring step of the probit home effect at b.
// Unidentified coefficients are held at zero.
inline FixedEffectsUpdate update_fixed_effects(const RandomEffectsState& st,
                                               const Parameters& params, const ModelData& md) {
  FixedEffectsUpdate out;
  out.beta = params.beta;
  out.alpha = params.alpha;
  for (int c = 0; c < 3; ++c)
    if (!md.beta_identified[c]) out.beta[c] = 0.0;
  if (!md.alpha_identified) out.alpha = 0.0;

  auto x_col = [&](Eigen::Index row) {
    SparseRowMatrix::InnerIterator it(md.score.X, row);
    return static_cast<int>(it.col());
  };

  if (md.spec.family() == ScoreFamily::normal && md.n > 0) {
    const auto [Rinv, log_det] = detail::invert_error_covariance(params.Rstar);
    (void)log_det;
    const Eigen::VectorXd resid = md.y - md.score.Z * st.b;
    Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < md.n; ++i) {
      const auto rh = static_cast<Eigen::Index>(2 * i);
      const int cols[2] = {x_col(rh), x_col(rh + 1)};
      for (int s = 0; s < 2; ++s)
        for (int t = 0; t < 2; ++t) {
          A(cols[s], cols[t]) += Rinv(s, t);
          rhs[cols[s]] += Rinv(s, t) * resid[rh + t];
        }
    }
    std::vector<int> idx;
    for (int c = 0; c < 3; ++c)
      if (md.beta_identified[c]) idx.push_back(c);
    const auto k = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd Ak(k, k);
    Eigen::VectorXd rk(k);
    for (Eigen::Index a = 0; a < k; ++a) {
      rk[a] = rhs[idx[a]];
      for (Eigen::Index c = 0; c < k; ++c) Ak(a, c) = A(idx[a], idx[c]);
    }
    const Eigen::VectorXd sol = Ak.ldlt().solve(rk);
    for (Eigen::Index a = 0; a < k; ++a) out.beta[idx[a]] = sol[a];
  } else if (md.spec.family() == ScoreFamily::poisson && md.n > 0) {
    const Eigen::VectorXd eta = md.score.X * params.beta + md.score.Z * st.b;
    Eigen::Vector3d score = Eigen::Vector3d::Zero();
    Eigen::Vector3d info = Eigen::Vector3d::Zero();
    for (Eigen::Index r = 0; r < eta.size(); ++r) {
      const double mu = std::exp(eta[r]);
      const int c = x_col(r);
      score[c] += md.y[r] - mu;
      info[c] += mu;
    }
    for (int c = 0; c < 3; ++c)
      if (md.beta_identified[c] && info[c] > 0) out.beta[c] = params.beta[c] + score[c] / info[c];
  }

  if (md.spec.binary() && md.alpha_identified) {
    const Eigen::VectorXd eta = md.binary.W * params.alpha + md.binary.S * st.b;
    double score = 0.0;
    double info = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double w = md.binary.W[i];
      if (w == 0.0) continue;
      const double sign = md.r[i] > 0.5 ? 1.0 : -1.0;
      score += w * sign * inverse_mills(sign * eta[i]);
      // phi^2 / (Phi (1 - Phi)), evaluated in logs for the tails.
      info += w * w *
              std::exp(2.0 * norm_log_pdf(eta[i]) - log_norm_cdf(eta[i]) - log_norm_cdf(-eta[i]));
    }
    if (info > 0) out.alpha = params.alpha + score / info;
  }
  return out;
}

// Free parameters in reporting order.
struct FreeParameter {
  enum class Kind { beta, alpha, R, G, sigma2_g };
  std::string name;
  Kind kind;
  int i = 0;
  int j = 0;
};

inline std::vector<FreeParameter> free_parameters(const ModelData& md) {
  using K = FreeParameter::Kind;
  std::vector<FreeParameter> out;
  if (md.spec.scores()) {
    if (md.beta_identified[1]) out.push_back({"LocationAway", K::beta, 1, 0});
    if (md.beta_identified[0]) out.push_back({"LocationHome", K::beta, 0, 0});
    if (md.beta_identified[2]) out.push_back({"LocationNeutral Site", K::beta, 2, 0});
  }
  if (md.spec.binary() && md.alpha_identified) out.push_back({"Binary mean", K::alpha, 0, 0});
  if (md.spec.family() == ScoreFamily::normal) {
    out.push_back({"R[1,1]", K::R, 0, 0});
    out.push_back({"R[2,1]", K::R, 1, 0});
    out.push_back({"R[2,2]", K::R, 1, 1});
  }
  const auto& comps = md.layout.components();
  // Column-major lower triangle, indexed within the active block.
  for (std::size_t c = 0; c < comps.size(); ++c)
    for (std::size_t r = c; r < comps.size(); ++r) {
      const int gi = static_cast<int>(comps[r]);
      const int gj = static_cast<int>(comps[c]);
      if (md.spec.independent_blocks && (gi == 2) != (gj == 2)) continue;
      out.push_back({"G[" + std::to_string(r + 1) + "," + std::to_string(c + 1) + "]", K::G, gi, gj});
    }
  if (md.spec.game_effect()) out.push_back({"Game variance", K::sigma2_g, 0, 0});
  return out;
}

inline Eigen::VectorXd pack_parameters(const Parameters& p, const std::vector<FreeParameter>& list) {
  using K = FreeParameter::Kind;
  Eigen::VectorXd th(static_cast<Eigen::Index>(list.size()));
  for (std::size_t k = 0; k < list.size(); ++k) {
    const auto& f = list[k];
    double v = 0.0;
    switch (f.kind) {
      case K::beta: v = p.beta[f.i]; break;
      case K::alpha: v = p.alpha; break;
      case K::R: v = p.Rstar(f.i, f.j); break;
      case K::G: v = p.Gstar(f.i, f.j); break;
      case K::sigma2_g: v = p.sigma2_g; break;
    }
    th[static_cast<Eigen::Index>(k)] = v;
  }
  return th;
}

inline Parameters unpack_parameters(const Eigen::VectorXd& th,
                                    const std::vector<FreeParameter>& list, Parameters base) {
  using K = FreeParameter::Kind;
  for (std::size_t k = 0; k < list.size(); ++k) {
    const auto& f = list[k];
    const double v = th[static_cast<Eigen::Index>(k)];
    switch (f.kind) {
      case K::beta: base.beta[f.i] = v; break;
      case K::alpha: base.alpha = v; break;
      case K::R:
        base.Rstar(f.i, f.j) = v;
        base.Rstar(f.j, f.i) = v;
        break;
      case K::G:
        base.Gstar(f.i, f.j) = v;
        base.Gstar(f.j, f.i) = v;
        break;
      case K::sigma2_g: base.sigma2_g = v; break;
    }
  }
  return base;
}

// Covariance to correlation; zero-variance rows give zero correlations.
inline Eigen::MatrixXd covariance_to_correlation(const Eigen::MatrixXd& C) {
  Eigen::MatrixXd out = C;
  for (Eigen::Index a = 0; a < C.rows(); ++a)
    for (Eigen::Index c = 0; c < C.cols(); ++c) {
      const double d = std::sqrt(C(a, a) * C(c, c));
      out(a, c) = a == c ? 1.0 : (d > 0 ? C(a, c) / d : 0.0);
    }
  return out;
}

struct HessianDiagnostics {
  bool available = false;         // every finite-difference evaluation succeeded
  bool positive_definite = false;
  bool invertible = false;
  // sqrt(largest / smallest eigenvalue) of the correlation matrix of the inverse Hessian.
  std::optional<double> condition_number;
  bool near_singular = false;
  std::vector<std::string> warnings;
};

struct ParameterHessian {
  std::vector<std::string> names;
  Eigen::MatrixXd hessian;  // of the negative Laplace marginal log-likelihood
  HessianDiagnostics diagnostics;
};

// Above this the inverse-Hessian correlation matrix is reported as
// near-singular. Condition indices (square-root eigenvalue ratios) above 30
// are the conventional mark of strong collinearity.
inline constexpr double near_singular_condition = 30.0;

struct FitDiagnostics {
  bool converged = false;
  int em_iterations = 0;
  int newton_iterations = 0;
  int ridge_escalations = 0;
  double final_parameter_change = 0.0;
  std::string approximation = "first-order Laplace";
  std::vector<double> loglik_trace;  // marginal log-likelihood at each EM iterate
  std::vector<std::string> warnings;
  std::array<bool, 3> beta_fixed_at_zero{false, false, false};
  bool alpha_fixed_at_zero = false;
  std::optional<HessianDiagnostics> hessian;
};

struct FitResult {
  ModelSpec spec;
  Parameters params;
  RandomEffectsState mode;
  double marginal_loglik = 0.0;
  std::vector<std::string> teams;
  std::vector<std::size_t> games_per_team;
  Eigen::MatrixXd ratings;  // p x 3 (offense, defense, win); zero where inactive
  Eigen::MatrixXd G;        // active block of Gstar
  Eigen::MatrixXd G_cor;
  std::optional<Eigen::Matrix2d> R;
  std::optional<Eigen::Matrix2d> R_cor;
  std::vector<std::string> parameter_names;
  Eigen::VectorXd parameter_values;
  std::optional<Eigen::MatrixXd> hessian;
  FitDiagnostics diagnostics;

  bool has_effect(Effect e) const {
    return e == Effect::win ? has_binary(spec.method) : has_scores(spec.method);
  }
};

namespace detail {

inline double mean_or(const std::vector<double>& v, double fallback) {
  if (v.empty()) return fallback;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

// beta from location means (log means for Poisson), alpha = 0,
// G* = 0.25 I on the active block, sigma2_g = 0.1, R* = covariance of the
// mean-removed (home, away) responses.
inline Parameters initial_parameters(const ModelData& md) {
  Parameters p;
  if (md.spec.scores() && md.n > 0) {
    std::vector<double> by_col[3];
    for (Eigen::Index r = 0; r < md.y.size(); ++r) {
      SparseRowMatrix::InnerIterator it(md.score.X, r);
      by_col[it.col()].push_back(md.y[r]);
    }
    for (int c = 0; c < 3; ++c) {
      const double m = detail::mean_or(by_col[c], 0.0);
      if (md.spec.family() == ScoreFamily::poisson)
        p.beta[c] = by_col[c].empty() ? 0.0 : std::log(std::max(m, 1e-2));
      else
        p.beta[c] = m;
    }
    if (md.spec.family() == ScoreFamily::normal) {
      const Eigen::VectorXd e = md.y - md.score.X * p.beta;
      Eigen::Matrix2d C = Eigen::Matrix2d::Zero();
      for (std::size_t i = 0; i < md.n; ++i) {
        const Eigen::Vector2d ei(e[static_cast<Eigen::Index>(2 * i)],
                                 e[static_cast<Eigen::Index>(2 * i + 1)]);
        C += ei * ei.transpose();
      }
      C /= static_cast<double>(md.n);
      const double det = C(0, 0) * C(1, 1) - C(0, 1) * C(0, 1);
      if (C(0, 0) > 0 && det > 1e-12 * C(0, 0) * C(1, 1))
        p.Rstar = C;
      else
        p.Rstar = Eigen::Matrix2d::Identity() * std::max(0.5 * (C(0, 0) + C(1, 1)), 1.0);
    }
  }
  const auto m = static_cast<Eigen::Index>(md.layout.per_team());
  p.Gstar = embed_block(0.25 * Eigen::MatrixXd::Identity(m, m), md.layout);
  p.sigma2_g = md.spec.game_effect() ? 0.1 : 0.0;
  p.alpha = 0.0;
  return p;
}

inline double relative_change(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k)
    worst = std::max(worst, std::abs(a[k] - b[k]) / (1.0 + std::abs(a[k])));
  return worst;
}

inline void validate_fit_inputs(const Dataset& data, const ModelSpec& spec) {
  spec.validate();
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto& g = data.game(i);
    if (spec.scores()) {
      if (!g.home_response || !g.away_response)
        throw ValidationError("game '" + g.game_id + "' lacks the responses method " +
                              std::string(to_string(spec.method)) + " requires");
      if (spec.family() == ScoreFamily::poisson &&
          (!detail::is_count(*g.home_response) || !detail::is_count(*g.away_response)))
        throw DomainError("game '" + g.game_id +
                          "': Poisson responses must be non-negative integer counts");
    }
    if (spec.binary() && !g.binary_outcome)
      throw ValidationError("game '" + g.game_id + "' lacks the binary outcome method " +
                            std::string(to_string(spec.method)) + " requires");
  }
}

inline ParameterHessian parameter_hessian(const FitResult& fit, const ModelData& md);

namespace detail {

inline void finalize_fit(FitResult& res, const Dataset& data, const ModelData& md) {
  const auto full = res.mode.full();
  res.ratings = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.p()), 3);
  for (std::size_t j = 0; j < data.p(); ++j)
    for (int c = 0; c < 3; ++c)
      res.ratings(static_cast<Eigen::Index>(j), c) =
          full[static_cast<Eigen::Index>(team_column(j, static_cast<Effect>(c)))];
  res.G = active_block(res.params.Gstar, md.layout);
  res.G_cor = covariance_to_correlation(res.G);
  if (md.spec.family() == ScoreFamily::normal) {
    res.R = res.params.Rstar;
    res.R_cor = covariance_to_correlation(res.params.Rstar);
  }
  const auto list = free_parameters(md);
  for (const auto& f : list) res.parameter_names.push_back(f.name);
  res.parameter_values = pack_parameters(res.params, list);
}

}  // namespace detail

// One EM map evaluation: mode at `params`, then the fixed-effect and
// covariance updates. `loglik` is the Laplace marginal at `params`.
struct EmStep {
  Parameters next;
  double loglik = 0.0;
  Eigen::VectorXd mode;
  int newton_iterations = 0;
  int ridge_escalations = 0;
};

inline EmStep em_step(const Parameters& params, const ModelData& md, const Eigen::VectorXd& b_warm) {
  const RandomEffectsState st = find_mode(params, md, b_warm);
  EmStep out;
  out.loglik = laplace_marginal_loglik(st);
  out.newton_iterations = st.newton_iterations;
  out.ridge_escalations = st.ridge_escalations;
  const PosteriorBlocks post = posterior_blocks(st);
  out.next = params;
  const FixedEffectsUpdate fe = update_fixed_effects(st, params, md);
  out.next.beta = fe.beta;
  out.next.alpha = fe.alpha;
  const CovarianceUpdate cu = em_update_G(st, post, params, md.spec);
  out.next.Gstar = cu.Gstar;
  out.next.sigma2_g = cu.sigma2_g;
  if (md.spec.family() == ScoreFamily::normal)
    out.next.Rstar = em_update_R(st, post, out.next.beta, md);
  out.mode = st.b;
  return out;
}

inline bool parameters_feasible(const Parameters& p, const ModelData& md) {
  if (!p.beta.allFinite() || !std::isfinite(p.alpha)) return false;
  if (md.layout.per_team() > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(active_block(p.Gstar, md.layout));
    if (llt.info() != Eigen::Success) return false;
  }
  if (md.spec.family() == ScoreFamily::normal) {
    Eigen::LLT<Eigen::Matrix2d> llt(p.Rstar);
    if (llt.info() != Eigen::Success) return false;
  }
  if (md.spec.game_effect() && !(p.sigma2_g > 0)) return false;
  return true;
}

// Laplace-EM: alternate mode finding, fixed-effect updates and covariance
// M-steps until the relative parameter change drops below em_tolerance.
// With spec.accelerate, pairs of EM steps are extrapolated (SQUAREM, SqS3
// step length, adaptively bounded). An extrapolation is kept only if it does not lower the
// (Laplace) marginal log-likelihood below that of the plain step it
// replaces; otherwise the plain step is used.
inline FitResult fit(const Dataset& data, const ModelSpec& spec) {
  validate_fit_inputs(data, spec);
  const ModelData md = ModelData::build(data, spec);
  FitResult res;
  res.spec = spec;
  res.teams = data.teams();
  res.games_per_team = data.games_per_team();
  auto& diag = res.diagnostics;
  for (int c = 0; c < 3; ++c) diag.beta_fixed_at_zero[c] = spec.scores() && !md.beta_identified[c];
  diag.alpha_fixed_at_zero = spec.binary() && !md.alpha_identified;
  static const char* beta_names[3] = {"LocationHome", "LocationAway", "LocationNeutral Site"};
  for (int c = 0; c < 3; ++c)
    if (diag.beta_fixed_at_zero[c])
      diag.warnings.push_back(std::string(beta_names[c]) +
                              " is not identified by the data and is fixed at 0");
  if (diag.alpha_fixed_at_zero)
    diag.warnings.push_back("Binary mean is not identified (all games neutral) and is fixed at 0");

  const auto list = free_parameters(md);
  Parameters params = initial_parameters(md);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(md.layout.dim()));
  int decreases = 0;
  double worst_decrease = 0.0;

  auto record = [&](double ll) {
    if (!diag.loglik_trace.empty() && ll < diag.loglik_trace.back() - 1e-8) {
      ++decreases;
      worst_decrease = std::max(worst_decrease, diag.loglik_trace.back() - ll);
    }
    diag.loglik_trace.push_back(ll);
  };
  // Runs one EM map evaluation; true once the step is below tolerance.
  auto evaluate = [&](const Parameters& at, EmStep& out) {
    out = em_step(at, md, b);
    b = out.mode;
    diag.newton_iterations += out.newton_iterations;
    diag.ridge_escalations += out.ridge_escalations;
    ++diag.em_iterations;
    diag.final_parameter_change =
        relative_change(pack_parameters(at, list), pack_parameters(out.next, list));
    return diag.final_parameter_change < spec.em_tolerance;
  };

  EmStep s0, s1, s2;
  bool have_s0 = false;  // s0 already holds the EM step at `params`
  // Bound on the extrapolation length |a|: starts at a plain double step,
  // grows while maximal steps succeed and shrinks after a rejection.
  double step_max = 1.0;
  auto converge_at = [&](const EmStep& s) {
    params = s.next;
    diag.converged = true;
  };
  // A mode-finding failure on a plain EM step ends the iteration; the last
  // successfully evaluated parameters are returned, flagged non-converged.
  try {
    while (diag.em_iterations < spec.max_em_iterations) {
      if (!have_s0 && evaluate(params, s0)) {
        record(s0.loglik);
        converge_at(s0);
        break;
      }
      if (have_s0 && diag.final_parameter_change < spec.em_tolerance) {
        converge_at(s0);
        break;
      }
      if (!have_s0) record(s0.loglik);
      have_s0 = false;
      if (!spec.accelerate || diag.em_iterations >= spec.max_em_iterations) {
        params = s0.next;
        continue;
      }
      if (evaluate(s0.next, s1)) {
        record(s1.loglik);
        converge_at(s1);
        break;
      }
      record(s1.loglik);
      const Eigen::VectorXd t0 = pack_parameters(params, list);
      const Eigen::VectorXd t1 = pack_parameters(s0.next, list);
      const Eigen::VectorXd t2 = pack_parameters(s1.next, list);
      const Eigen::VectorXd r = t1 - t0;
      const Eigen::VectorXd v = t2 - t1 - r;
      double a = v.norm() > 0 ? -r.norm() / v.norm() : -1.0;
      a = std::clamp(a, -step_max, -1.0);
      const bool at_max = a <= -step_max;
      // a = -1 reproduces the plain double step; longer steps shrink toward
      // it until G*, R* and the game variance are admissible.
      Parameters trial = s1.next;
      for (int k = 0; k < 30 && a < -1.0; ++k) {
        trial = unpack_parameters(t0 - 2.0 * a * r + a * a * v, list, params);
        if (parameters_feasible(trial, md)) break;
        a = a < -1.0 + 1e-8 ? -1.0 : 0.5 * (a - 1.0);
        trial = s1.next;
      }
      if (diag.em_iterations >= spec.max_em_iterations) {
        params = s1.next;
        continue;
      }
      const Eigen::VectorXd b_keep = b;
      try {
        evaluate(trial, s2);
      } catch (const NumericError&) {
        b = b_keep;
        params = s1.next;
        step_max = std::max(1.0, step_max / 4.0);
        continue;
      }
      if (s2.loglik >= s1.loglik || a >= -1.0) {
        if (at_max && a <= -step_max) step_max *= 4.0;
        params = trial;
        s0 = std::move(s2);
        record(s0.loglik);
        have_s0 = true;
      } else {
        b = b_keep;
        params = s1.next;
        step_max = std::max(1.0, step_max / 4.0);
      }
    }
  } catch (const NumericError& e) {
    diag.warnings.push_back(std::string("EM stopped early: ") + e.what());
  }
  if (!diag.converged && have_s0 && diag.final_parameter_change < spec.em_tolerance)
    converge_at(s0);
  if (decreases > 0)
    diag.warnings.push_back("approximate marginal log-likelihood decreased in " +
                            std::to_string(decreases) + " EM iteration(s); largest drop " +
                            std::to_string(worst_decrease));
  if (!diag.converged)
    diag.warnings.push_back("EM did not converge within " + std::to_string(spec.max_em_iterations) +
                            " iterations");

  res.params = params;
  res.mode = find_mode(params, md, b);
  diag.newton_iterations += res.mode.newton_iterations;
  res.marginal_loglik = laplace_marginal_loglik(res.mode);
  record(res.marginal_loglik);
  detail::finalize_fit(res, data, md);

  if (spec.compute_hessian) {
    // Non-convergence is itself a common symptom of weak identification, so
    // the conditioning diagnostics are still reported at the last iterate.
    ParameterHessian ph = parameter_hessian(res, md);
    if (!diag.converged)
      ph.diagnostics.warnings.insert(ph.diagnostics.warnings.begin(),
                                     "Hessian evaluated at the last EM iterate; the fit did not converge");
    res.hessian = ph.hessian;
    for (const auto& w : ph.diagnostics.warnings) diag.warnings.push_back(w);
    diag.hessian = std::move(ph.diagnostics);
  }
  return res;
}

// Central finite-difference Hessian of -log L (Laplace) over the free
// parameters, step 1e-4 * max(1, |theta_k|), plus conditioning diagnostics.
inline ParameterHessian parameter_hessian(const FitResult& fit, const ModelData& md) {
  const auto list = free_parameters(md);
  const Eigen::VectorXd theta0 = pack_parameters(fit.params, list);
  const auto k = theta0.size();
  ParameterHessian out;
  for (const auto& f : list) out.names.push_back(f.name);
  out.hessian = Eigen::MatrixXd::Zero(k, k);
  auto& dg = out.diagnostics;

  const Eigen::VectorXd warm = fit.mode.b;
  auto f = [&](const Eigen::VectorXd& th) {
    return -laplace_marginal_loglik(unpack_parameters(th, list, fit.params), md, &warm);
  };
  Eigen::VectorXd step(k);
  for (Eigen::Index a = 0; a < k; ++a) step[a] = 1e-4 * std::max(1.0, std::abs(theta0[a]));

  try {
    const double f0 = f(theta0);
    for (Eigen::Index a = 0; a < k; ++a) {
      Eigen::VectorXd tp = theta0, tm = theta0;
      tp[a] += step[a];
      tm[a] -= step[a];
      out.hessian(a, a) = (f(tp) - 2.0 * f0 + f(tm)) / (step[a] * step[a]);
      for (Eigen::Index c = 0; c < a; ++c) {
        Eigen::VectorXd pp = theta0, pm = theta0, mp = theta0, mm = theta0;
        pp[a] += step[a]; pp[c] += step[c];
        pm[a] += step[a]; pm[c] -= step[c];
        mp[a] -= step[a]; mp[c] += step[c];
        mm[a] -= step[a]; mm[c] -= step[c];
        const double v = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * step[a] * step[c]);
        out.hessian(a, c) = v;
        out.hessian(c, a) = v;
      }
    }
    dg.available = true;
  } catch (const Error& e) {
    dg.warnings.push_back(std::string("Hessian unavailable: a finite-difference step left the "
                                      "parameter space (") +
                          e.what() + "); possible empirical underidentification");
    // The estimate lies within one step of the boundary (e.g. a singular
    // G*), the limiting case of an ill-conditioned Hessian.
    dg.condition_number = std::numeric_limits<double>::infinity();
    dg.near_singular = true;
    return out;
  }

  if (k == 0) return out;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.hessian);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  dg.positive_definite = lo > 0;
  dg.invertible = lo > 0 && lo > hi * 1e-14;
  // An indefinite or singular Hessian has no inverse-Hessian correlation
  // matrix; its condition number is reported as the limiting value +inf.
  if (!dg.positive_definite) {
    dg.condition_number = std::numeric_limits<double>::infinity();
    dg.near_singular = true;
    dg.warnings.push_back("Hessian is not positive-definite (smallest eigenvalue " +
                          std::to_string(lo) + "); the model may be empirically underidentified");
    return out;
  }
  if (!dg.invertible) {
    dg.condition_number = std::numeric_limits<double>::infinity();
    dg.near_singular = true;
    dg.warnings.push_back("Hessian is numerically singular; the model may be empirically "
                          "underidentified");
    return out;
  }
  const Eigen::MatrixXd cov =
      eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
      eig.eigenvectors().transpose();
  const Eigen::MatrixXd cor = covariance_to_correlation(cov);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ce(cor, Eigen::EigenvaluesOnly);
  const double clo = ce.eigenvalues().minCoeff();
  const double chi = ce.eigenvalues().maxCoeff();
  dg.condition_number = clo > 0 ? std::sqrt(chi / clo) : std::numeric_limits<double>::infinity();
  if (*dg.condition_number > near_singular_condition) {
    dg.near_singular = true;
    dg.warnings.push_back("condition number " + std::to_string(*dg.condition_number) +
                          " of the inverse-Hessian correlation matrix suggests empirical "
                          "underidentification");
  }
  return out;
}

}  // namespace mvglmm
