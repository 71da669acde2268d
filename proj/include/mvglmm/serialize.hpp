#pragma once

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvglmm/errors.hpp"
#include "mvglmm/estimator.hpp"
#include "mvglmm/predictor.hpp"

namespace mvglmm {

using Json = nlohmann::ordered_json;

namespace detail {

// JSON has no infinities or NaN; they are written as strings.
inline Json number_to_json(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline double number_from_json(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw ParseError(0, "expected a number in the fit document");
}

inline Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(number_to_json(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) != cols)
      throw ParseError(0, "ragged matrix in the fit document");
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = number_from_json(j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
  }
  return m;
}

inline std::vector<std::string> component_labels(Method m) {
  std::vector<std::string> out;
  if (has_scores(m)) {
    out.push_back("Offense");
    out.push_back("Defense");
  }
  if (has_binary(m)) out.push_back("Win Propensity");
  return out;
}

}  // namespace detail

inline Json to_json(const HessianDiagnostics& d) {
  Json j;
  j["available"] = d.available;
  j["positive_definite"] = d.positive_definite;
  j["invertible"] = d.invertible;
  j["condition_number"] = d.condition_number ? detail::number_to_json(*d.condition_number) : Json();
  j["near_singular_threshold"] = near_singular_condition;
  j["near_singular"] = d.near_singular;
  j["warnings"] = d.warnings;
  return j;
}

inline HessianDiagnostics hessian_diagnostics_from_json(const Json& j) {
  HessianDiagnostics d;
  d.available = j.at("available").get<bool>();
  d.positive_definite = j.at("positive_definite").get<bool>();
  d.invertible = j.at("invertible").get<bool>();
  if (!j.at("condition_number").is_null()) d.condition_number = detail::number_from_json(j["condition_number"]);
  d.near_singular = j.at("near_singular").get<bool>();
  d.warnings = j.at("warnings").get<std::vector<std::string>>();
  return d;
}

// The fit document: method and solver settings, named parameters in the
// conventional order, G/G.cor/R/R.cor, ratings, optional Hessian and
// diagnostics. Key order is fixed so documents are byte-reproducible.
inline Json to_json(const FitResult& f) {
  Json j;
  j["format"] = "mvglmm-fit";
  j["version"] = 1;
  j["method"] = to_string(f.spec.method);
  j["spec"] = {{"max_em_iterations", f.spec.max_em_iterations},
               {"em_tolerance", f.spec.em_tolerance},
               {"newton_tolerance", f.spec.newton_tolerance},
               {"max_newton_iterations", f.spec.max_newton_iterations},
               {"compute_hessian", f.spec.compute_hessian},
               {"independent_blocks", f.spec.independent_blocks},
               {"accelerate", f.spec.accelerate}};
  Json params = Json::object();
  for (std::size_t k = 0; k < f.parameter_names.size(); ++k)
    params[f.parameter_names[k]] = detail::number_to_json(f.parameter_values[static_cast<Eigen::Index>(k)]);
  j["parameters"] = std::move(params);
  j["marginal_loglik"] = detail::number_to_json(f.marginal_loglik);
  j["G.labels"] = detail::component_labels(f.spec.method);
  j["G"] = detail::matrix_to_json(f.G);
  j["G.cor"] = detail::matrix_to_json(f.G_cor);
  if (f.R) {
    j["R.labels"] = {"Home", "Away"};
    j["R"] = detail::matrix_to_json(*f.R);
    j["R.cor"] = detail::matrix_to_json(*f.R_cor);
  }
  const auto& p = f.params;
  j["state"] = {{"beta", {p.beta[0], p.beta[1], p.beta[2]}},
                {"alpha", p.alpha},
                {"Gstar", detail::matrix_to_json(p.Gstar)},
                {"sigma2_g", p.sigma2_g},
                {"Rstar", detail::matrix_to_json(p.Rstar)}};
  Json ratings = Json::array();
  for (std::size_t t = 0; t < f.teams.size(); ++t) {
    const auto T = static_cast<Eigen::Index>(t);
    Json row;
    row["team"] = f.teams[t];
    row["games"] = f.games_per_team.empty() ? 0 : f.games_per_team[t];
    if (f.has_effect(Effect::offense)) {
      row["offense"] = f.ratings(T, 0);
      row["defense"] = f.ratings(T, 1);
    }
    if (f.has_effect(Effect::win)) row["win_propensity"] = f.ratings(T, 2);
    ratings.push_back(std::move(row));
  }
  j["ratings"] = std::move(ratings);
  if (f.hessian) {
    j["Hessian"] = {{"names", f.parameter_names}, {"matrix", detail::matrix_to_json(*f.hessian)}};
  }
  const auto& d = f.diagnostics;
  Json dj;
  dj["converged"] = d.converged;
  dj["em_iterations"] = d.em_iterations;
  dj["newton_iterations"] = d.newton_iterations;
  dj["ridge_escalations"] = d.ridge_escalations;
  dj["final_parameter_change"] = detail::number_to_json(d.final_parameter_change);
  dj["approximation"] = d.approximation;
  dj["beta_fixed_at_zero"] = {{"LocationHome", d.beta_fixed_at_zero[0]},
                              {"LocationAway", d.beta_fixed_at_zero[1]},
                              {"LocationNeutral Site", d.beta_fixed_at_zero[2]}};
  dj["alpha_fixed_at_zero"] = d.alpha_fixed_at_zero;
  dj["hessian"] = d.hessian ? to_json(*d.hessian) : Json();
  dj["warnings"] = d.warnings;
  Json trace = Json::array();
  for (double v : d.loglik_trace) trace.push_back(detail::number_to_json(v));
  dj["loglik_trace"] = std::move(trace);
  j["diagnostics"] = std::move(dj);
  return j;
}

// Rebuilds everything prediction, ranking and reporting need. The mode's
// sparse curvature is not stored, so the result cannot seed a refit.
inline FitResult fit_from_json(const Json& j) {
  try {
    if (j.value("format", "") != "mvglmm-fit") throw ParseError(0, "not an mvglmm fit document");
    FitResult f;
    f.spec.method = parse_method(j.at("method").get<std::string>());
    const auto& s = j.at("spec");
    f.spec.max_em_iterations = s.at("max_em_iterations").get<int>();
    f.spec.em_tolerance = s.at("em_tolerance").get<double>();
    f.spec.newton_tolerance = s.at("newton_tolerance").get<double>();
    f.spec.max_newton_iterations = s.at("max_newton_iterations").get<int>();
    f.spec.compute_hessian = s.at("compute_hessian").get<bool>();
    f.spec.independent_blocks = s.at("independent_blocks").get<bool>();
    f.spec.accelerate = s.value("accelerate", true);
    const auto& params = j.at("parameters");
    f.parameter_values.resize(static_cast<Eigen::Index>(params.size()));
    Eigen::Index k = 0;
    for (auto it = params.begin(); it != params.end(); ++it, ++k) {
      f.parameter_names.push_back(it.key());
      f.parameter_values[k] = detail::number_from_json(it.value());
    }
    f.marginal_loglik = detail::number_from_json(j.at("marginal_loglik"));
    f.G = detail::matrix_from_json(j.at("G"));
    f.G_cor = detail::matrix_from_json(j.at("G.cor"));
    if (j.contains("R")) {
      f.R = Eigen::Matrix2d(detail::matrix_from_json(j["R"]));
      f.R_cor = Eigen::Matrix2d(detail::matrix_from_json(j["R.cor"]));
    }
    const auto& st = j.at("state");
    for (int c = 0; c < 3; ++c) f.params.beta[c] = st.at("beta").at(static_cast<std::size_t>(c)).get<double>();
    f.params.alpha = st.at("alpha").get<double>();
    f.params.Gstar = detail::matrix_from_json(st.at("Gstar"));
    f.params.sigma2_g = st.at("sigma2_g").get<double>();
    f.params.Rstar = detail::matrix_from_json(st.at("Rstar"));
    const auto& ratings = j.at("ratings");
    f.ratings = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ratings.size()), 3);
    for (std::size_t t = 0; t < ratings.size(); ++t) {
      const auto& row = ratings[t];
      const auto T = static_cast<Eigen::Index>(t);
      f.teams.push_back(row.at("team").get<std::string>());
      f.games_per_team.push_back(row.at("games").get<std::size_t>());
      if (row.contains("offense")) {
        f.ratings(T, 0) = row["offense"].get<double>();
        f.ratings(T, 1) = row.at("defense").get<double>();
      }
      if (row.contains("win_propensity")) f.ratings(T, 2) = row["win_propensity"].get<double>();
    }
    if (j.contains("Hessian")) f.hessian = detail::matrix_from_json(j["Hessian"].at("matrix"));
    const auto& dj = j.at("diagnostics");
    auto& d = f.diagnostics;
    d.converged = dj.at("converged").get<bool>();
    d.em_iterations = dj.at("em_iterations").get<int>();
    d.newton_iterations = dj.at("newton_iterations").get<int>();
    d.ridge_escalations = dj.at("ridge_escalations").get<int>();
    d.final_parameter_change = detail::number_from_json(dj.at("final_parameter_change"));
    d.approximation = dj.at("approximation").get<std::string>();
    const auto& bz = dj.at("beta_fixed_at_zero");
    d.beta_fixed_at_zero = {bz.at("LocationHome").get<bool>(), bz.at("LocationAway").get<bool>(),
                            bz.at("LocationNeutral Site").get<bool>()};
    d.alpha_fixed_at_zero = dj.at("alpha_fixed_at_zero").get<bool>();
    if (!dj.at("hessian").is_null()) d.hessian = hessian_diagnostics_from_json(dj["hessian"]);
    d.warnings = dj.at("warnings").get<std::vector<std::string>>();
    for (const auto& v : dj.at("loglik_trace")) d.loglik_trace.push_back(detail::number_from_json(v));
    return f;
  } catch (const Json::exception& e) {
    throw ParseError(0, std::string("malformed fit document: ") + e.what());
  }
}

inline void write_fit(std::ostream& out, const FitResult& f) { out << to_json(f).dump(2) << '\n'; }

inline FitResult read_fit(std::istream& in) {
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ParseError(0, std::string("fit document is not valid JSON: ") + e.what());
  }
  return fit_from_json(j);
}

inline Json to_json(const GamePrediction& g) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(); };
  Json j;
  j["method"] = to_string(g.method);
  j["home_team"] = g.home_team;
  j["away_team"] = g.away_team;
  j["neutral_site"] = g.neutral_site;
  j["score_family"] = g.family == ScoreFamily::normal    ? "normal"
                      : g.family == ScoreFamily::poisson ? "poisson"
                                                          : "none";
  j["predicted_home_response"] = opt(g.predicted_home_response);
  j["predicted_away_response"] = opt(g.predicted_away_response);
  j["home_win_probability"] = opt(g.home_win_probability);
  j["unseen_team"] = g.unseen_team;
  return j;
}

}  // namespace mvglmm
