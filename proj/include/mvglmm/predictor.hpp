#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mvglmm/design.hpp"
#include "mvglmm/errors.hpp"
#include "mvglmm/estimator.hpp"
#include "mvglmm/normal_math.hpp"

namespace mvglmm {

inline const char* effect_name(Effect e) {
  switch (e) {
    case Effect::offense: return "offense";
    case Effect::defense: return "defense";
    case Effect::win: return "win_propensity";
  }
  return "";
}

inline Effect parse_effect(std::string_view s) {
  if (s == "offense") return Effect::offense;
  if (s == "defense") return Effect::defense;
  if (s == "win" || s == "win_propensity" || s == "win-propensity") return Effect::win;
  throw ValidationError("unknown rating type '" + std::string(s) +
                        "' (expected offense, defense or win_propensity)");
}

struct RankedTeam {
  std::size_t rank = 0;  // 1-based
  std::string team;
  double rating = 0.0;
};

// Teams by descending empirical-mode rating; equal ratings fall back to name order.
inline std::vector<RankedTeam> rank_teams(const FitResult& fit, Effect which) {
  if (!fit.has_effect(which))
    throw UnavailableError(std::string(effect_name(which)) + " ratings are not estimated by method " +
                           std::string(to_string(fit.spec.method)));
  std::vector<RankedTeam> out;
  out.reserve(fit.teams.size());
  for (std::size_t j = 0; j < fit.teams.size(); ++j)
    out.push_back({0, fit.teams[j],
                   fit.ratings(static_cast<Eigen::Index>(j), static_cast<int>(which))});
  std::sort(out.begin(), out.end(), [](const RankedTeam& a, const RankedTeam& b) {
    if (a.rating != b.rating) return a.rating > b.rating;
    return a.team < b.team;
  });
  for (std::size_t k = 0; k < out.size(); ++k) out[k].rank = k + 1;
  return out;
}

namespace detail {

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      const bool same = std::tolower(static_cast<unsigned char>(a[i - 1])) ==
                        std::tolower(static_cast<unsigned char>(b[j - 1]));
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (same ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

// Up to `limit` team names closest to `name`: case-insensitive substring
// matches first, then small edit distances.
inline std::vector<std::string> near_matches(const std::vector<std::string>& teams,
                                             std::string_view name, std::size_t limit = 5) {
  const std::string key = detail::lower(name);
  const std::size_t budget = std::max<std::size_t>(2, name.size() / 3);
  std::vector<std::pair<std::size_t, std::string>> scored;
  for (const auto& t : teams) {
    const std::string lt = detail::lower(t);
    if (!key.empty() && (lt.find(key) != std::string::npos || key.find(lt) != std::string::npos)) {
      scored.emplace_back(0, t);
      continue;
    }
    const std::size_t d = detail::edit_distance(key, lt);
    if (d <= budget) scored.emplace_back(d, t);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::string> out;
  for (std::size_t k = 0; k < scored.size() && k < limit; ++k) out.push_back(scored[k].second);
  return out;
}

inline std::size_t require_team(const FitResult& fit, std::string_view name) {
  const auto it = std::find(fit.teams.begin(), fit.teams.end(), name);
  if (it != fit.teams.end()) return static_cast<std::size_t>(it - fit.teams.begin());
  std::string msg = "unknown team '" + std::string(name) + "'";
  const auto near = near_matches(fit.teams, name);
  if (!near.empty()) {
    msg += "; did you mean: ";
    for (std::size_t k = 0; k < near.size(); ++k) msg += (k ? ", " : "") + near[k];
  }
  throw LookupError(msg);
}

struct GamePrediction {
  std::string home_team;
  std::string away_team;
  bool neutral_site = false;
  Method method = Method::NB;
  ScoreFamily family = ScoreFamily::none;
  std::optional<double> predicted_home_response;
  std::optional<double> predicted_away_response;
  std::optional<double> home_win_probability;
  // A team without games in the fit; its ratings are the prior mean 0.
  bool unseen_team = false;
};

// Plug-in prediction at the empirical mode: expected responses from
// (beta, offense, defense), home-win probability Phi(alpha*W + w_h - w_a).
// Game effects are predicted at their mean 0.
inline GamePrediction predict_game(const FitResult& fit, std::string_view home,
                                   std::string_view away, bool neutral) {
  const std::size_t h = require_team(fit, home);
  const std::size_t a = require_team(fit, away);
  if (h == a) throw ValidationError("home and away team must differ");
  GamePrediction out;
  out.home_team = fit.teams[h];
  out.away_team = fit.teams[a];
  out.neutral_site = neutral;
  out.method = fit.spec.method;
  out.family = score_family(fit.spec.method);
  if (!fit.games_per_team.empty())
    out.unseen_team = fit.games_per_team[h] == 0 || fit.games_per_team[a] == 0;

  const auto& r = fit.ratings;
  const auto H = static_cast<Eigen::Index>(h);
  const auto A = static_cast<Eigen::Index>(a);
  if (out.family != ScoreFamily::none) {
    const double mh = neutral ? fit.params.beta[2] : fit.params.beta[0];
    const double ma = neutral ? fit.params.beta[2] : fit.params.beta[1];
    double eh = mh + r(H, 0) - r(A, 1);
    double ea = ma + r(A, 0) - r(H, 1);
    if (out.family == ScoreFamily::poisson) {
      eh = std::exp(eh);
      ea = std::exp(ea);
    }
    out.predicted_home_response = eh;
    out.predicted_away_response = ea;
  }
  if (has_binary(fit.spec.method))
    out.home_win_probability = norm_cdf((neutral ? 0.0 : fit.params.alpha) + r(H, 2) - r(A, 2));
  return out;
}

namespace detail {

// Rounds to `digits` decimals and drops trailing zeros (0.500 -> 0.5).
inline std::string rounded(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  std::string s(buf);
  if (s.find('.') != std::string::npos) {
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
  }
  if (s == "-0") s = "0";
  return s;
}

}  // namespace detail

// Human-readable prediction in four sections; absent components print
// "N/A for this object.".
inline std::string format_prediction(const GamePrediction& g) {
  std::ostringstream os;
  auto scores = [&](ScoreFamily fam, const char* title) {
    os << title << ":\n";
    if (g.family == fam && g.predicted_home_response) {
      os << "Predicted score for " << g.home_team << ": "
         << detail::rounded(*g.predicted_home_response, 2) << "\n";
      os << "Predicted score for " << g.away_team << ": "
         << detail::rounded(*g.predicted_away_response, 2) << "\n";
    } else {
      os << "N/A for this object.\n";
    }
    os << "\n";
  };
  scores(ScoreFamily::normal, "Normal Distribution for Scores");
  scores(ScoreFamily::poisson, "Poisson Distribution for Scores");
  os << "Binary Distribution for Outcomes:\n";
  if (g.home_win_probability)
    os << "Probability of " << g.home_team << " defeating " << g.away_team << ": "
       << detail::rounded(*g.home_win_probability, 3) << "\n";
  else
    os << "N/A for this object.\n";
  os << "\n";
  os << "Normal Distribution for Margin of Victory:\n";
  os << "N/A for this object.\n";
  if (g.unseen_team)
    os << "\nNote: at least one team has no games in the fit; its ratings are the prior mean 0.\n";
  return os.str();
}

struct RatingScatterRow {
  std::string team;
  double offense = 0.0;
  double defense = 0.0;
  double win_propensity = 0.0;
};

// Offense/defense/win-propensity per team for plotting; joint methods only.
inline std::vector<RatingScatterRow> emit_rating_scatter(const FitResult& fit) {
  if (!has_scores(fit.spec.method) || !has_binary(fit.spec.method))
    throw UnavailableError("rating scatter needs a joint method (NB, PB0, PB1), not " +
                           std::string(to_string(fit.spec.method)));
  std::vector<RatingScatterRow> out;
  out.reserve(fit.teams.size());
  for (std::size_t j = 0; j < fit.teams.size(); ++j) {
    const auto J = static_cast<Eigen::Index>(j);
    out.push_back({fit.teams[j], fit.ratings(J, 0), fit.ratings(J, 1), fit.ratings(J, 2)});
  }
  return out;
}

inline void write_rating_scatter(std::ostream& out, const std::vector<RatingScatterRow>& rows) {
  out << "team,offense,defense,win_propensity\n";
  for (const auto& r : rows)
    out << detail::quote_if_needed(r.team, ',') << ',' << detail::format_number(r.offense) << ','
        << detail::format_number(r.defense) << ',' << detail::format_number(r.win_propensity)
        << '\n';
}

// One row per team with its game count and every estimated rating.
inline void write_ratings(std::ostream& out, const FitResult& fit) {
  std::vector<Effect> cols;
  for (Effect e : {Effect::offense, Effect::defense, Effect::win})
    if (fit.has_effect(e)) cols.push_back(e);
  out << "team,games";
  for (Effect e : cols) out << ',' << effect_name(e);
  out << '\n';
  for (std::size_t j = 0; j < fit.teams.size(); ++j) {
    out << detail::quote_if_needed(fit.teams[j], ',') << ','
        << (fit.games_per_team.empty() ? 0 : fit.games_per_team[j]);
    for (Effect e : cols)
      out << ',' << detail::format_number(fit.ratings(static_cast<Eigen::Index>(j), static_cast<int>(e)));
    out << '\n';
  }
}

}  // namespace mvglmm
