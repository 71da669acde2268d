#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mvglmm/errors.hpp"
#include "mvglmm/model_spec.hpp"

namespace mvglmm {

enum class Outcome { away_win, home_win, tie };

struct GameRecord {
  std::string game_id;
  std::string home_team;
  std::string away_team;
  bool neutral_site = false;
  std::optional<double> home_response;
  std::optional<double> away_response;
  std::optional<Outcome> binary_outcome;

  bool operator==(const GameRecord&) const = default;
};

// Replaces each tie by a home-win row followed by an away-win row. Everything
// else, including order, is left alone.
inline std::vector<GameRecord> tie_expand(const std::vector<GameRecord>& games) {
  std::vector<GameRecord> out;
  out.reserve(games.size());
  for (const auto& g : games) {
    if (g.binary_outcome == Outcome::tie) {
      GameRecord win = g;
      win.binary_outcome = Outcome::home_win;
      GameRecord loss = g;
      loss.binary_outcome = Outcome::away_win;
      out.push_back(std::move(win));
      out.push_back(std::move(loss));
    } else {
      out.push_back(g);
    }
  }
  return out;
}

struct DatasetSummary {
  std::size_t teams = 0;
  std::size_t games = 0;           // rows after tie expansion
  std::size_t original_games = 0;  // rows before tie expansion
  std::size_t ties = 0;
};

// Immutable, tie-expanded season. Teams are indexed in lexicographic order.
class Dataset {
 public:
  Dataset() = default;

  // Expands ties, validates, and builds the team index from the games.
  explicit Dataset(std::vector<GameRecord> games) : Dataset(std::move(games), {}) {}

  // As above, but the index also contains `extra_teams` (used to keep the
  // full index when fitting a subset of a season).
  Dataset(const std::vector<GameRecord>& games, const std::vector<std::string>& extra_teams) {
    std::vector<std::string> names = extra_teams;
    for (std::size_t k = 0; k < games.size(); ++k) {
      const auto& g = games[k];
      if (g.home_team == g.away_team)
        throw ValidationError("game '" + g.game_id + "': team '" + g.home_team +
                              "' cannot play itself");
      names.push_back(g.home_team);
      names.push_back(g.away_team);
      if (g.binary_outcome == Outcome::tie) ++ties_;
      for (auto& row : tie_expand({g})) {
        games_.push_back(std::move(row));
        origin_.push_back(k);
      }
    }
    original_games_ = games.size();

    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    teams_ = std::move(names);
    for (std::size_t j = 0; j < teams_.size(); ++j) index_.emplace(teams_[j], j);

    home_.reserve(games_.size());
    away_.reserve(games_.size());
    for (const auto& g : games_) {
      home_.push_back(index_.at(g.home_team));
      away_.push_back(index_.at(g.away_team));
    }
  }

  std::size_t n() const { return games_.size(); }
  std::size_t p() const { return teams_.size(); }
  const std::vector<GameRecord>& games() const { return games_; }
  const GameRecord& game(std::size_t i) const { return games_[i]; }
  const std::vector<std::string>& teams() const { return teams_; }

  std::optional<std::size_t> team_index(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t home_index(std::size_t i) const { return home_[i]; }
  std::size_t away_index(std::size_t i) const { return away_[i]; }

  // Index of the pre-expansion game that row i came from.
  std::size_t origin(std::size_t i) const { return origin_[i]; }
  std::size_t original_games() const { return original_games_; }
  std::size_t tie_count() const { return ties_; }

  std::vector<std::size_t> games_per_team() const {
    std::vector<std::size_t> counts(p(), 0);
    for (std::size_t i = 0; i < n(); ++i) {
      ++counts[home_[i]];
      ++counts[away_[i]];
    }
    return counts;
  }

  DatasetSummary summary() const { return {p(), n(), original_games_, ties_}; }

  // Pre-expansion records, in file order.
  std::vector<GameRecord> original_records() const {
    std::vector<GameRecord> rows;
    rows.reserve(original_games_);
    for (std::size_t i = 0; i < n(); ++i) {
      rows.push_back(games_[i]);
      if (i + 1 < n() && origin_[i + 1] == origin_[i]) {
        rows.back().binary_outcome = Outcome::tie;
        ++i;
      }
    }
    return rows;
  }

  // Original games whose mask entry is set, re-indexed against this
  // dataset's full team list.
  Dataset subset(const std::vector<bool>& keep_original) const {
    const auto originals = original_records();
    std::vector<GameRecord> rows;
    for (std::size_t k = 0; k < originals.size(); ++k)
      if (keep_original[k]) rows.push_back(originals[k]);
    return Dataset(rows, teams_);
  }

  bool operator==(const Dataset& o) const {
    return games_ == o.games_ && teams_ == o.teams_ && origin_ == o.origin_;
  }

 private:
  std::vector<GameRecord> games_;
  std::vector<std::string> teams_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::size_t> home_;
  std::vector<std::size_t> away_;
  std::vector<std::size_t> origin_;
  std::size_t original_games_ = 0;
  std::size_t ties_ = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// One delimited line; double-quoted fields may contain the delimiter and "".
inline std::vector<std::string> split_row(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

inline bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "na" || cell == "NaN";
}

inline std::optional<double> parse_number(const std::string& cell) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v))
    return std::nullopt;
  return v;
}

inline std::string quote_if_needed(const std::string& s, char delim) {
  if (s.find(delim) == std::string::npos && s.find('"') == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

// Reads a delimited season table. Columns home, away and neutral.site are
// always required; the response columns are required only when the method
// uses them. An optional game_id column is honoured; otherwise the 1-based
// data row number is the id. binary.response: 1 home win, 0 away win,
// 0.5 tie.
inline Dataset load_dataset(std::istream& in, const ModelSpec& spec, char delim = ',') {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("home");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_row(line, delim);
  std::map<std::string, std::size_t> col;
  for (std::size_t k = 0; k < header.size(); ++k) col.emplace(header[k], k);

  auto require = [&](const char* name) -> std::size_t {
    auto it = col.find(name);
    if (it == col.end()) throw SchemaError(name);
    return it->second;
  };
  auto optional_col = [&](const char* name) -> std::optional<std::size_t> {
    auto it = col.find(name);
    if (it == col.end()) return std::nullopt;
    return it->second;
  };

  const std::size_t c_home = require("home");
  const std::size_t c_away = require("away");
  const std::size_t c_neutral = require("neutral.site");
  std::optional<std::size_t> c_hr, c_ar, c_bin;
  if (spec.scores()) {
    c_hr = require("home.response");
    c_ar = require("away.response");
  } else {
    c_hr = optional_col("home.response");
    c_ar = optional_col("away.response");
  }
  if (spec.binary())
    c_bin = require("binary.response");
  else
    c_bin = optional_col("binary.response");
  const auto c_id = optional_col("game_id");

  const bool poisson = spec.family() == ScoreFamily::poisson;
  std::vector<GameRecord> games;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_row(line, delim);
    if (cells.size() < header.size())
      throw ParseError(row, "expected " + std::to_string(header.size()) + " fields, found " +
                                std::to_string(cells.size()));
    GameRecord g;
    g.game_id = c_id ? cells[*c_id] : std::to_string(row);
    g.home_team = cells[c_home];
    g.away_team = cells[c_away];
    if (g.home_team.empty() || g.away_team.empty()) throw ParseError(row, "empty team name");

    const std::string& ns = cells[c_neutral];
    if (ns == "1" || ns == "TRUE" || ns == "true")
      g.neutral_site = true;
    else if (ns == "0" || ns == "FALSE" || ns == "false")
      g.neutral_site = false;
    else
      throw ParseError(row, "neutral.site must be 0 or 1, got '" + ns + "'");

    auto read_response = [&](std::optional<std::size_t> c, const char* name,
                             bool required) -> std::optional<double> {
      if (!c) return std::nullopt;
      const std::string& cell = cells[*c];
      if (detail::is_missing(cell)) {
        if (required) throw ParseError(row, std::string("missing value in ") + name);
        return std::nullopt;
      }
      auto v = detail::parse_number(cell);
      if (!v) {
        if (!required) return std::nullopt;
        throw ParseError(row, std::string("non-numeric ") + name + " '" + cell + "'");
      }
      if (required && poisson && (*v < 0 || std::floor(*v) != *v))
        throw DomainError("row " + std::to_string(row) + ": " + name +
                          " must be a non-negative integer count for Poisson methods, got " +
                          cell);
      return v;
    };
    g.home_response = read_response(c_hr, "home.response", spec.scores());
    g.away_response = read_response(c_ar, "away.response", spec.scores());

    if (c_bin) {
      const std::string& cell = cells[*c_bin];
      if (detail::is_missing(cell)) {
        if (spec.binary()) throw ParseError(row, "missing value in binary.response");
      } else {
        auto v = detail::parse_number(cell);
        if (v && *v == 1.0)
          g.binary_outcome = Outcome::home_win;
        else if (v && *v == 0.0)
          g.binary_outcome = Outcome::away_win;
        else if (v && *v == 0.5)
          g.binary_outcome = Outcome::tie;
        else if (spec.binary())
          throw ParseError(row, "binary.response must be 1, 0 or 0.5, got '" + cell + "'");
      }
    }
    games.push_back(std::move(g));
  }
  return Dataset(std::move(games));
}

// Writes the pre-expansion games in the load_dataset format, with an
// explicit game_id column.
inline void write_dataset(std::ostream& out, const Dataset& data, char delim = ',') {
  out << "game_id" << delim << "home" << delim << "away" << delim << "neutral.site" << delim
      << "home.response" << delim << "away.response" << delim << "binary.response\n";
  for (const auto& g : data.original_records()) {
    out << detail::quote_if_needed(g.game_id, delim) << delim
        << detail::quote_if_needed(g.home_team, delim) << delim
        << detail::quote_if_needed(g.away_team, delim) << delim << (g.neutral_site ? 1 : 0)
        << delim << (g.home_response ? detail::format_number(*g.home_response) : "NA") << delim
        << (g.away_response ? detail::format_number(*g.away_response) : "NA") << delim;
    if (!g.binary_outcome)
      out << "NA";
    else if (*g.binary_outcome == Outcome::home_win)
      out << 1;
    else if (*g.binary_outcome == Outcome::away_win)
      out << 0;
    else
      out << 0.5;
    out << '\n';
  }
}

}  // namespace mvglmm
