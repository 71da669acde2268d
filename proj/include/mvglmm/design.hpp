#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "mvglmm/data_model.hpp"
#include "mvglmm/model_spec.hpp"

namespace mvglmm {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor>;
using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Per-team random effect components, in their column order within a team block.
enum class Effect : int { offense = 0, defense = 1, win = 2 };

inline constexpr std::size_t effects_per_team = 3;

constexpr std::size_t team_column(std::size_t team, Effect e) {
  return effects_per_team * team + static_cast<std::size_t>(e);
}

// X is 2n x 3 (home-mean, away-mean, neutral-mean). Z is 2n x q with
// q = 3p (+ n with a game effect). Row 2i is the home response of game i,
// row 2i+1 the away response.
struct ScoreDesign {
  SparseRowMatrix X;
  SparseRowMatrix Z;
  bool game_effect = false;
};

// Row i of S has +1 at the home team's win-propensity column and -1 at the
// away team's; W_i is 0 for neutral-site games.
struct BinaryDesign {
  Eigen::VectorXd W;
  SparseRowMatrix S;
};

inline std::size_t full_effect_dim(const Dataset& data, bool game_effect) {
  return effects_per_team * data.p() + (game_effect ? data.n() : 0);
}

inline ScoreDesign build_score_design(const Dataset& data, bool game_effect) {
  const std::size_t n = data.n();
  const std::size_t q = full_effect_dim(data, game_effect);
  using Triplet = Eigen::Triplet<double>;
  std::vector<Triplet> xt, zt;
  xt.reserve(2 * n);
  zt.reserve(2 * n * (game_effect ? 3 : 2));
  for (std::size_t i = 0; i < n; ++i) {
    const auto home = data.home_index(i);
    const auto away = data.away_index(i);
    const auto r_home = static_cast<int>(2 * i);
    const auto r_away = r_home + 1;
    if (data.game(i).neutral_site) {
      xt.emplace_back(r_home, 2, 1.0);
      xt.emplace_back(r_away, 2, 1.0);
    } else {
      xt.emplace_back(r_home, 0, 1.0);
      xt.emplace_back(r_away, 1, 1.0);
    }
    zt.emplace_back(r_home, static_cast<int>(team_column(home, Effect::offense)), 1.0);
    zt.emplace_back(r_home, static_cast<int>(team_column(away, Effect::defense)), -1.0);
    zt.emplace_back(r_away, static_cast<int>(team_column(away, Effect::offense)), 1.0);
    zt.emplace_back(r_away, static_cast<int>(team_column(home, Effect::defense)), -1.0);
    if (game_effect) {
      const auto c = static_cast<int>(effects_per_team * data.p() + i);
      zt.emplace_back(r_home, c, 1.0);
      zt.emplace_back(r_away, c, 1.0);
    }
  }
  ScoreDesign d;
  d.game_effect = game_effect;
  d.X.resize(static_cast<Eigen::Index>(2 * n), 3);
  d.X.setFromTriplets(xt.begin(), xt.end());
  d.Z.resize(static_cast<Eigen::Index>(2 * n), static_cast<Eigen::Index>(q));
  d.Z.setFromTriplets(zt.begin(), zt.end());
  return d;
}

// `game_effect` only widens S so its columns line up with Z.
inline BinaryDesign build_binary_design(const Dataset& data, bool game_effect = false) {
  const std::size_t n = data.n();
  const std::size_t q = full_effect_dim(data, game_effect);
  std::vector<Eigen::Triplet<double>> st;
  st.reserve(2 * n);
  BinaryDesign d;
  d.W.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<int>(i);
    st.emplace_back(row, static_cast<int>(team_column(data.home_index(i), Effect::win)), 1.0);
    st.emplace_back(row, static_cast<int>(team_column(data.away_index(i), Effect::win)), -1.0);
    d.W[row] = data.game(i).neutral_site ? 0.0 : 1.0;
  }
  d.S.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q));
  d.S.setFromTriplets(st.begin(), st.end());
  return d;
}

// Which random effects a model actually uses. A fit works on the compressed
// vector holding only those; `expand` maps it back to the full
// [team 0 (o,d,w), ..., team p-1 (o,d,w), game effects] layout.
class EffectLayout {
 public:
  EffectLayout() = default;

  EffectLayout(std::size_t teams, std::array<bool, 3> active, std::size_t game_effects)
      : teams_(teams), active_(active), games_(game_effects) {
    components_.clear();
    for (int c = 0; c < 3; ++c)
      if (active_[c]) components_.push_back(static_cast<Effect>(c));
  }

  static EffectLayout for_method(Method m, std::size_t teams, std::size_t games) {
    const bool s = has_scores(m);
    const bool b = has_binary(m);
    return EffectLayout(teams, {s, s, b}, has_game_effect(m) ? games : 0);
  }

  std::size_t teams() const { return teams_; }
  std::size_t per_team() const { return components_.size(); }
  std::size_t team_dim() const { return teams_ * per_team(); }
  std::size_t game_effects() const { return games_; }
  std::size_t dim() const { return team_dim() + games_; }
  std::size_t full_dim() const { return effects_per_team * teams_ + games_; }
  bool active(Effect e) const { return active_[static_cast<int>(e)]; }
  const std::vector<Effect>& components() const { return components_; }

  // Position of component e within a team's compressed block.
  std::optional<std::size_t> slot(Effect e) const {
    for (std::size_t k = 0; k < components_.size(); ++k)
      if (components_[k] == e) return k;
    return std::nullopt;
  }

  std::optional<std::size_t> index(std::size_t team, Effect e) const {
    auto k = slot(e);
    if (!k) return std::nullopt;
    return team * per_team() + *k;
  }

  std::size_t game_index(std::size_t game) const { return team_dim() + game; }

  // full_dim x dim selection: Z_full * selection() keeps the active columns.
  SparseMatrix selection() const {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(dim());
    for (std::size_t j = 0; j < teams_; ++j)
      for (std::size_t k = 0; k < per_team(); ++k)
        t.emplace_back(static_cast<int>(team_column(j, components_[k])),
                       static_cast<int>(j * per_team() + k), 1.0);
    for (std::size_t i = 0; i < games_; ++i)
      t.emplace_back(static_cast<int>(effects_per_team * teams_ + i),
                     static_cast<int>(team_dim() + i), 1.0);
    SparseMatrix s(static_cast<Eigen::Index>(full_dim()), static_cast<Eigen::Index>(dim()));
    s.setFromTriplets(t.begin(), t.end());
    return s;
  }

  Eigen::VectorXd expand(const Eigen::VectorXd& compressed) const {
    Eigen::VectorXd full = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(full_dim()));
    for (std::size_t j = 0; j < teams_; ++j)
      for (std::size_t k = 0; k < per_team(); ++k)
        full[static_cast<Eigen::Index>(team_column(j, components_[k]))] =
            compressed[static_cast<Eigen::Index>(j * per_team() + k)];
    for (std::size_t i = 0; i < games_; ++i)
      full[static_cast<Eigen::Index>(effects_per_team * teams_ + i)] =
          compressed[static_cast<Eigen::Index>(team_dim() + i)];
    return full;
  }

 private:
  std::size_t teams_ = 0;
  std::array<bool, 3> active_{true, true, true};
  std::size_t games_ = 0;
  std::vector<Effect> components_{Effect::offense, Effect::defense, Effect::win};
};

// Debug dump: one "row col value" line per stored entry, row-major order.
template <typename Matrix>
void write_triplets(std::ostream& out, const Matrix& m) {
  SparseRowMatrix r = m;
  for (Eigen::Index i = 0; i < r.outerSize(); ++i)
    for (SparseRowMatrix::InnerIterator it(r, i); it; ++it)
      out << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
}

}  // namespace mvglmm
