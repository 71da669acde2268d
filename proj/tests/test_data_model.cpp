#include <sstream>

#include <gtest/gtest.h>

#include "mvglmm/data_model.hpp"

using namespace mvglmm;

namespace {

ModelSpec spec_for(Method m) {
  ModelSpec s;
  s.method = m;
  return s;
}

Dataset load(const std::string& text, Method m = Method::NB) {
  std::istringstream in(text);
  return load_dataset(in, spec_for(m));
}

const char* header = "home,away,neutral.site,home.response,away.response,binary.response\n";

GameRecord game(const std::string& h, const std::string& a, std::optional<Outcome> o) {
  GameRecord g;
  g.game_id = h + "-" + a;
  g.home_team = h;
  g.away_team = a;
  g.home_response = 1.0;
  g.away_response = 2.0;
  g.binary_outcome = o;
  return g;
}

}  // namespace

TEST(DataModel, IndexesTeamsLexicographically) {
  const Dataset d = load(std::string(header) + "B,C,0,5.1,4.2,1\nA,B,0,6,3,1\n");
  EXPECT_EQ(d.p(), 3u);
  EXPECT_EQ(d.n(), 2u);
  EXPECT_EQ(*d.team_index("A"), 0u);
  EXPECT_EQ(*d.team_index("B"), 1u);
  EXPECT_EQ(*d.team_index("C"), 2u);
  // Rows keep file order.
  EXPECT_EQ(d.game(0).home_team, "B");
  EXPECT_EQ(d.home_index(1), 0u);
  EXPECT_EQ(d.away_index(1), 1u);
}

TEST(DataModel, TieRowBecomesWinAndLoss) {
  const Dataset d = load(std::string(header) + "A,B,0,5,5,0.5\nB,C,1,4,6,0\n");
  ASSERT_EQ(d.n(), 3u);
  EXPECT_EQ(d.original_games(), 2u);
  EXPECT_EQ(d.tie_count(), 1u);
  EXPECT_EQ(d.game(0).binary_outcome, Outcome::home_win);
  EXPECT_EQ(d.game(1).binary_outcome, Outcome::away_win);
  EXPECT_EQ(d.game(0).home_response, d.game(1).home_response);
  EXPECT_EQ(d.origin(0), 0u);
  EXPECT_EQ(d.origin(1), 0u);
  EXPECT_EQ(d.origin(2), 1u);
  EXPECT_TRUE(d.game(2).neutral_site);
}

TEST(DataModel, MissingColumnNamesTheColumn) {
  try {
    load("home,away,neutral.site,home.response\nA,B,0,1\n", Method::N);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.column(), "away.response");
  }
}

TEST(DataModel, NonNumericResponseReportsRow) {
  try {
    load(std::string(header) + "A,B,0,5,4,1\nA,C,0,x,4,1\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 2u);
  }
}

TEST(DataModel, PoissonRejectsNonCounts) {
  EXPECT_THROW(load(std::string(header) + "A,B,0,2.5,1,1\n", Method::P0), DomainError);
  EXPECT_THROW(load(std::string(header) + "A,B,0,-1,1,1\n", Method::PB0), DomainError);
  EXPECT_NO_THROW(load(std::string(header) + "A,B,0,2,1,1\n", Method::P0));
}

TEST(DataModel, TeamCannotPlayItself) {
  EXPECT_THROW(load(std::string(header) + "A,A,0,1,1,1\n"), ValidationError);
}

TEST(DataModel, OptionalColumnsFollowTheMethod) {
  // Scores only: binary column may be absent.
  EXPECT_NO_THROW(load("home,away,neutral.site,home.response,away.response\nA,B,0,1,2\n", Method::N));
  // Outcomes only: responses may be absent or blank.
  const Dataset d = load("home,away,neutral.site,binary.response\nA,B,0,1\n", Method::B);
  EXPECT_FALSE(d.game(0).home_response.has_value());
  EXPECT_THROW(load("home,away,neutral.site,home.response,away.response\nA,B,0,1,2\n", Method::B),
               SchemaError);
}

TEST(DataModel, BadNeutralFlagIsParseError) {
  EXPECT_THROW(load(std::string(header) + "A,B,2,1,1,1\n"), ParseError);
}

TEST(DataModel, LoadingIsDeterministic) {
  const std::string text = std::string(header) + "Z,Y,0,1,2,0\nY,X,1,3,3,0.5\nX,Z,0,2,1,1\n";
  EXPECT_EQ(load(text), load(text));
}

TEST(DataModel, WriteThenReloadRoundTrips) {
  const Dataset d = load(std::string(header) + "\"Texas A&M\",B,0,5.25,4,0.5\nB,C,1,4,6,0\n");
  std::ostringstream out;
  write_dataset(out, d);
  std::istringstream in(out.str());
  const Dataset again = load_dataset(in, spec_for(Method::NB));
  EXPECT_EQ(d, again);
  EXPECT_EQ(again.tie_count(), 1u);
}

TEST(DataModel, SemicolonDelimiter) {
  std::istringstream in("home;away;neutral.site;home.response;away.response;binary.response\nA;B;0;1;2;0\n");
  const Dataset d = load_dataset(in, spec_for(Method::NB), ';');
  EXPECT_EQ(d.p(), 2u);
}

TEST(TieExpand, Examples) {
  EXPECT_TRUE(tie_expand({}).empty());
  const auto one = tie_expand({game("A", "B", Outcome::tie)});
  ASSERT_EQ(one.size(), 2u);
  EXPECT_EQ(one[0].binary_outcome, Outcome::home_win);
  EXPECT_EQ(one[1].binary_outcome, Outcome::away_win);
  EXPECT_EQ(one[0].home_response, one[1].home_response);
  const std::vector<GameRecord> three = {game("A", "B", Outcome::home_win),
                                         game("B", "C", Outcome::away_win),
                                         game("C", "A", std::nullopt)};
  EXPECT_EQ(tie_expand(three), three);
}

TEST(DataModel, SubsetKeepsFullTeamIndex) {
  const Dataset d = load(std::string(header) + "A,B,0,1,2,0\nC,D,0,3,1,1\nA,C,0,2,2,0.5\n");
  const Dataset s = d.subset({false, true, true});
  EXPECT_EQ(s.p(), 4u);
  EXPECT_EQ(s.original_games(), 2u);
  EXPECT_EQ(s.n(), 3u);
  EXPECT_EQ(s.teams(), d.teams());
}

TEST(DataModel, SummaryCounts) {
  const Dataset d = load(std::string(header) + "A,B,0,1,2,0.5\nC,D,0,3,1,1\n");
  const auto s = d.summary();
  EXPECT_EQ(s.teams, 4u);
  EXPECT_EQ(s.games, 3u);
  EXPECT_EQ(s.original_games, 2u);
  EXPECT_EQ(s.ties, 1u);
}
