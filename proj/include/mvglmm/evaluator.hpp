#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "mvglmm/data_model.hpp"
#include "mvglmm/errors.hpp"
#include "mvglmm/estimator.hpp"
#include "mvglmm/predictor.hpp"

namespace mvglmm {

inline constexpr double probability_floor = 1e-12;

inline double clamp_probability(double p) {
  return std::clamp(p, probability_floor, 1.0 - probability_floor);
}

// -y log p - (1-y) log(1-p) with p clamped away from 0 and 1. y is 0 or 1;
// a tie is scored with y = 0.5.
inline double log_loss(double prob, double outcome) {
  if (!(outcome >= 0.0 && outcome <= 1.0)) throw DomainError("log_loss outcome must lie in [0, 1]");
  if (std::isnan(prob)) throw DomainError("log_loss probability is NaN");
  const double p = clamp_probability(prob);
  return -outcome * std::log(p) - (1.0 - outcome) * std::log1p(-p);
}

inline double outcome_value(Outcome o) {
  switch (o) {
    case Outcome::home_win: return 1.0;
    case Outcome::away_win: return 0.0;
    case Outcome::tie: return 0.5;
  }
  return 0.0;
}

// Fold assignment over original (pre-tie-expansion) games: a seeded
// Fisher-Yates permutation dealt round-robin, so fold sizes differ by at most 1.
struct CvPlan {
  std::size_t k = 10;
  std::uint64_t seed = 1;
  std::vector<std::size_t> assignments;

  static CvPlan make(std::size_t games, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("cross-validation needs at least 2 folds");
    if (k > games)
      throw ValidationError("cannot split " + std::to_string(games) + " games into " +
                            std::to_string(k) + " folds");
    CvPlan plan;
    plan.k = k;
    plan.seed = seed;
    std::vector<std::size_t> order(games);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = games; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    plan.assignments.assign(games, 0);
    for (std::size_t pos = 0; pos < games; ++pos) plan.assignments[order[pos]] = pos % k;
    return plan;
  }

  std::size_t fold_size(std::size_t f) const {
    return static_cast<std::size_t>(std::count(assignments.begin(), assignments.end(), f));
  }
};

struct HeldOutGame {
  std::size_t game = 0;  // original game index
  std::size_t fold = 0;
  GameRecord record;
  bool predicted = false;  // false when the fold's fit failed
  GamePrediction prediction;
  std::optional<double> log_loss;      // binary component with an observed outcome
  std::optional<double> abs_residual;  // |y_h - yhat_h| + |y_a - yhat_a|
};

struct FoldStatus {
  std::size_t fold = 0;
  std::size_t train_games = 0;
  std::size_t test_games = 0;
  bool failed = false;
  bool converged = false;
  std::string error;
};

struct CvResult {
  Method method = Method::NB;
  CvPlan plan;
  std::vector<HeldOutGame> games;  // original game order
  std::vector<FoldStatus> folds;

  std::size_t failed_folds() const {
    return static_cast<std::size_t>(
        std::count_if(folds.begin(), folds.end(), [](const FoldStatus& f) { return f.failed; }));
  }
  std::size_t predicted_games() const {
    return static_cast<std::size_t>(
        std::count_if(games.begin(), games.end(), [](const HeldOutGame& g) { return g.predicted; }));
  }
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  const double hi = v[m];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m));
  return 0.5 * (lo + hi);
}

}  // namespace detail

enum class Metric { log_loss, abs_residual };

inline const char* to_string(Metric m) { return m == Metric::log_loss ? "log_loss" : "abs_residual"; }

inline std::optional<double> metric_value(const HeldOutGame& g, Metric m) {
  return m == Metric::log_loss ? g.log_loss : g.abs_residual;
}

inline std::vector<double> metric_values(const CvResult& cv, Metric m) {
  std::vector<double> out;
  for (const auto& g : cv.games)
    if (auto v = metric_value(g, m)) out.push_back(*v);
  return out;
}

inline double median_metric(const CvResult& cv, Metric m) { return detail::median(metric_values(cv, m)); }

inline double mean_metric(const CvResult& cv, Metric m) {
  const auto v = metric_values(cv, m);
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Fits on each fold's complement and scores the held-out original games.
// Every training set keeps the full team list, so a team absent from it is
// predicted at the prior mean. A fold whose fit throws is recorded as failed.
inline CvResult cross_validate(const Dataset& data, const ModelSpec& spec, const CvPlan& plan) {
  spec.validate();
  const std::size_t games = data.original_games();
  if (plan.assignments.size() != games)
    throw ValidationError("fold plan covers " + std::to_string(plan.assignments.size()) +
                          " games but the data has " + std::to_string(games));
  const auto originals = data.original_records();
  CvResult res;
  res.method = spec.method;
  res.plan = plan;
  res.games.resize(games);
  for (std::size_t i = 0; i < games; ++i) {
    res.games[i].game = i;
    res.games[i].fold = plan.assignments[i];
    res.games[i].record = originals[i];
  }
  for (std::size_t f = 0; f < plan.k; ++f) {
    FoldStatus st;
    st.fold = f;
    std::vector<bool> keep(games);
    for (std::size_t i = 0; i < games; ++i) keep[i] = plan.assignments[i] != f;
    st.test_games = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), false));
    st.train_games = games - st.test_games;
    try {
      const FitResult fit_f = fit(data.subset(keep), spec);
      st.converged = fit_f.diagnostics.converged;
      for (std::size_t i = 0; i < games; ++i) {
        if (keep[i]) continue;
        auto& g = res.games[i];
        g.prediction = predict_game(fit_f, g.record.home_team, g.record.away_team, g.record.neutral_site);
        g.predicted = true;
        if (g.prediction.home_win_probability && g.record.binary_outcome)
          g.log_loss = log_loss(*g.prediction.home_win_probability, outcome_value(*g.record.binary_outcome));
        if (g.prediction.predicted_home_response && g.record.home_response && g.record.away_response)
          g.abs_residual = std::abs(*g.record.home_response - *g.prediction.predicted_home_response) +
                           std::abs(*g.record.away_response - *g.prediction.predicted_away_response);
      }
    } catch (const Error& e) {
      st.failed = true;
      st.error = e.what();
    }
    res.folds.push_back(std::move(st));
  }
  return res;
}

struct SignTestResult {
  bool defined = false;  // false when every difference is zero (or there are none)
  double p_value = std::numeric_limits<double>::quiet_NaN();
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t zeros = 0;  // dropped before testing
  int majority_direction = 0;  // +1 more positive, -1 more negative, 0 balanced
};

// Exact two-sided binomial test of the positive count against Binomial(m, 1/2).
inline SignTestResult sign_test(const std::vector<double>& differences) {
  SignTestResult r;
  for (double d : differences) {
    if (std::isnan(d)) throw DomainError("sign_test received a NaN difference");
    if (d > 0)
      ++r.positive;
    else if (d < 0)
      ++r.negative;
    else
      ++r.zeros;
  }
  const std::size_t m = r.positive + r.negative;
  r.majority_direction = r.positive > r.negative ? 1 : (r.positive < r.negative ? -1 : 0);
  if (m == 0) return r;
  r.defined = true;
  const boost::math::binomial_distribution<double> bin(static_cast<double>(m), 0.5);
  const double k = static_cast<double>(std::min(r.positive, r.negative));
  r.p_value = std::min(1.0, 2.0 * boost::math::cdf(bin, k));
  return r;
}

struct TTestResult {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  double t_statistic = 0.0;
  double p_value = 1.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool degenerate = false;  // zero sample variance
};

// One-sample two-sided t-test of paired differences against 0, with a 95% interval.
inline TTestResult paired_t_test(const std::vector<double>& diffs) {
  if (diffs.size() < 2) throw ValidationError("paired t-test needs at least 2 differences");
  TTestResult r;
  r.n = diffs.size();
  const double n = static_cast<double>(r.n);
  r.mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / n;
  double ss = 0.0;
  for (double d : diffs) ss += (d - r.mean) * (d - r.mean);
  r.sd = std::sqrt(ss / (n - 1.0));
  const double se = r.sd / std::sqrt(n);
  if (!(se > 0)) {
    r.degenerate = true;
    r.t_statistic = r.mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.mean);
    r.p_value = r.mean == 0.0 ? 1.0 : 0.0;
    r.ci_low = r.ci_high = r.mean;
    return r;
  }
  const boost::math::students_t_distribution<double> t(n - 1.0);
  r.t_statistic = r.mean / se;
  r.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(t, std::abs(r.t_statistic))));
  const double q = boost::math::quantile(boost::math::complement(t, 0.025));
  r.ci_low = r.mean - q * se;
  r.ci_high = r.mean + q * se;
  return r;
}

struct ContrastResult {
  bool available = false;
  double estimate = 0.0;
  double std_error = std::numeric_limits<double>::quiet_NaN();
  double z = std::numeric_limits<double>::quiet_NaN();
  double p_value = std::numeric_limits<double>::quiet_NaN();
  std::string note;
};

// c'theta with variance c' H^{-1} c from the fit's parameter Hessian, tested
// against a standard normal. `weights` is indexed like fit.parameter_names.
inline ContrastResult contrast(const FitResult& fit, const Eigen::VectorXd& weights) {
  ContrastResult r;
  if (weights.size() != fit.parameter_values.size())
    throw ValidationError("contrast has " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(fit.parameter_values.size()) + " parameters");
  r.estimate = weights.dot(fit.parameter_values);
  if (weights.isZero(0.0)) {
    r.available = true;
    r.std_error = 0.0;
    r.z = 0.0;
    r.p_value = 1.0;
    return r;
  }
  if (!fit.hessian) {
    r.note = "no parameter Hessian was computed for this fit";
    return r;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(*fit.hessian);
  if (llt.info() != Eigen::Success) {
    r.note = "parameter Hessian is singular or not positive-definite; the model may be empirically "
             "underidentified";
    return r;
  }
  const double var = weights.dot(llt.solve(weights));
  if (!(var > 0) || !std::isfinite(var)) {
    r.note = "contrast variance is not positive";
    return r;
  }
  r.available = true;
  r.std_error = std::sqrt(var);
  r.z = r.estimate / r.std_error;
  const boost::math::normal_distribution<double> nd;
  r.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(nd, std::abs(r.z))));
  return r;
}

// beta_home - beta_away.
inline ContrastResult home_away_contrast(const FitResult& fit) {
  if (!has_scores(fit.spec.method))
    throw UnavailableError("method " + std::string(to_string(fit.spec.method)) + " has no score component");
  const auto& names = fit.parameter_names;
  const auto home = std::find(names.begin(), names.end(), "LocationHome");
  const auto away = std::find(names.begin(), names.end(), "LocationAway");
  if (home == names.end() || away == names.end()) {
    ContrastResult r;
    r.note = "home or away location mean is not identified by the data";
    return r;
  }
  Eigen::VectorXd c = Eigen::VectorXd::Zero(fit.parameter_values.size());
  c[home - names.begin()] = 1.0;
  c[away - names.begin()] = -1.0;
  return contrast(fit, c);
}

// Per-game comparison of one metric between two cross-validated models on
// the games both predicted. Differences are a - b; lower metric is better.
struct PairComparison {
  Method model_a = Method::NB;
  Method model_b = Method::NB;
  Metric metric = Metric::log_loss;
  std::vector<std::size_t> games;
  std::vector<double> differences;
  double median_a = 0.0;
  double median_b = 0.0;
  SignTestResult sign;
  std::optional<Method> preferred;  // favored in the majority of games
  bool significant = false;         // sign-test p < 0.05
};

inline PairComparison compare_pair(const CvResult& a, const CvResult& b, Metric metric) {
  if (a.games.size() != b.games.size())
    throw ValidationError("cross-validation results cover different games");
  PairComparison pc;
  pc.model_a = a.method;
  pc.model_b = b.method;
  pc.metric = metric;
  std::vector<double> va, vb;
  for (std::size_t i = 0; i < a.games.size(); ++i) {
    const auto x = metric_value(a.games[i], metric);
    const auto y = metric_value(b.games[i], metric);
    if (!x || !y) continue;
    pc.games.push_back(i);
    pc.differences.push_back(*x - *y);
    va.push_back(*x);
    vb.push_back(*y);
  }
  pc.median_a = detail::median(va);
  pc.median_b = detail::median(vb);
  pc.sign = sign_test(pc.differences);
  if (pc.sign.majority_direction < 0) pc.preferred = pc.model_a;
  if (pc.sign.majority_direction > 0) pc.preferred = pc.model_b;
  pc.significant = pc.sign.defined && pc.sign.p_value < 0.05;
  return pc;
}

// "Best" model for one metric among several: the model preferred over every
// other in pairwise majority comparisons. Significant iff all of those
// preferences are; p_value is the largest pairwise p-value.
struct MetricVerdict {
  Metric metric = Metric::log_loss;
  std::vector<Method> candidates;
  std::optional<Method> best;
  double p_value = std::numeric_limits<double>::quiet_NaN();
  bool significant = false;
  std::string note;
};

struct ComparisonReport {
  std::string label;
  std::vector<Method> methods;
  std::vector<std::string> excluded;  // methods dropped because every fold failed
  std::vector<PairComparison> pairs;
  MetricVerdict response;  // absolute residuals of the score component
  MetricVerdict outcome;   // log-loss of the home-win probabilities
};

namespace detail {

inline MetricVerdict verdict(const std::vector<const CvResult*>& runs, Metric metric,
                             std::vector<PairComparison>& pairs) {
  MetricVerdict v;
  v.metric = metric;
  std::vector<const CvResult*> pool;
  for (const auto* r : runs) {
    const bool has = metric == Metric::log_loss ? has_binary(r->method) : has_scores(r->method);
    if (has) {
      pool.push_back(r);
      v.candidates.push_back(r->method);
    }
  }
  if (pool.size() < 2) {
    v.note = pool.empty() ? "no model has this component" : "only one model has this component";
    if (pool.size() == 1) v.best = pool[0]->method;
    return v;
  }
  std::vector<std::vector<const PairComparison*>> wins(pool.size());
  std::vector<std::size_t> beaten(pool.size(), 0);
  std::vector<double> worst_p(pool.size(), 0.0);
  std::vector<bool> all_sig(pool.size(), true);
  for (std::size_t x = 0; x < pool.size(); ++x)
    for (std::size_t y = x + 1; y < pool.size(); ++y) {
      pairs.push_back(compare_pair(*pool[x], *pool[y], metric));
      const auto& pc = pairs.back();
      for (std::size_t z : {x, y}) {
        worst_p[z] = std::max(worst_p[z], pc.sign.defined ? pc.sign.p_value : 1.0);
        if (!pc.significant) all_sig[z] = false;
      }
      if (pc.preferred && *pc.preferred == pool[x]->method && pc.model_a != pc.model_b) ++beaten[x];
      if (pc.preferred && *pc.preferred == pool[y]->method && pc.model_a != pc.model_b) ++beaten[y];
    }
  for (std::size_t x = 0; x < pool.size(); ++x)
    if (beaten[x] + 1 == pool.size()) {
      v.best = pool[x]->method;
      v.p_value = worst_p[x];
      v.significant = all_sig[x];
      return v;
    }
  v.note = "no model is preferred over every other";
  return v;
}

}  // namespace detail

inline ComparisonReport compare_models(const std::vector<CvResult>& runs, std::string label = "") {
  ComparisonReport rep;
  rep.label = std::move(label);
  std::vector<const CvResult*> usable;
  for (const auto& r : runs) {
    rep.methods.push_back(r.method);
    if (!r.folds.empty() && r.failed_folds() == r.folds.size())
      rep.excluded.push_back(std::string(to_string(r.method)));
    else
      usable.push_back(&r);
  }
  rep.response = detail::verdict(usable, Metric::abs_residual, rep.pairs);
  rep.outcome = detail::verdict(usable, Metric::log_loss, rep.pairs);
  return rep;
}

namespace detail {

inline std::string format_p(double p) {
  if (std::isnan(p)) return "NA";
  return format_number(p);
}

inline std::string best_label(const MetricVerdict& v) {
  if (!v.best) return "NA";
  return std::string(to_string(*v.best)) + (v.significant ? "*" : "");
}

}  // namespace detail

// Summary row per report: best model per metric, "*" marking a significant
// preference over the comparison model(s).
inline void write_comparison_summary(std::ostream& out, const std::vector<ComparisonReport>& reports) {
  out << "label,best_model_response,best_model_outcome,p_value_response,p_value_outcome,"
         "significant_response,significant_outcome\n";
  for (const auto& r : reports)
    out << detail::quote_if_needed(r.label, ',') << ',' << detail::best_label(r.response) << ','
        << detail::best_label(r.outcome) << ',' << detail::format_p(r.response.p_value) << ','
        << detail::format_p(r.outcome.p_value) << ',' << (r.response.significant ? 1 : 0) << ','
        << (r.outcome.significant ? 1 : 0) << '\n';
}

inline void write_pairwise(std::ostream& out, const std::vector<ComparisonReport>& reports) {
  out << "label,metric,model_a,model_b,games,median_a,median_b,a_better,b_better,zeros,p_value,"
         "preferred,significant\n";
  for (const auto& r : reports)
    for (const auto& pc : r.pairs)
      out << detail::quote_if_needed(r.label, ',') << ',' << to_string(pc.metric) << ','
          << to_string(pc.model_a) << ',' << to_string(pc.model_b) << ',' << pc.games.size() << ','
          << detail::format_number(pc.median_a) << ',' << detail::format_number(pc.median_b) << ','
          << pc.sign.negative << ',' << pc.sign.positive << ',' << pc.sign.zeros << ','
          << detail::format_p(pc.sign.p_value) << ','
          << (pc.preferred ? std::string(to_string(*pc.preferred)) : std::string("NA")) << ','
          << (pc.significant ? 1 : 0) << '\n';
}

// Per-game held-out metrics of one cross-validation run.
inline void write_cv_games(std::ostream& out, const CvResult& cv) {
  auto opt = [](const std::optional<double>& v) { return v ? detail::format_number(*v) : std::string("NA"); };
  out << "game_id,fold,home,away,neutral.site,predicted,pred_home_response,pred_away_response,"
         "home_win_probability,log_loss,abs_residual\n";
  for (const auto& g : cv.games)
    out << detail::quote_if_needed(g.record.game_id, ',') << ',' << g.fold << ','
        << detail::quote_if_needed(g.record.home_team, ',') << ','
        << detail::quote_if_needed(g.record.away_team, ',') << ',' << (g.record.neutral_site ? 1 : 0)
        << ',' << (g.predicted ? 1 : 0) << ',' << opt(g.prediction.predicted_home_response) << ','
        << opt(g.prediction.predicted_away_response) << ',' << opt(g.prediction.home_win_probability)
        << ',' << opt(g.log_loss) << ',' << opt(g.abs_residual) << '\n';
}

}  // namespace mvglmm
