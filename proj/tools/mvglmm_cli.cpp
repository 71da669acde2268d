// Command-line front end: fit, predict, rank, cv, compare and simulate.
//
// Every command writes its artifacts plus manifest.json (configuration echo,
// input and artifact SHA-256 hashes) into the output directory, chosen by
// --out, else $MVGLMM_OUT_DIR, else ./mvglmm_out.
//
// Exit status: 0 success, 1 error (one-line cause on stderr), 2 usage error,
// 3 fit did not converge (artifacts are still written, flagged).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <CLI11.hpp>

#include "mvglmm/mvglmm.hpp"

namespace fs = std::filesystem;
using namespace mvglmm;

namespace {

constexpr int exit_error = 1;
constexpr int exit_usage = 2;
constexpr int exit_not_converged = 3;

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-256 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Options shared by the subcommands; unused ones are ignored.
struct RunConfig {
  std::string command;
  std::string data_path;
  std::string fit_path;
  std::string method = "NB";
  std::vector<std::string> methods;
  std::string out_dir;
  std::uint64_t seed = 1;
  std::size_t folds = 10;
  int max_iter = 500;
  double tol = 1e-6;
  bool hessian = false;
  bool plain_em = false;
  bool independent_blocks = false;
  std::string delimiter = ",";
  std::string home, away;
  bool neutral = false;
  std::string by = "win_propensity";
  std::string profile = "ypp";
  std::size_t teams = 40;
  std::size_t games_per_team = 10;
  bool dump_design = false;
  std::string label;
};

char delimiter_char(const std::string& d) {
  if (d == "tab" || d == "\\t" || d == "\t") return '\t';
  if (d.size() != 1) throw ValidationError("delimiter must be a single character or 'tab'");
  return d[0];
}

ModelSpec make_spec(const RunConfig& c, const std::string& method) {
  ModelSpec s;
  s.method = parse_method(method);
  s.max_em_iterations = c.max_iter;
  s.em_tolerance = c.tol;
  s.compute_hessian = c.hessian;
  s.accelerate = !c.plain_em;
  s.independent_blocks = c.independent_blocks;
  s.validate();
  return s;
}

Dataset load(const RunConfig& c, const ModelSpec& spec) {
  if (c.data_path.empty()) throw ValidationError("--data is required");
  std::ifstream in(c.data_path);
  if (!in) throw Error("cannot open data file '" + c.data_path + "'");
  return load_dataset(in, spec, delimiter_char(c.delimiter));
}

// Collects artifacts in memory, writes them and records their hashes.
class Artifacts {
 public:
  explicit Artifacts(const RunConfig& c) : cfg_(c) {
    dir_ = c.out_dir;
    if (dir_.empty()) {
      const char* env = std::getenv("MVGLMM_OUT_DIR");
      dir_ = (env != nullptr && *env != '\0') ? env : "mvglmm_out";
    }
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }

  void write(const std::string& name, const std::string& content) {
    const fs::path p = dir_ / name;
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write '" + p.string() + "'");
    out << content;
    out.close();
    if (!out) throw Error("failed writing '" + p.string() + "'");
    hashes_[name] = sha256_hex(content);
  }

  void input(const std::string& role, const std::string& path) {
    if (!path.empty()) inputs_[role] = {path, sha256_hex(read_file(path))};
  }

  // The manifest carries no timestamps, so reruns are byte-identical.
  void manifest(int status) {
    Json j;
    j["tool"] = "mvglmm";
    j["version"] = "0.1.0";
    j["command"] = cfg_.command;
    Json c;
    c["method"] = cfg_.method;
    c["methods"] = cfg_.methods;
    c["seed"] = cfg_.seed;
    c["folds"] = cfg_.folds;
    c["max_iter"] = cfg_.max_iter;
    c["tol"] = cfg_.tol;
    c["hessian"] = cfg_.hessian;
    c["plain_em"] = cfg_.plain_em;
    c["independent_blocks"] = cfg_.independent_blocks;
    c["delimiter"] = cfg_.delimiter;
    if (cfg_.command == "predict") {
      c["home"] = cfg_.home;
      c["away"] = cfg_.away;
      c["neutral"] = cfg_.neutral;
    }
    if (cfg_.command == "rank") c["by"] = cfg_.by;
    if (cfg_.command == "simulate") {
      c["profile"] = cfg_.profile;
      c["teams"] = cfg_.teams;
      c["games_per_team"] = cfg_.games_per_team;
    }
    j["config"] = std::move(c);
    Json in = Json::object();
    for (const auto& [role, v] : inputs_) in[role] = {{"path", v.first}, {"sha256", v.second}};
    j["inputs"] = std::move(in);
    Json arts = Json::object();
    for (const auto& [name, h] : hashes_) arts[name] = h;
    j["artifacts"] = std::move(arts);
    j["exit_status"] = status;
    const std::string text = j.dump(2) + "\n";
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write manifest.json");
  }

 private:
  const RunConfig& cfg_;
  fs::path dir_;
  std::map<std::string, std::string> hashes_;
  std::map<std::string, std::pair<std::string, std::string>> inputs_;
};

std::string fixed(double v, int digits = 7) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void print_matrix(std::ostream& os, const std::vector<std::string>& labels, const Eigen::MatrixXd& m) {
  std::size_t w = 10;
  for (const auto& l : labels) w = std::max(w, l.size() + 1);
  os << "     ";
  for (const auto& l : labels) os << std::setw(static_cast<int>(w)) << l;
  os << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    os << std::left << std::setw(5) << ("[" + std::to_string(r + 1) + ",]") << std::right;
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << std::setw(static_cast<int>(w)) << fixed(m(r, c));
    os << '\n';
  }
}

std::string fit_summary(const FitResult& f, const Dataset* data) {
  std::ostringstream os;
  os << "Method: " << to_string(f.spec.method) << '\n';
  if (data != nullptr) {
    const auto s = data->summary();
    os << "Data: " << s.teams << " teams, " << s.original_games << " games";
    if (s.ties > 0) os << " (" << s.ties << " ties expanded)";
    os << '\n';
  }
  const auto& d = f.diagnostics;
  os << "Converged: " << (d.converged ? "yes" : "NO") << " (" << d.em_iterations
     << " EM iterations, final relative change " << d.final_parameter_change << ")\n";
  os << "Marginal log-likelihood (" << d.approximation << "): " << fixed(f.marginal_loglik, 6) << "\n\n";
  os << "parameters:\n";
  for (std::size_t k = 0; k < f.parameter_names.size(); ++k)
    os << "  " << std::left << std::setw(22) << f.parameter_names[k] << std::right
       << fixed(f.parameter_values[static_cast<Eigen::Index>(k)]) << '\n';
  const auto labels = detail::component_labels(f.spec.method);
  os << "\nG:\n";
  print_matrix(os, labels, f.G);
  os << "\nG.cor:\n";
  print_matrix(os, labels, f.G_cor);
  if (f.R) {
    os << "\nR:\n";
    print_matrix(os, {"Home", "Away"}, *f.R);
    os << "\nR.cor:\n";
    print_matrix(os, {"Home", "Away"}, *f.R_cor);
  }
  if (f.spec.game_effect()) os << "\nGame variance: " << fixed(f.params.sigma2_g) << '\n';
  if (d.hessian) {
    const auto& h = *d.hessian;
    os << "\nHessian diagnostics:\n";
    os << "  positive-definite: " << (h.positive_definite ? "yes" : "no") << '\n';
    os << "  condition number of the inverse-Hessian correlation matrix: "
       << (h.condition_number ? fixed(*h.condition_number, 4) : std::string("unavailable")) << '\n';
    os << "  near-singular (threshold " << near_singular_condition << "): " << (h.near_singular ? "yes" : "no")
       << '\n';
  }
  if (f.hessian && has_scores(f.spec.method)) {
    const auto c = home_away_contrast(f);
    os << "\nHome - away location contrast: " << fixed(c.estimate, 6);
    if (c.available)
      os << " (SE " << fixed(c.std_error, 6) << ", z " << fixed(c.z, 3) << ", p " << c.p_value << ")\n";
    else
      os << " (" << c.note << ")\n";
  }
  if (!d.warnings.empty()) {
    os << "\nwarnings:\n";
    for (const auto& w : d.warnings) os << "  - " << w << '\n';
  }
  return os.str();
}

std::string to_text(const std::function<void(std::ostream&)>& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

// Loads --fit, or fits --data inline when no fit document is given.
FitResult obtain_fit(const RunConfig& c, Artifacts& art) {
  if (!c.fit_path.empty()) {
    std::ifstream in(c.fit_path);
    if (!in) throw Error("cannot open fit document '" + c.fit_path + "'");
    art.input("fit", c.fit_path);
    return read_fit(in);
  }
  const ModelSpec spec = make_spec(c, c.method);
  const Dataset data = load(c, spec);
  art.input("data", c.data_path);
  return fit(data, spec);
}

int run_fit(const RunConfig& c) {
  Artifacts art(c);
  const ModelSpec spec = make_spec(c, c.method);
  const Dataset data = load(c, spec);
  art.input("data", c.data_path);
  if (c.dump_design) {
    const ModelData md = ModelData::build(data, spec);
    if (spec.scores()) {
      art.write("design_X.txt", to_text([&](std::ostream& o) { write_triplets(o, md.score.X); }));
      art.write("design_Z.txt", to_text([&](std::ostream& o) { write_triplets(o, md.score.Z); }));
    }
    if (spec.binary())
      art.write("design_S.txt", to_text([&](std::ostream& o) { write_triplets(o, md.binary.S); }));
  }
  const FitResult f = fit(data, spec);
  const std::string summary = fit_summary(f, &data);
  art.write("fit.json", to_text([&](std::ostream& o) { write_fit(o, f); }));
  art.write("ratings.csv", to_text([&](std::ostream& o) { write_ratings(o, f); }));
  if (spec.scores() && spec.binary())
    art.write("rating_scatter.csv",
              to_text([&](std::ostream& o) { write_rating_scatter(o, emit_rating_scatter(f)); }));
  art.write("summary.txt", summary);
  std::cout << summary;
  const int status = f.diagnostics.converged ? 0 : exit_not_converged;
  art.manifest(status);
  if (status != 0) std::cerr << "mvglmm: fit did not converge; artifacts written with the flag set\n";
  return status;
}

int run_predict(const RunConfig& c) {
  Artifacts art(c);
  const FitResult f = obtain_fit(c, art);
  const GamePrediction g = predict_game(f, c.home, c.away, c.neutral);
  const std::string text = format_prediction(g);
  art.write("prediction.txt", text);
  art.write("prediction.json", to_json(g).dump(2) + "\n");
  std::cout << text;
  art.manifest(0);
  return 0;
}

int run_rank(const RunConfig& c) {
  Artifacts art(c);
  const FitResult f = obtain_fit(c, art);
  const Effect e = parse_effect(c.by);
  const auto ranked = rank_teams(f, e);
  std::ostringstream csv, txt;
  csv << "rank,team," << effect_name(e) << '\n';
  for (const auto& r : ranked) {
    csv << r.rank << ',' << detail::quote_if_needed(r.team, ',') << ',' << detail::format_number(r.rating) << '\n';
    txt << std::setw(4) << r.rank << "  " << std::left << std::setw(32) << r.team << std::right
        << fixed(r.rating, 4) << '\n';
  }
  art.write(std::string("ranking_") + effect_name(e) + ".csv", csv.str());
  std::cout << txt.str();
  art.manifest(0);
  return 0;
}

std::string cv_summary_row(const CvResult& r) {
  auto num = [](double v) { return std::isnan(v) ? std::string("NA") : detail::format_number(v); };
  std::ostringstream os;
  os << to_string(r.method) << ',' << r.folds.size() << ',' << r.failed_folds() << ','
     << r.predicted_games() << ',' << num(mean_metric(r, Metric::log_loss)) << ','
     << num(median_metric(r, Metric::log_loss)) << ',' << num(mean_metric(r, Metric::abs_residual)) << ','
     << num(median_metric(r, Metric::abs_residual)) << '\n';
  return os.str();
}

constexpr const char* cv_summary_header =
    "method,folds,failed_folds,games_predicted,mean_log_loss,median_log_loss,mean_abs_residual,"
    "median_abs_residual\n";

std::vector<CvResult> run_cv_methods(const RunConfig& c, const std::vector<std::string>& methods,
                                     Artifacts& art) {
  // Load with the broadest requirement so every method sees the same games.
  ModelSpec load_spec = make_spec(c, methods.front());
  bool need_scores = false, need_binary = false;
  ScoreFamily fam = ScoreFamily::none;
  for (const auto& m : methods) {
    const Method mm = parse_method(m);
    need_scores |= has_scores(mm);
    need_binary |= has_binary(mm);
    if (score_family(mm) == ScoreFamily::poisson) fam = ScoreFamily::poisson;
    if (score_family(mm) == ScoreFamily::normal && fam == ScoreFamily::none) fam = ScoreFamily::normal;
  }
  if (need_scores && need_binary)
    load_spec.method = fam == ScoreFamily::poisson ? Method::PB0 : Method::NB;
  else if (need_scores)
    load_spec.method = fam == ScoreFamily::poisson ? Method::P0 : Method::N;
  else
    load_spec.method = Method::B;
  const Dataset data = load(c, load_spec);
  art.input("data", c.data_path);
  const CvPlan plan = CvPlan::make(data.original_games(), c.folds, c.seed);
  std::vector<CvResult> out;
  for (const auto& m : methods) {
    const ModelSpec spec = make_spec(c, m);
    std::cerr << "mvglmm: cross-validating " << m << " (" << c.folds << " folds)\n";
    out.push_back(cross_validate(data, spec, plan));
    const auto& r = out.back();
    art.write("cv_" + m + ".csv", to_text([&](std::ostream& o) { write_cv_games(o, r); }));
    for (const auto& f : r.folds)
      if (f.failed) std::cerr << "mvglmm: " << m << " fold " << f.fold << " failed: " << f.error << '\n';
  }
  return out;
}

int run_cv(const RunConfig& c) {
  Artifacts art(c);
  const auto runs = run_cv_methods(c, {c.method}, art);
  const std::string summary = std::string(cv_summary_header) + cv_summary_row(runs.front());
  art.write("cv_summary.csv", summary);
  std::cout << summary;
  const int status = runs.front().failed_folds() == runs.front().folds.size() ? exit_error : 0;
  art.manifest(status);
  if (status != 0) std::cerr << "mvglmm: every fold failed\n";
  return status;
}

int run_compare(const RunConfig& c) {
  if (c.methods.size() < 2) throw ValidationError("--methods needs at least two models, e.g. B,NB");
  Artifacts art(c);
  const auto runs = run_cv_methods(c, c.methods, art);
  std::string summary = cv_summary_header;
  for (const auto& r : runs) summary += cv_summary_row(r);
  art.write("cv_summary.csv", summary);
  const ComparisonReport rep = compare_models(runs, c.label.empty() ? c.data_path : c.label);
  art.write("comparison.csv", to_text([&](std::ostream& o) { write_comparison_summary(o, {rep}); }));
  art.write("pairwise.csv", to_text([&](std::ostream& o) { write_pairwise(o, {rep}); }));
  std::cout << summary << '\n';
  write_comparison_summary(std::cout, {rep});
  std::cout << '\n';
  write_pairwise(std::cout, {rep});
  for (const auto& m : rep.excluded) std::cout << "note: " << m << " excluded (every fold failed)\n";
  for (const auto* v : {&rep.response, &rep.outcome})
    if (!v->note.empty()) std::cout << "note (" << to_string(v->metric) << "): " << v->note << '\n';
  for (const auto& pc : rep.pairs)
    if (!pc.sign.defined)
      std::cout << "note: " << to_string(pc.model_a) << " vs " << to_string(pc.model_b) << " ("
                << to_string(pc.metric) << "): every difference is zero; sign test undefined\n";
  std::cout << "* indicates a significant preference (sign test, p < 0.05)\n";
  art.manifest(0);
  return 0;
}

SimulationProfile parse_profile(const std::string& s) {
  if (s == "ypp" || s == "yards_per_play") return SimulationProfile::yards_per_play;
  if (s == "sacks") return SimulationProfile::sacks;
  if (s == "fumbles") return SimulationProfile::fumbles;
  if (s == "independent") return SimulationProfile::independent;
  if (s == "scores") return SimulationProfile::scores;
  throw ValidationError("unknown profile '" + s + "' (ypp, sacks, fumbles, independent, scores)");
}

int run_simulate(const RunConfig& c) {
  Artifacts art(c);
  const auto sim = simulate_season(profile_config(parse_profile(c.profile), c.teams, c.games_per_team, c.seed));
  art.write("season.csv", to_text([&](std::ostream& o) { write_dataset(o, sim.data, delimiter_char(c.delimiter)); }));
  std::cout << "wrote " << (art.dir() / "season.csv").string() << " (" << sim.data.p() << " teams, "
            << sim.data.original_games() << " games)\n";
  art.manifest(0);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multivariate GLMM team ratings for paired-competition data"};
  app.require_subcommand(1);
  RunConfig c;

  auto common = [&](CLI::App* s) {
    s->add_option("--out", c.out_dir, "Output directory (default $MVGLMM_OUT_DIR or ./mvglmm_out)");
    s->add_option("--delimiter", c.delimiter, "Field delimiter of data files (',' or 'tab')");
  };
  auto solver = [&](CLI::App* s) {
    s->add_option("--data", c.data_path, "Game data file (home, away, neutral.site, responses)");
    s->add_option("--method", c.method, "Model: N, P0, P1, B, NB, PB0, PB1")->capture_default_str();
    s->add_option("--max-iter", c.max_iter, "EM iteration cap")->capture_default_str();
    s->add_option("--tol", c.tol, "EM relative parameter-change tolerance")->capture_default_str();
    s->add_flag("--hessian", c.hessian, "Compute the parameter Hessian and its condition diagnostics");
    s->add_flag("--plain-em", c.plain_em, "Disable EM extrapolation");
    s->add_flag("--independent-blocks", c.independent_blocks,
                "Constrain the (offense, defense) - win-propensity covariances to zero");
  };

  auto* fit_cmd = app.add_subcommand("fit", "Fit a model and write fit.json, ratings and a summary");
  common(fit_cmd);
  solver(fit_cmd);
  fit_cmd->add_flag("--dump-design", c.dump_design, "Also write the X, Z and S design matrices as triplets");

  auto* pred_cmd = app.add_subcommand("predict", "Predict one game from a fit document or an inline fit");
  common(pred_cmd);
  solver(pred_cmd);
  pred_cmd->add_option("--fit", c.fit_path, "fit.json written by 'fit'");
  pred_cmd->add_option("--home", c.home, "Home (first-listed) team")->required();
  pred_cmd->add_option("--away", c.away, "Away team")->required();
  pred_cmd->add_flag("--neutral", c.neutral, "Neutral-site game");

  auto* rank_cmd = app.add_subcommand("rank", "Rank teams by one rating");
  common(rank_cmd);
  solver(rank_cmd);
  rank_cmd->add_option("--fit", c.fit_path, "fit.json written by 'fit'");
  rank_cmd->add_option("--by", c.by, "offense, defense or win_propensity")->capture_default_str();

  auto* cv_cmd = app.add_subcommand("cv", "k-fold cross-validation of one model");
  common(cv_cmd);
  solver(cv_cmd);
  cv_cmd->add_option("--folds", c.folds, "Number of folds")->capture_default_str()->check(CLI::Range(2, 1000000));
  cv_cmd->add_option("--seed", c.seed, "Fold-assignment seed")->capture_default_str();

  auto* cmp_cmd = app.add_subcommand("compare", "Cross-validate several models and compare them with sign tests");
  common(cmp_cmd);
  solver(cmp_cmd);
  cmp_cmd->add_option("--methods", c.methods, "Models to compare, e.g. B,NB")->delimiter(',')->required();
  cmp_cmd->add_option("--folds", c.folds, "Number of folds")->capture_default_str()->check(CLI::Range(2, 1000000));
  cmp_cmd->add_option("--seed", c.seed, "Fold-assignment seed")->capture_default_str();
  cmp_cmd->add_option("--label", c.label, "Row label in comparison.csv (default: data path)");

  auto* sim_cmd = app.add_subcommand("simulate", "Write a synthetic season (season.csv)");
  common(sim_cmd);
  sim_cmd->add_option("--profile", c.profile, "ypp, sacks, fumbles, independent or scores")->capture_default_str();
  sim_cmd->add_option("--teams", c.teams, "Number of teams (even)")->capture_default_str();
  sim_cmd->add_option("--games-per-team", c.games_per_team, "Rounds of random pairings")->capture_default_str();
  sim_cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_usage;
  }

  try {
    const std::vector<std::pair<CLI::App*, int (*)(const RunConfig&)>> commands = {
        {fit_cmd, run_fit}, {pred_cmd, run_predict}, {rank_cmd, run_rank},
        {cv_cmd, run_cv},   {cmp_cmd, run_compare},  {sim_cmd, run_simulate}};
    for (const auto& [cmd, run] : commands)
      if (cmd->parsed()) {
        c.command = cmd->get_name();
        return run(c);
      }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "mvglmm: error: " << msg << '\n';
    return exit_error;
  }
  return exit_error;
}
