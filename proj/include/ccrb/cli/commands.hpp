#pragma once

// The ccrb command line: bound, mc, verify and counterexamples.
//
// Exit codes: 0 success, 1 usage or config error, 2 bound computed but
// infeasible, 3 property-suite failure.

#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ccrb/cli/config.hpp"
#include "ccrb/cli/json_io.hpp"
#include "ccrb/crb.hpp"
#include "ccrb/models.hpp"
#include "ccrb/tangent.hpp"
#include "ccrb/verify.hpp"

namespace ccrb::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitInfeasible = 2, kExitPropertyFailure = 3 };

constexpr std::uint64_t kBuiltinSeed = 1;
constexpr const char* kSeedEnv = "CCRB_DEFAULT_SEED";

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  int trials = 1000;
  unsigned threads = 1;
};

/// --seed, then the config's "seed", then CCRB_DEFAULT_SEED, then 1.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const std::optional<std::uint64_t>& config) {
  if (flag) return *flag;
  if (config) return *config;
  if (const char* env = std::getenv(kSeedEnv); env && *env) {
    const std::string s(env);
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
      throw ConfigError(std::string(kSeedEnv) + " must be an unsigned 64-bit integer, got '" + s + "'");
    }
    return v;
  }
  return kBuiltinSeed;
}

inline ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) throw ConfigError("--config is required");
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  Json j;
  try {
    j = Json::parse(buf.str());
  } catch (const Json::parse_error& e) {
    throw ConfigError("config error: invalid JSON in '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

/// Writes to path, or to out when path is empty.
inline void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  f << text;
  if (!f) throw ConfigError("cannot write '" + path + "'");
}

/// Companion CSV path: the JSON path with its extension replaced by .csv.
inline std::string csv_path_for(const std::string& json_path) {
  const auto slash = json_path.find_last_of('/');
  const auto dot = json_path.find_last_of('.');
  const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
  return (has_ext ? json_path.substr(0, dot) : json_path) + ".csv";
}

class WallClock {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Bound evaluation at one grid point

struct GridPoint {
  double sigma = 1.0;
  std::optional<int> k;
};

struct EvaluatedPoint {
  ConstraintSet set;
  Vec theta;
  double sigma = 1.0;
  SymMat j;
  Mat db;
  TangentSpan span;
  BoundResult bound;
  BoundResult unconstrained;
  std::optional<Estimator> estimator;
  std::string estimator_type;
  std::optional<SphereCalibration> calibration;
  std::optional<BiasGradientEstimate> bias_estimate;
};

inline Estimator make_estimator(const EstimatorChoice& choice, const ConstraintSet& set, double sigma,
                                const ExperimentConfig& c, std::uint64_t seed, const McOptions& opt,
                                std::optional<SphereCalibration>& calibration) {
  const Eigen::Index k = set.ambient_dim();
  if (choice.type == "ml") return ml_estimator(set);
  if (choice.type == "identity") return estimators::Linear{Mat::Identity(k, k)};
  if (choice.type == "linear") {
    if (choice.matrix.rows() != k || choice.matrix.cols() != k) {
      throw ConfigError("config error: 'estimator.matrix' must be " + std::to_string(k) + " x " + std::to_string(k));
    }
    return estimators::Linear{choice.matrix};
  }
  if (!set.get_if<sets::Sphere>()) throw ConfigError("config error: 'estimator.type' unbiased_sphere needs a sphere set");
  if (choice.a) return estimators::UnbiasedSphere{*choice.a};
  calibration = calibrate_sphere_a(static_cast<int>(k), sigma, c.calibration_n, seed + 1, opt);
  return estimators::UnbiasedSphere{calibration->a};
}

inline EvaluatedPoint evaluate_point(const ExperimentConfig& c, const GridPoint& g, std::uint64_t seed,
                                     const McOptions& opt, bool need_estimator, bool need_unconstrained) {
  const Tolerances& tol = c.tol;
  Json set_json = c.set;
  if (g.k) set_json["k"] = *g.k;
  EvaluatedPoint p{set_from_json(set_json), Vec(), g.sigma, SymMat(), Mat(), TangentSpan(), {}, {}, {}, {}, {}, {}};
  p.theta = theta_from_json(c.theta, p.set);
  const GaussianDenoiseModel model(p.set, g.sigma);
  model.mean_observation(p.theta, tol);
  const Eigen::Index k = p.set.ambient_dim();
  if (c.fisher) {
    if (c.fisher->rows() != k || c.fisher->cols() != k) {
      throw ConfigError("config error: 'fisher' must be " + std::to_string(k) + " x " + std::to_string(k));
    }
    p.j = SymMat(*c.fisher, tol.sym_tol);
  } else {
    p.j = fisher(model, p.theta);
  }
  p.span = tangent_span(p.set, p.theta, tol);

  if (need_estimator || c.estimator || c.estimate_bias) {
    const EstimatorChoice choice = c.estimator.value_or(EstimatorChoice{"ml", std::nullopt, Mat()});
    p.estimator_type = choice.type;
    p.estimator = make_estimator(choice, p.set, g.sigma, c, seed, opt, p.calibration);
  }

  if (c.bias_gradient) {
    if (c.bias_gradient->rows() != k || c.bias_gradient->cols() != k) {
      throw ConfigError("config error: 'bias_gradient' must be " + std::to_string(k) + " x " + std::to_string(k));
    }
    p.db = *c.bias_gradient;
  } else if (c.estimate_bias) {
    if (c.n < 2) throw ConfigError("config error: 'n' (>= 2) is required when 'bias_gradient' is \"estimate\"");
    const double step = c.bias_step.value_or(default_bias_step(g.sigma));
    p.bias_estimate = mc_bias_gradient(*p.estimator, model, p.theta, p.span, step, c.n, seed + 2, opt, tol);
    // Only the action of db on the tangent span enters the bound.
    p.db = p.span.d > 0 ? Mat(p.bias_estimate->db_tangent * pinv(p.span.v, tol)) : Mat(Mat::Zero(k, k));
  } else {
    p.db = Mat::Zero(k, k);
  }

  const FisherContext ctx(p.j, p.db, tol);
  p.bound = constrained_crb(ctx, p.span, tol);
  if (need_unconstrained) p.unconstrained = unconstrained_crb(ctx, tol);
  return p;
}

inline Json bound_to_json(const BoundResult& b, bool with_matrix) {
  Json j{{"rule", to_string(b.rule)}, {"feasible", b.feasible}};
  if (with_matrix) j["matrix"] = matrix_to_json(b.bound);
  j["trace"] = b.bound.matrix().trace();
  return j;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_bound(const RunOptions& ro, std::ostream& out) {
  const WallClock clock;
  const ExperimentConfig c = load_config(ro.config);
  const std::uint64_t seed = resolve_seed(ro.seed, c.seed);
  const McOptions opt{ro.threads};
  const EvaluatedPoint p = evaluate_point(c, GridPoint{c.sigma, std::nullopt}, seed, opt, false, true);

  Json j;
  j["command"] = "bound";
  j["config"] = c.echo;
  j["seed"] = seed;
  j["set"] = Json{{"type", p.set.name()}, {"ambient_dim", p.set.ambient_dim()}};
  j["theta"] = vector_to_json(p.theta);
  j["sigma"] = p.sigma;
  j["d"] = p.span.d;
  j["projector"] = matrix_to_json(p.span.pi);
  j["fisher"] = matrix_to_json(p.j);
  j["bias_gradient"] = matrix_to_json(p.db);
  if (p.calibration) j["calibration"] = Json{{"a", p.calibration->a}, {"se", p.calibration->se}};
  if (p.bias_estimate) {
    j["bias_gradient_estimate"] = Json{{"tangent", matrix_to_json(p.bias_estimate->db_tangent)},
                                       {"se", matrix_to_json(p.bias_estimate->se)},
                                       {"step", p.bias_estimate->step},
                                       {"n", c.n}};
  }
  j["rule"] = to_string(p.bound.rule);
  j["feasible"] = p.bound.feasible;
  j["bound"] = matrix_to_json(p.bound.bound);
  j["trace"] = p.bound.bound.matrix().trace();
  j["unconstrained"] = bound_to_json(p.unconstrained, true);
  j["wall_time_s"] = clock.seconds();
  emit(to_json_string(j), ro.out.empty() ? c.output : ro.out, out);
  return p.bound.feasible ? kExitOk : kExitInfeasible;
}

inline const char* kMcCsvHelp =
    "CSV output (one row per grid point):\n"
    "  k                ambient dimension of the parameter\n"
    "  sigma            noise standard deviation\n"
    "  n                Monte Carlo sample count\n"
    "  empirical_trace  trace of the empirical MSE matrix, mean of |est - theta|^2\n"
    "  bound_trace      trace of the constrained bound\n"
    "  verdict          holds | fails: empirical covariance >= bound within 6 standard\n"
    "                   errors (statistic \"trace\": empirical_trace >= bound_trace - 6 se)\n"
    "The CSV goes to the config's \"csv\" path, else next to the JSON output\n"
    "(--out or \"output\") with extension .csv; with neither it is not written.\n";

inline int cmd_mc(const RunOptions& ro, std::ostream& out) {
  const WallClock clock;
  const ExperimentConfig c = load_config(ro.config);
  if (c.n < 2) throw ConfigError("config error: 'n' (>= 2) is required for mc");
  const std::uint64_t seed = resolve_seed(ro.seed, c.seed);
  const McOptions opt{ro.threads};

  std::vector<GridPoint> grid;
  if (c.sweep) {
    for (double v : c.sweep->values) {
      grid.push_back(c.sweep->param == "sigma" ? GridPoint{v, std::nullopt} : GridPoint{c.sigma, static_cast<int>(v)});
    }
  } else {
    grid.push_back({c.sigma, std::nullopt});
  }

  CsvTable csv({"k", "sigma", "n", "empirical_trace", "bound_trace", "verdict"});
  Json points = Json::array();
  bool all_feasible = true;
  for (const GridPoint& g : grid) {
    const EvaluatedPoint p = evaluate_point(c, g, seed, opt, true, false);
    const GaussianDenoiseModel model(p.set, p.sigma);
    const Eigen::Index k = p.set.ambient_dim();
    const bool full = c.statistic == "matrix";
    const double bound_trace = p.bound.bound.matrix().trace();
    all_feasible = all_feasible && p.bound.feasible;

    Json pj;
    pj["k"] = k;
    pj["sigma"] = p.sigma;
    pj["n"] = c.n;
    if (full) pj["theta"] = vector_to_json(p.theta);
    pj["estimator"] = Json{{"type", p.estimator_type}};
    if (const auto* us = std::get_if<estimators::UnbiasedSphere>(&*p.estimator)) pj["estimator"]["a"] = us->a;
    if (p.calibration) {
      pj["calibration"] = Json{{"a", p.calibration->a},
                               {"se", p.calibration->se},
                               {"n", c.calibration_n},
                               {"seed", seed + 1}};
    }
    if (p.bias_estimate) {
      pj["bias_gradient_estimate"] = Json{{"tangent", matrix_to_json(p.bias_estimate->db_tangent)},
                                          {"se", matrix_to_json(p.bias_estimate->se)},
                                          {"step", p.bias_estimate->step},
                                          {"seed", seed + 2}};
    }
    if (full) pj["bias_gradient"] = matrix_to_json(p.db);
    pj["bound"] = bound_to_json(p.bound, full);

    double empirical_trace = 0.0;
    bool holds = false;
    if (full) {
      const McReport rep = mc_report(*p.estimator, model, p.theta, c.n, seed, opt, c.tol);
      const EmpiricalVerdict v = bound_vs_empirical(rep, p.bound);
      empirical_trace = rep.mse.matrix().trace();
      holds = v.holds;
      pj["empirical"] = Json{{"mean", vector_to_json(rep.mean)},
                             {"bias", vector_to_json(rep.bias)},
                             {"cov", matrix_to_json(rep.cov)},
                             {"mse", matrix_to_json(rep.mse)},
                             {"cov_trace", rep.cov.matrix().trace()},
                             {"mse_trace", empirical_trace}};
      pj["verdict"] = Json{{"holds", v.holds},
                           {"compares", "cov - bound"},
                           {"min_eigenvalue", v.min_eigenvalue},
                           {"slack", v.slack},
                           {"c", kMcSlackSe}};
    } else {
      const McTraceReport rep = mc_mse_trace(*p.estimator, model, p.theta, c.n, seed, opt, c.tol);
      const double slack = kMcSlackSe * rep.se;
      empirical_trace = rep.mse_trace;
      holds = rep.mse_trace >= bound_trace - slack;
      pj["empirical"] = Json{{"mse_trace", rep.mse_trace}, {"se", rep.se}};
      pj["verdict"] = Json{{"holds", holds},
                           {"compares", "mse_trace - bound_trace"},
                           {"difference", rep.mse_trace - bound_trace},
                           {"slack", slack},
                           {"c", kMcSlackSe}};
    }
    points.push_back(std::move(pj));
    csv.add_row({std::to_string(k), format_double(p.sigma), std::to_string(c.n), format_double(empirical_trace),
                 format_double(bound_trace), holds ? "holds" : "fails"});
  }

  const std::string json_path = ro.out.empty() ? c.output : ro.out;
  const std::string csv_file = !c.csv.empty() ? c.csv : (json_path.empty() ? std::string() : csv_path_for(json_path));

  Json j;
  j["command"] = "mc";
  j["config"] = c.echo;
  j["seed"] = seed;
  j["statistic"] = c.statistic;
  j["points"] = std::move(points);
  j["wall_time_s"] = clock.seconds();

  if (!csv_file.empty()) {
    std::ostringstream cs;
    csv.write(cs);
    emit(cs.str(), csv_file, out);
  }
  emit(to_json_string(j), json_path, out);
  return all_feasible ? kExitOk : kExitInfeasible;
}

inline int cmd_verify(const std::string& suite, const RunOptions& ro, std::ostream& out, std::ostream& err) {
  const WallClock clock;
  const std::vector<std::string> known = verify::suite_names();
  std::vector<std::string> names;
  if (suite == "all") {
    names = known;
  } else if (std::find(known.begin(), known.end(), suite) != known.end()) {
    names = {suite};
  } else {
    std::string list;
    for (const auto& n : known) list += " " + n;
    err << "unknown suite '" << suite << "'; expected all or one of:" << list << "\n";
    return kExitUsage;
  }
  const std::uint64_t seed = resolve_seed(ro.seed, std::nullopt);

  bool all_ok = true;
  Json suites = Json::array();
  for (const auto& name : names) {
    const verify::SuiteResult r = verify::run_suite(name, ro.trials, seed);
    Json props = Json::array();
    for (const auto& p : r.properties) {
      out << name << "." << p.name << " passed=" << p.passed << " failed=" << p.failed << " excluded=" << p.excluded
          << " " << (p.ok() ? "PASS" : "FAIL") << "\n";
      props.push_back(
          Json{{"name", p.name}, {"passed", p.passed}, {"failed", p.failed}, {"excluded", p.excluded}, {"ok", p.ok()}});
    }
    out << "suite " << name << ": " << (r.ok() ? "PASS" : "FAIL") << "\n";
    all_ok = all_ok && r.ok();
    suites.push_back(Json{{"suite", name}, {"ok", r.ok()}, {"properties", std::move(props)}});
  }
  if (!ro.out.empty()) {
    Json j{{"command", "verify"}, {"suite", suite}, {"trials", ro.trials}, {"seed", seed}, {"ok", all_ok},
           {"suites", std::move(suites)}, {"wall_time_s", clock.seconds()}};
    emit(to_json_string(j), ro.out, out);
  }
  return all_ok ? kExitOk : kExitPropertyFailure;
}

inline int cmd_counterexamples(const RunOptions& ro, std::ostream& out) {
  const WallClock clock;
  const verify::Counterexamples cx = verify::counterexamples();
  const verify::SuiteResult r = verify::counterexamples_suite();
  Json props = Json::array();
  for (const auto& p : r.properties) props.push_back(Json{{"name", p.name}, {"ok", p.ok()}});
  Json j;
  j["command"] = "counterexamples";
  j["singular_fisher_dominance"] = Json{{"fisher", matrix_to_json(cx.j)},
                                        {"w", matrix_to_json(cx.w)},
                                        {"fisher_pinv", matrix_to_json(cx.j_pinv)},
                                        {"bound", matrix_to_json(cx.bound)},
                                        {"pinv_dominates_bound", cx.pinv_dominates}};
  j["column_space_dependence"] = Json{{"fisher", matrix_to_json(cx.j2)},
                                      {"w1", matrix_to_json(cx.w1)},
                                      {"w2", matrix_to_json(cx.w2)},
                                      {"bound1", matrix_to_json(cx.bound1)},
                                      {"bound2", matrix_to_json(cx.bound2)},
                                      {"max_abs_difference", cx.max_diff},
                                      {"monotonicity", to_string(cx.verdict)}};
  j["properties"] = std::move(props);
  j["reproduced"] = r.ok();
  j["wall_time_s"] = clock.seconds();
  emit(to_json_string(j), ro.out, out);
  return r.ok() ? kExitOk : kExitPropertyFailure;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Constrained Cramer-Rao bounds: compute, simulate and verify.", "ccrb"};
  app.require_subcommand(1);
  app.footer(std::string("Exit codes: 0 success, 1 usage/config error, 2 bound infeasible, 3 property failure.\n"
                         "Seeds: --seed, else the config's \"seed\", else $") +
             kSeedEnv + ", else " + std::to_string(kBuiltinSeed) + ".");

  RunOptions ro;
  std::optional<std::uint64_t> seed;
  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", seed, "RNG seed (u64)"); };
  auto add_out = [&](CLI::App* sub, const char* what) { sub->add_option("--out", ro.out, what); };
  auto add_config = [&](CLI::App* sub) { sub->add_option("--config", ro.config, "JSON experiment config")->required(); };
  auto add_threads = [&](CLI::App* sub) {
    sub->add_option("--threads", ro.threads, "Monte Carlo worker threads, 0 = all cores (results do not depend on it)")
        ->check(CLI::NonNegativeNumber);
  };

  CLI::App* bound = app.add_subcommand("bound", "Constrained bound at the configured point");
  add_config(bound);
  add_seed(bound);
  add_out(bound, "JSON output path (default: config \"output\", else stdout)");
  add_threads(bound);

  CLI::App* mc = app.add_subcommand("mc", "Monte Carlo check of an estimator against the bound, optionally swept");
  add_config(mc);
  add_seed(mc);
  add_out(mc, "JSON output path (default: config \"output\", else stdout)");
  add_threads(mc);
  mc->footer(kMcCsvHelp);

  std::string suite;
  CLI::App* ver = app.add_subcommand("verify", "Run a property suite");
  ver->add_option("suite", suite, "all | schur | monotonicity | formulas | tangent | feasibility | extension | counterexamples")
      ->required();
  add_seed(ver);
  ver->add_option("--trials", ro.trials, "Random trials per property")->check(CLI::PositiveNumber);
  add_out(ver, "Also write a JSON summary here");

  CLI::App* cx = app.add_subcommand("counterexamples", "Reproduce the singular-Fisher counterexamples");
  add_out(cx, "JSON output path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  ro.seed = seed;

  try {
    if (bound->parsed()) return cmd_bound(ro, out);
    if (mc->parsed()) return cmd_mc(ro, out);
    if (ver->parsed()) return cmd_verify(suite, ro, out, err);
    return cmd_counterexamples(ro, out);
  } catch (const ConfigError& e) {
    err << e.what() << "\n";
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitUsage;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"ccrb"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace ccrb::cli
