#pragma once

// JSON experiment configs: strict parsing (unknown keys rejected, the
// offending key named in the message) into library inputs.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ccrb/matlin.hpp"
#include "ccrb/models.hpp"
#include "ccrb/tangent.hpp"

namespace ccrb::cli {

using Json = nlohmann::ordered_json;

/// Malformed configuration; maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string where(const std::string& ctx, const std::string& key) {
  return ctx.empty() ? key : ctx + "." + key;
}

inline void check_keys(const Json& obj, const std::set<std::string>& allowed, const std::string& ctx) {
  if (!obj.is_object()) throw ConfigError("config error: '" + (ctx.empty() ? "<root>" : ctx) + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("config error: unknown key '" + where(ctx, key) + "'");
  }
}

inline const Json& require(const Json& obj, const std::string& key, const std::string& ctx) {
  if (!obj.contains(key)) throw ConfigError("config error: missing key '" + where(ctx, key) + "'");
  return obj.at(key);
}

inline double as_number(const Json& v, const std::string& name) {
  if (!v.is_number()) throw ConfigError("config error: '" + name + "' must be a number");
  return v.get<double>();
}

inline std::int64_t as_int(const Json& v, const std::string& name) {
  if (!v.is_number_integer()) throw ConfigError("config error: '" + name + "' must be an integer");
  return v.get<std::int64_t>();
}

inline int as_dim(const Json& v, const std::string& name) {
  const std::int64_t x = as_int(v, name);
  if (x < 0 || x > std::numeric_limits<int>::max()) throw ConfigError("config error: '" + name + "' out of range");
  return static_cast<int>(x);
}

inline std::uint64_t as_u64(const Json& v, const std::string& name) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  throw ConfigError("config error: '" + name + "' must be a non-negative integer");
}

}  // namespace detail

/// {"rows": r, "cols": c, "data": [[...], ...]} with row-major data.
inline Mat matrix_from_json(const Json& j, const std::string& name) {
  detail::check_keys(j, {"rows", "cols", "data"}, name);
  const int rows = detail::as_dim(detail::require(j, "rows", name), name + ".rows");
  const int cols = detail::as_dim(detail::require(j, "cols", name), name + ".cols");
  const Json& data = detail::require(j, "data", name);
  if (!data.is_array() || static_cast<int>(data.size()) != rows) {
    throw ConfigError("config error: '" + name + ".data' must have " + std::to_string(rows) + " rows");
  }
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const Json& row = data[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      throw ConfigError("config error: '" + name + ".data' row " + std::to_string(i) + " must have " +
                        std::to_string(cols) + " entries");
    }
    for (int c = 0; c < cols; ++c) {
      m(i, c) = detail::as_number(row[static_cast<std::size_t>(c)], name + ".data");
    }
  }
  return m;
}

inline Vec vector_from_json(const Json& j, const std::string& name) {
  if (!j.is_array()) throw ConfigError("config error: '" + name + "' must be an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = detail::as_number(j[i], name);
  return v;
}

// ---------------------------------------------------------------------------
// Constraint sets

/// Builds a set from {"type": ..., params}. Equality manifolds are given by
/// quadratic constraints h_i(x) = x^T A_i x + b_i^T x + c_i; transform
/// images by an affine map g(rho) = M rho + offset.
inline ConstraintSet set_from_json(const Json& j, const std::string& ctx = "set") {
  if (!j.is_object()) throw ConfigError("config error: '" + ctx + "' must be an object");
  const std::string type = [&] {
    const Json& t = detail::require(j, "type", ctx);
    if (!t.is_string()) throw ConfigError("config error: '" + ctx + ".type' must be a string");
    return t.get<std::string>();
  }();
  auto dim = [&](const char* key) { return detail::as_dim(detail::require(j, key, ctx), detail::where(ctx, key)); };
  try {
    if (type == "euclidean") {
      detail::check_keys(j, {"type", "k"}, ctx);
      return ConstraintSet::euclidean(dim("k"));
    }
    if (type == "sphere") {
      detail::check_keys(j, {"type", "k"}, ctx);
      return ConstraintSet::sphere(dim("k"));
    }
    if (type == "stiefel") {
      detail::check_keys(j, {"type", "p", "q"}, ctx);
      return ConstraintSet::stiefel(dim("p"), dim("q"));
    }
    if (type == "orthogonal") {
      detail::check_keys(j, {"type", "p"}, ctx);
      return ConstraintSet::orthogonal(dim("p"));
    }
    if (type == "special_orthogonal") {
      detail::check_keys(j, {"type", "p"}, ctx);
      return ConstraintSet::special_orthogonal(dim("p"));
    }
    if (type == "fixed_rank") {
      detail::check_keys(j, {"type", "p", "q", "r"}, ctx);
      return ConstraintSet::fixed_rank(dim("p"), dim("q"), dim("r"));
    }
    if (type == "fixed_rank_psd") {
      detail::check_keys(j, {"type", "p", "r"}, ctx);
      return ConstraintSet::fixed_rank_psd(dim("p"), dim("r"));
    }
    if (type == "positive_definite") {
      detail::check_keys(j, {"type", "p"}, ctx);
      return ConstraintSet::positive_definite(dim("p"));
    }
    if (type == "sparse") {
      detail::check_keys(j, {"type", "k", "s"}, ctx);
      return ConstraintSet::sparse(dim("k"), dim("s"));
    }
    if (type == "equality") {
      detail::check_keys(j, {"type", "k", "quadratic"}, ctx);
      const int k = dim("k");
      const Json& qs = detail::require(j, "quadratic", ctx);
      if (!qs.is_array() || qs.empty()) throw ConfigError("config error: '" + ctx + ".quadratic' must be a non-empty array");
      std::vector<Mat> a;
      std::vector<Vec> b;
      std::vector<double> c;
      for (std::size_t i = 0; i < qs.size(); ++i) {
        const std::string qctx = ctx + ".quadratic[" + std::to_string(i) + "]";
        detail::check_keys(qs[i], {"a", "b", "c"}, qctx);
        a.push_back(qs[i].contains("a") ? matrix_from_json(qs[i]["a"], qctx + ".a") : Mat(Mat::Zero(k, k)));
        b.push_back(qs[i].contains("b") ? vector_from_json(qs[i]["b"], qctx + ".b") : Vec(Vec::Zero(k)));
        c.push_back(qs[i].contains("c") ? detail::as_number(qs[i]["c"], qctx + ".c") : 0.0);
        if (a.back().rows() != k || a.back().cols() != k || b.back().size() != k) {
          throw ConfigError("config error: '" + qctx + "' sizes must match k = " + std::to_string(k));
        }
      }
      const auto m = static_cast<Eigen::Index>(a.size());
      DifferentiableMap h{k, m,
                          [a, b, c, m](const Vec& x) -> Vec {
                            Vec out(m);
                            for (Eigen::Index i = 0; i < m; ++i) {
                              const auto s = static_cast<std::size_t>(i);
                              out(i) = x.dot(a[s] * x) + b[s].dot(x) + c[s];
                            }
                            return out;
                          },
                          [a, b, m, k](const Vec& x) -> Mat {
                            Mat out(m, k);
                            for (Eigen::Index i = 0; i < m; ++i) {
                              const auto s = static_cast<std::size_t>(i);
                              out.row(i) = ((a[s] + a[s].transpose()) * x + b[s]).transpose();
                            }
                            return out;
                          }};
      return ConstraintSet::equality(std::move(h));
    }
    if (type == "transform") {
      detail::check_keys(j, {"type", "matrix", "offset", "rho"}, ctx);
      const Mat m = matrix_from_json(detail::require(j, "matrix", ctx), ctx + ".matrix");
      const Vec off = j.contains("offset") ? vector_from_json(j["offset"], ctx + ".offset") : Vec(Vec::Zero(m.rows()));
      const Vec rho = vector_from_json(detail::require(j, "rho", ctx), ctx + ".rho");
      if (off.size() != m.rows() || rho.size() != m.cols()) {
        throw ConfigError("config error: '" + ctx + "' offset/rho sizes do not match the matrix");
      }
      return ConstraintSet::transform_image(affine_map(m, off), rho);
    }
    if (type == "product") {
      detail::check_keys(j, {"type", "factors"}, ctx);
      const Json& fs = detail::require(j, "factors", ctx);
      if (!fs.is_array() || fs.empty()) throw ConfigError("config error: '" + ctx + ".factors' must be a non-empty array");
      std::vector<ConstraintSet> factors;
      for (std::size_t i = 0; i < fs.size(); ++i) {
        factors.push_back(set_from_json(fs[i], ctx + ".factors[" + std::to_string(i) + "]"));
      }
      return ConstraintSet::product(std::move(factors));
    }
  } catch (const Error& e) {
    throw ConfigError("config error: '" + ctx + "': " + e.what());
  }
  throw ConfigError("config error: '" + ctx + ".type' has unknown value '" + type + "'");
}

/// Resolves a point: explicit array, {"rows","cols","data"} matrix
/// (vectorized column-major), or a preset: "e1", "corner"/"zero",
/// "identity" (I or its leading block for matrix sets), "image" (g(rho)).
inline Vec theta_from_json(const Json& j, const ConstraintSet& set, const std::string& name = "theta") {
  const Eigen::Index k = set.ambient_dim();
  if (j.is_array()) return vector_from_json(j, name);
  if (j.is_object()) return vec(matrix_from_json(j, name));
  if (!j.is_string()) throw ConfigError("config error: '" + name + "' must be an array, matrix or preset name");
  const std::string preset = j.get<std::string>();
  if (preset == "e1") {
    Vec e = Vec::Zero(k);
    if (k > 0) e(0) = 1.0;
    return e;
  }
  if (preset == "corner" || preset == "zero") return Vec::Zero(k);
  if (preset == "identity") {
    auto leading = [](Eigen::Index p, Eigen::Index q, Eigen::Index r) {
      Mat x = Mat::Zero(p, q);
      for (Eigen::Index i = 0; i < r; ++i) x(i, i) = 1.0;
      return vec(x);
    };
    const auto id = std::visit(overloaded{
                                   [&](const sets::Stiefel& s) -> std::optional<Vec> { return leading(s.p, s.q, s.q); },
                                   [&](const sets::OrthogonalGroup& s) -> std::optional<Vec> { return leading(s.p, s.p, s.p); },
                                   [&](const sets::SpecialOrthogonal& s) -> std::optional<Vec> { return leading(s.p, s.p, s.p); },
                                   [&](const sets::PositiveDefinite& s) -> std::optional<Vec> { return leading(s.p, s.p, s.p); },
                                   [&](const sets::FixedRank& s) -> std::optional<Vec> { return leading(s.p, s.q, s.r); },
                                   [&](const sets::FixedRankPsd& s) -> std::optional<Vec> { return leading(s.p, s.p, s.r); },
                                   [](const auto&) -> std::optional<Vec> { return std::nullopt; },
                               },
                               set.variant());
    if (!id) throw ConfigError("config error: '" + name + "' preset 'identity' needs a matrix-valued set");
    return *id;
  }
  if (preset == "image") {
    const auto* t = set.get_if<sets::TransformImage>();
    if (!t) throw ConfigError("config error: '" + name + "' preset 'image' needs a transform set");
    return t->g(t->rho);
  }
  throw ConfigError("config error: '" + name + "' has unknown preset '" + preset + "'");
}

// ---------------------------------------------------------------------------
// Experiment config

struct EstimatorChoice {
  std::string type;  // ml | identity | linear | unbiased_sphere
  std::optional<double> a;  // unbiased_sphere; absent means calibrate
  Mat matrix;               // linear
};

struct SweepChoice {
  std::string param;  // sigma | k
  std::vector<double> values;
};

struct ExperimentConfig {
  Json echo;
  Json set;
  Json theta;
  double sigma = 1.0;
  std::optional<Mat> fisher;
  std::optional<Mat> bias_gradient;
  bool estimate_bias = false;
  std::optional<double> bias_step;
  std::optional<EstimatorChoice> estimator;
  std::size_t n = 0;
  std::optional<std::uint64_t> seed;
  std::size_t calibration_n = 1000000;
  std::string statistic = "matrix";  // matrix | trace
  Tolerances tol;
  std::string output;
  std::string csv;
  std::optional<SweepChoice> sweep;
};

inline Tolerances tolerances_from_json(const Json& j) {
  detail::check_keys(j, {"rank_rel_tol", "psd_tol", "sym_tol", "incl_tol", "member_tol"}, "tolerances");
  Tolerances t;
  auto get = [&](const char* key, double& field) {
    if (j.contains(key)) field = detail::as_number(j[key], std::string("tolerances.") + key);
  };
  get("rank_rel_tol", t.rank_rel_tol);
  get("psd_tol", t.psd_tol);
  get("sym_tol", t.sym_tol);
  get("incl_tol", t.incl_tol);
  get("member_tol", t.member_tol);
  try {
    t.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("config error: 'tolerances': ") + e.what());
  }
  return t;
}

inline EstimatorChoice estimator_from_json(const Json& j) {
  detail::check_keys(j, {"type", "a", "matrix"}, "estimator");
  const Json& t = detail::require(j, "type", "estimator");
  if (!t.is_string()) throw ConfigError("config error: 'estimator.type' must be a string");
  EstimatorChoice e;
  e.type = t.get<std::string>();
  if (e.type == "ml" || e.type == "identity") {
    detail::check_keys(j, {"type"}, "estimator");
  } else if (e.type == "linear") {
    detail::check_keys(j, {"type", "matrix"}, "estimator");
    e.matrix = matrix_from_json(detail::require(j, "matrix", "estimator"), "estimator.matrix");
  } else if (e.type == "unbiased_sphere") {
    detail::check_keys(j, {"type", "a"}, "estimator");
    if (j.contains("a")) {
      if (j["a"].is_string() && j["a"].get<std::string>() == "calibrate") {
        e.a.reset();
      } else {
        e.a = detail::as_number(j["a"], "estimator.a");
      }
    }
  } else {
    throw ConfigError("config error: 'estimator.type' has unknown value '" + e.type + "'");
  }
  return e;
}

inline ExperimentConfig config_from_json(const Json& j) {
  detail::check_keys(j,
                     {"set", "theta", "model", "fisher", "bias_gradient", "bias_step", "estimator", "n", "seed",
                      "calibration_n", "statistic", "tolerances", "output", "csv", "sweep"},
                     "");
  ExperimentConfig c;
  c.echo = j;
  c.set = detail::require(j, "set", "");
  if (j.contains("tolerances")) c.tol = tolerances_from_json(j["tolerances"]);
  // Validate the set eagerly so errors surface before any computation.
  const ConstraintSet set = set_from_json(c.set);
  if (j.contains("theta")) {
    c.theta = j["theta"];
  } else if (set.get_if<sets::TransformImage>()) {
    c.theta = "image";
  } else {
    throw ConfigError("config error: missing key 'theta'");
  }
  theta_from_json(c.theta, set);
  if (j.contains("model")) {
    detail::check_keys(j["model"], {"sigma"}, "model");
    if (j["model"].contains("sigma")) c.sigma = detail::as_number(j["model"]["sigma"], "model.sigma");
  }
  if (!(c.sigma > 0.0) || !std::isfinite(c.sigma)) throw ConfigError("config error: 'model.sigma' must be > 0");
  if (j.contains("fisher")) c.fisher = matrix_from_json(j["fisher"], "fisher");
  if (j.contains("bias_gradient")) {
    if (j["bias_gradient"].is_string()) {
      if (j["bias_gradient"].get<std::string>() != "estimate") {
        throw ConfigError("config error: 'bias_gradient' must be a matrix or \"estimate\"");
      }
      c.estimate_bias = true;
    } else {
      c.bias_gradient = matrix_from_json(j["bias_gradient"], "bias_gradient");
    }
  }
  if (j.contains("bias_step")) {
    c.bias_step = detail::as_number(j["bias_step"], "bias_step");
    if (!(*c.bias_step > 0.0)) throw ConfigError("config error: 'bias_step' must be > 0");
  }
  if (j.contains("estimator")) c.estimator = estimator_from_json(j["estimator"]);
  if (j.contains("n")) {
    c.n = static_cast<std::size_t>(detail::as_u64(j["n"], "n"));
    if (c.n < 2) throw ConfigError("config error: 'n' must be >= 2");
  }
  if (j.contains("seed")) c.seed = detail::as_u64(j["seed"], "seed");
  if (j.contains("calibration_n")) {
    c.calibration_n = static_cast<std::size_t>(detail::as_u64(j["calibration_n"], "calibration_n"));
    if (c.calibration_n < 2) throw ConfigError("config error: 'calibration_n' must be >= 2");
  }
  if (j.contains("statistic")) {
    if (!j["statistic"].is_string() || (j["statistic"] != "matrix" && j["statistic"] != "trace")) {
      throw ConfigError("config error: 'statistic' must be \"matrix\" or \"trace\"");
    }
    c.statistic = j["statistic"].get<std::string>();
  }
  if (j.contains("output")) {
    if (!j["output"].is_string()) throw ConfigError("config error: 'output' must be a path string");
    c.output = j["output"].get<std::string>();
  }
  if (j.contains("csv")) {
    if (!j["csv"].is_string()) throw ConfigError("config error: 'csv' must be a path string");
    c.csv = j["csv"].get<std::string>();
  }
  if (j.contains("sweep")) {
    const Json& s = j["sweep"];
    detail::check_keys(s, {"param", "values"}, "sweep");
    const Json& p = detail::require(s, "param", "sweep");
    if (!p.is_string() || (p != "sigma" && p != "k")) throw ConfigError("config error: 'sweep.param' must be \"sigma\" or \"k\"");
    SweepChoice sw;
    sw.param = p.get<std::string>();
    const Vec values = vector_from_json(detail::require(s, "values", "sweep"), "sweep.values");
    if (values.size() == 0) throw ConfigError("config error: 'sweep.values' must be non-empty");
    sw.values.assign(values.data(), values.data() + values.size());
    for (double v : sw.values) {
      if (sw.param == "sigma" && !(v > 0.0)) throw ConfigError("config error: 'sweep.values' sigma must be > 0");
      if (sw.param == "k" && (v < 1.0 || v != std::floor(v))) {
        throw ConfigError("config error: 'sweep.values' k must be positive integers");
      }
    }
    if (sw.param == "k" && !c.set.contains("k")) {
      throw ConfigError("config error: 'sweep.param' k needs a set with parameter 'k'");
    }
    if (sw.param == "k" && !c.theta.is_string()) {
      throw ConfigError("config error: 'theta' must be a preset when sweeping k");
    }
    c.sweep = sw;
  }
  return c;
}

}  // namespace ccrb::cli
