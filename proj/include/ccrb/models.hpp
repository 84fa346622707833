#pragma once

// Gaussian observation models, estimators and the Monte Carlo machinery
// used to check bounds empirically.
//
// Sample i of every experiment draws its noise from stream(seed, i), and
// per-block statistics are merged in a fixed pairwise tree, so every result
// is bit-identical for a given (seed, n) whatever the thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <thread>
#include <variant>
#include <vector>

#include "ccrb/crb.hpp"
#include "ccrb/matlin.hpp"
#include "ccrb/random.hpp"
#include "ccrb/tangent.hpp"

namespace ccrb {

/// y = theta + w, w ~ N(0, sigma^2 I), theta in set.
struct GaussianDenoiseModel {
  ConstraintSet set;
  double sigma;

  GaussianDenoiseModel(ConstraintSet s, double sig) : set(std::move(s)), sigma(sig) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::kInvalidArgument, "sigma must be > 0");
  }

  Eigen::Index obs_dim() const { return set.ambient_dim(); }

  Vec mean_observation(const Vec& theta, const Tolerances& tol = {}) const {
    const PointMembership m = contains(set, theta, tol);
    if (!m.in_set) throw Error(ErrorCode::kNotOnSet, "theta residual " + std::to_string(m.residual));
    return theta;
  }
};

/// y = g(rho) + w, w ~ N(0, sigma^2 I).
struct TransformedMeanModel {
  DifferentiableMap g;
  double sigma;

  TransformedMeanModel(DifferentiableMap map, double sig) : g(std::move(map)), sigma(sig) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::kInvalidArgument, "sigma must be > 0");
  }

  Eigen::Index obs_dim() const { return g.out_dim; }

  Vec mean_observation(const Vec& rho, const Tolerances& = {}) const { return g(rho); }
};

inline Vec noise(std::uint64_t seed, std::uint64_t index, Eigen::Index k, double sigma) {
  Rng rng = stream(seed, index);
  return gaussian_vector(k, rng, sigma);
}

/// n observations as columns of a k x n matrix.
template <typename Model>
Mat sample(const Model& model, const Vec& param, std::size_t n, std::uint64_t seed, const Tolerances& tol = {}) {
  const Vec mu = model.mean_observation(param, tol);
  Mat out(mu.size(), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    out.col(static_cast<Eigen::Index>(i)) = mu + noise(seed, i, mu.size(), model.sigma);
  }
  return out;
}

inline SymMat fisher(const GaussianDenoiseModel& model, const Vec& theta) {
  const Eigen::Index k = model.obs_dim();
  if (theta.size() != k) throw Error(ErrorCode::kDimMismatch, "theta size");
  return SymMat(Mat::Identity(k, k) / (model.sigma * model.sigma));
}

/// J_rho = (dg/drho)^T (dg/drho) / sigma^2.
inline SymMat fisher(const TransformedMeanModel& model, const Vec& rho) {
  const Mat u = model.g.gradient(rho);
  return symmetrize(u.transpose() * u / (model.sigma * model.sigma));
}

// ---------------------------------------------------------------------------
// Estimators

namespace estimators {

/// Maximum likelihood under Gaussian noise: metric projection onto the set.
struct MlProject {
  ConstraintSet set;
};
/// a * y / |y|.
struct UnbiasedSphere {
  double a;
};
struct Linear {
  Mat m;
};
struct Custom {
  std::function<Vec(const Vec&)> fn;
};

}  // namespace estimators

using Estimator =
    std::variant<estimators::MlProject, estimators::UnbiasedSphere, estimators::Linear, estimators::Custom>;

inline bool has_projection_rule(const ConstraintSet& set) {
  return std::visit(overloaded{
                        [](const sets::PositiveDefinite&) { return false; },
                        [](const sets::EqualityManifold&) { return false; },
                        [](const sets::TransformImage&) { return false; },
                        [](const sets::Product& p) {
                          return std::all_of(p.factors.begin(), p.factors.end(),
                                             [](const ConstraintSet& f) { return has_projection_rule(f); });
                        },
                        [](const auto&) { return true; },
                    },
                    set.variant());
}

inline Estimator ml_estimator(ConstraintSet set) {
  if (!has_projection_rule(set)) throw Error(ErrorCode::kNoProjection, set.name() + " has no projection rule");
  return estimators::MlProject{std::move(set)};
}

/// Nearest point of the set to y (the Gaussian ML estimate).
inline Vec ml_project(const ConstraintSet& set, const Vec& y) {
  require_finite(y, "y");
  return project_onto(set, y);
}

inline Vec apply_estimator(const Estimator& est, const Vec& y) {
  return std::visit(overloaded{
                        [&](const estimators::MlProject& e) -> Vec { return ml_project(e.set, y); },
                        [&](const estimators::UnbiasedSphere& e) -> Vec {
                          const double n = y.norm();
                          if (n < 1e-300) throw Error(ErrorCode::kDegenerateInput, "|y| ~ 0");
                          return e.a * y / n;
                        },
                        [&](const estimators::Linear& e) -> Vec {
                          if (e.m.cols() != y.size()) throw Error(ErrorCode::kDimMismatch, "linear estimator size");
                          return e.m * y;
                        },
                        [&](const estimators::Custom& e) -> Vec { return e.fn(y); },
                    },
                    est);
}

// ---------------------------------------------------------------------------
// Monte Carlo engine

struct McOptions {
  /// Worker threads; 0 picks std::thread::hardware_concurrency().
  unsigned threads = 1;
};

namespace detail {

constexpr std::size_t kMcBlock = 4096;

/// Running mean and centered second moment (Welford / Chan).
struct Moments {
  double count = 0.0;
  Vec mean;
  Mat m2;

  void push(const Vec& x) {
    if (count == 0.0) {
      mean = Vec::Zero(x.size());
      m2 = Mat::Zero(x.size(), x.size());
    }
    count += 1.0;
    const Vec delta = x - mean;
    mean += delta / count;
    m2.noalias() += delta * (x - mean).transpose();
  }

  static Moments merge(const Moments& a, const Moments& b) {
    if (a.count == 0.0) return b;
    if (b.count == 0.0) return a;
    Moments out;
    out.count = a.count + b.count;
    const Vec delta = b.mean - a.mean;
    out.mean = a.mean + delta * (b.count / out.count);
    out.m2 = a.m2 + b.m2 + delta * delta.transpose() * (a.count * b.count / out.count);
    return out;
  }
};

inline unsigned resolve_threads(unsigned t) {
  if (t == 0) t = std::max(1u, std::thread::hardware_concurrency());
  return t;
}

/// Moments of per_sample(i), i in [0, n), merged in a fixed pairwise tree.
template <typename PerSample>
Moments mc_moments(std::size_t n, PerSample&& per_sample, const McOptions& opt) {
  const std::size_t blocks = (n + kMcBlock - 1) / kMcBlock;
  std::vector<Moments> parts(blocks);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t b = first; b < blocks; b += stride) {
      const std::size_t lo = b * kMcBlock;
      const std::size_t hi = std::min(n, lo + kMcBlock);
      for (std::size_t i = lo; i < hi; ++i) parts[b].push(per_sample(i));
    }
  };
  const unsigned threads = std::min<std::size_t>(resolve_threads(opt.threads), std::max<std::size_t>(1, blocks));
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  while (parts.size() > 1) {
    std::vector<Moments> next((parts.size() + 1) / 2);
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] = 2 * i + 1 < parts.size() ? Moments::merge(parts[2 * i], parts[2 * i + 1]) : parts[2 * i];
    }
    parts.swap(next);
  }
  return parts.empty() ? Moments{} : parts.front();
}

}  // namespace detail

struct McReport {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  Vec mean;
  Vec bias;
  SymMat cov;  // 1/(n-1) normalization
  SymMat mse;  // cov + bias bias^T
  double se_scale = 0.0;
};

/// Empirical mean, bias, covariance and MSE of est at param under model.
template <typename Model>
McReport mc_report(const Estimator& est, const Model& model, const Vec& param, std::size_t n, std::uint64_t seed,
                   const McOptions& opt = {}, const Tolerances& tol = {}) {
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "n must be >= 2");
  const Vec mu = model.mean_observation(param, tol);
  const Eigen::Index k = mu.size();
  const detail::Moments mom = detail::mc_moments(
      n, [&](std::size_t i) { return apply_estimator(est, mu + noise(seed, i, k, model.sigma)); }, opt);
  if (mom.mean.size() != param.size()) {
    throw Error(ErrorCode::kDimMismatch, "estimator output does not match the parameter size");
  }
  McReport rep;
  rep.n = n;
  rep.seed = seed;
  rep.mean = mom.mean;
  rep.bias = mom.mean - param;
  rep.cov = symmetrize(mom.m2 / static_cast<double>(n - 1));
  rep.mse = symmetrize(rep.cov.matrix() + rep.bias * rep.bias.transpose());
  rep.se_scale = 1.0 / std::sqrt(static_cast<double>(n));
  return rep;
}

struct McTraceReport {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double mse_trace = 0.0;  // mean of |est - param|^2
  double se = 0.0;
};

/// Scalar-only variant of mc_report: accumulates |est - param|^2 without
/// the k x k second moment, for large k.
template <typename Model>
McTraceReport mc_mse_trace(const Estimator& est, const Model& model, const Vec& param, std::size_t n,
                           std::uint64_t seed, const McOptions& opt = {}, const Tolerances& tol = {}) {
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "n must be >= 2");
  const Vec mu = model.mean_observation(param, tol);
  const Eigen::Index k = mu.size();
  const detail::Moments mom = detail::mc_moments(
      n,
      [&](std::size_t i) {
        const Vec e = apply_estimator(est, mu + noise(seed, i, k, model.sigma));
        if (e.size() != param.size()) {
          throw Error(ErrorCode::kDimMismatch, "estimator output does not match the parameter size");
        }
        return Vec::Constant(1, (e - param).squaredNorm());
      },
      opt);
  McTraceReport rep;
  rep.n = n;
  rep.seed = seed;
  rep.mse_trace = mom.mean(0);
  rep.se = std::sqrt(mom.m2(0, 0) / static_cast<double>(n - 1) / static_cast<double>(n));
  return rep;
}

struct SphereCalibration {
  double a = 1.0;
  double se = 0.0;      // standard error of a
  double factor = 1.0;  // |E[y / |y|]| at theta = e1
  double factor_se = 0.0;
};

/// a = 1 / |E[(theta + w) / |theta + w|]|, estimated at theta = e1.
inline SphereCalibration calibrate_sphere_a(int k, double sigma, std::size_t n, std::uint64_t seed,
                                            const McOptions& opt = {}) {
  if (k < 2) throw Error(ErrorCode::kInvalidArgument, "calibration needs k >= 2");
  if (!(sigma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigma must be > 0");
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "n must be >= 2");
  Vec e1 = Vec::Zero(k);
  e1(0) = 1.0;
  const detail::Moments mom = detail::mc_moments(
      n,
      [&](std::size_t i) {
        const Vec y = e1 + noise(seed, i, k, sigma);
        Vec out(1);
        out(0) = y(0) / y.norm();
        return out;
      },
      opt);
  SphereCalibration cal;
  cal.factor = mom.mean(0);
  cal.factor_se = std::sqrt(mom.m2(0, 0) / static_cast<double>(n - 1) / static_cast<double>(n));
  cal.a = 1.0 / cal.factor;
  cal.se = cal.factor_se / (cal.factor * cal.factor);
  return cal;
}

struct BiasGradientEstimate {
  Mat db_tangent;  // k x d, column i ~ (db/dtheta) v_i
  Mat se;          // k x d standard errors
  double step = 0.0;
};

/// Central differences of the bias along each column of span.v, moving on
/// the set by retraction and reusing the same noise on both sides.
inline BiasGradientEstimate mc_bias_gradient(const Estimator& est, const GaussianDenoiseModel& model,
                                             const Vec& theta, const TangentSpan& span, double step,
                                             std::size_t n, std::uint64_t seed, const McOptions& opt = {},
                                             const Tolerances& tol = {}) {
  if (!(step > 0.0)) throw Error(ErrorCode::kInvalidArgument, "step must be > 0");
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "n must be >= 2");
  model.mean_observation(theta, tol);
  const Eigen::Index k = theta.size();
  if (span.v.rows() != k) throw Error(ErrorCode::kDimMismatch, "span dimension");
  BiasGradientEstimate out;
  out.step = step;
  out.db_tangent.resize(k, span.d);
  out.se.resize(k, span.d);
  for (Eigen::Index c = 0; c < span.d; ++c) {
    const Vec plus = retract(model.set, theta, step * span.v.col(c));
    const Vec minus = retract(model.set, theta, -step * span.v.col(c));
    const detail::Moments mom = detail::mc_moments(
        n,
        [&](std::size_t i) {
          const Vec w = noise(seed, i, k, model.sigma);
          const Vec dp = apply_estimator(est, plus + w) - plus;
          const Vec dm = apply_estimator(est, minus + w) - minus;
          return Vec((dp - dm) / (2.0 * step));
        },
        opt);
    out.db_tangent.col(c) = mom.mean;
    out.se.col(c) = (mom.m2.diagonal() / static_cast<double>(n - 1) / static_cast<double>(n)).cwiseSqrt();
  }
  return out;
}

/// Default finite-difference step for bias gradients: 1e-2 sigma.
inline double default_bias_step(double sigma) { return 1e-2 * sigma; }

/// Largest k for which the sparse corner bound goes through the dense engine.
constexpr int kDenseBoundMaxDim = 512;

struct SparseCornerResult {
  double empirical_mse = 0.0;
  double se = 0.0;
  double crb_trace = 0.0;
  double asymptote = 0.0;  // 2 sigma^2 log k
};

/// ML denoising on {|theta|_0 <= 1} at the corner theta = 0.
inline SparseCornerResult sparse_corner_experiment(int k, double sigma, std::size_t n, std::uint64_t seed,
                                                   const McOptions& opt = {}, const Tolerances& tol = {}) {
  if (k < 2) throw Error(ErrorCode::kInvalidArgument, "k must be >= 2");
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "n must be >= 2");
  const GaussianDenoiseModel model(ConstraintSet::sparse(k, 1), sigma);
  const Vec corner = Vec::Zero(k);
  const detail::Moments mom = detail::mc_moments(
      n,
      [&](std::size_t i) {
        Vec out(1);
        out(0) = ml_project(model.set, noise(seed, i, k, sigma)).squaredNorm();
        return out;
      },
      opt);
  SparseCornerResult out;
  if (k <= kDenseBoundMaxDim) {
    const TangentSpan span = tangent_span(model.set, corner, tol);
    out.crb_trace = constrained_crb(FisherContext(fisher(model, corner), tol), span, tol).bound.matrix().trace();
  } else {
    // J = I / sigma^2, db = 0 and a full span at the corner give sigma^2 I.
    out.crb_trace = sigma * sigma * static_cast<double>(k);
  }
  out.empirical_mse = mom.mean(0);
  out.se = std::sqrt(mom.m2(0, 0) / static_cast<double>(n - 1) / static_cast<double>(n));
  out.asymptote = 2.0 * sigma * sigma * std::log(static_cast<double>(k));
  return out;
}

struct EmpiricalVerdict {
  bool holds = false;
  double min_eigenvalue = 0.0;  // of cov - bound
  double slack = 0.0;
};

/// Statistical slack multiplier for bound-vs-empirical checks.
constexpr double kMcSlackSe = 6.0;

/// cov - bound >= -slack, slack = c * se_scale * |cov|.
inline EmpiricalVerdict bound_vs_empirical(const McReport& rep, const BoundResult& bound, double c = kMcSlackSe) {
  require_same_dims(rep.cov, bound.bound, "bound_vs_empirical");
  EmpiricalVerdict v;
  v.min_eigenvalue = min_eigenvalue(SymMat(rep.cov.matrix() - bound.bound.matrix(), 1.0));
  v.slack = c * rep.se_scale * spectral_norm(rep.cov);
  v.holds = v.min_eigenvalue >= -v.slack;
  return v;
}

}  // namespace ccrb
