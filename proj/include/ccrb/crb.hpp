#pragma once

// Cramer-Rao bounds for constrained parameters.
//
// With sensitivity S = I + db/dtheta and Fisher information J:
//   unconstrained:  S J^+ S^T,                      feasible iff col(S^T) in col(J)
//   per-U:          S U (U^T J U)^+ U^T S^T,        feasible iff col(U^T S^T) in col(U^T J U)
//   best (span):    S P (P J P)^+ P S^T,            feasible iff col(P S^T) in col(P J P)
// where the columns of U are tangent vectors and P projects onto the span of
// the tangent cone. The engine is geometry-agnostic: callers hand in U or a
// TangentSpan. Infeasibility is reported as a flag, never thrown.

#include <cstdint>
#include <string>
#include <vector>

#include "ccrb/matlin.hpp"
#include "ccrb/random.hpp"
#include "ccrb/tangent.hpp"

namespace ccrb {

class FisherContext {
 public:
  explicit FisherContext(SymMat j, const Tolerances& tol = {}) : FisherContext(j, Mat::Zero(j.dim(), j.dim()), tol) {}

  FisherContext(SymMat j, Mat db, const Tolerances& tol = {}) : j_(std::move(j)), db_(std::move(db)) {
    if (db_.rows() != j_.dim() || db_.cols() != j_.dim()) {
      throw Error(ErrorCode::kDimMismatch, "bias gradient must be k x k with k = " + std::to_string(j_.dim()));
    }
    require_finite(db_, "bias gradient");
    if (!is_psd(j_, tol)) throw Error(ErrorCode::kNotPsd, "Fisher information is not PSD");
  }

  Eigen::Index k() const { return j_.dim(); }
  const SymMat& j() const { return j_; }
  const Mat& db() const { return db_; }
  bool unbiased() const { return db_.isZero(0.0); }

 private:
  SymMat j_;
  Mat db_;
};

enum class BoundRule { kUnconstrained, kPerU, kSpanProjector, kReduction, kPushforward };

inline std::string to_string(BoundRule rule) {
  switch (rule) {
    case BoundRule::kUnconstrained: return "unconstrained";
    case BoundRule::kPerU: return "per_u";
    case BoundRule::kSpanProjector: return "span_projector";
    case BoundRule::kReduction: return "reduction";
    case BoundRule::kPushforward: return "pushforward";
  }
  return "unknown";
}

struct BoundResult {
  SymMat bound;
  bool feasible = false;
  BoundRule rule = BoundRule::kUnconstrained;
};

/// I + db/dtheta.
inline Mat sensitivity(const FisherContext& ctx) { return Mat::Identity(ctx.k(), ctx.k()) + ctx.db(); }

inline BoundResult unconstrained_crb(const FisherContext& ctx, const Tolerances& tol = {}) {
  const Mat s = sensitivity(ctx);
  const Svd j_svd(ctx.j(), tol);
  BoundResult out;
  out.bound = symmetrize(s * j_svd.pinv() * s.transpose());
  out.feasible = colspace_included(s.transpose(), ctx.j(), tol);
  out.rule = BoundRule::kUnconstrained;
  return out;
}

/// Bound for a given matrix U whose columns the caller guarantees to be
/// tangent vectors.
inline BoundResult constrained_bound_u(const FisherContext& ctx, const Mat& u, const Tolerances& tol = {}) {
  if (u.rows() != ctx.k()) {
    throw Error(ErrorCode::kDimMismatch, "U must have " + std::to_string(ctx.k()) + " rows");
  }
  require_finite(u, "U");
  const Mat s = sensitivity(ctx);
  const Mat m = u.transpose() * ctx.j().matrix() * u;
  const Svd m_svd(m, tol);
  BoundResult out;
  out.rule = BoundRule::kPerU;
  if (u.cols() > 0 && m_svd.rank() == u.cols()) {
    // U^T J U invertible: with U = Q R, U (U^T J U)^-1 U^T = Q (Q^T J Q)^-1 Q^T,
    // which avoids squaring the conditioning of U.
    const Mat q = Eigen::HouseholderQR<Mat>(u).householderQ() * Mat::Identity(u.rows(), u.cols());
    const Mat g = q.transpose() * ctx.j().matrix() * q;
    const Mat sq = s * q;
    out.bound = symmetrize(sq * Eigen::LDLT<Mat>(0.5 * (g + g.transpose())).solve(sq.transpose()));
    out.feasible = true;
    return out;
  }
  out.bound = symmetrize(s * u * m_svd.pinv() * u.transpose() * s.transpose());
  out.feasible = colspace_included(u.transpose() * s.transpose(), m, tol);
  return out;
}

namespace detail {

inline void require_projector(const SymMat& pi, Eigen::Index k, const Tolerances& tol) {
  if (pi.dim() != k) throw Error(ErrorCode::kDimMismatch, "projector must be k x k");
  const double defect = (pi.matrix() * pi.matrix() - pi.matrix()).norm();
  if (defect > tol.incl_tol * (1.0 + pi.matrix().norm())) {
    throw Error(ErrorCode::kNotProjector, "|P^2 - P| = " + std::to_string(defect));
  }
}

}  // namespace detail

/// col(P S^T) in col(P J P). Equivalent to the per-U condition holding for
/// every U with columns in the tangent cone.
inline bool feasibility_projector(const FisherContext& ctx, const SymMat& pi, const Tolerances& tol = {}) {
  detail::require_projector(pi, ctx.k(), tol);
  const Mat& p = pi.matrix();
  return colspace_included(p * sensitivity(ctx).transpose(), p * ctx.j().matrix() * p, tol);
}

/// The constrained CRB: S P (P J P)^+ P S^T.
inline BoundResult constrained_crb(const FisherContext& ctx, const TangentSpan& span, const Tolerances& tol = {}) {
  if (span.pi.dim() != ctx.k() || span.v.rows() != ctx.k()) {
    throw Error(ErrorCode::kDimMismatch, "span dimension does not match Fisher information");
  }
  const Mat s = sensitivity(ctx);
  const Mat& p = span.pi.matrix();
  BoundResult out;
  out.bound = symmetrize(s * p * pinv(p * ctx.j().matrix() * p, tol) * p * s.transpose());
  out.feasible = feasibility_projector(ctx, span.pi, tol);
  out.rule = BoundRule::kSpanProjector;
  return out;
}

/// Same bound evaluated with the basis V instead of the projector.
inline BoundResult constrained_crb_via_basis(const FisherContext& ctx, const TangentSpan& span,
                                             const Tolerances& tol = {}) {
  BoundResult out = constrained_bound_u(ctx, span.v, tol);
  out.rule = BoundRule::kSpanProjector;
  return out;
}

struct CrbReduction {
  SymMat inv_j;
  SymMat reduction;

  SymMat bound() const { return symmetrize(inv_j.matrix() - reduction.matrix()); }
};

/// J^{-1} - J^{-1} F (F^T J^{-1} F)^+ F^T J^{-1}, F spanning the orthogonal
/// complement of col(V). Unbiased form: any bias must be folded in by the
/// caller. Requires nonsingular J.
inline CrbReduction crb_reduction(const FisherContext& ctx, const TangentSpan& span, const Tolerances& tol = {}) {
  if (span.v.rows() != ctx.k()) throw Error(ErrorCode::kDimMismatch, "span dimension");
  if (min_eigenvalue(ctx.j()) <= tol.psd_tol) throw Error(ErrorCode::kSingularJ, "reduction form needs J > 0");
  const Mat inv_j = ctx.j().matrix().llt().solve(Mat::Identity(ctx.k(), ctx.k()));
  const Mat f = span.v.cols() > 0 ? null_space(span.v.transpose(), tol) : Mat::Identity(ctx.k(), ctx.k());
  CrbReduction out;
  out.inv_j = symmetrize(inv_j);
  if (f.cols() == 0) {
    out.reduction = SymMat::zero(ctx.k());
  } else {
    const Mat jf = inv_j * f;
    out.reduction = symmetrize(jf * pinv(f.transpose() * jf, tol) * jf.transpose());
  }
  return out;
}

struct PushforwardResult {
  SymMat lhs;    // U (U^T J_theta U)^+ U^T, U = d theta / d rho
  SymMat rhs;    // U J_rho^+ U^T
  SymMat j_rho;  // (J_theta^{1/2} U)^T (J_theta^{1/2} U)
};

/// Constrained bound for theta = g(rho) against the unconstrained bound for
/// rho pushed through the Jacobian. J_rho is formed from the square-root
/// factor (score chain rule) rather than from U^T J U directly.
inline PushforwardResult pushforward_crb(const DifferentiableMap& g, const Vec& rho, const SymMat& j_theta,
                                         const Tolerances& tol = {}) {
  if (j_theta.dim() != g.out_dim) throw Error(ErrorCode::kDimMismatch, "J_theta must match the output of g");
  const Mat u = g.gradient(rho);
  const Mat a = sym_sqrt(j_theta, tol).matrix() * u;
  PushforwardResult out;
  out.j_rho = symmetrize(a.transpose() * a);
  out.lhs = symmetrize(u * pinv(u.transpose() * j_theta.matrix() * u, tol) * u.transpose());
  out.rhs = symmetrize(u * pinv(out.j_rho, tol) * u.transpose());
  return out;
}

enum class Monotonicity { kHolds, kFails, kPreconditionFailed };

inline std::string to_string(Monotonicity m) {
  switch (m) {
    case Monotonicity::kHolds: return "holds";
    case Monotonicity::kFails: return "fails";
    case Monotonicity::kPreconditionFailed: return "precondition_failed";
  }
  return "unknown";
}

struct MonotonicityResult {
  Monotonicity verdict = Monotonicity::kPreconditionFailed;
  SymMat bound1;
  SymMat bound2;
  std::string reason;
};

/// Checks bound(W1) <= bound(W2) for col W1 inside col W2. Preconditions:
/// the inclusion itself; for singular J, W2^T J W2 > 0; for a biased
/// context, the projector feasibility condition on col W2.
inline MonotonicityResult monotonicity_check(const FisherContext& ctx, const Mat& w1, const Mat& w2,
                                             const Tolerances& tol = {}) {
  if (w1.rows() != ctx.k() || w2.rows() != ctx.k()) {
    throw Error(ErrorCode::kDimMismatch, "W1 and W2 must have k rows");
  }
  MonotonicityResult out;
  out.bound1 = constrained_bound_u(ctx, w1, tol).bound;
  out.bound2 = constrained_bound_u(ctx, w2, tol).bound;
  if (!colspace_included(w1, w2, tol)) {
    out.reason = "col W1 is not contained in col W2";
    return out;
  }
  if (min_eigenvalue(ctx.j()) <= tol.psd_tol) {
    const SymMat m2 = symmetrize(w2.transpose() * ctx.j().matrix() * w2);
    if (m2.dim() == 0 || min_eigenvalue(m2) <= tol.psd_tol) {
      out.reason = "J is singular and W2^T J W2 is not positive definite";
      return out;
    }
  }
  if (!ctx.unbiased() && !feasibility_projector(ctx, col_projector(w2, tol), tol)) {
    out.reason = "projector feasibility fails on col W2";
    return out;
  }
  out.verdict = loewner_geq(out.bound2, out.bound1, tol) ? Monotonicity::kHolds : Monotonicity::kFails;
  return out;
}

struct FeasibilityReport {
  bool projector_condition = false;
  int n_samples = 0;
  int cone_samples = 0;
  int span_samples = 0;
  int cone_failures = 0;  // sampled U (columns in the cone) failing the per-U condition
  int span_failures = 0;  // sampled U (columns in the span) failing the per-U condition
  std::vector<std::string> violations;

  bool consistent() const { return violations.empty(); }
};

/// Samples U with columns in the tangent cone (even draws) or its span (odd
/// draws) and cross-checks the per-U condition against the projector
/// condition. Draw 0 is the span basis V itself.
inline FeasibilityReport feasibility_equivalence_check(const FisherContext& ctx, const ConstraintSet& set,
                                                       const Vec& theta, int n_samples, std::uint64_t seed,
                                                       const Tolerances& tol = {}) {
  const TangentSpan span = tangent_span(set, theta, tol);
  FeasibilityReport rep;
  rep.projector_condition = feasibility_projector(ctx, span.pi, tol);
  rep.n_samples = n_samples;
  for (int i = 0; i < n_samples; ++i) {
    Rng rng = stream(seed, static_cast<std::uint64_t>(i));
    Mat u;
    const bool from_cone = i % 2 == 0;
    if (i == 0) {
      u = span.v;
    } else {
      const int cols = uniform_int(1, static_cast<int>(span.d) + 1, rng);
      u.resize(ctx.k(), cols);
      for (int c = 0; c < cols; ++c) {
        u.col(c) = from_cone ? sample_tangent_vector(set, theta, rng, tol) : Vec(span.v * gaussian_vector(span.d, rng));
      }
    }
    const bool ok = constrained_bound_u(ctx, u, tol).feasible;
    if (from_cone) {
      ++rep.cone_samples;
      rep.cone_failures += ok ? 0 : 1;
    } else {
      ++rep.span_samples;
      rep.span_failures += ok ? 0 : 1;
    }
    if (rep.projector_condition && !ok) {
      rep.violations.push_back("draw " + std::to_string(i) + ": per-U condition fails while the projector condition holds");
    }
  }
  if (!rep.projector_condition && rep.cone_failures == 0) {
    rep.violations.push_back("projector condition fails but no sampled cone matrix fails");
  }
  return rep;
}

}  // namespace ccrb
