#pragma once

// Constraint-set catalog and tangent-cone machinery.
//
// Every set lives in R^k. Matrix-valued sets (Stiefel, orthogonal groups,
// fixed-rank, PSD, positive definite) embed their p x q parameter by
// column-major vectorization, k = p * q. For each supported set this header
// computes a basis V of the span of the tangent cone at a point, the
// orthogonal projector onto it, and the set-specific maps needed to walk
// along the set (retractions and metric projections).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ccrb/error.hpp"
#include "ccrb/matlin.hpp"
#include "ccrb/random.hpp"

namespace ccrb {

/// A map R^n -> R^m with an optional analytic Jacobian (m x n). Without
/// one, the Jacobian is taken by central differences.
struct DifferentiableMap {
  Eigen::Index in_dim = 0;
  Eigen::Index out_dim = 0;
  std::function<Vec(const Vec&)> f;
  std::function<Mat(const Vec&)> jacobian;

  Vec operator()(const Vec& x) const {
    check_input(x);
    return f(x);
  }

  bool has_analytic_jacobian() const { return static_cast<bool>(jacobian); }

  static double fd_step(const Vec& x) { return 1e-6 * (1.0 + x.norm()); }

  Mat gradient(const Vec& x) const {
    check_input(x);
    if (jacobian) return jacobian(x);
    const double h = fd_step(x);
    Mat out(out_dim, in_dim);
    Vec xp = x;
    Vec xm = x;
    for (Eigen::Index j = 0; j < in_dim; ++j) {
      xp(j) = x(j) + h;
      xm(j) = x(j) - h;
      out.col(j) = (f(xp) - f(xm)) / (2.0 * h);
      xp(j) = x(j);
      xm(j) = x(j);
    }
    return out;
  }

 private:
  void check_input(const Vec& x) const {
    if (x.size() != in_dim) {
      throw Error(ErrorCode::kDimMismatch, "map expects input of size " + std::to_string(in_dim) + ", got " +
                                               std::to_string(x.size()));
    }
  }
};

/// Linear map x -> M x + c with exact Jacobian.
inline DifferentiableMap affine_map(const Mat& m, const Vec& c) {
  if (c.size() != m.rows()) throw Error(ErrorCode::kDimMismatch, "affine_map offset size");
  return DifferentiableMap{m.cols(), m.rows(), [m, c](const Vec& x) -> Vec { return m * x + c; },
                           [m](const Vec&) -> Mat { return m; }};
}

// ---------------------------------------------------------------------------
// Catalog

class ConstraintSet;

namespace sets {

struct Euclidean {
  int k;
};
struct Sphere {
  int k;
};
struct Stiefel {
  int p, q;
};
struct OrthogonalGroup {
  int p;
};
struct SpecialOrthogonal {
  int p;
};
struct FixedRank {
  int p, q, r;
};
struct FixedRankPsd {
  int p, r;
};
struct PositiveDefinite {
  int p;
};
/// Vectors with at most s nonzero entries.
struct Sparse {
  int k, s;
};
/// {theta : h(theta) = 0}.
struct EqualityManifold {
  DifferentiableMap h;
};
/// {g(rho)}; rho is the preimage of the point at which spans are taken.
struct TransformImage {
  DifferentiableMap g;
  Vec rho;
};
struct Product {
  std::vector<ConstraintSet> factors;
};

}  // namespace sets

class ConstraintSet {
 public:
  using Variant = std::variant<sets::Euclidean, sets::Sphere, sets::Stiefel, sets::OrthogonalGroup,
                               sets::SpecialOrthogonal, sets::FixedRank, sets::FixedRankPsd, sets::PositiveDefinite,
                               sets::Sparse, sets::EqualityManifold, sets::TransformImage, sets::Product>;

  template <typename T>
  ConstraintSet(T value) : v_(std::move(value)) {  // NOLINT(google-explicit-constructor)
    validate();
  }

  static ConstraintSet euclidean(int k) { return sets::Euclidean{k}; }
  static ConstraintSet sphere(int k) { return sets::Sphere{k}; }
  static ConstraintSet stiefel(int p, int q) { return sets::Stiefel{p, q}; }
  static ConstraintSet orthogonal(int p) { return sets::OrthogonalGroup{p}; }
  static ConstraintSet special_orthogonal(int p) { return sets::SpecialOrthogonal{p}; }
  static ConstraintSet fixed_rank(int p, int q, int r) { return sets::FixedRank{p, q, r}; }
  static ConstraintSet fixed_rank_psd(int p, int r) { return sets::FixedRankPsd{p, r}; }
  static ConstraintSet positive_definite(int p) { return sets::PositiveDefinite{p}; }
  static ConstraintSet sparse(int k, int s) { return sets::Sparse{k, s}; }
  static ConstraintSet equality(DifferentiableMap h) { return sets::EqualityManifold{std::move(h)}; }
  static ConstraintSet transform_image(DifferentiableMap g, Vec rho) {
    return sets::TransformImage{std::move(g), std::move(rho)};
  }
  static ConstraintSet product(std::vector<ConstraintSet> factors) { return sets::Product{std::move(factors)}; }

  const Variant& variant() const { return v_; }

  template <typename T>
  const T* get_if() const {
    return std::get_if<T>(&v_);
  }

  Eigen::Index ambient_dim() const;
  std::string name() const;

 private:
  void validate() const;

  Variant v_;
};

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline Eigen::Index ConstraintSet::ambient_dim() const {
  return std::visit(overloaded{
                        [](const sets::Euclidean& s) -> Eigen::Index { return s.k; },
                        [](const sets::Sphere& s) -> Eigen::Index { return s.k; },
                        [](const sets::Stiefel& s) -> Eigen::Index { return s.p * s.q; },
                        [](const sets::OrthogonalGroup& s) -> Eigen::Index { return s.p * s.p; },
                        [](const sets::SpecialOrthogonal& s) -> Eigen::Index { return s.p * s.p; },
                        [](const sets::FixedRank& s) -> Eigen::Index { return s.p * s.q; },
                        [](const sets::FixedRankPsd& s) -> Eigen::Index { return s.p * s.p; },
                        [](const sets::PositiveDefinite& s) -> Eigen::Index { return s.p * s.p; },
                        [](const sets::Sparse& s) -> Eigen::Index { return s.k; },
                        [](const sets::EqualityManifold& s) -> Eigen::Index { return s.h.in_dim; },
                        [](const sets::TransformImage& s) -> Eigen::Index { return s.g.out_dim; },
                        [](const sets::Product& s) -> Eigen::Index {
                          Eigen::Index k = 0;
                          for (const auto& f : s.factors) k += f.ambient_dim();
                          return k;
                        },
                    },
                    v_);
}

inline std::string ConstraintSet::name() const {
  return std::visit(overloaded{
                        [](const sets::Euclidean&) { return std::string("euclidean"); },
                        [](const sets::Sphere&) { return std::string("sphere"); },
                        [](const sets::Stiefel&) { return std::string("stiefel"); },
                        [](const sets::OrthogonalGroup&) { return std::string("orthogonal"); },
                        [](const sets::SpecialOrthogonal&) { return std::string("special_orthogonal"); },
                        [](const sets::FixedRank&) { return std::string("fixed_rank"); },
                        [](const sets::FixedRankPsd&) { return std::string("fixed_rank_psd"); },
                        [](const sets::PositiveDefinite&) { return std::string("positive_definite"); },
                        [](const sets::Sparse&) { return std::string("sparse"); },
                        [](const sets::EqualityManifold&) { return std::string("equality"); },
                        [](const sets::TransformImage&) { return std::string("transform"); },
                        [](const sets::Product&) { return std::string("product"); },
                    },
                    v_);
}

inline void ConstraintSet::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " must be positive");
  };
  std::visit(overloaded{
                 [&](const sets::Euclidean& s) { positive(s.k, "k"); },
                 [&](const sets::Sphere& s) { positive(s.k, "k"); },
                 [&](const sets::Stiefel& s) {
                   positive(s.p, "p");
                   positive(s.q, "q");
                   if (s.q > s.p) throw Error(ErrorCode::kInvalidArgument, "stiefel requires q <= p");
                 },
                 [&](const sets::OrthogonalGroup& s) { positive(s.p, "p"); },
                 [&](const sets::SpecialOrthogonal& s) { positive(s.p, "p"); },
                 [&](const sets::FixedRank& s) {
                   positive(s.p, "p");
                   positive(s.q, "q");
                   positive(s.r, "r");
                   if (s.r > std::min(s.p, s.q)) throw Error(ErrorCode::kInvalidArgument, "fixed_rank requires r <= min(p, q)");
                 },
                 [&](const sets::FixedRankPsd& s) {
                   positive(s.p, "p");
                   positive(s.r, "r");
                   if (s.r > s.p) throw Error(ErrorCode::kInvalidArgument, "fixed_rank_psd requires r <= p");
                 },
                 [&](const sets::PositiveDefinite& s) { positive(s.p, "p"); },
                 [&](const sets::Sparse& s) {
                   positive(s.k, "k");
                   positive(s.s, "s");
                   if (s.s > s.k) throw Error(ErrorCode::kInvalidArgument, "sparse requires s <= k");
                 },
                 [&](const sets::EqualityManifold& s) {
                   if (!s.h.f || s.h.in_dim <= 0 || s.h.out_dim <= 0) {
                     throw Error(ErrorCode::kInvalidArgument, "equality manifold needs a constraint map");
                   }
                 },
                 [&](const sets::TransformImage& s) {
                   if (!s.g.f || s.g.in_dim <= 0 || s.g.out_dim <= 0) {
                     throw Error(ErrorCode::kInvalidArgument, "transform image needs a map");
                   }
                   if (s.rho.size() != s.g.in_dim) throw Error(ErrorCode::kDimMismatch, "transform image rho size");
                 },
                 [&](const sets::Product& s) {
                   if (s.factors.empty()) throw Error(ErrorCode::kInvalidArgument, "product needs factors");
                 },
             },
             v_);
}

// ---------------------------------------------------------------------------
// Vectorization helpers

inline Vec vec(const Mat& m) { return Eigen::Map<const Vec>(m.data(), m.size()); }

inline Mat unvec(const Vec& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) throw Error(ErrorCode::kDimMismatch, "unvec size");
  return Eigen::Map<const Mat>(v.data(), rows, cols);
}

/// Support threshold for sparse vectors: 1e-12 * max(1, |theta|_inf).
inline double supp_tol(const Vec& theta) {
  const double inf = theta.size() > 0 ? theta.cwiseAbs().maxCoeff() : 0.0;
  return 1e-12 * std::max(1.0, inf);
}

inline std::vector<Eigen::Index> support(const Vec& theta) {
  const double t = supp_tol(theta);
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (std::abs(theta(i)) > t) out.push_back(i);
  }
  return out;
}

struct PointMembership {
  bool in_set = false;
  double residual = 0.0;
};

struct TangentSpan {
  Mat v;              // k x d basis of span T(theta)
  Eigen::Index d = 0;
  SymMat pi;          // k x k projector onto span T(theta)
};

namespace detail {

inline void check_point(const ConstraintSet& set, const Vec& theta) {
  if (theta.size() != set.ambient_dim()) {
    throw Error(ErrorCode::kDimMismatch, set.name() + " expects a point of size " +
                                             std::to_string(set.ambient_dim()) + ", got " +
                                             std::to_string(theta.size()));
  }
  require_finite(theta, "theta");
}

template <typename Fn>
void for_each_factor(const sets::Product& prod, Fn&& fn) {
  Eigen::Index offset = 0;
  for (const auto& f : prod.factors) {
    const Eigen::Index k = f.ambient_dim();
    fn(f, offset, k);
    offset += k;
  }
}

inline double orthonormality_residual(const Mat& x) {
  return (x.transpose() * x - Mat::Identity(x.cols(), x.cols())).norm();
}

inline double asymmetry(const Mat& x) { return (x - x.transpose()).cwiseAbs().maxCoeff(); }

/// Eigenvalues in descending order together with their eigenvectors.
inline std::pair<Vec, Mat> eig_desc(const Mat& x) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (x + x.transpose()));
  return {es.eigenvalues().reverse(), es.eigenvectors().rowwise().reverse()};
}

/// Orthonormal basis of the tangent space {X Omega + X_perp K} of the
/// Stiefel manifold at X (p x q), vectorized.
inline Mat stiefel_basis(const Mat& x, const Tolerances& tol) {
  const Eigen::Index p = x.rows();
  const Eigen::Index q = x.cols();
  const Mat x_perp = Svd(x, tol).left_null_basis();
  const Eigen::Index d = q * (q - 1) / 2 + (p - q) * q;
  Mat v(p * q, d);
  Eigen::Index c = 0;
  for (Eigen::Index i = 0; i < q; ++i) {
    for (Eigen::Index j = i + 1; j < q; ++j) {
      Mat omega = Mat::Zero(q, q);
      omega(i, j) = 1.0 / std::sqrt(2.0);
      omega(j, i) = -1.0 / std::sqrt(2.0);
      v.col(c++) = vec(x * omega);
    }
  }
  for (Eigen::Index a = 0; a < x_perp.cols(); ++a) {
    for (Eigen::Index j = 0; j < q; ++j) {
      Mat u = Mat::Zero(p, q);
      u.col(j) = x_perp.col(a);
      v.col(c++) = vec(u);
    }
  }
  return v;
}

/// Orthonormal basis of symmetric p x p matrices, vectorized.
inline Mat symmetric_basis(Eigen::Index p) {
  Mat v(p * p, p * (p + 1) / 2);
  Eigen::Index c = 0;
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = i; j < p; ++j) {
      Mat e = Mat::Zero(p, p);
      if (i == j) {
        e(i, i) = 1.0;
      } else {
        e(i, j) = e(j, i) = 1.0 / std::sqrt(2.0);
      }
      v.col(c++) = vec(e);
    }
  }
  return v;
}

/// Top-s selection by magnitude; ties (within supp_tol) go to the lowest index.
inline Vec keep_largest(const Vec& y, int s) {
  const double t = supp_tol(y);
  std::vector<bool> taken(static_cast<std::size_t>(y.size()), false);
  Vec out = Vec::Zero(y.size());
  for (int pick = 0; pick < s; ++pick) {
    Eigen::Index best = -1;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      if (best < 0 || std::abs(y(i)) > std::abs(y(best)) + t) best = i;
    }
    if (best < 0) break;
    taken[static_cast<std::size_t>(best)] = true;
    out(best) = y(best);
  }
  return out;
}

inline Mat truncated_svd(const Mat& x, int r) {
  Eigen::JacobiSVD<Mat> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& s = svd.singularValues();
  if (s(r - 1) <= 0.0) throw Error(ErrorCode::kDegenerateInput, "rank-r truncation of a rank-deficient matrix");
  return svd.matrixU().leftCols(r) * s.head(r).asDiagonal() * svd.matrixV().leftCols(r).transpose();
}

/// QR-based retraction onto the Stiefel manifold (R with positive diagonal).
inline Mat qr_retract(const Mat& y) {
  Eigen::HouseholderQR<Mat> qr(y);
  Mat q = qr.householderQ() * Mat::Identity(y.rows(), y.cols());
  const Mat r = qr.matrixQR().topRows(y.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  return q;
}

inline Mat polar_factor(const Mat& y) {
  Eigen::JacobiSVD<Mat> svd(y, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations

/// Constraint residual of theta with respect to set, and the membership verdict.
inline PointMembership contains(const ConstraintSet& set, const Vec& theta, const Tolerances& tol = {}) {
  detail::check_point(set, theta);
  double residual = std::visit(
      overloaded{
          [](const sets::Euclidean&) { return 0.0; },
          [&](const sets::Sphere&) { return std::abs(theta.norm() - 1.0); },
          [&](const sets::Stiefel& s) { return detail::orthonormality_residual(unvec(theta, s.p, s.q)); },
          [&](const sets::OrthogonalGroup& s) { return detail::orthonormality_residual(unvec(theta, s.p, s.p)); },
          [&](const sets::SpecialOrthogonal& s) {
            const Mat x = unvec(theta, s.p, s.p);
            return std::max(detail::orthonormality_residual(x), std::abs(x.determinant() - 1.0));
          },
          [&](const sets::FixedRank& s) {
            const Vec sv = Svd(unvec(theta, s.p, s.q), tol).singular_values();
            if (sv(0) <= 0.0) return static_cast<double>(s.r);
            double deficit = 0.0;
            for (int i = 0; i < s.r; ++i) {
              if (sv(i) <= tol.rank_rel_tol * sv(0)) deficit += 1.0;
            }
            const double tail = s.r < sv.size() ? sv(s.r) / sv(0) : 0.0;
            return std::max(tail, deficit);
          },
          [&](const sets::FixedRankPsd& s) {
            const Mat x = unvec(theta, s.p, s.p);
            const Vec lambda = detail::eig_desc(x).first;
            const double neg = std::max(0.0, -lambda(s.p - 1));
            if (lambda(0) <= 0.0) return std::max(static_cast<double>(s.r), neg);
            double deficit = 0.0;
            for (int i = 0; i < s.r; ++i) {
              if (lambda(i) <= tol.rank_rel_tol * lambda(0)) deficit += 1.0;
            }
            const double tail = s.r < s.p ? std::abs(lambda(s.r)) / lambda(0) : 0.0;
            return std::max({detail::asymmetry(x), neg, tail, deficit});
          },
          [&](const sets::PositiveDefinite& s) {
            const Mat x = unvec(theta, s.p, s.p);
            return std::max(detail::asymmetry(x), std::max(0.0, -detail::eig_desc(x).first(s.p - 1)));
          },
          [&](const sets::Sparse& s) {
            return std::max(0.0, static_cast<double>(support(theta).size()) - static_cast<double>(s.s));
          },
          [&](const sets::EqualityManifold& s) { return s.h(theta).norm(); },
          [&](const sets::TransformImage& s) { return (s.g(s.rho) - theta).norm(); },
          [&](const sets::Product& s) {
            double worst = 0.0;
            detail::for_each_factor(s, [&](const ConstraintSet& f, Eigen::Index off, Eigen::Index k) {
              worst = std::max(worst, contains(f, theta.segment(off, k), tol).residual);
            });
            return worst;
          },
      },
      set.variant());
  return {residual <= tol.member_tol, residual};
}

/// Basis of span T(theta), its dimension and projector.
inline TangentSpan tangent_span(const ConstraintSet& set, const Vec& theta, const Tolerances& tol = {}) {
  const PointMembership mem = contains(set, theta, tol);
  if (!mem.in_set) {
    throw Error(ErrorCode::kNotOnSet, set.name() + " residual " + std::to_string(mem.residual));
  }
  if (const auto* prod = set.get_if<sets::Product>()) {
    Mat v(0, 0);
    Mat pi(0, 0);
    detail::for_each_factor(*prod, [&](const ConstraintSet& f, Eigen::Index off, Eigen::Index k) {
      const TangentSpan part = tangent_span(f, theta.segment(off, k), tol);
      v = block_diag(v, part.v);
      pi = block_diag(pi, part.pi.matrix());
    });
    return {v, v.cols(), SymMat(pi)};
  }

  const Eigen::Index k = set.ambient_dim();
  Mat v = std::visit(
      overloaded{
          [&](const sets::Euclidean&) -> Mat { return Mat::Identity(k, k); },
          [&](const sets::Sphere&) -> Mat { return null_space(theta.transpose(), tol); },
          [&](const sets::Stiefel& s) -> Mat { return detail::stiefel_basis(unvec(theta, s.p, s.q), tol); },
          [&](const sets::OrthogonalGroup& s) -> Mat { return detail::stiefel_basis(unvec(theta, s.p, s.p), tol); },
          [&](const sets::SpecialOrthogonal& s) -> Mat {
            return detail::stiefel_basis(unvec(theta, s.p, s.p), tol);
          },
          [&](const sets::FixedRank& s) -> Mat {
            const Svd svd(unvec(theta, s.p, s.q), tol);
            const Vec& sv = svd.singular_values();
            if (sv(s.r - 1) < 10.0 * tol.rank_rel_tol * sv(0)) {
              throw Error(ErrorCode::kRankTolAmbiguous, "sigma_r / sigma_1 = " + std::to_string(sv(s.r - 1) / sv(0)));
            }
            const Mat& u = svd.u();
            const Mat& w = svd.v();
            Mat basis(k, s.r * (s.p + s.q - s.r));
            Eigen::Index c = 0;
            // U [[*, *], [*, 0]] W^T: entry (i, j) of the middle block is
            // free unless both i >= r and j >= r.
            for (int j = 0; j < s.q; ++j) {
              for (int i = 0; i < s.p; ++i) {
                if (i >= s.r && j >= s.r) continue;
                basis.col(c++) = vec(u.col(i) * w.col(j).transpose());
              }
            }
            return basis;
          },
          [&](const sets::FixedRankPsd& s) -> Mat {
            const auto [lambda, u] = detail::eig_desc(unvec(theta, s.p, s.p));
            if (lambda(s.r - 1) < 10.0 * tol.rank_rel_tol * lambda(0)) {
              throw Error(ErrorCode::kRankTolAmbiguous,
                          "lambda_r / lambda_1 = " + std::to_string(lambda(s.r - 1) / lambda(0)));
            }
            Mat basis(k, s.r * (s.r + 1) / 2 + s.r * (s.p - s.r));
            Eigen::Index c = 0;
            // U M U^T with M symmetric and zero lower-right block.
            for (int j = 0; j < s.p; ++j) {
              for (int i = 0; i <= j; ++i) {
                if (i >= s.r && j >= s.r) continue;
                Mat m = Mat::Zero(s.p, s.p);
                if (i == j) {
                  m(i, i) = 1.0;
                } else {
                  m(i, j) = m(j, i) = 1.0 / std::sqrt(2.0);
                }
                basis.col(c++) = vec(u * m * u.transpose());
              }
            }
            return basis;
          },
          [&](const sets::PositiveDefinite& s) -> Mat { return detail::symmetric_basis(s.p); },
          [&](const sets::Sparse& s) -> Mat {
            const auto supp = support(theta);
            if (static_cast<int>(supp.size()) < s.s) return Mat::Identity(k, k);
            Mat basis = Mat::Zero(k, static_cast<Eigen::Index>(supp.size()));
            for (std::size_t c = 0; c < supp.size(); ++c) basis(supp[c], static_cast<Eigen::Index>(c)) = 1.0;
            return basis;
          },
          [&](const sets::EqualityManifold& s) -> Mat { return null_space(s.h.gradient(theta), tol); },
          [&](const sets::TransformImage& s) -> Mat { return range_space(s.g.gradient(s.rho), tol); },
          [&](const sets::Product&) -> Mat { return Mat(); },
      },
      set.variant());
  SymMat pi = col_projector(v, tol);
  const Eigen::Index d = v.cols();
  return {std::move(v), d, std::move(pi)};
}

/// Linearly independent subset (first-seen order) spanning the generators.
/// A generator is skipped when its residual against the current span is
/// at most incl_tol times its norm.
inline Mat greedy_basis(const std::vector<Vec>& generators, const Tolerances& tol = {}) {
  if (generators.empty()) return Mat(0, 0);
  const Eigen::Index k = generators.front().size();
  Mat q(k, 0);
  std::vector<Eigen::Index> chosen;
  for (std::size_t i = 0; i < generators.size(); ++i) {
    const Vec& g = generators[i];
    if (g.size() != k) throw Error(ErrorCode::kDimMismatch, "greedy_basis: generators differ in size");
    Vec r = g - q * (q.transpose() * g);
    r -= q * (q.transpose() * r);  // second Gram-Schmidt pass
    const double rn = r.norm();
    if (rn <= tol.incl_tol * g.norm() || rn == 0.0) continue;
    q.conservativeResize(k, q.cols() + 1);
    q.col(q.cols() - 1) = r / rn;
    chosen.push_back(static_cast<Eigen::Index>(i));
  }
  Mat out(k, static_cast<Eigen::Index>(chosen.size()));
  for (std::size_t c = 0; c < chosen.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = generators[chosen[c]];
  return out;
}

/// (df/dtheta) u. Uses the analytic Jacobian when present, otherwise a
/// central difference along u.
inline Vec directional_derivative(const DifferentiableMap& f, const Vec& theta, const Vec& u) {
  if (u.size() != f.in_dim) throw Error(ErrorCode::kDimMismatch, "direction size");
  require_finite(u, "direction");
  if (f.has_analytic_jacobian()) return f.gradient(theta) * u;
  const double un = u.norm();
  if (un == 0.0) return Vec::Zero(f.out_dim);
  const double h = DifferentiableMap::fd_step(theta);
  const Vec dir = u / un;
  return (f(theta + h * dir) - f(theta - h * dir)) / (2.0 * h) * un;
}

/// Whether u lies in the tangent cone (for sparse sets) or its span.
inline bool is_tangent(const ConstraintSet& set, const Vec& theta, const Vec& u, const Tolerances& tol = {}) {
  detail::check_point(set, theta);
  if (u.size() != theta.size()) throw Error(ErrorCode::kDimMismatch, "direction size");
  if (const auto* sp = set.get_if<sets::Sparse>()) {
    // Cone, not span: |supp u U supp theta| <= s.
    const Vec both = theta.cwiseAbs() + u.cwiseAbs();
    return static_cast<int>(support(both).size()) <= sp->s;
  }
  if (const auto* prod = set.get_if<sets::Product>()) {
    bool ok = true;
    detail::for_each_factor(*prod, [&](const ConstraintSet& f, Eigen::Index off, Eigen::Index k) {
      ok = ok && is_tangent(f, theta.segment(off, k), u.segment(off, k), tol);
    });
    return ok;
  }
  return colspace_included(u, tangent_span(set, theta, tol).v, tol);
}

/// Moves from theta along step and back onto the set. Supported for
/// Euclidean, Sphere, Stiefel and orthogonal groups (QR), FixedRank
/// (truncated SVD), FixedRankPsd (eigen truncation), PositiveDefinite
/// (exponential map), Sparse (top-s) and products of those.
inline Vec retract(const ConstraintSet& set, const Vec& theta, const Vec& step) {
  detail::check_point(set, theta);
  if (step.size() != theta.size()) throw Error(ErrorCode::kDimMismatch, "step size");
  const Vec y = theta + step;
  return std::visit(
      overloaded{
          [&](const sets::Euclidean&) -> Vec { return y; },
          [&](const sets::Sphere&) -> Vec { return y / y.norm(); },
          [&](const sets::Stiefel& s) -> Vec { return vec(detail::qr_retract(unvec(y, s.p, s.q))); },
          [&](const sets::OrthogonalGroup& s) -> Vec { return vec(detail::qr_retract(unvec(y, s.p, s.p))); },
          [&](const sets::SpecialOrthogonal& s) -> Vec { return vec(detail::qr_retract(unvec(y, s.p, s.p))); },
          [&](const sets::FixedRank& s) -> Vec { return vec(detail::truncated_svd(unvec(y, s.p, s.q), s.r)); },
          [&](const sets::FixedRankPsd& s) -> Vec {
            const auto [lambda, u] = detail::eig_desc(unvec(y, s.p, s.p));
            const Mat ur = u.leftCols(s.r);
            return vec(ur * lambda.head(s.r).asDiagonal() * ur.transpose());
          },
          [&](const sets::PositiveDefinite& s) -> Vec {
            // X^{1/2} expm(X^{-1/2} S X^{-1/2}) X^{1/2} never leaves the cone.
            const Mat x = unvec(theta, s.p, s.p);
            const Mat st = unvec(step, s.p, s.p);
            Eigen::SelfAdjointEigenSolver<Mat> ex(0.5 * (x + x.transpose()));
            if (ex.eigenvalues().minCoeff() <= 0.0) return vec(0.5 * (unvec(y, s.p, s.p) + unvec(y, s.p, s.p).transpose()));
            const Mat half = ex.eigenvectors() * ex.eigenvalues().cwiseSqrt().asDiagonal() * ex.eigenvectors().transpose();
            const Mat inv_half =
                ex.eigenvectors() * ex.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * ex.eigenvectors().transpose();
            const Mat inner = inv_half * (0.5 * (st + st.transpose())) * inv_half;
            Eigen::SelfAdjointEigenSolver<Mat> ei(0.5 * (inner + inner.transpose()));
            const Mat e = ei.eigenvectors() * ei.eigenvalues().array().exp().matrix().asDiagonal() * ei.eigenvectors().transpose();
            const Mat out = half * e * half;
            return vec(0.5 * (out + out.transpose()));
          },
          [&](const sets::Sparse& s) -> Vec { return detail::keep_largest(y, s.s); },
          [&](const sets::EqualityManifold&) -> Vec {
            throw Error(ErrorCode::kNoRetraction, "equality manifold has no retraction");
          },
          [&](const sets::TransformImage&) -> Vec {
            throw Error(ErrorCode::kNoRetraction, "transform image has no retraction");
          },
          [&](const sets::Product& s) -> Vec {
            Vec out(theta.size());
            detail::for_each_factor(s, [&](const ConstraintSet& f, Eigen::Index off, Eigen::Index k) {
              out.segment(off, k) = retract(f, theta.segment(off, k), step.segment(off, k));
            });
            return out;
          },
      },
      set.variant());
}

/// Metric projection argmin_{x in set} |y - x| for closed sets with a
/// known rule.
inline Vec project_onto(const ConstraintSet& set, const Vec& y) {
  detail::check_point(set, y);
  return std::visit(
      overloaded{
          [&](const sets::Euclidean&) -> Vec { return y; },
          [&](const sets::Sphere&) -> Vec {
            const double n = y.norm();
            if (n < 1e-300) throw Error(ErrorCode::kDegenerateInput, "projection of ~0 onto the sphere");
            return y / n;
          },
          [&](const sets::Stiefel& s) -> Vec { return vec(detail::polar_factor(unvec(y, s.p, s.q))); },
          [&](const sets::OrthogonalGroup& s) -> Vec { return vec(detail::polar_factor(unvec(y, s.p, s.p))); },
          [&](const sets::SpecialOrthogonal& s) -> Vec {
            const Mat x = unvec(y, s.p, s.p);
            Eigen::JacobiSVD<Mat> svd(x, Eigen::ComputeFullU | Eigen::ComputeFullV);
            Mat u = svd.matrixU();
            if ((u * svd.matrixV().transpose()).determinant() < 0) u.col(s.p - 1) = -u.col(s.p - 1);
            return vec(u * svd.matrixV().transpose());
          },
          [&](const sets::FixedRank& s) -> Vec { return vec(detail::truncated_svd(unvec(y, s.p, s.q), s.r)); },
          [&](const sets::FixedRankPsd& s) -> Vec {
            const auto [lambda, u] = detail::eig_desc(unvec(y, s.p, s.p));
            if (lambda(s.r - 1) <= 0.0) {
              throw Error(ErrorCode::kDegenerateInput, "fewer than r positive eigenvalues");
            }
            const Mat ur = u.leftCols(s.r);
            return vec(ur * lambda.head(s.r).asDiagonal() * ur.transpose());
          },
          [&](const sets::PositiveDefinite&) -> Vec {
            throw Error(ErrorCode::kNoProjection, "positive definite cone is not closed");
          },
          [&](const sets::Sparse& s) -> Vec { return detail::keep_largest(y, s.s); },
          [&](const sets::EqualityManifold&) -> Vec {
            throw Error(ErrorCode::kNoProjection, "no projection rule for equality manifolds");
          },
          [&](const sets::TransformImage&) -> Vec {
            throw Error(ErrorCode::kNoProjection, "no projection rule for transform images");
          },
          [&](const sets::Product& s) -> Vec {
            Vec out(y.size());
            detail::for_each_factor(s, [&](const ConstraintSet& f, Eigen::Index off, Eigen::Index k) {
              out.segment(off, k) = project_onto(f, y.segment(off, k));
            });
            return out;
          },
      },
      set.variant());
}

struct WitnessStep {
  Vec theta;
  double lambda = 0.0;
};

/// Sequences theta_i -> theta in the set with lambda_i (theta_i - theta) -> u.
/// Step j uses lambda_j = 2^j and theta_j = retract(theta, u / lambda_j),
/// i.e. the subsequence i = 2^j of theta_i = R(theta + u / i), lambda_i = i.
/// j starts at the first power of two with |u| / 2^j <= 0.1 max(1, |theta|).
inline std::vector<WitnessStep> tangent_vector_witness(const ConstraintSet& set, const Vec& theta, const Vec& u,
                                                       int n_steps, const Tolerances& tol = {}) {
  if (n_steps <= 0 || n_steps > 48) throw Error(ErrorCode::kInvalidArgument, "n_steps must be in [1, 48]");
  if (set.get_if<sets::EqualityManifold>() || set.get_if<sets::TransformImage>()) {
    throw Error(ErrorCode::kNoRetraction, set.name() + " has no retraction");
  }
  if (!is_tangent(set, theta, u, tol)) throw Error(ErrorCode::kNotTangent, "u is not a tangent vector");
  std::vector<WitnessStep> out;
  out.reserve(static_cast<std::size_t>(n_steps));
  // Start once the first step is small relative to theta.
  int j0 = 0;
  while (j0 < 60 && u.norm() > 0.1 * std::max(1.0, theta.norm()) * std::ldexp(1.0, j0)) ++j0;
  for (int j = j0; j < j0 + n_steps; ++j) {
    const double lambda = std::ldexp(1.0, j);
    out.push_back({retract(set, theta, u / lambda), lambda});
  }
  return out;
}

/// Random element of the tangent cone. For sparse sets the draw respects
/// the cone (|supp u U supp theta| <= s); elsewhere it is V c with c
/// standard normal.
inline Vec sample_tangent_vector(const ConstraintSet& set, const Vec& theta, Rng& rng, const Tolerances& tol = {}) {
  if (const auto* sp = set.get_if<sets::Sparse>()) {
    detail::check_point(set, theta);
    auto supp = support(theta);
    std::vector<Eigen::Index> rest;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      if (std::find(supp.begin(), supp.end(), i) == supp.end()) rest.push_back(i);
    }
    std::shuffle(rest.begin(), rest.end(), rng);
    const int room = std::max(0, sp->s - static_cast<int>(supp.size()));
    const int extra = uniform_int(0, room, rng);
    for (int i = 0; i < extra; ++i) supp.push_back(rest[static_cast<std::size_t>(i)]);
    Vec u = Vec::Zero(theta.size());
    std::normal_distribution<double> normal;
    for (auto i : supp) u(i) = normal(rng);
    return u;
  }
  if (const auto* prod = set.get_if<sets::Product>()) {
    Vec u(theta.size());
    detail::for_each_factor(*prod, [&](const ConstraintSet& f, Eigen::Index off, Eigen::Index k) {
      u.segment(off, k) = sample_tangent_vector(f, theta.segment(off, k), rng, tol);
    });
    return u;
  }
  const TangentSpan span = tangent_span(set, theta, tol);
  return span.v * gaussian_vector(span.d, rng);
}

}  // namespace ccrb
