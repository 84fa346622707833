#pragma once

// Dense linear-algebra kernel shared by every other module: Moore-Penrose
// inverse, PSD square root, projectors, null spaces, Loewner order and
// column-space inclusion. All rank decisions go through Svd so that the
// answers of pinv/projector/null_space on the same matrix agree.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "ccrb/error.hpp"

namespace ccrb {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Tolerances {
  /// Singular values below rank_rel_tol * sigma_max count as zero.
  double rank_rel_tol = 1e-10;
  /// Eigenvalues >= -psd_tol are accepted as nonnegative.
  double psd_tol = 1e-9;
  double sym_tol = 1e-10;
  /// Column-space inclusion residual threshold, relative to 1 + |B|.
  double incl_tol = 1e-8;
  /// Constraint-residual threshold for set membership.
  double member_tol = 1e-9;

  void validate() const {
    if (!(rank_rel_tol > 0 && psd_tol > 0 && sym_tol > 0 && incl_tol > 0 && member_tol > 0)) {
      throw Error(ErrorCode::kInvalidArgument, "tolerances must be strictly positive");
    }
  }
};

inline void require_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::kNonFinite, std::string(what) + " has non-finite entries");
  }
}

inline void require_same_dims(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::kDimMismatch, std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                                             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                             "x" + std::to_string(b.cols()));
  }
}

/// Symmetric matrix, stored symmetrized. Construction rejects non-square,
/// non-finite, or visibly asymmetric input (relative to sym_tol).
class SymMat {
 public:
  SymMat() = default;

  explicit SymMat(const Mat& m, double sym_tol = Tolerances{}.sym_tol) {
    if (m.rows() != m.cols()) {
      throw Error(ErrorCode::kDimMismatch, "SymMat requires a square matrix");
    }
    require_finite(m, "SymMat");
    if (m.size() > 0) {
      const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
      const double scale = 1.0 + m.cwiseAbs().maxCoeff();
      if (asym > sym_tol * scale) {
        throw Error(ErrorCode::kNotSymmetric, "asymmetry " + std::to_string(asym));
      }
    }
    m_ = 0.5 * (m + m.transpose());
  }

  static SymMat identity(Eigen::Index n) { return SymMat(Mat::Identity(n, n)); }
  static SymMat zero(Eigen::Index n) { return SymMat(Mat::Zero(n, n)); }

  Eigen::Index dim() const { return m_.rows(); }
  const Mat& matrix() const { return m_; }
  operator const Mat&() const { return m_; }  // NOLINT(google-explicit-constructor)
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

 private:
  Mat m_;
};

/// Thin SVD wrapper that fixes the numerical rank once.
class Svd {
 public:
  Svd(const Mat& m, const Tolerances& tol = {}) : rows_(m.rows()), cols_(m.cols()) {
    require_finite(m, "Svd input");
    if (rows_ == 0 || cols_ == 0) {
      u_ = Mat::Identity(rows_, rows_);
      v_ = Mat::Identity(cols_, cols_);
      s_ = Vec::Zero(0);
      return;
    }
    // Divide and conquer; Eigen hands blocks below 16 x 16 to one-sided Jacobi.
    Eigen::BDCSVD<Mat> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    u_ = svd.matrixU();
    v_ = svd.matrixV();
    s_ = svd.singularValues();
    const double smax = s_.size() > 0 ? s_(0) : 0.0;
    if (smax > 0) {
      for (Eigen::Index i = 0; i < s_.size(); ++i) {
        if (s_(i) > tol.rank_rel_tol * smax) ++rank_;
      }
    }
  }

  Eigen::Index rank() const { return rank_; }
  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  const Vec& singular_values() const { return s_; }
  const Mat& u() const { return u_; }
  const Mat& v() const { return v_; }

  /// Orthonormal basis of the column space.
  Mat range_basis() const { return u_.leftCols(rank_); }
  /// Orthonormal basis of the null space (right singular vectors).
  Mat null_basis() const { return v_.rightCols(cols_ - rank_); }
  /// Orthonormal basis of the orthogonal complement of the column space.
  Mat left_null_basis() const { return u_.rightCols(rows_ - rank_); }

  Mat pinv() const {
    Mat out = Mat::Zero(cols_, rows_);
    for (Eigen::Index i = 0; i < rank_; ++i) {
      out.noalias() += (v_.col(i) / s_(i)) * u_.col(i).transpose();
    }
    return out;
  }

  Mat projector() const {
    const Mat q = range_basis();
    return q * q.transpose();
  }

 private:
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
  Eigen::Index rank_ = 0;
  Mat u_;
  Mat v_;
  Vec s_;
};

inline Mat pinv(const Mat& m, const Tolerances& tol = {}) { return Svd(m, tol).pinv(); }

inline Eigen::Index rank(const Mat& m, const Tolerances& tol = {}) { return Svd(m, tol).rank(); }

inline SymMat symmetrize(const Mat& m) {
  if (m.rows() != m.cols()) throw Error(ErrorCode::kDimMismatch, "symmetrize requires a square matrix");
  return SymMat(0.5 * (m + m.transpose()), 1.0);
}

inline double min_eigenvalue(const SymMat& m) {
  if (m.dim() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(m.matrix(), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

/// Spectral norm of a symmetric matrix.
inline double spectral_norm(const SymMat& m) {
  if (m.dim() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(m.matrix(), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// PSD test with an absolute eigenvalue floor of -psd_tol.
inline bool is_psd(const SymMat& m, const Tolerances& tol = {}) { return min_eigenvalue(m) >= -tol.psd_tol; }

inline SymMat sym_sqrt(const SymMat& m, const Tolerances& tol = {}) {
  if (m.dim() == 0) return m;
  Eigen::SelfAdjointEigenSolver<Mat> es(m.matrix());
  Vec lambda = es.eigenvalues();
  if (lambda(0) < -tol.psd_tol) {
    throw Error(ErrorCode::kNotPsd, "min eigenvalue " + std::to_string(lambda(0)));
  }
  lambda = lambda.cwiseMax(0.0).cwiseSqrt();
  const Mat& q = es.eigenvectors();
  return symmetrize(q * lambda.asDiagonal() * q.transpose());
}

/// Orthogonal projector W W^+ onto col(W).
inline SymMat col_projector(const Mat& w, const Tolerances& tol = {}) { return symmetrize(Svd(w, tol).projector()); }

/// A >= B in the Loewner order, with slack psd_tol * (1 + |A| + |B|).
inline bool loewner_geq(const SymMat& a, const SymMat& b, const Tolerances& tol = {}) {
  require_same_dims(a, b, "loewner_geq");
  const double slack = tol.psd_tol * (1.0 + spectral_norm(a) + spectral_norm(b));
  return min_eigenvalue(SymMat(a.matrix() - b.matrix(), 1.0)) >= -slack;
}

/// Projection residual |(I - C C^+) B|_F.
inline double colspace_residual(const Mat& b, const Mat& c, const Tolerances& tol = {}) {
  if (b.rows() != c.rows()) {
    throw Error(ErrorCode::kDimMismatch, "colspace_included: B has " + std::to_string(b.rows()) +
                                             " rows, C has " + std::to_string(c.rows()));
  }
  require_finite(b, "B");
  if (b.size() == 0) return 0.0;
  const Mat q = Svd(c, tol).range_basis();
  return (b - q * (q.transpose() * b)).norm();
}

/// col(B) is a subset of col(C).
inline bool colspace_included(const Mat& b, const Mat& c, const Tolerances& tol = {}) {
  return colspace_residual(b, c, tol) <= tol.incl_tol * (1.0 + b.norm());
}

/// Orthonormal basis (columns) of null(M); may have zero columns.
inline Mat null_space(const Mat& m, const Tolerances& tol = {}) { return Svd(m, tol).null_basis(); }

/// Orthonormal basis of col(M).
inline Mat range_space(const Mat& m, const Tolerances& tol = {}) { return Svd(m, tol).range_basis(); }

/// Block-diagonal assembly.
inline Mat block_diag(const Mat& a, const Mat& b) {
  Mat out = Mat::Zero(a.rows() + b.rows(), a.cols() + b.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a;
  out.bottomRightCorner(b.rows(), b.cols()) = b;
  return out;
}

/// max |a_ij - b_ij| / (1 + max |b_ij|).
inline double rel_max_diff(const Mat& a, const Mat& b) {
  require_same_dims(a, b, "rel_max_diff");
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff() / (1.0 + b.cwiseAbs().maxCoeff());
}

}  // namespace ccrb
