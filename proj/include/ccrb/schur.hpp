#pragma once

// Generalized Schur complement lemma: [[A, B], [B^T, C]] is PSD iff
//   C >= 0,  A - B C^+ B^T >= 0,  (I - C C^+) B^T = 0.
// The three conditions are evaluated independently so they can be checked
// against a direct eigenvalue test of the assembled matrix.

#include <string>
#include <utility>

#include "ccrb/matlin.hpp"

namespace ccrb {

struct BlockSym {
  SymMat a;  // p x p
  Mat b;     // p x q
  SymMat c;  // q x q

  BlockSym(SymMat a_in, Mat b_in, SymMat c_in) : a(std::move(a_in)), b(std::move(b_in)), c(std::move(c_in)) {
    if (b.rows() != a.dim() || b.cols() != c.dim()) {
      throw Error(ErrorCode::kDimMismatch, "BlockSym: B must be " + std::to_string(a.dim()) + "x" +
                                               std::to_string(c.dim()));
    }
    require_finite(b, "BlockSym B");
  }

  Eigen::Index p() const { return a.dim(); }
  Eigen::Index q() const { return c.dim(); }

  SymMat assemble() const {
    const Eigen::Index n = p() + q();
    Mat m(n, n);
    m.topLeftCorner(p(), p()) = a.matrix();
    m.topRightCorner(p(), q()) = b;
    m.bottomLeftCorner(q(), p()) = b.transpose();
    m.bottomRightCorner(q(), q()) = c.matrix();
    return SymMat(m);
  }
};

struct SchurConditions {
  bool c_psd = false;
  bool complement_psd = false;
  bool range_ok = false;

  bool all() const { return c_psd && complement_psd && range_ok; }
};

/// A - B C^+ B^T, symmetrized.
inline SymMat schur_complement(const BlockSym& m, const Tolerances& tol = {}) {
  return symmetrize(m.a.matrix() - m.b * pinv(m.c, tol) * m.b.transpose());
}

inline SchurConditions schur_conditions(const BlockSym& m, const Tolerances& tol = {}) {
  SchurConditions out;
  out.c_psd = is_psd(m.c, tol);
  out.complement_psd = is_psd(schur_complement(m, tol), tol);
  // (I - C C^+) B^T = 0, i.e. col(B^T) inside col(C).
  out.range_ok = colspace_included(m.b.transpose(), m.c, tol);
  return out;
}

inline bool block_psd_direct(const BlockSym& m, const Tolerances& tol = {}) { return is_psd(m.assemble(), tol); }

}  // namespace ccrb
