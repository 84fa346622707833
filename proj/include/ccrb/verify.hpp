#pragma once

// Property suites over random instances: the executable form of the
// identities and inequalities the bound engine relies on. Each suite
// returns per-property pass/fail/excluded counts; the CLI `verify`
// command prints them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "ccrb/crb.hpp"
#include "ccrb/matlin.hpp"
#include "ccrb/random.hpp"
#include "ccrb/schur.hpp"
#include "ccrb/tangent.hpp"

namespace ccrb::verify {

struct PropertyResult {
  std::string name;
  int passed = 0;
  int failed = 0;
  int excluded = 0;

  void record(bool ok) { ok ? ++passed : ++failed; }
  bool ok() const { return failed == 0 && passed > 0; }
};

struct SuiteResult {
  std::string suite;
  std::vector<PropertyResult> properties;

  bool ok() const {
    for (const auto& p : properties) {
      if (!p.ok()) return false;
    }
    return !properties.empty();
  }
};

// ---------------------------------------------------------------------------
// Random instances

/// Even variants: Gram matrix G^T G split into blocks (PSD by
/// construction, possibly singular). Odd variants rotate through random
/// symmetric, range-violating, and perturbed-complement indefinite cases.
inline BlockSym random_block_sym(Rng& rng, int variant) {
  const int p = uniform_int(1, 4, rng);
  const int q = uniform_int(1, 4, rng);
  const int n = p + q;
  if (variant % 2 == 0) {
    const int m = uniform_int(std::max(1, n - 1), n + 3, rng);
    const Mat g = gaussian_matrix(m, n, rng);
    const Mat gram = g.transpose() * g;
    return {SymMat(gram.topLeftCorner(p, p)), gram.topRightCorner(p, q), SymMat(gram.bottomRightCorner(q, q))};
  }
  switch ((variant / 2) % 3) {
    case 0: {
      const Mat r = gaussian_matrix(n, n, rng);
      const Mat s = 0.5 * (r + r.transpose());
      return {SymMat(s.topLeftCorner(p, p)), s.topRightCorner(p, q), SymMat(s.bottomRightCorner(q, q))};
    }
    case 1: {
      // Singular C with B^T outside col(C).
      const SymMat c = random_psd(q, uniform_int(0, q - 1 < 0 ? 0 : q - 1, rng), rng);
      const Mat b = gaussian_matrix(p, q, rng);
      const SymMat a = symmetrize(random_spd(p, rng).matrix() * 5.0);
      return {a, b, c};
    }
    default: {
      // Range condition met; complement A - B C^+ B^T = E has mixed-sign spectrum.
      const SymMat c = random_spd(q, rng);
      const Mat b = gaussian_matrix(p, q, rng);
      const Mat qe = random_orthogonal(p, rng);
      Vec e(p);
      for (int i = 0; i < p; ++i) e(i) = uniform_real(-0.5, 1.5, rng);
      if (e.minCoeff() > 0) e(0) = -std::abs(e(0)) - 0.05;
      const Mat a = b * pinv(c) * b.transpose() + qe * e.asDiagonal() * qe.transpose();
      return {symmetrize(a), b, c};
    }
  }
}

/// Random polynomial map R^d -> R^k of degree <= 3 with exact Jacobian.
inline DifferentiableMap random_polynomial_map(int d, int k, Rng& rng) {
  struct Term {
    int out;
    double coef;
    std::vector<int> powers;
  };
  std::vector<Term> terms;
  for (int o = 0; o < k; ++o) {
    const int n_terms = uniform_int(1, 4, rng);
    for (int t = 0; t < n_terms; ++t) {
      Term term{o, uniform_real(-1.0, 1.0, rng), std::vector<int>(static_cast<std::size_t>(d), 0)};
      int degree = uniform_int(1, 3, rng);
      while (degree-- > 0) ++term.powers[static_cast<std::size_t>(uniform_int(0, d - 1, rng))];
      terms.push_back(term);
    }
  }
  auto eval = [terms, k, d](const Vec& x) -> Vec {
    Vec out = Vec::Zero(k);
    for (const auto& t : terms) {
      double v = t.coef;
      for (int j = 0; j < d; ++j) v *= std::pow(x(j), t.powers[static_cast<std::size_t>(j)]);
      out(t.out) += v;
    }
    return out;
  };
  auto jac = [terms, k, d](const Vec& x) -> Mat {
    Mat out = Mat::Zero(k, d);
    for (const auto& t : terms) {
      for (int j = 0; j < d; ++j) {
        const int pj = t.powers[static_cast<std::size_t>(j)];
        if (pj == 0) continue;
        double v = t.coef * pj * std::pow(x(j), pj - 1);
        for (int l = 0; l < d; ++l) {
          if (l != j) v *= std::pow(x(l), t.powers[static_cast<std::size_t>(l)]);
        }
        out(t.out, j) += v;
      }
    }
    return out;
  };
  return DifferentiableMap{d, k, eval, jac};
}

/// Unit circle in R^2 as {h(theta) = |theta|^2 - 1 = 0}.
inline ConstraintSet circle() {
  return ConstraintSet::equality(DifferentiableMap{
      2, 1, [](const Vec& x) -> Vec { return Vec::Constant(1, x.squaredNorm() - 1.0); },
      [](const Vec& x) -> Mat { return 2.0 * x.transpose(); }});
}

/// A random point of the given set.
inline Vec random_point(const ConstraintSet& set, Rng& rng) {
  return std::visit(
      overloaded{
          [&](const sets::Euclidean& s) -> Vec { return gaussian_vector(s.k, rng); },
          [&](const sets::Sphere& s) -> Vec { return gaussian_vector(s.k, rng).normalized(); },
          [&](const sets::Stiefel& s) -> Vec { return vec(random_orthogonal(s.p, rng).leftCols(s.q)); },
          [&](const sets::OrthogonalGroup& s) -> Vec { return vec(random_orthogonal(s.p, rng)); },
          [&](const sets::SpecialOrthogonal& s) -> Vec {
            Mat x = random_orthogonal(s.p, rng);
            if (x.determinant() < 0) x.col(0) = -x.col(0);
            return vec(x);
          },
          [&](const sets::FixedRank& s) -> Vec { return vec(gaussian_matrix(s.p, s.r, rng) * gaussian_matrix(s.r, s.q, rng)); },
          [&](const sets::FixedRankPsd& s) -> Vec {
            const Mat g = gaussian_matrix(s.p, s.r, rng);
            return vec(g * g.transpose());
          },
          [&](const sets::PositiveDefinite& s) -> Vec { return vec(random_spd(s.p, rng).matrix()); },
          [&](const sets::Sparse& s) -> Vec {
            std::vector<int> idx(static_cast<std::size_t>(s.k));
            for (int i = 0; i < s.k; ++i) idx[static_cast<std::size_t>(i)] = i;
            std::shuffle(idx.begin(), idx.end(), rng);
            const int m = uniform_int(0, s.s, rng);
            Vec x = Vec::Zero(s.k);
            for (int i = 0; i < m; ++i) x(idx[static_cast<std::size_t>(i)]) = uniform_real(0.5, 2.0, rng) * (uniform_int(0, 1, rng) ? 1 : -1);
            return x;
          },
          [&](const sets::EqualityManifold& s) -> Vec {
            // Only the circle-type constraint |x|^2 = 1 is sampled here.
            return gaussian_vector(s.h.in_dim, rng).normalized();
          },
          [&](const sets::TransformImage& s) -> Vec { return s.g(s.rho); },
          [&](const sets::Product& s) -> Vec {
            std::vector<Vec> parts;
            Eigen::Index total = 0;
            for (const auto& f : s.factors) {
              parts.push_back(random_point(f, rng));
              total += parts.back().size();
            }
            Vec out(total);
            Eigen::Index off = 0;
            for (const auto& part : parts) {
              out.segment(off, part.size()) = part;
              off += part.size();
            }
            return out;
          },
      },
      set.variant());
}

/// Expected dim span T(theta) for manifold entries of the catalog.
inline Eigen::Index expected_manifold_dim(const ConstraintSet& set) {
  return std::visit(overloaded{
                        [](const sets::Euclidean& s) -> Eigen::Index { return s.k; },
                        [](const sets::Sphere& s) -> Eigen::Index { return s.k - 1; },
                        [](const sets::Stiefel& s) -> Eigen::Index { return s.p * s.q - s.q * (s.q + 1) / 2; },
                        [](const sets::OrthogonalGroup& s) -> Eigen::Index { return s.p * (s.p - 1) / 2; },
                        [](const sets::SpecialOrthogonal& s) -> Eigen::Index { return s.p * (s.p - 1) / 2; },
                        [](const sets::FixedRank& s) -> Eigen::Index { return s.r * (s.p + s.q - s.r); },
                        [](const sets::FixedRankPsd& s) -> Eigen::Index { return s.r * (s.r + 1) / 2 + s.r * (s.p - s.r); },
                        [](const sets::PositiveDefinite& s) -> Eigen::Index { return s.p * (s.p + 1) / 2; },
                        [](const auto&) -> Eigen::Index { return -1; },
                    },
                    set.variant());
}

/// Catalog entries exercised by the tangent suite.
inline std::vector<ConstraintSet> catalog_samples() {
  return {ConstraintSet::euclidean(3),
          ConstraintSet::sphere(4),
          ConstraintSet::stiefel(4, 2),
          ConstraintSet::orthogonal(3),
          ConstraintSet::special_orthogonal(3),
          ConstraintSet::fixed_rank(3, 4, 2),
          ConstraintSet::fixed_rank_psd(4, 2),
          ConstraintSet::positive_definite(3),
          ConstraintSet::sparse(5, 2),
          circle(),
          ConstraintSet::product({ConstraintSet::sphere(3), ConstraintSet::sparse(3, 1)})};
}

// ---------------------------------------------------------------------------
// Suites

inline SuiteResult schur_suite(int trials, std::uint64_t seed, const Tolerances& tol = {}) {
  PropertyResult iff{"schur_equivalence"};
  PropertyResult weak{"psd_implies_complement_psd"};
  for (int t = 0; t < trials; ++t) {
    Rng rng = stream(seed, static_cast<std::uint64_t>(t));
    const BlockSym m = random_block_sym(rng, t);
    const double lam = min_eigenvalue(m.assemble());
    const bool direct = block_psd_direct(m, tol);
    const SchurConditions c = schur_conditions(m, tol);
    if (std::abs(lam) < 10.0 * tol.psd_tol) {
      ++iff.excluded;
    } else {
      iff.record(direct == c.all());
    }
    if (direct) weak.record(c.complement_psd);
  }
  return {"schur", {iff, weak}};
}

inline SuiteResult monotonicity_suite(int trials, std::uint64_t seed, const Tolerances& tol = {}) {
  PropertyResult mono{"nested_span_monotonicity"};
  PropertyResult dominance{"per_u_bound_below_inverse_fisher"};
  PropertyResult colspace{"column_space_only_dependence"};
  PropertyResult best{"span_bound_dominates_sub_spans"};
  for (int t = 0; t < trials; ++t) {
    Rng rng = stream(seed, static_cast<std::uint64_t>(t));
    const int k = uniform_int(2, 6, rng);
    const SymMat j = random_spd(k, rng);
    const Mat db = 0.5 * gaussian_matrix(k, k, rng);
    const FisherContext biased(j, db, tol);
    const FisherContext unbiased(j, tol);

    const int m2 = uniform_int(1, k, rng);
    const Mat w2 = gaussian_matrix(k, m2, rng);
    const Mat w1 = w2 * gaussian_matrix(m2, uniform_int(1, m2 + 1, rng), rng);
    mono.record(monotonicity_check(biased, w1, w2, tol).verdict == Monotonicity::kHolds);

    const Mat u = gaussian_matrix(k, uniform_int(1, k + 1, rng), rng);
    const SymMat inv_j = symmetrize(j.matrix().inverse());
    dominance.record(loewner_geq(inv_j, constrained_bound_u(unbiased, u, tol).bound, tol));

    // Possibly singular J with W^T J W > 0.
    const int m = uniform_int(1, k, rng);
    const SymMat js = random_psd(k, uniform_int(m, k, rng), rng);
    const Mat w = gaussian_matrix(k, m, rng);
    if (min_eigenvalue(symmetrize(w.transpose() * js.matrix() * w)) <= tol.psd_tol) {
      ++colspace.excluded;
    } else {
      const FisherContext cs(js, tol);
      const Mat b1 = constrained_bound_u(cs, w, tol).bound;
      const Mat b2 = constrained_bound_u(cs, Mat(w * random_invertible(m, rng)), tol).bound;
      colspace.record(rel_max_diff(b2, b1) <= 1e-8);
    }

    const TangentSpan span{w2, w2.cols(), col_projector(w2, tol)};
    const Mat sub = w2 * gaussian_matrix(m2, uniform_int(1, m2, rng), rng);
    best.record(loewner_geq(constrained_crb(biased, span, tol).bound, constrained_bound_u(biased, sub, tol).bound, tol));
  }
  return {"monotonicity", {mono, dominance, colspace, best}};
}

inline SuiteResult formulas_suite(int trials, std::uint64_t seed, const Tolerances& tol = {}) {
  PropertyResult cross{"basis_projector_reduction_agree"};
  PropertyResult push{"pushforward_identity"};
  PropertyResult collapse{"full_span_equals_unconstrained"};
  for (int t = 0; t < trials; ++t) {
    Rng rng = stream(seed, static_cast<std::uint64_t>(t));
    const int k = uniform_int(1, 6, rng);
    const SymMat j = random_spd(k, rng);
    const FisherContext ctx(j, tol);
    const Mat v = gaussian_matrix(k, uniform_int(1, k, rng), rng);
    const TangentSpan span{v, v.cols(), col_projector(v, tol)};
    const Mat via_pi = constrained_crb(ctx, span, tol).bound;
    const Mat via_v = constrained_crb_via_basis(ctx, span, tol).bound;
    const Mat via_red = crb_reduction(ctx, span, tol).bound();
    cross.record(rel_max_diff(via_pi, via_v) <= 1e-8 && rel_max_diff(via_red, via_pi) <= 1e-8 &&
                 rel_max_diff(via_red, via_v) <= 1e-8);

    const int d = uniform_int(1, 3, rng);
    const int kk = uniform_int(d, 5, rng);
    const DifferentiableMap g = random_polynomial_map(d, kk, rng);
    const PushforwardResult pf = pushforward_crb(g, gaussian_vector(d, rng), random_spd(kk, rng), tol);
    push.record(rel_max_diff(pf.lhs, pf.rhs) <= 1e-7);

    const Mat db = 0.3 * gaussian_matrix(k, k, rng);
    const FisherContext biased(j, db, tol);
    const TangentSpan full{Mat::Identity(k, k), k, SymMat::identity(k)};
    collapse.record(rel_max_diff(constrained_crb(biased, full, tol).bound, unconstrained_crb(biased, tol).bound) <= 1e-12);
  }
  return {"formulas", {cross, push, collapse}};
}

inline SuiteResult tangent_suite(int trials, std::uint64_t seed, const Tolerances& tol = {}) {
  PropertyResult laws{"projector_laws"};
  PropertyResult dims{"manifold_dimension_counts"};
  PropertyResult tangency{"first_order_feasibility"};
  PropertyResult greedy{"greedy_basis_spans_generators"};
  PropertyResult product{"product_projector_is_block_diagonal"};
  PropertyResult witness{"witness_sequences_converge"};
  const auto catalog = catalog_samples();
  for (int t = 0; t < trials; ++t) {
    Rng rng = stream(seed, static_cast<std::uint64_t>(t));
    const ConstraintSet& set = catalog[static_cast<std::size_t>(t) % catalog.size()];
    const Vec theta = random_point(set, rng);
    const TangentSpan span = tangent_span(set, theta, tol);
    const Mat& p = span.pi.matrix();
    laws.record((p * p - p).norm() <= 1e-9 && (p - p.transpose()).norm() <= 1e-9 && (p * span.v - span.v).norm() <= 1e-9 &&
                rank(span.v, tol) == span.d);
    const Eigen::Index expected = expected_manifold_dim(set);
    if (expected >= 0) dims.record(span.d == expected);

    if (const auto* sp = set.get_if<sets::Sparse>()) {
      const auto supp = support(theta);
      dims.record(span.d == (static_cast<int>(supp.size()) < sp->s ? sp->k : static_cast<Eigen::Index>(supp.size())));
    }

    if (set.get_if<sets::Sphere>() || set.get_if<sets::EqualityManifold>()) {
      const Mat grad = 2.0 * theta.transpose();
      bool ok = true;
      for (Eigen::Index c = 0; c < span.d; ++c) {
        ok = ok && (grad * span.v.col(c)).norm() <= 1e-8 * grad.norm() * span.v.col(c).norm();
      }
      tangency.record(ok);
    }
    if (const auto* st = set.get_if<sets::Stiefel>()) {
      const Mat x = unvec(theta, st->p, st->q);
      bool ok = true;
      for (Eigen::Index c = 0; c < span.d; ++c) {
        const Mat u = unvec(span.v.col(c), st->p, st->q);
        ok = ok && (x.transpose() * u + u.transpose() * x).norm() <= 1e-8 * 2.0 * x.norm() * u.norm();
      }
      tangency.record(ok);
    }
    if (const auto* prod = set.get_if<sets::Product>()) {
      Mat expected_pi(0, 0);
      detail::for_each_factor(*prod, [&](const ConstraintSet& f, Eigen::Index off, Eigen::Index k) {
        expected_pi = block_diag(expected_pi, tangent_span(f, theta.segment(off, k), tol).pi.matrix());
      });
      product.record((expected_pi - p).cwiseAbs().maxCoeff() == 0.0);
    }

    if (!set.get_if<sets::EqualityManifold>() && span.d > 0) {
      const Vec u = sample_tangent_vector(set, theta, rng, tol);
      if (u.norm() > 1e-6) {
        const auto seq = tangent_vector_witness(set, theta, u, 24, tol);
        bool ok = true;
        for (const auto& step : seq) ok = ok && contains(set, step.theta, tol).in_set;
        const double first = (seq.front().lambda * (seq.front().theta - theta) - u).norm();
        const double last = (seq.back().lambda * (seq.back().theta - theta) - u).norm();
        // Straight-line sets are exact up to rounding, which grows with lambda.
        witness.record(ok && last < 1e-4 * u.norm() && (last <= first || last < 1e-6 * u.norm()));
      }
    }

    // Planted subspace.
    const int kk = uniform_int(4, 10, rng);
    const int dd = uniform_int(0, std::min(4, kk), rng);
    const Mat basis = gaussian_matrix(kk, dd, rng);
    std::vector<Vec> gens;
    for (int i = 0; i < 3 * dd + 2; ++i) gens.push_back(i % 5 == 4 ? Vec(Vec::Zero(kk)) : Vec(basis * gaussian_vector(dd, rng)));
    const Mat g = greedy_basis(gens, tol);
    Mat stacked(kk, static_cast<Eigen::Index>(gens.size()));
    for (std::size_t i = 0; i < gens.size(); ++i) stacked.col(static_cast<Eigen::Index>(i)) = gens[i];
    const bool independent = g.cols() == 0 || rank(g, tol) == g.cols();
    greedy.record(independent && g.cols() == dd && colspace_included(g, stacked, tol) && colspace_included(stacked, g, tol));
  }
  return {"tangent", {laws, dims, tangency, greedy, product, witness}};
}

inline SuiteResult feasibility_suite(int trials, std::uint64_t seed, const Tolerances& tol = {}) {
  PropertyResult sparse{"sparse_corner_equivalence"};
  PropertyResult circ{"circle_equivalence"};
  PropertyResult sph{"sphere_equivalence"};
  for (int t = 0; t < trials; ++t) {
    Rng rng = stream(seed, static_cast<std::uint64_t>(t));
    // Singular J; odd trials use a bias gradient that makes the projector
    // condition hold: S = X^T J, i.e. db = X^T J - I.
    const SymMat j = random_psd(3, uniform_int(1, 2, rng), rng);
    Mat db = Mat::Zero(3, 3);
    if (t % 2 == 1) db = gaussian_matrix(3, 3, rng).transpose() * j.matrix() - Mat::Identity(3, 3);
    const auto rep = feasibility_equivalence_check(FisherContext(j, db, tol), ConstraintSet::sparse(3, 1), Vec::Zero(3), 20,
                                                   seed ^ static_cast<std::uint64_t>(t), tol);
    sparse.record(rep.consistent());

    Mat jc = Mat::Zero(2, 2);
    jc(0, 0) = 1.0;
    Vec theta(2);
    theta << 0.0, 1.0;
    const auto crep = feasibility_equivalence_check(FisherContext(SymMat(jc), gaussian_matrix(2, 2, rng), tol), circle(),
                                                    theta, 20, seed + static_cast<std::uint64_t>(t), tol);
    circ.record(crep.consistent() && crep.projector_condition);

    const auto srep = feasibility_equivalence_check(FisherContext(random_spd(3, rng), tol), ConstraintSet::sphere(3),
                                                    random_point(ConstraintSet::sphere(3), rng), 20, seed, tol);
    sph.record(srep.consistent() && srep.projector_condition);
  }
  return {"feasibility", {sparse, circ, sph}};
}

/// Directional derivatives along tangent vectors do not depend on how a
/// function is extended off the set.
inline SuiteResult extension_suite(int trials, std::uint64_t seed, const Tolerances& tol = {}) {
  PropertyResult sphere_ext{"sphere_extensions_agree"};
  PropertyResult sparse_ext{"sparse_extensions_agree"};
  PropertyResult control{"normal_directions_differ"};
  for (int t = 0; t < trials; ++t) {
    Rng rng = stream(seed, static_cast<std::uint64_t>(t));
    const int k = uniform_int(2, 5, rng);
    const Mat a = gaussian_matrix(2, k, rng);
    const Vec c = gaussian_vector(k, rng);
    // f1(x) = (a x) .* sin(x_0); f2 = f1 + (|x|^2 - 1) * (1 + c.x) * ones.
    DifferentiableMap f1{k, 2, [a](const Vec& x) -> Vec { return (a * x) * std::sin(x(0)); }, {}};
    DifferentiableMap f2{k, 2,
                         [a, c](const Vec& x) -> Vec {
                           return (a * x) * std::sin(x(0)) + Vec::Ones(2) * (x.squaredNorm() - 1.0) * (1.0 + c.dot(x));
                         },
                         {}};
    const ConstraintSet sphere = ConstraintSet::sphere(k);
    const Vec theta = random_point(sphere, rng);
    const Vec u = sample_tangent_vector(sphere, theta, rng, tol);
    sphere_ext.record((directional_derivative(f1, theta, u) - directional_derivative(f2, theta, u)).norm() <=
                      1e-6 * (1.0 + u.norm()));
    control.record((directional_derivative(f1, theta, theta) - directional_derivative(f2, theta, theta)).norm() > 1e-3 ||
                   std::abs(1.0 + c.dot(theta)) < 1e-3);

    // On {|x|_0 <= 1}, sum_{i != j} x_i x_j vanishes identically.
    const ConstraintSet sp = ConstraintSet::sparse(k, 1);
    Vec ts = Vec::Zero(k);
    const int idx = uniform_int(0, k - 1, rng);
    ts(idx) = uniform_real(0.5, 3.0, rng);
    DifferentiableMap g1{k, 1, [c](const Vec& x) -> Vec { return Vec::Constant(1, std::exp(c.dot(x))); }, {}};
    DifferentiableMap g2{k, 1,
                         [c](const Vec& x) -> Vec {
                           const double cross = x.sum() * x.sum() - x.squaredNorm();
                           return Vec::Constant(1, std::exp(c.dot(x)) + 3.0 * cross);
                         },
                         {}};
    const Vec us = sample_tangent_vector(sp, ts, rng, tol);
    sparse_ext.record((directional_derivative(g1, ts, us) - directional_derivative(g2, ts, us)).norm() <=
                      1e-6 * (1.0 + us.norm()));
  }
  return {"extension", {sphere_ext, sparse_ext, control}};
}

struct Counterexamples {
  Mat w;        // [[1, 0], [0, 0]]
  Mat j;        // ones(2)
  Mat j_pinv;   // ones / 4
  Mat bound;    // per-U bound with U = W
  bool pinv_dominates = true;

  Mat j2;       // diag(1, 0)
  Mat w1;       // I
  Mat w2;       // [[1, 1], [0, 1]]
  Mat bound1;
  Mat bound2;
  double max_diff = 0.0;
  Monotonicity verdict = Monotonicity::kHolds;
};

/// The two singular-J matrices for which the nonsingular-J statements fail.
inline Counterexamples counterexamples(const Tolerances& tol = {}) {
  Counterexamples cx;
  cx.w = Mat::Zero(2, 2);
  cx.w(0, 0) = 1.0;
  cx.j = Mat::Ones(2, 2);
  const FisherContext ctx{SymMat(cx.j), tol};
  cx.j_pinv = pinv(cx.j, tol);
  cx.bound = constrained_bound_u(ctx, cx.w, tol).bound;
  cx.pinv_dominates = loewner_geq(SymMat(cx.j_pinv), SymMat(cx.bound), tol);

  cx.j2 = Mat::Zero(2, 2);
  cx.j2(0, 0) = 1.0;
  cx.w1 = Mat::Identity(2, 2);
  cx.w2.resize(2, 2);
  cx.w2 << 1.0, 1.0, 0.0, 1.0;
  const FisherContext ctx2{SymMat(cx.j2), tol};
  const MonotonicityResult mr = monotonicity_check(ctx2, cx.w1, cx.w2, tol);
  cx.bound1 = mr.bound1;
  cx.bound2 = mr.bound2;
  cx.max_diff = (cx.bound1 - cx.bound2).cwiseAbs().maxCoeff();
  cx.verdict = mr.verdict;
  return cx;
}

inline SuiteResult counterexamples_suite(const Tolerances& tol = {}) {
  const Counterexamples cx = counterexamples(tol);
  auto prop = [](std::string name, bool ok) {
    PropertyResult p{std::move(name)};
    p.record(ok);
    return p;
  };
  Mat expected_bound = Mat::Zero(2, 2);
  expected_bound(0, 0) = 1.0;
  Mat expected_b2(2, 2);
  expected_b2 << 1.0, 0.5, 0.5, 0.25;
  return {"counterexamples",
          {prop("pinv_of_ones_is_quarter_ones", (cx.j_pinv - 0.25 * cx.j).cwiseAbs().maxCoeff() <= 1e-12),
           prop("per_u_bound_is_e1e1", (cx.bound - expected_bound).cwiseAbs().maxCoeff() <= 1e-12),
           prop("pinv_does_not_dominate", !cx.pinv_dominates),
           prop("w1_bound_is_e1e1", (cx.bound1 - expected_bound).cwiseAbs().maxCoeff() <= 1e-12),
           prop("w2_bound", (cx.bound2 - expected_b2).cwiseAbs().maxCoeff() <= 1e-12),
           prop("same_column_space_different_bounds", std::abs(cx.max_diff - 0.5) <= 1e-12),
           prop("positivity_proviso_flagged", cx.verdict == Monotonicity::kPreconditionFailed)}};
}

inline std::vector<std::string> suite_names() {
  return {"schur", "monotonicity", "formulas", "tangent", "feasibility", "extension", "counterexamples"};
}

inline SuiteResult run_suite(const std::string& name, int trials, std::uint64_t seed, const Tolerances& tol = {}) {
  if (name == "schur") return schur_suite(trials, seed, tol);
  if (name == "monotonicity") return monotonicity_suite(trials, seed, tol);
  if (name == "formulas") return formulas_suite(trials, seed, tol);
  if (name == "tangent") return tangent_suite(trials, seed, tol);
  if (name == "feasibility") return feasibility_suite(trials, seed, tol);
  if (name == "extension") return extension_suite(trials, seed, tol);
  if (name == "counterexamples") return counterexamples_suite(tol);
  throw Error(ErrorCode::kInvalidArgument, "unknown suite '" + name + "'");
}

}  // namespace ccrb::verify
