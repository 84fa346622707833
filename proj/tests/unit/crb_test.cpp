#include "ccrb/crb.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "ccrb/random.hpp"
#include "ccrb/verify.hpp"
#include "oracles.hpp"

namespace ccrb {
namespace {

Mat diag(std::initializer_list<double> d) {
  Vec v(static_cast<Eigen::Index>(d.size()));
  Eigen::Index i = 0;
  for (double x : d) v(i++) = x;
  return v.asDiagonal();
}

Mat m22(double a, double b, double c, double d) {
  Mat m(2, 2);
  m << a, b, c, d;
  return m;
}

double max_abs(const Mat& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

TEST(Sensitivity, Examples) {
  const SymMat j = SymMat::identity(2);
  EXPECT_EQ(sensitivity(FisherContext(j)), Mat::Identity(2, 2));
  EXPECT_TRUE(sensitivity(FisherContext(j, -Mat::Identity(2, 2))).isZero(0.0));
  EXPECT_TRUE(sensitivity(FisherContext(j, 0.1 * Mat::Identity(2, 2))).isApprox(1.1 * Mat::Identity(2, 2)));
}

TEST(FisherContext, Validation) {
  EXPECT_THROW(FisherContext(SymMat(diag({1.0, -1.0}))), Error);
  EXPECT_THROW(FisherContext(SymMat::identity(2), Mat::Zero(3, 3)), Error);
  Mat bad = Mat::Zero(2, 2);
  bad(0, 0) = NAN;
  EXPECT_THROW(FisherContext(SymMat::identity(2), bad), Error);
}

TEST(UnconstrainedCrb, Examples) {
  const double sigma = 2.0;
  const BoundResult r = unconstrained_crb(FisherContext(SymMat(Mat::Identity(3, 3) / (sigma * sigma))));
  EXPECT_TRUE(r.feasible);
  EXPECT_EQ(r.rule, BoundRule::kUnconstrained);
  EXPECT_LT(max_abs(r.bound.matrix() - 4.0 * Mat::Identity(3, 3)), 1e-12);

  const BoundResult singular = unconstrained_crb(FisherContext(SymMat(Mat::Ones(2, 2))));
  EXPECT_FALSE(singular.feasible);
  EXPECT_EQ(oracle::exact_rank({{1, 1}, {1, 1}}), 1);

  EXPECT_LT(max_abs(unconstrained_crb(FisherContext(SymMat(diag({1.0, 4.0})))).bound.matrix() - diag({1.0, 0.25})),
            1e-15);
}

TEST(UnconstrainedCrb, BiasMakesSingularFeasible) {
  // S = I + db with rows in col J: S = e1 e1^T for J = diag(1, 0).
  const FisherContext ctx(SymMat(diag({1.0, 0.0})), diag({0.0, -1.0}));
  const BoundResult r = unconstrained_crb(ctx);
  EXPECT_TRUE(r.feasible);
  EXPECT_LT(max_abs(r.bound.matrix() - diag({1.0, 0.0})), 1e-15);
}

TEST(ConstrainedBoundU, CounterexampleFromSingularJ) {
  const Mat w = diag({1.0, 0.0});
  const FisherContext ctx(SymMat(Mat::Ones(2, 2)));
  const BoundResult r = constrained_bound_u(ctx, w);
  EXPECT_EQ(r.rule, BoundRule::kPerU);
  EXPECT_TRUE(r.feasible);
  EXPECT_LT(max_abs(r.bound.matrix() - diag({1.0, 0.0})), 1e-12);
  const SymMat jp = symmetrize(pinv(Mat::Ones(2, 2)));
  EXPECT_LT(max_abs(jp.matrix() - Mat::Ones(2, 2) / 4.0), 1e-12);
  EXPECT_FALSE(loewner_geq(jp, r.bound));
}

TEST(ConstrainedBoundU, Examples) {
  const double sigma = 0.7;
  const FisherContext ctx(SymMat(Mat::Identity(2, 2) / (sigma * sigma)));
  Vec e2 = Vec::Zero(2);
  e2(1) = 1.0;
  EXPECT_LT(max_abs(constrained_bound_u(ctx, e2).bound.matrix() - sigma * sigma * e2 * e2.transpose()), 1e-15);

  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const FisherContext c(random_spd(4, rng));
    EXPECT_LT(rel_max_diff(constrained_bound_u(c, Mat::Identity(4, 4)).bound, unconstrained_crb(c).bound), 1e-10);
  }
  EXPECT_THROW(constrained_bound_u(ctx, Mat::Identity(3, 3)), Error);
}

TEST(FeasibilityProjector, Examples) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    const FisherContext ctx(random_spd(3, rng));
    const Mat u = gaussian_matrix(3, uniform_int(0, 3, rng), rng);
    EXPECT_TRUE(feasibility_projector(ctx, col_projector(u)));
  }
  EXPECT_FALSE(feasibility_projector(FisherContext(SymMat(Mat::Ones(2, 2))), SymMat::identity(2)));
  EXPECT_TRUE(feasibility_projector(FisherContext(SymMat::identity(3)), SymMat(diag({0.0, 0.0, 1.0}))));
  try {
    feasibility_projector(FisherContext(SymMat::identity(2)), SymMat(2.0 * Mat::Identity(2, 2)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotProjector);
  }
}

TEST(ConstrainedCrb, SphereDenoising) {
  const double sigma = 0.3;
  Vec e1 = Vec::Zero(3);
  e1(0) = 1.0;
  const TangentSpan span = tangent_span(ConstraintSet::sphere(3), e1);
  const FisherContext ctx(SymMat(Mat::Identity(3, 3) / (sigma * sigma)));
  const BoundResult r = constrained_crb(ctx, span);
  EXPECT_EQ(r.rule, BoundRule::kSpanProjector);
  EXPECT_TRUE(r.feasible);
  EXPECT_LT(max_abs(r.bound.matrix() - sigma * sigma * diag({0.0, 1.0, 1.0})), 1e-15);
  EXPECT_NEAR(r.bound.matrix().trace(), 2.0 * sigma * sigma, 1e-15);
  EXPECT_LT(max_abs(constrained_crb_via_basis(ctx, span).bound.matrix() - r.bound.matrix()), 1e-9);
}

TEST(ConstrainedCrb, SparseCorner) {
  for (int k : {2, 5, 50}) {
    const double sigma = 1.5;
    const TangentSpan span = tangent_span(ConstraintSet::sparse(k, 1), Vec::Zero(k));
    const BoundResult r = constrained_crb(FisherContext(SymMat(Mat::Identity(k, k) / (sigma * sigma))), span);
    EXPECT_NEAR(r.bound.matrix().trace(), sigma * sigma * k, 1e-12);
  }
}

TEST(ConstrainedCrb, EuclideanEqualsUnconstrained) {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const int k = uniform_int(1, 5, rng);
    const FisherContext ctx(random_spd(k, rng), 0.3 * gaussian_matrix(k, k, rng));
    const TangentSpan span = tangent_span(ConstraintSet::euclidean(k), Vec::Zero(k));
    EXPECT_EQ(constrained_crb(ctx, span).bound.matrix(), unconstrained_crb(ctx).bound.matrix());
  }
}

TEST(CrbReduction, Examples) {
  Vec e1 = Vec::Zero(2);
  e1(0) = 1.0;
  const TangentSpan span{Mat(e1), 1, SymMat(diag({1.0, 0.0}))};
  const CrbReduction red = crb_reduction(FisherContext(SymMat::identity(2)), span);
  EXPECT_LT(max_abs(red.reduction.matrix() - diag({0.0, 1.0})), 1e-15);
  EXPECT_LT(max_abs(red.bound().matrix() - diag({1.0, 0.0})), 1e-15);

  Rng rng(10);
  const SymMat j = random_spd(4, rng);
  const TangentSpan full{Mat::Identity(4, 4), 4, SymMat::identity(4)};
  EXPECT_TRUE(crb_reduction(FisherContext(j), full).reduction.matrix().isZero(0.0));

  try {
    crb_reduction(FisherContext(SymMat(diag({1.0, 0.0}))), span);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSingularJ);
  }
}

TEST(CrbReduction, AgreesWithProjectorForm) {
  Rng rng(13);
  for (int t = 0; t < 200; ++t) {
    const int k = uniform_int(1, 6, rng);
    const FisherContext ctx(random_spd(k, rng));
    const Mat v = gaussian_matrix(k, uniform_int(1, k, rng), rng);
    const TangentSpan span{v, v.cols(), col_projector(v)};
    const Mat p = span.pi.matrix();
    const Mat oracle = p * pinv(Mat(p * ctx.j().matrix() * p)) * p;
    EXPECT_LT(rel_max_diff(crb_reduction(ctx, span).bound(), oracle), 1e-8);
    EXPECT_LT(rel_max_diff(constrained_crb(ctx, span).bound, oracle), 1e-8);
    EXPECT_LT(rel_max_diff(constrained_crb_via_basis(ctx, span).bound, oracle), 1e-8);
  }
}

TEST(Pushforward, Circle) {
  DifferentiableMap g{1, 2,
                      [](const Vec& r) -> Vec { return Vec(Eigen::Vector2d(std::cos(r(0)), std::sin(r(0)))); },
                      [](const Vec& r) -> Mat { return Mat(Vec(Eigen::Vector2d(-std::sin(r(0)), std::cos(r(0))))); }};
  for (double rho : {0.0, 0.4, 2.5}) {
    const PushforwardResult r = pushforward_crb(g, Vec::Constant(1, rho), SymMat::identity(2));
    const Vec u(Eigen::Vector2d(-std::sin(rho), std::cos(rho)));
    EXPECT_LT(max_abs(r.lhs.matrix() - u * u.transpose()), 1e-14);
    EXPECT_LT(max_abs(r.rhs.matrix() - u * u.transpose()), 1e-14);
  }
}

TEST(Pushforward, LinearAndConstant) {
  Rng rng(15);
  const Mat m = gaussian_matrix(4, 2, rng);
  const PushforwardResult r = pushforward_crb(affine_map(m, Vec::Zero(4)), gaussian_vector(2, rng), SymMat::identity(4));
  const Mat oracle = m * (m.transpose() * m).inverse() * m.transpose();
  EXPECT_LT(rel_max_diff(r.lhs, oracle), 1e-12);
  EXPECT_LT(rel_max_diff(r.rhs, oracle), 1e-12);

  const PushforwardResult c = pushforward_crb(affine_map(Mat::Zero(3, 2), Vec::Ones(3)), Vec::Zero(2), SymMat::identity(3));
  EXPECT_TRUE(c.lhs.matrix().isZero(0.0));
  EXPECT_TRUE(c.rhs.matrix().isZero(0.0));
}

TEST(Pushforward, RandomPolynomialMaps) {
  Rng rng(16);
  for (int t = 0; t < 100; ++t) {
    const int d = uniform_int(1, 3, rng);
    const int k = uniform_int(d, 5, rng);
    const PushforwardResult r =
        pushforward_crb(verify::random_polynomial_map(d, k, rng), gaussian_vector(d, rng), random_spd(k, rng));
    EXPECT_LT(rel_max_diff(r.lhs, r.rhs), 1e-7);
  }
}

TEST(Monotonicity, Examples) {
  Vec e1 = Vec::Zero(2);
  e1(0) = 1.0;
  const MonotonicityResult r = monotonicity_check(FisherContext(SymMat(diag({1.0, 2.0}))), e1, Mat::Identity(2, 2));
  EXPECT_EQ(r.verdict, Monotonicity::kHolds);
  EXPECT_LT(max_abs(r.bound1.matrix() - diag({1.0, 0.0})), 1e-15);
  EXPECT_LT(max_abs(r.bound2.matrix() - diag({1.0, 0.5})), 1e-15);
}

TEST(Monotonicity, SingularJWithoutPositivityProviso) {
  const FisherContext ctx(SymMat(diag({1.0, 0.0})));
  const MonotonicityResult r = monotonicity_check(ctx, Mat::Identity(2, 2), m22(1, 1, 0, 1));
  EXPECT_EQ(r.verdict, Monotonicity::kPreconditionFailed);
  EXPECT_LT(max_abs(r.bound1.matrix() - diag({1.0, 0.0})), 1e-12);
  EXPECT_LT(max_abs(r.bound2.matrix() - m22(1, 0.5, 0.5, 0.25)), 1e-12);
  EXPECT_NEAR(max_abs(r.bound1.matrix() - r.bound2.matrix()), 0.5, 1e-12);
}

TEST(Monotonicity, NotNested) {
  Vec e1 = Vec::Zero(2);
  e1(0) = 1.0;
  Vec e2 = Vec::Zero(2);
  e2(1) = 1.0;
  EXPECT_EQ(monotonicity_check(FisherContext(SymMat::identity(2)), e1, e2).verdict, Monotonicity::kPreconditionFailed);
}

// Nested-subspace reading: random J > 0, col W1 inside col W2, biased.
TEST(Monotonicity, NestedSubspacesRandom) {
  Rng rng(17);
  for (int t = 0; t < 500; ++t) {
    const int k = uniform_int(2, 6, rng);
    const FisherContext ctx(random_spd(k, rng), 0.5 * gaussian_matrix(k, k, rng));
    const int m2 = uniform_int(1, k, rng);
    const Mat w2 = gaussian_matrix(k, m2, rng);
    const Mat w1 = w2 * gaussian_matrix(m2, uniform_int(1, m2, rng), rng);
    EXPECT_EQ(monotonicity_check(ctx, w1, w2).verdict, Monotonicity::kHolds);
  }
}

// Equal-span reading with singular J: when the projector condition holds
// for a bias gradient of the form S = X^T J, the bounds for W and W M agree.
TEST(Monotonicity, EqualSpansSingularJBiased) {
  Rng rng(18);
  for (int t = 0; t < 200; ++t) {
    const int k = uniform_int(2, 5, rng);
    const SymMat j = random_psd(k, uniform_int(1, k - 1, rng), rng);
    const Mat db = gaussian_matrix(k, k, rng).transpose() * j.matrix() - Mat::Identity(k, k);
    const FisherContext ctx(j, db);
    EXPECT_TRUE(feasibility_projector(ctx, SymMat::identity(k)));
    const Mat w = random_invertible(k, rng);
    const Mat wm = w * random_invertible(k, rng);
    const BoundResult b1 = constrained_bound_u(ctx, w);
    const BoundResult b2 = constrained_bound_u(ctx, wm);
    EXPECT_TRUE(b1.feasible);
    EXPECT_LT(rel_max_diff(b1.bound, b2.bound), 1e-7);
    EXPECT_LT(rel_max_diff(b1.bound, unconstrained_crb(ctx).bound), 1e-7);
  }
}

TEST(Dominance, PerUBelowInverseFisher) {
  Rng rng(19);
  for (int t = 0; t < 1000; ++t) {
    const int k = uniform_int(1, 6, rng);
    const SymMat j = random_spd(k, rng);
    const Mat u = gaussian_matrix(k, uniform_int(1, k + 1, rng), rng);
    EXPECT_TRUE(loewner_geq(symmetrize(j.matrix().inverse()), constrained_bound_u(FisherContext(j), u).bound));
  }
}

TEST(ColumnSpaceOnly, RandomInstances) {
  Rng rng(20);
  int checked = 0;
  for (int t = 0; t < 500; ++t) {
    const int k = uniform_int(2, 6, rng);
    const int m = uniform_int(1, k, rng);
    const SymMat j = random_psd(k, uniform_int(m, k, rng), rng);
    const Mat w = gaussian_matrix(k, m, rng);
    if (min_eigenvalue(symmetrize(w.transpose() * j.matrix() * w)) <= 1e-9) continue;
    const FisherContext ctx(j);
    EXPECT_LT(rel_max_diff(constrained_bound_u(ctx, w).bound, constrained_bound_u(ctx, Mat(w * random_invertible(m, rng))).bound),
              1e-8);
    ++checked;
  }
  EXPECT_GT(checked, 450);
}

TEST(BestBound, SpanDominatesSubspaces) {
  Rng rng(22);
  for (int t = 0; t < 200; ++t) {
    const int k = uniform_int(2, 6, rng);
    const FisherContext ctx(random_spd(k, rng), 0.4 * gaussian_matrix(k, k, rng));
    const Mat v = gaussian_matrix(k, uniform_int(1, k, rng), rng);
    const TangentSpan span{v, v.cols(), col_projector(v)};
    const Mat u = v * gaussian_matrix(v.cols(), uniform_int(1, static_cast<int>(v.cols()) + 1, rng), rng);
    EXPECT_TRUE(loewner_geq(constrained_crb(ctx, span).bound, constrained_bound_u(ctx, u).bound));
  }
}

TEST(FullSpan, CollapsesExactly) {
  Rng rng(23);
  for (int t = 0; t < 50; ++t) {
    const int k = uniform_int(1, 5, rng);
    const FisherContext ctx(random_psd(k, uniform_int(0, k, rng), rng), gaussian_matrix(k, k, rng));
    const TangentSpan full{Mat::Identity(k, k), k, SymMat::identity(k)};
    const BoundResult a = constrained_crb(ctx, full);
    const BoundResult b = unconstrained_crb(ctx);
    EXPECT_LT(rel_max_diff(a.bound, b.bound), 1e-12);
    EXPECT_EQ(a.feasible, b.feasible);
  }
}

TEST(FeasibilityEquivalence, SphereTrivial) {
  Rng rng(24);
  Vec e1 = Vec::Zero(3);
  e1(0) = 1.0;
  const FeasibilityReport r = feasibility_equivalence_check(FisherContext(random_spd(3, rng)), ConstraintSet::sphere(3), e1, 50, 1);
  EXPECT_TRUE(r.projector_condition);
  EXPECT_TRUE(r.consistent());
  EXPECT_EQ(r.cone_failures + r.span_failures, 0);
}

TEST(FeasibilityEquivalence, SparseCornerSingularJ) {
  Rng rng(25);
  for (int t = 0; t < 20; ++t) {
    const SymMat j = random_psd(3, uniform_int(1, 2, rng), rng);
    const FeasibilityReport r =
        feasibility_equivalence_check(FisherContext(j), ConstraintSet::sparse(3, 1), Vec::Zero(3), 100, t);
    EXPECT_FALSE(r.projector_condition);
    EXPECT_TRUE(r.consistent());
    EXPECT_GT(r.cone_failures, 0);
  }
}

TEST(FeasibilityEquivalence, CircleWithFeasibleBias) {
  Rng rng(26);
  Vec theta(2);
  theta << 0.0, 1.0;
  const FisherContext ctx(SymMat(diag({1.0, 0.0})), gaussian_matrix(2, 2, rng));
  const FeasibilityReport r = feasibility_equivalence_check(ctx, verify::circle(), theta, 100, 3);
  EXPECT_TRUE(r.projector_condition);
  EXPECT_TRUE(r.consistent());
  EXPECT_EQ(r.cone_failures + r.span_failures, 0);
}

TEST(Suites, MonotonicityAndFormulas) {
  for (const auto& r : {verify::monotonicity_suite(300, 2), verify::formulas_suite(200, 3), verify::feasibility_suite(20, 4),
                        verify::counterexamples_suite()}) {
    for (const auto& p : r.properties) {
      EXPECT_TRUE(p.ok()) << r.suite << "/" << p.name << " failed " << p.failed;
    }
  }
}

}  // namespace
}  // namespace ccrb
