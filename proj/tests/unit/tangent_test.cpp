#include "ccrb/tangent.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "ccrb/random.hpp"
#include "ccrb/verify.hpp"
#include "oracles.hpp"

namespace ccrb {
namespace {

Vec v3(double a, double b, double c) {
  Vec v(3);
  v << a, b, c;
  return v;
}

Vec unit(Eigen::Index k, Eigen::Index i) {
  Vec e = Vec::Zero(k);
  e(i) = 1.0;
  return e;
}

void expect_projector_laws(const TangentSpan& span) {
  const Mat& p = span.pi.matrix();
  EXPECT_LT((p * p - p).norm(), 1e-9);
  EXPECT_LT((p - p.transpose()).norm(), 1e-9);
  EXPECT_LT((p * span.v - span.v).norm(), 1e-9);
  if (span.d > 0) {
    EXPECT_LT((p - span.v * pinv(span.v)).norm(), 1e-9);
  }
  EXPECT_EQ(rank(span.v), span.d);
}

TEST(Contains, Examples) {
  EXPECT_TRUE(contains(ConstraintSet::sphere(3), unit(3, 0)).in_set);
  EXPECT_EQ(contains(ConstraintSet::sphere(3), unit(3, 0)).residual, 0.0);
  EXPECT_FALSE(contains(ConstraintSet::sparse(3, 1), v3(1, 1, 0)).in_set);
  const double a = std::acos(-1.0) / 6.0;
  Mat r(2, 2);
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  EXPECT_TRUE(contains(ConstraintSet::orthogonal(2), vec(r)).in_set);
  EXPECT_TRUE(contains(ConstraintSet::special_orthogonal(2), vec(r)).in_set);
  Mat refl = r;
  refl.col(0) = -refl.col(0);
  EXPECT_TRUE(contains(ConstraintSet::orthogonal(2), vec(refl)).in_set);
  EXPECT_FALSE(contains(ConstraintSet::special_orthogonal(2), vec(refl)).in_set);
}

TEST(Contains, RejectsWrongSize) {
  EXPECT_THROW(contains(ConstraintSet::sphere(3), Vec::Zero(2)), Error);
  try {
    contains(ConstraintSet::sphere(3), Vec::Zero(2));
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimMismatch);
  }
}

TEST(Contains, ResidualsMatchDefinitions) {
  EXPECT_NEAR(contains(ConstraintSet::sphere(3), v3(2, 0, 0)).residual, 1.0, 1e-15);
  EXPECT_NEAR(contains(ConstraintSet::positive_definite(2), vec(Vec(Eigen::Vector2d(1.0, -0.5)).asDiagonal()))
                  .residual,
              0.5, 1e-15);
  EXPECT_NEAR(contains(verify::circle(), Vec(Eigen::Vector2d(0.0, 2.0))).residual, 3.0, 1e-15);
  EXPECT_TRUE(contains(ConstraintSet::fixed_rank(3, 3, 1), vec(Vec(v3(1, 0, 0)).asDiagonal())).in_set);
  EXPECT_FALSE(contains(ConstraintSet::fixed_rank(3, 3, 1), vec(Vec(v3(1, 1, 0)).asDiagonal())).in_set);
  EXPECT_FALSE(contains(ConstraintSet::fixed_rank(3, 3, 2), vec(Vec(v3(1, 0, 0)).asDiagonal())).in_set);
}

TEST(ConstraintSet, RejectsBadParameters) {
  EXPECT_THROW(ConstraintSet::sphere(0), Error);
  EXPECT_THROW(ConstraintSet::stiefel(2, 3), Error);
  EXPECT_THROW(ConstraintSet::fixed_rank(2, 3, 3), Error);
  EXPECT_THROW(ConstraintSet::sparse(3, 4), Error);
  EXPECT_EQ(ConstraintSet::product({ConstraintSet::sphere(2), ConstraintSet::stiefel(3, 2)}).ambient_dim(), 8);
}

TEST(TangentSpan, SphereAtE1) {
  const TangentSpan s = tangent_span(ConstraintSet::sphere(3), unit(3, 0));
  EXPECT_EQ(s.d, 2);
  EXPECT_LT((s.pi.matrix() - Mat(v3(0, 1, 1).asDiagonal())).cwiseAbs().maxCoeff(), 1e-12);
  expect_projector_laws(s);
}

TEST(TangentSpan, SparseBranches) {
  const TangentSpan below = tangent_span(ConstraintSet::sparse(3, 2), v3(1, 0, 0));
  EXPECT_EQ(below.d, 3);
  EXPECT_TRUE(below.pi.matrix().isApprox(Mat::Identity(3, 3)));

  const TangentSpan at = tangent_span(ConstraintSet::sparse(3, 1), v3(0, 0, 5));
  EXPECT_EQ(at.d, 1);
  EXPECT_EQ(at.v, Mat(unit(3, 2)));
  EXPECT_EQ(at.pi.matrix(), Mat(v3(0, 0, 1).asDiagonal()));

  const TangentSpan corner = tangent_span(ConstraintSet::sparse(5, 1), Vec::Zero(5));
  EXPECT_EQ(corner.d, 5);
}

TEST(TangentSpan, FixedRankCount) {
  const TangentSpan s = tangent_span(ConstraintSet::fixed_rank(3, 3, 1), vec(Vec(v3(1, 0, 0)).asDiagonal()));
  EXPECT_EQ(s.d, 5);
  expect_projector_laws(s);
}

TEST(TangentSpan, RankAmbiguous) {
  // sigma_2 / sigma_1 = 5e-10 sits inside the 10 x rank_rel_tol band.
  const Mat x = Vec(v3(1, 5e-10, 0)).asDiagonal();
  try {
    tangent_span(ConstraintSet::fixed_rank(3, 3, 2), vec(x));
    FAIL() << "expected RankTolAmbiguous";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRankTolAmbiguous);
  }
}

TEST(TangentSpan, NotOnSet) {
  try {
    tangent_span(ConstraintSet::sphere(3), v3(1, 1, 0));
    FAIL() << "expected NotOnSet";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotOnSet);
  }
}

TEST(TangentSpan, DimensionCounts) {
  Rng rng(11);
  for (int k = 2; k <= 6; ++k) {
    EXPECT_EQ(tangent_span(ConstraintSet::sphere(k), verify::random_point(ConstraintSet::sphere(k), rng)).d, k - 1);
  }
  struct Case {
    ConstraintSet set;
    Eigen::Index d;
  };
  const std::vector<Case> cases = {
      {ConstraintSet::stiefel(4, 2), 5},         {ConstraintSet::stiefel(5, 3), 9},
      {ConstraintSet::orthogonal(3), 3},         {ConstraintSet::orthogonal(4), 6},
      {ConstraintSet::special_orthogonal(3), 3}, {ConstraintSet::fixed_rank(3, 3, 1), 5},
      {ConstraintSet::fixed_rank(4, 5, 2), 14},  {ConstraintSet::fixed_rank_psd(4, 2), 7},
      {ConstraintSet::positive_definite(3), 6},  {ConstraintSet::euclidean(4), 4},
  };
  for (const auto& c : cases) {
    for (int t = 0; t < 5; ++t) {
      const TangentSpan s = tangent_span(c.set, verify::random_point(c.set, rng));
      EXPECT_EQ(s.d, c.d) << c.set.name();
      expect_projector_laws(s);
    }
  }
}

TEST(TangentSpan, TangencyOfBasisColumns) {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const ConstraintSet st = ConstraintSet::stiefel(5, 2);
    const Vec theta = verify::random_point(st, rng);
    const Mat x = unvec(theta, 5, 2);
    const TangentSpan s = tangent_span(st, theta);
    for (Eigen::Index c = 0; c < s.d; ++c) {
      const Mat u = unvec(s.v.col(c), 5, 2);
      EXPECT_LT((x.transpose() * u + u.transpose() * x).norm(), 1e-8 * 2.0 * x.norm() * u.norm());
    }
  }
  // Circle: h(theta) = |theta|^2 - 1 with gradient 2 theta^T.
  const ConstraintSet c = verify::circle();
  for (int t = 0; t < 20; ++t) {
    const Vec theta = verify::random_point(c, rng);
    const TangentSpan s = tangent_span(c, theta);
    EXPECT_EQ(s.d, 1);
    const Vec dh = directional_derivative(std::get<sets::EqualityManifold>(c.variant()).h, theta, s.v.col(0));
    EXPECT_LT(dh.norm(), 1e-6);
  }
}

TEST(TangentSpan, TransformImageIsJacobianSpan) {
  // g(rho) = (cos rho, sin rho, 0).
  DifferentiableMap g{1, 3,
                      [](const Vec& r) -> Vec { return v3(std::cos(r(0)), std::sin(r(0)), 0.0); },
                      [](const Vec& r) -> Mat { return Mat(v3(-std::sin(r(0)), std::cos(r(0)), 0.0)); }};
  const Vec rho = Vec::Constant(1, 0.3);
  const ConstraintSet set = ConstraintSet::transform_image(g, rho);
  const TangentSpan s = tangent_span(set, g(rho));
  EXPECT_EQ(s.d, 1);
  const Vec u = v3(-std::sin(0.3), std::cos(0.3), 0.0);
  EXPECT_LT((s.pi.matrix() - u * u.transpose()).norm(), 1e-12);
}

TEST(TangentSpan, ProductIsBlockDiagonal) {
  const ConstraintSet prod = ConstraintSet::product({ConstraintSet::sphere(3), ConstraintSet::sparse(3, 1)});
  Vec theta(6);
  theta << 1, 0, 0, 0, 0, 5;
  const TangentSpan s = tangent_span(prod, theta);
  EXPECT_EQ(s.d, 3);
  Mat expected = Mat::Zero(6, 6);
  expected(1, 1) = expected(2, 2) = expected(5, 5) = 1.0;
  const Mat left = tangent_span(ConstraintSet::sphere(3), theta.head(3)).pi.matrix();
  const Mat right = tangent_span(ConstraintSet::sparse(3, 1), theta.tail(3)).pi.matrix();
  EXPECT_EQ(s.pi.matrix(), block_diag(left, right));
  EXPECT_LT((s.pi.matrix() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GreedyBasis, Examples) {
  const Vec e1 = unit(3, 0);
  const Vec e2 = unit(3, 1);
  const Mat g = greedy_basis({e1, Vec(2.0 * e1), e2});
  ASSERT_EQ(g.cols(), 2);
  EXPECT_EQ(g.col(0), e1);
  EXPECT_EQ(g.col(1), e2);
  EXPECT_EQ(greedy_basis({}).cols(), 0);
}

TEST(GreedyBasis, PlantedSubspace) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const Mat basis = gaussian_matrix(10, 4, rng);
    std::vector<Vec> gens;
    Mat stacked(10, 50);
    for (int i = 0; i < 50; ++i) {
      gens.push_back(basis * gaussian_vector(4, rng));
      stacked.col(i) = gens.back();
    }
    const Mat g = greedy_basis(gens);
    ASSERT_EQ(g.cols(), 4);
    EXPECT_EQ(oracle::elimination_rank(stacked), 4);
    EXPECT_EQ(oracle::elimination_rank(g), 4);
    EXPECT_TRUE(colspace_included(stacked, g));
    EXPECT_TRUE(colspace_included(g, stacked));
    EXPECT_EQ(g.col(0), gens[0]);
  }
}

TEST(DirectionalDerivative, Examples) {
  const DifferentiableMap id = affine_map(Mat::Identity(3, 3), Vec::Zero(3));
  EXPECT_EQ(directional_derivative(id, v3(1, 2, 3), v3(4, 5, 6)), v3(4, 5, 6));

  const DifferentiableMap sq{3, 1, [](const Vec& x) -> Vec { return Vec::Constant(1, x.squaredNorm()); }, {}};
  EXPECT_LT(directional_derivative(sq, unit(3, 0), unit(3, 1)).norm(), 1e-9);
  EXPECT_NEAR(directional_derivative(sq, unit(3, 0), unit(3, 0))(0), 2.0, 1e-6);

  // Finite differences against an analytic Jacobian.
  Rng rng(8);
  const DifferentiableMap poly = verify::random_polynomial_map(3, 4, rng);
  const DifferentiableMap fd{3, 4, poly.f, {}};
  for (int t = 0; t < 10; ++t) {
    const Vec x = gaussian_vector(3, rng);
    const Vec u = gaussian_vector(3, rng);
    EXPECT_LT((directional_derivative(poly, x, u) - directional_derivative(fd, x, u)).norm(),
              1e-6 * (1.0 + directional_derivative(poly, x, u).norm()));
  }
}

TEST(Witness, SphereMatchesNormalizationConstruction) {
  const Vec e1 = unit(3, 0);
  const Vec e2 = unit(3, 1);
  const auto seq = tangent_vector_witness(ConstraintSet::sphere(3), e1, e2, 20);
  ASSERT_EQ(seq.size(), 20U);
  double prev = INFINITY;
  for (const auto& s : seq) {
    const Vec expected = (e1 + e2 / s.lambda).normalized();
    EXPECT_LT((s.theta - expected).norm(), 1e-15);
    EXPECT_TRUE(contains(ConstraintSet::sphere(3), s.theta).in_set);
    const double err = (s.lambda * (s.theta - e1) - e2).norm();
    EXPECT_LT(err, prev);
    prev = err;
  }
  EXPECT_LT(prev, 1e-4);
}

TEST(Witness, EuclideanAndSparseAreStraightLines) {
  const Vec theta = v3(1, 2, 3);
  const Vec u = v3(-1, 0.5, 2);
  for (const auto& s : tangent_vector_witness(ConstraintSet::euclidean(3), theta, u, 10)) {
    EXPECT_LT((s.theta - (theta + u / s.lambda)).norm(), 1e-14);
  }
  const Vec corner = v3(0, 0, 5);
  for (const auto& s : tangent_vector_witness(ConstraintSet::sparse(3, 1), corner, unit(3, 2), 10)) {
    EXPECT_TRUE(contains(ConstraintSet::sparse(3, 1), s.theta).in_set);
    EXPECT_EQ(s.lambda * (s.theta - corner), unit(3, 2));
  }
}

TEST(Witness, Errors) {
  try {
    tangent_vector_witness(verify::circle(), Vec(Eigen::Vector2d(1.0, 0.0)), Vec(Eigen::Vector2d(0.0, 1.0)), 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoRetraction);
  }
  try {
    tangent_vector_witness(ConstraintSet::sphere(3), unit(3, 0), unit(3, 0), 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotTangent);
  }
  // Sparse cone: moving off the support of a full-support point is not tangent.
  EXPECT_THROW(tangent_vector_witness(ConstraintSet::sparse(3, 1), v3(0, 0, 5), unit(3, 0), 5), Error);
}

TEST(Witness, ConvergesOnCatalog) {
  Rng rng(21);
  for (const auto& set : verify::catalog_samples()) {
    if (set.get_if<sets::EqualityManifold>()) continue;
    for (int t = 0; t < 5; ++t) {
      const Vec theta = verify::random_point(set, rng);
      const Vec u = sample_tangent_vector(set, theta, rng);
      if (u.norm() == 0.0) continue;
      const auto seq = tangent_vector_witness(set, theta, u, 24);
      for (const auto& s : seq) EXPECT_TRUE(contains(set, s.theta).in_set) << set.name();
      const double last = (seq.back().lambda * (seq.back().theta - theta) - u).norm();
      EXPECT_LT(last, 1e-4 * u.norm()) << set.name();
    }
  }
}

TEST(ProjectOnto, Examples) {
  EXPECT_EQ(project_onto(ConstraintSet::sparse(3, 1), v3(0.2, -3, 1)), v3(0, -3, 0));
  EXPECT_LT((project_onto(ConstraintSet::sphere(2), Vec(Eigen::Vector2d(3, 4))) - Vec(Eigen::Vector2d(0.6, 0.8))).norm(),
            1e-15);
  const Vec y = vec(Mat(Vec(Eigen::Vector2d(3, 1)).asDiagonal()));
  EXPECT_LT((project_onto(ConstraintSet::fixed_rank(2, 2, 1), y) - vec(Mat(Vec(Eigen::Vector2d(3, 0)).asDiagonal())))
                .norm(),
            1e-14);
  try {
    project_onto(ConstraintSet::sphere(2), Vec::Zero(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateInput);
  }
  // Magnitude tie: lowest index wins.
  EXPECT_EQ(project_onto(ConstraintSet::sparse(3, 1), v3(2, -2, 1)), v3(2, 0, 0));
}

TEST(ExtensionIndependence, Suite) {
  const verify::SuiteResult r = verify::extension_suite(200, 4);
  for (const auto& p : r.properties) EXPECT_TRUE(p.ok()) << p.name << " failed " << p.failed;
}

TEST(TangentSuite, AllPropertiesPass) {
  const verify::SuiteResult r = verify::tangent_suite(220, 6);
  for (const auto& p : r.properties) {
    EXPECT_TRUE(p.ok()) << p.name << " passed " << p.passed << " failed " << p.failed;
  }
}

}  // namespace
}  // namespace ccrb
