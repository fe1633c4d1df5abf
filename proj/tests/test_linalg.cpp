#include "ehr/levenberg_marquardt.hpp"
#include "ehr/linalg.hpp"
#include "ehr/nelder_mead.hpp"
#include "ehr/random.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace ehr;
using namespace ehr::testing;

TEST(Vech, TwoByTwo) {
  Matrix m(2, 2);
  m << 1, 2, 2, 3;
  EXPECT_EQ(vech(m), Eigen::Vector3d(1, 2, 3));
  EXPECT_EQ(vech(Matrix::Identity(2, 2)), Eigen::Vector3d(1, 0, 1));
}

TEST(Vech, RoundTripUpToEight) {
  RandomStream rs(1);
  for (Index p = 1; p <= 8; ++p) {
    const Matrix m = random_symmetric(p, rs);
    EXPECT_EQ(unvech(vech(m)), m) << "p = " << p;
  }
}

TEST(Vech, LowerTriangleColumnMajorOrder) {
  Matrix m(3, 3);
  m << 1, 2, 3, 2, 4, 5, 3, 5, 6;
  Vector expect(6);
  expect << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(vech(m), expect);
}

TEST(Vech, RejectsBadLength) { EXPECT_THROW(unvech(Vector::Zero(4)), InputError); }

TEST(ContractionExpansion, ScalarCase) {
  const auto ce = contraction_expansion(1);
  EXPECT_EQ(ce.contraction, Matrix::Ones(1, 1));
  EXPECT_EQ(ce.expansion, Matrix::Ones(1, 1));
}

TEST(ContractionExpansion, MatchesVechOnTwoByTwo) {
  Matrix m(2, 2);
  m << 1, 2, 2, 3;
  EXPECT_EQ(contraction_expansion(2).contraction * vec(m), Eigen::Vector3d(1, 2, 3));
}

TEST(ContractionExpansion, IdentitiesUpToEight) {
  RandomStream rs(2);
  for (Index p = 1; p <= 8; ++p) {
    const auto ce = contraction_expansion(p);
    EXPECT_LT(max_abs(ce.contraction * ce.expansion - Matrix::Identity(vech_size(p), vech_size(p))), 1e-15);
    for (int t = 0; t < 10; ++t) {
      const Matrix m = random_symmetric(p, rs);
      EXPECT_LT((ce.expansion * ce.contraction * vec(m) - vec(m)).cwiseAbs().maxCoeff(), 1e-14);
      EXPECT_LT((ce.contraction * vec(m) - vech(m)).cwiseAbs().maxCoeff(), 1e-14);
    }
  }
}

TEST(ContractionExpansion, ContractionIsPseudoinverseOfExpansion) {
  const auto ce = contraction_expansion(4);
  const Matrix e = ce.expansion;
  const Matrix mp = (e.transpose() * e).inverse() * e.transpose();
  EXPECT_LT(max_abs(mp - ce.contraction), 1e-14);
}

TEST(Kron, SmallCase) {
  Matrix a(2, 1), b(1, 2);
  a << 1, 2;
  b << 3, 4;
  Matrix expect(2, 2);
  expect << 3, 4, 6, 8;
  EXPECT_EQ(kron(a, b), expect);
}

TEST(Kron, VecIdentity) {
  // vec(A X B) = (B' kron A) vec(X)
  RandomStream rs(3);
  const Matrix a = random_matrix(3, 2, rs), x = random_matrix(2, 4, rs), b = random_matrix(4, 3, rs);
  EXPECT_LT((kron(b.transpose(), a) * vec(x) - vec(a * x * b)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(OrthonormalComplement, OneDimensional) {
  const Matrix g = Eigen::Vector2d(1, 0);
  const Matrix g0 = orthonormal_complement(g);
  ASSERT_EQ(g0.cols(), 1);
  EXPECT_NEAR(std::abs(g0(1, 0)), 1.0, 1e-15);
  EXPECT_NEAR(g0(0, 0), 0.0, 1e-15);
}

TEST(OrthonormalComplement, FullSpaceIsEmpty) { EXPECT_EQ(orthonormal_complement(Matrix::Identity(3, 3)).cols(), 0); }

TEST(OrthonormalComplement, Orthogonality) {
  RandomStream rs(4);
  for (int t = 0; t < 10; ++t) {
    const Matrix g = thin_qr(random_matrix(6, 2, rs)).q;
    const Matrix g0 = orthonormal_complement(g);
    EXPECT_LT(max_abs(g0.transpose() * g), 1e-10);
    EXPECT_LT(max_abs(g0.transpose() * g0 - Matrix::Identity(4, 4)), 1e-10);
  }
}

TEST(Pinv, Identity) { EXPECT_LT(max_abs(pinv(Matrix::Identity(3, 3)) - Matrix::Identity(3, 3)), 1e-15); }

TEST(Pinv, RankDeficientDiagonal) {
  const Matrix m = Eigen::Vector2d(2, 0).asDiagonal();
  const Matrix expect = Eigen::Vector2d(0.5, 0).asDiagonal();
  EXPECT_LT(max_abs(pinv(m) - expect), 1e-15);
}

TEST(Pinv, PenroseConditionsOnRankThree) {
  RandomStream rs(5);
  for (int t = 0; t < 10; ++t) {
    const Matrix b = random_matrix(5, 3, rs);
    const Matrix m = b * b.transpose();
    const Matrix mp = pinv(m);
    EXPECT_LT(max_abs(m * mp * m - m), 1e-8);
    EXPECT_LT(max_abs(mp * m * mp - mp), 1e-8);
  }
}

TEST(Pinv, EqualsInverseForSpd) {
  RandomStream rs(6);
  for (int t = 0; t < 10; ++t) {
    const Matrix m = random_spd(5, rs);
    const Matrix inv = m.inverse();
    EXPECT_LT((pinv(m) - inv).norm() / inv.norm(), 1e-9);
  }
}

TEST(Pinv, RejectsIndefinite) {
  const Matrix m = Eigen::Vector2d(1, -1).asDiagonal();
  EXPECT_THROW(pinv(m), InputError);
}

TEST(SubspaceDistance, Basics) {
  const Matrix e1 = Eigen::Vector2d(1, 0), e2 = Eigen::Vector2d(0, 1);
  EXPECT_NEAR(subspace_distance(e1, e1), 0.0, 1e-15);
  EXPECT_NEAR(subspace_distance(e1, e2), 1.0, 1e-15);
}

TEST(SubspaceDistance, BasisInvariant) {
  RandomStream rs(7);
  for (int t = 0; t < 10; ++t) {
    const Matrix a = random_matrix(6, 2, rs);
    const Matrix r = random_matrix(2, 2, rs) + 3.0 * Matrix::Identity(2, 2);
    EXPECT_LT(subspace_distance(a, a * r), 1e-10);
  }
}

TEST(SubspaceDistance, SymmetricAndTriangle) {
  RandomStream rs(8);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = random_matrix(5, 2, rs), b = random_matrix(5, 2, rs), c = random_matrix(5, 2, rs);
    const double ab = subspace_distance(a, b), ba = subspace_distance(b, a);
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_LE(ab, subspace_distance(a, c) + subspace_distance(c, b) + 1e-12);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(Projection, IdempotentAndSymmetric) {
  RandomStream rs(9);
  const Matrix g = random_matrix(6, 3, rs);
  const Matrix p = projection(g);
  // the textbook form G (G'G)^{-1} G' as an independent check
  const Matrix direct = g * (g.transpose() * g).inverse() * g.transpose();
  EXPECT_LT(max_abs(p - direct), 1e-10);
  EXPECT_LT(max_abs(p * p - p), 1e-10);
  EXPECT_LT(max_abs(p - p.transpose()), 1e-10);
}

TEST(ThinQr, PositiveDiagonalAndReconstruction) {
  RandomStream rs(10);
  const Matrix a = random_matrix(7, 3, rs);
  const ThinQr qr = thin_qr(a);
  EXPECT_LT(max_abs(qr.q * qr.r - a), 1e-12);
  for (Index j = 0; j < 3; ++j) EXPECT_GT(qr.r(j, j), 0.0);
  EXPECT_THROW(thin_qr(Matrix::Zero(4, 2)), NumericalError);
}

// Nelder-Mead -----------------------------------------------------------------

TEST(NelderMead, QuadraticBowl) {
  const Vector c = Eigen::Vector2d(1, 2);
  const auto res = nelder_mead([&](const Vector& x) { return (x - c).squaredNorm(); }, Vector::Zero(2));
  EXPECT_LT((res.x - c).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NelderMead, Rosenbrock) {
  auto rosen = [](const Vector& x) { return 100.0 * std::pow(x(1) - x(0) * x(0), 2) + std::pow(1.0 - x(0), 2); };
  const auto res = nelder_mead(rosen, Eigen::Vector2d(-1.2, 1.0));
  EXPECT_LT((res.x - Eigen::Vector2d(1, 1)).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_TRUE(res.converged);
}

TEST(NelderMead, ZeroIterationsReturnsStart) {
  NelderMeadOptions o;
  o.max_iter = 0;
  const Vector x0 = Eigen::Vector3d(0.3, -1, 2);
  const auto res = nelder_mead([](const Vector& x) { return x.squaredNorm(); }, x0, o);
  EXPECT_EQ(res.x, x0);
  EXPECT_EQ(res.f, x0.squaredNorm());
}

TEST(NelderMead, NonFiniteValuesAreAvoided) {
  // log barrier: the minimizer must never accept x <= 0
  auto f = [](const Vector& x) { return x(0) > 0 ? x(0) - std::log(x(0)) : std::numeric_limits<double>::quiet_NaN(); };
  NelderMeadOptions o;
  o.default_step = 2.0;
  const auto res = nelder_mead(f, Vector::Constant(1, 0.5), o);
  EXPECT_NEAR(res.x(0), 1.0, 1e-5);
}

TEST(NelderMead, NeverWorseThanStart) {
  RandomStream rs(11);
  for (int t = 0; t < 5; ++t) {
    const Vector x0 = random_vector(4, rs);
    auto f = [](const Vector& x) { return std::abs(x(0)) + std::pow(x(1) - x(2), 2) + std::cos(3 * x(3)); };
    const auto res = nelder_mead(f, x0);
    EXPECT_LE(res.f, f(x0));
  }
}

TEST(LevenbergMarquardt, RosenbrockResiduals) {
  auto r = [](const Vector& x) {
    Vector v(2);
    v << 10.0 * (x(1) - x(0) * x(0)), 1.0 - x(0);
    return v;
  };
  const auto res = levenberg_marquardt(r, Eigen::Vector2d(-1.2, 1.0));
  EXPECT_LT((res.x - Eigen::Vector2d(1, 1)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(res.f, 1e-12);
}

TEST(LevenbergMarquardt, LinearLeastSquaresMatchesQr) {
  RandomStream rs(12);
  const Matrix a = random_matrix(20, 3, rs);
  const Vector b = random_vector(20, rs);
  const auto res = levenberg_marquardt([&](const Vector& x) { return Vector(a * x - b); }, Vector::Zero(3));
  const Vector exact = a.colPivHouseholderQr().solve(b);
  EXPECT_LT((res.x - exact).cwiseAbs().maxCoeff(), 1e-6);
}

// Random streams ------------------------------------------------------------

TEST(RandomStream, SameSeedSameSequence) {
  RandomStream a(42, 3), b(42, 3);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next(), b.next());
}

TEST(RandomStream, StreamsDiffer) {
  RandomStream a(42, 0), b(42, 1), c(43, 0);
  const auto x = a.next();
  EXPECT_NE(x, b.next());
  EXPECT_NE(x, c.next());
}

TEST(RandomStream, PermutationIsAPermutation) {
  RandomStream rs(1);
  const auto perm = rs.permutation(50);
  std::set<std::size_t> s(perm.begin(), perm.end());
  EXPECT_EQ(s.size(), 50u);
  EXPECT_EQ(*s.rbegin(), 49u);
}

TEST(RandomStream, NormalMoments) {
  RandomStream rs(2);
  double s1 = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rs.normal();
    s1 += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s1 / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(RandomStream, BelowIsInRange) {
  RandomStream rs(3);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(rs.below(7), 7u);
}
