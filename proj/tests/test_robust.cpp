#include "ehr/robust.hpp"
#include "ehr/simulation.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace ehr;
using namespace ehr::testing;

TEST(Huber, LossAndPsiAtAnchors) {
  const double k = 1.345;
  EXPECT_EQ(huber_loss(0.0, k), 0.0);
  EXPECT_EQ(huber_psi(0.0, k), 0.0);
  EXPECT_DOUBLE_EQ(huber_loss(k, k), k * k / 2);
  EXPECT_EQ(huber_psi(k, k), k);
  EXPECT_EQ(huber_psi(-k, k), -k);
  EXPECT_DOUBLE_EQ(huber_loss(2 * k, k), 1.5 * k * k);
  EXPECT_EQ(huber_psi(2 * k, k), k);
}

TEST(Huber, PsiIsOdd) {
  for (double r = -5; r <= 5; r += 0.37) EXPECT_EQ(huber_psi(r, 1.3), -huber_psi(-r, 1.3));
}

TEST(Huber, DerivativeClosedInterval) {
  EXPECT_EQ(huber_dpsi(1.0, 1.0), 1.0);
  EXPECT_EQ(huber_dpsi(-1.0, 1.0), 1.0);
  EXPECT_EQ(huber_dpsi(1.0 + 1e-12, 1.0), 0.0);
}

TEST(Huber, LossIsContinuouslyDifferentiableAtTheKnee) {
  const double k = 1.345, h = 1e-7;
  for (double r : {k - 1e-9, k + 1e-9, -k - 1e-9, -k + 1e-9}) {
    const double slope = (huber_loss(r + h, k) - huber_loss(r - h, k)) / (2 * h);
    EXPECT_NEAR(slope, r > 0 ? k : -k, 1e-6);
  }
}

TEST(MedianFit, InterceptOnly) {
  Dataset d{Eigen::Vector3d(1, 2, 100), Matrix(3, 0)};
  EXPECT_NEAR(median_fit(d).mu, 2.0, 1e-4);
}

TEST(MedianFit, NoiselessLine) {
  Dataset d;
  d.X = Vector::LinSpaced(10, -2, 3);
  d.y = (1.0 + 2.0 * d.X.col(0).array()).matrix();
  const auto f = median_fit(d);
  EXPECT_NEAR(f.mu, 1.0, 1e-6);
  EXPECT_NEAR(f.beta(0), 2.0, 1e-6);
}

TEST(MedianFit, GridSearchOracle) {
  RandomStream rs(20);
  Dataset d;
  d.X = random_matrix(25, 1, rs);
  d.y = (0.5 + 1.5 * d.X.col(0).array()).matrix() + random_vector(25, rs);
  const auto f = median_fit(d);
  const double obj = detail::l1_objective(f.residuals);
  // brute-force grid over (mu, beta), refined twice around the incumbent
  double bm = 0, bb = 0, best = std::numeric_limits<double>::infinity();
  double cm = 0, cb = 0, width = 4;
  for (int level = 0; level < 3; ++level) {
    for (int i = -100; i <= 100; ++i)
      for (int j = -100; j <= 100; ++j) {
        const double m = cm + width * i / 100, b = cb + width * j / 100;
        const double o = detail::l1_objective(d.y - Vector::Constant(25, m) - b * d.X.col(0));
        if (o < best) {
          best = o;
          bm = m;
          bb = b;
        }
      }
    cm = bm;
    cb = bb;
    width /= 50;
  }
  EXPECT_LE(obj, best * 1.001);
}

TEST(SelectK, FromMadFormula) {
  EXPECT_NEAR(k_from_mad(0.6745), 1.345, 1e-12);
  EXPECT_NEAR(k_from_mad(1.349), 2.690, 1e-12);
}

TEST(SelectK, DegenerateFloor) {
  Dataset d;
  d.X = Vector::LinSpaced(8, 0, 1);
  d.y = 3.0 * d.X.col(0);
  const HuberSpec s = select_k(d);
  EXPECT_TRUE(s.degenerate);
  EXPECT_EQ(s.k, kMinimumK);
}

TEST(SelectK, NormalDesignRange) {
  SimScenario sc;
  sc.seed = 31;
  const SimTruth truth = build_truth(sc.p, sc.u);
  int inside = 0;
  for (int r = 0; r < 50; ++r) {
    const double k = select_k(gen_dataset(sc, truth, r)).k;
    inside += k >= 1.1 && k <= 1.6;
  }
  EXPECT_GE(inside, 48);
}

TEST(OlsFit, ConstantResponse) {
  RandomStream rs(21);
  Dataset d{Vector::Constant(20, 4.2), random_matrix(20, 3, rs)};
  const auto f = ols_fit(d);
  EXPECT_NEAR(f.mu, 4.2, 1e-12);
  EXPECT_LT(f.beta.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(OlsFit, OrthogonalResiduals) {
  RandomStream rs(22);
  const Dataset d = linear_data(50, 4, 1.0, Eigen::Vector4d(1, -1, 0.5, 2), 1.0, rs);
  const auto f = ols_fit(d);
  EXPECT_LT((d.X.transpose() * f.residuals).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(std::abs(f.residuals.sum()), 1e-8);
}

TEST(OlsFit, RankDeficientRejected) {
  RandomStream rs(23);
  Dataset d = linear_data(20, 2, 0, Eigen::Vector2d(1, 1), 1, rs);
  d.X.col(1) = 2.0 * d.X.col(0);
  EXPECT_THROW(ols_fit(d), InputError);
}

TEST(HuberFit, NoiselessRecovery) {
  RandomStream rs(24);
  const Vector beta = Eigen::Vector3d(0.3, -2, 1);
  const Dataset d = linear_data(40, 3, -1.0, beta, 0.0, rs);
  const auto f = huber_fit(d, {1.0, false});
  EXPECT_NEAR(f.mu, -1.0, 1e-8);
  EXPECT_LT((f.beta - beta).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(HuberFit, HugeKIsOls) {
  RandomStream rs(25);
  const Dataset d = linear_data(60, 3, 2.0, Eigen::Vector3d(1, 0, -1), 2.0, rs);
  const auto h = huber_fit(d, {1e9, false});
  const auto o = ols_fit(d);
  EXPECT_NEAR(h.mu, o.mu, 1e-8);
  EXPECT_LT((h.beta - o.beta).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(HuberFit, TinyKApproachesMedian) {
  RandomStream rs(26);
  const Dataset d = linear_data(30, 1, 1.0, Vector::Constant(1, 2.0), 1.0, rs);
  const auto h = huber_fit(d, {1e-4, false});
  const auto m = median_fit(d);
  EXPECT_NEAR(h.mu, m.mu, 1e-2);
  EXPECT_NEAR(h.beta(0), m.beta(0), 1e-2);
}

TEST(HuberFit, ScoreEquationHoldsUnderT3) {
  RandomStream rs(27);
  Dataset d;
  d.X = random_matrix(200, 3, rs);
  const Vector e = gen_errors(ErrorDistribution::t3, 200, rs);
  d.y = (d.X * Eigen::Vector3d(1, 2, 3)).array() + 0.5;
  d.y += e;
  const double k = select_k(d).k;
  const auto f = huber_fit(d, {k, false});
  Vector score = Vector::Zero(4);
  for (Index i = 0; i < 200; ++i) {
    const double s = huber_psi(f.residuals(i), k);
    score(0) += s;
    score.tail(3) += s * d.X.row(i).transpose();
  }
  EXPECT_LT(score.cwiseAbs().maxCoeff() / 200, 1e-6);
}

TEST(HuberFit, ObjectiveNonIncreasing) {
  RandomStream rs(28);
  Dataset d = linear_data(80, 2, 0, Eigen::Vector2d(1, 1), 1, rs);
  for (Index i = 0; i < 8; ++i) d.y(i) += 30.0;  // outliers
  const auto f = huber_fit(d, {1.0, false});
  ASSERT_GE(f.objective_trace.size(), 2u);
  for (std::size_t i = 1; i < f.objective_trace.size(); ++i) EXPECT_LE(f.objective_trace[i], f.objective_trace[i - 1] + 1e-12);
  EXPECT_TRUE(f.converged);
}

TEST(HuberFit, RejectsBadK) {
  RandomStream rs(29);
  const Dataset d = linear_data(10, 1, 0, Vector::Ones(1), 1, rs);
  EXPECT_THROW(huber_fit(d, {0.0, false}), InputError);
}

TEST(Dataset, ValidationErrors) {
  Dataset d{Vector::Zero(3), Matrix::Zero(4, 1)};
  EXPECT_THROW(d.validate(), InputError);
  Dataset small{Vector::Zero(3), Matrix::Zero(3, 2)};
  EXPECT_THROW(small.validate(), InputError);
  Dataset bad{Vector::Zero(5), Matrix::Zero(5, 1)};
  bad.y(2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(bad.validate(), InputError);
}

TEST(GeeSolution, IdenticalRows) {
  Dataset d;
  d.X = Matrix(6, 2);
  d.X.rowwise() = Eigen::RowVector2d(1.5, -2);
  d.y = Vector::LinSpaced(6, 0, 1);
  const PredictorMoments m = predictor_moments(d.X);
  EXPECT_EQ(m.cov, Matrix::Zero(2, 2));
  EXPECT_EQ(m.mean, Eigen::Vector2d(1.5, -2));
}

TEST(GeeSolution, CovarianceConsistentOnNormalDesign) {
  SimScenario sc;
  const SimTruth truth = build_truth(sc.p, sc.u);
  int close = 0;
  for (int r = 0; r < 10; ++r) {
    const Dataset d = gen_dataset(sc, truth, r);
    const GeeSolution g = gee_solution(d, select_k(d));
    close += (g.theta_tilde.sigma_x - truth.sigma_x).norm() / truth.sigma_x.norm() < 0.2;
    EXPECT_EQ(g.theta_tilde.beta, g.fit.beta);
  }
  EXPECT_GE(close, 9);
}

TEST(NaturalParams, VectorRoundTrip) {
  RandomStream rs(30);
  NaturalParams t{1.5, random_vector(3, rs), random_spd(3, rs), random_vector(3, rs)};
  const NaturalParams back = NaturalParams::from_vector(t.to_vector(), 3);
  EXPECT_EQ(back.to_vector(), t.to_vector());
  EXPECT_EQ(NaturalParams::dim(3), 1 + 6 + 6);
}
