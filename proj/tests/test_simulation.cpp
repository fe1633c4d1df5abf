#include "ehr/simulation.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

using namespace ehr;
using namespace ehr::testing;

namespace {

double sample_var(const Vector& e) { return (e.array() - e.mean()).square().sum() / static_cast<double>(e.size() - 1); }

}  // namespace

TEST(Truth, ReferenceDesign) {
  const SimTruth t = build_truth(12, 2);
  EXPECT_LT((t.beta_star - Vector::Constant(12, 0.1)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(max_abs(t.gamma.transpose() * t.gamma - Matrix::Identity(2, 2)), 1e-14);
  EXPECT_LT(max_abs(t.gamma.transpose() * t.gamma0), 1e-14);
  Vector ev = sym_eigen(t.sigma_x).values;
  std::sort(ev.data(), ev.data() + ev.size());
  for (Index i = 0; i < 10; ++i) EXPECT_NEAR(ev(i), 1.0, 1e-12);
  EXPECT_NEAR(ev(10), 9.0, 1e-12);
  EXPECT_NEAR(ev(11), 100.0, 1e-12);
  EXPECT_LT(max_abs(t.sigma_root * t.sigma_root - t.sigma_x), 1e-11);
}

TEST(Truth, RejectsBadDimensions) {
  EXPECT_THROW(build_truth(12, 5), InputError);
  EXPECT_THROW(build_truth(3, 0), InputError);
  EXPECT_THROW(build_truth(3, 4), InputError);
  EXPECT_NO_THROW(build_truth(6, 3));
}

TEST(Errors, SampleMoments) {
  RandomStream rs(300);
  EXPECT_NEAR(sample_var(gen_errors(ErrorDistribution::mixnorm, 1000000, rs)) / 3.4, 1.0, 0.02);
  EXPECT_NEAR(sample_var(gen_errors(ErrorDistribution::t3, 1000000, rs)) / 3.0, 1.0, 0.05);
  EXPECT_NEAR(sample_var(gen_errors(ErrorDistribution::normal, 1000000, rs)), 1.0, 0.01);
  EXPECT_NEAR(sample_var(gen_errors(ErrorDistribution::laplace, 1000000, rs)) / 2.0, 1.0, 0.02);
  EXPECT_NEAR(sample_var(gen_errors(ErrorDistribution::sgamma, 1000000, rs)) / 24.0, 1.0, 0.02);
  const Vector g = gen_errors(ErrorDistribution::sgamma, 100000, rs);
  EXPECT_NEAR((g.array() > 0).cast<double>().mean(), 0.5, 0.01);
}

TEST(Errors, CauchyQuartiles) {
  RandomStream rs(301);
  Vector e = gen_errors(ErrorDistribution::cauchy, 100001, rs).cwiseAbs();
  std::nth_element(e.data(), e.data() + 50000, e.data() + e.size());
  EXPECT_NEAR(e(50000), 1.0, 0.02);
}

TEST(Generator, PredictorCovariance) {
  SimScenario sc;
  sc.n = 100000;
  const SimTruth t = build_truth(12, 2);
  const Dataset d = gen_dataset(sc, t, 0);
  const Matrix c = d.X.rowwise() - d.X.colwise().mean();
  const Matrix s = c.transpose() * c / static_cast<double>(sc.n - 1);
  EXPECT_LT((s - t.sigma_x).norm() / t.sigma_x.norm(), 0.02);
}

TEST(Generator, AdditiveScaleResiduals) {
  SimScenario sc;
  sc.n = 50;
  sc.scale = ScaleFn::additive;
  sc.error = ErrorDistribution::laplace;
  const SimTruth t = build_truth(12, 2);
  const Dataset d = gen_dataset(sc, t, 3);
  // same stream, constant scale: the residual ratio is x_1 + x_p
  SimScenario flat = sc;
  flat.scale = ScaleFn::constant;
  const Dataset f = gen_dataset(flat, t, 3);
  EXPECT_EQ(d.X, f.X);
  for (Index i = 0; i < sc.n; ++i) {
    const double base = t.mu_star + d.X.row(i).dot(t.beta_star);
    EXPECT_NEAR(d.y(i) - base, (d.X(i, 0) + d.X(i, 11)) * (f.y(i) - base), 1e-10);
  }
}

TEST(Generator, RepsAreIndependentStreams) {
  SimScenario sc;
  sc.n = 30;
  const SimTruth t = build_truth(12, 2);
  EXPECT_EQ(gen_dataset(sc, t, 4).y, gen_dataset(sc, t, 4).y);
  EXPECT_NE(gen_dataset(sc, t, 4).y, gen_dataset(sc, t, 5).y);
}

TEST(Scenario, NoiselessLeastSquaresIsExact) {
  SimScenario sc;
  sc.reps = 1;
  sc.noise_scale = 0.0;
  sc.estimators = {Estimator::ls};
  const MseTable t = run_scenario(sc);
  EXPECT_LT(t.rows[0].mean, 1e-12);
}

TEST(Scenario, PerRepLossesDoNotDependOnThreads) {
  SimScenario sc;
  sc.p = 6;
  sc.n = 80;
  sc.reps = 4;
  sc.error = ErrorDistribution::t3;
  sc.estimators = {Estimator::hr, Estimator::ls, Estimator::ehr};
  const MseTable a = run_scenario(sc, 1), b = run_scenario(sc, 3);
  for (std::size_t e = 0; e < a.rows.size(); ++e) EXPECT_EQ(a.rows[e].losses, b.rows[e].losses);
}

TEST(Scenario, SummaryStatistics) {
  EstimatorSummary s;
  s.losses = {1.0, 3.0, std::numeric_limits<double>::quiet_NaN(), 2.0};
  s.u_used = {2, 1, 0, 2};
  summarize(s, 2, true);
  EXPECT_EQ(s.failures, 1);
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.median, 2.0);
  EXPECT_NEAR(s.se, 1.0 / std::sqrt(3.0), 1e-15);
  EXPECT_NEAR(s.cv_true_u_rate, 2.0 / 3.0, 1e-15);
}

TEST(Scenario, NormalErrorsOrdering) {
  SimScenario sc;
  sc.reps = 10;
  sc.seed = 31;
  const MseTable t = run_scenario(sc, 4);
  const double ehr = t.row(Estimator::ehr).mean, hr = t.row(Estimator::hr).mean, ls = t.row(Estimator::ls).mean;
  EXPECT_GT(hr / ls, 0.8);
  EXPECT_LT(hr / ls, 1.3);
  EXPECT_LT(ehr / hr, 0.1);
}

TEST(Scenario, CauchyBreaksLeastSquares) {
  SimScenario sc;
  sc.reps = 10;
  sc.seed = 32;
  sc.error = ErrorDistribution::cauchy;
  sc.estimators = {Estimator::hr, Estimator::ls};
  const MseTable t = run_scenario(sc, 4);
  EXPECT_EQ(t.row(Estimator::hr).failures, 0);
  EXPECT_GE(t.row(Estimator::ls).median, 10.0 * t.row(Estimator::hr).median);
}

TEST(ScenarioFile, ParsesKeys) {
  std::istringstream in("# comment\np = 6\nu = 3\nn=100\nerror = laplace # trailing\nscale = multiplicative\n"
                        "reps = 7\nseed = 9\nestimators = hr, ls\nu_policy = cv\ncv_folds = 4\n");
  const SimScenario sc = parse_scenario(in);
  EXPECT_EQ(sc.p, 6);
  EXPECT_EQ(sc.u, 3);
  EXPECT_EQ(sc.n, 100);
  EXPECT_EQ(sc.error, ErrorDistribution::laplace);
  EXPECT_EQ(sc.scale, ScaleFn::multiplicative);
  EXPECT_EQ(sc.reps, 7);
  EXPECT_EQ(sc.seed, 9u);
  EXPECT_EQ(sc.estimators, (std::vector<Estimator>{Estimator::hr, Estimator::ls}));
  EXPECT_EQ(sc.u_policy, UPolicy::cv_selected);
  EXPECT_EQ(sc.cv_folds, 4);
}

TEST(ScenarioFile, Errors) {
  for (const char* text : {"p = x\n", "colour = red\n", "p 12\n", "error = gumbel\n", "u = 5\n", "n = 5\n", "u_policy = maybe\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(parse_scenario(in), InputError) << text;
  }
  EXPECT_THROW(load_scenario("/nonexistent/scenario.txt"), InputError);
}

TEST(ScenarioFile, BundledScenarioLoads) {
  const SimScenario sc = load_scenario(std::string(EHR_SCENARIO_DIR) + "/normal_constant.txt");
  EXPECT_EQ(sc.p, 12);
  EXPECT_EQ(sc.u, 2);
  EXPECT_EQ(sc.estimators.size(), 4u);
}
