#pragma once

// JSON and CSV renderings of fits, CV and bootstrap reports, simulation
// tables and the Huber-factor table. Non-finite numbers are written as the
// strings "inf", "-inf" and "nan".

#include "ehr/io.hpp"
#include "ehr/simulation.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

namespace ehr {

inline constexpr double kZ975 = 1.959963984540054;

inline Json num(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

inline double num_from_json(const Json& j) {
  if (j.is_number()) return j.get<double>();
  const std::string s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::numeric_limits<double>::quiet_NaN();
}

inline Json num_vector(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

/// Shortest decimal form that round-trips (at most 17 significant digits).
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  for (int prec = 1; prec <= 17; ++prec) {
    std::ostringstream os;
    os << std::setprecision(prec) << x;
    if (std::stod(os.str()) == x) return os.str();
  }
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

/// Point estimate with asymptotic standard errors and 5% z-test flags.
struct Inference {
  double mu = 0.0;
  Vector beta;
  Vector se;
  Vector z;
  std::vector<bool> significant;
};

/// beta_var is avar(sqrt(n) beta_hat); se = sqrt(diag / n).
inline Inference make_inference(double mu, const Vector& beta, const Matrix& beta_var, Index n) {
  Inference inf;
  inf.mu = mu;
  inf.beta = beta;
  inf.se = (beta_var.diagonal().cwiseMax(0.0) / static_cast<double>(n)).cwiseSqrt();
  inf.z = beta.cwiseQuotient(inf.se);
  for (Index j = 0; j < beta.size(); ++j) inf.significant.push_back(std::abs(inf.z(j)) > kZ975);
  return inf;
}

/// Standard errors from the projected covariance for envelope fits and
/// from the sandwich for hr / ls.
inline Inference estimator_inference(const EstimatorFit& fit, const Dataset& data) {
  const Index p = data.p();
  Matrix avar;
  if (fit.envelope && fit.envelope->avar.size() > 0) {
    avar = fit.envelope->avar;
  } else {
    LinearFit lf;
    lf.mu = fit.mu;
    lf.beta = fit.beta;
    lf.residuals = detail::residuals(data, fit.mu, fit.beta);
    const Score sc = std::isfinite(fit.k) ? Score::huber(fit.k) : Score::identity();
    avar = sandwich_avar(data, lf, sc);
  }
  return make_inference(fit.mu, fit.beta, avar.block(1, 1, p, p), data.n());
}

inline Json fit_json(const EstimatorFit& fit, const Inference& inf, const Ingested* source = nullptr) {
  Json j;
  j["mu"] = num(fit.mu);
  j["beta"] = num_vector(fit.beta);
  j["k"] = num(fit.k);
  j["se"] = num_vector(inf.se);
  j["z"] = num_vector(inf.z);
  j["significant"] = inf.significant;
  if (source) {
    j["response"] = source->response;
    j["predictors"] = source->predictors;
    j["standardized"] = source->standardized;
    j["scales"] = num_vector(source->scales);
    j["beta_original_scale"] = num_vector(fit.beta.cwiseQuotient(source->scales));
    j["se_original_scale"] = num_vector(inf.se.cwiseQuotient(source->scales));
  }
  if (fit.envelope) {
    const FitResult& fr = *fit.envelope;
    Json env;
    env["u"] = fr.u;
    env["objective"] = num(fr.objective);
    env["initial_objective"] = num(fr.initial_objective);
    env["gamma"] = to_json(fr.canonical.basis.gamma);
    env["gamma0"] = to_json(fr.canonical.basis.gamma0);
    env["eta"] = num_vector(fr.canonical.eta);
    env["omega"] = to_json(fr.canonical.omega);
    env["omega0"] = to_json(fr.canonical.omega0);
    env["chart_A"] = to_json(fr.zeta_hat.A);
    env["chart_perm"] = fr.zeta_hat.perm;
    env["sigma_x"] = to_json(fr.theta_hat.sigma_x);
    env["mu_x"] = num_vector(fr.theta_hat.mu_x);
    env["avar_diagonal"] = num_vector(fr.avar.diagonal());
    env["ridge_applied"] = fr.weight.ridge_applied;
    env["ridge_value"] = num(fr.weight.ridge_value);
    env["pls_fallback"] = fr.pls_fallback;
    env["optimizer"] = {{"iterations", fr.optimizer.iterations},   {"evaluations", fr.optimizer.evaluations},
                        {"restarts", fr.optimizer.restarts},       {"converged", fr.optimizer.converged},
                        {"refine_iterations", fr.optimizer.refine_iterations}, {"refine_gain", num(fr.optimizer.refine_gain)}};
    j["envelope"] = env;
  }
  return j;
}

inline Json cv_json(const CvReport& r) {
  Json j;
  j["estimator"] = to_string(r.estimator);
  j["u_hat"] = r.u_hat;
  j["folds"] = r.folds;
  j["fold_seed"] = r.fold_seed;
  j["rng"] = kRngName;
  j["loss_k"] = num(r.k_full);
  Json vals = Json::object();
  for (const auto& [u, v] : r.cv_values) vals[std::to_string(u)] = num(v);
  j["cv_values"] = vals;
  j["invalid_u"] = r.invalid_u;
  Json fails = Json::object();
  for (const auto& [u, msg] : r.failures) fails[std::to_string(u)] = msg;
  j["failures"] = fails;
  return j;
}

inline Json bootstrap_json(const BootstrapReport& r) {
  Json j;
  j["estimator"] = to_string(r.estimator);
  j["B"] = r.B;
  j["u"] = r.u;
  j["seed"] = r.seed;
  j["rng"] = kRngName;
  j["sd"] = num_vector(r.sd);
  j["failed"] = r.failed;
  j["flagged"] = r.flagged;
  j["estimates"] = to_json(r.estimates);
  return j;
}

inline Json mse_json(const MseTable& t) {
  const SimScenario& sc = t.scenario;
  Json j;
  j["scenario"] = {{"p", sc.p}, {"u", sc.u}, {"n", sc.n}, {"error", to_string(sc.error)}, {"scale", to_string(sc.scale)},
                   {"reps", sc.reps}, {"seed", sc.seed}, {"u_policy", sc.u_policy == UPolicy::cv_selected ? "cv" : "fixed"},
                   {"cv_folds", sc.cv_folds}, {"rng", kRngName}};
  Json rows = Json::array();
  for (const auto& r : t.rows) {
    Json row;
    row["estimator"] = to_string(r.estimator);
    row["mean_loss"] = num(r.mean);
    row["se"] = num(r.se);
    row["median_loss"] = num(r.median);
    row["failures"] = r.failures;
    row["cv_true_u_rate"] = r.cv_true_u_rate < 0 ? Json(nullptr) : num(r.cv_true_u_rate);
    Json losses = Json::array();
    for (double l : r.losses) losses.push_back(num(l));
    row["losses"] = losses;
    row["u_used"] = r.u_used;
    rows.push_back(row);
  }
  j["rows"] = rows;
  return j;
}

inline void write_mse_csv(std::ostream& os, const MseTable& t) {
  os << "estimator,mean_loss,se,median_loss,failures,cv_true_u_rate\n";
  for (const auto& r : t.rows)
    os << to_string(r.estimator) << ',' << fmt(r.mean) << ',' << fmt(r.se) << ',' << fmt(r.median) << ',' << r.failures << ','
       << (r.cv_true_u_rate < 0 ? std::string() : fmt(r.cv_true_u_rate)) << '\n';
}

struct HuberFactorRow {
  ErrorDistribution dist;
  double k;
  double factor;
  double variance;
  double ratio;  // variance / factor: relative efficiency of Huber over least squares
};

inline std::vector<HuberFactorRow> huber_factor_table() {
  std::vector<HuberFactorRow> rows;
  for (ErrorDistribution d : kAllErrorDistributions) {
    const double k = population_k(d);
    const double f = huber_factor(d, k);
    const double v = error_variance(d);
    rows.push_back({d, k, f, v, v / f});
  }
  return rows;
}

inline Json huber_table_json(const std::vector<HuberFactorRow>& rows) {
  Json a = Json::array();
  for (const auto& r : rows)
    a.push_back({{"distribution", to_string(r.dist)}, {"k", num(r.k)}, {"factor", num(r.factor)}, {"variance", num(r.variance)}, {"ratio", num(r.ratio)}});
  return a;
}

inline void write_huber_csv(std::ostream& os, const std::vector<HuberFactorRow>& rows) {
  os << "distribution,k,factor,variance,ratio\n";
  for (const auto& r : rows) os << to_string(r.dist) << ',' << fmt(r.k) << ',' << fmt(r.factor) << ',' << fmt(r.variance) << ',' << fmt(r.ratio) << '\n';
}

}  // namespace ehr
