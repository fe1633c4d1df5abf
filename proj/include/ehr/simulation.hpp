#pragma once

// Monte Carlo harness: simulation truth, error generators, response
// generation, the replication runner and its summary table, and the flat
// key = value scenario format.

#include "ehr/asymptotics.hpp"
#include "ehr/random.hpp"
#include "ehr/selection.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace ehr {

struct SimTruth {
  Index p = 0, u = 0;
  double mu_star = 5.0;
  Vector beta_star;
  Matrix gamma, gamma0;
  Vector eta;
  Matrix omega, omega0;
  Matrix sigma_x;
  Matrix sigma_root;  // symmetric square root of sigma_x
};

/// Truth for p predictors and envelope dimension u, with u dividing p.
/// Column j of Gamma carries -1/sqrt(p/u) on rows i with i mod u == j;
/// Omega is diagonal with 9 and 100 alternating, Omega0 = I and every
/// entry of eta is -0.1 sqrt(p/u), so every entry of beta* equals 0.1.
/// (p, u) = (12, 2) is the reference design; other pairs extend the pattern.
inline SimTruth build_truth(Index p, Index u) {
  if (u < 1 || p < u || p % u != 0) throw InputError("build_truth: u must divide p");
  SimTruth t;
  t.p = p;
  t.u = u;
  const double block = static_cast<double>(p / u);
  t.gamma = Matrix::Zero(p, u);
  for (Index i = 0; i < p; ++i) t.gamma(i, i % u) = -1.0 / std::sqrt(block);
  t.gamma0 = orthonormal_complement(t.gamma);
  t.omega = Matrix::Zero(u, u);
  for (Index j = 0; j < u; ++j) t.omega(j, j) = j % 2 == 0 ? 9.0 : 100.0;
  t.omega0 = Matrix::Identity(p - u, p - u);
  t.eta = Vector::Constant(u, -0.1 * std::sqrt(block));
  t.beta_star = t.gamma * t.eta;
  t.sigma_x = symmetrize(t.gamma * t.omega * t.gamma.transpose() + t.gamma0 * t.omega0 * t.gamma0.transpose());
  const SymEigen es = sym_eigen(t.sigma_x);
  t.sigma_root = symmetrize(es.vectors * es.values.cwiseSqrt().asDiagonal() * es.vectors.transpose());
  return t;
}

inline double draw_error(ErrorDistribution d, RandomStream& rs) {
  switch (d) {
    case ErrorDistribution::normal: return rs.normal();
    case ErrorDistribution::t3: {
      const double z = rs.normal();
      double chi = 0.0;
      for (int i = 0; i < 3; ++i) {
        const double e = rs.normal();
        chi += e * e;
      }
      return z / std::sqrt(chi / 3.0);
    }
    case ErrorDistribution::mixnorm: {
      const bool wide = rs.uniform() < 0.1;
      const double z = rs.normal();
      return wide ? 5.0 * z : z;
    }
    case ErrorDistribution::laplace: {
      const double e = rs.exponential(1.0);
      return rs.uniform() < 0.5 ? -e : e;
    }
    case ErrorDistribution::sgamma: {
      const double v = rs.exponential(2.0) + rs.exponential(2.0);
      return rs.uniform() < 0.5 ? -v : v;
    }
    case ErrorDistribution::cauchy: return std::tan(std::numbers::pi * (rs.uniform() - 0.5));
  }
  return 0.0;
}

inline Vector gen_errors(ErrorDistribution d, Index n, RandomStream& rs) {
  Vector e(n);
  for (Index i = 0; i < n; ++i) e(i) = draw_error(d, rs);
  return e;
}

enum class ScaleFn { constant, additive, multiplicative };

inline std::string_view to_string(ScaleFn s) {
  switch (s) {
    case ScaleFn::constant: return "constant";
    case ScaleFn::additive: return "additive";
    case ScaleFn::multiplicative: return "multiplicative";
  }
  return "unknown";
}

inline ScaleFn parse_scale(std::string_view s) {
  for (ScaleFn f : {ScaleFn::constant, ScaleFn::additive, ScaleFn::multiplicative})
    if (to_string(f) == s) return f;
  throw InputError("unknown scale function '" + std::string(s) + "'");
}

/// sigma(x): 1, x_1 + x_p, or x_1 * x_p.
inline double scale_value(ScaleFn s, const Eigen::Ref<const Vector>& x) {
  switch (s) {
    case ScaleFn::constant: return 1.0;
    case ScaleFn::additive: return x(0) + x(x.size() - 1);
    case ScaleFn::multiplicative: return x(0) * x(x.size() - 1);
  }
  return 1.0;
}

enum class UPolicy { fixed_true, cv_selected };

struct SimScenario {
  Index p = 12, u = 2, n = 500;
  ErrorDistribution error = ErrorDistribution::normal;
  ScaleFn scale = ScaleFn::constant;
  int reps = 20;
  std::uint64_t seed = 1;
  std::vector<Estimator> estimators{Estimator::ehr, Estimator::env, Estimator::hr, Estimator::ls};
  UPolicy u_policy = UPolicy::fixed_true;
  int cv_folds = 5;
  double noise_scale = 1.0;  // multiplies the error draw
};

/// Rep r uses stream (seed, r): n rows of p standard normals (row-major
/// draw order) mapped through the symmetric root, then n errors.
inline Dataset gen_dataset(const SimScenario& sc, const SimTruth& truth, int rep) {
  RandomStream rs(sc.seed, static_cast<std::uint64_t>(rep));
  Matrix z(sc.n, sc.p);
  for (Index i = 0; i < sc.n; ++i)
    for (Index j = 0; j < sc.p; ++j) z(i, j) = rs.normal();
  Dataset d;
  d.X = z * truth.sigma_root;
  const Vector e = gen_errors(sc.error, sc.n, rs);
  d.y.resize(sc.n);
  for (Index i = 0; i < sc.n; ++i) {
    const Vector x = d.X.row(i).transpose();
    d.y(i) = truth.mu_star + x.dot(truth.beta_star) + scale_value(sc.scale, x) * sc.noise_scale * e(i);
  }
  return d;
}

struct EstimatorSummary {
  Estimator estimator = Estimator::ehr;
  std::vector<double> losses;    // per rep; NaN where the fit failed
  std::vector<Index> u_used;     // per rep (0 for hr / ls or failure)
  int failures = 0;
  double mean = 0.0;
  double se = 0.0;               // sample SD / sqrt(successful reps)
  double median = 0.0;
  double cv_true_u_rate = -1.0;  // fraction of reps with u_hat = true u; -1 if not applicable
};

struct MseTable {
  SimScenario scenario;
  std::vector<EstimatorSummary> rows;

  const EstimatorSummary& row(Estimator e) const {
    for (const auto& r : rows)
      if (r.estimator == e) return r;
    throw InputError("estimator '" + std::string(to_string(e)) + "' not in table");
  }
};

inline void summarize(EstimatorSummary& s, Index true_u, bool cv) {
  std::vector<double> ok;
  int hits = 0, cv_runs = 0;
  for (std::size_t r = 0; r < s.losses.size(); ++r) {
    if (std::isnan(s.losses[r])) continue;
    ok.push_back(s.losses[r]);
    if (cv) {
      ++cv_runs;
      hits += s.u_used[r] == true_u;
    }
  }
  s.failures = static_cast<int>(s.losses.size() - ok.size());
  if (ok.empty()) {
    s.mean = s.se = s.median = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  double sum = 0.0;
  for (double v : ok) sum += v;
  s.mean = sum / static_cast<double>(ok.size());
  double ss = 0.0;
  for (double v : ok) ss += (v - s.mean) * (v - s.mean);
  s.se = ok.size() > 1 ? std::sqrt(ss / static_cast<double>(ok.size() - 1)) / std::sqrt(static_cast<double>(ok.size())) : 0.0;
  s.median = detail::median(ok);
  if (cv) s.cv_true_u_rate = cv_runs > 0 ? static_cast<double>(hits) / cv_runs : 0.0;
}

/// Runs every rep and estimator. Loss is the squared distance ||beta_hat - beta*||^2.
inline MseTable run_scenario(const SimScenario& sc, int threads = 1, const FitOptions& fit_opts = {}) {
  if (sc.reps < 1) throw InputError("scenario: reps must be at least 1");
  if (sc.estimators.empty()) throw InputError("scenario: no estimators");
  const SimTruth truth = build_truth(sc.p, sc.u);
  const std::size_t ne = sc.estimators.size();
  const std::size_t reps = static_cast<std::size_t>(sc.reps);
  std::vector<double> loss(reps * ne, std::numeric_limits<double>::quiet_NaN());
  std::vector<Index> u_used(reps * ne, 0);
  FitOptions fo = fit_opts;
  fo.compute_avar = false;

  // one task per (rep, estimator); each rebuilds its own dataset
  parallel_for(reps * ne, threads, [&](std::size_t t) {
    const std::size_t r = t / ne, e = t % ne;
    const Estimator est = sc.estimators[e];
    try {
      const Dataset d = gen_dataset(sc, truth, static_cast<int>(r));
      Index u = sc.u;
      if (is_envelope(est) && sc.u_policy == UPolicy::cv_selected) {
        CvOptions co;
        co.folds = sc.cv_folds;
        co.seed = splitmix64(sc.seed ^ (0x9e3779b97f4a7c15ULL * (r + 1)));
        co.fit = fo;
        u = cv_select_u(d, est, co).u_hat;
      }
      const EstimatorFit f = fit_estimator(est, d, u, fo);
      const double l = (f.beta - truth.beta_star).squaredNorm();
      if (std::isfinite(l)) {
        loss[t] = l;
        u_used[t] = is_envelope(est) ? u : 0;
      }
    } catch (const std::exception&) {
    }
  });

  MseTable table;
  table.scenario = sc;
  for (std::size_t e = 0; e < ne; ++e) {
    EstimatorSummary s;
    s.estimator = sc.estimators[e];
    for (std::size_t r = 0; r < reps; ++r) {
      s.losses.push_back(loss[r * ne + e]);
      s.u_used.push_back(u_used[r * ne + e]);
    }
    summarize(s, sc.u, is_envelope(s.estimator) && sc.u_policy == UPolicy::cv_selected);
    table.rows.push_back(std::move(s));
  }
  return table;
}

// Scenario files ------------------------------------------------------------

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long out = 0;
  try {
    out = std::stol(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw InputError("scenario: key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

}  // namespace detail

/// Parses `key = value` lines; '#' starts a comment. Keys: p, u, n, error,
/// scale, reps, seed, estimators (comma separated), u_policy (fixed | cv),
/// cv_folds.
inline SimScenario parse_scenario(std::istream& in) {
  SimScenario sc;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("scenario line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key == "p") sc.p = detail::parse_int(key, val);
    else if (key == "u") sc.u = detail::parse_int(key, val);
    else if (key == "n") sc.n = detail::parse_int(key, val);
    else if (key == "reps") sc.reps = static_cast<int>(detail::parse_int(key, val));
    else if (key == "seed") sc.seed = static_cast<std::uint64_t>(detail::parse_int(key, val));
    else if (key == "cv_folds") sc.cv_folds = static_cast<int>(detail::parse_int(key, val));
    else if (key == "error") sc.error = parse_error_distribution(val);
    else if (key == "scale") sc.scale = parse_scale(val);
    else if (key == "u_policy") {
      if (val == "fixed") sc.u_policy = UPolicy::fixed_true;
      else if (val == "cv") sc.u_policy = UPolicy::cv_selected;
      else throw InputError("scenario: u_policy must be 'fixed' or 'cv'");
    } else if (key == "estimators") {
      sc.estimators.clear();
      std::stringstream ss(val);
      std::string item;
      while (std::getline(ss, item, ',')) sc.estimators.push_back(parse_estimator(detail::trim(item)));
    } else {
      throw InputError("scenario line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  if (sc.p < 1 || sc.n < sc.p + 2 || sc.reps < 1) throw InputError("scenario: need p >= 1, n >= p + 2, reps >= 1");
  build_truth(sc.p, sc.u);
  return sc;
}

inline SimScenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open scenario file '" + path + "'");
  return parse_scenario(in);
}

}  // namespace ehr
