#pragma once

// Huber loss and score, the median-regression based threshold rule, and the
// baseline fitters (Huber IRLS, median regression, least squares) together
// with the unconstrained estimating-equation solution.

#include "ehr/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace ehr {

/// Response vector plus n x p predictor matrix.
struct Dataset {
  Vector y;
  Matrix X;

  Index n() const { return y.size(); }
  Index p() const { return X.cols(); }

  /// Checks shape and finiteness. Collinearity is detected by the fitters.
  void validate() const {
    if (X.rows() != y.size()) throw InputError("dataset: X has " + std::to_string(X.rows()) + " rows but y has " + std::to_string(y.size()));
    if (!y.allFinite() || !X.allFinite()) throw InputError("dataset: non-finite entries");
    if (n() < p() + 2) throw InputError("dataset: need n > p + 1");
  }

  Dataset rows(const std::vector<Index>& idx) const {
    Dataset out{Vector(static_cast<Index>(idx.size())), Matrix(static_cast<Index>(idx.size()), p())};
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.y(static_cast<Index>(i)) = y(idx[i]);
      out.X.row(static_cast<Index>(i)) = X.row(idx[i]);
    }
    return out;
  }
};

inline double huber_loss(double r, double k) {
  const double a = std::abs(r);
  return a <= k ? 0.5 * r * r : k * a - 0.5 * k * k;
}

inline double huber_psi(double r, double k) { return std::clamp(r, -k, k); }

/// a.e. derivative of psi, with the closed interval convention at |r| = k.
inline double huber_dpsi(double r, double k) { return std::abs(r) <= k ? 1.0 : 0.0; }

enum class ScoreKind { huber, identity };

/// The estimating-equation score: Huber's psi, or the identity (least squares).
struct Score {
  ScoreKind kind = ScoreKind::huber;
  double k = 1.345;

  static Score huber(double k) { return {ScoreKind::huber, k}; }
  static Score identity() { return {ScoreKind::identity, std::numeric_limits<double>::infinity()}; }

  double psi(double r) const { return kind == ScoreKind::huber ? huber_psi(r, k) : r; }
  double dpsi(double r) const { return kind == ScoreKind::huber ? huber_dpsi(r, k) : 1.0; }
  double loss(double r) const { return kind == ScoreKind::huber ? huber_loss(r, k) : 0.5 * r * r; }
};

struct HuberSpec {
  double k = 1.345;
  bool degenerate = false;  // MAD was zero and k was floored
};

struct LinearFit {
  double mu = 0.0;
  Vector beta;
  Vector residuals;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;
};

struct IrlsOptions {
  int max_iter = 200;
  double tol = 1e-10;
};

namespace detail {

inline Matrix design(const Matrix& x) {
  Matrix w(x.rows(), x.cols() + 1);
  w.col(0).setOnes();
  w.rightCols(x.cols()) = x;
  return w;
}

inline Vector residuals(const Dataset& d, double mu, const Vector& beta) {
  return (d.y.array() - mu).matrix() - d.X * beta;
}

inline LinearFit make_fit(const Dataset& d, const Vector& coef) {
  LinearFit f;
  f.mu = coef(0);
  f.beta = coef.tail(coef.size() - 1);
  f.residuals = residuals(d, f.mu, f.beta);
  return f;
}

/// Weighted least squares on the intercept-augmented design.
inline Vector weighted_ls(const Matrix& w, const Vector& y, const Vector& weights) {
  const Vector sw = weights.cwiseSqrt();
  const Matrix a = sw.asDiagonal() * w;
  const Vector b = sw.cwiseProduct(y);
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  if (qr.rank() < w.cols()) throw NumericalError("weighted least squares: design is rank deficient");
  return qr.solve(b);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw InputError("median of empty sample");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  return m;
}

inline double median(const Vector& v) { return median(std::vector<double>(v.data(), v.data() + v.size())); }

inline double l1_objective(const Vector& r) { return r.cwiseAbs().sum(); }

inline double huber_objective(const Vector& r, double k) {
  double s = 0.0;
  for (Index i = 0; i < r.size(); ++i) s += huber_loss(r(i), k);
  return s;
}

}  // namespace detail

inline LinearFit ols_fit(const Dataset& data) {
  data.validate();
  const Matrix w = detail::design(data.X);
  Eigen::ColPivHouseholderQR<Matrix> qr(w);
  if (qr.rank() < w.cols()) throw InputError("ols: design matrix is rank deficient");
  LinearFit f = detail::make_fit(data, qr.solve(data.y));
  f.converged = true;
  return f;
}

struct MedianOptions {
  int max_iter = 500;
  double tol = 1e-10;
};

/// Least absolute deviations by smoothed IRLS, weights 1 / max(|r|, delta)
/// with delta = 1e-6 * scale(y). Returns the best iterate seen.
inline LinearFit median_fit(const Dataset& data, const MedianOptions& opts = {}) {
  const LinearFit start = ols_fit(data);
  const Matrix w = detail::design(data.X);
  const double med = detail::median(data.y);
  double scale = detail::median((data.y.array() - med).abs().matrix());
  if (scale <= 0.0) scale = (data.y.array() - med).abs().maxCoeff();
  if (scale <= 0.0) scale = 1.0;
  const double delta = 1e-6 * scale;

  Vector coef(w.cols());
  coef << start.mu, start.beta;
  Vector best = coef;
  double best_obj = detail::l1_objective(start.residuals);
  LinearFit out;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    const Vector r = data.y - w * coef;
    Vector wt(r.size());
    for (Index i = 0; i < r.size(); ++i) wt(i) = 1.0 / std::max(std::abs(r(i)), delta);
    const Vector next = detail::weighted_ls(w, data.y, wt);
    const double change = (next - coef).cwiseAbs().maxCoeff();
    coef = next;
    const double obj = detail::l1_objective(data.y - w * coef);
    if (obj < best_obj) {
      best_obj = obj;
      best = coef;
    }
    if (change < opts.tol * std::max(1.0, coef.cwiseAbs().maxCoeff())) {
      out.converged = true;
      ++it;
      break;
    }
  }
  LinearFit f = detail::make_fit(data, best);
  f.iterations = it;
  f.converged = out.converged;
  return f;
}

inline constexpr double kHuberEfficiencyConstant = 1.345;
inline constexpr double kNormalMad = 0.6745;
inline constexpr double kMinimumK = 1e-8;

inline double k_from_mad(double mad) { return kHuberEfficiencyConstant * mad / kNormalMad; }

/// k = 1.345 * MAD / 0.6745 with MAD the median absolute residual of a
/// median regression.
inline HuberSpec select_k(const Dataset& data) {
  const LinearFit med = median_fit(data);
  const double mad = detail::median(med.residuals.cwiseAbs());
  const double k = k_from_mad(mad);
  if (!(k > kMinimumK)) return {kMinimumK, true};
  return {k, false};
}

/// Huber regression by IRLS with weights min(1, k/|r|), started at OLS.
/// The objective is recorded per iteration in objective_trace.
inline LinearFit huber_fit(const Dataset& data, const HuberSpec& spec, const IrlsOptions& opts = {}) {
  if (!(spec.k > 0.0) || !std::isfinite(spec.k)) throw InputError("huber_fit: k must be positive and finite");
  const LinearFit start = ols_fit(data);
  const Matrix w = detail::design(data.X);
  Vector coef(w.cols());
  coef << start.mu, start.beta;
  std::vector<double> trace{detail::huber_objective(start.residuals, spec.k)};
  bool converged = false;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    const Vector r = data.y - w * coef;
    Vector wt(r.size());
    for (Index i = 0; i < r.size(); ++i) {
      const double a = std::abs(r(i));
      wt(i) = a <= spec.k ? 1.0 : spec.k / a;
    }
    const Vector next = detail::weighted_ls(w, data.y, wt);
    const double change = (next - coef).cwiseAbs().maxCoeff();
    coef = next;
    trace.push_back(detail::huber_objective(data.y - w * coef, spec.k));
    if (change < opts.tol * std::max(1.0, coef.cwiseAbs().maxCoeff())) {
      converged = true;
      ++it;
      break;
    }
  }
  LinearFit f = detail::make_fit(data, coef);
  f.iterations = it;
  f.converged = converged;
  f.objective_trace = std::move(trace);
  return f;
}

/// Fit under a generic score: Huber IRLS or least squares.
inline LinearFit score_fit(const Dataset& data, const Score& score) {
  if (score.kind == ScoreKind::identity) return ols_fit(data);
  return huber_fit(data, HuberSpec{score.k, false});
}

/// theta = (mu, beta, vech(Sigma_x), mu_x).
struct NaturalParams {
  double mu = 0.0;
  Vector beta;
  Matrix sigma_x;
  Vector mu_x;

  Index p() const { return beta.size(); }
  static Index dim(Index p) { return 1 + 2 * p + vech_size(p); }

  Vector to_vector() const {
    const Index p = beta.size();
    Vector v(dim(p));
    v(0) = mu;
    v.segment(1, p) = beta;
    v.segment(1 + p, vech_size(p)) = vech(sigma_x);
    v.tail(p) = mu_x;
    return v;
  }

  static NaturalParams from_vector(const Vector& v, Index p) {
    if (v.size() != dim(p)) throw InputError("NaturalParams: wrong vector length");
    return {v(0), v.segment(1, p), unvech(v.segment(1 + p, vech_size(p))), v.tail(p)};
  }
};

/// Divisor-n sample mean and covariance.
struct PredictorMoments {
  Vector mean;
  Matrix cov;
};

inline PredictorMoments predictor_moments(const Matrix& x) {
  const Index n = x.rows();
  PredictorMoments m;
  m.mean = x.colwise().mean().transpose();
  const Matrix c = x.rowwise() - m.mean.transpose();
  m.cov = symmetrize(c.transpose() * c / static_cast<double>(n));
  return m;
}

struct GeeSolution {
  NaturalParams theta_tilde;
  LinearFit fit;
};

/// The exactly identified root of the unconstrained estimating equations:
/// the score fit, the divisor-n covariance and the sample mean.
inline GeeSolution gee_solution(const Dataset& data, const Score& score) {
  GeeSolution g;
  g.fit = score_fit(data, score);
  const PredictorMoments mom = predictor_moments(data.X);
  g.theta_tilde = {g.fit.mu, g.fit.beta, mom.cov, mom.mean};
  return g;
}

inline GeeSolution gee_solution(const Dataset& data, const HuberSpec& spec) {
  return gee_solution(data, Score::huber(spec.k));
}

}  // namespace ehr
