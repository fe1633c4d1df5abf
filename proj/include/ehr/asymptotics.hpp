#pragma once

// Asymptotic covariances: the sandwich for the unconstrained solution, its
// projection onto the envelope tangent space, the closed form for the
// regression coefficients, the known-basis variance, and the Huber
// efficiency factor for the six error laws used in the simulations.

#include "ehr/envelope.hpp"
#include "ehr/linalg.hpp"
#include "ehr/robust.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>

namespace ehr {

struct SandwichParts {
  Matrix U1;
  Matrix V1;
};

/// Plug-in U1 and V1 at the unconstrained solution. psi' uses the closed
/// interval convention, mu_x is replaced by the sample mean.
inline SandwichParts sandwich_parts(const Dataset& data, const LinearFit& fit, const Score& score) {
  const Index n = data.n(), p = data.p();
  const Index vp = vech_size(p);
  const Index m = NaturalParams::dim(p);
  if (fit.residuals.size() != n) throw InputError("sandwich: residuals do not match the data");
  const Vector xbar = data.X.colwise().mean().transpose();
  const Matrix xc = data.X.rowwise() - xbar.transpose();
  const Matrix s = xc.transpose() * xc / static_cast<double>(n);
  const Vector vs = vech(s);

  Matrix u11 = Matrix::Zero(p + 1, p + 1);
  Matrix v11 = Matrix::Zero(p + 1, p + 1);
  Matrix rest = Matrix::Zero(vp + p, vp + p);
  Vector w(p + 1), h(vp + p);
  for (Index i = 0; i < n; ++i) {
    const double r = fit.residuals(i);
    w(0) = 1.0;
    w.tail(p) = data.X.row(i).transpose();
    const double d = score.dpsi(r);
    const double ps = score.psi(r);
    if (d != 0.0) u11.selfadjointView<Eigen::Lower>().rankUpdate(w, d);
    v11.selfadjointView<Eigen::Lower>().rankUpdate(w, ps * ps);
    const Vector c = xc.row(i).transpose();
    Index t = 0;
    for (Index j = 0; j < p; ++j)
      for (Index k = j; k < p; ++k, ++t) h(t) = c(k) * c(j) - vs(t);
    h.tail(p) = c;
    rest.selfadjointView<Eigen::Lower>().rankUpdate(h);
  }
  const double dn = static_cast<double>(n);
  SandwichParts sp;
  sp.U1 = Matrix::Identity(m, m);
  sp.U1.topLeftCorner(p + 1, p + 1) = Matrix(u11.selfadjointView<Eigen::Lower>()) / dn;
  sp.V1 = Matrix::Zero(m, m);
  sp.V1.topLeftCorner(p + 1, p + 1) = Matrix(v11.selfadjointView<Eigen::Lower>()) / dn;
  sp.V1.bottomRightCorner(vp + p, vp + p) = Matrix(rest.selfadjointView<Eigen::Lower>()) / dn;
  return sp;
}

/// U1^{-1} V1 U1^{-1}: asymptotic covariance of sqrt(n)(theta_tilde - theta).
inline Matrix sandwich_avar(const Dataset& data, const LinearFit& fit, const Score& score) {
  const SandwichParts sp = sandwich_parts(data, fit, score);
  const Index p = data.p();
  const Matrix u11 = sp.U1.topLeftCorner(p + 1, p + 1);
  Eigen::LLT<Matrix> llt(u11);
  // rank judged after unit-diagonal scaling so that predictor units do not matter
  const Vector dg = u11.diagonal().cwiseMax(0.0).cwiseSqrt();
  const bool zero_diag = (dg.array() <= 0.0).any();
  const Matrix scaled = zero_diag ? u11 : Matrix(dg.cwiseInverse().asDiagonal() * u11 * dg.cwiseInverse().asDiagonal());
  if (llt.info() != Eigen::Success || zero_diag || numerical_rank(scaled, 1e-12) < p + 1) {
    Index inside = 0;
    for (Index i = 0; i < fit.residuals.size(); ++i) inside += score.dpsi(fit.residuals(i)) > 0.0;
    throw NumericalError("sandwich: E[psi' w w'] is singular (" + std::to_string(inside) + " of " +
                         std::to_string(fit.residuals.size()) + " residuals inside [-k, k])");
  }
  const Matrix u11inv = llt.solve(Matrix::Identity(p + 1, p + 1));
  Matrix out = sp.V1;
  out.topLeftCorner(p + 1, p + 1) = u11inv * sp.V1.topLeftCorner(p + 1, p + 1) * u11inv;
  return symmetrize(out);
}

/// Psi1 (Psi1' avar_tilde^{-1} Psi1)^+ Psi1'.
inline Matrix projected_avar(const Matrix& psi1, const Matrix& avar_tilde) {
  if (avar_tilde.rows() != avar_tilde.cols() || psi1.rows() != avar_tilde.rows())
    throw InputError("projected_avar: dimension mismatch");
  Eigen::LLT<Matrix> llt(symmetrize(avar_tilde));
  if (llt.info() != Eigen::Success) throw InputError("projected_avar: avar_tilde is not positive definite");
  const Matrix li_psi = llt.matrixL().solve(psi1);  // L^{-1} Psi1
  const Matrix info = li_psi.transpose() * li_psi;
  return symmetrize(psi1 * pinv(symmetrize(info), 1e-10) * psi1.transpose());
}

/// f Gamma Omega^{-1} Gamma'.
inline Matrix known_gamma_avar(const Matrix& gamma, const Matrix& omega, double huber_factor) {
  if (omega.rows() != gamma.cols() || omega.cols() != gamma.cols()) throw InputError("known_gamma_avar: dimension mismatch");
  return symmetrize(huber_factor * gamma * inverse_spd(omega) * gamma.transpose());
}

/// Closed form for avar(sqrt(n) beta_hat) with independent errors and
/// centered predictors:
///   f Gamma Omega^{-1} Gamma' + (eta' (x) Gamma0) T^+ (eta (x) Gamma0'),
///   T = f^{-1} eta eta' (x) Omega0 + Omega (x) Omega0^{-1} + Omega^{-1} (x) Omega0 - 2 I.
inline Matrix envelope_beta_avar(const EnvelopeBasis& basis, const Vector& eta, const Matrix& omega, const Matrix& omega0, double huber_factor) {
  const Matrix& g = basis.gamma;
  const Matrix& g0 = basis.gamma0;
  const Index p = g.rows(), u = g.cols(), q = p - u;
  if (g0.rows() != p || g0.cols() != q || eta.size() != u || omega.rows() != u || omega.cols() != u ||
      omega0.rows() != q || omega0.cols() != q)
    throw InputError("envelope_beta_avar: dimension mismatch");
  if (!(huber_factor > 0.0)) throw InputError("envelope_beta_avar: factor must be positive");
  Matrix out = known_gamma_avar(g, omega, huber_factor);
  if (q == 0) return out;
  const Matrix oi = inverse_spd(omega);
  const Matrix o0i = inverse_spd(omega0);
  const Matrix t = kron(eta * eta.transpose() / huber_factor, omega0) + kron(omega, o0i) + kron(oi, omega0) -
                   2.0 * Matrix::Identity(u * q, u * q);
  const Matrix left = kron(eta.transpose(), g0);
  out += left * pinv(symmetrize(t), 1e-12) * left.transpose();
  return symmetrize(out);
}

// Error laws ----------------------------------------------------------------

enum class ErrorDistribution { normal, t3, mixnorm, laplace, sgamma, cauchy };

inline constexpr std::array<ErrorDistribution, 6> kAllErrorDistributions = {
    ErrorDistribution::normal, ErrorDistribution::t3, ErrorDistribution::mixnorm,
    ErrorDistribution::laplace, ErrorDistribution::sgamma, ErrorDistribution::cauchy};

inline std::string_view to_string(ErrorDistribution d) {
  switch (d) {
    case ErrorDistribution::normal: return "normal";
    case ErrorDistribution::t3: return "t3";
    case ErrorDistribution::mixnorm: return "mixnorm";
    case ErrorDistribution::laplace: return "laplace";
    case ErrorDistribution::sgamma: return "sgamma";
    case ErrorDistribution::cauchy: return "cauchy";
  }
  return "unknown";
}

inline ErrorDistribution parse_error_distribution(std::string_view s) {
  for (ErrorDistribution d : kAllErrorDistributions)
    if (to_string(d) == s) return d;
  throw InputError("unknown error distribution '" + std::string(s) + "'");
}

namespace detail {

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// Density of the error at x >= 0 (all laws are symmetric about zero).
inline double error_pdf(ErrorDistribution d, double x) {
  switch (d) {
    case ErrorDistribution::normal: return normal_pdf(x);
    case ErrorDistribution::t3: {
      const double c = 6.0 * std::sqrt(3.0) / std::numbers::pi;  // Gamma(2)/(sqrt(3 pi) Gamma(3/2)) * 3^2
      return c / std::pow(3.0 + x * x, 2.0);
    }
    case ErrorDistribution::mixnorm: return 0.9 * normal_pdf(x) + 0.1 * normal_pdf(x / 5.0) / 5.0;
    case ErrorDistribution::laplace: return 0.5 * std::exp(-std::abs(x));
    case ErrorDistribution::sgamma: {
      const double a = std::abs(x);
      return 0.5 * a * std::exp(-a / 2.0) / 4.0;  // half of Gamma(2, scale 2)
    }
    case ErrorDistribution::cauchy: return 1.0 / (std::numbers::pi * (1.0 + x * x));
  }
  return 0.0;
}

/// P(|eps| <= x) for x >= 0, closed forms.
inline double abs_cdf(ErrorDistribution d, double x) {
  if (x <= 0.0) return 0.0;
  switch (d) {
    case ErrorDistribution::normal: return std::erf(x / std::numbers::sqrt2);
    case ErrorDistribution::t3: {
      const double s = x / std::sqrt(3.0);
      return 2.0 / std::numbers::pi * (s / (1.0 + s * s) + std::atan(s));
    }
    case ErrorDistribution::mixnorm: return 0.9 * std::erf(x / std::numbers::sqrt2) + 0.1 * std::erf(x / (5.0 * std::numbers::sqrt2));
    case ErrorDistribution::laplace: return 1.0 - std::exp(-x);
    case ErrorDistribution::sgamma: return 1.0 - std::exp(-x / 2.0) * (1.0 + x / 2.0);
    case ErrorDistribution::cauchy: return 2.0 / std::numbers::pi * std::atan(x);
  }
  return 0.0;
}

inline double simpson_step(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                           double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double diff = left + right - whole;
  if (depth <= 0 || std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
  return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

/// Adaptive Simpson quadrature on [a, b] with absolute tolerance tol.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol = 1e-13, int max_depth = 50) {
  if (b == a) return 0.0;
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

/// Error variance; +inf for the Cauchy law.
inline double error_variance(ErrorDistribution d) {
  switch (d) {
    case ErrorDistribution::normal: return 1.0;
    case ErrorDistribution::t3: return 3.0;
    case ErrorDistribution::mixnorm: return 0.9 + 0.1 * 25.0;
    case ErrorDistribution::laplace: return 2.0;
    case ErrorDistribution::sgamma: return 2.0 * 3.0 * 4.0;  // E[G^2] = shape (shape + 1) scale^2
    case ErrorDistribution::cauchy: return std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

/// Median of |eps|, by bisection on the closed-form distribution function.
inline double population_mad(ErrorDistribution d) {
  double lo = 0.0, hi = 1.0;
  while (detail::abs_cdf(d, hi) < 0.5) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (detail::abs_cdf(d, mid) < 0.5 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Rule-of-thumb threshold at the population MAD.
inline double population_k(ErrorDistribution d) { return k_from_mad(population_mad(d)); }

/// E[psi'(eps)] = P(|eps| <= k).
inline double expected_dpsi(ErrorDistribution d, double k) { return detail::abs_cdf(d, k); }

/// E[psi(eps)^2] = E[min(eps^2, k^2)].
/// Unit panels up to 64, then one panel to k: a single panel over a huge
/// range can sample only zeros and stop early.
inline double expected_psi_sq(ErrorDistribution d, double k) {
  auto f = [d](double x) { return x * x * detail::error_pdf(d, x); };
  const double cut = std::min(k, 64.0);
  double inner = 0.0;
  for (double a = 0.0; a < cut; a += 1.0) inner += adaptive_simpson(f, a, std::min(a + 1.0, cut), 1e-15);
  if (k > cut) inner += adaptive_simpson(f, cut, k, 1e-12 * (k - cut));
  return 2.0 * inner + k * k * (1.0 - detail::abs_cdf(d, k));
}

/// E[psi^2] / (E[psi'])^2.
inline double huber_factor(ErrorDistribution d, double k) {
  if (!(k > 0.0)) throw InputError("huber_factor: k must be positive");
  const double e1 = expected_dpsi(d, k);
  return expected_psi_sq(d, k) / (e1 * e1);
}

// Population moments for oracle checks -------------------------------------

/// var(vech(x x')) for x ~ N(0, Sigma): 2 C (Sigma (x) Sigma) C'.
inline Matrix normal_vech_cov(const Matrix& sigma) {
  const ContractionExpansion ce = contraction_expansion(sigma.rows());
  return symmetrize(2.0 * ce.contraction * kron(sigma, sigma) * ce.contraction.transpose());
}

/// Population avar of sqrt(n)(theta_tilde - theta) for independent errors
/// with Huber factor f and x ~ N(0, Sigma).
inline Matrix population_avar_tilde(const Matrix& sigma, double huber_factor) {
  const Index p = sigma.rows(), vp = vech_size(p);
  const Index m = NaturalParams::dim(p);
  Matrix out = Matrix::Zero(m, m);
  Matrix eww = Matrix::Identity(p + 1, p + 1);
  eww.bottomRightCorner(p, p) = sigma;
  out.topLeftCorner(p + 1, p + 1) = huber_factor * inverse_spd(eww);
  out.block(p + 1, p + 1, vp, vp) = normal_vech_cov(sigma);
  out.bottomRightCorner(p, p) = sigma;
  return out;
}

}  // namespace ehr
