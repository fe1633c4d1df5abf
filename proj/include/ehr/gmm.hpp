#pragma once

// Two-step GMM fit of the enveloped regression: stacked moment functions,
// the sample moment G_n, the weight matrix built at the unconstrained
// solution, the quadratic-form objective, the PLS initializer and the
// simplex search over the A-chart.

#include "ehr/asymptotics.hpp"
#include "ehr/envelope.hpp"
#include "ehr/levenberg_marquardt.hpp"
#include "ehr/linalg.hpp"
#include "ehr/nelder_mead.hpp"
#include "ehr/robust.hpp"

#include <optional>
#include <string>

namespace ehr {

inline Index moment_dim(Index p) { return 1 + 2 * p + vech_size(p); }

/// g(z; theta) = (g1, g2, g3) for a single observation.
struct MomentVector {
  Vector g1;  // psi(y - mu - x'beta) (1, x')'
  Vector g2;  // vech(Sigma_x) - vech((x - mu_x)(x - mu_x)')
  Vector g3;  // mu_x - x

  Vector stacked() const {
    Vector v(g1.size() + g2.size() + g3.size());
    v << g1, g2, g3;
    return v;
  }
};

inline MomentVector moment_g(double y, const Vector& x, const NaturalParams& theta, const Score& score) {
  const Index p = x.size();
  if (theta.beta.size() != p || theta.mu_x.size() != p || theta.sigma_x.rows() != p)
    throw InputError("moment_g: dimension mismatch");
  MomentVector g;
  const double s = score.psi(y - theta.mu - x.dot(theta.beta));
  g.g1.resize(p + 1);
  g.g1(0) = s;
  g.g1.tail(p) = s * x;
  const Vector c = x - theta.mu_x;
  g.g2 = vech(theta.sigma_x) - vech(c * c.transpose());
  g.g3 = theta.mu_x - x;
  return g;
}

/// G_n(theta) = (1/n) sum_i g(z_i; theta), computed observation by observation.
inline Vector sample_moment(const Dataset& data, const NaturalParams& theta, const Score& score) {
  Vector acc = Vector::Zero(moment_dim(data.p()));
  for (Index i = 0; i < data.n(); ++i) acc += moment_g(data.y(i), data.X.row(i).transpose(), theta, score).stacked();
  return acc / static_cast<double>(data.n());
}

/// Fast G_n: the covariance block only needs the sample mean and the
/// divisor-n covariance, since (1/n) sum (x_i - m)(x_i - m)' = S_x + (xbar - m)(xbar - m)'.
class MomentEvaluator {
 public:
  MomentEvaluator(const Dataset& data, Score score)
      : data_(&data), score_(score), mom_(predictor_moments(data.X)), vech_s_(vech(mom_.cov)) {}

  Vector operator()(const NaturalParams& t) const {
    const Index p = data_->p();
    const Index n = data_->n();
    Vector g(moment_dim(p));
    const Vector r = (data_->y.array() - t.mu).matrix() - data_->X * t.beta;
    Vector s(n);
    for (Index i = 0; i < n; ++i) s(i) = score_.psi(r(i));
    g(0) = s.mean();
    g.segment(1, p) = data_->X.transpose() * s / static_cast<double>(n);
    const Vector d = mom_.mean - t.mu_x;
    Index k = 1 + p;
    for (Index j = 0; j < p; ++j)
      for (Index i = j; i < p; ++i, ++k) g(k) = t.sigma_x(i, j) - (mom_.cov(i, j) + d(i) * d(j));
    g.tail(p) = t.mu_x - mom_.mean;
    return g;
  }

  const PredictorMoments& moments() const { return mom_; }
  const Score& score() const { return score_; }

 private:
  const Dataset* data_;
  Score score_;
  PredictorMoments mom_;
  Vector vech_s_;
};

struct WeightMatrix {
  Matrix delta;
  bool ridge_applied = false;
  double ridge_value = 0.0;
  bool small_sample = false;  // n < m
};

inline constexpr double kRidgeConditionLimit = 1e12;

/// Delta = ((1/n) sum g g')^{-1} at theta_tilde; a ridge of
/// ridge_eps * trace / m is added first when the condition number exceeds 1e12.
inline WeightMatrix weight_matrix(const Dataset& data, const NaturalParams& theta_tilde, const Score& score, double ridge_eps = 1e-8) {
  const Index m = moment_dim(data.p());
  Matrix outer = Matrix::Zero(m, m);
  for (Index i = 0; i < data.n(); ++i) {
    const Vector g = moment_g(data.y(i), data.X.row(i).transpose(), theta_tilde, score).stacked();
    if (!g.allFinite()) throw InputError("weight_matrix: non-finite moment at observation " + std::to_string(i));
    outer.selfadjointView<Eigen::Lower>().rankUpdate(g);
  }
  outer = outer.selfadjointView<Eigen::Lower>();
  outer /= static_cast<double>(data.n());

  WeightMatrix w;
  w.small_sample = data.n() < m;
  SymEigen es = sym_eigen(outer);
  const double lmax = es.values(m - 1);
  const double lmin = es.values(0);
  if (!(lmax > 0.0)) throw NumericalError("weight_matrix: moment covariance is zero");
  if (!(lmin > 0.0) || lmax / lmin > kRidgeConditionLimit) {
    w.ridge_applied = true;
    w.ridge_value = ridge_eps * outer.trace() / static_cast<double>(m);
    es.values.array() += w.ridge_value;
  }
  const Vector inv = es.values.cwiseInverse();
  w.delta = symmetrize(es.vectors * inv.asDiagonal() * es.vectors.transpose());
  return w;
}

/// g' Delta g; delta is stored as a full symmetric matrix.
inline double quadratic_form(const Vector& g, const Matrix& delta) { return g.dot(delta * g); }

inline double gmm_objective(const Dataset& data, const EnvelopeParams& zeta, const WeightMatrix& w, const Score& score) {
  const Vector g = sample_moment(data, env_map(zeta), score);
  return std::max(0.0, quadratic_form(g, w.delta));
}

struct PlsInit {
  Matrix basis;  // p x u, orthonormal
  Matrix A0;
  Permutation perm;
  bool fallback = false;  // Krylov vectors were dependent; padded with S_x eigenvectors
  Index krylov_rank = 0;
};

/// u-dimensional PLS weight subspace: the span of the Krylov sequence
/// {s_xy, S_x s_xy, ..., S_x^{u-1} s_xy}, orthonormalized by Gram-Schmidt
/// (the span SIMPLS produces). Converted to an A-chart by row pivoting.
inline PlsInit pls_initializer(const Dataset& data, Index u) {
  const Index p = data.p();
  if (u < 1 || u > p) throw InputError("pls_initializer: u must lie in 1..p");
  const PredictorMoments mom = predictor_moments(data.X);
  const Vector yc = (data.y.array() - data.y.mean()).matrix();
  const Matrix xc = data.X.rowwise() - mom.mean.transpose();
  const Vector sxy = xc.transpose() * yc / static_cast<double>(data.n());
  const double sy = std::sqrt(yc.squaredNorm() / static_cast<double>(data.n()));
  const double sx = std::sqrt(std::max(mom.cov.trace(), 0.0));
  const double tol = 1e-8;

  PlsInit init;
  Matrix basis(p, 0);
  auto try_add = [&](Vector v, double ref) {
    for (int pass = 0; pass < 2; ++pass)
      for (Index j = 0; j < basis.cols(); ++j) v -= basis.col(j).dot(v) * basis.col(j);
    const double nv = v.norm();
    if (!(nv > tol * ref) || !std::isfinite(nv)) return false;
    basis.conservativeResize(p, basis.cols() + 1);
    basis.col(basis.cols() - 1) = v / nv;
    return true;
  };

  Vector v = sxy;
  const double snorm = mom.cov.norm();
  if (try_add(v, sy * sx)) {
    while (basis.cols() < u) {
      v = mom.cov * basis.col(basis.cols() - 1);
      if (!try_add(v, std::max(snorm, 1e-300))) break;
    }
  }
  init.krylov_rank = basis.cols();
  if (basis.cols() < u) {
    init.fallback = true;
    const SymEigen es = sym_eigen(mom.cov);
    for (Index j = p - 1; j >= 0 && basis.cols() < u; --j) try_add(es.vectors.col(j), 1.0);
    for (Index j = 0; j < p && basis.cols() < u; ++j) try_add(Vector::Unit(p, j), 1.0);
  }
  init.basis = basis;
  init.perm = pivot_rows(basis);
  CanonicalEnvelope c;
  c.basis = {basis, orthonormal_complement(basis)};
  c.eta = Vector::Zero(u);
  c.omega = Matrix::Identity(u, u);
  c.omega0 = Matrix::Identity(p - u, p - u);
  c.mu_x = mom.mean;
  init.A0 = to_chart(c, init.perm).A;
  return init;
}

/// Simplex settings for the envelope search. Either test ends the search:
/// when the ridge is active the objective carries rounding noise near ftol,
/// and waiting for a flat simplex would run to max_iter.
inline NelderMeadOptions envelope_simplex_defaults() {
  NelderMeadOptions o;
  o.xtol = 1e-10;
  o.stop_on_either = true;
  return o;
}

inline LevenbergMarquardtOptions envelope_polish_defaults() {
  LevenbergMarquardtOptions o;
  o.max_iter = 2000;
  return o;
}

struct FitOptions {
  NelderMeadOptions nm = envelope_simplex_defaults();
  double step = 0.1;
  double log_diag_step = 0.05;
  double ridge_eps = 1e-8;
  std::optional<double> k;  // fixed Huber threshold; select_k when empty
  bool compute_avar = true;
  bool normalize = true;  // solve in centered, rescaled coordinates
  bool refine = true;     // Levenberg-Marquardt pass after the simplex search
  LevenbergMarquardtOptions lm = envelope_polish_defaults();
};

struct OptimizerMeta {
  long iterations = 0;
  long evaluations = 0;
  int restarts = 0;
  bool converged = false;
  int refine_iterations = 0;
  double refine_gain = 0.0;  // objective decrease from the refinement pass
};

struct FitResult {
  EnvelopeParams zeta_hat;
  CanonicalEnvelope canonical;
  NaturalParams theta_hat;
  NaturalParams theta_tilde;
  Index u = 0;
  double objective = 0.0;
  double initial_objective = 0.0;
  Matrix avar;  // asymptotic covariance of sqrt(n)(theta_hat - theta)
  double k = 0.0;
  ScoreKind score = ScoreKind::huber;
  WeightMatrix weight;
  bool pls_fallback = false;
  OptimizerMeta optimizer;
};

namespace detail {

/// Initial simplex steps: log-diagonal Cholesky coordinates get their own step.
inline Vector chart_steps(Index p, Index u, const FitOptions& opts) {
  Vector s = Vector::Constant(EnvelopeParams::free_dim(p, u), opts.step);
  Index o = 1 + u + (p - u) * u;
  for (Index blk : {u, p - u}) {
    Index t = 0;
    for (Index j = 0; j < blk; ++j)
      for (Index i = j; i < blk; ++i, ++t)
        if (i == j) s(o + t) = opts.log_diag_step;
    o += vech_size(blk);
  }
  return s;
}

/// Centering and scalar rescaling applied before the search. The two-step
/// GMM estimate is equivariant under x -> (x - c) / s and y -> (y - d) / t
/// (with k -> k / t), so this only improves the conditioning of the simplex.
struct Normalization {
  Vector x_center;
  double x_scale = 1.0;
  double y_center = 0.0;
  double y_scale = 1.0;

  static Normalization identity(Index p) { return {Vector::Zero(p), 1.0, 0.0, 1.0}; }

  static Normalization from_data(const Dataset& data) {
    Normalization nz;
    const PredictorMoments mom = predictor_moments(data.X);
    nz.x_center = mom.mean;
    const double sx = std::sqrt(mom.cov.trace() / static_cast<double>(data.p()));
    nz.x_scale = sx > 0.0 && std::isfinite(sx) ? sx : 1.0;
    nz.y_center = data.y.mean();
    const double sy = std::sqrt((data.y.array() - nz.y_center).square().mean());
    nz.y_scale = sy > 0.0 && std::isfinite(sy) ? sy : 1.0;
    return nz;
  }

  Dataset apply(const Dataset& d) const {
    Dataset out;
    out.X = (d.X.rowwise() - x_center.transpose()) / x_scale;
    out.y = (d.y.array() - y_center).matrix() / y_scale;
    return out;
  }

  Score apply(const Score& s) const { return s.kind == ScoreKind::huber ? Score::huber(s.k / y_scale) : s; }

  NaturalParams restore(const NaturalParams& t) const {
    NaturalParams o;
    o.beta = t.beta * (y_scale / x_scale);
    o.mu = y_center + y_scale * t.mu - x_center.dot(o.beta);
    o.sigma_x = t.sigma_x * (x_scale * x_scale);
    o.mu_x = x_center + x_scale * t.mu_x;
    return o;
  }

  EnvelopeParams restore(const EnvelopeParams& z) const {
    EnvelopeParams o = z;
    o.eta = z.eta * (y_scale / x_scale);
    o.mu = y_center + y_scale * z.mu - x_center.dot(build_basis(z.A, z.perm).gamma * o.eta);
    o.omega = z.omega * (x_scale * x_scale);
    o.omega0 = z.omega0 * (x_scale * x_scale);
    o.mu_x = x_center + x_scale * z.mu_x;
    return o;
  }
};

inline FitResult fit_envelope(const Dataset& data, Index u, const Score& score, const FitOptions& opts) {
  data.validate();
  const Index p = data.p();
  if (p < 1) throw InputError("fit: need at least one predictor");
  if (u < 1 || u > p) throw InputError("fit: u must lie in 1..p");

  const Normalization nz = opts.normalize ? Normalization::from_data(data) : Normalization::identity(p);
  const Dataset nd = nz.apply(data);
  const Score ns = nz.apply(score);

  FitResult fr;
  fr.u = u;
  fr.k = score.k;
  fr.score = score.kind;
  const GeeSolution gee = gee_solution(nd, ns);
  fr.weight = weight_matrix(nd, gee.theta_tilde, ns, opts.ridge_eps);

  const PlsInit init = pls_initializer(nd, u);
  fr.pls_fallback = init.fallback;

  // Plug-in start: projections of the unconstrained solution onto the
  // initial span.
  CanonicalEnvelope c0;
  c0.basis = {init.basis, orthonormal_complement(init.basis)};
  c0.mu = gee.theta_tilde.mu;
  c0.eta = init.basis.transpose() * gee.theta_tilde.beta;
  c0.omega = symmetrize(init.basis.transpose() * gee.theta_tilde.sigma_x * init.basis);
  c0.omega0 = symmetrize(c0.basis.gamma0.transpose() * gee.theta_tilde.sigma_x * c0.basis.gamma0);
  c0.mu_x = gee.theta_tilde.mu_x;
  const EnvelopeParams z0 = to_chart(c0, init.perm);

  const MomentEvaluator eval(nd, ns);
  const Matrix& delta = fr.weight.delta;
  auto objective = [&](const Vector& v) {
    const EnvelopeParams z = unpack_free(v, p, u, init.perm);
    const Vector g = eval(env_map_unchecked(z));
    return quadratic_form(g, delta);
  };

  const Vector x0 = pack_free(z0);
  NelderMeadOptions nm = opts.nm;
  if (nm.step.size() != x0.size()) nm.step = chart_steps(p, u, opts);
  const NelderMeadResult res = nelder_mead(objective, x0, nm);

  fr.initial_objective = objective(x0);
  fr.optimizer = {res.iterations, res.evaluations, res.restarts_used, res.converged, 0, 0.0};
  Vector x_hat = res.x;
  double f_hat = res.f;
  if (opts.refine) {
    Eigen::LLT<Matrix> llt(delta);
    if (llt.info() == Eigen::Success) {
      const Matrix lt = llt.matrixU();  // Delta = L L', residual L' g
      auto resid = [&](const Vector& v) -> Vector {
        const Vector g = eval(env_map_unchecked(unpack_free(v, p, u, init.perm)));
        return lt * g;
      };
      const LevenbergMarquardtResult lm = levenberg_marquardt(resid, x_hat, opts.lm);
      const double f_lm = objective(lm.x);
      if (f_lm < f_hat) {
        fr.optimizer.refine_gain = f_hat - f_lm;
        x_hat = lm.x;
        f_hat = f_lm;
      }
      fr.optimizer.refine_iterations = lm.iterations;
    }
  }
  fr.objective = std::max(0.0, f_hat);
  fr.zeta_hat = nz.restore(unpack_free(x_hat, p, u, init.perm));
  fr.canonical = canonicalize(fr.zeta_hat);
  fr.theta_hat = env_map_unchecked(fr.zeta_hat);
  fr.theta_tilde = nz.restore(gee.theta_tilde);

  if (opts.compute_avar) {
    const LinearFit raw = score_fit(data, score);
    fr.avar = projected_avar(jacobian_psi1(fr.canonical), sandwich_avar(data, raw, score));
  }
  return fr;
}

}  // namespace detail

inline double resolve_k(const Dataset& data, const FitOptions& opts) {
  if (opts.k) {
    if (!(*opts.k > 0.0)) throw InputError("k must be positive");
    return *opts.k;
  }
  return select_k(data).k;
}

/// Enveloped Huber regression with envelope dimension u.
inline FitResult fit_ehr(const Dataset& data, Index u, const FitOptions& opts = {}) {
  return detail::fit_envelope(data, u, Score::huber(resolve_k(data, opts)), opts);
}

/// Least-squares envelope fit: the same GMM machinery with identity score.
/// A moment-based surrogate for the normal-likelihood envelope estimator.
inline FitResult fit_env_ls(const Dataset& data, Index u, const FitOptions& opts = {}) {
  return detail::fit_envelope(data, u, Score::identity(), opts);
}

}  // namespace ehr
