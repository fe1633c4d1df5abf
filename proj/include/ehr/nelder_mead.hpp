#pragma once

// Derivative-free simplex minimizer (Nelder and Mead, 1965).

#include "ehr/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ehr {

struct NelderMeadOptions {
  Vector step;              // per-coordinate initial simplex step; empty -> default_step
  double default_step = 0.1;
  // stop once max f - min f <= ftol and every vertex is within xtol of the best;
  // with stop_on_either, one of the two tests is enough
  double ftol = 1e-10;
  double xtol = 1e-8;
  bool stop_on_either = false;
  long max_iter = -1;       // negative -> 2000 * d
  int restarts = 2;         // re-seed the simplex at the incumbent this many times
  double reflection = 1.0;
  double expansion = 2.0;
  double contraction = 0.5;
  double shrink = 0.5;
};

struct NelderMeadResult {
  Vector x;
  double f = std::numeric_limits<double>::infinity();
  long iterations = 0;
  long evaluations = 0;
  int restarts_used = 0;
  bool converged = false;
};

namespace detail {

template <class F>
double safe_eval(F& f, const Vector& x, long& evals) {
  ++evals;
  const double v = f(x);
  return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

/// True when every vertex lies within tol of the best one (max-norm).
inline bool within_diameter(const Matrix& simplex, Index best, double tol) {
  const Index d = simplex.rows();
  for (Index j = 0; j < simplex.cols(); ++j) {
    if (j == best) continue;
    for (Index i = 0; i < d; ++i)
      if (std::abs(simplex(i, j) - simplex(i, best)) > tol) return false;
  }
  return true;
}

}  // namespace detail

/// Minimizes f from x0. Non-finite function values are treated as +inf.
/// With max_iter == 0 the start point is returned unchanged.
template <class F>
NelderMeadResult nelder_mead(F&& f, const Vector& x0, const NelderMeadOptions& opts = {}) {
  const Index d = x0.size();
  if (d < 1) throw InputError("nelder_mead: empty start point");
  Vector step = opts.step.size() == d ? opts.step : Vector::Constant(d, opts.default_step);
  const long max_iter = opts.max_iter < 0 ? 2000L * static_cast<long>(d) : opts.max_iter;

  NelderMeadResult res;
  res.x = x0;
  res.f = detail::safe_eval(f, x0, res.evaluations);
  if (!std::isfinite(res.f)) throw InputError("nelder_mead: objective is not finite at the start point");
  if (max_iter == 0) {
    res.converged = false;
    return res;
  }

  Matrix simplex(d, d + 1);
  Vector fv(d + 1);
  Vector xr(d), xe(d), xc(d), centroid(d), colsum(d);

  // best, worst and second-worst vertex; ties resolved by lowest index
  auto rank_vertices = [&](Index& best, Index& worst, Index& second) {
    best = 0;
    worst = 0;
    for (Index j = 1; j <= d; ++j) {
      if (fv(j) < fv(best)) best = j;
      if (fv(j) >= fv(worst)) worst = j;
    }
    second = worst == 0 ? 1 : 0;
    for (Index j = 0; j <= d; ++j)
      if (j != worst && fv(j) >= fv(second)) second = j;
  };

  long iter = 0;
  for (int round = 0; round <= opts.restarts; ++round) {
    const double f_round_start = res.f;
    simplex.col(0) = res.x;
    fv(0) = res.f;
    for (Index i = 0; i < d; ++i) {
      simplex.col(i + 1) = res.x;
      simplex(i, i + 1) += step(i);
      fv(i + 1) = detail::safe_eval(f, simplex.col(i + 1), res.evaluations);
    }
    colsum = simplex.rowwise().sum();

    while (true) {
      Index best, worst, second;
      rank_vertices(best, worst, second);

      const double spread = fv(worst) - fv(best);
      const bool flat = std::isfinite(spread) && spread <= opts.ftol;
      const bool small = !std::isinf(opts.xtol) && detail::within_diameter(simplex, best, opts.xtol);
      if (opts.stop_on_either ? (flat || small) : (flat && (small || std::isinf(opts.xtol)))) {
        res.converged = true;
        break;
      }
      if (iter >= max_iter) {
        res.converged = false;
        break;
      }
      ++iter;

      auto replace_worst = [&](const Vector& x, double fx) {
        colsum += x - simplex.col(worst);
        simplex.col(worst) = x;
        fv(worst) = fx;
      };

      centroid = (colsum - simplex.col(worst)) / static_cast<double>(d);
      xr = centroid + opts.reflection * (centroid - simplex.col(worst));
      const double fr = detail::safe_eval(f, xr, res.evaluations);

      if (fr < fv(best)) {
        xe = centroid + opts.expansion * (xr - centroid);
        const double fe = detail::safe_eval(f, xe, res.evaluations);
        if (fe < fr)
          replace_worst(xe, fe);
        else
          replace_worst(xr, fr);
        continue;
      }
      if (fr < fv(second)) {
        replace_worst(xr, fr);
        continue;
      }
      // contraction: outside if the reflected point beats the worst vertex
      const bool outside = fr < fv(worst);
      if (outside)
        xc = centroid + opts.contraction * (xr - centroid);
      else
        xc = centroid + opts.contraction * (simplex.col(worst) - centroid);
      const double fc = detail::safe_eval(f, xc, res.evaluations);
      if ((outside && fc <= fr) || (!outside && fc < fv(worst))) {
        replace_worst(xc, fc);
        continue;
      }
      for (Index j = 0; j <= d; ++j) {
        if (j == best) continue;
        simplex.col(j) = simplex.col(best) + opts.shrink * (simplex.col(j) - simplex.col(best));
        fv(j) = detail::safe_eval(f, simplex.col(j), res.evaluations);
      }
      colsum = simplex.rowwise().sum();
    }

    Index b = 0;
    fv.minCoeff(&b);
    if (fv(b) <= res.f) {
      res.x = simplex.col(b);
      res.f = fv(b);
    }
    res.iterations = iter;
    if (round > 0) res.restarts_used = round;
    if (iter >= max_iter) break;
    // a restart that brings no improvement ends the search
    if (round > 0 && f_round_start - res.f <= opts.ftol) break;
  }
  return res;
}

}  // namespace ehr
