#pragma once

// Levenberg-Marquardt for min ||r(x)||^2 with a forward-difference Jacobian.
// Used to refine a simplex solution of the GMM objective written as a sum of
// squares, g' Delta g = ||L' g||^2 with Delta = L L'.

#include "ehr/linalg.hpp"

#include <cmath>
#include <limits>

namespace ehr {

struct LevenbergMarquardtOptions {
  int max_iter = 200;
  double rel_tol = 1e-14;   // stop when the relative decrease falls below this
  double fd_step = 1e-7;    // relative forward-difference step
  double lambda0 = 1e-3;
};

struct LevenbergMarquardtResult {
  Vector x;
  double f = std::numeric_limits<double>::infinity();
  int iterations = 0;
  long evaluations = 0;
};

/// Only strictly decreasing steps are accepted, so f(result) <= f(x0).
template <class R>
LevenbergMarquardtResult levenberg_marquardt(R&& resid, const Vector& x0, const LevenbergMarquardtOptions& opts = {}) {
  LevenbergMarquardtResult res;
  res.x = x0;
  Vector r = resid(x0);
  ++res.evaluations;
  res.f = r.squaredNorm();
  if (!std::isfinite(res.f)) throw InputError("levenberg_marquardt: residual is not finite at the start point");
  const Index d = x0.size();
  double lambda = opts.lambda0;
  Matrix jac(r.size(), d);
  for (int it = 0; it < opts.max_iter; ++it) {
    for (Index j = 0; j < d; ++j) {
      Vector xj = res.x;
      const double h = opts.fd_step * std::max(1.0, std::abs(xj(j)));
      xj(j) += h;
      jac.col(j) = (resid(xj) - r) / h;
      ++res.evaluations;
    }
    if (!jac.allFinite()) break;
    const Matrix jtj = jac.transpose() * jac;
    const Vector grad = jac.transpose() * r;
    bool accepted = false;
    for (int t = 0; t < 30 && !accepted; ++t) {
      Matrix a = jtj;
      a.diagonal().array() += lambda * (jtj.diagonal().array() + 1e-12);
      const Vector xn = res.x - a.ldlt().solve(grad);
      const Vector rn = resid(xn);
      ++res.evaluations;
      const double fn = rn.squaredNorm();
      if (std::isfinite(fn) && fn < res.f) {
        const double drop = res.f - fn;
        res.x = xn;
        r = rn;
        res.f = fn;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        ++res.iterations;
        if (drop <= opts.rel_tol * std::max(1.0, fn)) return res;
      } else {
        lambda *= 4.0;
      }
    }
    if (!accepted) break;
  }
  return res;
}

}  // namespace ehr
