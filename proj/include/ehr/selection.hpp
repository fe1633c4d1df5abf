#pragma once

// K-fold cross-validation for the envelope dimension and pairs-bootstrap
// standard deviations. Tasks may run on several threads; each task owns a
// seed-derived stream and results are reduced in index order, so reports do
// not depend on the thread count.

#include "ehr/gmm.hpp"
#include "ehr/random.hpp"

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace ehr {

/// Runs fn(0), ..., fn(count - 1) on up to `threads` workers. fn must write
/// only to its own slot of any shared output. The first exception thrown by
/// a task is rethrown after all workers have joined.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

enum class Estimator { ehr, env, hr, ls };

inline std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::ehr: return "ehr";
    case Estimator::env: return "env";
    case Estimator::hr: return "hr";
    case Estimator::ls: return "ls";
  }
  return "unknown";
}

inline Estimator parse_estimator(std::string_view s) {
  for (Estimator e : {Estimator::ehr, Estimator::env, Estimator::hr, Estimator::ls})
    if (to_string(e) == s) return e;
  throw InputError("unknown estimator '" + std::string(s) + "'");
}

inline bool is_envelope(Estimator e) { return e == Estimator::ehr || e == Estimator::env; }

/// Intercept and slope from any of the four estimators; the full envelope
/// fit is kept when there is one.
struct EstimatorFit {
  double mu = 0.0;
  Vector beta;
  double k = 0.0;
  std::optional<FitResult> envelope;
};

/// Fits `est` with envelope dimension u (ignored by hr and ls). The Huber
/// threshold is taken from opts.k when set, otherwise from the data.
inline EstimatorFit fit_estimator(Estimator est, const Dataset& data, Index u, const FitOptions& opts = {}) {
  EstimatorFit out;
  switch (est) {
    case Estimator::ehr:
    case Estimator::env: {
      FitResult fr = est == Estimator::ehr ? fit_ehr(data, u, opts) : fit_env_ls(data, u, opts);
      out.mu = fr.theta_hat.mu;
      out.beta = fr.theta_hat.beta;
      out.k = fr.k;
      out.envelope = std::move(fr);
      break;
    }
    case Estimator::hr: {
      const double k = resolve_k(data, opts);
      const LinearFit f = huber_fit(data, HuberSpec{k, false});
      out.mu = f.mu;
      out.beta = f.beta;
      out.k = k;
      break;
    }
    case Estimator::ls: {
      const LinearFit f = ols_fit(data);
      out.mu = f.mu;
      out.beta = f.beta;
      out.k = std::numeric_limits<double>::infinity();
      break;
    }
  }
  return out;
}

// Cross-validation -----------------------------------------------------------

struct CvOptions {
  int folds = 5;
  std::uint64_t seed = 1;
  Index u_min = 1;
  Index u_max = 6;  // clipped to p
  int threads = 1;
  FitOptions fit;   // fit.k is ignored; k is re-selected per training fold
};

struct CvReport {
  std::map<Index, double> cv_values;  // valid u only
  std::vector<Index> invalid_u;       // some fold fit failed
  std::map<Index, std::string> failures;
  Index u_hat = 0;
  int folds = 0;
  std::uint64_t fold_seed = 0;
  double k_full = 0.0;  // loss threshold (+inf: squared loss)
  Estimator estimator = Estimator::ehr;
  std::vector<int> fold_of;  // fold label per observation
};

/// Seeded shuffle, then round-robin deal: fold sizes differ by at most one.
inline std::vector<int> assign_folds(Index n, int folds, std::uint64_t seed) {
  if (folds < 2) throw InputError("cross-validation needs at least 2 folds");
  RandomStream rs(seed, 0);
  const auto order = rs.permutation(static_cast<std::size_t>(n));
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) fold[order[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
  return fold;
}

/// CV over a given partition. Loss: Huber at k_full for ehr/hr, squared
/// error (halved, as the Huber loss with k = inf) for env/ls.
inline CvReport cv_with_folds(const Dataset& data, Estimator est, const std::vector<int>& fold, int folds, const CvOptions& opts) {
  data.validate();
  const Index n = data.n(), p = data.p();
  if (static_cast<Index>(fold.size()) != n) throw InputError("fold labels do not match the data");
  if (n < 2 * folds) throw InputError("cross-validation needs n >= 2K");
  const Index u_lo = std::max<Index>(1, opts.u_min);
  const Index u_hi = std::min<Index>(p, opts.u_max);
  if (u_lo > u_hi) throw InputError("empty search range for u");

  CvReport rep;
  rep.folds = folds;
  rep.fold_seed = opts.seed;
  rep.estimator = est;
  rep.fold_of = fold;
  const bool huber_loss_cv = est == Estimator::ehr || est == Estimator::hr;
  rep.k_full = huber_loss_cv ? select_k(data).k : std::numeric_limits<double>::infinity();
  const Score loss = huber_loss_cv ? Score::huber(rep.k_full) : Score::identity();

  std::vector<std::vector<Index>> train(static_cast<std::size_t>(folds)), test(static_cast<std::size_t>(folds));
  for (Index i = 0; i < n; ++i)
    for (int j = 0; j < folds; ++j) (fold[static_cast<std::size_t>(i)] == j ? test : train)[static_cast<std::size_t>(j)].push_back(i);

  const Index n_u = u_hi - u_lo + 1;
  const std::size_t tasks = static_cast<std::size_t>(n_u) * static_cast<std::size_t>(folds);
  std::vector<double> fold_loss(tasks, 0.0);
  std::vector<std::string> fold_error(tasks);
  FitOptions fit_opts = opts.fit;
  fit_opts.k.reset();
  fit_opts.compute_avar = false;

  parallel_for(tasks, opts.threads, [&](std::size_t t) {
    const Index u = u_lo + static_cast<Index>(t / static_cast<std::size_t>(folds));
    const std::size_t j = t % static_cast<std::size_t>(folds);
    try {
      const Dataset tr = data.rows(train[j]);
      const EstimatorFit f = fit_estimator(est, tr, u, fit_opts);
      double s = 0.0;
      for (Index i : test[j]) s += loss.loss(data.y(i) - f.mu - data.X.row(i).dot(f.beta));
      fold_loss[t] = s;
    } catch (const std::exception& e) {
      fold_error[t] = e.what();
    }
  });

  double best = std::numeric_limits<double>::infinity();
  for (Index a = 0; a < n_u; ++a) {
    const Index u = u_lo + a;
    double total = 0.0;
    bool ok = true;
    for (int j = 0; j < folds; ++j) {
      const std::size_t t = static_cast<std::size_t>(a) * static_cast<std::size_t>(folds) + static_cast<std::size_t>(j);
      if (!fold_error[t].empty()) {
        ok = false;
        rep.failures.emplace(u, fold_error[t]);
        break;
      }
      total += fold_loss[t];
    }
    if (!ok || !std::isfinite(total)) {
      rep.invalid_u.push_back(u);
      continue;
    }
    rep.cv_values[u] = total / static_cast<double>(n);
    if (rep.cv_values[u] < best) {
      best = rep.cv_values[u];
      rep.u_hat = u;
    }
  }
  if (rep.u_hat == 0) throw NumericalError("cross-validation: every candidate u failed");
  return rep;
}

inline CvReport cv_select_u(const Dataset& data, Estimator est, const CvOptions& opts = {}) {
  return cv_with_folds(data, est, assign_folds(data.n(), opts.folds, opts.seed), opts.folds, opts);
}

// Bootstrap -----------------------------------------------------------------

struct BootstrapOptions {
  int B = 200;
  std::uint64_t seed = 1;
  int threads = 1;
  FitOptions fit;  // fit.k is ignored; k is re-selected per resample
};

struct BootstrapReport {
  int B = 0;
  Estimator estimator = Estimator::ehr;
  Index u = 0;
  std::uint64_t seed = 0;
  Matrix estimates;            // successful resamples x p, in resample order
  std::vector<int> failed;     // resample indices whose fit failed
  Vector sd;                   // divisor (rows - 1)
  bool flagged = false;        // more than 10% of resamples failed
};

/// Row indices of resample b: n draws with replacement.
inline std::vector<Index> bootstrap_indices(Index n, std::uint64_t seed, int b) {
  RandomStream rs(seed, static_cast<std::uint64_t>(b) + 1);
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (auto& i : idx) i = static_cast<Index>(rs.below(static_cast<std::uint64_t>(n)));
  return idx;
}

inline BootstrapReport bootstrap_se(const Dataset& data, Estimator est, Index u, const BootstrapOptions& opts) {
  data.validate();
  if (opts.B < 2) throw InputError("bootstrap needs B >= 2");
  const Index p = data.p();
  std::vector<Vector> est_b(static_cast<std::size_t>(opts.B));
  std::vector<char> ok(static_cast<std::size_t>(opts.B), 0);
  FitOptions fit_opts = opts.fit;
  fit_opts.k.reset();
  fit_opts.compute_avar = false;

  parallel_for(static_cast<std::size_t>(opts.B), opts.threads, [&](std::size_t b) {
    try {
      const Dataset rs = data.rows(bootstrap_indices(data.n(), opts.seed, static_cast<int>(b)));
      const EstimatorFit f = fit_estimator(est, rs, u, fit_opts);
      if (f.beta.allFinite()) {
        est_b[b] = f.beta;
        ok[b] = 1;
      }
    } catch (const std::exception&) {
    }
  });

  BootstrapReport rep;
  rep.B = opts.B;
  rep.estimator = est;
  rep.u = u;
  rep.seed = opts.seed;
  Index good = 0;
  for (int b = 0; b < opts.B; ++b) {
    if (ok[static_cast<std::size_t>(b)])
      ++good;
    else
      rep.failed.push_back(b);
  }
  rep.flagged = static_cast<double>(rep.failed.size()) > 0.1 * opts.B;
  if (good < 2) throw NumericalError("bootstrap: fewer than two resample fits succeeded");
  rep.estimates.resize(good, p);
  Index r = 0;
  for (int b = 0; b < opts.B; ++b)
    if (ok[static_cast<std::size_t>(b)]) rep.estimates.row(r++) = est_b[static_cast<std::size_t>(b)].transpose();
  const Matrix c = rep.estimates.rowwise() - rep.estimates.colwise().mean();
  rep.sd = (c.colwise().squaredNorm() / static_cast<double>(good - 1)).cwiseSqrt().transpose();
  return rep;
}

/// Elementwise SD(reference) / SD(report).
inline Vector sd_ratio(const BootstrapReport& reference, const BootstrapReport& report) {
  if (reference.sd.size() != report.sd.size()) throw InputError("sd_ratio: dimension mismatch");
  return reference.sd.cwiseQuotient(report.sd);
}

}  // namespace ehr
