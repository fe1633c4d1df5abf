#pragma once

// Envelope coordinates. The basis of the envelope is written in the
// unconstrained chart Gamma = P [I; A], Gamma0 = P [-A'; I] (P a row
// permutation), which removes the Grassmann constraint. From a chart point we
// map to the natural parameters theta, canonicalize to semi-orthogonal
// bases, and evaluate the Jacobian of the envelope map.

#include "ehr/linalg.hpp"
#include "ehr/robust.hpp"

#include <numeric>
#include <utility>
#include <vector>

namespace ehr {

/// Row pivoting of the chart: chart row i is row perm[i] of Gamma.
using Permutation = std::vector<Index>;

inline Permutation identity_permutation(Index p) {
  Permutation perm(static_cast<std::size_t>(p));
  std::iota(perm.begin(), perm.end(), Index{0});
  return perm;
}

inline void check_permutation(const Permutation& perm, Index p) {
  if (static_cast<Index>(perm.size()) != p) throw InputError("permutation has wrong length");
  std::vector<bool> seen(perm.size(), false);
  for (Index v : perm) {
    if (v < 0 || v >= p || seen[static_cast<std::size_t>(v)]) throw InputError("invalid permutation");
    seen[static_cast<std::size_t>(v)] = true;
  }
}

/// zeta in the A-chart: (mu, eta, A, Omega, Omega0, mu_x) plus the pivoting.
struct EnvelopeParams {
  double mu = 0.0;
  Vector eta;
  Matrix A;  // (p - u) x u
  Matrix omega;
  Matrix omega0;
  Vector mu_x;
  Permutation perm;

  Index u() const { return eta.size(); }
  Index p() const { return mu_x.size(); }

  static Index free_dim(Index p, Index u) {
    return 1 + u + (p - u) * u + vech_size(u) + vech_size(p - u) + p;
  }
};

struct EnvelopeBasis {
  Matrix gamma;   // p x u, semi-orthogonal
  Matrix gamma0;  // p x (p - u), semi-orthogonal, gamma' gamma0 = 0
};

/// Semi-orthogonal representation of an envelope point.
struct CanonicalEnvelope {
  EnvelopeBasis basis;
  Vector eta;
  Matrix omega;
  Matrix omega0;
  double mu = 0.0;
  Vector mu_x;
};

struct RawBasis {
  Matrix gamma;
  Matrix gamma0;
};

/// Gamma_raw = P [I; A] and Gamma0_raw = P [-A'; I]. Not orthonormal, but
/// Gamma_raw' Gamma0_raw = 0 exactly by the block structure.
inline RawBasis build_basis(const Matrix& a, const Permutation& perm) {
  const Index u = a.cols();
  const Index q = a.rows();
  const Index p = u + q;
  check_permutation(perm, p);
  if (!a.allFinite()) throw InputError("build_basis: non-finite chart coordinates");
  RawBasis b{Matrix::Zero(p, u), Matrix::Zero(p, q)};
  for (Index i = 0; i < u; ++i) {
    b.gamma(perm[static_cast<std::size_t>(i)], i) = 1.0;
    b.gamma0.row(perm[static_cast<std::size_t>(i)]) = -a.col(i).transpose();
  }
  for (Index i = 0; i < q; ++i) {
    b.gamma.row(perm[static_cast<std::size_t>(u + i)]) = a.row(i);
    b.gamma0(perm[static_cast<std::size_t>(u + i)], i) = 1.0;
  }
  return b;
}

namespace detail {

inline NaturalParams env_map_unchecked(const EnvelopeParams& z) {
  const RawBasis b = build_basis(z.A, z.perm);
  NaturalParams t;
  t.mu = z.mu;
  t.beta = b.gamma * z.eta;
  Matrix s = b.gamma * z.omega * b.gamma.transpose();
  if (b.gamma0.cols() > 0) s += b.gamma0 * z.omega0 * b.gamma0.transpose();
  t.sigma_x = symmetrize(s);
  t.mu_x = z.mu_x;
  return t;
}

inline void check_envelope_shapes(const EnvelopeParams& z) {
  const Index p = z.p(), u = z.u();
  if (u < 1 || u > p) throw InputError("envelope dimension u must lie in 1..p");
  if (z.A.rows() != p - u || z.A.cols() != u) throw InputError("chart matrix A has wrong shape");
  if (z.omega.rows() != u || z.omega.cols() != u) throw InputError("Omega has wrong shape");
  if (z.omega0.rows() != p - u || z.omega0.cols() != p - u) throw InputError("Omega0 has wrong shape");
}

}  // namespace detail

/// env(zeta) = (mu, Gamma eta, vech(Gamma Omega Gamma' + Gamma0 Omega0 Gamma0'), mu_x).
inline NaturalParams env_map(const EnvelopeParams& z) {
  detail::check_envelope_shapes(z);
  if (!is_spd(z.omega)) throw InputError("env_map: Omega is not positive definite");
  if (!is_spd(z.omega0)) throw InputError("env_map: Omega0 is not positive definite");
  return detail::env_map_unchecked(z);
}

/// Orthonormalizes the chart basis (Gamma_raw = Gamma R) and absorbs the
/// triangular factors into eta, Omega and Omega0, preserving env(zeta).
inline CanonicalEnvelope canonicalize(const EnvelopeParams& z) {
  detail::check_envelope_shapes(z);
  const RawBasis raw = build_basis(z.A, z.perm);
  const ThinQr qr = thin_qr(raw.gamma, 1e-12);
  CanonicalEnvelope c;
  c.basis.gamma = qr.q;
  c.eta = qr.r * z.eta;
  c.omega = symmetrize(qr.r * z.omega * qr.r.transpose());
  if (raw.gamma0.cols() > 0) {
    const ThinQr qr0 = thin_qr(raw.gamma0, 1e-12);
    c.basis.gamma0 = qr0.q;
    c.omega0 = symmetrize(qr0.r * z.omega0 * qr0.r.transpose());
  } else {
    c.basis.gamma0 = Matrix(z.p(), 0);
    c.omega0 = Matrix(0, 0);
  }
  c.mu = z.mu;
  c.mu_x = z.mu_x;
  return c;
}

inline NaturalParams env_map(const CanonicalEnvelope& c) {
  NaturalParams t;
  t.mu = c.mu;
  t.beta = c.basis.gamma * c.eta;
  Matrix s = c.basis.gamma * c.omega * c.basis.gamma.transpose();
  if (c.basis.gamma0.cols() > 0) s += c.basis.gamma0 * c.omega0 * c.basis.gamma0.transpose();
  t.sigma_x = symmetrize(s);
  t.mu_x = c.mu_x;
  return t;
}

/// Greedy row pivoting of a p x u basis: column-pivoted QR of gamma' picks
/// the rows giving a well-conditioned leading u x u block.
inline Permutation pivot_rows(const Matrix& gamma) {
  const Index p = gamma.rows();
  if (gamma.cols() == 0) return identity_permutation(p);
  Eigen::ColPivHouseholderQR<Matrix> qr(gamma.transpose());
  const auto& ind = qr.colsPermutation().indices();
  Permutation perm(static_cast<std::size_t>(p));
  for (Index i = 0; i < p; ++i) perm[static_cast<std::size_t>(i)] = ind(i);
  return perm;
}

/// Expresses a semi-orthogonal envelope point in the A-chart for the given
/// pivoting. The leading pivoted u x u block of gamma must be invertible.
inline EnvelopeParams to_chart(const CanonicalEnvelope& c, const Permutation& perm) {
  const Matrix& g = c.basis.gamma;
  const Index p = g.rows(), u = g.cols();
  check_permutation(perm, p);
  Matrix gp(p, u);
  for (Index i = 0; i < p; ++i) gp.row(i) = g.row(perm[static_cast<std::size_t>(i)]);
  const Matrix g1 = gp.topRows(u);
  Eigen::FullPivLU<Matrix> lu(g1);
  if (!lu.isInvertible()) throw NumericalError("to_chart: leading block of the pivoted basis is singular");
  EnvelopeParams z;
  z.mu = c.mu;
  z.mu_x = c.mu_x;
  z.perm = perm;
  z.A = gp.bottomRows(p - u) * lu.inverse();
  z.eta = g1 * c.eta;
  z.omega = symmetrize(g1 * c.omega * g1.transpose());
  if (p > u) {
    const Matrix g0raw = build_basis(z.A, perm).gamma0;
    const Matrix r0 = c.basis.gamma0.transpose() * g0raw;  // g0raw = gamma0 r0
    const Matrix r0inv = r0.inverse();
    z.omega0 = symmetrize(r0inv * c.omega0 * r0inv.transpose());
  } else {
    z.omega0 = Matrix(0, 0);
  }
  return z;
}

/// Log-Cholesky coordinates of an SPD matrix: vech(L) with log on the diagonal.
inline Vector chol_log(const Matrix& m) {
  const Index k = m.rows();
  if (k == 0) return Vector(0);
  Eigen::LLT<Matrix> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) throw NumericalError("chol_log: matrix is not positive definite");
  Matrix l = llt.matrixL();
  for (Index i = 0; i < k; ++i) l(i, i) = std::log(l(i, i));
  Vector v(vech_size(k));
  Index t = 0;
  for (Index j = 0; j < k; ++j)
    for (Index i = j; i < k; ++i) v(t++) = l(i, j);
  return v;
}

inline Matrix chol_exp(const Eigen::Ref<const Vector>& v, Index k) {
  Matrix l = Matrix::Zero(k, k);
  Index t = 0;
  for (Index j = 0; j < k; ++j)
    for (Index i = j; i < k; ++i) l(i, j) = (i == j) ? std::exp(v(t++)) : v(t++);
  return l * l.transpose();
}

/// Packs zeta into the optimizer's free coordinates
/// (mu, eta, vec A, chol-log Omega, chol-log Omega0, mu_x).
inline Vector pack_free(const EnvelopeParams& z) {
  const Index p = z.p(), u = z.u();
  Vector v(EnvelopeParams::free_dim(p, u));
  Index o = 0;
  v(o++) = z.mu;
  v.segment(o, u) = z.eta;
  o += u;
  v.segment(o, (p - u) * u) = vec(z.A);
  o += (p - u) * u;
  v.segment(o, vech_size(u)) = chol_log(z.omega);
  o += vech_size(u);
  v.segment(o, vech_size(p - u)) = chol_log(z.omega0);
  o += vech_size(p - u);
  v.segment(o, p) = z.mu_x;
  return v;
}

inline EnvelopeParams unpack_free(const Vector& v, Index p, Index u, const Permutation& perm) {
  if (v.size() != EnvelopeParams::free_dim(p, u)) throw InputError("unpack_free: wrong length");
  EnvelopeParams z;
  Index o = 0;
  z.mu = v(o++);
  z.eta = v.segment(o, u);
  o += u;
  z.A = unvec(v.segment(o, (p - u) * u), p - u, u);
  o += (p - u) * u;
  z.omega = chol_exp(v.segment(o, vech_size(u)), u);
  o += vech_size(u);
  z.omega0 = chol_exp(v.segment(o, vech_size(p - u)), p - u);
  o += vech_size(p - u);
  z.mu_x = v.segment(o, p);
  z.perm = perm;
  return z;
}

/// Column count of the closed-form Jacobian: (mu, eta, vec Gamma, vech Omega,
/// vech Omega0, mu_x).
inline Index psi1_cols(Index p, Index u) { return 1 + u + p * u + vech_size(u) + vech_size(p - u) + p; }

/// Closed-form Jacobian of env at a semi-orthogonal point. Row blocks
/// (mu, beta, vech Sigma_x, mu_x); column blocks as psi1_cols.
inline Matrix jacobian_psi1(const EnvelopeBasis& basis, const Vector& eta, const Matrix& omega, const Matrix& omega0) {
  const Matrix& g = basis.gamma;
  const Matrix& g0 = basis.gamma0;
  const Index p = g.rows(), u = g.cols(), q = p - u;
  if (g0.rows() != p || g0.cols() != q) throw InputError("jacobian_psi1: Gamma0 has wrong shape");
  if (eta.size() != u || omega.rows() != u || omega.cols() != u || omega0.rows() != q || omega0.cols() != q)
    throw InputError("jacobian_psi1: parameter shapes do not match the basis");

  const ContractionExpansion cp = contraction_expansion(p);
  const ContractionExpansion cu = contraction_expansion(u);
  const Index vp = vech_size(p);
  Matrix psi = Matrix::Zero(NaturalParams::dim(p), psi1_cols(p, u));

  const Index c_eta = 1, c_gam = 1 + u, c_om = c_gam + p * u, c_om0 = c_om + vech_size(u), c_mux = c_om0 + vech_size(q);
  const Index r_beta = 1, r_sig = 1 + p, r_mux = 1 + p + vp;
  const Matrix ip = Matrix::Identity(p, p);

  psi(0, 0) = 1.0;
  psi.block(r_beta, c_eta, p, u) = g;
  psi.block(r_beta, c_gam, p, p * u) = kron(eta.transpose(), ip);

  Matrix m0 = Matrix::Zero(p, p);
  if (q > 0) m0 = g0 * omega0 * g0.transpose();
  psi.block(r_sig, c_gam, vp, p * u) = 2.0 * cp.contraction * (kron(g * omega, ip) - kron(g, m0));
  psi.block(r_sig, c_om, vp, vech_size(u)) = cp.contraction * kron(g, g) * cu.expansion;
  if (q > 0) {
    const ContractionExpansion cq = contraction_expansion(q);
    psi.block(r_sig, c_om0, vp, vech_size(q)) = cp.contraction * kron(g0, g0) * cq.expansion;
  }
  psi.block(r_mux, c_mux, p, p) = ip;
  return psi;
}

inline Matrix jacobian_psi1(const CanonicalEnvelope& c) { return jacobian_psi1(c.basis, c.eta, c.omega, c.omega0); }

}  // namespace ehr
