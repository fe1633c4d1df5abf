#pragma once

// Dense kernels for envelope algebra: half-vectorization, the vec/vech
// contraction and expansion matrices, symmetric eigen-solves, pseudoinverse,
// orthonormal bases and subspace distance.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace ehr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Raised for malformed input (dimension mismatches, non-finite data, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical procedure cannot produce a meaningful result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Index vech_size(Index p) { return p * (p + 1) / 2; }

/// Inverse of vech_size; throws if len is not triangular.
inline Index vech_order(Index len) {
  const auto p = static_cast<Index>(std::llround((std::sqrt(8.0 * static_cast<double>(len) + 1.0) - 1.0) / 2.0));
  if (vech_size(p) != len) throw InputError("vech length " + std::to_string(len) + " is not triangular");
  return p;
}

/// Lower triangle stacked column by column (row index >= column index).
inline Vector vech(const Matrix& m) {
  if (m.rows() != m.cols()) throw InputError("vech: matrix is not square");
  const Index p = m.rows();
  Vector out(vech_size(p));
  Index k = 0;
  for (Index j = 0; j < p; ++j)
    for (Index i = j; i < p; ++i) out(k++) = m(i, j);
  return out;
}

/// Expands a half-vectorization back into the symmetric matrix.
inline Matrix unvech(const Vector& v) {
  const Index p = vech_order(v.size());
  Matrix m(p, p);
  Index k = 0;
  for (Index j = 0; j < p; ++j)
    for (Index i = j; i < p; ++i) {
      m(i, j) = v(k);
      m(j, i) = v(k);
      ++k;
    }
  return m;
}

inline Vector vec(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

inline Matrix unvec(const Vector& v, Index rows, Index cols) {
  if (v.size() != rows * cols) throw InputError("unvec: size mismatch");
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

struct ContractionExpansion {
  Matrix contraction;  // vech(M) = C vec(M)
  Matrix expansion;    // vec(M) = E vech(M)
};

/// The expansion matrix E_p (duplication matrix) and the contraction
/// C_p = (E_p' E_p)^{-1} E_p', which averages the two copies of each
/// off-diagonal entry. C_p is the Moore-Penrose inverse of E_p, so
/// d vech(S)/d vec(S) for symmetric perturbations is exactly C_p.
inline ContractionExpansion contraction_expansion(Index p) {
  if (p < 1) throw InputError("contraction_expansion: p must be positive");
  const Index q = vech_size(p);
  ContractionExpansion ce{Matrix::Zero(q, p * p), Matrix::Zero(p * p, q)};
  Index k = 0;
  for (Index j = 0; j < p; ++j)
    for (Index i = j; i < p; ++i) {
      ce.expansion(i + j * p, k) = 1.0;
      ce.expansion(j + i * p, k) = 1.0;
      if (i == j) {
        ce.contraction(k, i + j * p) = 1.0;
      } else {
        ce.contraction(k, i + j * p) = 0.5;
        ce.contraction(k, j + i * p) = 0.5;
      }
      ++k;
    }
  return ce;
}

struct SymEigen {
  Vector values;   // ascending
  Matrix vectors;  // columns
};

inline SymEigen sym_eigen(const Matrix& m) {
  if (m.rows() != m.cols()) throw InputError("sym_eigen: matrix is not square");
  if (m.size() == 0) return {Vector(0), Matrix(0, 0)};
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  if (es.info() != Eigen::Success) throw NumericalError("symmetric eigendecomposition failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

inline double min_eigenvalue(const Matrix& m) { return m.size() == 0 ? 0.0 : sym_eigen(m).values(0); }

/// Moore-Penrose inverse of a symmetric positive semidefinite matrix.
/// Eigenvalues at or below tol * lambda_max are treated as zero.
inline Matrix pinv(const Matrix& m, double tol = 1e-10) {
  if (m.rows() != m.cols()) throw InputError("pinv: matrix is not square");
  if (m.size() == 0) return m;
  const SymEigen es = sym_eigen(m);
  const double lmax = std::max(std::abs(es.values(0)), std::abs(es.values(es.values.size() - 1)));
  if (lmax == 0.0) return Matrix::Zero(m.rows(), m.cols());
  if (es.values(0) < -tol * lmax) throw InputError("pinv: matrix is indefinite");
  Vector inv(es.values.size());
  for (Index i = 0; i < inv.size(); ++i) inv(i) = es.values(i) > tol * lmax ? 1.0 / es.values(i) : 0.0;
  return symmetrize(es.vectors * inv.asDiagonal() * es.vectors.transpose());
}

inline Matrix inverse_spd(const Matrix& m) {
  Eigen::LLT<Matrix> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) throw NumericalError("matrix is not positive definite");
  return symmetrize(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

inline bool is_spd(const Matrix& m) {
  if (m.rows() != m.cols() || !m.allFinite()) return false;
  if (m.size() == 0) return true;
  Eigen::LLT<Matrix> llt(symmetrize(m));
  return llt.info() == Eigen::Success;
}

/// Thin QR with the sign convention diag(R) > 0, so the factorization is
/// unique for full-column-rank input.
struct ThinQr {
  Matrix q;
  Matrix r;
};

inline ThinQr thin_qr(const Matrix& a, double rank_tol = 1e-12) {
  const Index rows = a.rows(), cols = a.cols();
  if (cols > rows) throw InputError("thin_qr: more columns than rows");
  if (cols == 0) return {Matrix(rows, 0), Matrix(0, 0)};
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
  Matrix r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  for (Index j = 0; j < cols; ++j) {
    if (std::abs(r(j, j)) <= rank_tol * scale) throw NumericalError("thin_qr: matrix is rank deficient");
    if (r(j, j) < 0) {
      r.row(j) *= -1.0;
      q.col(j) *= -1.0;
    }
  }
  return {q, r};
}

/// Semi-orthogonal basis of span(gamma)^perp, taken from the trailing
/// columns of the full Householder Q of gamma (deterministic).
inline Matrix orthonormal_complement(const Matrix& gamma) {
  const Index p = gamma.rows(), u = gamma.cols();
  if (u > p) throw InputError("orthonormal_complement: more columns than rows");
  if (u == p) return Matrix(p, 0);
  if (u == 0) return Matrix::Identity(p, p);
  Eigen::HouseholderQR<Matrix> qr(gamma);
  Matrix full = qr.householderQ();
  return full.rightCols(p - u);
}

/// Orthogonal projection onto span(basis); basis must have full column rank.
inline Matrix projection(const Matrix& basis) {
  if (basis.cols() == 0) return Matrix::Zero(basis.rows(), basis.rows());
  const Matrix q = thin_qr(basis, 1e-10).q;
  return q * q.transpose();
}

inline Index numerical_rank(const Matrix& a, double rel_tol = 1e-10) {
  if (a.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(a);
  const Vector s = svd.singularValues();
  if (s(0) == 0.0) return 0;
  Index r = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) ++r;
  return r;
}

/// Operator norm of P_A - P_B. Zero iff the spans coincide; one when some
/// direction of one span is orthogonal to the other.
inline double subspace_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InputError("subspace_distance: shape mismatch");
  if (numerical_rank(a) < a.cols() || numerical_rank(b) < b.cols())
    throw InputError("subspace_distance: basis is rank deficient");
  const Matrix d = projection(a) - projection(b);
  const Vector ev = sym_eigen(d).values;
  return std::min(1.0, std::max(std::abs(ev(0)), std::abs(ev(ev.size() - 1))));
}

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

}  // namespace ehr
