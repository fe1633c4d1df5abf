#pragma once

// Small generators shared by the unit tests.

#include "ehr/random.hpp"
#include "ehr/robust.hpp"

namespace ehr::testing {

inline Matrix random_matrix(Index r, Index c, RandomStream& rs) {
  Matrix m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = rs.normal();
  return m;
}

inline Vector random_vector(Index n, RandomStream& rs) { return random_matrix(n, 1, rs).col(0); }

inline Matrix random_symmetric(Index k, RandomStream& rs) {
  const Matrix g = random_matrix(k, k, rs);
  return 0.5 * (g + g.transpose());
}

inline Matrix random_spd(Index k, RandomStream& rs, double floor = 0.5) {
  const Matrix g = random_matrix(k, k, rs);
  return symmetrize(g * g.transpose() / static_cast<double>(k) + floor * Matrix::Identity(k, k));
}

/// y = mu + X beta + noise * e with standard normal X and e.
inline Dataset linear_data(Index n, Index p, double mu, const Vector& beta, double noise, RandomStream& rs) {
  Dataset d;
  d.X = random_matrix(n, p, rs);
  d.y = (d.X * beta).array() + mu;
  d.y += noise * random_vector(n, rs);
  return d;
}

}  // namespace ehr::testing
