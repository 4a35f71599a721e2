#pragma once

#include <Eigen/Dense>

#include "kfrate/error.hpp"

namespace kfrate {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Finite-dimensional Gaussian N(mean, cov).
struct GaussianVector {
  Vector mean;
  Matrix cov;

  Index dim() const { return mean.size(); }

  // Throws InvalidInput unless dim(mean) == side(cov), cov is symmetric to
  // 1e-12 relative and min eig(cov) >= -1e-10 * max eig(cov).
  void check_invariants() const;
};

// observed = map * xi + bias + noise, noise ~ N(0, noise_cov) independent of xi.
struct LinearObservation {
  Matrix map;
  Matrix noise_cov;
  Vector bias;

  // Zero-bias observation.
  static LinearObservation of(Matrix map, Matrix noise_cov);

  void check_dims(Index state_dim) const;
};

// Posterior together with the two covariances that define the update, so
// callers can evaluate the increment size without recomputation.
struct Conditioned {
  GaussianVector posterior;
  Matrix cross_cov;       // Cov(xi, observed)
  Matrix innovation_cov;  // Cov(observed, observed)
};

// E[xi | observed] and the error covariance, with the innovation covariance
// inverted by Moore-Penrose pseudoinverse.
Conditioned condition_detailed(const GaussianVector& prior,
                               const LinearObservation& obs,
                               const Vector& observed_value);

GaussianVector condition(const GaussianVector& prior, const LinearObservation& obs,
                         const Vector& observed_value);

// Moore-Penrose pseudoinverse of a symmetric PSD matrix via symmetric
// eigendecomposition; eigenvalues below 1e-12 * max eigenvalue count as zero.
Matrix pseudoinverse(const Matrix& s);

// tr(cross * pinv(innovation) * cross'), the expected squared norm of the
// conditional-mean increment.
double increment_trace(const Matrix& cross_cov, const Matrix& innovation_cov);

// Symmetric square root of a PSD matrix. Negative eigenvalues above the
// -1e-10 relative floor are clipped to zero; below it InvalidInput.
Matrix psd_sqrt(const Matrix& s);

Matrix symmetrized(const Matrix& s);

bool is_symmetric(const Matrix& s, double rel_tol);

}  // namespace kfrate
