#include "kfrate/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace kfrate {
namespace {

constexpr double kInputSymmetryTol = 1e-10;
constexpr double kPinvCutoff = 1e-12;
constexpr double kPsdFloor = 1e-10;

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw InvalidInput(std::string(what) + " has non-finite entries");
}

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw InvalidInput(std::string(what) + " has non-finite entries");
}

}  // namespace

bool is_symmetric(const Matrix& s, double rel_tol) {
  if (s.rows() != s.cols()) return false;
  if (s.size() == 0) return true;
  const double scale = s.cwiseAbs().maxCoeff();
  const double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
  return asym <= rel_tol * std::max(scale, std::numeric_limits<double>::min());
}

Matrix symmetrized(const Matrix& s) { return 0.5 * (s + s.transpose()); }

void GaussianVector::check_invariants() const {
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw InvalidInput("GaussianVector: mean has " + std::to_string(mean.size()) +
                       " entries but cov is " + shape(cov));
  require_finite(mean, "GaussianVector mean");
  require_finite(cov, "GaussianVector cov");
  if (!is_symmetric(cov, 1e-12)) throw InvalidInput("GaussianVector: cov not symmetric");
  if (cov.size() == 0) return;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(cov), Eigen::EigenvaluesOnly);
  const double hi = eig.eigenvalues().maxCoeff();
  const double lo = eig.eigenvalues().minCoeff();
  if (lo < -kPsdFloor * std::max(hi, 0.0))
    throw InvalidInput("GaussianVector: cov has eigenvalue " + std::to_string(lo));
}

LinearObservation LinearObservation::of(Matrix map, Matrix noise_cov) {
  LinearObservation obs;
  obs.bias = Vector::Zero(map.rows());
  obs.map = std::move(map);
  obs.noise_cov = std::move(noise_cov);
  return obs;
}

void LinearObservation::check_dims(Index state_dim) const {
  if (map.cols() != state_dim)
    throw InvalidInput("observation map is " + shape(map) + " but state dimension is " +
                       std::to_string(state_dim));
  if (noise_cov.rows() != map.rows() || noise_cov.cols() != map.rows())
    throw InvalidInput("observation noise_cov is " + shape(noise_cov) + " for map " + shape(map));
  if (bias.size() != map.rows())
    throw InvalidInput("observation bias has " + std::to_string(bias.size()) + " entries for map " +
                       shape(map));
}

Conditioned condition_detailed(const GaussianVector& prior, const LinearObservation& obs,
                               const Vector& observed_value) {
  const Index n = prior.dim();
  if (prior.cov.rows() != n || prior.cov.cols() != n)
    throw InvalidInput("prior: mean/cov dimension mismatch");
  obs.check_dims(n);
  if (observed_value.size() != obs.map.rows())
    throw InvalidInput("observed value has " + std::to_string(observed_value.size()) +
                       " entries, expected " + std::to_string(obs.map.rows()));
  require_finite(prior.mean, "prior mean");
  require_finite(prior.cov, "prior cov");
  require_finite(obs.map, "observation map");
  require_finite(obs.noise_cov, "observation noise_cov");
  require_finite(obs.bias, "observation bias");
  require_finite(observed_value, "observed value");
  if (!is_symmetric(prior.cov, kInputSymmetryTol)) throw InvalidInput("prior cov not symmetric");

  Conditioned out;
  out.cross_cov = prior.cov * obs.map.transpose();
  out.innovation_cov = symmetrized(obs.map * out.cross_cov + obs.noise_cov);
  const Matrix gain = out.cross_cov * pseudoinverse(out.innovation_cov);
  const Vector innovation = observed_value - obs.map * prior.mean - obs.bias;

  out.posterior.mean = prior.mean + gain * innovation;
  out.posterior.cov = symmetrized(prior.cov - gain * out.cross_cov.transpose());
  return out;
}

GaussianVector condition(const GaussianVector& prior, const LinearObservation& obs,
                         const Vector& observed_value) {
  return condition_detailed(prior, obs, observed_value).posterior;
}

Matrix pseudoinverse(const Matrix& s) {
  if (s.rows() != s.cols()) throw InvalidInput("pseudoinverse: matrix is " + shape(s));
  require_finite(s, "pseudoinverse input");
  if (!is_symmetric(s, kInputSymmetryTol)) throw InvalidInput("pseudoinverse: input not symmetric");
  const Index n = s.rows();
  if (n == 0) return Matrix(0, 0);
  if (n == 1) {
    Matrix out(1, 1);
    out(0, 0) = s(0, 0) > 0.0 ? 1.0 / s(0, 0) : 0.0;
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(s));
  const Vector& lambda = eig.eigenvalues();
  const double cutoff = kPinvCutoff * std::max(lambda.maxCoeff(), 0.0);
  Vector inv = Vector::Zero(n);
  for (Index i = 0; i < n; ++i)
    if (lambda(i) > cutoff && lambda(i) > 0.0) inv(i) = 1.0 / lambda(i);
  const Matrix& v = eig.eigenvectors();
  return symmetrized(v * inv.asDiagonal() * v.transpose());
}

double increment_trace(const Matrix& cross_cov, const Matrix& innovation_cov) {
  if (innovation_cov.rows() != innovation_cov.cols() || cross_cov.cols() != innovation_cov.rows())
    throw InvalidInput("increment_trace: cross is " + shape(cross_cov) + ", innovation is " +
                       shape(innovation_cov));
  const Matrix weighted = cross_cov * pseudoinverse(innovation_cov);
  return std::max(0.0, weighted.cwiseProduct(cross_cov).sum());
}

Matrix psd_sqrt(const Matrix& s) {
  if (s.rows() != s.cols()) throw InvalidInput("psd_sqrt: matrix is " + shape(s));
  require_finite(s, "psd_sqrt input");
  if (s.size() == 0) return s;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(s));
  Vector lambda = eig.eigenvalues();
  const double hi = std::max(lambda.maxCoeff(), 0.0);
  if (lambda.minCoeff() < -kPsdFloor * hi)
    throw InvalidInput("psd_sqrt: eigenvalue " + std::to_string(lambda.minCoeff()) +
                       " below PSD floor");
  lambda = lambda.cwiseMax(0.0).cwiseSqrt();
  const Matrix& v = eig.eigenvectors();
  return v * lambda.asDiagonal() * v.transpose();
}

}  // namespace kfrate
