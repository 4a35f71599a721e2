#include "kfrate/lti_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

namespace kfrate {
namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void expect_shape(const Matrix& m, Index rows, Index cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols)
    throw InvalidInput(std::string("matrix ") + name + " is " + shape(m) + ", expected " +
                       std::to_string(rows) + "x" + std::to_string(cols));
  if (!m.allFinite()) throw InvalidInput(std::string("matrix ") + name + " has non-finite entries");
}

void expect_spd(const Matrix& m, const char* name) {
  if (m.size() == 0) return;
  if (!is_symmetric(m, 1e-12)) throw InvalidInput(std::string("matrix ") + name + " is not symmetric");
  if (min_eigenvalue(m) <= 0.0)
    throw InvalidInput(std::string("matrix ") + name + " is not positive definite");
}

// e^{A a} * int_0^{b-a} e^{As} ds = int_a^b e^{As} ds.
Matrix integral_of_exp(const Matrix& a, double from, double to) {
  const Index p = a.rows();
  Matrix block = Matrix::Zero(2 * p, 2 * p);
  block.topLeftCorner(p, p) = a;
  block.topRightCorner(p, p).setIdentity();
  const Matrix e = expm(block, to - from);
  return expm(a, from) * e.topRightCorner(p, p);
}

}  // namespace

void LtiSystem::validate() const {
  const Index np = A.rows();
  if (np == 0) throw InvalidInput("matrix A is empty");
  expect_shape(A, np, np, "A");
  expect_shape(B, np, B.cols(), "B");
  expect_shape(C, C.rows(), np, "C");
  if (C.rows() == 0) throw InvalidInput("matrix C has no rows");
  expect_shape(Q, B.cols(), B.cols(), "Q");
  expect_shape(R, C.rows(), C.rows(), "R");
  expect_shape(P0, np, np, "P0");
  if (m.size() != np) throw InvalidInput("vector m has " + std::to_string(m.size()) +
                                         " entries, expected " + std::to_string(np));
  if (!m.allFinite()) throw InvalidInput("vector m has non-finite entries");
  expect_spd(Q, "Q");
  expect_spd(R, "R");
  if (!is_symmetric(P0, 1e-12)) throw InvalidInput("matrix P0 is not symmetric");
  const double lo = min_eigenvalue(P0);
  const double hi = std::max(0.0, -min_eigenvalue(-P0));
  if (lo < -1e-10 * hi) throw InvalidInput("matrix P0 is not positive semidefinite");
}

LtiSystem augmented(const LtiSystem& sys) {
  const Index p = sys.p();
  LtiSystem out;
  out.A = Matrix::Zero(2 * p, 2 * p);
  out.A.topLeftCorner(p, p) = sys.A;
  out.A.bottomLeftCorner(p, p).setIdentity();
  out.B = Matrix::Zero(2 * p, sys.q());
  out.B.topRows(p) = sys.B;
  out.C = Matrix::Zero(sys.r(), 2 * p);
  out.C.rightCols(p) = sys.C;
  out.Q = sys.Q;
  out.R = sys.R;
  out.P0 = Matrix::Zero(2 * p, 2 * p);
  out.P0.topLeftCorner(p, p) = sys.P0;
  out.m = Vector::Zero(2 * p);
  out.m.head(p) = sys.m;
  return out;
}

double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

double min_eigenvalue(const Matrix& symmetric) {
  if (symmetric.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(symmetric), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

Matrix expm(const Matrix& a, double t) {
  if (a.rows() != a.cols()) throw InvalidInput("expm: matrix is " + shape(a));
  if (!a.allFinite() || !std::isfinite(t)) throw InvalidInput("expm: non-finite input");
  const Matrix scaled = a * t;
  Matrix out = scaled.exp();
  if (!out.allFinite()) throw NumericalFailure("expm: overflow");
  return out;
}

TransitionMoments transition_moments(const LtiSystem& sys, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidInput("transition_moments: dt must be > 0");
  const Index p = sys.p();
  Matrix block = Matrix::Zero(3 * p, 3 * p);
  block.block(0, 0, p, p) = -sys.A;
  block.block(0, p, p, p) = sys.B * sys.Q * sys.B.transpose();
  block.block(p, p, p, p) = sys.A.transpose();
  block.block(p, 2 * p, p, p).setIdentity();
  const Matrix e = expm(block, dt);

  TransitionMoments out;
  out.phi = e.block(p, p, p, p).transpose();
  out.psi = e.block(p, 2 * p, p, p).transpose();
  out.qd = symmetrized(out.phi * e.block(0, p, p, p));
  return out;
}

ObservationRow c_tilde(const LtiSystem& sys, double t_a, double t, double t_b) {
  if (!(0.0 <= t_a && t_a < t && t < t_b) || !std::isfinite(t_b))
    throw InvalidInput("c_tilde: requires 0 <= t_a < t < t_b");
  const double span = t_b - t_a;
  const double left_weight = (t_b - t) / span;
  const double right_weight = (t - t_a) / span;
  ObservationRow row;
  row.matrix = sys.C * (left_weight * integral_of_exp(sys.A, t_a, t) -
                        right_weight * integral_of_exp(sys.A, t, t_b));
  row.noise_cov = ((t - t_a) * (t_b - t) / span) * sys.R;
  row.t_a = t_a;
  row.t = t;
  row.t_b = t_b;
  return row;
}

ObservationRow c_h(const LtiSystem& sys, double t, double h) {
  return c_tilde(sys, t - h, t, t + h);
}

double mu_bound(const LtiSystem& sys, double horizon) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidInput("mu_bound: T must be > 0");
  double best = 0.0;
  for (int k = 0; k < kMuGridPoints; ++k) {
    const double t = horizon * k / (kMuGridPoints - 1);
    best = std::max(best, spectral_norm(expm(sys.A, t)));
  }
  return best * (1.0 + kMuSafety);
}

std::string_view to_string(BoundVariant v) {
  switch (v) {
    case BoundVariant::noiseless: return "noiseless";
    case BoundVariant::input_noise: return "input_noise";
    case BoundVariant::covariance_smooth: return "covariance_smooth";
    case BoundVariant::state_smooth: return "state_smooth";
  }
  return "unknown";
}

BoundVariant parse_bound_variant(std::string_view name) {
  for (auto v : {BoundVariant::noiseless, BoundVariant::input_noise,
                 BoundVariant::covariance_smooth, BoundVariant::state_smooth})
    if (to_string(v) == name) return v;
  throw InvalidInput("unknown bound variant '" + std::string(name) + "'");
}

double BoundReport::bound_at(Index n_value) const {
  const double n_d = static_cast<double>(n_value);
  const double t = horizon;
  switch (variant) {
    case BoundVariant::noiseless:
    case BoundVariant::state_smooth:
      return constants.at("M") * t * t * t / (n_d * n_d);
    case BoundVariant::covariance_smooth:
      return constants.at("M") * t * t / n_d;
    case BoundVariant::input_noise:
      return constants.at("M1") * t * t / n_d + constants.at("M2") * t * t * t / (n_d * n_d) +
             constants.at("M3") * t * t * t * t / (n_d * n_d);
  }
  return 0.0;
}

BoundReport bound_constants(const LtiSystem& sys, double horizon, Index n, BoundVariant variant,
                            std::optional<double> estimate_error,
                            std::optional<double> mu_override) {
  sys.validate();
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidInput("bound_constants: T must be > 0");
  if (n < 1) throw InvalidInput("bound_constants: n must be >= 1");
  if (variant != BoundVariant::input_noise && sys.has_input_noise())
    throw InvalidInput("bound variant " + std::string(to_string(variant)) +
                       " assumes no input noise but B != 0");

  BoundReport rep;
  rep.variant = variant;
  rep.horizon = horizon;
  rep.n = n;
  rep.mu = mu_override ? *mu_override : mu_bound(sys, horizon);
  rep.norm_A = spectral_norm(sys.A);
  rep.norm_C = spectral_norm(sys.C);
  rep.min_eig_R = min_eigenvalue(sys.R);
  rep.tr_P0 = sys.P0.trace();
  const Matrix bqb = sys.B * sys.Q * sys.B.transpose();
  rep.tr_BQB = bqb.trace();
  rep.tr_ABQBA = (sys.A * bqb * sys.A.transpose()).trace();
  rep.tr_AP0A = (sys.A * sys.P0 * sys.A.transpose()).trace();
  Matrix stacked(2 * sys.p(), sys.p());
  stacked << sys.P0, sys.A * sys.P0;
  rep.graph_norm_P0 = spectral_norm(stacked);

  const double mu2 = rep.mu * rep.mu;
  rep.a_priori_error = mu2 * rep.tr_P0;
  if (variant == BoundVariant::input_noise) rep.a_priori_error += horizon * mu2 * rep.tr_BQB;
  const double err = estimate_error ? *estimate_error : rep.a_priori_error;
  if (estimate_error) rep.notes.emplace_back("estimate error supplied instead of a-priori bound");

  const double c2 = rep.norm_C * rep.norm_C;
  const double a2 = rep.norm_A * rep.norm_A;
  const double rmin = rep.min_eig_R;
  switch (variant) {
    case BoundVariant::noiseless:
      rep.constants["M"] = mu2 * rep.tr_P0 * err * c2 * a2 / (12.0 * rmin);
      break;
    case BoundVariant::input_noise:
      rep.constants["M1"] = c2 * rep.tr_BQB * err / rmin;
      rep.constants["M2"] = mu2 * a2 * c2 * rep.tr_P0 * err / (12.0 * rmin);
      rep.constants["M3"] = mu2 * c2 * rep.tr_ABQBA * err / (2.0 * rmin);
      break;
    case BoundVariant::covariance_smooth:
      rep.constants["M"] = static_cast<double>(sys.r()) * mu2 * rep.graph_norm_P0 * c2 * err /
                           (2.0 * rmin);
      rep.notes.emplace_back(
          "||P0||_{L(X,dom A)} realized as ||[P0; A P0]||_2 on the finite (Galerkin) state space");
      break;
    case BoundVariant::state_smooth:
      if (!std::isfinite(rep.tr_AP0A))
        throw InvalidInput("state_smooth variant requires finite tr(A P0 A')");
      rep.constants["M"] = mu2 * rep.tr_AP0A * c2 * err / (12.0 * rmin);
      break;
  }
  for (const auto& [name, value] : rep.constants)
    if (!std::isfinite(value)) throw NumericalFailure("bound constant " + name + " is not finite");
  rep.bound_value = rep.bound_at(n);
  return rep;
}

}  // namespace kfrate
