#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kfrate/gaussian.hpp"

namespace kfrate {

// dz = A z dt + B du,  dy = C z dt + dw,  z(0) = x ~ N(m, P0),
// u and w Brownian motions with incremental covariances Q and R.
struct LtiSystem {
  Matrix A;   // p x p
  Matrix B;   // p x q
  Matrix C;   // r x p
  Matrix Q;   // q x q, SPD
  Matrix R;   // r x r, SPD
  Matrix P0;  // p x p, PSD
  Vector m;   // p

  Index p() const { return A.rows(); }
  Index q() const { return B.cols(); }
  Index r() const { return C.rows(); }

  bool has_input_noise() const { return B.size() > 0 && B.cwiseAbs().maxCoeff() > 0.0; }

  // Throws InvalidInput naming the offending matrix.
  void validate() const;
};

// (z, zeta) with zeta(t) = int_0^t z ds, so y = [0 C] (z, zeta) + w.
LtiSystem augmented(const LtiSystem& sys);

double spectral_norm(const Matrix& m);
double min_eigenvalue(const Matrix& symmetric);

Matrix expm(const Matrix& a, double t);

struct TransitionMoments {
  Matrix phi;  // e^{A dt}
  Matrix psi;  // int_0^dt e^{As} ds
  Matrix qd;   // int_0^dt e^{As} B Q B' e^{A's} ds
};

// Van Loan: one exponential of [[-A, BQB', 0], [0, A', I], [0, 0, 0]] * dt.
TransitionMoments transition_moments(const LtiSystem& sys, double dt);

// Effective observation of the interpolant-differenced output
//   y(t) - (t_b - t)/(t_b - t_a) y(t_a) - (t - t_a)/(t_b - t_a) y(t_b)
// in terms of the initial state, for systems without input noise.
struct ObservationRow {
  Matrix matrix;     // r x p
  Matrix noise_cov;  // ((t - t_a)(t_b - t)/(t_b - t_a)) R
  double t_a = 0.0;
  double t = 0.0;
  double t_b = 0.0;
};

ObservationRow c_tilde(const LtiSystem& sys, double t_a, double t, double t_b);

// Symmetric spacing: c_tilde(t - h, t, t + h).
ObservationRow c_h(const LtiSystem& sys, double t, double h);

inline constexpr int kMuGridPoints = 256;
inline constexpr double kMuSafety = 1e-6;

// max over a 256-point uniform grid on [0, T] of ||e^{At}||_2, times (1 + 1e-6).
double mu_bound(const LtiSystem& sys, double horizon);

enum class BoundVariant { noiseless, input_noise, covariance_smooth, state_smooth };

std::string_view to_string(BoundVariant v);
BoundVariant parse_bound_variant(std::string_view name);

struct BoundReport {
  BoundVariant variant = BoundVariant::noiseless;
  std::map<std::string, double> constants;  // "M" or "M1", "M2", "M3"
  double horizon = 0.0;
  Index n = 1;
  double bound_value = 0.0;
  double a_priori_error = 0.0;  // substituted for E||z_hat_{T,n} - z(T)||^2

  // Quantities the constants are assembled from.
  double mu = 1.0;
  double norm_A = 0.0;
  double norm_C = 0.0;
  double min_eig_R = 0.0;
  double tr_P0 = 0.0;
  double tr_BQB = 0.0;
  double tr_ABQBA = 0.0;
  double tr_AP0A = 0.0;
  double graph_norm_P0 = 0.0;  // ||[P0; A P0]||_2
  std::vector<std::string> notes;

  // Bound for another n with the same constants.
  double bound_at(Index n_value) const;
};

// Error bound constants with the a-priori error substitution, unless
// estimate_error supplies E||z_hat_{T,n} - z(T)||^2 directly. mu_override
// replaces the grid-sampled contraction constant.
BoundReport bound_constants(const LtiSystem& sys, double horizon, Index n, BoundVariant variant,
                            std::optional<double> estimate_error = std::nullopt,
                            std::optional<double> mu_override = std::nullopt);

}  // namespace kfrate
