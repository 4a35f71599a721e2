#pragma once

#include <optional>
#include <span>
#include <vector>

#include "kfrate/gaussian.hpp"
#include "kfrate/lti_model.hpp"
#include "kfrate/path_sim.hpp"

namespace kfrate {

enum class FilterMode {
  // Law of the initial state x given the included outputs; needs B = 0.
  initial_state_form,
  // Law of (z(T), y at candidate nodes) given the included outputs.
  joint_form,
};

// Dense joint-form laws are limited to this many candidate nodes.
inline constexpr std::size_t kJointNodeCap = 1024;

// One point z_j of the refinement martingale together with the information
// needed to continue it.
struct FilterState {
  GaussianVector target;  // law of z(T) given the included outputs
  FilterMode mode = FilterMode::initial_state_form;
  std::vector<Index> included;  // sorted path-node indices

  GaussianVector initial;              // initial_state_form
  std::optional<JointGaussian> joint;  // joint_form
  std::vector<Index> joint_nodes;      // path node of each joint y-block

  // E||change of target mean||^2 caused by the update that produced this state.
  double increment_trace = 0.0;

  bool includes(Index node) const;
};

struct EstimateRecord {
  Index n = 0;
  int depth = 0;
  Vector mean;
  double cov_trace = 0.0;
  double error_sq_vs_ref = 0.0;
};

// Kalman filter on a fixed sampling schedule. The covariance recursion does
// not depend on observed values, so it runs once at construction and the
// stored gains are replayed against any path.
class SampledFilter {
 public:
  enum class Form {
    // State (z, increment of zeta) driven by output increments; any B.
    augmented,
    // Initial state x observed through output increments; B = 0 only.
    initial_state,
  };

  SampledFilter(const LtiSystem& sys, double horizon, std::span<const double> times, Form form,
                bool keep_gains = true);

  // Law of z(T) given y at the schedule times on this path.
  GaussianVector estimate(const SamplePath& path) const;

  // Law of x given the same outputs (initial_state form only).
  GaussianVector initial_estimate(const SamplePath& path) const;

  const Matrix& target_cov() const { return target_cov_; }
  const Matrix& initial_cov() const { return initial_cov_; }
  Form form() const { return form_; }

 private:
  struct Step {
    double time;
    Matrix gain;  // p x r
    Matrix pred;  // r x p, predicted output increment per unit state
    Matrix phi;   // p x p (augmented form)
  };

  Vector run_mean(const SamplePath& path) const;

  LtiSystem sys_;
  double horizon_;
  Form form_;
  bool keep_gains_;
  std::vector<Step> steps_;
  Matrix final_phi_;   // augmented: last time -> T; initial_state: e^{AT}
  Matrix target_cov_;
  Matrix initial_cov_;
};

// E[z(T) | y(iT/n), i = 1..n] and its covariance.
FilterState discrete_kf(const LtiSystem& sys, const SamplePath& path, Index n);

// Rebuilds state in joint form over the given candidate nodes (not included).
FilterState with_joint_form(const LtiSystem& sys, const SamplePath& path, const FilterState& state,
                            std::vector<Index> candidate_nodes);

// Includes y(t_new) through the interpolant-differenced output
//   y(t_new) - (t_b - t_new)/(t_b - t_a) y(t_a) - (t_new - t_a)/(t_b - t_a) y(t_b),
// where t_a < t_new < t_b are adjacent included nodes (t_a may be 0).
FilterState refine_step(const LtiSystem& sys, const FilterState& state, const SamplePath& path,
                        double t_a, double t_new, double t_b);

struct MartingalePoint {
  Index j = 0;
  Index added_node = 0;  // 0 for the starting discrete estimate
  GaussianVector target;
  double increment_trace = 0.0;
};

struct RefinementTrajectory {
  std::vector<MartingalePoint> points;  // j = n, n+1, ..., 2^K n
  FilterState final_state;
};

// Starts from discrete_kf(n) and adds the midpoints of every interval, level
// by level, left to right within a level, down to spacing T / (2^K n).
RefinementTrajectory refine_to_depth(const LtiSystem& sys, const SamplePath& path, Index n, int depth,
                                     std::optional<FilterMode> mode = std::nullopt);

// One-shot conditioning of z(T) on y at the given path times.
GaussianVector oracle_estimate(const LtiSystem& sys, const SamplePath& path,
                               std::span<const double> times);

// Covariance of z(T) given y at the times (strictly increasing, in (0, T]).
Matrix posterior_covariance(const LtiSystem& sys, double horizon, std::span<const double> times);

// E||z_fine - z_coarse||^2 = tr(P_coarse) - tr(P_fine) for nested time sets.
double error_trace(const LtiSystem& sys, double horizon, std::span<const double> coarse,
                   std::span<const double> fine);

// Riccati equation integrated with classical RK4 and the mean equation with
// Euler steps driven by the path's output increments.
GaussianVector kalman_bucy_reference(const LtiSystem& sys, const SamplePath& path, Index substeps);

// Node times i * T / n, i = 1..n.
std::vector<double> uniform_times(double horizon, Index n);

}  // namespace kfrate
