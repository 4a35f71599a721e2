#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kfrate/filters.hpp"
#include "kfrate/lti_model.hpp"
#include "kfrate/path_sim.hpp"

namespace kfrate {

struct StudyConfig {
  LtiSystem system;
  double horizon = 1.0;
  std::vector<Index> n_list;
  int k_ref = 10;
  Index seeds = 1;
  std::uint64_t seed = 0;  // first Monte Carlo seed
  BoundVariant variant = BoundVariant::noiseless;
  std::string output;

  // Reference resolution 2^k_ref * max(n_list).
  Index reference_n() const;

  void validate() const;
};

struct RateRow {
  Index n = 0;
  double error_sq = 0.0;
  double bound_value = 0.0;     // constants with E = tr(P_n)
  double a_priori_bound = 0.0;  // constants with the a-priori error substitution
  bool used_in_fit = false;
};

struct RateReport {
  BoundVariant variant = BoundVariant::noiseless;
  std::vector<RateRow> rows;
  double fitted_slope = 0.0;  // NaN when inconclusive
  double slope_stderr = 0.0;
  double ref_floor = 0.0;     // error between the two deepest reference levels
  bool inconclusive = false;
  BoundReport a_priori;       // evaluated at n_list.front()
};

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double std_error = 0.0;  // 0 with fewer than three points
};

// Least squares on (log x, log y). Needs at least two points, all positive.
SlopeFit fit_loglog_slope(std::span<const double> x, std::span<const double> y);

// error_sq(n) = error_trace(grid_n, reference grid) for each n; points within
// 10x of the reference floor are left out of the slope fit.
RateReport convergence_study(const StudyConfig& cfg);

struct MonteCarloRow {
  Index n = 0;
  double mc_error_sq = 0.0;
  double std_error = 0.0;
  double error_trace = 0.0;
};

// Mean of ||z_hat_{T,n} - z_hat_ref||^2 over cfg.seeds paths (seeds cfg.seed,
// cfg.seed + 1, ...), with the reference at cfg.reference_n(). Needs
// cfg.seeds >= 1000.
std::vector<MonteCarloRow> monte_carlo_check(const StudyConfig& cfg);

// Estimate on the n-subgrid of a path, compared with the estimate that uses
// every node of the path.
EstimateRecord estimate_record(const LtiSystem& sys, const SamplePath& path, Index n);

// Modes e_{2^k} of the string on [0, 1], one (position, velocity) pair each,
// in coordinates where the Euclidean norm is the energy norm.
struct WaveConfig {
  std::vector<int> mode_exponents;  // k, distinct
  std::vector<double> c_coeffs;     // c_{2^k}
  std::vector<double> sigmas;       // standard deviation of the velocity amplitude a_k
  double R = 1.0;
  int extra_levels = 4;             // reference depth beyond the finest mode or level

  void validate() const;
};

// Block-diagonal skew A with blocks [[0, w], [-w, 0]], w = 2^k pi; the output
// reads position coordinates with weight c_{2^k} / sqrt(2); B = 0.
LtiSystem wave_instance(const WaveConfig& cfg);

// 8 sum_{i >= l+1} sigma_i^2 c_{2^i}^2 / (pi^2 R + 4 pi^2 normC^2 trP0) over the
// configured modes.
double wave_lower_bound(const WaveConfig& cfg, int level, double tr_p0, double norm_c);

struct WaveRow {
  int level = 0;
  double error_sq = 0.0;
  double lower_bound = 0.0;
};

// error_trace between n = 2^l and the deep reference, horizon 1.
std::vector<WaveRow> wave_slow_convergence_demo(const WaveConfig& cfg, std::span<const int> levels);

}  // namespace kfrate
