#include "kfrate/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <string>

namespace kfrate {

Index StudyConfig::reference_n() const { return n_list.back() << k_ref; }

void StudyConfig::validate() const {
  system.validate();
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidInput("study: T must be > 0");
  if (n_list.empty()) throw InvalidInput("study: n_list is empty");
  if (k_ref < 1 || k_ref > 24) throw InvalidInput("study: K_ref must be in [1, 24]");
  if (seeds < 1) throw InvalidInput("study: seeds must be >= 1");
  for (std::size_t k = 0; k < n_list.size(); ++k) {
    if (n_list[k] < 1) throw InvalidInput("study: n_list entries must be >= 1");
    if (k > 0 && n_list[k] <= n_list[k - 1]) throw InvalidInput("study: n_list must be strictly increasing");
  }
  const Index ref = reference_n();
  for (Index n : n_list)
    if (ref % n != 0)
      throw InvalidInput("study: n = " + std::to_string(n) + " does not divide the reference grid");
}

SlopeFit fit_loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidInput("slope fit: need >= 2 paired points");
  const auto m = static_cast<double>(x.size());
  double mean_x = 0.0;
  double mean_y = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw InvalidInput("slope fit: values must be positive");
    mean_x += std::log(x[i]);
    mean_y += std::log(y[i]);
  }
  mean_x /= m;
  mean_y /= m;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mean_x;
    sxx += dx * dx;
    sxy += dx * (std::log(y[i]) - mean_y);
  }
  if (!(sxx > 0.0)) throw InvalidInput("slope fit: x values must not all coincide");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = mean_y - fit.slope * mean_x;
  if (x.size() > 2) {
    double ssr = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double res = std::log(y[i]) - fit.intercept - fit.slope * std::log(x[i]);
      ssr += res * res;
    }
    fit.std_error = std::sqrt(ssr / (m - 2.0) / sxx);
  }
  return fit;
}

RateReport convergence_study(const StudyConfig& cfg) {
  cfg.validate();
  const LtiSystem& sys = cfg.system;
  const double T = cfg.horizon;
  const Index ref_n = cfg.reference_n();
  const double tr_ref = posterior_covariance(sys, T, uniform_times(T, ref_n)).trace();
  const double tr_half = posterior_covariance(sys, T, uniform_times(T, ref_n / 2)).trace();

  RateReport report;
  report.variant = cfg.variant;
  report.ref_floor = tr_half - tr_ref;
  report.a_priori = bound_constants(sys, T, cfg.n_list.front(), cfg.variant);

  std::vector<double> fit_n;
  std::vector<double> fit_err;
  for (Index n : cfg.n_list) {
    RateRow row;
    row.n = n;
    const double tr_n = posterior_covariance(sys, T, uniform_times(T, n)).trace();
    row.error_sq = tr_n - tr_ref;
    row.bound_value = bound_constants(sys, T, n, cfg.variant, tr_n, report.a_priori.mu).bound_value;
    row.a_priori_bound = report.a_priori.bound_at(n);
    row.used_in_fit = row.error_sq > 10.0 * std::max(report.ref_floor, 0.0) && row.error_sq > 0.0;
    if (!std::isfinite(row.error_sq) || !std::isfinite(row.bound_value))
      throw NumericalFailure("convergence_study: non-finite error or bound");
    if (row.used_in_fit) {
      fit_n.push_back(static_cast<double>(n));
      fit_err.push_back(row.error_sq);
    }
    report.rows.push_back(row);
  }
  if (fit_n.size() < 2) {
    report.inconclusive = true;
    report.fitted_slope = std::numeric_limits<double>::quiet_NaN();
    report.slope_stderr = std::numeric_limits<double>::quiet_NaN();
  } else {
    const SlopeFit fit = fit_loglog_slope(fit_n, fit_err);
    report.fitted_slope = fit.slope;
    report.slope_stderr = fit.std_error;
  }
  return report;
}

namespace {

SampledFilter::Form preferred_form(const LtiSystem& sys) {
  return sys.has_input_noise() ? SampledFilter::Form::augmented : SampledFilter::Form::initial_state;
}

}  // namespace

std::vector<MonteCarloRow> monte_carlo_check(const StudyConfig& cfg) {
  cfg.validate();
  if (cfg.seeds < 1000) throw InvalidInput("monte_carlo_check: seeds must be >= 1000");
  const LtiSystem& sys = cfg.system;
  const double T = cfg.horizon;
  const Index ref_n = cfg.reference_n();
  const auto form = preferred_form(sys);
  const SampledFilter reference(sys, T, uniform_times(T, ref_n), form);
  std::vector<SampledFilter> coarse;
  coarse.reserve(cfg.n_list.size());
  for (Index n : cfg.n_list) coarse.emplace_back(sys, T, uniform_times(T, n), form);

  const DyadicGrid grid{T, cfg.n_list.back(), cfg.k_ref};
  std::vector<double> sum(cfg.n_list.size(), 0.0);
  std::vector<double> sum_sq(cfg.n_list.size(), 0.0);
  for (Index s = 0; s < cfg.seeds; ++s) {
    const SamplePath path = simulate(sys, grid, cfg.seed + static_cast<std::uint64_t>(s));
    const Vector ref_mean = reference.estimate(path).mean;
    for (std::size_t k = 0; k < coarse.size(); ++k) {
      const double e = (coarse[k].estimate(path).mean - ref_mean).squaredNorm();
      sum[k] += e;
      sum_sq[k] += e * e;
    }
  }

  const auto count = static_cast<double>(cfg.seeds);
  const double tr_ref = reference.target_cov().trace();
  std::vector<MonteCarloRow> rows;
  for (std::size_t k = 0; k < coarse.size(); ++k) {
    MonteCarloRow row;
    row.n = cfg.n_list[k];
    row.mc_error_sq = sum[k] / count;
    const double var = std::max(sum_sq[k] / count - row.mc_error_sq * row.mc_error_sq, 0.0);
    row.std_error = std::sqrt(var * count / (count - 1.0) / count);
    row.error_trace = coarse[k].target_cov().trace() - tr_ref;
    rows.push_back(row);
  }
  return rows;
}

EstimateRecord estimate_record(const LtiSystem& sys, const SamplePath& path, Index n) {
  if (n < 1 || path.grid.intervals() % n != 0)
    throw InvalidInput("n = " + std::to_string(n) + " is not representable on the path grid");
  const double T = path.grid.horizon;
  const auto form = preferred_form(sys);
  const GaussianVector coarse = SampledFilter(sys, T, uniform_times(T, n), form).estimate(path);
  const GaussianVector fine =
      SampledFilter(sys, T, uniform_times(T, path.grid.intervals()), form).estimate(path);
  EstimateRecord rec;
  rec.n = n;
  rec.depth = static_cast<int>(std::round(std::log2(static_cast<double>(path.grid.intervals() / n))));
  rec.mean = coarse.mean;
  rec.cov_trace = coarse.cov.trace();
  rec.error_sq_vs_ref = (coarse.mean - fine.mean).squaredNorm();
  return rec;
}

void WaveConfig::validate() const {
  if (mode_exponents.empty()) throw InvalidInput("wave: at least one mode is required");
  if (c_coeffs.size() != mode_exponents.size() || sigmas.size() != mode_exponents.size())
    throw InvalidInput("wave: modes, c and sigma lists must have equal length");
  std::set<int> seen;
  for (int k : mode_exponents) {
    if (k < 0 || k > 30) throw InvalidInput("wave: mode exponent " + std::to_string(k) + " out of range");
    if (!seen.insert(k).second) throw InvalidInput("wave: mode exponent " + std::to_string(k) + " repeated");
  }
  for (double s : sigmas)
    if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidInput("wave: sigmas must be finite and >= 0");
  for (double c : c_coeffs)
    if (!std::isfinite(c)) throw InvalidInput("wave: c coefficients must be finite");
  if (!(R > 0.0) || !std::isfinite(R)) throw InvalidInput("wave: R must be > 0");
  if (extra_levels < 0 || extra_levels > 10) throw InvalidInput("wave: extra_levels must be in [0, 10]");
}

LtiSystem wave_instance(const WaveConfig& cfg) {
  cfg.validate();
  const auto modes = static_cast<Index>(cfg.mode_exponents.size());
  const Index p = 2 * modes;
  LtiSystem sys;
  sys.A = Matrix::Zero(p, p);
  sys.B = Matrix::Zero(p, 1);
  sys.C = Matrix::Zero(1, p);
  sys.Q = Matrix::Identity(1, 1);
  sys.R = Matrix::Constant(1, 1, cfg.R);
  sys.P0 = Matrix::Zero(p, p);
  sys.m = Vector::Zero(p);
  for (Index j = 0; j < modes; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const double omega = std::ldexp(std::numbers::pi, cfg.mode_exponents[uj]);
    sys.A(2 * j, 2 * j + 1) = omega;
    sys.A(2 * j + 1, 2 * j) = -omega;
    sys.C(0, 2 * j) = cfg.c_coeffs[uj] / std::numbers::sqrt2;
    sys.P0(2 * j + 1, 2 * j + 1) = cfg.sigmas[uj] * cfg.sigmas[uj];
  }
  return sys;
}

double wave_lower_bound(const WaveConfig& cfg, int level, double tr_p0, double norm_c) {
  if (level < 0) throw InvalidInput("wave_lower_bound: l must be >= 0");
  double tail = 0.0;
  for (std::size_t j = 0; j < cfg.mode_exponents.size(); ++j) {
    if (cfg.mode_exponents[j] >= level + 1) {
      const double sc = cfg.sigmas[j] * cfg.c_coeffs[j];
      tail += sc * sc;
    }
  }
  constexpr double pi2 = std::numbers::pi * std::numbers::pi;
  return 8.0 * tail / (pi2 * cfg.R + 4.0 * pi2 * norm_c * norm_c * tr_p0);
}

std::vector<WaveRow> wave_slow_convergence_demo(const WaveConfig& cfg, std::span<const int> levels) {
  const LtiSystem sys = wave_instance(cfg);
  if (levels.empty()) throw InvalidInput("wave demo: no levels given");
  const int max_level = *std::max_element(levels.begin(), levels.end());
  const int max_mode = *std::max_element(cfg.mode_exponents.begin(), cfg.mode_exponents.end());
  if (*std::min_element(levels.begin(), levels.end()) < 0) throw InvalidInput("wave demo: levels must be >= 0");
  if (max_mode < max_level + 1)
    throw InvalidInput("wave demo: modes must cover level " + std::to_string(max_level + 1));
  const int ref_level = std::max(max_level, max_mode) + cfg.extra_levels;
  if (ref_level > 24) throw InvalidInput("wave demo: reference level exceeds 24");

  constexpr double T = 1.0;
  const double tr_ref = posterior_covariance(sys, T, uniform_times(T, Index{1} << ref_level)).trace();
  const double tr_p0 = sys.P0.trace();
  const double norm_c = spectral_norm(sys.C);
  std::vector<WaveRow> rows;
  for (int l : levels) {
    WaveRow row;
    row.level = l;
    row.error_sq = posterior_covariance(sys, T, uniform_times(T, Index{1} << l)).trace() - tr_ref;
    row.lower_bound = wave_lower_bound(cfg, l, tr_p0, norm_c);
    if (!std::isfinite(row.error_sq)) throw NumericalFailure("wave demo: non-finite error");
    rows.push_back(row);
  }
  return rows;
}

}  // namespace kfrate
