#include "kfrate/filters.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace kfrate {
namespace {

void check_schedule(std::span<const double> times, double horizon) {
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!(times[k] > 0.0) || times[k] > horizon * (1.0 + 1e-12))
      throw InvalidInput("time " + std::to_string(times[k]) + " outside (0, T]");
    if (k > 0 && !(times[k] > times[k - 1]))
      throw InvalidInput("times must be strictly increasing");
  }
}

// Transition moments keyed by step length; dyadic schedules reuse a handful.
class MomentCache {
 public:
  MomentCache(const LtiSystem& sys, double horizon) : sys_(sys), horizon_(horizon) {}

  const TransitionMoments& get(double dt) {
    const auto key = std::llround(dt / horizon_ * 1099511627776.0);  // 2^40
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, transition_moments(sys_, dt)).first;
    return it->second;
  }

 private:
  const LtiSystem& sys_;
  double horizon_;
  std::map<long long, TransitionMoments> cache_;
};

Vector stacked_outputs(const SamplePath& path, std::span<const Index> nodes) {
  const Index r = path.y.rows();
  Vector out(r * static_cast<Index>(nodes.size()));
  for (std::size_t k = 0; k < nodes.size(); ++k)
    out.segment(static_cast<Index>(k) * r, r) = path.y.col(nodes[k]);
  return out;
}

// Exact observation of the y-blocks listed in `blocks`.
LinearObservation block_selection(const JointGaussian& jg, std::span<const std::size_t> blocks) {
  const Index r = jg.block_dim;
  const auto rows = r * static_cast<Index>(blocks.size());
  Matrix map = Matrix::Zero(rows, jg.law.dim());
  for (std::size_t k = 0; k < blocks.size(); ++k)
    map.block(static_cast<Index>(k) * r, jg.offset(blocks[k]), r, r).setIdentity();
  return LinearObservation::of(std::move(map), Matrix::Zero(rows, rows));
}

std::vector<double> node_times(const DyadicGrid& grid, std::span<const Index> nodes) {
  std::vector<double> out;
  out.reserve(nodes.size());
  for (Index node : nodes) out.push_back(grid.time(node));
  return out;
}

FilterState discrete_state(const LtiSystem& sys, const SamplePath& path, Index n) {
  sys.validate();
  if (path.y.rows() != sys.r() || path.z.rows() != sys.p())
    throw InvalidInput("path dimensions do not match the system");
  const std::vector<Index> nodes = path.grid.subgrid(n);
  const std::vector<double> times = node_times(path.grid, nodes);
  const double horizon = path.grid.horizon;

  FilterState st;
  st.included = nodes;
  st.target = SampledFilter(sys, horizon, times, SampledFilter::Form::augmented).estimate(path);
  if (sys.has_input_noise()) {
    st.mode = FilterMode::joint_form;
  } else {
    st.mode = FilterMode::initial_state_form;
    st.initial = SampledFilter(sys, horizon, times, SampledFilter::Form::initial_state)
                     .initial_estimate(path);
  }
  return st;
}

}  // namespace

bool FilterState::includes(Index node) const {
  return std::binary_search(included.begin(), included.end(), node);
}

std::vector<double> uniform_times(double horizon, Index n) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(std::max<Index>(n, 0)));
  for (Index i = 1; i <= n; ++i)
    out.push_back(horizon * static_cast<double>(i) / static_cast<double>(n));
  return out;
}

SampledFilter::SampledFilter(const LtiSystem& sys, double horizon, std::span<const double> times,
                             Form form, bool keep_gains)
    : sys_(sys), horizon_(horizon), form_(form), keep_gains_(keep_gains) {
  sys.validate();
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidInput("filter: T must be > 0");
  check_schedule(times, horizon);
  if (form == Form::initial_state && sys.has_input_noise())
    throw InvalidInput("initial-state filter requires B = 0");
  if (keep_gains) steps_.reserve(times.size());

  const Index p = sys.p();
  const Index r = sys.r();
  Matrix cov = sys.P0;
  double prev = 0.0;

  if (form == Form::augmented) {
    const LtiSystem aug = augmented(sys);
    MomentCache moments(aug, horizon);
    Matrix obs_map = Matrix::Zero(r, 2 * p);
    obs_map.rightCols(p) = sys.C;
    for (double t : times) {
      const double dt = t - prev;
      const TransitionMoments& tm = moments.get(dt);
      // (z, zeta - zeta(prev)) predicted from z(prev).
      const Matrix lift = tm.phi.leftCols(p);
      GaussianVector predicted{Vector::Zero(2 * p),
                               symmetrized(lift * cov * lift.transpose() + tm.qd)};
      if (!predicted.cov.allFinite()) throw NumericalFailure("filter prediction is not finite");
      const Conditioned c = condition_detailed(
          predicted, LinearObservation::of(obs_map, sys.R * dt), Vector::Zero(r));
      cov = c.posterior.cov.topLeftCorner(p, p);
      if (keep_gains) {
        steps_.push_back({t, c.cross_cov.topRows(p) * pseudoinverse(c.innovation_cov),
                          sys.C * lift.bottomRows(p), lift.topRows(p)});
      }
      prev = t;
    }
    if (horizon > prev * (1.0 + 1e-15)) {
      const TransitionMoments& tm = moments.get(horizon - prev);
      final_phi_ = tm.phi.topLeftCorner(p, p);
      cov = symmetrized(final_phi_ * cov * final_phi_.transpose() + tm.qd.topLeftCorner(p, p));
    } else {
      final_phi_ = Matrix::Identity(p, p);
    }
    target_cov_ = cov;
  } else {
    MomentCache moments(sys, horizon);
    Matrix out_rows = sys.C;  // C e^{A t_prev}
    for (double t : times) {
      const double dt = t - prev;
      const TransitionMoments& tm = moments.get(dt);
      const Matrix h = out_rows * tm.psi;
      if (!h.allFinite()) throw NumericalFailure("filter observation rows are not finite");
      const Conditioned c = condition_detailed(GaussianVector{Vector::Zero(p), cov},
                                               LinearObservation::of(h, sys.R * dt), Vector::Zero(r));
      cov = c.posterior.cov;
      if (keep_gains) steps_.push_back({t, c.cross_cov * pseudoinverse(c.innovation_cov), h, {}});
      out_rows = out_rows * tm.phi;
      prev = t;
    }
    initial_cov_ = cov;
    final_phi_ = expm(sys.A, horizon);
    target_cov_ = symmetrized(final_phi_ * cov * final_phi_.transpose());
  }
  if (!target_cov_.allFinite()) throw NumericalFailure("filter covariance is not finite");
}

Vector SampledFilter::run_mean(const SamplePath& path) const {
  if (!keep_gains_) throw InvalidInput("filter was built without gains");
  if (std::abs(path.grid.horizon - horizon_) > 1e-12 * horizon_)
    throw InvalidInput("path horizon does not match the filter horizon");
  Vector state = sys_.m;
  Index prev_node = 0;
  for (const Step& s : steps_) {
    const Index node = path.grid.index_of(s.time);
    const Vector dy = path.y.col(node) - path.y.col(prev_node);
    if (form_ == Form::augmented) {
      state = (s.phi * state + s.gain * (dy - s.pred * state)).eval();
    } else {
      state += s.gain * (dy - s.pred * state);
    }
    prev_node = node;
  }
  return state;
}

GaussianVector SampledFilter::estimate(const SamplePath& path) const {
  return {final_phi_ * run_mean(path), target_cov_};
}

GaussianVector SampledFilter::initial_estimate(const SamplePath& path) const {
  if (form_ != Form::initial_state) throw InvalidInput("initial_estimate needs the initial-state form");
  return {run_mean(path), initial_cov_};
}

FilterState discrete_kf(const LtiSystem& sys, const SamplePath& path, Index n) {
  FilterState st = discrete_state(sys, path, n);
  if (st.mode == FilterMode::joint_form) {
    std::vector<Index> candidates;
    for (Index node = 1; node <= path.grid.intervals(); ++node)
      if (!st.includes(node)) candidates.push_back(node);
    if (candidates.size() <= kJointNodeCap) st = with_joint_form(sys, path, st, std::move(candidates));
  }
  return st;
}

FilterState with_joint_form(const LtiSystem& sys, const SamplePath& path, const FilterState& state,
                            std::vector<Index> candidate_nodes) {
  std::sort(candidate_nodes.begin(), candidate_nodes.end());
  candidate_nodes.erase(std::unique(candidate_nodes.begin(), candidate_nodes.end()),
                        candidate_nodes.end());
  if (candidate_nodes.size() > kJointNodeCap)
    throw InvalidInput("joint form supports at most " + std::to_string(kJointNodeCap) +
                       " candidate nodes");
  for (Index node : candidate_nodes) {
    if (node < 1 || node > path.grid.intervals())
      throw InvalidInput("candidate node " + std::to_string(node) + " outside the path grid");
    if (state.includes(node))
      throw InvalidInput("candidate node " + std::to_string(node) + " is already included");
  }

  std::vector<Index> all_nodes;
  std::merge(state.included.begin(), state.included.end(), candidate_nodes.begin(),
             candidate_nodes.end(), std::back_inserter(all_nodes));
  const std::vector<double> times = node_times(path.grid, all_nodes);
  JointGaussian jg = joint_covariance(sys, times, path.grid.horizon);

  std::vector<std::size_t> observed_blocks;
  std::vector<std::size_t> kept_blocks;
  for (std::size_t k = 0; k < all_nodes.size(); ++k)
    (state.includes(all_nodes[k]) ? observed_blocks : kept_blocks).push_back(k);
  if (!observed_blocks.empty()) {
    jg.law = condition(jg.law, block_selection(jg, observed_blocks),
                       stacked_outputs(path, state.included));
  }

  const Index p = jg.target_dim;
  const Index r = jg.block_dim;
  std::vector<Index> keep;
  for (Index i = 0; i < p; ++i) keep.push_back(i);
  for (std::size_t k : kept_blocks)
    for (Index i = 0; i < r; ++i) keep.push_back(jg.offset(k) + i);

  JointGaussian reduced;
  reduced.target_dim = p;
  reduced.block_dim = r;
  reduced.law.mean = jg.law.mean(keep);
  reduced.law.cov = jg.law.cov(keep, keep);
  for (std::size_t k : kept_blocks) reduced.times.push_back(jg.times[k]);

  FilterState out = state;
  out.mode = FilterMode::joint_form;
  out.target = reduced.target();
  out.joint = std::move(reduced);
  out.joint_nodes = std::move(candidate_nodes);
  return out;
}

FilterState refine_step(const LtiSystem& sys, const FilterState& state, const SamplePath& path,
                        double t_a, double t_new, double t_b) {
  const DyadicGrid& grid = path.grid;
  if (!(t_a < t_new && t_new < t_b)) throw InvalidInput("refine_step: requires t_a < t_new < t_b");
  const Index node_a = grid.index_of(t_a);
  const Index node_new = grid.index_of(t_new);
  const Index node_b = grid.index_of(t_b);
  if (state.includes(node_new)) throw InvalidInput("refine_step: t_new is already included");
  if (!state.includes(node_b) || (node_a != 0 && !state.includes(node_a)))
    throw InvalidInput("refine_step: t_a and t_b must be included (t_a may be 0)");
  const auto first_after_a = std::upper_bound(state.included.begin(), state.included.end(), node_a);
  if (first_after_a == state.included.end() || *first_after_a != node_b)
    throw InvalidInput("refine_step: t_a and t_b must be adjacent included nodes");

  const double ta = grid.time(node_a);
  const double tn = grid.time(node_new);
  const double tb = grid.time(node_b);
  const double weight_a = (tb - tn) / (tb - ta);
  const double weight_b = (tn - ta) / (tb - ta);
  const Vector interpolant = weight_a * path.y.col(node_a) + weight_b * path.y.col(node_b);
  const Vector y_tilde = path.y.col(node_new) - interpolant;

  FilterState out;
  out.mode = state.mode;
  out.included = state.included;
  out.included.insert(std::upper_bound(out.included.begin(), out.included.end(), node_new), node_new);

  if (state.mode == FilterMode::initial_state_form) {
    if (sys.has_input_noise()) throw InvalidInput("initial-state refinement requires B = 0");
    const ObservationRow row = c_tilde(sys, ta, tn, tb);
    const Conditioned c =
        condition_detailed(state.initial, LinearObservation::of(row.matrix, row.noise_cov), y_tilde);
    const Matrix to_target = expm(sys.A, grid.horizon);
    out.initial = c.posterior;
    out.target = {to_target * c.posterior.mean,
                  symmetrized(to_target * c.posterior.cov * to_target.transpose())};
    out.increment_trace = increment_trace(to_target * c.cross_cov, c.innovation_cov);
    return out;
  }

  if (!state.joint) throw InvalidInput("refine_step: joint-form state carries no joint law");
  const JointGaussian& jg = *state.joint;
  const auto it = std::lower_bound(state.joint_nodes.begin(), state.joint_nodes.end(), node_new);
  if (it == state.joint_nodes.end() || *it != node_new)
    throw InvalidInput("refine_step: t_new is not a candidate node of the joint law");
  const auto block = static_cast<std::size_t>(it - state.joint_nodes.begin());
  const std::size_t blocks[] = {block};
  LinearObservation obs = block_selection(jg, blocks);
  obs.bias = -interpolant;
  const Conditioned c = condition_detailed(jg.law, obs, y_tilde);

  const Index p = jg.target_dim;
  const Index r = jg.block_dim;
  const Index drop = jg.offset(block);
  std::vector<Index> keep;
  keep.reserve(static_cast<std::size_t>(jg.law.dim() - r));
  for (Index i = 0; i < jg.law.dim(); ++i)
    if (i < drop || i >= drop + r) keep.push_back(i);

  JointGaussian next;
  next.target_dim = p;
  next.block_dim = r;
  next.law.mean = c.posterior.mean(keep);
  next.law.cov = c.posterior.cov(keep, keep);
  next.times = jg.times;
  next.times.erase(next.times.begin() + static_cast<std::ptrdiff_t>(block));
  out.joint_nodes = state.joint_nodes;
  out.joint_nodes.erase(out.joint_nodes.begin() + static_cast<std::ptrdiff_t>(block));
  out.target = next.target();
  out.joint = std::move(next);
  out.initial = state.initial;
  out.increment_trace = increment_trace(c.cross_cov.topRows(p), c.innovation_cov);
  return out;
}

RefinementTrajectory refine_to_depth(const LtiSystem& sys, const SamplePath& path, Index n, int depth,
                                     std::optional<FilterMode> mode) {
  if (n < 1 || depth < 0) throw InvalidInput("refine_to_depth: need n >= 1 and K >= 0");
  const Index finest = n << depth;
  if (depth > 30 || finest > path.grid.intervals() || path.grid.intervals() % finest != 0)
    throw InvalidInput("refine_to_depth: depth " + std::to_string(depth) + " exceeds the path grid");
  const FilterMode wanted =
      mode.value_or(sys.has_input_noise() ? FilterMode::joint_form : FilterMode::initial_state_form);
  if (wanted == FilterMode::initial_state_form && sys.has_input_noise())
    throw InvalidInput("initial-state refinement requires B = 0");

  FilterState st = discrete_state(sys, path, n);
  const Index unit = path.grid.intervals() / finest;
  if (wanted == FilterMode::joint_form) {
    std::vector<Index> candidates;
    for (Index i = 1; i <= finest; ++i)
      if (!st.includes(i * unit)) candidates.push_back(i * unit);
    st = with_joint_form(sys, path, st, std::move(candidates));
  }

  RefinementTrajectory traj;
  traj.points.reserve(static_cast<std::size_t>(finest - n + 1));
  Index j = n;
  traj.points.push_back({j, 0, st.target, 0.0});
  for (int level = 1; level <= depth; ++level) {
    const Index spacing = unit << (depth - level);
    const Index count = n << (level - 1);
    for (Index i = 1; i <= count; ++i) {
      const Index node = (2 * i - 1) * spacing;
      st = refine_step(sys, st, path, path.grid.time(node - spacing), path.grid.time(node),
                       path.grid.time(node + spacing));
      traj.points.push_back({++j, node, st.target, st.increment_trace});
    }
  }
  traj.final_state = std::move(st);
  return traj;
}

GaussianVector oracle_estimate(const LtiSystem& sys, const SamplePath& path,
                               std::span<const double> times) {
  std::vector<Index> nodes;
  nodes.reserve(times.size());
  for (double t : times) nodes.push_back(path.grid.index_of(t));
  const std::vector<double> exact = node_times(path.grid, nodes);
  const JointGaussian jg = joint_covariance(sys, exact, path.grid.horizon);
  if (nodes.empty()) return jg.target();
  std::vector<std::size_t> blocks(nodes.size());
  for (std::size_t k = 0; k < blocks.size(); ++k) blocks[k] = k;
  const GaussianVector post =
      condition(jg.law, block_selection(jg, blocks), stacked_outputs(path, nodes));
  return {post.mean.head(jg.target_dim), post.cov.topLeftCorner(jg.target_dim, jg.target_dim)};
}

Matrix posterior_covariance(const LtiSystem& sys, double horizon, std::span<const double> times) {
  const auto form = sys.has_input_noise() ? SampledFilter::Form::augmented
                                          : SampledFilter::Form::initial_state;
  return SampledFilter(sys, horizon, times, form, false).target_cov();
}

double error_trace(const LtiSystem& sys, double horizon, std::span<const double> coarse,
                   std::span<const double> fine) {
  check_schedule(coarse, horizon);
  check_schedule(fine, horizon);
  const double tol = 1e-12 * horizon;
  std::size_t k = 0;
  for (double t : coarse) {
    while (k < fine.size() && fine[k] < t - tol) ++k;
    if (k == fine.size() || std::abs(fine[k] - t) > tol)
      throw InvalidInput("error_trace: coarse time " + std::to_string(t) + " is not in the fine set");
  }
  return posterior_covariance(sys, horizon, coarse).trace() -
         posterior_covariance(sys, horizon, fine).trace();
}

GaussianVector kalman_bucy_reference(const LtiSystem& sys, const SamplePath& path, Index substeps) {
  sys.validate();
  if (substeps < 1 || path.grid.intervals() % substeps != 0)
    throw InvalidInput("kalman_bucy_reference: substeps must divide the path resolution");
  const double dt = path.grid.horizon / static_cast<double>(substeps);
  const Index stride = path.grid.intervals() / substeps;
  const Matrix bqb = sys.B * sys.Q * sys.B.transpose();
  const Matrix r_inv = sys.R.inverse();
  const Matrix info = sys.C.transpose() * r_inv * sys.C;
  const auto riccati = [&](const Matrix& p) -> Matrix {
    return sys.A * p + p * sys.A.transpose() + bqb - p * info * p;
  };

  Matrix cov = sys.P0;
  Vector mean = sys.m;
  for (Index k = 0; k < substeps; ++k) {
    const Vector dy = path.y.col((k + 1) * stride) - path.y.col(k * stride);
    mean += sys.A * mean * dt + cov * sys.C.transpose() * r_inv * (dy - sys.C * mean * dt);
    const Matrix k1 = riccati(cov);
    const Matrix k2 = riccati(cov + 0.5 * dt * k1);
    const Matrix k3 = riccati(cov + 0.5 * dt * k2);
    const Matrix k4 = riccati(cov + dt * k3);
    cov = symmetrized(cov + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  }
  if (!cov.allFinite() || !mean.allFinite())
    throw NumericalFailure("kalman_bucy_reference: non-finite result");
  return {mean, cov};
}

}  // namespace kfrate
