#include "kfrate/path_sim.hpp"

#include <cmath>
#include <ostream>
#include <random>
#include <string>

#include "kfrate/csv.hpp"

namespace kfrate {

void DyadicGrid::validate() const {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidInput("grid: T must be > 0");
  if (base_n < 1) throw InvalidInput("grid: base_n must be >= 1");
  if (depth < 0 || depth > 30) throw InvalidInput("grid: depth must be in [0, 30]");
}

Index DyadicGrid::index_of(double t) const {
  const double scaled = t / horizon * static_cast<double>(intervals());
  const double nearest = std::round(scaled);
  if (nearest < 0.0 || nearest > static_cast<double>(intervals()) ||
      std::abs(time(static_cast<Index>(nearest)) - t) > 1e-9 * horizon)
    throw InvalidInput("time " + std::to_string(t) + " is not a grid node");
  return static_cast<Index>(nearest);
}

std::vector<Index> DyadicGrid::subgrid(Index n) const {
  if (n < 1 || intervals() % n != 0)
    throw InvalidInput("n = " + std::to_string(n) + " is not representable on a grid with " +
                       std::to_string(intervals()) + " intervals");
  const Index stride = intervals() / n;
  std::vector<Index> nodes;
  nodes.reserve(static_cast<std::size_t>(n));
  for (Index i = 1; i <= n; ++i) nodes.push_back(i * stride);
  return nodes;
}

namespace rng {

SplitMix64::result_type SplitMix64::operator()() {
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t node, std::uint64_t channel) {
  SplitMix64 mix(seed);
  std::uint64_t key = mix();
  key ^= SplitMix64(node + 0x632be59bd9b4e019ULL)();
  key = SplitMix64(key)();
  key ^= SplitMix64(channel * 0xd1b54a32d192ed03ULL + 1)();
  return SplitMix64(key)();
}

Vector standard_normals(std::uint64_t seed, std::uint64_t node, std::uint64_t channel, Index count) {
  SplitMix64 gen(stream_key(seed, node, channel));
  std::normal_distribution<double> normal;
  Vector out(count);
  for (Index i = 0; i < count; ++i) out(i) = normal(gen);
  return out;
}

}  // namespace rng

SamplePath simulate(const LtiSystem& sys, const DyadicGrid& grid, std::uint64_t seed) {
  sys.validate();
  grid.validate();
  const Index p = sys.p();
  const Index r = sys.r();
  const Index n = grid.intervals();
  const double dt = grid.step();

  const LtiSystem aug = augmented(sys);
  const TransitionMoments tm = transition_moments(aug, dt);
  const Matrix input_root = psd_sqrt(tm.qd);
  const Matrix output_root = psd_sqrt(sys.R * dt);

  SamplePath path;
  path.grid = grid;
  path.seed = seed;
  path.x = sys.m + psd_sqrt(sys.P0) * rng::standard_normals(seed, 0, rng::kChannelInitial, p);
  path.z.resize(p, n + 1);
  path.zeta.resize(p, n + 1);
  path.w.resize(r, n + 1);
  path.y.resize(r, n + 1);

  Vector s = Vector::Zero(2 * p);
  s.head(p) = path.x;
  path.z.col(0) = path.x;
  path.zeta.col(0).setZero();
  path.w.col(0).setZero();
  path.y.col(0).setZero();
  for (Index i = 1; i <= n; ++i) {
    const auto node = static_cast<std::uint64_t>(i);
    s = tm.phi * s + input_root * rng::standard_normals(seed, node, rng::kChannelInput, 2 * p);
    path.z.col(i) = s.head(p);
    path.zeta.col(i) = s.tail(p);
    path.w.col(i) = path.w.col(i - 1) +
                    output_root * rng::standard_normals(seed, node, rng::kChannelOutput, r);
    path.y.col(i) = sys.C * path.zeta.col(i) + path.w.col(i);
  }
  if (!path.y.allFinite() || !path.z.allFinite()) throw NumericalFailure("simulate: non-finite path");
  return path;
}

GaussianVector JointGaussian::target() const {
  return {law.mean.head(target_dim), law.cov.topLeftCorner(target_dim, target_dim)};
}

JointGaussian joint_covariance(const LtiSystem& sys, std::span<const double> times, double horizon) {
  sys.validate();
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidInput("joint_covariance: T must be > 0");
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!(times[k] > 0.0) || times[k] > horizon)
      throw InvalidInput("joint_covariance: time " + std::to_string(times[k]) + " outside (0, T]");
    if (k > 0 && !(times[k] > times[k - 1]))
      throw InvalidInput("joint_covariance: times must be strictly increasing");
  }
  const Index p = sys.p();
  const Index r = sys.r();
  const auto m = static_cast<Index>(times.size());
  const LtiSystem aug = augmented(sys);
  const Matrix& c_aug = aug.C;

  // Transitions between consecutive times, with index m the final hop to T.
  std::vector<Matrix> hop(static_cast<std::size_t>(m) + 1);
  std::vector<Matrix> second_moment(static_cast<std::size_t>(m) + 1);
  std::vector<Vector> mean(static_cast<std::size_t>(m) + 1);
  Matrix sigma = aug.P0;
  Vector mu = aug.m;
  double prev = 0.0;
  for (Index k = 0; k <= m; ++k) {
    const double t = k < m ? times[static_cast<std::size_t>(k)] : horizon;
    const auto uk = static_cast<std::size_t>(k);
    if (t > prev) {
      const TransitionMoments tm = transition_moments(aug, t - prev);
      hop[uk] = tm.phi;
      sigma = symmetrized(tm.phi * sigma * tm.phi.transpose() + tm.qd);
      mu = tm.phi * mu;
    } else {
      hop[uk] = Matrix::Identity(2 * p, 2 * p);
    }
    second_moment[uk] = sigma;
    mean[uk] = mu;
    prev = t;
  }

  JointGaussian out;
  out.target_dim = p;
  out.block_dim = r;
  out.times.assign(times.begin(), times.end());
  const Index dim = p + r * m;
  out.law.mean.resize(dim);
  out.law.cov.setZero(dim, dim);
  out.law.mean.head(p) = mean.back().head(p);
  out.law.cov.topLeftCorner(p, p) = second_moment.back().topLeftCorner(p, p);

  for (Index i = 0; i < m; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const Index oi = out.offset(ui);
    out.law.mean.segment(oi, r) = c_aug * mean[ui];
    // Cov(s(t_j), y(t_i)) without output noise, carried forward in j.
    Matrix carry = second_moment[ui] * c_aug.transpose();
    out.law.cov.block(oi, oi, r, r) = c_aug * carry + times[ui] * sys.R;
    for (Index j = i + 1; j <= m; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      carry = hop[uj] * carry;
      if (j < m) {
        const Index oj = out.offset(uj);
        out.law.cov.block(oj, oi, r, r) = c_aug * carry + times[ui] * sys.R;
        out.law.cov.block(oi, oj, r, r) = out.law.cov.block(oj, oi, r, r).transpose();
      }
    }
    out.law.cov.block(0, oi, p, r) = carry.topRows(p);
    out.law.cov.block(oi, 0, r, p) = carry.topRows(p).transpose();
  }
  out.law.cov = symmetrized(out.law.cov);
  return out;
}

void write_path_csv(std::ostream& out, const SamplePath& path) {
  const Index p = path.z.rows();
  const Index r = path.y.rows();
  std::vector<std::string> header{"t"};
  for (Index i = 1; i <= p; ++i) header.push_back("z_" + std::to_string(i));
  for (Index i = 1; i <= r; ++i) header.push_back("y_" + std::to_string(i));
  csv::write_header(out, header);
  std::vector<double> row(static_cast<std::size_t>(1 + p + r));
  for (Index node = 0; node < path.z.cols(); ++node) {
    row[0] = path.grid.time(node);
    for (Index i = 0; i < p; ++i) row[static_cast<std::size_t>(1 + i)] = path.z(i, node);
    for (Index i = 0; i < r; ++i) row[static_cast<std::size_t>(1 + p + i)] = path.y(i, node);
    csv::write_row(out, row);
  }
}

}  // namespace kfrate
