#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "kfrate/gaussian.hpp"
#include "kfrate/lti_model.hpp"

namespace kfrate {

// Nodes t_i = i * T / (base_n * 2^depth), i = 0 .. base_n * 2^depth.
struct DyadicGrid {
  double horizon = 1.0;
  Index base_n = 1;
  int depth = 0;

  Index intervals() const { return base_n << depth; }
  double time(Index i) const {
    return horizon * static_cast<double>(i) / static_cast<double>(intervals());
  }
  double step() const { return horizon / static_cast<double>(intervals()); }

  // Node index of t; InvalidInput if t is not a node (to 1e-9 * T).
  Index index_of(double t) const;

  // Indices of the n-subgrid i * T / n, i = 1..n. n must divide intervals().
  std::vector<Index> subgrid(Index n) const;

  void validate() const;
};

// One realization on a grid. Columns are nodes 0..N.
struct SamplePath {
  DyadicGrid grid;
  Vector x;      // initial state draw
  Matrix z;      // p x (N+1)
  Matrix zeta;   // p x (N+1), running integral of z
  Matrix w;      // r x (N+1), output Brownian motion
  Matrix y;      // r x (N+1), y = C zeta + w
  std::uint64_t seed = 0;

  Vector y_at(Index node) const { return y.col(node); }
};

// Counter-based randomness: the draws for (seed, node, channel) do not depend
// on any other draw or on call order.
namespace rng {

inline constexpr std::uint64_t kChannelInitial = 0;
inline constexpr std::uint64_t kChannelInput = 1;
inline constexpr std::uint64_t kChannelOutput = 2;

// SplitMix64 as a UniformRandomBitGenerator.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;
  explicit SplitMix64(std::uint64_t state) : state_(state) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

 private:
  std::uint64_t state_;
};

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t node, std::uint64_t channel);

Vector standard_normals(std::uint64_t seed, std::uint64_t node, std::uint64_t channel, Index count);

}  // namespace rng

// Exact node-to-node sampling of (z, zeta) through the augmented transition
// moments; w from independent N(0, R dt) increments.
SamplePath simulate(const LtiSystem& sys, const DyadicGrid& grid, std::uint64_t seed);

// Law of (z(T), y(t_1), ..., y(t_m)), block layout [p | r | r | ...].
struct JointGaussian {
  GaussianVector law;
  Index target_dim = 0;
  Index block_dim = 0;
  std::vector<double> times;

  Index offset(std::size_t k) const { return target_dim + static_cast<Index>(k) * block_dim; }
  GaussianVector target() const;
};

// times strictly increasing in (0, T].
JointGaussian joint_covariance(const LtiSystem& sys, std::span<const double> times, double horizon);

// CSV with header t,z_1..z_p,y_1..y_r and one row per node.
void write_path_csv(std::ostream& out, const SamplePath& path);

}  // namespace kfrate
