#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "kfrate/filters.hpp"
#include "support/oracles.hpp"

using namespace kfrate;

namespace {

std::vector<double> node_times(const DyadicGrid& grid, const std::vector<Index>& nodes) {
  std::vector<double> out;
  for (Index n : nodes) out.push_back(grid.time(n));
  return out;
}

void check_same(const GaussianVector& got, const GaussianVector& want, double tol) {
  CHECK(oracle::rel_err(got.mean, want.mean) <= tol);
  CHECK(oracle::max_abs(got.cov - want.cov) <= tol);
}

LtiSystem scalar(double a, double c, double p0, double r) {
  LtiSystem sys;
  sys.A = Matrix::Constant(1, 1, a);
  sys.B = Matrix::Zero(1, 1);
  sys.C = Matrix::Constant(1, 1, c);
  sys.Q = Matrix::Identity(1, 1);
  sys.R = Matrix::Constant(1, 1, r);
  sys.P0 = Matrix::Constant(1, 1, p0);
  sys.m = Vector::Constant(1, 0.4);
  return sys;
}

}  // namespace

TEST_SUITE("filters") {
  TEST_CASE("uninformative output gives the prior push-forward") {
    std::mt19937_64 gen(31);
    LtiSystem sys = oracle::random_system(gen, {.p = 3, .q = 1, .r = 1, .input_noise = true});
    sys.C.setZero();
    const SamplePath path = simulate(sys, DyadicGrid{1.0, 4, 1}, 1);
    const FilterState st = discrete_kf(sys, path, 4);
    const JointGaussian prior = joint_covariance(sys, std::span<const double>{}, 1.0);
    check_same(st.target, prior.target(), 1e-12);
  }

  TEST_CASE("noise-dominated output stays near the prior mean") {
    std::mt19937_64 gen(32);
    LtiSystem sys = oracle::random_system(gen, {.p = 3, .q = 1, .r = 2});
    sys.R = 1e6 * Matrix::Identity(2, 2);
    const SamplePath path = simulate(sys, DyadicGrid{1.0, 8, 0}, 2);
    const FilterState st = discrete_kf(sys, path, 8);
    CHECK((st.target.mean - oracle::expm_taylor(sys.A, 1.0) * sys.m).norm() < 1e-3);
  }

  TEST_CASE("discrete_kf matches the oracle and the quadrature route") {
    std::mt19937_64 gen(33);
    for (bool noisy : {false, true}) {
      const LtiSystem sys = oracle::random_system(gen, {.p = 3, .q = 2, .r = 1, .input_noise = noisy});
      const SamplePath path = simulate(sys, DyadicGrid{1.0, 8, 0}, 3);
      const FilterState st = discrete_kf(sys, path, 8);
      const auto times = uniform_times(1.0, 8);
      check_same(st.target, oracle_estimate(sys, path, times), 1e-8);
      const std::vector<Index> nodes{1, 2, 3, 4, 5, 6, 7, 8};
      const GaussianVector quad = oracle::estimate_by_quadrature(sys, path, nodes);
      CHECK(oracle::rel_err(st.target.mean, quad.mean) < 1e-7);
      CHECK(oracle::max_abs(st.target.cov - quad.cov) < 1e-7);
    }
  }

  TEST_CASE("oracle equivalence over random shapes") {
    std::mt19937_64 gen(34);
    std::uniform_int_distribution<int> pick_p(1, 4);
    std::uniform_int_distribution<int> pick_qr(1, 2);
    for (int trial = 0; trial < 12; ++trial) {
      const oracle::SystemShape shape{.p = pick_p(gen), .q = pick_qr(gen), .r = pick_qr(gen),
                                      .input_noise = trial % 2 == 1};
      const LtiSystem sys = oracle::random_system(gen, shape);
      const SamplePath path = simulate(sys, DyadicGrid{0.9, 8, 0}, 100 + trial);
      for (Index n : {1, 2, 4, 8}) {
        const FilterState st = discrete_kf(sys, path, n);
        check_same(st.target, oracle_estimate(sys, path, uniform_times(0.9, n)), 1e-8);
      }
    }
  }

  TEST_CASE("both sampled filter forms agree without input noise") {
    std::mt19937_64 gen(35);
    const LtiSystem sys = oracle::random_system(gen, {.p = 4, .q = 1, .r = 2});
    const SamplePath path = simulate(sys, DyadicGrid{1.0, 2, 4}, 4);
    const auto times = uniform_times(1.0, 32);
    const GaussianVector aug = SampledFilter(sys, 1.0, times, SampledFilter::Form::augmented).estimate(path);
    const GaussianVector ini = SampledFilter(sys, 1.0, times, SampledFilter::Form::initial_state).estimate(path);
    check_same(aug, ini, 1e-10);
    LtiSystem noisy = sys;
    noisy.B.setOnes();
    CHECK_THROWS_AS(SampledFilter(noisy, 1.0, times, SampledFilter::Form::initial_state), InvalidInput);
    const SampledFilter no_gains(sys, 1.0, times, SampledFilter::Form::augmented, false);
    CHECK_THROWS_AS(no_gains.estimate(path), InvalidInput);
    CHECK(oracle::max_abs(no_gains.target_cov() - aug.cov) == 0.0);
  }

  TEST_CASE("discrete_kf rejects unrepresentable n") {
    std::mt19937_64 gen(36);
    const LtiSystem sys = oracle::random_system(gen, {.p = 2, .q = 1, .r = 1});
    const SamplePath path = simulate(sys, DyadicGrid{1.0, 1, 3}, 5);
    CHECK_THROWS_AS(discrete_kf(sys, path, 3), InvalidInput);
    CHECK_THROWS_AS(discrete_kf(sys, path, 16), InvalidInput);
  }

  TEST_CASE("refine_step equals the oracle on the enlarged grid") {
    std::mt19937_64 gen(37);
    for (bool noisy : {false, true}) {
      const LtiSystem sys = oracle::random_system(gen, {.p = 3, .q = 1, .r = 2, .input_noise = noisy});
      const DyadicGrid grid{1.0, 4, 2};
      const SamplePath path = simulate(sys, grid, 6);
      FilterState st = discrete_kf(sys, path, 4);
      if (!noisy) {
        CHECK(st.mode == FilterMode::initial_state_form);
      } else {
        REQUIRE(st.mode == FilterMode::joint_form);
        CHECK(st.joint_nodes.size() == 12);
      }
      // Node 10 lies between included nodes 8 and 12.
      st = refine_step(sys, st, path, grid.time(8), grid.time(10), grid.time(12));
      const auto times = node_times(grid, {4, 8, 10, 12, 16});
      check_same(st.target, oracle_estimate(sys, path, times), 1e-8);
      CHECK(st.includes(10));
      // Node 9 now lies between 8 and 10; the left end may be the origin.
      st = refine_step(sys, st, path, grid.time(8), grid.time(9), grid.time(10));
      st = refine_step(sys, st, path, 0.0, grid.time(1), grid.time(4));
      check_same(st.target, oracle_estimate(sys, path, node_times(grid, {1, 4, 8, 9, 10, 12, 16})), 1e-8);

      CHECK_THROWS_AS(refine_step(sys, st, path, grid.time(8), grid.time(9), grid.time(10)), InvalidInput);
      CHECK_THROWS_AS(refine_step(sys, st, path, grid.time(4), grid.time(6), grid.time(10)), InvalidInput);
      CHECK_THROWS_AS(refine_step(sys, st, path, grid.time(12), grid.time(11), grid.time(10)), InvalidInput);
      CHECK_THROWS_AS(refine_step(sys, st, path, grid.time(1), grid.time(3), grid.time(5)), InvalidInput);
    }
  }

  TEST_CASE("refine_step with C = 0 leaves the state unchanged") {
    std::mt19937_64 gen(38);
    LtiSystem sys = oracle::random_system(gen, {.p = 2, .q = 1, .r = 1});
    sys.C.setZero();
    const DyadicGrid grid{1.0, 2, 1};
    const SamplePath path = simulate(sys, grid, 7);
    const FilterState st = discrete_kf(sys, path, 2);
    const FilterState next = refine_step(sys, st, path, 0.0, grid.time(1), grid.time(2));
    check_same(next.target, st.target, 1e-14);
    CHECK(next.increment_trace == 0.0);
  }

  TEST_CASE("zero innovation keeps the mean and still shrinks the covariance") {
    std::mt19937_64 gen(39);
    for (bool noisy : {false, true}) {
      const LtiSystem sys = oracle::random_system(gen, {.p = 3, .q = 1, .r = 1, .input_noise = noisy});
      const DyadicGrid grid{1.0, 2, 1};
      SamplePath path = simulate(sys, grid, 8);
      const FilterState st = discrete_kf(sys, path, 2);
      const double ta = grid.time(2);
      const double tn = grid.time(3);
      const double tb = grid.time(4);
      const Vector interp = 0.5 * (path.y.col(2) + path.y.col(4));
      if (noisy) {
        REQUIRE(st.joint);
        path.y.col(3) = st.joint->law.mean.segment(st.joint->offset(1), 1);
      } else {
        path.y.col(3) = interp + c_tilde(sys, ta, tn, tb).matrix * st.initial.mean;
      }
      const FilterState next = refine_step(sys, st, path, ta, tn, tb);
      CHECK((next.target.mean - st.target.mean).norm() < 1e-12 * (1.0 + st.target.mean.norm()));
      CHECK(next.target.cov.trace() < st.target.cov.trace());
      CHECK(next.increment_trace > 0.0);
    }
  }

  TEST_CASE("refine_to_depth") {
    std::mt19937_64 gen(40);
    for (bool noisy : {false, true}) {
      const LtiSystem sys = oracle::random_system(gen, {.p = 3, .q = 1, .r = 1, .input_noise = noisy});
      const SamplePath path = simulate(sys, DyadicGrid{1.0, 2, 3}, 9);
      const RefinementTrajectory k0 = refine_to_depth(sys, path, 2, 0);
      REQUIRE(k0.points.size() == 1);
      check_same(k0.points[0].target, discrete_kf(sys, path, 2).target, 1e-12);

      const RefinementTrajectory k1 = refine_to_depth(sys, path, 2, 1);
      REQUIRE(k1.points.size() == 3);
      check_same(k1.points.back().target, discrete_kf(sys, path, 4).target, 1e-8);

      const RefinementTrajectory k3 = refine_to_depth(sys, path, 2, 3);
      REQUIRE(k3.points.size() == 15);
      CHECK(k3.points.front().j == 2);
      CHECK(k3.points.back().j == 16);
      // Level by level, left to right: nodes 4, 12, then 2, 6, 10, 14.
      const std::vector<Index> first_added{4, 12, 2, 6, 10, 14};
      for (std::size_t k = 0; k < first_added.size(); ++k) CHECK(k3.points[k + 1].added_node == first_added[k]);
      check_same(k3.points.back().target, discrete_kf(sys, path, 16).target, 1e-8);
      for (std::size_t k = 1; k < k3.points.size(); ++k)
        CHECK(k3.points[k].target.cov.trace() <= k3.points[k - 1].target.cov.trace() + 1e-12);

      CHECK_THROWS_AS(refine_to_depth(sys, path, 2, 4), InvalidInput);
      CHECK_THROWS_AS(refine_to_depth(sys, path, 3, 1), InvalidInput);
      if (noisy) CHECK_THROWS_AS(refine_to_depth(sys, path, 2, 1, FilterMode::initial_state_form), InvalidInput);
    }
  }

  TEST_CASE("trace is non-increasing along refinement") {
    std::mt19937_64 gen(41);
    for (int trial = 0; trial < 20; ++trial) {
      const LtiSystem sys = oracle::random_system(
          gen, {.p = 1 + trial % 4, .q = 1, .r = 1 + trial % 2, .input_noise = trial % 3 == 0});
      const SamplePath path = simulate(sys, DyadicGrid{1.0, 1, 4}, 200 + trial);
      const RefinementTrajectory traj = refine_to_depth(sys, path, 1, 4);
      for (std::size_t k = 1; k < traj.points.size(); ++k)
        CHECK(traj.points[k].target.cov.trace() <= traj.points[k - 1].target.cov.trace() + 1e-12);
    }
  }

  TEST_CASE("final estimate does not depend on insertion order") {
    std::mt19937_64 gen(42);
    for (bool noisy : {false, true}) {
      const LtiSystem sys = oracle::random_system(gen, {.p = 3, .q = 1, .r = 1, .input_noise = noisy});
      const DyadicGrid grid{1.0, 2, 2};
      const SamplePath path = simulate(sys, grid, 10);
      const RefinementTrajectory fig_order = refine_to_depth(sys, path, 2, 2);
      // Right to left within each level.
      FilterState st = discrete_kf(sys, path, 2);
      if (noisy) st = with_joint_form(sys, path, st, {1, 2, 3, 5, 6, 7});
      for (Index node : {6, 2}) st = refine_step(sys, st, path, grid.time(node - 2), grid.time(node), grid.time(node + 2));
      for (Index node : {7, 5, 3, 1}) st = refine_step(sys, st, path, grid.time(node - 1), grid.time(node), grid.time(node + 1));
      check_same(st.target, fig_order.points.back().target, 1e-9);
    }
  }

  TEST_CASE("telescope identity") {
    std::mt19937_64 gen(43);
    for (bool noisy : {false, true}) {
      const LtiSystem sys = oracle::random_system(gen, {.p = 3, .q = 1, .r = 1, .input_noise = noisy});
      const SamplePath path = simulate(sys, DyadicGrid{1.0, 2, 4}, 11);
      const RefinementTrajectory traj = refine_to_depth(sys, path, 2, 4);
      double sum = 0.0;
      for (const auto& pt : traj.points) sum += pt.increment_trace;
      CHECK(sum == doctest::Approx(error_trace(sys, 1.0, uniform_times(1.0, 2), uniform_times(1.0, 32))).epsilon(1e-8));
    }
  }

  TEST_CASE("interpolant-differenced noise is independent of included outputs") {
    std::mt19937_64 gen(44);
    const LtiSystem sys = oracle::random_system(gen, {.p = 3, .q = 1, .r = 2});
    const std::vector<double> times{0.125, 0.25, 0.375, 0.5, 0.75, 1.0};
    const JointGaussian jg = joint_covariance(sys, times, 1.0);
    // y at 0.375 differenced against 0.25 and 0.5.
    const ObservationRow row = c_tilde(sys, 0.25, 0.375, 0.5);
    Matrix pick = Matrix::Zero(2, jg.law.dim());
    pick.block(0, jg.offset(2), 2, 2).setIdentity();
    pick.block(0, jg.offset(1), 2, 2) = -0.5 * Matrix::Identity(2, 2);
    pick.block(0, jg.offset(3), 2, 2) = -0.5 * Matrix::Identity(2, 2);
    for (std::size_t i : {0, 1, 3, 4, 5}) {
      const double ti = times[i];
      const Matrix gi = sys.C * oracle::psi_taylor(sys.A, ti);
      const Matrix cross = pick * jg.law.cov.middleCols(jg.offset(i), 2);
      CHECK(oracle::max_abs(cross - row.matrix * sys.P0 * gi.transpose()) < 1e-12);
    }
    const Matrix var = pick * jg.law.cov * pick.transpose();
    CHECK(oracle::max_abs(var - row.matrix * sys.P0 * row.matrix.transpose() - row.noise_cov) < 1e-12);
  }

  TEST_CASE("covariances do not depend on observed values") {
    std::mt19937_64 gen(45);
    for (bool noisy : {false, true}) {
      const LtiSystem sys = oracle::random_system(gen, {.p = 3, .q = 1, .r = 1, .input_noise = noisy});
      const DyadicGrid grid{1.0, 2, 2};
      const auto times = uniform_times(1.0, 4);
      Matrix kf_cov;
      Matrix oracle_cov;
      Matrix refine_cov;
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const SamplePath path = simulate(sys, grid, seed);
        const Matrix a = discrete_kf(sys, path, 4).target.cov;
        const Matrix b = oracle_estimate(sys, path, times).cov;
        const Matrix c = refine_to_depth(sys, path, 2, 2).points.back().target.cov;
        if (seed == 0) {
          kf_cov = a;
          oracle_cov = b;
          refine_cov = c;
        }
        CHECK(oracle::max_abs(a - kf_cov) <= 1e-12);
        CHECK(oracle::max_abs(b - oracle_cov) <= 1e-12);
        CHECK(oracle::max_abs(c - refine_cov) <= 1e-12);
      }
    }
  }

  TEST_CASE("oracle_estimate") {
    std::mt19937_64 gen(46);
    const LtiSystem sys = oracle::random_system(gen, {.p = 2, .q = 1, .r = 1, .input_noise = true});
    const DyadicGrid grid{1.0, 4, 0};
    const SamplePath path = simulate(sys, grid, 12);
    check_same(oracle_estimate(sys, path, std::span<const double>{}),
               joint_covariance(sys, std::span<const double>{}, 1.0).target(), 0.0);
    CHECK_THROWS_AS(oracle_estimate(sys, path, std::vector<double>{0.3}), InvalidInput);

    // Constant state observed almost exactly at T: E[x | y(T)] ~ C^{-1} y(T) / T.
    LtiSystem flat;
    flat.A = Matrix::Zero(2, 2);
    flat.B = Matrix::Zero(2, 1);
    flat.C = (Matrix(2, 2) << 1.0, 0.5, -0.3, 2.0).finished();
    flat.Q = Matrix::Identity(1, 1);
    flat.R = 1e-12 * Matrix::Identity(2, 2);
    flat.P0 = Matrix::Identity(2, 2);
    flat.m = Vector::Zero(2);
    const SamplePath fp = simulate(flat, DyadicGrid{2.0, 1, 0}, 13);
    const GaussianVector est = oracle_estimate(flat, fp, std::vector<double>{2.0});
    CHECK((flat.C * est.mean * 2.0 - fp.y.col(1)).norm() < 1e-4);
  }

  TEST_CASE("error_trace") {
    std::mt19937_64 gen(47);
    const LtiSystem sys = oracle::random_system(gen, {.p = 3, .q = 1, .r = 1, .input_noise = true});
    const auto t4 = uniform_times(1.0, 4);
    const auto t8 = uniform_times(1.0, 8);
    const auto t16 = uniform_times(1.0, 16);
    CHECK(error_trace(sys, 1.0, t8, t8) == 0.0);
    CHECK(error_trace(sys, 1.0, t4, t16) ==
          doctest::Approx(error_trace(sys, 1.0, t4, t8) + error_trace(sys, 1.0, t8, t16)).epsilon(1e-9));
    CHECK(error_trace(sys, 1.0, t4, t16) >= -1e-10);
    CHECK_THROWS_AS(error_trace(sys, 1.0, uniform_times(1.0, 3), t8), InvalidInput);
    CHECK_THROWS_AS(error_trace(sys, 1.0, t8, t4), InvalidInput);
  }

  TEST_CASE("error_trace matches Monte Carlo") {
    std::mt19937_64 gen(48);
    const LtiSystem sys = oracle::random_system(gen, {.p = 2, .q = 1, .r = 1, .input_noise = true});
    const auto coarse = uniform_times(1.0, 4);
    const auto fine = uniform_times(1.0, 256);
    const SampledFilter fc(sys, 1.0, coarse, SampledFilter::Form::augmented);
    const SampledFilter ff(sys, 1.0, fine, SampledFilter::Form::augmented);
    double sum = 0.0;
    double sum_sq = 0.0;
    const int paths = 4000;
    for (int s = 0; s < paths; ++s) {
      const SamplePath path = simulate(sys, DyadicGrid{1.0, 4, 6}, 5000 + s);
      const double e = (fc.estimate(path).mean - ff.estimate(path).mean).squaredNorm();
      sum += e;
      sum_sq += e * e;
    }
    const double mean = sum / paths;
    const double se = std::sqrt((sum_sq / paths - mean * mean) / (paths - 1));
    CHECK(std::abs(mean - error_trace(sys, 1.0, coarse, fine)) <= 3.0 * se);
  }

  TEST_CASE("Kalman-Bucy reference") {
    SUBCASE("C = 0 reduces to the Lyapunov equation") {
      std::mt19937_64 gen(49);
      LtiSystem sys = oracle::random_system(gen, {.p = 2, .q = 1, .r = 1, .input_noise = true});
      sys.C.setZero();
      const SamplePath path = simulate(sys, DyadicGrid{1.0, 1, 8}, 14);
      const GaussianVector kb = kalman_bucy_reference(sys, path, 256);
      CHECK(oracle::max_abs(kb.cov - joint_covariance(sys, std::span<const double>{}, 1.0).target().cov) < 1e-8);
    }
    SUBCASE("scalar closed form") {
      const double a = -0.8;
      const double c = 1.5;
      const double p0 = 2.0;
      const double r = 0.5;
      const LtiSystem sys = scalar(a, c, p0, r);
      const SamplePath path = simulate(sys, DyadicGrid{1.0, 1, 8}, 15);
      const GaussianVector kb = kalman_bucy_reference(sys, path, 256);
      // u = 1/p solves u' = -2 a u + c^2 / R.
      const double t = 1.0;
      const double u = std::exp(-2 * a * t) / p0 + (c * c / r) * (1 - std::exp(-2 * a * t)) / (2 * a);
      CHECK(kb.cov(0, 0) == doctest::Approx(1.0 / u).epsilon(1e-6));
      CHECK_THROWS_AS(kalman_bucy_reference(sys, path, 3), InvalidInput);
    }
    SUBCASE("agrees with the deep refinement limit") {
      std::mt19937_64 gen(50);
      for (int trial = 0; trial < 3; ++trial) {
        const LtiSystem sys = oracle::random_system(gen, {.p = 2, .q = 1, .r = 1, .input_noise = true});
        const SamplePath path = simulate(sys, DyadicGrid{1.0, 1, 10}, 16);
        const double kb = kalman_bucy_reference(sys, path, 1024).cov.trace();
        const double deep = posterior_covariance(sys, 1.0, uniform_times(1.0, 1024)).trace();
        CHECK(std::abs(kb - deep) <= 0.02 * deep);
      }
    }
  }
}
