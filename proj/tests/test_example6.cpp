#include <gtest/gtest.h>

#include <cmath>

#include "mmfg/example6.hpp"
#include "mmfg/sim.hpp"
#include "support.hpp"

using namespace mmfg;
using namespace mmfg::example6;

// Reference values at a = b = c = q = T = 1 from an independent adaptive
// (DOP853, rtol 1e-12) integration of both decoupling systems.
namespace ref {
constexpr double S11_0 = 1.97206635;
constexpr double S12_0 = 0.90755909;
constexpr double S22_0 = 0.54299635;
constexpr double T1_0 = 1.72211434;
constexpr double T2_0 = 0.74141945;
constexpr double gap_x0 = 0.12497600256749042;
constexpr double gap_xbar = 0.0830698177605782;
}  // namespace ref

TEST(ExampleParams, Violations) {
  ExampleParams p = fixtures::unit_example();
  EXPECT_TRUE(p.violations().empty());
  p.q = -1.0;
  EXPECT_EQ(p.violations().at(0), "q must be nonnegative");
  EXPECT_THROW(require_valid(p), ValidationError);
  p = fixtures::unit_example();
  p.T = 0.0;
  EXPECT_EQ(p.violations().at(0), "T must be positive");
  p = fixtures::unit_example();
  p.a = NAN;
  EXPECT_EQ(p.violations().at(0), "parameters must be finite");
  EXPECT_THROW(solve_new_scheme(p, TimeGrid::uniform(1.0, 10)), ValidationError);
}

TEST(NewScheme, MatchesReferenceAndGeneralSolver) {
  const ExampleParams p = fixtures::unit_example();
  const TimeGrid g = TimeGrid::uniform(1.0, 1000);
  const SchemeSolution s = solve_new_scheme(p, g);
  EXPECT_NEAR(s.state[0](0, 0), ref::S11_0, 1e-7);
  EXPECT_NEAR(s.state[0](0, 1), ref::S12_0, 1e-7);
  EXPECT_NEAR(s.state[0](1, 0), ref::S12_0, 1e-7);
  EXPECT_NEAR(s.state[0](1, 1), ref::S22_0, 1e-7);
  // The general propagator route on the embedded model gives the same block.
  const RiccatiSolution gen = solve_equilibrium(embed(p), g);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.n_nodes(); ++i)
    worst = std::max(worst, (gen.S[i].topRows(2) - s.state[i]).cwiseAbs().maxCoeff());
  EXPECT_LE(worst, 1e-8);
  // Terminal control vanishes; the constant coefficient is identically zero.
  EXPECT_EQ(s.control[g.n_steps()].cwiseAbs().maxCoeff(), 0.0);
  for (const auto& k : s.control.values) EXPECT_EQ(k(0, 2), 0.0);
  EXPECT_NEAR(s.control[0](0, 0), -0.5 * ref::S11_0, 1e-7);
}

TEST(NewScheme, StateMatrixIsSymmetric) {
  ExampleParams p;
  p.a = 0.3;
  p.b = 1.7;
  p.c = -1.1;
  p.q = 0.8;
  // Bhat = A' and B, Ahat are symmetric, so S stays symmetric.
  for (const auto& S : solve_new_scheme(p, TimeGrid::uniform(1.0, 200)).state.values)
    EXPECT_LE(std::abs(S(0, 1) - S(1, 0)), 1e-14);
}

TEST(OldScheme, MatchesReferenceAndHasSmallResidual) {
  const ExampleParams p = fixtures::unit_example();
  const TimeGrid g = TimeGrid::uniform(1.0, 1000);
  const SchemeSolution o = solve_old_scheme(p, g);
  EXPECT_NEAR(o.state[0](0, 0), ref::T1_0, 1e-7);
  EXPECT_NEAR(o.state[0](1, 0), ref::T2_0, 1e-7);
  for (const auto& v : o.state.values) EXPECT_EQ(v(2, 0), 0.0);
  EXPECT_LE(old_scheme_residual(p, o), 1e-6);
  // Residual is sensitive to a wrong solution.
  SchemeSolution bad = o;
  for (auto& v : bad.state.values) v(1, 0) *= 1.05;
  EXPECT_GT(old_scheme_residual(p, bad), 1e-3);
}

TEST(SchemeDifference, UnitParametersAgreeWithReference) {
  const SchemeDifference d = scheme_difference(fixtures::unit_example(), TimeGrid::uniform(1.0, 1000));
  EXPECT_FALSE(d.coincide);
  EXPECT_NEAR(d.max_gap_x0, ref::gap_x0, 1e-7);
  EXPECT_NEAR(d.max_gap_xbar, ref::gap_xbar, 1e-7);
  EXPECT_EQ(d.max_gap_const, 0.0);
  EXPECT_DOUBLE_EQ(d.max_coeff_gap, std::max(d.max_gap_x0, d.max_gap_xbar));
  EXPECT_EQ(d.gap_curve[1000](0, 0), 0.0);
  EXPECT_GT(d.gap_curve[0](0, 0), 0.1);
}

// The schemes differ only through the loop X0 -> Xbar -> X0, which needs
// both a and c, and only when the major state is penalised.
TEST(SchemeDifference, CoincideWhenCouplingOrCostVanishes) {
  const TimeGrid g = TimeGrid::uniform(1.0, 400);
  ExampleParams p = fixtures::unit_example();
  p.c = 0.0;
  EXPECT_TRUE(scheme_difference(p, g).coincide);
  p = fixtures::unit_example();
  p.q = 0.0;
  EXPECT_TRUE(scheme_difference(p, g).coincide);
  p = fixtures::unit_example();
  p.a = 0.0;
  EXPECT_TRUE(scheme_difference(p, g).coincide);
  p = fixtures::unit_example();
  p.a = -0.5;
  p.c = 0.5;
  EXPECT_FALSE(scheme_difference(p, g).coincide);
}

TEST(SchemeDifference, GapGrowsWithCoupling) {
  const TimeGrid g = TimeGrid::uniform(1.0, 400);
  double prev = 0.0;
  for (double c : {0.25, 0.5, 1.0, 2.0}) {
    ExampleParams p = fixtures::unit_example();
    p.c = c;
    const double gap = scheme_difference(p, g).max_coeff_gap;
    EXPECT_GT(gap, prev) << c;
    prev = gap;
  }
}

TEST(SchemePaths, NewSchemeMatchesGeneralConditionalMean) {
  ExampleParams p = fixtures::unit_example();
  p.x0_major = 0.5;
  p.x0_minor = -0.3;
  const TimeGrid g = TimeGrid::uniform(1.0, 200);
  const NoiseSource noise(17);
  const SchemePaths sp = simulate_scheme(p, solve_new_scheme(p, g), noise, 3);
  const LqgModel md = embed(p);
  const PathBundle gen = simulate_conditional_mean(md, solve_equilibrium(md, g), g, noise, 3);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    EXPECT_LE((sp.x0.row(r) - gen.paths[k].major).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((sp.xbar.row(r) - gen.paths[k].cond_mean).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((sp.u0.row(r) - gen.paths[k].u0).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(FiniteAggregate, NoiseSumAndDeterministicMinors) {
  ExampleParams p = fixtures::unit_example();
  const TimeGrid g = TimeGrid::uniform(1.0, 50);
  const NoiseSource noise(5);
  const SchemeSolution fresh = solve_new_scheme(p, g);
  const AggregatePaths fin = solve_finite_aggregate(p, 3, fresh, noise, 2);
  // wsum after one step is sqrt(h) times the sum of the first minor draws.
  double s = 0.0;
  for (std::uint64_t j = 1; j <= 3; ++j) {
    double z;
    noise.standard_normals(1, j, 0, 1, &z);
    s += z;
  }
  EXPECT_NEAR(fin.wsum(1, 1), s * std::sqrt(g.step()), 1e-15);
  EXPECT_EQ(fin.wsum(0, 0), 0.0);
  EXPECT_THROW(solve_finite_aggregate(p, 0, fresh, noise, 1), RangeError);

  p.D = 0.0;
  const SchemeSolution f2 = solve_new_scheme(p, g);
  const AggregatePaths a = solve_finite_aggregate(p, 7, f2, noise, 2);
  const SchemePaths l = simulate_scheme(p, f2, noise, 2);
  EXPECT_EQ((a.x0 - l.x0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((a.xN - l.xbar).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Gronwall, ConstantFromSupNorm) {
  const ExampleParams p = fixtures::unit_example();
  const SchemeSolution s = solve_new_scheme(p, TimeGrid::uniform(1.0, 1000));
  Eigen::JacobiSVD<Matrix> svd(s.state[0]);
  // ||S2|| is largest at t = 0 here.
  EXPECT_NEAR(gronwall_constant(p, s), 2.0 + 0.5 * svd.singularValues()(0), 1e-12);
  EXPECT_GT(gronwall_constant(p, s), 3.0);
}

TEST(Pnew, RateRatioAndMonotoneControl) {
  ExampleParams p = fixtures::unit_example();
  p.x0_major = p.x0_minor = 1.0;
  const PnewReport r =
      verify_pnew(p, {4, 16, 64}, TimeGrid::uniform(1.0, 50), NoiseSource(2), 80);
  ASSERT_EQ(r.points.size(), 3u);
  ASSERT_TRUE(r.state_fit.has_value());
  EXPECT_NEAR(r.state_fit->slope, -1.0, 0.25);
  EXPECT_TRUE(r.control_monotone);
  EXPECT_DOUBLE_EQ(r.ratio_bound, std::exp(r.gronwall_K));
  for (const auto& pt : r.points) {
    EXPECT_EQ(pt.frac_ratio_ok, 1.0);
    EXPECT_LE(pt.max_ratio, r.ratio_bound);
    // The old scheme's control stays away from the finite-player one.
    EXPECT_GT(pt.err_control_old.mean, pt.err_control.mean);
  }
  EXPECT_GT(r.points.back().err_control_old.mean, 10.0 * r.points.back().err_control.mean);
}

TEST(Pnew, ZeroMinorNoiseGivesZeroError) {
  ExampleParams p = fixtures::unit_example();
  p.D = 0.0;
  const PnewReport r = verify_pnew(p, {1, 2, 4}, TimeGrid::uniform(1.0, 30), NoiseSource(1), 5);
  for (const auto& pt : r.points) {
    EXPECT_EQ(pt.err_state.mean, 0.0);
    EXPECT_EQ(pt.max_ratio, 0.0);
  }
  EXPECT_FALSE(r.state_fit.has_value());
}
