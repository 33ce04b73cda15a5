#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "mmfg/experiments.hpp"
#include "support.hpp"

using namespace mmfg;

namespace {

RiccatiSolution solve_on(const LqgModel& md, std::size_t n_steps) {
  return solve_equilibrium(md, TimeGrid::uniform(md.T, n_steps));
}

}  // namespace

// --- fitting helpers ------------------------------------------------------

TEST(FitRate, ExactPowerLaw) {
  const std::vector<double> n = {8, 16, 32, 64};
  std::vector<double> e;
  for (double x : n) e.push_back(3.0 * std::pow(x, -0.75));
  const RateFit f = fit_rate(n, e);
  EXPECT_NEAR(f.slope, -0.75, 1e-12);
  EXPECT_NEAR(std::exp(f.intercept), 3.0, 1e-12);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
  EXPECT_NEAR(f.predict(128.0), 3.0 * std::pow(128.0, -0.75), 1e-12);
}

TEST(FitRate, RejectsBadInput) {
  EXPECT_THROW(fit_rate({1, 2}, {1, 2}), RangeError);
  EXPECT_THROW(fit_rate({1, 2, 3}, {1, 2}), DimensionError);
  EXPECT_THROW(fit_rate({1, 2, 3}, {1, 0, 2}), RangeError);
  EXPECT_THROW(fit_rate({2, 2, 2}, {1, 2, 3}), RangeError);
}

TEST(MonotoneWithin, UsesCombinedStandardErrors) {
  EXPECT_TRUE(monotone_within({{1.0, 0.1, 10}, {0.5, 0.1, 10}, {0.2, 0.1, 10}}));
  // A rise of 0.2 against a slack of 2 * sqrt(2) * 0.1 = 0.283 is tolerated.
  EXPECT_TRUE(monotone_within({{1.0, 0.1, 10}, {1.2, 0.1, 10}}));
  EXPECT_FALSE(monotone_within({{1.0, 0.1, 10}, {1.3, 0.1, 10}}));
  EXPECT_TRUE(monotone_within({}));
}

TEST(Envelope, RecoversConstantAndHandlesNoPositiveGain) {
  const std::vector<int> Ns = {8, 32, 128};
  std::vector<double> g;
  for (int N : Ns) g.push_back(0.4 * std::pow(N, -0.2));
  EXPECT_NEAR(fit_envelope_constant(Ns, g, -0.2), 0.4, 1e-12);
  EXPECT_EQ(fit_envelope_constant(Ns, {-1e-4, -2e-4, 0.0}, -0.2), 0.0);
  // Non-positive entries are ignored.
  EXPECT_NEAR(fit_envelope_constant(Ns, {g[0], -1.0, g[2]}, -0.2), 0.4, 1e-12);
}

// --- chaos ----------------------------------------------------------------

TEST(Chaos, DeterministicMinorsGiveZeroError) {
  LqgModel md = fixtures::random_model(41, 1);
  md.D.setZero();
  const auto res = chaos_experiment(md, solve_on(md, 40), {2, 4, 8}, 5, 1);
  ASSERT_EQ(res.points.size(), 3u);
  for (const auto& p : res.points) {
    EXPECT_LE(p.major_sup_sq.mean, 1e-24);
    EXPECT_LE(p.minor1_sup_sq.mean, 1e-24);
    ASSERT_TRUE(p.w2_sup_sq.has_value());
    EXPECT_LE(p.w2_sup_sq->mean, 1e-24);
  }
}

TEST(Chaos, ErrorsDecreaseForExample) {
  const LqgModel md = example6::embed(fixtures::unit_example());
  const auto res = chaos_experiment(md, solve_on(md, 50), {4, 16, 64}, 60, 3);
  EXPECT_TRUE(res.minor1_monotone);
  EXPECT_LT(res.minor1_fit.slope, -0.6);
  EXPECT_GT(res.minor1_fit.slope, -1.4);
  ASSERT_TRUE(res.w2_fit.has_value());
  EXPECT_LT(res.w2_fit->slope, -0.5);
  for (const auto& p : res.points) EXPECT_EQ(p.minor1_sup_sq.samples, 60u);
}

TEST(Chaos, HigherDimensionSkipsW2) {
  const LqgModel md = fixtures::random_model(42, 2);
  const auto res = chaos_experiment(md, solve_on(md, 20), {2, 4}, 3, 1);
  EXPECT_TRUE(res.w2_error.has_value());
  for (const auto& p : res.points) EXPECT_FALSE(p.w2_sup_sq.has_value());
}

TEST(Chaos, RejectsBadSizeLists) {
  const LqgModel md = fixtures::random_model(43, 1);
  const auto sol = solve_on(md, 10);
  EXPECT_THROW(chaos_experiment(md, sol, {1, 4}, 2, 1), RangeError);
  EXPECT_THROW(chaos_experiment(md, sol, {8, 4}, 2, 1), RangeError);
  EXPECT_THROW(chaos_experiment(md, sol, {}, 2, 1), RangeError);
}

TEST(Chaos, IndependentOfWorkerCount) {
  const LqgModel md = fixtures::random_model(44, 1);
  const auto sol = solve_on(md, 30);
  ::setenv("MMFG_THREADS", "1", 1);
  const auto a = chaos_experiment(md, sol, {2, 4, 8}, 7, 5);
  ::setenv("MMFG_THREADS", "3", 1);
  const auto b = chaos_experiment(md, sol, {2, 4, 8}, 7, 5);
  ::unsetenv("MMFG_THREADS");
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(a.points[k].minor1_sup_sq.mean, b.points[k].minor1_sup_sq.mean);
    EXPECT_EQ(a.points[k].w2_sup_sq->std_error, b.points[k].w2_sup_sq->std_error);
  }
  EXPECT_EQ(a.minor1_fit.slope, b.minor1_fit.slope);
}

// --- empirical measure rate -----------------------------------------------

TEST(MeasureRate, FullReferenceGivesZeroAndRateIsNegative) {
  const LqgModel md = example6::embed(fixtures::unit_example());
  const auto sol = solve_on(md, 20);
  const auto res = empirical_measure_rate(md, sol, {4, 16, 64}, 30, 2, 64);
  EXPECT_EQ(res.n_ref, 64);
  EXPECT_EQ(res.points.back().w2_sq.mean, 0.0);
  EXPECT_GT(res.points[0].w2_sq.mean, res.points[1].w2_sq.mean);
  const auto auto_ref = empirical_measure_rate(md, sol, {2, 4, 8}, 10, 2);
  EXPECT_EQ(auto_ref.n_ref, 128);
  EXPECT_LT(auto_ref.fit.slope, -0.5);
}

TEST(MeasureRate, RejectsUnsupportedInputs) {
  const LqgModel md2 = fixtures::random_model(45, 2);
  EXPECT_THROW(empirical_measure_rate(md2, solve_on(md2, 10), {2, 4, 8}, 2, 1), UnsupportedError);
  const LqgModel md = fixtures::random_model(46, 1);
  const auto sol = solve_on(md, 10);
  EXPECT_THROW(empirical_measure_rate(md, sol, {3, 4}, 2, 1, 8), RangeError);
  EXPECT_THROW(empirical_measure_rate(md, sol, {4, 16}, 2, 1, 8), RangeError);
}

// --- conditional LLN ------------------------------------------------------

TEST(Lln, GapShrinksLikeOneOverM) {
  const LqgModel md = example6::embed(fixtures::unit_example());
  const auto res = conditional_lln_experiment(md, solve_on(md, 50), {4, 16, 64, 256}, 60, 8);
  ASSERT_EQ(res.gap_sup_sq.size(), 4u);
  EXPECT_GT(res.fit.slope, -1.3);
  EXPECT_LT(res.fit.slope, -0.7);
}

TEST(Lln, DeterministicParticlesHaveNoGap) {
  LqgModel md = fixtures::random_model(47, 2);
  md.D.setZero();
  const auto res = conditional_lln_experiment(md, solve_on(md, 30), {1, 2, 5}, 3, 1);
  for (const auto& e : res.gap_sup_sq) EXPECT_LE(e.mean, 1e-24);
}

// --- epsilon-Nash ---------------------------------------------------------

TEST(Nash, DefaultFamily) {
  EXPECT_EQ(default_deviation_family(true, true).size(), 20u);
  const auto major = default_deviation_family(true, false);
  EXPECT_EQ(major.size(), 10u);
  for (const auto& d : major) EXPECT_EQ(d.player, 0);
  EXPECT_TRUE(default_deviation_family(false, false).empty());
  EXPECT_EQ(major[0].label(), "major:scale=0");
}

TEST(Nash, IdentityDeviationHasZeroGain) {
  const LqgModel md = fixtures::random_model(48, 1);
  const auto sol = solve_on(md, 40);
  const std::vector<Deviation> fam = {{0, Deviation::Kind::kScale, 1.0},
                                      {1, Deviation::Kind::kShift, 0.0}};
  const NashReport r = nash_gap_experiment(md, sol, 4, fam, 0.0, 10, 3);
  for (const auto& o : r.deviations) {
    EXPECT_EQ(o.gain.mean, 0.0);
    EXPECT_EQ(o.gain.std_error, 0.0);
    EXPECT_TRUE(o.admissible);
  }
  EXPECT_EQ(r.max_gain, 0.0);
  EXPECT_EQ(r.major_moment_power, 6.0);
  EXPECT_GE(r.kappa, 10.0 * md.T);
}

TEST(Nash, LargeDeviationsAreCostly) {
  const LqgModel md = example6::embed(fixtures::unit_example());
  const auto sol = solve_on(md, 50);
  const auto fam = default_deviation_family(true, true);
  const NashReport r = nash_gap_experiment(md, sol, 8, fam, 0.0, 40, 5);
  ASSERT_EQ(r.deviations.size(), fam.size());
  for (const auto& o : r.deviations) {
    if (o.deviation.kind == Deviation::Kind::kShift && std::abs(o.deviation.value) == 1.0) {
      EXPECT_LT(o.gain.mean, 0.0) << o.deviation.label();
    }
  }
  EXPECT_LT(r.max_gain, 3.0 * r.max_gain_stderr + 1e-3);
}

TEST(Nash, TightBudgetExcludesDeviations) {
  const LqgModel md = fixtures::random_model(49, 1);
  const auto sol = solve_on(md, 20);
  const NashReport r = nash_gap_experiment(md, sol, 2, default_deviation_family(true, true), 1e-12, 4, 1);
  EXPECT_FALSE(r.excluded.empty());
  for (const auto& o : r.deviations)
    if (!o.admissible) {
      EXPECT_GT(o.moment.mean, 1e-12);
    }
}

TEST(Nash, RejectsBadArguments) {
  const LqgModel md = fixtures::random_model(50, 1);
  const auto sol = solve_on(md, 10);
  EXPECT_THROW(nash_gap_experiment(md, sol, 2, {}, 0.0, 2, 1), RangeError);
  EXPECT_THROW(nash_gap_experiment(md, sol, 0, default_deviation_family(true, true), 0.0, 2, 1),
               RangeError);
}
