#pragma once

// Monte Carlo harnesses for the convergence claims: propagation of chaos
// between the coupled finite and limiting systems, the empirical-measure
// rate, the conditional law of large numbers and epsilon-Nash deviation
// runs. Every per-path quantity is a pure function of (seed, path), so the
// results do not depend on the worker count.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mmfg/core_numerics.hpp"
#include "mmfg/lqg_model.hpp"
#include "mmfg/noise.hpp"
#include "mmfg/parallel.hpp"
#include "mmfg/riccati.hpp"
#include "mmfg/sim.hpp"

namespace mmfg {

struct RateFit {
  std::vector<double> sizes;
  std::vector<double> errors;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;

  double predict(double n) const { return std::exp(intercept) * std::pow(n, slope); }
};

/// Least squares of log(error) on log(size).
inline RateFit fit_rate(const std::vector<double>& sizes, const std::vector<double>& errors) {
  if (sizes.size() != errors.size()) throw DimensionError("fit_rate: length mismatch");
  if (sizes.size() < 3) throw RangeError("fit_rate needs at least 3 points");
  const std::size_t n = sizes.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(errors[i] > 0.0)) throw RangeError("fit_rate: nonpositive error value");
    if (!(sizes[i] > 0.0)) throw RangeError("fit_rate: nonpositive size");
    lx[i] = std::log(sizes[i]);
    ly[i] = std::log(errors[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) throw RangeError("fit_rate: all sizes equal");
  RateFit fit{sizes, errors, 0.0, 0.0, 0.0};
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy == 0.0 ? 1.0 : std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0);
  return fit;
}

/// True when each estimate is at most the previous one plus `k` combined
/// standard errors.
inline bool monotone_within(const std::vector<Estimate>& e, double k = 2.0) {
  for (std::size_t i = 1; i < e.size(); ++i) {
    const double slack =
        k * std::sqrt(e[i].std_error * e[i].std_error + e[i - 1].std_error * e[i - 1].std_error);
    if (e[i].mean > e[i - 1].mean + slack) return false;
  }
  return true;
}

namespace detail {

inline void check_sizes(const std::vector<int>& ns, int min_value) {
  if (ns.empty()) throw RangeError("empty size list");
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (ns[i] < min_value)
      throw RangeError("sizes must be >= " + std::to_string(min_value));
    if (i > 0 && ns[i] <= ns[i - 1]) throw RangeError("size list must be increasing");
  }
}

inline std::vector<double> as_doubles(const std::vector<int>& v) {
  return std::vector<double>(v.begin(), v.end());
}

inline std::vector<double> means_of(const std::vector<Estimate>& e) {
  std::vector<double> out;
  for (const auto& x : e) out.push_back(x.mean);
  return out;
}

inline std::vector<double> row_values(const Matrix& m, Eigen::Index row, Eigen::Index count) {
  std::vector<double> v(static_cast<std::size_t>(count));
  for (Eigen::Index j = 0; j < count; ++j) v[static_cast<std::size_t>(j)] = m(row, j);
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Propagation of chaos

struct ChaosPoint {
  int N = 0;
  Estimate major_sup_sq;      // E sup_t |X0^N - X0|^2
  Estimate minor1_sup_sq;     // E sup_t |X^{1,N} - X^1|^2
  Estimate minor_avg_sup_sq;  // average over i of E sup_t |X^{i,N} - X^i|^2
  std::optional<Estimate> w2_sup_sq;  // E sup_t W2^2(mu^N_t, nu^N_t), d = 1 only
};

struct ChaosResult {
  std::vector<ChaosPoint> points;
  RateFit minor1_fit;
  RateFit major_fit;
  std::optional<RateFit> w2_fit;
  std::optional<std::string> w2_error;
  bool minor1_monotone = false;
};

namespace detail {

struct ChaosPathValues {
  double major = 0.0;
  double minor1 = 0.0;
  double minor_avg = 0.0;
  double w2 = 0.0;
};

inline ChaosPathValues chaos_path(const LqgModel& md, const FeedbackTables& fb, int N,
                                  const TimeGrid& grid, const NoiseSource& noise,
                                  std::uint64_t path, bool with_w2) {
  FiniteGame fin(md, fb, N);
  LimitSystem lim(md, fb, N);
  StepNoise dn;
  ChaosPathValues out;
  Vector sup_each = Vector::Zero(N);
  const double h = grid.step();
  for (std::size_t i = 0; i < grid.n_nodes(); ++i) {
    out.major = std::max(out.major, (fin.major() - lim.major()).squaredNorm());
    const Vector sq = (fin.minors() - lim.particles()).colwise().squaredNorm().transpose();
    sup_each = sup_each.cwiseMax(sq);
    if (with_w2) {
      out.w2 = std::max(out.w2, wasserstein2_sq_1d(detail::row_values(fin.minors(), 0, N),
                                                   detail::row_values(lim.particles(), 0, N)));
    }
    if (i + 1 < grid.n_nodes()) {
      fin.update_controls(i);
      lim.update_controls(i);
      dn.draw(noise, path, i, md.m0, md.m, N, h);
      fin.advance(h, dn.dW0, dn.dW);
      lim.advance(h, dn.dW0, dn.dW);
    }
  }
  out.minor1 = sup_each(0);
  out.minor_avg = sup_each.mean();
  return out;
}

}  // namespace detail

/// Couples the finite game with N minors and the limit system with N
/// particles on shared noise, for every N in the list.
inline ChaosResult chaos_experiment(const LqgModel& md, const RiccatiSolution& sol,
                                    const std::vector<int>& N_list, std::size_t n_paths,
                                    std::uint64_t seed) {
  detail::check_sizes(N_list, 2);
  const FeedbackTables fb = FeedbackTables::build(md, sol);
  const NoiseSource noise(seed);
  const TimeGrid& grid = sol.grid();
  ChaosResult res;
  const bool with_w2 = md.d == 1;
  if (!with_w2) res.w2_error = "W2 output unsupported for d != 1";
  for (int N : N_list) {
    const auto vals = parallel_map(n_paths, [&](std::size_t p) {
      return detail::chaos_path(md, fb, N, grid, noise, p, with_w2);
    });
    std::vector<double> a, b, c, w;
    for (const auto& v : vals) {
      a.push_back(v.major);
      b.push_back(v.minor1);
      c.push_back(v.minor_avg);
      w.push_back(v.w2);
    }
    ChaosPoint pt;
    pt.N = N;
    pt.major_sup_sq = estimate_mean(a);
    pt.minor1_sup_sq = estimate_mean(b);
    pt.minor_avg_sup_sq = estimate_mean(c);
    if (with_w2) pt.w2_sup_sq = estimate_mean(w);
    res.points.push_back(pt);
  }
  if (N_list.size() >= 3) {
    std::vector<double> e1, e0, ew;
    std::vector<Estimate> m1;
    for (const auto& p : res.points) {
      e1.push_back(p.minor1_sup_sq.mean);
      e0.push_back(p.major_sup_sq.mean);
      m1.push_back(p.minor1_sup_sq);
      if (p.w2_sup_sq) ew.push_back(p.w2_sup_sq->mean);
    }
    const auto sizes = detail::as_doubles(N_list);
    auto positive = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0; });
    };
    if (positive(e1)) res.minor1_fit = fit_rate(sizes, e1);
    if (positive(e0)) res.major_fit = fit_rate(sizes, e0);
    if (with_w2 && positive(ew)) res.w2_fit = fit_rate(sizes, ew);
    res.minor1_monotone = monotone_within(m1);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Empirical measure rate

struct MeasureRatePoint {
  int N = 0;
  Estimate w2_sq;
};

struct MeasureRateResult {
  int n_ref = 0;
  std::vector<MeasureRatePoint> points;
  RateFit fit;
};

/// W2^2 at t = T between the first N limit particles and a reference of
/// n_ref particles on the same W0 path. The N-atom measure is represented
/// with each atom repeated n_ref / N times, which leaves it unchanged.
inline MeasureRateResult empirical_measure_rate(const LqgModel& md, const RiccatiSolution& sol,
                                                const std::vector<int>& N_list,
                                                std::size_t n_paths, std::uint64_t seed,
                                                int n_ref = 0) {
  if (md.d != 1) throw UnsupportedError("empirical measure rate needs d = 1");
  detail::check_sizes(N_list, 1);
  if (n_ref <= 0) n_ref = 16 * N_list.back();
  for (int N : N_list)
    if (N > n_ref || n_ref % N != 0)
      throw RangeError("reference size must be a multiple of every N");
  const FeedbackTables fb = FeedbackTables::build(md, sol);
  const NoiseSource noise(seed);
  const TimeGrid& grid = sol.grid();

  const auto per_path = parallel_map(n_paths, [&](std::size_t p) {
    LimitSystem lim(md, fb, n_ref);
    StepNoise dn;
    const double h = grid.step();
    for (std::size_t i = 0; i + 1 < grid.n_nodes(); ++i) {
      lim.update_controls(i);
      dn.draw(noise, p, i, md.m0, md.m, n_ref, h);
      lim.advance(h, dn.dW0, dn.dW);
    }
    const std::vector<double> ref = detail::row_values(lim.particles(), 0, n_ref);
    std::vector<double> out;
    for (int N : N_list) {
      std::vector<double> sample;
      sample.reserve(static_cast<std::size_t>(n_ref));
      const int rep = n_ref / N;
      for (int j = 0; j < N; ++j)
        sample.insert(sample.end(), static_cast<std::size_t>(rep), ref[static_cast<std::size_t>(j)]);
      out.push_back(wasserstein2_sq_1d(std::move(sample), ref));
    }
    return out;
  });

  MeasureRateResult res;
  res.n_ref = n_ref;
  for (std::size_t k = 0; k < N_list.size(); ++k) {
    std::vector<double> v;
    for (const auto& row : per_path) v.push_back(row[k]);
    res.points.push_back({N_list[k], estimate_mean(v)});
  }
  if (N_list.size() >= 3) {
    std::vector<double> e;
    for (const auto& p : res.points) e.push_back(p.w2_sq.mean);
    if (std::all_of(e.begin(), e.end(), [](double x) { return x > 0.0; }))
      res.fit = fit_rate(detail::as_doubles(N_list), e);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Conditional law of large numbers

struct LlnResult {
  std::vector<int> sizes;
  std::vector<Estimate> gap_sup_sq;  // E sup_t |(1/M) sum X^i_t - Xbar_t|^2
  RateFit fit;
};

/// The first M of max(M_list) limit particles give the M-particle average.
inline LlnResult conditional_lln_experiment(const LqgModel& md, const RiccatiSolution& sol,
                                            const std::vector<int>& M_list, std::size_t n_paths,
                                            std::uint64_t seed) {
  detail::check_sizes(M_list, 1);
  const FeedbackTables fb = FeedbackTables::build(md, sol);
  const NoiseSource noise(seed);
  const TimeGrid& grid = sol.grid();
  const int m_max = M_list.back();

  const auto per_path = parallel_map(n_paths, [&](std::size_t p) {
    LimitSystem lim(md, fb, m_max);
    StepNoise dn;
    const double h = grid.step();
    std::vector<double> sup(M_list.size(), 0.0);
    for (std::size_t i = 0; i < grid.n_nodes(); ++i) {
      Vector acc = Vector::Zero(md.d);
      int taken = 0;
      for (std::size_t k = 0; k < M_list.size(); ++k) {
        for (; taken < M_list[k]; ++taken) acc += lim.particles().col(taken);
        const double gap = (acc / static_cast<double>(M_list[k]) - lim.mean()).squaredNorm();
        sup[k] = std::max(sup[k], gap);
      }
      if (i + 1 < grid.n_nodes()) {
        lim.update_controls(i);
        dn.draw(noise, p, i, md.m0, md.m, m_max, h);
        lim.advance(h, dn.dW0, dn.dW);
      }
    }
    return sup;
  });

  LlnResult res;
  res.sizes = M_list;
  for (std::size_t k = 0; k < M_list.size(); ++k) {
    std::vector<double> v;
    for (const auto& row : per_path) v.push_back(row[k]);
    res.gap_sup_sq.push_back(estimate_mean(v));
  }
  if (M_list.size() >= 3) res.fit = fit_rate(detail::as_doubles(M_list), detail::means_of(res.gap_sup_sq));
  return res;
}

// ---------------------------------------------------------------------------
// epsilon-Nash deviations

/// Scale and shift perturbations of the equilibrium control of the major
/// player and/or minor player 1.
inline std::vector<Deviation> default_deviation_family(bool major, bool minor) {
  std::vector<Deviation> out;
  const std::vector<double> scales = {0.0, 0.5, 0.8, 1.2, 1.5, 2.0};
  const std::vector<double> shifts = {-1.0, -0.5, 0.5, 1.0};
  for (int player : {0, 1}) {
    if ((player == 0 && !major) || (player == 1 && !minor)) continue;
    for (double s : scales) out.push_back({player, Deviation::Kind::kScale, s});
    for (double s : shifts) out.push_back({player, Deviation::Kind::kShift, s});
  }
  return out;
}

struct DeviationOutcome {
  Deviation deviation;
  Estimate cost;
  Estimate gain;    // baseline cost minus deviation cost, paired per path
  Estimate moment;  // E int |u|^p dt of the deviating control
  bool admissible = true;
};

struct NashReport {
  int N = 0;
  double kappa = 0.0;
  double major_moment_power = 0.0;
  Estimate equilibrium_cost_major;
  Estimate equilibrium_cost_minor;
  Estimate equilibrium_moment_major;
  Estimate equilibrium_moment_minor;
  std::vector<DeviationOutcome> deviations;
  double max_gain = 0.0;       // over admissible deviations
  double max_gain_stderr = 0.0;
  double max_gain_major = -std::numeric_limits<double>::infinity();
  double max_gain_minor = -std::numeric_limits<double>::infinity();
  std::vector<std::string> excluded;
};

namespace detail {

/// All increments of one path for players 0..N, drawn once and replayed.
struct PathNoise {
  std::vector<Vector> dW0;
  std::vector<Matrix> dW;

  PathNoise(const NoiseSource& noise, std::uint64_t path, const TimeGrid& grid, int m0, int m,
            int N) {
    StepNoise dn;
    for (std::size_t i = 0; i < grid.n_steps(); ++i) {
      dn.draw(noise, path, i, m0, m, N, grid.step());
      dW0.push_back(dn.dW0);
      dW.push_back(dn.dW);
    }
  }
};

struct PlayerTallies {
  double cost_major = 0.0;
  double cost_minor = 0.0;
  double moment_major = 0.0;
  double moment_minor = 0.0;
};

inline PlayerTallies run_finite_tallies(const LqgModel& md, const FeedbackTables& fb, int N,
                                        const TimeGrid& grid, const PathNoise& pn,
                                        std::optional<Deviation> dev, double p_major) {
  FiniteGame game(md, fb, N, dev);
  PlayerTallies t;
  for (std::size_t i = 0; i < grid.n_nodes(); ++i) {
    game.update_controls(i);
    const double w = trapezoid_weight(grid, i);
    const Vector& x0 = game.major();
    const Vector& xbar = game.mean();
    const Vector u1 = game.minor_controls().col(0);
    t.cost_major += w * major_running_cost(md, x0, xbar, game.major_control());
    t.cost_minor += w * minor_running_cost(md, game.minors().col(0), x0, xbar, u1);
    t.moment_major += w * std::pow(game.major_control().norm(), p_major);
    t.moment_minor += w * u1.squaredNorm();
    if (i + 1 < grid.n_nodes()) game.advance(grid.step(), pn.dW0[i], pn.dW[i]);
  }
  return t;
}

}  // namespace detail

/// Replays the finite game with one player's control perturbed, on the same
/// noise as the equilibrium run. kappa <= 0 selects the default budget
/// 10 * max(major moment, minor moment, T).
inline NashReport nash_gap_experiment(const LqgModel& md, const RiccatiSolution& sol, int N,
                                      const std::vector<Deviation>& family, double kappa,
                                      std::size_t n_paths, std::uint64_t seed) {
  if (family.empty()) throw RangeError("deviation family is empty");
  if (N < 1) throw RangeError("Nash experiment needs N >= 1");
  const FeedbackTables fb = FeedbackTables::build(md, sol);
  const NoiseSource noise(seed);
  const TimeGrid& grid = sol.grid();
  const double p_major = static_cast<double>(md.d) + 5.0;

  struct PathOut {
    detail::PlayerTallies base;
    std::vector<detail::PlayerTallies> dev;
  };
  const auto per_path = parallel_map(n_paths, [&](std::size_t p) {
    const detail::PathNoise pn(noise, p, grid, md.m0, md.m, N);
    PathOut out;
    out.base = detail::run_finite_tallies(md, fb, N, grid, pn, std::nullopt, p_major);
    for (const auto& dv : family)
      out.dev.push_back(detail::run_finite_tallies(md, fb, N, grid, pn, dv, p_major));
    return out;
  });

  NashReport rep;
  rep.N = N;
  rep.major_moment_power = p_major;
  std::vector<double> c0, c1, m0, m1;
  for (const auto& po : per_path) {
    c0.push_back(po.base.cost_major);
    c1.push_back(po.base.cost_minor);
    m0.push_back(po.base.moment_major);
    m1.push_back(po.base.moment_minor);
  }
  rep.equilibrium_cost_major = estimate_mean(c0);
  rep.equilibrium_cost_minor = estimate_mean(c1);
  rep.equilibrium_moment_major = estimate_mean(m0);
  rep.equilibrium_moment_minor = estimate_mean(m1);
  rep.kappa = kappa > 0.0 ? kappa
                          : 10.0 * std::max({rep.equilibrium_moment_major.mean,
                                             rep.equilibrium_moment_minor.mean, md.T});

  bool any = false;
  for (std::size_t k = 0; k < family.size(); ++k) {
    const bool major = family[k].player == 0;
    std::vector<double> cost, gain, mom;
    for (const auto& po : per_path) {
      const auto& t = po.dev[k];
      const double c = major ? t.cost_major : t.cost_minor;
      const double b = major ? po.base.cost_major : po.base.cost_minor;
      cost.push_back(c);
      gain.push_back(b - c);
      mom.push_back(major ? t.moment_major : t.moment_minor);
    }
    DeviationOutcome o{family[k], estimate_mean(cost), estimate_mean(gain), estimate_mean(mom), true};
    o.admissible = o.moment.mean <= rep.kappa;
    if (!o.admissible) {
      rep.excluded.push_back(family[k].label());
    } else {
      if (!any || o.gain.mean > rep.max_gain) {
        rep.max_gain = o.gain.mean;
        rep.max_gain_stderr = o.gain.std_error;
        any = true;
      }
      double& slot = major ? rep.max_gain_major : rep.max_gain_minor;
      slot = std::max(slot, o.gain.mean);
    }
    rep.deviations.push_back(o);
  }
  return rep;
}

/// Envelope c * N^slope fitted in log space to the positive gains with the
/// slope held fixed; c = 0 when no gain is positive.
inline double fit_envelope_constant(const std::vector<int>& Ns, const std::vector<double>& gains,
                                    double slope) {
  double acc = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < Ns.size(); ++i) {
    if (gains[i] > 0.0) {
      acc += std::log(gains[i]) - slope * std::log(static_cast<double>(Ns[i]));
      ++count;
    }
  }
  return count == 0 ? 0.0 : std::exp(acc / count);
}

}  // namespace mmfg
