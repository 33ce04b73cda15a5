#pragma once

// Scalar example with one controlled major player and uncontrolled minors:
//
//   dX0^N = (a/N sum_i X^{i,N} + b u0) dt + D0 dW0
//   dX^{i,N} = c X0^N dt + D dW^i
//   J0 = E int q |X0|^2 + |u0|^2 dt,   J^i = E int |u^i|^2 dt
//
// Compares the conditional McKean-Vlasov scheme ("new") with the scheme
// where the major player first optimizes against a frozen mean and the
// consistency condition is imposed afterwards ("old"), and checks that the
// finite-player equilibria converge to the new one.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mmfg/core_numerics.hpp"
#include "mmfg/experiments.hpp"
#include "mmfg/lqg_model.hpp"
#include "mmfg/noise.hpp"
#include "mmfg/parallel.hpp"

namespace mmfg::example6 {

struct ExampleParams {
  double a = 1.0;
  double b = 1.0;
  double c = 1.0;
  double q = 1.0;
  double D0 = 1.0;
  double D = 1.0;
  double T = 1.0;
  double x0_major = 0.0;
  double x0_minor = 0.0;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (!(q >= 0.0)) v.push_back("q must be nonnegative");
    if (!(T > 0.0)) v.push_back("T must be positive");
    for (double x : {a, b, c, q, D0, D, T, x0_major, x0_minor})
      if (!std::isfinite(x)) {
        v.push_back("parameters must be finite");
        break;
      }
    return v;
  }
};

inline void require_valid(const ExampleParams& p) {
  const auto v = p.violations();
  if (!v.empty()) throw ValidationError("invalid example parameters: " + v.front());
}

/// The example written as a general LQG model (all absent terms zero).
inline LqgModel embed(const ExampleParams& p) {
  LqgModel md = LqgModel::zeros(1, 1, 1, 1, 1, 1, p.T);
  md.B0(0, 0) = p.b;
  md.F0(0, 0) = p.a;
  md.D0(0, 0) = p.D0;
  md.G(0, 0) = p.c;
  md.D(0, 0) = p.D;
  md.Q0(0, 0) = p.q;
  md.x0_major(0) = p.x0_major;
  md.x0_minor(0) = p.x0_minor;
  return md;
}

/// Matrices of the 2x2 Riccati equation dS/dt + S A + Bhat S + S B S + Ahat = 0.
struct Riccati2 {
  Matrix A, B, Ahat, Bhat;

  explicit Riccati2(const ExampleParams& p)
      : A((Matrix(2, 2) << 0, p.a, p.c, 0).finished()),
        B((Matrix(2, 2) << -0.5 * p.b * p.b, 0, 0, 0).finished()),
        Ahat((Matrix(2, 2) << 2 * p.q, 0, 0, 0).finished()),
        Bhat((Matrix(2, 2) << 0, p.c, p.a, 0).finished()) {}

  Matrix field(const Matrix& S) const { return -(S * A + Bhat * S + S * B * S + Ahat); }
};

/// Control coefficients u0 = coef(0) X0 + coef(1) Xbar + coef(2), stored
/// as 1x3 rows per node.
struct SchemeSolution {
  GriddedTrajectory state;    // S2 (2x2) for the new scheme, (T1, T2, tau) for the old
  GriddedTrajectory control;  // 1x3
};

inline SchemeSolution solve_new_scheme(const ExampleParams& p, const TimeGrid& grid) {
  require_valid(p);
  const Riccati2 r(p);
  GriddedTrajectory S = [&] {
    try {
      return rk4_backward([&](double, const Matrix& s) { return r.field(s); },
                          Matrix::Zero(2, 2), grid);
    } catch (const BlowUpError& e) {
      throw BlowUpError(e.node(), e.time(), "Riccati solution escapes");
    }
  }();
  std::vector<Matrix> ctl(grid.n_nodes());
  for (std::size_t i = 0; i < ctl.size(); ++i)
    ctl[i] = (Matrix(1, 3) << -0.5 * p.b * S[i](0, 0), -0.5 * p.b * S[i](0, 1), 0.0).finished();
  return {std::move(S), GriddedTrajectory(grid, std::move(ctl))};
}

/// Decoupling Y0 = T1 X0 + T2 Xbar + tau of the frozen-mean scheme:
///   T1' - (b^2/2) T1^2 + c T2 + 2q = 0
///   T2' + a T1 - (b^2/2) T1 T2     = 0
///   tau' - (b^2/2) T1 tau          = 0,   all zero at T.
inline SchemeSolution solve_old_scheme(const ExampleParams& p, const TimeGrid& grid) {
  require_valid(p);
  const double hb2 = 0.5 * p.b * p.b;
  auto field = [&](double, const Matrix& v) -> Matrix {
    const double t1 = v(0, 0), t2 = v(1, 0), tau = v(2, 0);
    Matrix d(3, 1);
    d(0, 0) = hb2 * t1 * t1 - p.c * t2 - 2.0 * p.q;
    d(1, 0) = -p.a * t1 + hb2 * t1 * t2;
    d(2, 0) = hb2 * t1 * tau;
    return d;
  };
  GriddedTrajectory V = [&] {
    try {
      return rk4_backward(field, Matrix::Zero(3, 1), grid);
    } catch (const BlowUpError& e) {
      throw BlowUpError(e.node(), e.time(), "old-scheme decoupling escapes");
    }
  }();
  std::vector<Matrix> ctl(grid.n_nodes());
  for (std::size_t i = 0; i < ctl.size(); ++i)
    ctl[i] = (Matrix(1, 3) << -0.5 * p.b * V[i](0, 0), -0.5 * p.b * V[i](1, 0),
              -0.5 * p.b * V[i](2, 0))
                 .finished();
  return {std::move(V), GriddedTrajectory(grid, std::move(ctl))};
}

/// Largest entrywise residual of the old-scheme decoupling: substituting
/// Y0 = T1 X0 + T2 Xbar + tau into the forward/backward pair and matching
/// the X0, Xbar and constant terms; derivatives by fourth-order differences.
inline double old_scheme_residual(const ExampleParams& p, const SchemeSolution& old) {
  const GriddedTrajectory dV = derivative4(old.state);
  const double hb2 = 0.5 * p.b * p.b;
  double worst = 0.0;
  for (std::size_t i = 0; i < dV.size(); ++i) {
    const double t1 = old.state[i](0, 0), t2 = old.state[i](1, 0), tau = old.state[i](2, 0);
    // dY0 = T1' X0 + T2' Xbar + tau' + T1 (a Xbar - hb2 Y0) + T2 c X0 must equal -2q X0.
    const double r_x0 = dV[i](0, 0) - hb2 * t1 * t1 + p.c * t2 + 2.0 * p.q;
    const double r_xb = dV[i](1, 0) + p.a * t1 - hb2 * t1 * t2;
    const double r_c = dV[i](2, 0) - hb2 * t1 * tau;
    worst = std::max({worst, std::abs(r_x0), std::abs(r_xb), std::abs(r_c)});
  }
  return worst;
}

/// Paths of a scheme's limit system: dX0 = (a Xbar + b u0) dt + D0 dW0,
/// dXbar = c X0 dt. Rows are paths, columns nodes.
struct SchemePaths {
  Matrix x0;
  Matrix xbar;
  Matrix u0;
};

namespace detail {

inline double control_at(const GriddedTrajectory& ctl, std::size_t i, double x0, double xbar) {
  const Matrix& k = ctl[i];
  return k(0, 0) * x0 + k(0, 1) * xbar + k(0, 2);
}

}  // namespace detail

inline SchemePaths simulate_scheme(const ExampleParams& p, const SchemeSolution& sol,
                                   const NoiseSource& noise, std::size_t n_paths) {
  const TimeGrid& grid = sol.control.grid;
  const auto nodes = static_cast<Eigen::Index>(grid.n_nodes());
  SchemePaths out{Matrix(n_paths, nodes), Matrix(n_paths, nodes), Matrix(n_paths, nodes)};
  const double h = grid.step();
  const double sq = std::sqrt(h);
  const auto rows = parallel_map(n_paths, [&](std::size_t path) {
    Matrix r(3, nodes);
    double x0 = p.x0_major, xb = p.x0_minor;
    for (Eigen::Index i = 0; i < nodes; ++i) {
      const double u = detail::control_at(sol.control, static_cast<std::size_t>(i), x0, xb);
      r(0, i) = x0;
      r(1, i) = xb;
      r(2, i) = u;
      if (i + 1 < nodes) {
        double z = 0.0;
        noise.standard_normals(path, 0, static_cast<std::size_t>(i), 1, &z);
        const double x0n = x0 + h * (p.a * xb + p.b * u) + p.D0 * sq * z;
        xb += h * p.c * x0;
        x0 = x0n;
      }
    }
    return r;
  });
  for (std::size_t k = 0; k < n_paths; ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    out.x0.row(row) = rows[k].row(0);
    out.xbar.row(row) = rows[k].row(1);
    out.u0.row(row) = rows[k].row(2);
  }
  return out;
}

/// Paths of the finite-player aggregate (X0^N, X^N) with X^N the average of
/// the N minors, plus the minor noise sum S^N_t = sum_i W^i_t.
struct AggregatePaths {
  Matrix x0;
  Matrix xN;
  Matrix u0;
  Matrix wsum;
};

inline AggregatePaths solve_finite_aggregate(const ExampleParams& p, int N,
                                             const SchemeSolution& new_scheme,
                                             const NoiseSource& noise, std::size_t n_paths) {
  if (N < 1) throw RangeError("finite aggregate needs N >= 1");
  const TimeGrid& grid = new_scheme.control.grid;
  const auto nodes = static_cast<Eigen::Index>(grid.n_nodes());
  const double h = grid.step();
  const double sq = std::sqrt(h);
  const auto rows = parallel_map(n_paths, [&](std::size_t path) {
    Matrix r(4, nodes);
    double x0 = p.x0_major, xn = p.x0_minor, ws = 0.0;
    std::vector<double> z(static_cast<std::size_t>(N));
    for (Eigen::Index i = 0; i < nodes; ++i) {
      const double u = detail::control_at(new_scheme.control, static_cast<std::size_t>(i), x0, xn);
      r(0, i) = x0;
      r(1, i) = xn;
      r(2, i) = u;
      r(3, i) = ws;
      if (i + 1 < nodes) {
        double z0 = 0.0;
        noise.standard_normals(path, 0, static_cast<std::size_t>(i), 1, &z0);
        double dsum = 0.0;
        for (int j = 0; j < N; ++j) {
          noise.standard_normals(path, static_cast<std::uint64_t>(j) + 1,
                                 static_cast<std::size_t>(i), 1, &z[static_cast<std::size_t>(j)]);
          dsum += z[static_cast<std::size_t>(j)];
        }
        dsum *= sq;
        const double x0n = x0 + h * (p.a * xn + p.b * u) + p.D0 * sq * z0;
        xn += h * p.c * x0 + p.D / static_cast<double>(N) * dsum;
        ws += dsum;
        x0 = x0n;
      }
    }
    return r;
  });
  AggregatePaths out{Matrix(n_paths, nodes), Matrix(n_paths, nodes), Matrix(n_paths, nodes),
                     Matrix(n_paths, nodes)};
  for (std::size_t k = 0; k < n_paths; ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    out.x0.row(row) = rows[k].row(0);
    out.xN.row(row) = rows[k].row(1);
    out.u0.row(row) = rows[k].row(2);
    out.wsum.row(row) = rows[k].row(3);
  }
  return out;
}

struct SchemeDifference {
  double max_coeff_gap = 0.0;
  double max_gap_x0 = 0.0;
  double max_gap_xbar = 0.0;
  double max_gap_const = 0.0;
  GriddedTrajectory gap_curve;  // 1x1: largest coefficient gap at each node
  bool coincide = false;
};

inline constexpr double kCoincideTol = 1e-10;

/// Both optimal controls are affine in (X0, Xbar) with deterministic
/// coefficients, so a positive coefficient gap means the controls differ on
/// an event of positive probability.
inline SchemeDifference scheme_difference(const SchemeSolution& fresh, const SchemeSolution& old) {
  const TimeGrid& grid = fresh.control.grid;
  std::vector<Matrix> gap(grid.n_nodes());
  SchemeDifference out{0.0, 0.0, 0.0, 0.0, GriddedTrajectory(grid, Matrix::Zero(1, 1)), false};
  for (std::size_t i = 0; i < gap.size(); ++i) {
    const Matrix diff = (fresh.control[i] - old.control[i]).cwiseAbs();
    out.max_gap_x0 = std::max(out.max_gap_x0, diff(0, 0));
    out.max_gap_xbar = std::max(out.max_gap_xbar, diff(0, 1));
    out.max_gap_const = std::max(out.max_gap_const, diff(0, 2));
    out.gap_curve[i](0, 0) = diff.maxCoeff();
    out.max_coeff_gap = std::max(out.max_coeff_gap, diff.maxCoeff());
  }
  out.coincide = out.max_coeff_gap <= kCoincideTol;
  return out;
}

inline SchemeDifference scheme_difference(const ExampleParams& p, const TimeGrid& grid) {
  return scheme_difference(solve_new_scheme(p, grid), solve_old_scheme(p, grid));
}

/// Gronwall constant |a| + |c| + (b^2/2) sup_t ||S2_t||_2.
inline double gronwall_constant(const ExampleParams& p, const SchemeSolution& fresh) {
  double sup = 0.0;
  for (const auto& S : fresh.state.values) {
    Eigen::JacobiSVD<Matrix> svd(S);
    sup = std::max(sup, svd.singularValues()(0));
  }
  return std::abs(p.a) + std::abs(p.c) + 0.5 * p.b * p.b * sup;
}

struct PnewPoint {
  int N = 0;
  Estimate err_state;        // E sup_t (|X0^N - X0| + |X^N - Xbar|)^2
  Estimate err_control;      // E int |u0^N - u0_new|^2 dt
  Estimate err_control_old;  // E int |u0^N - u0_old|^2 dt
  double max_ratio = 0.0;    // largest pathwise Gronwall ratio
  double frac_ratio_ok = 1.0;
};

struct PnewReport {
  double gronwall_K = 0.0;
  double ratio_bound = 0.0;  // exp(K T)
  std::vector<PnewPoint> points;
  std::optional<RateFit> state_fit;
  bool control_monotone = false;
};

/// Couples the finite aggregate with the new and old limit schemes on shared
/// W0 (and the finite system's minor noises) for each N.
inline PnewReport verify_pnew(const ExampleParams& p, const std::vector<int>& N_list,
                              const TimeGrid& grid, const NoiseSource& noise,
                              std::size_t n_paths) {
  require_valid(p);
  mmfg::detail::check_sizes(N_list, 1);
  const SchemeSolution fresh = solve_new_scheme(p, grid);
  const SchemeSolution old = solve_old_scheme(p, grid);
  const SchemePaths lim = simulate_scheme(p, fresh, noise, n_paths);
  const SchemePaths lim_old = simulate_scheme(p, old, noise, n_paths);
  PnewReport rep;
  rep.gronwall_K = gronwall_constant(p, fresh);
  rep.ratio_bound = std::exp(rep.gronwall_K * grid.t1());
  const auto nodes = static_cast<Eigen::Index>(grid.n_nodes());
  for (int N : N_list) {
    const AggregatePaths fin = solve_finite_aggregate(p, N, fresh, noise, n_paths);
    std::vector<double> es, ec, eo;
    PnewPoint pt;
    pt.N = N;
    std::size_t ok = 0;
    for (std::size_t k = 0; k < n_paths; ++k) {
      const auto r = static_cast<Eigen::Index>(k);
      double sup_diff = 0.0, sup_w = 0.0, ic = 0.0, io = 0.0;
      for (Eigen::Index i = 0; i < nodes; ++i) {
        const double diff =
            std::abs(fin.x0(r, i) - lim.x0(r, i)) + std::abs(fin.xN(r, i) - lim.xbar(r, i));
        sup_diff = std::max(sup_diff, diff);
        sup_w = std::max(sup_w, std::abs(fin.wsum(r, i)));
        const double w = trapezoid_weight(grid, static_cast<std::size_t>(i));
        ic += w * std::pow(fin.u0(r, i) - lim.u0(r, i), 2);
        io += w * std::pow(fin.u0(r, i) - lim_old.u0(r, i), 2);
      }
      es.push_back(sup_diff * sup_diff);
      ec.push_back(ic);
      eo.push_back(io);
      const double scale = std::abs(p.D) / static_cast<double>(N) * sup_w;
      const double ratio = scale > 0.0 ? sup_diff / scale : (sup_diff == 0.0 ? 0.0 : INFINITY);
      pt.max_ratio = std::max(pt.max_ratio, ratio);
      if (ratio <= rep.ratio_bound) ++ok;
    }
    pt.err_state = estimate_mean(es);
    pt.err_control = estimate_mean(ec);
    pt.err_control_old = estimate_mean(eo);
    pt.frac_ratio_ok = n_paths == 0 ? 1.0 : static_cast<double>(ok) / static_cast<double>(n_paths);
    rep.points.push_back(pt);
  }
  if (N_list.size() >= 3) {
    std::vector<double> e;
    std::vector<Estimate> ctl;
    for (const auto& pt : rep.points) {
      e.push_back(pt.err_state.mean);
      ctl.push_back(pt.err_control);
    }
    if (std::all_of(e.begin(), e.end(), [](double x) { return x > 0.0; }))
      rep.state_fit = fit_rate(mmfg::detail::as_doubles(N_list), e);
    rep.control_monotone = monotone_within(ctl);
  }
  return rep;
}

}  // namespace mmfg::example6
