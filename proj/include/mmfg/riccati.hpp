#pragma once

// Decoupling of the conditioned FBSDE: Y = S X + s for the compact system,
// and Y = K X + k for the representative minor player's own adjoint.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mmfg/core_numerics.hpp"
#include "mmfg/lqg_model.hpp"

namespace mmfg {

/// Row blocks of S are (P0bar, Pbar, Ybar) = (d0, d, d); column blocks are
/// (X0, Xbar) = (d0, d).
struct RiccatiSolution {
  GriddedTrajectory S;
  GriddedTrajectory s;
  GriddedTrajectory K;
  GriddedTrajectory Phi1;  // coefficient of X0 in k
  GriddedTrajectory Phi2;  // coefficient of Xbar in k
  GriddedTrajectory phi0;  // constant part of k
  int d0 = 0;
  int d = 0;

  const TimeGrid& grid() const { return S.grid; }

  Matrix S11(std::size_t i) const { return S[i].block(0, 0, d0, d0); }
  Matrix S12(std::size_t i) const { return S[i].block(0, d0, d0, d); }
  Matrix S21(std::size_t i) const { return S[i].block(d0, 0, d, d0); }
  Matrix S22(std::size_t i) const { return S[i].block(d0, d0, d, d); }
  Matrix S31(std::size_t i) const { return S[i].block(d0 + d, 0, d, d0); }
  Matrix S32(std::size_t i) const { return S[i].block(d0 + d, d0, d, d); }
  Vector s1(std::size_t i) const { return s[i].col(0).segment(0, d0); }
  Vector s2(std::size_t i) const { return s[i].col(0).segment(d0, d); }
  Vector s3(std::size_t i) const { return s[i].col(0).segment(d0 + d, d); }
};

/// Right-hand side of the matrix Riccati equation, dS/dt.
inline Matrix riccati_field(const AssembledSystem& sys, const Matrix& S) {
  return -(S * sys.Abb + sys.Bhat * S + S * sys.Bbb * S + sys.Ahat);
}

/// Right-hand side of the offset equation, ds/dt, given S at the same time.
inline Matrix offset_field(const AssembledSystem& sys, const Matrix& S, const Matrix& s) {
  return -((sys.Bhat + S * sys.Bbb) * s) - (sys.Chat + S * sys.Cbb);
}

inline GriddedTrajectory solve_riccati_ode(const AssembledSystem& sys, const TimeGrid& grid) {
  const Matrix terminal = Matrix::Zero(sys.backward_dim(), sys.forward_dim());
  try {
    return rk4_backward([&](double, const Matrix& S) { return riccati_field(sys, S); },
                        terminal, grid);
  } catch (const BlowUpError& e) {
    throw BlowUpError(e.node(), e.time(), "Riccati solution escapes");
  }
}

/// Psi(T, t) = expm(H (T - t)) for the compact generator H.
inline Matrix propagator(const AssembledSystem& sys, double T, double t) {
  return expm(sys.hamiltonian * (T - t));
}

class AssumptionViolation : public Error {
 public:
  AssumptionViolation(std::size_t node, double t, const std::string& what)
      : Error(ErrorKind::kNumerics,
              "Gamma22 invertibility violated at node " + std::to_string(node) + " (t=" +
                  std::to_string(t) + "): " + what),
        node_(node) {}
  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

/// S_t = -(Gamma22)^{-1} Gamma21 from the blocks of Psi(T, t). Nodes are
/// visited backward from T, where Gamma22 = I; a sign change of det Gamma22
/// between neighbours means it is singular in between, even if both nodes
/// are well conditioned.
inline GriddedTrajectory solve_riccati_propagator(const AssembledSystem& sys,
                                                  const TimeGrid& grid,
                                                  double cond_threshold = 1e12) {
  const int nf = sys.forward_dim();
  const int nb = sys.backward_dim();
  std::vector<Matrix> values(grid.n_nodes());
  bool prev_negative = false;
  for (std::size_t i = grid.n_nodes(); i-- > 0;) {
    const Matrix psi = propagator(sys, grid.t1(), grid.node(i));
    const Matrix g21 = psi.bottomLeftCorner(nb, nf);
    const Matrix g22 = psi.bottomRightCorner(nb, nb);
    const bool negative = std::signbit(g22.determinant());
    if (negative != prev_negative)
      throw AssumptionViolation(i, grid.node(i),
                                "det Gamma22 changes sign before this node");
    prev_negative = negative;
    try {
      values[i] = -invert_checked(g22, cond_threshold) * g21;
    } catch (const IllConditionedError& e) {
      throw AssumptionViolation(i, grid.node(i), e.what());
    }
  }
  return GriddedTrajectory(grid, std::move(values));
}

struct AprimeReport {
  double min_singular_value = std::numeric_limits<double>::infinity();
  double worst_node = 0.0;
  bool satisfied = true;
  bool determinant_crossing = false;
};

namespace detail {

inline double gamma22_min_sv(const AssembledSystem& sys, double T, double t) {
  const int nb = sys.backward_dim();
  const Matrix g22 = propagator(sys, T, t).bottomRightCorner(nb, nb);
  Eigen::JacobiSVD<Matrix> svd(g22);
  return svd.singularValues()(nb - 1);
}

inline double gamma22_det(const AssembledSystem& sys, double T, double t) {
  const int nb = sys.backward_dim();
  return propagator(sys, T, t).bottomRightCorner(nb, nb).determinant();
}

}  // namespace detail

/// Scans every node for invertibility of Gamma22. A sign change of its
/// determinant between adjacent nodes means it is singular somewhere in
/// between; the crossing is then located by bisection.
inline AprimeReport check_assumption_aprime(const AssembledSystem& sys, const TimeGrid& grid,
                                            double cond_threshold = 1e12) {
  AprimeReport rep;
  const double T = grid.t1();
  double prev_det = 0.0;
  for (std::size_t i = grid.n_nodes(); i-- > 0;) {
    const double t = grid.node(i);
    const double sv = detail::gamma22_min_sv(sys, T, t);
    if (sv < rep.min_singular_value) {
      rep.min_singular_value = sv;
      rep.worst_node = t;
    }
    const double det = detail::gamma22_det(sys, T, t);
    if (i + 1 < grid.n_nodes() && !rep.determinant_crossing &&
        std::signbit(det) != std::signbit(prev_det)) {
      rep.determinant_crossing = true;
      double lo = t;
      double hi = grid.node(i + 1);
      const bool lo_sign = std::signbit(det);
      for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (std::signbit(detail::gamma22_det(sys, T, mid)) == lo_sign)
          lo = mid;
        else
          hi = mid;
      }
      const double tc = 0.5 * (lo + hi);
      const double sv_c = detail::gamma22_min_sv(sys, T, tc);
      if (sv_c < rep.min_singular_value) {
        rep.min_singular_value = sv_c;
        rep.worst_node = tc;
      }
    }
    prev_det = det;
  }
  rep.satisfied = !rep.determinant_crossing && rep.min_singular_value > 1.0 / cond_threshold;
  return rep;
}

/// Backward RK4 for the offset ODE. S is needed between nodes; it is
/// reconstructed by cubic Hermite interpolation using dS/dt from the
/// Riccati field, which keeps the overall scheme fourth order.
inline GriddedTrajectory solve_offset_ode(const AssembledSystem& sys, const GriddedTrajectory& S,
                                          const TimeGrid& grid) {
  if (S.grid != grid) throw DimensionError("offset ODE: S is on a different grid");
  const double h = grid.step();
  const double t0 = grid.t0();
  auto s_at = [&](double t) -> Matrix {
    double pos = (t - t0) / h;
    std::size_t i = static_cast<std::size_t>(std::floor(pos));
    if (i >= grid.n_steps()) i = grid.n_steps() - 1;
    const double u = (t - grid.node(i)) / h;
    if (u <= 0.0) return S[i];
    if (u >= 1.0) return S[i + 1];
    const Matrix& p0 = S[i];
    const Matrix& p1 = S[i + 1];
    const Matrix m0 = riccati_field(sys, p0) * h;
    const Matrix m1 = riccati_field(sys, p1) * h;
    const double u2 = u * u;
    const double u3 = u2 * u;
    return (2 * u3 - 3 * u2 + 1) * p0 + (u3 - 2 * u2 + u) * m0 + (-2 * u3 + 3 * u2) * p1 +
           (u3 - u2) * m1;
  };
  const Matrix terminal = Matrix::Zero(sys.backward_dim(), 1);
  return rk4_backward([&](double t, const Matrix& v) { return offset_field(sys, s_at(t), v); },
                      terminal, grid);
}

/// Right-hand side of the minor gain equation
///   dK/dt = -(K A + A' K - 1/2 K B R^{-1} B' K + 2 Q).
inline Matrix minor_gain_field(const LqgModel& md, const Matrix& BRB, const Matrix& K) {
  return -(K * md.A + md.A.transpose() * K - 0.5 * K * BRB * K + 2.0 * md.Q);
}

inline GriddedTrajectory solve_minor_gain(const LqgModel& md, const TimeGrid& grid) {
  const Matrix BRB = md.B * md.R.llt().solve(md.B.transpose());
  try {
    return rk4_backward(
        [&](double, const Matrix& K) { return minor_gain_field(md, BRB, K); },
        Matrix::Zero(md.d, md.d), grid);
  } catch (const BlowUpError& e) {
    throw BlowUpError(e.node(), e.time(), "minor gain equation escapes");
  }
}

struct MinorOffsetCoeffs {
  GriddedTrajectory Phi1;
  GriddedTrajectory Phi2;
  GriddedTrajectory phi0;
};

/// k = Ybar - K Xbar, read off the Ybar row of S and s.
inline MinorOffsetCoeffs minor_offset_coeffs(const GriddedTrajectory& S,
                                             const GriddedTrajectory& K,
                                             const GriddedTrajectory& s, int d0, int d) {
  if (S.grid != K.grid || S.grid != s.grid)
    throw DimensionError("minor offset coefficients: grid mismatch");
  if (S.rows() != d0 + 2 * d || S.cols() != d0 + d || K.rows() != d || s.rows() != d0 + 2 * d)
    throw DimensionError("minor offset coefficients: block sizes");
  const std::size_t n = S.size();
  std::vector<Matrix> p1(n), p2(n), p0(n);
  for (std::size_t i = 0; i < n; ++i) {
    p1[i] = S[i].block(d0 + d, 0, d, d0);
    p2[i] = S[i].block(d0 + d, d0, d, d) - K[i];
    p0[i] = s[i].block(d0 + d, 0, d, 1);
  }
  return {GriddedTrajectory(S.grid, std::move(p1)), GriddedTrajectory(S.grid, std::move(p2)),
          GriddedTrajectory(S.grid, std::move(p0))};
}

enum class RiccatiMethod { kPropagator, kOde };

struct SolveOptions {
  RiccatiMethod method = RiccatiMethod::kPropagator;
  double cond_threshold = 1e12;
};

/// Full decoupling: S, s, K and the affine coefficients of k.
inline RiccatiSolution solve_equilibrium(const LqgModel& md, const TimeGrid& grid,
                                         const SolveOptions& opt = {}) {
  const AssembledSystem sys = assemble_compact(md);
  GriddedTrajectory S = opt.method == RiccatiMethod::kPropagator
                            ? solve_riccati_propagator(sys, grid, opt.cond_threshold)
                            : solve_riccati_ode(sys, grid);
  GriddedTrajectory s = solve_offset_ode(sys, S, grid);
  GriddedTrajectory K = solve_minor_gain(md, grid);
  MinorOffsetCoeffs c = minor_offset_coeffs(S, K, s, md.d0, md.d);
  return RiccatiSolution{std::move(S), std::move(s),      std::move(K), std::move(c.Phi1),
                         std::move(c.Phi2), std::move(c.phi0), md.d0, md.d};
}

// ---------------------------------------------------------------------------
// Residual checks

/// Largest entry of the Riccati residual at interior nodes, with dS/dt from
/// second-order central differences.
inline double riccati_residual(const AssembledSystem& sys, const GriddedTrajectory& S) {
  const double h = S.grid.step();
  double worst = 0.0;
  for (std::size_t i = 1; i + 1 < S.size(); ++i) {
    const Matrix dS = (S[i + 1] - S[i - 1]) / (2.0 * h);
    const Matrix r = dS + S[i] * sys.Abb + sys.Bhat * S[i] + S[i] * sys.Bbb * S[i] + sys.Ahat;
    worst = std::max(worst, r.cwiseAbs().maxCoeff());
  }
  return worst;
}

inline double offset_residual(const AssembledSystem& sys, const GriddedTrajectory& S,
                              const GriddedTrajectory& s) {
  const double h = S.grid.step();
  double worst = 0.0;
  for (std::size_t i = 1; i + 1 < S.size(); ++i) {
    const Matrix ds = (s[i + 1] - s[i - 1]) / (2.0 * h);
    const Matrix r = ds + (sys.Bhat + S[i] * sys.Bbb) * s[i] + (sys.Chat + S[i] * sys.Cbb);
    worst = std::max(worst, r.cwiseAbs().maxCoeff());
  }
  return worst;
}

/// Coefficient-wise mismatch between the drift of the reconstructed minor
/// adjoint Y = K X + Phi1 X0 + Phi2 Xbar + phi0 and the target drift
/// -(A' Y + 2Q X - 2QH X0 - 2Q Hhat Xbar - 2Q eta), at every node.
/// Time derivatives come from fourth-order finite differences.
inline double minor_affine_residual(const LqgModel& md, const RiccatiSolution& sol) {
  const Matrix BRB = md.B * md.R.llt().solve(md.B.transpose());
  const Matrix B0RB0 = md.B0 * md.R0.llt().solve(md.B0.transpose());
  const GriddedTrajectory dK = derivative4(sol.K);
  const GriddedTrajectory dP1 = derivative4(sol.Phi1);
  const GriddedTrajectory dP2 = derivative4(sol.Phi2);
  const GriddedTrajectory dp0 = derivative4(sol.phi0);
  const Matrix& At = md.A.transpose();
  double worst = 0.0;
  for (std::size_t i = 0; i < sol.K.size(); ++i) {
    const Matrix& K = sol.K[i];
    const Matrix& P1 = sol.Phi1[i];
    const Matrix& P2 = sol.Phi2[i];
    const Matrix& p0 = sol.phi0[i];
    // Closed-loop drifts of X0 and Xbar as affine maps of (X0, Xbar, 1).
    const Matrix x0_on_x0 = md.A0 - 0.5 * B0RB0 * sol.S11(i);
    const Matrix x0_on_xb = md.F0 - 0.5 * B0RB0 * sol.S12(i);
    const Matrix x0_const = -0.5 * B0RB0 * sol.s1(i);
    const Matrix xb_on_x0 = md.G - 0.5 * BRB * sol.S31(i);
    const Matrix xb_on_xb = md.A + md.F - 0.5 * BRB * sol.S32(i);
    const Matrix xb_const = -0.5 * BRB * sol.s3(i);
    // Drift of Y decomposed on X, X0, Xbar and the constant.
    const Matrix y_x = dK[i] + K * (md.A - 0.5 * BRB * K);
    const Matrix y_x0 = K * (md.G - 0.5 * BRB * P1) + dP1[i] + P1 * x0_on_x0 + P2 * xb_on_x0;
    const Matrix y_xb = K * (md.F - 0.5 * BRB * P2) + dP2[i] + P1 * x0_on_xb + P2 * xb_on_xb;
    const Matrix y_c = -0.5 * K * BRB * p0 + dp0[i] + P1 * x0_const + P2 * xb_const;
    const Matrix t_x = -(At * K + 2.0 * md.Q);
    const Matrix t_x0 = -(At * P1 - 2.0 * md.Q * md.H);
    const Matrix t_xb = -(At * P2 - 2.0 * md.Q * md.Hhat);
    const Matrix t_c = -(At * p0 - 2.0 * md.Q * md.eta);
    worst = std::max({worst, (y_x - t_x).cwiseAbs().maxCoeff(),
                      (y_x0 - t_x0).cwiseAbs().maxCoeff(), (y_xb - t_xb).cwiseAbs().maxCoeff(),
                      (y_c - t_c).cwiseAbs().maxCoeff()});
  }
  return worst;
}

}  // namespace mmfg
