#pragma once

// Coefficient data of the linear-quadratic major/minor game and the
// assembly of its conditioned FBSDE into compact block form.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "mmfg/core_numerics.hpp"

namespace mmfg {

/// Major player (state X0) and representative minor player (state X).
///
///   dX0 = (A0 X0 + B0 u0 + F0 Xbar) dt + D0 dW0
///   dX  = (A X + B u + F Xbar + G X0) dt + D dW
///
/// Running costs (no terminal cost):
///   major  (X0 - H0 Xbar - eta0)' Q0 (...) + u0' R0 u0
///   minor  (X - H X0 - Hhat Xbar - eta)' Q (...) + u' R u
struct LqgModel {
  int d0 = 1;
  int d = 1;
  int k0 = 1;
  int k = 1;
  int m0 = 1;
  int m = 1;
  double T = 1.0;

  Matrix A0, B0, F0, D0;
  Matrix A, B, F, G, D;
  Matrix Q0, R0, H0;
  Vector eta0;
  Matrix Q, R, H, Hhat;
  Vector eta;
  Vector x0_major;
  Vector x0_minor;

  /// Model with every coefficient zero and R0, R set to identity.
  static LqgModel zeros(int d0, int d, int k0, int k, int m0, int m, double T = 1.0) {
    LqgModel md;
    md.d0 = d0; md.d = d; md.k0 = k0; md.k = k; md.m0 = m0; md.m = m; md.T = T;
    md.A0 = Matrix::Zero(d0, d0);
    md.B0 = Matrix::Zero(d0, k0);
    md.F0 = Matrix::Zero(d0, d);
    md.D0 = Matrix::Zero(d0, m0);
    md.A = Matrix::Zero(d, d);
    md.B = Matrix::Zero(d, k);
    md.F = Matrix::Zero(d, d);
    md.G = Matrix::Zero(d, d0);
    md.D = Matrix::Zero(d, m);
    md.Q0 = Matrix::Zero(d0, d0);
    md.R0 = Matrix::Identity(k0, k0);
    md.H0 = Matrix::Zero(d0, d);
    md.eta0 = Vector::Zero(d0);
    md.Q = Matrix::Zero(d, d);
    md.R = Matrix::Identity(k, k);
    md.H = Matrix::Zero(d, d0);
    md.Hhat = Matrix::Zero(d, d);
    md.eta = Vector::Zero(d);
    md.x0_major = Vector::Zero(d0);
    md.x0_minor = Vector::Zero(d);
    return md;
  }
};

namespace detail {

inline void check_shape(std::vector<std::string>& out, const char* name,
                        const Matrix& m, int rows, int cols) {
  if (m.rows() != rows || m.cols() != cols) {
    out.push_back(std::string(name) + " has shape " + std::to_string(m.rows()) + "x" +
                  std::to_string(m.cols()) + ", expected " + std::to_string(rows) +
                  "x" + std::to_string(cols));
  } else if (!all_finite(m)) {
    out.push_back(std::string(name) + " has non-finite entries");
  }
}

inline bool is_symmetric(const Matrix& m, double tol) {
  return m.rows() == m.cols() && (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

inline double min_eigenvalue(const Matrix& sym) {
  if (sym.size() == 0) return 1.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (sym + sym.transpose()),
                                           Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace detail

inline constexpr double kSymmetryTol = 1e-10;

/// Every violation found; empty means the model is usable.
inline std::vector<std::string> validate(const LqgModel& md) {
  std::vector<std::string> out;
  if (md.d0 < 1 || md.d < 1 || md.k0 < 1 || md.k < 1 || md.m0 < 1 || md.m < 1)
    out.push_back("dimensions d0, d, k0, k, m0, m must all be >= 1");
  if (!(md.T > 0.0) || !std::isfinite(md.T)) out.push_back("T must be positive and finite");
  if (!out.empty()) return out;

  const std::size_t before = out.size();
  detail::check_shape(out, "A0", md.A0, md.d0, md.d0);
  detail::check_shape(out, "B0", md.B0, md.d0, md.k0);
  detail::check_shape(out, "F0", md.F0, md.d0, md.d);
  detail::check_shape(out, "D0", md.D0, md.d0, md.m0);
  detail::check_shape(out, "A", md.A, md.d, md.d);
  detail::check_shape(out, "B", md.B, md.d, md.k);
  detail::check_shape(out, "F", md.F, md.d, md.d);
  detail::check_shape(out, "G", md.G, md.d, md.d0);
  detail::check_shape(out, "D", md.D, md.d, md.m);
  detail::check_shape(out, "Q0", md.Q0, md.d0, md.d0);
  detail::check_shape(out, "R0", md.R0, md.k0, md.k0);
  detail::check_shape(out, "H0", md.H0, md.d0, md.d);
  detail::check_shape(out, "eta0", md.eta0, md.d0, 1);
  detail::check_shape(out, "Q", md.Q, md.d, md.d);
  detail::check_shape(out, "R", md.R, md.k, md.k);
  detail::check_shape(out, "H", md.H, md.d, md.d0);
  detail::check_shape(out, "Hhat", md.Hhat, md.d, md.d);
  detail::check_shape(out, "eta", md.eta, md.d, 1);
  detail::check_shape(out, "x0_major", md.x0_major, md.d0, 1);
  detail::check_shape(out, "x0_minor", md.x0_minor, md.d, 1);
  if (out.size() != before) return out;

  auto psd = [&](const char* name, const Matrix& m) {
    if (!detail::is_symmetric(m, kSymmetryTol))
      out.push_back(std::string(name) + " not symmetric");
    else if (detail::min_eigenvalue(m) < -kSymmetryTol)
      out.push_back(std::string(name) + " not positive semidefinite");
  };
  auto pd = [&](const char* name, const Matrix& m) {
    if (!detail::is_symmetric(m, kSymmetryTol))
      out.push_back(std::string(name) + " not symmetric");
    else if (!(detail::min_eigenvalue(m) > 0.0))
      out.push_back(std::string(name) + " not positive definite");
  };
  psd("Q0", md.Q0);
  pd("R0", md.R0);
  psd("Q", md.Q);
  pd("R", md.R);
  return out;
}

/// Compact form of the conditioned system for X = (X0, Xbar) and
/// Y = (P0bar, Pbar, Ybar):
///
///   dX = (Abb X + Bbb Y + Cbb) dt + Dbb dW0
///   dY = -(Ahat X + Bhat Y + Chat) dt + Z dW0
///
/// `hamiltonian` is the generator [[Abb, Bbb], [-Ahat, -Bhat]] of the linear
/// flow whose propagator yields the Riccati solution.
struct AssembledSystem {
  int d0 = 0;
  int d = 0;
  Matrix Abb;    // (d0+d) x (d0+d)
  Matrix Bbb;    // (d0+d) x (d0+2d)
  Matrix Dbb;    // (d0+d) x m0
  Matrix Ahat;   // (d0+2d) x (d0+d)
  Matrix Bhat;   // (d0+2d) x (d0+2d)
  Vector Cbb;    // d0+d
  Vector Chat;   // d0+2d
  Matrix hamiltonian;

  int forward_dim() const { return d0 + d; }
  int backward_dim() const { return d0 + 2 * d; }

  /// Builds the generator from the four blocks already set.
  void assemble_hamiltonian() {
    const int nf = forward_dim();
    const int nb = backward_dim();
    hamiltonian = Matrix::Zero(nf + nb, nf + nb);
    hamiltonian.topLeftCorner(nf, nf) = Abb;
    hamiltonian.topRightCorner(nf, nb) = Bbb;
    hamiltonian.bottomLeftCorner(nb, nf) = -Ahat;
    hamiltonian.bottomRightCorner(nb, nb) = -Bhat;
  }
};

inline AssembledSystem assemble_compact(const LqgModel& md) {
  if (auto v = validate(md); !v.empty()) {
    std::string msg = "invalid model:";
    for (const auto& s : v) msg += " " + s + ";";
    throw ValidationError(msg);
  }
  const int d0 = md.d0;
  const int d = md.d;
  AssembledSystem sys;
  sys.d0 = d0;
  sys.d = d;

  const Matrix major_gain = -0.5 * md.B0 * md.R0.llt().solve(md.B0.transpose());
  const Matrix minor_gain = -0.5 * md.B * md.R.llt().solve(md.B.transpose());

  sys.Abb = Matrix::Zero(d0 + d, d0 + d);
  sys.Abb.topLeftCorner(d0, d0) = md.A0;
  sys.Abb.topRightCorner(d0, d) = md.F0;
  sys.Abb.bottomLeftCorner(d, d0) = md.G;
  sys.Abb.bottomRightCorner(d, d) = md.A + md.F;

  sys.Bbb = Matrix::Zero(d0 + d, d0 + 2 * d);
  sys.Bbb.block(0, 0, d0, d0) = major_gain;
  sys.Bbb.block(d0, d0 + d, d, d) = minor_gain;

  sys.Dbb = Matrix::Zero(d0 + d, md.m0);
  sys.Dbb.topRows(d0) = md.D0;

  const Matrix q0h0 = md.Q0 * md.H0;
  sys.Ahat = Matrix::Zero(d0 + 2 * d, d0 + d);
  sys.Ahat.block(0, 0, d0, d0) = 2.0 * md.Q0;
  sys.Ahat.block(0, d0, d0, d) = -2.0 * q0h0;
  sys.Ahat.block(d0, 0, d, d0) = 2.0 * md.H0.transpose() * md.Q0;
  sys.Ahat.block(d0, d0, d, d) = -2.0 * md.H0.transpose() * q0h0;
  sys.Ahat.block(d0 + d, 0, d, d0) = -2.0 * md.Q * md.H;
  sys.Ahat.block(d0 + d, d0, d, d) = 2.0 * md.Q - 2.0 * md.Q * md.Hhat;

  sys.Bhat = Matrix::Zero(d0 + 2 * d, d0 + 2 * d);
  sys.Bhat.block(0, 0, d0, d0) = md.A0.transpose();
  sys.Bhat.block(0, d0, d0, d) = md.G.transpose();
  sys.Bhat.block(d0, 0, d, d0) = md.F0.transpose();
  sys.Bhat.block(d0, d0, d, d) = (md.A + md.F).transpose();
  sys.Bhat.block(d0 + d, d0 + d, d, d) = md.A.transpose();

  // Constant terms: the backward drifts carry +2 Q0 eta0, +2 H0' Q0 eta0 and
  // +2 Q eta, and the forward system has none.
  sys.Cbb = Vector::Zero(d0 + d);
  sys.Chat = Vector::Zero(d0 + 2 * d);
  sys.Chat.segment(0, d0) = -2.0 * md.Q0 * md.eta0;
  sys.Chat.segment(d0, d) = -2.0 * md.H0.transpose() * md.Q0 * md.eta0;
  sys.Chat.segment(d0 + d, d) = -2.0 * md.Q * md.eta;

  sys.assemble_hamiltonian();
  return sys;
}

}  // namespace mmfg
