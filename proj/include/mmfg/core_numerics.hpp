#pragma once

// Dense-matrix and ODE kernels shared by the solvers: matrix exponential,
// fixed-grid backward RK4, checked inversion and grid interpolation.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "mmfg/errors.hpp"

namespace mmfg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.array().isFinite().all(); }

/// Uniform grid t0 = tau_0 < ... < tau_n = t1.
class TimeGrid {
 public:
  TimeGrid(double t0, double t1, std::size_t n_steps)
      : t0_(t0), t1_(t1), n_steps_(n_steps) {
    if (n_steps < 2) throw RangeError("TimeGrid needs n_steps >= 2");
    if (!(t1 > t0) || !std::isfinite(t0) || !std::isfinite(t1))
      throw RangeError("TimeGrid needs finite t0 < t1");
  }
  static TimeGrid uniform(double horizon, std::size_t n_steps) {
    return TimeGrid(0.0, horizon, n_steps);
  }

  double t0() const { return t0_; }
  double t1() const { return t1_; }
  std::size_t n_steps() const { return n_steps_; }
  std::size_t n_nodes() const { return n_steps_ + 1; }
  double step() const { return (t1_ - t0_) / static_cast<double>(n_steps_); }

  double node(std::size_t i) const {
    if (i == n_steps_) return t1_;
    return t0_ + static_cast<double>(i) * step();
  }

  bool operator==(const TimeGrid& o) const {
    return t0_ == o.t0_ && t1_ == o.t1_ && n_steps_ == o.n_steps_;
  }
  bool operator!=(const TimeGrid& o) const { return !(*this == o); }

 private:
  double t0_;
  double t1_;
  std::size_t n_steps_;
};

/// One matrix per grid node, all of the same shape.
struct GriddedTrajectory {
  TimeGrid grid;
  std::vector<Matrix> values;

  GriddedTrajectory(TimeGrid g, std::vector<Matrix> v)
      : grid(g), values(std::move(v)) {
    if (values.size() != grid.n_nodes())
      throw DimensionError("trajectory length " + std::to_string(values.size()) +
                           " != node count " + std::to_string(grid.n_nodes()));
    for (const auto& m : values)
      if (m.rows() != values.front().rows() || m.cols() != values.front().cols())
        throw DimensionError("trajectory values of mixed shape");
  }
  GriddedTrajectory(TimeGrid g, const Matrix& fill)
      : GriddedTrajectory(g, std::vector<Matrix>(g.n_nodes(), fill)) {}

  const Matrix& operator[](std::size_t i) const { return values[i]; }
  Matrix& operator[](std::size_t i) { return values[i]; }
  std::size_t size() const { return values.size(); }
  Eigen::Index rows() const { return values.front().rows(); }
  Eigen::Index cols() const { return values.front().cols(); }

  /// Largest entrywise deviation from another trajectory on the same grid.
  double max_abs_diff(const GriddedTrajectory& o) const {
    if (grid != o.grid) throw DimensionError("grid mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i)
      worst = std::max(worst, (values[i] - o.values[i]).cwiseAbs().maxCoeff());
    return worst;
  }
};

namespace detail {

// Pade coefficients for degrees 3,5,7,9,13 and the theta thresholds of
// Higham (2005), "The scaling and squaring method for the matrix
// exponential revisited".
inline Matrix pade_low(const Matrix& a, int degree, Matrix* v_out) {
  static const std::array<double, 4> c3 = {120., 60., 12., 1.};
  static const std::array<double, 6> c5 = {30240., 15120., 3360., 420., 30., 1.};
  static const std::array<double, 8> c7 = {17297280., 8648640., 1995840., 277200.,
                                           25200.,    1512.,    56.,      1.};
  static const std::array<double, 10> c9 = {
      17643225600., 8821612800., 2075673600., 302702400., 30270240.,
      2162160.,     110880.,     3960.,       90.,        1.};
  const double* c = nullptr;
  switch (degree) {
    case 3: c = c3.data(); break;
    case 5: c = c5.data(); break;
    case 7: c = c7.data(); break;
    default: c = c9.data(); break;
  }
  const Eigen::Index n = a.rows();
  const Matrix id = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  Matrix power = id;
  Matrix u = c[1] * id;
  Matrix v = c[0] * id;
  for (int k = 2; k <= degree; k += 2) {
    power = power * a2;
    u += c[k + 1] * power;
    v += c[k] * power;
  }
  *v_out = v;
  return a * u;
}

inline Matrix pade13(const Matrix& a, Matrix* v_out) {
  static const std::array<double, 14> b = {
      64764752532480000., 32382376266240000., 7771770303897600.,
      1187353796428800.,  129060195264000.,   10559470521600.,
      670442572800.,      33522128640.,       1323241920.,
      40840800.,          960960.,            16380.,
      182.,               1.};
  const Eigen::Index n = a.rows();
  const Matrix id = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  Matrix u = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
             b[3] * a2 + b[1] * id;
  u = a * u;
  *v_out = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 +
           b[2] * a2 + b[0] * id;
  return u;
}

}  // namespace detail

/// Matrix exponential by scaling and squaring with a diagonal Pade kernel.
inline Matrix expm(const Matrix& m) {
  if (m.rows() != m.cols())
    throw DimensionError("expm of non-square " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + " matrix");
  if (!all_finite(m)) throw RangeError("expm of non-finite matrix");
  const Eigen::Index n = m.rows();
  if (n == 0) return m;

  static constexpr std::array<double, 4> theta = {1.495585217958292e-2,
                                                  2.539398330063230e-1,
                                                  9.504178996162932e-1,
                                                  2.097847961257068e0};
  static constexpr std::array<int, 4> degrees = {3, 5, 7, 9};
  static constexpr double theta13 = 5.371920351148152;

  const double norm1 = m.cwiseAbs().colwise().sum().maxCoeff();
  Matrix u;
  Matrix v;
  int squarings = 0;
  bool done = false;
  for (std::size_t i = 0; i < degrees.size() && !done; ++i) {
    if (norm1 <= theta[i]) {
      u = detail::pade_low(m, degrees[i], &v);
      done = true;
    }
  }
  if (!done) {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta13))));
    const Matrix scaled = m / std::ldexp(1.0, squarings);
    u = detail::pade13(scaled, &v);
  }
  Matrix result = (v - u).partialPivLu().solve(v + u);
  for (int k = 0; k < squarings; ++k) result = result * result;
  return result;
}

/// Classical RK4 run backward from the terminal node; every node is stored.
/// `field(t, V)` returns dV/dt.
template <class Field>
GriddedTrajectory rk4_backward(Field&& field, const Matrix& terminal,
                               const TimeGrid& grid) {
  std::vector<Matrix> values(grid.n_nodes());
  const std::size_t n = grid.n_steps();
  values[n] = terminal;
  if (!all_finite(terminal)) throw BlowUpError(n, grid.node(n), "non-finite terminal value");
  const double h = grid.step();
  for (std::size_t i = n; i-- > 0;) {
    const double t = grid.node(i + 1);
    const Matrix& y = values[i + 1];
    const Matrix k1 = field(t, y);
    const Matrix k2 = field(t - 0.5 * h, Matrix(y - 0.5 * h * k1));
    const Matrix k3 = field(t - 0.5 * h, Matrix(y - 0.5 * h * k2));
    const Matrix k4 = field(t - h, Matrix(y - h * k3));
    values[i] = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!all_finite(values[i]))
      throw BlowUpError(i, grid.node(i), "backward integration blew up");
  }
  return GriddedTrajectory(grid, std::move(values));
}

/// 2-norm condition number from the singular values (infinite when singular).
inline double condition_estimate(const Matrix& m) {
  if (m.size() == 0) return 1.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return sv(0) / smin;
}

inline Matrix invert_checked(const Matrix& m, double cond_threshold = 1e12) {
  if (m.rows() != m.cols()) throw DimensionError("inverse of non-square matrix");
  const double cond = condition_estimate(m);
  if (!(cond <= cond_threshold)) throw IllConditionedError(cond, "matrix is ill-conditioned");
  return m.partialPivLu().inverse();
}

/// Linear interpolation between the bracketing nodes; exact at nodes.
inline Matrix interp_eval(const GriddedTrajectory& traj, double t) {
  const TimeGrid& g = traj.grid;
  if (!(t >= g.t0() && t <= g.t1()))
    throw RangeError("t=" + std::to_string(t) + " outside [" + std::to_string(g.t0()) +
                     ", " + std::to_string(g.t1()) + "]");
  const double pos = (t - g.t0()) / g.step();
  std::size_t i = static_cast<std::size_t>(std::floor(pos));
  if (i >= g.n_steps()) i = g.n_steps() - 1;
  const double t_lo = g.node(i);
  const double t_hi = g.node(i + 1);
  if (t == t_lo) return traj[i];
  if (t == t_hi) return traj[i + 1];
  const double w = (t - t_lo) / (t_hi - t_lo);
  return (1.0 - w) * traj[i] + w * traj[i + 1];
}

/// Fourth-order finite-difference time derivative at every node (centred in
/// the interior, one-sided five-point stencils at the two nodes next to each
/// end). Needs at least five nodes.
inline GriddedTrajectory derivative4(const GriddedTrajectory& traj) {
  const std::size_t n = traj.size();
  if (n < 5) throw RangeError("derivative4 needs at least 5 nodes");
  const double h = traj.grid.step();
  std::vector<Matrix> d(n);
  const auto& f = traj.values;
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= 2 && i + 2 < n) {
      d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h);
    } else if (i < 2) {
      const std::size_t b = 0;
      if (i == 0)
        d[i] = (-25.0 * f[b] + 48.0 * f[b + 1] - 36.0 * f[b + 2] + 16.0 * f[b + 3] -
                3.0 * f[b + 4]) / (12.0 * h);
      else
        d[i] = (-3.0 * f[b] - 10.0 * f[b + 1] + 18.0 * f[b + 2] - 6.0 * f[b + 3] +
                f[b + 4]) / (12.0 * h);
    } else {
      const std::size_t e = n - 1;
      if (i == e)
        d[i] = (25.0 * f[e] - 48.0 * f[e - 1] + 36.0 * f[e - 2] - 16.0 * f[e - 3] +
                3.0 * f[e - 4]) / (12.0 * h);
      else
        d[i] = (3.0 * f[e] + 10.0 * f[e - 1] - 18.0 * f[e - 2] + 6.0 * f[e - 3] -
                f[e - 4]) / (12.0 * h);
    }
  }
  return GriddedTrajectory(traj.grid, std::move(d));
}

}  // namespace mmfg
