#pragma once

// Euler-Maruyama simulation of the finite (N+1)-player game under the
// equilibrium feedback, of the limiting system (exact conditional mean plus
// conditionally independent minor particles) and of the conditional-mean
// system alone. All systems draw from one NoiseSource so that they can be
// coupled path by path.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

#include "mmfg/core_numerics.hpp"
#include "mmfg/lqg_model.hpp"
#include "mmfg/noise.hpp"
#include "mmfg/parallel.hpp"
#include "mmfg/riccati.hpp"

namespace mmfg {

/// Replaces one player's equilibrium control by a perturbation of it.
struct Deviation {
  enum class Kind { kScale, kShift };
  int player = 0;  // 0 is the major player, i >= 1 the i-th minor player
  Kind kind = Kind::kScale;
  double value = 1.0;

  template <class Derived>
  void apply(Eigen::MatrixBase<Derived>&& u) const {
    if (kind == Kind::kScale)
      u *= value;
    else
      u.array() += value;
  }

  std::string label() const {
    std::ostringstream os;
    os << (player == 0 ? "major" : "minor" + std::to_string(player))
       << (kind == Kind::kScale ? ":scale=" : ":shift=") << value;
    return os.str();
  }
};

/// Affine feedback coefficients tabulated on the Riccati grid.
///   major        u0   = major_x0 X0 + major_xbar Xbar + major_const
///   minor        u    = minor_x X + minor_x0 X0 + minor_xbar Xbar + minor_const
///   mean minor   ubar = mean_x0 X0 + mean_xbar Xbar + mean_const
struct FeedbackTables {
  TimeGrid grid;
  std::vector<Matrix> major_x0, major_xbar, minor_x, minor_x0, minor_xbar, mean_x0, mean_xbar;
  std::vector<Vector> major_const, minor_const, mean_const;

  static FeedbackTables build(const LqgModel& md, const RiccatiSolution& sol) {
    const std::size_t n = sol.grid().n_nodes();
    FeedbackTables fb{sol.grid(), {}, {}, {}, {}, {}, {}, {}, {}, {}, {}};
    const Matrix major_gain = -0.5 * md.R0.llt().solve(md.B0.transpose());
    const Matrix minor_gain = -0.5 * md.R.llt().solve(md.B.transpose());
    for (auto* v : {&fb.major_x0, &fb.major_xbar, &fb.minor_x, &fb.minor_x0, &fb.minor_xbar,
                    &fb.mean_x0, &fb.mean_xbar})
      v->resize(n);
    fb.major_const.resize(n);
    fb.minor_const.resize(n);
    fb.mean_const.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      fb.major_x0[i] = major_gain * sol.S11(i);
      fb.major_xbar[i] = major_gain * sol.S12(i);
      fb.major_const[i] = major_gain * sol.s1(i);
      fb.minor_x[i] = minor_gain * sol.K[i];
      fb.minor_x0[i] = minor_gain * sol.Phi1[i];
      fb.minor_xbar[i] = minor_gain * sol.Phi2[i];
      fb.minor_const[i] = minor_gain * sol.phi0[i].col(0);
      fb.mean_x0[i] = minor_gain * sol.S31(i);
      fb.mean_xbar[i] = minor_gain * sol.S32(i);
      fb.mean_const[i] = minor_gain * sol.s3(i);
    }
    return fb;
  }
};

/// Brownian increments of one time step: dW0 for the major player and one
/// column per minor player 1..P.
struct StepNoise {
  Vector dW0;
  Matrix dW;

  void draw(const NoiseSource& noise, std::uint64_t path, std::size_t step, int m0, int m,
            int n_minor, double h) {
    const double sq = std::sqrt(h);
    dW0.resize(m0);
    noise.standard_normals(path, 0, step, m0, dW0.data());
    dW0 *= sq;
    dW.resize(m, n_minor);
    for (int j = 0; j < n_minor; ++j)
      noise.standard_normals(path, static_cast<std::uint64_t>(j) + 1, step, m,
                             dW.col(j).data());
    dW *= sq;
  }
};

/// The (N+1)-player system. Xbar^N is the running average of the minors.
class FiniteGame {
 public:
  FiniteGame(const LqgModel& md, const FeedbackTables& fb, int n_minor,
             std::optional<Deviation> deviation = std::nullopt)
      : md_(md), fb_(fb), n_(n_minor), dev_(deviation) {
    if (n_minor < 1) throw RangeError("finite game needs N >= 1");
    if (dev_ && (dev_->player < 0 || dev_->player > n_minor))
      throw RangeError("deviation player index out of range");
    reset();
  }

  void reset() {
    x0_ = md_.x0_major;
    x_ = md_.x0_minor.replicate(1, n_);
    xbar_ = md_.x0_minor;
  }

  void update_controls(std::size_t node) {
    u0_ = fb_.major_x0[node] * x0_ + fb_.major_xbar[node] * xbar_ + fb_.major_const[node];
    const Vector common =
        fb_.minor_x0[node] * x0_ + fb_.minor_xbar[node] * xbar_ + fb_.minor_const[node];
    u_.noalias() = fb_.minor_x[node] * x_;
    u_.colwise() += common;
    if (dev_) {
      if (dev_->player == 0)
        dev_->apply(u0_.col(0));
      else
        dev_->apply(u_.col(dev_->player - 1));
    }
  }

  /// Euler step node -> node+1 with the controls of the last update_controls.
  void advance(double h, const Vector& dW0, const Matrix& dW) {
    Vector x0_next = x0_ + h * (md_.A0 * x0_ + md_.B0 * u0_ + md_.F0 * xbar_) + md_.D0 * dW0;
    const Vector shared = md_.F * xbar_ + md_.G * x0_;
    Matrix drift = md_.A * x_ + md_.B * u_;
    drift.colwise() += shared;
    x_ += h * drift + md_.D * dW.leftCols(n_);
    x0_ = std::move(x0_next);
    xbar_ = x_.rowwise().mean();
  }

  int size() const { return n_; }
  const Vector& major() const { return x0_; }
  const Matrix& minors() const { return x_; }
  const Vector& mean() const { return xbar_; }
  const Vector& major_control() const { return u0_; }
  const Matrix& minor_controls() const { return u_; }

 private:
  const LqgModel& md_;
  const FeedbackTables& fb_;
  int n_;
  std::optional<Deviation> dev_;
  Vector x0_, xbar_, u0_;
  Matrix x_, u_;
};

/// The limiting system: X0 driven by W0, Xbar by its exact conditional-mean
/// dynamics, and M minor particles that see the exact Xbar.
class LimitSystem {
 public:
  LimitSystem(const LqgModel& md, const FeedbackTables& fb, int n_particles)
      : md_(md), fb_(fb), n_(n_particles) {
    if (n_particles < 0) throw RangeError("negative particle count");
    reset();
  }

  void reset() {
    x0_ = md_.x0_major;
    xbar_ = md_.x0_minor;
    x_ = md_.x0_minor.replicate(1, n_);
  }

  void update_controls(std::size_t node) {
    u0_ = fb_.major_x0[node] * x0_ + fb_.major_xbar[node] * xbar_ + fb_.major_const[node];
    ubar_ = fb_.mean_x0[node] * x0_ + fb_.mean_xbar[node] * xbar_ + fb_.mean_const[node];
    if (n_ > 0) {
      const Vector common =
          fb_.minor_x0[node] * x0_ + fb_.minor_xbar[node] * xbar_ + fb_.minor_const[node];
      u_.noalias() = fb_.minor_x[node] * x_;
      u_.colwise() += common;
    }
  }

  void advance(double h, const Vector& dW0, const Matrix& dW) {
    Vector x0_next = x0_ + h * (md_.A0 * x0_ + md_.B0 * u0_ + md_.F0 * xbar_) + md_.D0 * dW0;
    const Vector shared = md_.F * xbar_ + md_.G * x0_;
    if (n_ > 0) {
      Matrix drift = md_.A * x_ + md_.B * u_;
      drift.colwise() += shared;
      x_ += h * drift + md_.D * dW.leftCols(n_);
    }
    xbar_ += h * (md_.A * xbar_ + md_.B * ubar_ + shared);
    x0_ = std::move(x0_next);
  }

  int size() const { return n_; }
  const Vector& major() const { return x0_; }
  const Matrix& particles() const { return x_; }
  const Vector& mean() const { return xbar_; }
  const Vector& major_control() const { return u0_; }
  const Matrix& particle_controls() const { return u_; }

 private:
  const LqgModel& md_;
  const FeedbackTables& fb_;
  int n_;
  Vector x0_, xbar_, u0_, ubar_;
  Matrix x_, u_;
};

// ---------------------------------------------------------------------------
// Path bundles

/// One simulated path. Trajectory matrices have one column per grid node.
struct PathRecord {
  Matrix major;
  Matrix cond_mean;
  std::vector<Matrix> minors;
  Matrix P0bar, Pbar, Ybar;  // empty when not reconstructed
  Matrix u0;                 // empty when controls were not recorded
  std::vector<Matrix> u_minor;
};

struct PathBundle {
  TimeGrid grid;
  std::vector<PathRecord> paths;
  bool has_controls() const { return !paths.empty() && paths.front().u0.size() > 0; }
  bool has_adjoints() const { return !paths.empty() && paths.front().P0bar.size() > 0; }
};

struct SimOptions {
  /// Minors (or limit particles) stored per path; the rest are simulated but
  /// not recorded. Negative means all.
  int max_recorded = -1;
  bool record_controls = true;
  std::optional<Deviation> deviation;
};

namespace detail {

inline void check_grid(const RiccatiSolution& sol, const TimeGrid& grid) {
  if (sol.grid() != grid)
    throw DimensionError("simulation grid differs from the Riccati grid");
}

inline void reconstruct_adjoints(const RiccatiSolution& sol, PathRecord& rec) {
  const int d0 = sol.d0;
  const int d = sol.d;
  const std::size_t n = sol.grid().n_nodes();
  rec.P0bar.resize(d0, static_cast<Eigen::Index>(n));
  rec.Pbar.resize(d, static_cast<Eigen::Index>(n));
  rec.Ybar.resize(d, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const Vector y = sol.S[i] * (Vector(d0 + d) << rec.major.col(c), rec.cond_mean.col(c))
                                    .finished() +
                     sol.s[i].col(0);
    rec.P0bar.col(c) = y.segment(0, d0);
    rec.Pbar.col(c) = y.segment(d0, d);
    rec.Ybar.col(c) = y.segment(d0 + d, d);
  }
}

template <class System>
PathRecord run_recorded_path(System& sys, const LqgModel& md, const TimeGrid& grid,
                             const NoiseSource& noise, std::uint64_t path, int n_players,
                             int n_record, bool record_controls) {
  const std::size_t nodes = grid.n_nodes();
  const auto cols = static_cast<Eigen::Index>(nodes);
  PathRecord rec;
  rec.major.resize(md.d0, cols);
  rec.cond_mean.resize(md.d, cols);
  rec.minors.assign(static_cast<std::size_t>(n_record), Matrix(md.d, cols));
  if (record_controls) {
    rec.u0.resize(md.k0, cols);
    rec.u_minor.assign(static_cast<std::size_t>(n_record), Matrix(md.k, cols));
  }
  sys.reset();
  StepNoise dn;
  const double h = grid.step();
  for (std::size_t i = 0; i < nodes; ++i) {
    sys.update_controls(i);
    const auto c = static_cast<Eigen::Index>(i);
    rec.major.col(c) = sys.major();
    rec.cond_mean.col(c) = sys.mean();
    const Matrix* xs;
    const Matrix* us;
    if constexpr (std::is_same_v<System, FiniteGame>) {
      xs = &sys.minors();
      us = &sys.minor_controls();
    } else {
      xs = &sys.particles();
      us = &sys.particle_controls();
    }
    for (int j = 0; j < n_record; ++j) rec.minors[j].col(c) = xs->col(j);
    if (record_controls) {
      rec.u0.col(c) = sys.major_control();
      for (int j = 0; j < n_record; ++j) rec.u_minor[j].col(c) = us->col(j);
    }
    if (i + 1 < nodes) {
      dn.draw(noise, path, i, md.m0, md.m, n_players, h);
      sys.advance(h, dn.dW0, dn.dW);
    }
  }
  return rec;
}

}  // namespace detail

/// (X0, Xbar) of the limiting system with the reconstructed adjoints
/// P0bar, Pbar, Ybar, driven by W0 only.
inline PathBundle simulate_conditional_mean(const LqgModel& md, const RiccatiSolution& sol,
                                            const TimeGrid& grid, const NoiseSource& noise,
                                            std::size_t n_paths) {
  detail::check_grid(sol, grid);
  const FeedbackTables fb = FeedbackTables::build(md, sol);
  PathBundle out{grid, {}};
  out.paths = parallel_map(n_paths, [&](std::size_t p) {
    LimitSystem sys(md, fb, 0);
    PathRecord rec = detail::run_recorded_path(sys, md, grid, noise, p, 0, 0, true);
    detail::reconstruct_adjoints(sol, rec);
    return rec;
  });
  return out;
}

inline PathBundle simulate_finite_game(const LqgModel& md, const RiccatiSolution& sol, int N,
                                       const TimeGrid& grid, const NoiseSource& noise,
                                       std::size_t n_paths, const SimOptions& opt = {}) {
  if (N < 1) throw RangeError("simulate_finite_game needs N >= 1");
  detail::check_grid(sol, grid);
  const FeedbackTables fb = FeedbackTables::build(md, sol);
  const int n_record = opt.max_recorded < 0 ? N : std::min(N, opt.max_recorded);
  PathBundle out{grid, {}};
  out.paths = parallel_map(n_paths, [&](std::size_t p) {
    FiniteGame sys(md, fb, N, opt.deviation);
    PathRecord rec =
        detail::run_recorded_path(sys, md, grid, noise, p, N, n_record, opt.record_controls);
    detail::reconstruct_adjoints(sol, rec);
    return rec;
  });
  return out;
}

inline PathBundle simulate_limit_particles(const LqgModel& md, const RiccatiSolution& sol, int M,
                                           const TimeGrid& grid, const NoiseSource& noise,
                                           std::size_t n_paths, const SimOptions& opt = {}) {
  if (M < 1) throw RangeError("simulate_limit_particles needs M >= 1");
  detail::check_grid(sol, grid);
  const FeedbackTables fb = FeedbackTables::build(md, sol);
  const int n_record = opt.max_recorded < 0 ? M : std::min(M, opt.max_recorded);
  PathBundle out{grid, {}};
  out.paths = parallel_map(n_paths, [&](std::size_t p) {
    LimitSystem sys(md, fb, M);
    PathRecord rec = detail::run_recorded_path(sys, md, grid, noise, p, M, n_record,
                                               opt.record_controls);
    detail::reconstruct_adjoints(sol, rec);
    return rec;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Costs

inline double major_running_cost(const LqgModel& md, const Vector& x0, const Vector& xbar,
                                 const Vector& u0) {
  const Vector e = x0 - md.H0 * xbar - md.eta0;
  return e.dot(md.Q0 * e) + u0.dot(md.R0 * u0);
}

inline double minor_running_cost(const LqgModel& md, const Vector& x, const Vector& x0,
                                 const Vector& xbar, const Vector& u) {
  const Vector e = x - md.H * x0 - md.Hhat * xbar - md.eta;
  return e.dot(md.Q * e) + u.dot(md.R * u);
}

/// Trapezoidal weights of a uniform grid.
inline double trapezoid_weight(const TimeGrid& grid, std::size_t i) {
  return (i == 0 || i == grid.n_steps()) ? 0.5 * grid.step() : grid.step();
}

struct CostEstimate {
  Estimate J0;
  Estimate J_minor_mean;
};

/// Per-path major cost and average recorded-minor cost.
inline std::pair<double, double> path_costs(const PathRecord& rec, const LqgModel& md,
                                            const TimeGrid& grid) {
  double j0 = 0.0;
  double jm = 0.0;
  for (std::size_t i = 0; i < grid.n_nodes(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const double w = trapezoid_weight(grid, i);
    const Vector x0 = rec.major.col(c);
    const Vector xbar = rec.cond_mean.col(c);
    j0 += w * major_running_cost(md, x0, xbar, rec.u0.col(c));
    double acc = 0.0;
    for (std::size_t j = 0; j < rec.minors.size(); ++j)
      acc += minor_running_cost(md, rec.minors[j].col(c), x0, xbar, rec.u_minor[j].col(c));
    if (!rec.minors.empty()) jm += w * acc / static_cast<double>(rec.minors.size());
  }
  return {j0, jm};
}

inline CostEstimate estimate_costs(const PathBundle& bundle, const LqgModel& md) {
  if (!bundle.has_controls()) throw ValidationError("estimate_costs needs recorded controls");
  std::vector<double> j0(bundle.paths.size());
  std::vector<double> jm(bundle.paths.size());
  for (std::size_t p = 0; p < bundle.paths.size(); ++p)
    std::tie(j0[p], jm[p]) = path_costs(bundle.paths[p], md, bundle.grid);
  return {estimate_mean(j0), estimate_mean(jm)};
}

/// Sample estimate of E int_0^T |u0_t|^p dt.
inline Estimate major_control_moment(const PathBundle& bundle, double p) {
  if (!bundle.has_controls()) throw ValidationError("control moment needs recorded controls");
  std::vector<double> v(bundle.paths.size());
  for (std::size_t k = 0; k < bundle.paths.size(); ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < bundle.grid.n_nodes(); ++i)
      acc += trapezoid_weight(bundle.grid, i) *
             std::pow(bundle.paths[k].u0.col(static_cast<Eigen::Index>(i)).norm(), p);
    v[k] = acc;
  }
  return estimate_mean(v);
}

// ---------------------------------------------------------------------------
// Wasserstein distance

/// Equal-weight atoms stored as the columns of a d x count matrix.
struct EmpiricalMeasure {
  Matrix atoms;

  EmpiricalMeasure() = default;
  explicit EmpiricalMeasure(Matrix a) : atoms(std::move(a)) {
    if (atoms.cols() < 1) throw RangeError("empirical measure needs at least one atom");
  }
  static EmpiricalMeasure from_values(const std::vector<double>& xs) {
    return EmpiricalMeasure(Eigen::Map<const Matrix>(xs.data(), 1,
                                                     static_cast<Eigen::Index>(xs.size())));
  }
  int dim() const { return static_cast<int>(atoms.rows()); }
  Eigen::Index count() const { return atoms.cols(); }
};

/// Squared W2 between two equal-size empirical measures on the line, by
/// matching order statistics. Works on scratch copies.
inline double wasserstein2_sq_1d(std::vector<double> a, std::vector<double> b) {
  if (a.size() != b.size() || a.empty())
    throw UnsupportedError("W2 needs two non-empty measures with equal atom counts");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

inline double wasserstein2_sq_1d(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  if (a.dim() != 1 || b.dim() != 1) throw UnsupportedError("W2 is only provided for d = 1");
  if (a.count() != b.count()) throw UnsupportedError("W2 needs equal atom counts");
  return wasserstein2_sq_1d(std::vector<double>(a.atoms.data(), a.atoms.data() + a.count()),
                            std::vector<double>(b.atoms.data(), b.atoms.data() + b.count()));
}

inline double wasserstein2_1d(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  return std::sqrt(wasserstein2_sq_1d(a, b));
}

}  // namespace mmfg
