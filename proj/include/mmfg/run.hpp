#pragma once

// Experiment dispatch for the command-line front end. Each run writes
// summary.json (keys: config, verdicts, metrics, timings), its data CSVs and
// a separate timings.json holding wall-clock time.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <string>

#include "mmfg/example6.hpp"
#include "mmfg/experiments.hpp"
#include "mmfg/io.hpp"
#include "mmfg/riccati.hpp"
#include "mmfg/sim.hpp"

namespace mmfg::cli {

using io::json;

enum ExitCode : int { kOk = 0, kUnexpected = 1, kConfigError = 2, kNumericError = 3, kIoError = 4 };

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig: return kConfigError;
    case ErrorKind::kNumerics: return kNumericError;
    case ErrorKind::kIo: return kIoError;
  }
  return kUnexpected;
}

/// JSON has no infinities; map them to null.
inline json num(double x) { return std::isfinite(x) ? json(x) : json(); }

inline json to_json(const Estimate& e) {
  return {{"mean", num(e.mean)}, {"stderr", num(e.std_error)}, {"samples", e.samples}};
}

inline json to_json(const RateFit& f) {
  return {{"slope", num(f.slope)}, {"intercept", num(f.intercept)}, {"r_squared", num(f.r_squared)}};
}

struct Artifacts {
  json verdicts = json::object();
  json metrics = json::object();
  json work = json::object();
  std::vector<std::pair<std::string, io::CsvTable>> tables;
};

namespace detail {

inline void require_valid(const LqgModel& md) {
  const auto v = validate(md);
  if (v.empty()) return;
  std::string msg = "invalid model: " + v.front();
  for (std::size_t i = 1; i < v.size(); ++i) msg += "; " + v[i];
  throw ValidationError(msg);
}

struct Prepared {
  LqgModel md;
  TimeGrid grid;
  RiccatiSolution sol;
};

inline Prepared prepare(const io::RunConfig& cfg) {
  if (cfg.example) example6::require_valid(*cfg.example);
  LqgModel md = cfg.lqg();
  require_valid(md);
  TimeGrid grid = TimeGrid::uniform(md.T, static_cast<std::size_t>(cfg.n_steps));
  RiccatiSolution sol = solve_equilibrium(md, grid, {cfg.method, cfg.cond_threshold});
  return {std::move(md), std::move(grid), std::move(sol)};
}

inline double chaos_threshold(int d) { return -2.0 / (d + 4.0) + 0.1; }

inline void add_matrix_rows(io::CsvTable& t, double time, const std::string& series,
                            const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      t.add({time, series, static_cast<long long>(i), static_cast<long long>(j), m(i, j)});
}

inline void add_series(io::CsvTable& t, long long path, const TimeGrid& grid,
                       const std::string& series, const Matrix& m) {
  for (Eigen::Index comp = 0; comp < m.rows(); ++comp)
    for (std::size_t i = 0; i < grid.n_nodes(); ++i)
      t.add({path, grid.node(i), series, static_cast<long long>(comp),
             m(comp, static_cast<Eigen::Index>(i))});
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline Artifacts run_validate(const io::RunConfig& cfg) {
  Artifacts a;
  std::vector<std::string> v;
  if (cfg.example) v = cfg.example->violations();
  if (v.empty()) {
    const LqgModel md = cfg.lqg();
    v = validate(md);
  }
  a.verdicts["valid"] = v.empty();
  a.metrics["violations"] = v;
  return a;
}

inline Artifacts run_solve(const io::RunConfig& cfg) {
  if (cfg.example) example6::require_valid(*cfg.example);
  const LqgModel md = cfg.lqg();
  detail::require_valid(md);
  const TimeGrid grid = TimeGrid::uniform(md.T, static_cast<std::size_t>(cfg.n_steps));
  const AssembledSystem sys = assemble_compact(md);
  const AprimeReport ap = check_assumption_aprime(sys, grid, cfg.cond_threshold);
  const RiccatiSolution sol = solve_equilibrium(md, grid, {cfg.method, cfg.cond_threshold});

  Artifacts a;
  const double h = grid.step();
  const double r_ric = riccati_residual(sys, sol.S);
  const double r_off = offset_residual(sys, sol.S, sol.s);
  const double r_min = minor_affine_residual(md, sol);
  a.metrics["aprime"] = {{"min_singular_value", num(ap.min_singular_value)},
                         {"worst_node", ap.worst_node},
                         {"satisfied", ap.satisfied},
                         {"determinant_crossing", ap.determinant_crossing}};
  a.metrics["residuals"] = {{"riccati", r_ric}, {"offset", r_off}, {"minor_affine", r_min}};
  json t = json::array();
  for (std::size_t i = 0; i < grid.n_nodes(); ++i) t.push_back(grid.node(i));
  a.metrics["curves"] = {{"t", t},
                         {"S11", json::array()}, {"S12", json::array()},
                         {"S21", json::array()}, {"S22", json::array()},
                         {"S31", json::array()}, {"S32", json::array()},
                         {"s", io::to_json(sol.s)}, {"K", io::to_json(sol.K)},
                         {"Phi1", io::to_json(sol.Phi1)}, {"Phi2", io::to_json(sol.Phi2)},
                         {"phi0", io::to_json(sol.phi0)}};
  auto& c = a.metrics["curves"];
  for (std::size_t i = 0; i < grid.n_nodes(); ++i) {
    c["S11"].push_back(io::to_json(sol.S11(i)));
    c["S12"].push_back(io::to_json(sol.S12(i)));
    c["S21"].push_back(io::to_json(sol.S21(i)));
    c["S22"].push_back(io::to_json(sol.S22(i)));
    c["S31"].push_back(io::to_json(sol.S31(i)));
    c["S32"].push_back(io::to_json(sol.S32(i)));
  }
  a.verdicts["aprime_satisfied"] = ap.satisfied;
  a.verdicts["riccati_residual_ok"] = r_ric <= 10.0 * h * h;
  a.verdicts["offset_residual_ok"] = r_off <= 10.0 * h * h;
  a.verdicts["minor_affine_residual_ok"] = r_min <= 1e-6;

  io::CsvTable tab{{"t", "series", "row", "col", "value"}, {}};
  for (std::size_t i = 0; i < grid.n_nodes(); ++i) {
    const double ti = grid.node(i);
    detail::add_matrix_rows(tab, ti, "S", sol.S[i]);
    detail::add_matrix_rows(tab, ti, "s", sol.s[i]);
    detail::add_matrix_rows(tab, ti, "K", sol.K[i]);
    detail::add_matrix_rows(tab, ti, "Phi1", sol.Phi1[i]);
    detail::add_matrix_rows(tab, ti, "Phi2", sol.Phi2[i]);
    detail::add_matrix_rows(tab, ti, "phi0", sol.phi0[i]);
  }
  a.tables.emplace_back("riccati.csv", std::move(tab));
  a.work["riccati_nodes"] = grid.n_nodes();
  return a;
}

inline Artifacts run_simulate(const io::RunConfig& cfg) {
  const auto pr = detail::prepare(cfg);
  const NoiseSource noise(cfg.seed);
  SimOptions opt;
  opt.max_recorded = cfg.max_recorded;
  const int particles = cfg.system == "conditional_mean" ? 0 : cfg.N;
  const PathBundle b =
      cfg.system == "finite"
          ? simulate_finite_game(pr.md, pr.sol, cfg.N, pr.grid, noise, cfg.n_paths, opt)
      : cfg.system == "limit"
          ? simulate_limit_particles(pr.md, pr.sol, cfg.N, pr.grid, noise, cfg.n_paths, opt)
          : simulate_conditional_mean(pr.md, pr.sol, pr.grid, noise, cfg.n_paths);

  io::CsvTable tab{{"path", "t", "series", "component", "value"}, {}};
  bool finite = true;
  for (std::size_t p = 0; p < b.paths.size(); ++p) {
    const PathRecord& r = b.paths[p];
    const auto pid = static_cast<long long>(p);
    detail::add_series(tab, pid, pr.grid, "X0", r.major);
    detail::add_series(tab, pid, pr.grid, "Xbar", r.cond_mean);
    for (std::size_t j = 0; j < r.minors.size(); ++j)
      detail::add_series(tab, pid, pr.grid, "X_" + std::to_string(j + 1), r.minors[j]);
    if (r.P0bar.size() > 0) {
      detail::add_series(tab, pid, pr.grid, "P0bar", r.P0bar);
      detail::add_series(tab, pid, pr.grid, "Pbar", r.Pbar);
      detail::add_series(tab, pid, pr.grid, "Ybar", r.Ybar);
    }
    if (r.u0.size() > 0) detail::add_series(tab, pid, pr.grid, "u0", r.u0);
    for (std::size_t j = 0; j < r.u_minor.size(); ++j)
      detail::add_series(tab, pid, pr.grid, "u_" + std::to_string(j + 1), r.u_minor[j]);
    finite = finite && all_finite(r.major) && all_finite(r.cond_mean);
  }
  Artifacts a;
  a.verdicts["paths_finite"] = finite;
  if (!b.paths.empty() && b.has_controls()) {
    const CostEstimate ce = estimate_costs(b, pr.md);
    a.metrics["J0"] = to_json(ce.J0);
    if (!b.paths.front().minors.empty()) a.metrics["J_minor_mean"] = to_json(ce.J_minor_mean);
    const double p = pr.md.d + 5.0;
    a.metrics["major_control_moment"] = to_json(major_control_moment(b, p));
    a.metrics["major_control_moment_power"] = p;
  }
  a.metrics["system"] = cfg.system;
  a.tables.emplace_back("trajectories.csv", std::move(tab));
  a.work["particle_steps"] = static_cast<double>(cfg.n_paths) * pr.grid.n_steps() *
                             static_cast<double>(std::max(particles, 1));
  return a;
}

inline Artifacts run_chaos(const io::RunConfig& cfg) {
  const auto pr = detail::prepare(cfg);
  const ChaosResult r = chaos_experiment(pr.md, pr.sol, cfg.N_list, cfg.n_paths, cfg.seed);
  Artifacts a;
  io::CsvTable tab{{"N", "metric", "value", "stderr"}, {}};
  for (const auto& p : r.points) {
    const auto n = static_cast<long long>(p.N);
    tab.add({n, std::string("major_sup_sq"), p.major_sup_sq.mean, p.major_sup_sq.std_error});
    tab.add({n, std::string("minor1_sup_sq"), p.minor1_sup_sq.mean, p.minor1_sup_sq.std_error});
    tab.add({n, std::string("minor_avg_sup_sq"), p.minor_avg_sup_sq.mean,
             p.minor_avg_sup_sq.std_error});
    if (p.w2_sup_sq)
      tab.add({n, std::string("w2_sup_sq"), p.w2_sup_sq->mean, p.w2_sup_sq->std_error});
  }
  a.tables.emplace_back("experiment.csv", std::move(tab));
  const double thr = detail::chaos_threshold(pr.md.d);
  a.metrics["minor1_fit"] = to_json(r.minor1_fit);
  a.metrics["major_fit"] = to_json(r.major_fit);
  if (r.w2_fit) a.metrics["w2_fit"] = to_json(*r.w2_fit);
  if (r.w2_error) a.metrics["w2_error"] = *r.w2_error;
  a.metrics["slope_threshold"] = thr;
  a.verdicts["minor1_monotone"] = r.minor1_monotone;
  if (cfg.N_list.size() >= 3) {
    a.verdicts["minor1_slope_ok"] = r.minor1_fit.slope <= thr;
    if (r.w2_fit) a.verdicts["w2_slope_ok"] = r.w2_fit->slope <= thr;
  }
  double work = 0.0;
  for (int N : cfg.N_list) work += 2.0 * N;
  a.work["particle_steps"] = work * static_cast<double>(cfg.n_paths) * pr.grid.n_steps();
  return a;
}

inline Artifacts run_measure_rate(const io::RunConfig& cfg) {
  const auto pr = detail::prepare(cfg);
  const MeasureRateResult r =
      empirical_measure_rate(pr.md, pr.sol, cfg.N_list, cfg.n_paths, cfg.seed, cfg.n_ref);
  Artifacts a;
  io::CsvTable tab{{"N", "metric", "value", "stderr"}, {}};
  for (const auto& p : r.points)
    tab.add({static_cast<long long>(p.N), std::string("w2_sq"), p.w2_sq.mean, p.w2_sq.std_error});
  a.tables.emplace_back("experiment.csv", std::move(tab));
  const double thr = detail::chaos_threshold(pr.md.d);
  a.metrics["fit"] = to_json(r.fit);
  a.metrics["n_ref"] = r.n_ref;
  a.metrics["slope_threshold"] = thr;
  if (cfg.N_list.size() >= 3) a.verdicts["slope_ok"] = r.fit.slope <= thr;
  a.work["particle_steps"] =
      static_cast<double>(r.n_ref) * static_cast<double>(cfg.n_paths) * pr.grid.n_steps();
  return a;
}

/// Per-N Nash reports plus the c N^{-1/(d+4)} envelope check.
struct NashSweep {
  std::vector<NashReport> reports;
  double envelope_c = 0.0;
  double slope = 0.0;
  bool envelope_ok = true;
};

inline NashSweep nash_sweep(const LqgModel& md, const RiccatiSolution& sol,
                            const std::vector<int>& N_list, const std::vector<Deviation>& family,
                            double kappa, std::size_t n_paths, std::uint64_t seed) {
  NashSweep s;
  s.slope = -1.0 / (md.d + 4.0);
  std::vector<double> gains;
  for (int N : N_list) {
    s.reports.push_back(nash_gap_experiment(md, sol, N, family, kappa, n_paths, seed));
    gains.push_back(s.reports.back().max_gain);
  }
  s.envelope_c = fit_envelope_constant(N_list, gains, s.slope);
  for (std::size_t k = 0; k < N_list.size(); ++k) {
    const double env = s.envelope_c * std::pow(static_cast<double>(N_list[k]), s.slope);
    if (gains[k] > env + 2.0 * s.reports[k].max_gain_stderr) s.envelope_ok = false;
  }
  return s;
}

inline Artifacts run_nash(const io::RunConfig& cfg) {
  const auto pr = detail::prepare(cfg);
  if (!cfg.deviate_major && !cfg.deviate_minor)
    throw ValidationError("config: at least one of params.deviate_major/deviate_minor must be set");
  const auto family = default_deviation_family(cfg.deviate_major, cfg.deviate_minor);
  const NashSweep s =
      nash_sweep(pr.md, pr.sol, cfg.N_list, family, cfg.kappa, cfg.n_paths, cfg.seed);
  Artifacts a;
  io::CsvTable tab{{"N", "metric", "value", "stderr"}, {}};
  io::CsvTable dev{{"N", "deviation", "cost", "cost_stderr", "gain", "gain_stderr", "moment",
                    "admissible"},
                   {}};
  json per_n = json::array();
  bool lambda1_zero = true;
  for (const auto& r : s.reports) {
    const auto n = static_cast<long long>(r.N);
    tab.add({n, std::string("max_gain"), r.max_gain, r.max_gain_stderr});
    tab.add({n, std::string("J0_equilibrium"), r.equilibrium_cost_major.mean,
             r.equilibrium_cost_major.std_error});
    tab.add({n, std::string("J1_equilibrium"), r.equilibrium_cost_minor.mean,
             r.equilibrium_cost_minor.std_error});
    for (const auto& o : r.deviations) {
      dev.add({n, o.deviation.label(), o.cost.mean, o.cost.std_error, o.gain.mean,
               o.gain.std_error, o.moment.mean, static_cast<long long>(o.admissible)});
      if (o.deviation.kind == Deviation::Kind::kScale && o.deviation.value == 1.0 &&
          o.gain.mean != 0.0)
        lambda1_zero = false;
    }
    per_n.push_back({{"N", r.N},
                     {"kappa", r.kappa},
                     {"max_gain", num(r.max_gain)},
                     {"max_gain_stderr", num(r.max_gain_stderr)},
                     {"max_gain_major", num(r.max_gain_major)},
                     {"max_gain_minor", num(r.max_gain_minor)},
                     {"equilibrium_cost_major", to_json(r.equilibrium_cost_major)},
                     {"equilibrium_cost_minor", to_json(r.equilibrium_cost_minor)},
                     {"equilibrium_moment_major", to_json(r.equilibrium_moment_major)},
                     {"excluded", r.excluded}});
  }
  a.tables.emplace_back("experiment.csv", std::move(tab));
  a.tables.emplace_back("deviations.csv", std::move(dev));
  a.metrics["per_N"] = per_n;
  a.metrics["envelope"] = {{"c", s.envelope_c}, {"slope", s.slope}};
  a.verdicts["envelope_ok"] = s.envelope_ok;
  a.verdicts["identity_deviation_zero_gain"] = lambda1_zero;
  double work = 0.0;
  for (int N : cfg.N_list) work += (N + 1.0) * static_cast<double>(family.size() + 1);
  a.work["particle_steps"] = work * static_cast<double>(cfg.n_paths) * pr.grid.n_steps();
  return a;
}

inline Artifacts run_example6(const io::RunConfig& cfg) {
  if (!cfg.example) throw ValidationError("example6 needs an 'example6' parameter block");
  const example6::ExampleParams& p = *cfg.example;
  example6::require_valid(p);
  const TimeGrid grid = TimeGrid::uniform(p.T, static_cast<std::size_t>(cfg.n_steps));
  const auto fresh = example6::solve_new_scheme(p, grid);
  const auto old = example6::solve_old_scheme(p, grid);
  const auto diff = example6::scheme_difference(fresh, old);

  Artifacts a;
  io::CsvTable coef{{"t", "S00", "S01", "T1", "T2", "gap"}, {}};
  for (std::size_t i = 0; i < grid.n_nodes(); ++i)
    coef.add({grid.node(i), fresh.state[i](0, 0), fresh.state[i](0, 1), old.state[i](0, 0),
              old.state[i](1, 0), diff.gap_curve[i](0, 0)});
  a.tables.emplace_back("coefficients.csv", std::move(coef));
  a.metrics["scheme_difference"] = {{"max_coeff_gap", diff.max_coeff_gap},
                                    {"gap_x0", diff.max_gap_x0},
                                    {"gap_xbar", diff.max_gap_xbar},
                                    {"gap_const", diff.max_gap_const}};
  a.metrics["old_scheme_residual"] = example6::old_scheme_residual(p, old);
  a.verdicts["schemes_coincide"] = diff.coincide;
  a.verdicts["pold_gap_positive"] = diff.max_coeff_gap > 1e-6;

  io::CsvTable conv{{"N", "err_state", "err_control", "stderr"}, {}};
  if (cfg.n_paths > 0 && !cfg.N_list.empty()) {
    const auto rep = example6::verify_pnew(p, cfg.N_list, grid, NoiseSource(cfg.seed), cfg.n_paths);
    json pts = json::array();
    bool ratio_ok = true;
    for (const auto& pt : rep.points) {
      conv.add({static_cast<long long>(pt.N), pt.err_state.mean, pt.err_control.mean,
                pt.err_state.std_error});
      pts.push_back({{"N", pt.N},
                     {"err_state", to_json(pt.err_state)},
                     {"err_control", to_json(pt.err_control)},
                     {"err_control_old", to_json(pt.err_control_old)},
                     {"max_ratio", num(pt.max_ratio)},
                     {"frac_ratio_ok", pt.frac_ratio_ok}});
      ratio_ok = ratio_ok && pt.frac_ratio_ok == 1.0;
    }
    a.metrics["pnew"] = {{"gronwall_K", rep.gronwall_K},
                         {"ratio_bound", rep.ratio_bound},
                         {"points", pts}};
    a.verdicts["gronwall_ratio_ok"] = ratio_ok;
    if (rep.state_fit) {
      a.metrics["pnew"]["state_fit"] = to_json(*rep.state_fit);
      a.verdicts["pnew_slope_ok"] = std::abs(rep.state_fit->slope + 1.0) <= 0.15;
    }
    if (rep.points.size() >= 3) a.verdicts["control_monotone"] = rep.control_monotone;
    if (rep.points.size() >= 2)
      a.verdicts["old_gap_persists"] = rep.points.back().err_control_old.mean >=
                                       0.5 * rep.points.front().err_control_old.mean;
    double work = 0.0;
    for (int N : cfg.N_list) work += N + 3.0;
    a.work["particle_steps"] = work * static_cast<double>(cfg.n_paths) * grid.n_steps();
  }
  a.tables.emplace_back("convergence.csv", std::move(conv));
  return a;
}

inline Artifacts dispatch(io::Experiment e, const io::RunConfig& cfg) {
  switch (e) {
    case io::Experiment::kValidate: return run_validate(cfg);
    case io::Experiment::kSolve: return run_solve(cfg);
    case io::Experiment::kSimulate: return run_simulate(cfg);
    case io::Experiment::kChaos: return run_chaos(cfg);
    case io::Experiment::kNash: return run_nash(cfg);
    case io::Experiment::kMeasureRate: return run_measure_rate(cfg);
    case io::Experiment::kExample6: return run_example6(cfg);
  }
  throw ValidationError("unknown experiment");
}

/// Runs one experiment and writes its artifacts to cfg.output_dir. Errors are
/// reported on `err` and mapped to the exit-code partition.
inline int run(io::RunConfig cfg, io::Experiment e, std::ostream& err = std::cerr) {
  cfg.experiment = e;
  try {
    const auto start = std::chrono::steady_clock::now();
    Artifacts a = dispatch(e, cfg);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    a.work["n_paths"] = cfg.n_paths;
    a.work["n_steps"] = cfg.n_steps;
    json summary;
    summary["config"] = io::to_json(cfg);
    summary["verdicts"] = a.verdicts;
    summary["metrics"] = a.metrics;
    summary["timings"] = a.work;

    const std::filesystem::path dir(cfg.output_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    io::emit_json(summary, dir / "summary.json");
    for (const auto& [name, table] : a.tables) io::emit_csv(table, dir / name);
    io::emit_json({{"wall_seconds", wall}, {"workers", worker_count()}}, dir / "timings.json");

    if (e == io::Experiment::kValidate && !a.verdicts["valid"].get<bool>()) {
      for (const auto& v : a.metrics["violations"]) err << "violation: " << v.get<std::string>() << "\n";
      return kConfigError;
    }
    return kOk;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code_for(ex.kind());
  } catch (const json::exception& ex) {
    err << "error: config: " << ex.what() << "\n";
    return kConfigError;
  } catch (const std::filesystem::filesystem_error& ex) {
    err << "error: " << ex.what() << "\n";
    return kIoError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kUnexpected;
  }
}

}  // namespace mmfg::cli
