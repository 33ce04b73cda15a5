#pragma once

// CSV output and JSON (de)serialization of models and run configurations.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "mmfg/errors.hpp"
#include "mmfg/example6.hpp"
#include "mmfg/lqg_model.hpp"
#include "mmfg/riccati.hpp"

namespace mmfg::io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// CSV

/// 17 significant digits: every double survives a text round trip.
inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

using Cell = std::variant<double, long long, std::string>;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    if (row.size() != header.size())
      throw DimensionError("CSV row has " + std::to_string(row.size()) + " cells, header has " +
                           std::to_string(header.size()));
    rows.push_back(std::move(row));
  }
};

inline std::string to_string(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
  return std::get<std::string>(c);
}

inline std::string render_csv(const CsvTable& t) {
  std::string out;
  auto line = [&](auto const& cells, auto&& str) {
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (j) out += ',';
      out += str(cells[j]);
    }
    out += '\n';
  };
  line(t.header, [](const std::string& s) { return s; });
  for (const auto& r : t.rows) {
    if (r.size() != t.header.size()) throw DimensionError("CSV table is not rectangular");
    line(r, [](const Cell& c) { return to_string(c); });
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  f.flush();
  if (!f) throw IoError("failed writing " + path.string());
}

inline void emit_csv(const CsvTable& t, const std::filesystem::path& path) {
  write_text(path, render_csv(t));
}

inline void emit_json(const json& j, const std::filesystem::path& path) {
  write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Matrices

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

namespace detail {

inline double number_at(const json& j, const std::string& field) {
  if (!j.is_number()) throw ValidationError("config field '" + field + "': expected a number");
  return j.get<double>();
}

}  // namespace detail

/// Accepts a nested row array, or a bare number for a 1x1 matrix.
inline Matrix matrix_from_json(const json& j, const std::string& field) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array()) throw ValidationError("config field '" + field + "': expected a matrix");
  if (j.empty()) return Matrix(0, 0);
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (!j[0].is_array())
    throw ValidationError("config field '" + field + "': expected an array of rows");
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& r = j[static_cast<std::size_t>(i)];
    if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != cols)
      throw ValidationError("config field '" + field + "': row " + std::to_string(i) +
                            " has the wrong length");
    for (Eigen::Index k = 0; k < cols; ++k)
      m(i, k) = detail::number_at(r[static_cast<std::size_t>(k)],
                                  field + "[" + std::to_string(i) + "][" + std::to_string(k) + "]");
  }
  return m;
}

inline Vector vector_from_json(const json& j, const std::string& field) {
  if (j.is_number()) return Vector::Constant(1, j.get<double>());
  if (!j.is_array()) throw ValidationError("config field '" + field + "': expected a vector");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = detail::number_at(j[i], field + "[" + std::to_string(i) + "]");
  return v;
}

// ---------------------------------------------------------------------------
// Models

inline json to_json(const LqgModel& md) {
  json j;
  j["d0"] = md.d0; j["d"] = md.d; j["k0"] = md.k0; j["k"] = md.k;
  j["m0"] = md.m0; j["m"] = md.m; j["T"] = md.T;
  j["A0"] = to_json(md.A0); j["B0"] = to_json(md.B0);
  j["F0"] = to_json(md.F0); j["D0"] = to_json(md.D0);
  j["A"] = to_json(md.A); j["B"] = to_json(md.B); j["F"] = to_json(md.F);
  j["G"] = to_json(md.G); j["D"] = to_json(md.D);
  j["Q0"] = to_json(md.Q0); j["R0"] = to_json(md.R0); j["H0"] = to_json(md.H0);
  j["eta0"] = to_json(md.eta0);
  j["Q"] = to_json(md.Q); j["R"] = to_json(md.R); j["H"] = to_json(md.H);
  j["Hhat"] = to_json(md.Hhat); j["eta"] = to_json(md.eta);
  j["x0_major"] = to_json(md.x0_major); j["x0_minor"] = to_json(md.x0_minor);
  return j;
}

namespace detail {

inline int dim_from(const json& j, const char* key, const json& fallback_matrix, bool rows,
                    int fallback) {
  if (j.contains(key)) {
    if (!j[key].is_number_integer())
      throw ValidationError(std::string("config field 'model.") + key + "': expected an integer");
    return j[key].get<int>();
  }
  if (fallback_matrix.is_null()) return fallback;
  if (fallback_matrix.is_number()) return 1;
  if (!fallback_matrix.is_array() || fallback_matrix.empty()) return fallback;
  if (rows) return static_cast<int>(fallback_matrix.size());
  return fallback_matrix[0].is_array() ? static_cast<int>(fallback_matrix[0].size()) : fallback;
}

inline json get_or_null(const json& j, const char* key) {
  return j.contains(key) ? j[key] : json();
}

}  // namespace detail

/// Model from JSON. Dimensions default to those implied by A0 (d0), A (d),
/// B0 / B (k0, k) and D0 / D (m0, m), then to 1. Absent matrices are zero,
/// except R0 and R which default to identity.
inline LqgModel model_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config field 'model': expected an object");
  using detail::dim_from;
  using detail::get_or_null;
  const int d0 = dim_from(j, "d0", get_or_null(j, "A0"), true, 1);
  const int d = dim_from(j, "d", get_or_null(j, "A"), true, 1);
  const int k0 = dim_from(j, "k0", get_or_null(j, "B0"), false, 1);
  const int k = dim_from(j, "k", get_or_null(j, "B"), false, 1);
  const int m0 = dim_from(j, "m0", get_or_null(j, "D0"), false, 1);
  const int m = dim_from(j, "m", get_or_null(j, "D"), false, 1);
  double T = 1.0;
  if (j.contains("T")) T = detail::number_at(j["T"], "model.T");
  if (d0 < 1 || d < 1 || k0 < 1 || k < 1 || m0 < 1 || m < 1)
    throw ValidationError("config field 'model': dimensions must be positive");
  LqgModel md = LqgModel::zeros(d0, d, k0, k, m0, m, T);
  auto mat = [&](const char* key, Matrix& target) {
    if (j.contains(key)) target = matrix_from_json(j[key], std::string("model.") + key);
  };
  auto vec = [&](const char* key, Vector& target) {
    if (j.contains(key)) target = vector_from_json(j[key], std::string("model.") + key);
  };
  mat("A0", md.A0); mat("B0", md.B0); mat("F0", md.F0); mat("D0", md.D0);
  mat("A", md.A); mat("B", md.B); mat("F", md.F); mat("G", md.G); mat("D", md.D);
  mat("Q0", md.Q0); mat("R0", md.R0); mat("H0", md.H0); vec("eta0", md.eta0);
  mat("Q", md.Q); mat("R", md.R); mat("H", md.H); mat("Hhat", md.Hhat); vec("eta", md.eta);
  vec("x0_major", md.x0_major); vec("x0_minor", md.x0_minor);
  static const char* known[] = {"d0", "d", "k0", "k", "m0", "m", "T", "A0", "B0", "F0", "D0",
                                "A", "B", "F", "G", "D", "Q0", "R0", "H0", "eta0", "Q", "R",
                                "H", "Hhat", "eta", "x0_major", "x0_minor"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known))
      throw ValidationError("config field 'model." + key + "': unknown field");
  }
  return md;
}

inline json to_json(const example6::ExampleParams& p) {
  return json{{"a", p.a},   {"b", p.b},   {"c", p.c},
              {"q", p.q},   {"D0", p.D0}, {"D", p.D},
              {"T", p.T},   {"x0_major", p.x0_major}, {"x0_minor", p.x0_minor}};
}

inline example6::ExampleParams example_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config field 'example6': expected an object");
  example6::ExampleParams p;
  for (const auto& [key, val] : j.items()) {
    const std::string f = "example6." + key;
    if (key == "a") p.a = detail::number_at(val, f);
    else if (key == "b") p.b = detail::number_at(val, f);
    else if (key == "c") p.c = detail::number_at(val, f);
    else if (key == "q") p.q = detail::number_at(val, f);
    else if (key == "D0") p.D0 = detail::number_at(val, f);
    else if (key == "D") p.D = detail::number_at(val, f);
    else if (key == "T") p.T = detail::number_at(val, f);
    else if (key == "x0_major") p.x0_major = detail::number_at(val, f);
    else if (key == "x0_minor") p.x0_minor = detail::number_at(val, f);
    else throw ValidationError("config field '" + f + "': unknown field");
  }
  return p;
}

inline json to_json(const GriddedTrajectory& traj) {
  json vals = json::array();
  for (const auto& m : traj.values) vals.push_back(to_json(m));
  return vals;
}

// ---------------------------------------------------------------------------
// Run configuration

enum class Experiment { kValidate, kSolve, kSimulate, kChaos, kNash, kMeasureRate, kExample6 };

inline const char* experiment_name(Experiment e) {
  switch (e) {
    case Experiment::kValidate: return "validate";
    case Experiment::kSolve: return "solve";
    case Experiment::kSimulate: return "simulate";
    case Experiment::kChaos: return "chaos";
    case Experiment::kNash: return "nash";
    case Experiment::kMeasureRate: return "measure-rate";
    case Experiment::kExample6: return "example6";
  }
  return "?";
}

inline std::optional<Experiment> parse_experiment(const std::string& s) {
  for (auto e : {Experiment::kValidate, Experiment::kSolve, Experiment::kSimulate,
                 Experiment::kChaos, Experiment::kNash, Experiment::kMeasureRate,
                 Experiment::kExample6})
    if (s == experiment_name(e)) return e;
  return std::nullopt;
}

struct RunConfig {
  std::optional<Experiment> experiment;  // the CLI subcommand wins when both are given
  std::optional<LqgModel> model;
  std::optional<example6::ExampleParams> example;
  int n_steps = 1000;
  std::size_t n_paths = 200;
  std::uint64_t seed = 1;
  RiccatiMethod method = RiccatiMethod::kPropagator;
  double cond_threshold = 1e12;

  // experiment parameters
  std::vector<int> N_list = {8, 16, 32, 64, 128, 256, 512, 1024};
  int N = 16;                        // simulate
  std::string system = "finite";     // simulate: finite | limit | conditional_mean
  int max_recorded = 4;              // simulate: minors written per path
  double kappa = 0.0;                // nash; <= 0 selects the default budget
  bool deviate_major = true;
  bool deviate_minor = true;
  int n_ref = 0;                     // measure-rate; 0 selects 16 * max(N_list)
  std::string output_dir = "out";

  /// Horizon of whichever model the config carries.
  double horizon() const { return model ? model->T : (example ? example->T : 1.0); }

  /// The general model, embedding the concrete example when that is what
  /// the config holds.
  LqgModel lqg() const {
    if (model) return *model;
    if (example) return example6::embed(*example);
    throw ValidationError("config has neither 'model' nor 'example6'");
  }
};

inline json to_json(const RunConfig& c) {
  json j;
  j["experiment"] = c.experiment ? experiment_name(*c.experiment) : "";
  if (c.model) j["model"] = to_json(*c.model);
  if (c.example) j["example6"] = to_json(*c.example);
  j["grid"] = {{"T", c.horizon()}, {"n_steps", c.n_steps}};
  j["mc"] = {{"n_paths", c.n_paths}, {"seed", c.seed}};
  j["solver"] = {{"method", c.method == RiccatiMethod::kPropagator ? "propagator" : "ode"},
                 {"cond_threshold", c.cond_threshold}};
  j["params"] = {{"N_list", c.N_list},
                 {"N", c.N},
                 {"system", c.system},
                 {"max_recorded", c.max_recorded},
                 {"kappa", c.kappa},
                 {"deviate_major", c.deviate_major},
                 {"deviate_minor", c.deviate_minor},
                 {"n_ref", c.n_ref}};
  j["output_dir"] = c.output_dir;
  return j;
}

namespace detail {

/// Integers must be JSON integers (unsigned ones nonnegative); get<T>
/// alone would truncate 2.5 or wrap -1.
template <class T>
bool integer_shape_ok(const json& j) {
  if constexpr (std::is_same_v<T, bool> || !std::is_integral_v<T>) {
    return true;
  } else if constexpr (std::is_unsigned_v<T>) {
    return j.is_number_unsigned() || (j.is_number_integer() && j.get<long long>() >= 0);
  } else {
    return j.is_number_integer();
  }
}

template <class T>
T typed(const json& j, const std::string& field, const char* what) {
  bool ok = true;
  if constexpr (std::is_same_v<T, std::vector<int>>) {
    ok = j.is_array() &&
         std::all_of(j.begin(), j.end(), [](const json& x) { return x.is_number_integer(); });
  } else {
    ok = integer_shape_ok<T>(j);
  }
  if (!ok) throw ValidationError("config field '" + field + "': expected " + what);
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config field '" + field + "': expected " + what);
  }
}

inline void check_keys(const json& j, const std::string& scope,
                       std::initializer_list<const char*> known) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ValidationError("config field '" + scope + key + "': unknown field");
  }
}

}  // namespace detail

inline RunConfig config_from_json(const json& j) {
  using detail::typed;
  if (!j.is_object()) throw ValidationError("config: top level must be an object");
  detail::check_keys(j, "", {"experiment", "model", "example6", "grid", "mc", "solver", "params",
                             "output_dir"});
  RunConfig c;
  if (j.contains("experiment")) {
    const auto name = typed<std::string>(j["experiment"], "experiment", "a string");
    if (!name.empty()) {
      c.experiment = parse_experiment(name);
      if (!c.experiment) throw ValidationError("config field 'experiment': unknown '" + name + "'");
    }
  }
  if (j.contains("model")) c.model = model_from_json(j["model"]);
  if (j.contains("example6")) c.example = example_from_json(j["example6"]);
  if (c.model && c.example)
    throw ValidationError("config: give either 'model' or 'example6', not both");
  if (j.contains("grid")) {
    const json& g = j["grid"];
    detail::check_keys(g, "grid.", {"T", "n_steps"});
    if (g.contains("n_steps")) c.n_steps = typed<int>(g["n_steps"], "grid.n_steps", "an integer");
    if (g.contains("T")) {
      const double T = detail::number_at(g["T"], "grid.T");
      if (c.model && j["model"].contains("T") && c.model->T != T)
        throw ValidationError("config field 'grid.T': disagrees with model.T");
      if (c.example && j["example6"].contains("T") && c.example->T != T)
        throw ValidationError("config field 'grid.T': disagrees with example6.T");
      if (c.model) c.model->T = T;
      if (c.example) c.example->T = T;
    }
  }
  if (c.n_steps < 2) throw ValidationError("config field 'grid.n_steps': must be >= 2");
  if (j.contains("mc")) {
    const json& m = j["mc"];
    detail::check_keys(m, "mc.", {"n_paths", "seed"});
    if (m.contains("n_paths"))
      c.n_paths = typed<std::size_t>(m["n_paths"], "mc.n_paths", "a nonnegative integer");
    if (m.contains("seed")) c.seed = typed<std::uint64_t>(m["seed"], "mc.seed", "an unsigned integer");
  }
  if (j.contains("solver")) {
    const json& s = j["solver"];
    detail::check_keys(s, "solver.", {"method", "cond_threshold"});
    if (s.contains("method")) {
      const auto m = typed<std::string>(s["method"], "solver.method", "a string");
      if (m == "propagator") c.method = RiccatiMethod::kPropagator;
      else if (m == "ode") c.method = RiccatiMethod::kOde;
      else throw ValidationError("config field 'solver.method': expected 'propagator' or 'ode'");
    }
    if (s.contains("cond_threshold"))
      c.cond_threshold = detail::number_at(s["cond_threshold"], "solver.cond_threshold");
  }
  if (j.contains("params")) {
    const json& p = j["params"];
    detail::check_keys(p, "params.", {"N_list", "N", "system", "max_recorded", "kappa",
                                      "deviate_major", "deviate_minor", "n_ref"});
    if (p.contains("N_list")) c.N_list = typed<std::vector<int>>(p["N_list"], "params.N_list", "an integer array");
    if (p.contains("N")) c.N = typed<int>(p["N"], "params.N", "an integer");
    if (p.contains("system")) c.system = typed<std::string>(p["system"], "params.system", "a string");
    if (p.contains("max_recorded")) c.max_recorded = typed<int>(p["max_recorded"], "params.max_recorded", "an integer");
    if (p.contains("kappa")) c.kappa = detail::number_at(p["kappa"], "params.kappa");
    if (p.contains("deviate_major")) c.deviate_major = typed<bool>(p["deviate_major"], "params.deviate_major", "a boolean");
    if (p.contains("deviate_minor")) c.deviate_minor = typed<bool>(p["deviate_minor"], "params.deviate_minor", "a boolean");
    if (p.contains("n_ref")) c.n_ref = typed<int>(p["n_ref"], "params.n_ref", "an integer");
  }
  if (c.system != "finite" && c.system != "limit" && c.system != "conditional_mean")
    throw ValidationError("config field 'params.system': expected finite, limit or conditional_mean");
  if (j.contains("output_dir")) c.output_dir = typed<std::string>(j["output_dir"], "output_dir", "a string");
  return c;
}

/// Reads and parses a config file. Syntax errors keep the parser's line and
/// column; I/O failures raise IoError.
inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace mmfg::io
