#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "mmfg/io.hpp"
#include "support.hpp"

using namespace mmfg;
using namespace mmfg::io;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mmfg_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

/// Message of the ValidationError thrown by fn, or "" when none is thrown.
template <class Fn>
std::string validation_message(Fn&& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& s, const std::string& part) {
  return s.find(part) != std::string::npos;
}

}  // namespace

TEST(Csv, DoublesRoundTripExactly) {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
    EXPECT_EQ(std::stod(format_double(x)), x);
  }
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
}

TEST(Csv, RenderAndShapeChecks) {
  CsvTable t{{"N", "err", "label"}, {}};
  t.add({8LL, 0.5, std::string("a")});
  t.add({16LL, 0.25, std::string("b")});
  EXPECT_EQ(render_csv(t), "N,err,label\n8,0.5,a\n16,0.25,b\n");
  EXPECT_THROW(t.add({1LL}), DimensionError);
  t.rows.push_back({1LL});
  EXPECT_THROW(render_csv(t), DimensionError);
}

TEST(Csv, WriteFailureIsIoError) {
  const fs::path dir = scratch_dir("write");
  EXPECT_THROW(write_text(dir / "missing" / "x.csv", "x"), IoError);
  emit_json(json{{"a", 1}}, dir / "a.json");
  EXPECT_EQ(slurp(dir / "a.json"), "{\n  \"a\": 1\n}\n");
}

TEST(ModelJson, RoundTrip) {
  const LqgModel md = fixtures::random_model(5, 2);
  const LqgModel back = model_from_json(to_json(md));
  EXPECT_EQ(back.d0, 1);
  EXPECT_EQ(back.d, 2);
  EXPECT_EQ((back.A - md.A).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((back.Hhat - md.Hhat).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((back.eta - md.eta).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((back.x0_minor - md.x0_minor).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(to_json(back), to_json(md));
}

TEST(ModelJson, InfersDimensionsAndAcceptsScalars) {
  const json j = {{"A", {{0, 1}, {1, 0}}}, {"B", {{1}, {0}}}, {"R0", 2}, {"Q", {{1, 0}, {0, 1}}}};
  const LqgModel md = model_from_json(j);
  EXPECT_EQ(md.d, 2);
  EXPECT_EQ(md.k, 1);
  EXPECT_EQ(md.d0, 1);
  EXPECT_EQ(md.R0(0, 0), 2.0);
  EXPECT_EQ(md.F.rows(), 2);
  EXPECT_TRUE(validate(md).empty());
}

TEST(ModelJson, ErrorsNameTheField) {
  EXPECT_TRUE(contains(validation_message([] { model_from_json({{"Z", 1}}); }), "'model.Z'"));
  EXPECT_TRUE(contains(validation_message([] { model_from_json({{"A", {{1, 2}, {3}}}}); }),
                       "'model.A': row 1"));
  EXPECT_TRUE(contains(validation_message([] { model_from_json({{"Q", {{"x"}}}}); }),
                       "'model.Q[0][0]'"));
  EXPECT_TRUE(contains(validation_message([] { model_from_json({{"d", 1.5}}); }), "'model.d'"));
  EXPECT_TRUE(contains(validation_message([] { model_from_json({{"d", 0}}); }), "positive"));
  // Shape disagreements are left to the model validator.
  const LqgModel md = model_from_json({{"d", 2}, {"A", {{1}}}});
  EXPECT_FALSE(validate(md).empty());
}

TEST(ExampleJson, RoundTripAndUnknownField) {
  example6::ExampleParams p = fixtures::unit_example();
  p.a = 0.25;
  p.x0_minor = -1.0;
  const auto back = example_from_json(to_json(p));
  EXPECT_EQ(back.a, 0.25);
  EXPECT_EQ(back.x0_minor, -1.0);
  EXPECT_TRUE(contains(validation_message([] { example_from_json({{"e", 1}}); }),
                       "'example6.e'"));
  EXPECT_TRUE(contains(validation_message([] { example_from_json({{"a", "x"}}); }),
                       "'example6.a'"));
}

TEST(RunConfigJson, DefaultsAndOverrides) {
  const RunConfig d = config_from_json(json::object());
  EXPECT_FALSE(d.experiment.has_value());
  EXPECT_EQ(d.n_steps, 1000);
  EXPECT_EQ(d.n_paths, 200u);
  EXPECT_EQ(d.seed, 1u);
  EXPECT_EQ(d.N_list.front(), 8);
  EXPECT_EQ(d.N_list.back(), 1024);
  EXPECT_EQ(d.output_dir, "out");
  EXPECT_THROW(d.lqg(), ValidationError);

  const RunConfig c = config_from_json(json::parse(R"({
    "experiment": "nash", "example6": {"a": 2},
    "grid": {"T": 2.0, "n_steps": 40}, "mc": {"n_paths": 7, "seed": 9},
    "solver": {"method": "ode", "cond_threshold": 1e8},
    "params": {"N_list": [2, 4, 8], "kappa": 3.5, "deviate_minor": false}})"));
  EXPECT_EQ(*c.experiment, Experiment::kNash);
  EXPECT_EQ(c.example->a, 2.0);
  EXPECT_EQ(c.horizon(), 2.0);
  EXPECT_EQ(c.lqg().F0(0, 0), 2.0);
  EXPECT_EQ(c.n_steps, 40);
  EXPECT_EQ(c.n_paths, 7u);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.method, RiccatiMethod::kOde);
  EXPECT_EQ(c.cond_threshold, 1e8);
  EXPECT_EQ(c.N_list, (std::vector<int>{2, 4, 8}));
  EXPECT_EQ(c.kappa, 3.5);
  EXPECT_FALSE(c.deviate_minor);
  // Serialising and reparsing gives the same configuration.
  EXPECT_EQ(to_json(config_from_json(to_json(c))), to_json(c));
}

TEST(RunConfigJson, InvalidFieldsAreNamed) {
  auto msg = [](const char* text) {
    return validation_message([&] { config_from_json(json::parse(text)); });
  };
  EXPECT_TRUE(contains(msg(R"({"bogus": 1})"), "'bogus'"));
  EXPECT_TRUE(contains(msg(R"({"experiment": "fly"})"), "'experiment'"));
  EXPECT_TRUE(contains(msg(R"({"grid": {"n_steps": 1}})"), "'grid.n_steps'"));
  EXPECT_TRUE(contains(msg(R"({"grid": {"n_steps": 2.5}})"), "'grid.n_steps'"));
  EXPECT_TRUE(contains(msg(R"({"mc": {"n_paths": -1}})"), "'mc.n_paths'"));
  EXPECT_TRUE(contains(msg(R"({"mc": {"seed": "x"}})"), "'mc.seed'"));
  EXPECT_TRUE(contains(msg(R"({"solver": {"method": "euler"}})"), "'solver.method'"));
  EXPECT_TRUE(contains(msg(R"({"params": {"N_list": [1, 2.5]}})"), "'params.N_list'"));
  EXPECT_TRUE(contains(msg(R"({"params": {"system": "x"}})"), "'params.system'"));
  EXPECT_TRUE(contains(msg(R"({"params": {"extra": 1}})"), "'params.extra'"));
  EXPECT_TRUE(contains(msg(R"({"model": {"T": 1}, "grid": {"T": 2}})"), "'grid.T'"));
  EXPECT_TRUE(contains(msg(R"({"model": {}, "example6": {}})"), "not both"));
  EXPECT_TRUE(contains(msg(R"([1, 2])"), "top level"));
}

TEST(LoadConfig, FileErrors) {
  const fs::path dir = scratch_dir("load");
  EXPECT_TRUE(contains(validation_message([&] { load_config(dir / "none.json"); }),
                       "cannot read"));
  write_text(dir / "bad.json", "{\n  \"grid\": {\"n_steps\": 10,}\n}\n");
  const std::string m = validation_message([&] { load_config(dir / "bad.json"); });
  EXPECT_TRUE(contains(m, "line 2")) << m;
  EXPECT_TRUE(contains(m, "column")) << m;
}

TEST(LoadConfig, ShippedConfigsParse) {
  const fs::path root = MMFG_SOURCE_DIR;
  for (const char* name :
       {"example6.json", "chaos_example6.json", "measure_rate.json", "general_model.json"}) {
    const RunConfig c = load_config(root / "configs" / name);
    EXPECT_TRUE(c.experiment.has_value()) << name;
    EXPECT_TRUE(validate(c.lqg()).empty()) << name;
  }
  const RunConfig bad = load_config(root / "configs" / "invalid_R.json");
  EXPECT_FALSE(validate(bad.lqg()).empty());
}
