#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hjc/config.hpp"
#include "hjc/io.hpp"
#include "hjc/problem.hpp"

using namespace hjc;

namespace {

std::string minimal_value_map() {
  return R"(
[problem]
family = classical_quadratic
datum = linear
dim = 1
a = 1.5
c = 0.25

[task]
type = value-map
t = 0.7
box_center = 0
box_half_width = 1
nx = 5
)";
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("ini parser handles sections, comments, and lists") {
  Ini ini = Ini::parse_string(R"(
# hash comment
; semicolon comment
[alpha]
x = 1.25
name = hello world
vec = 1, 2.5, -3

[beta]
x = 4
)",
                              "mem");
  CHECK(ini.has("alpha", "x"));
  CHECK(ini.get_double("alpha", "x", 0.0) == 1.25);
  CHECK(ini.get_string("alpha", "name", "") == "hello world");
  Vec v = ini.get_vec("alpha", "vec", Vec());
  REQUIRE(v.size() == 3);
  CHECK(v[1] == 2.5);
  CHECK(ini.get_double("beta", "x", 0.0) == 4.0);
  CHECK_FALSE(ini.has("beta", "vec"));
  CHECK(ini.get_double("beta", "missing", 9.5) == 9.5);
}

TEST_CASE("ini parser reports malformed input with line numbers") {
  CHECK_THROWS_WITH_AS(Ini::parse_string("[unterminated\n", "f.ini"),
                       doctest::Contains("f.ini:1"), PreconditionError);
  CHECK_THROWS_WITH_AS(Ini::parse_string("key = 1\n", "f.ini"),
                       doctest::Contains("outside"), PreconditionError);
  CHECK_THROWS_WITH_AS(Ini::parse_string("[s]\na = 1\na = 2\n", "f.ini"),
                       doctest::Contains("duplicate key 'a'"), PreconditionError);
  CHECK_THROWS_WITH_AS(Ini::parse_string("[s]\njust a bare line\n", "f.ini"),
                       doctest::Contains("f.ini:2"), PreconditionError);
}

TEST_CASE("resolve fills defaults and rejects unknown keys") {
  SUBCASE("defaults") {
    Ini ini = Ini::parse_string(minimal_value_map(), "m");
    ScenarioConfig cfg = resolve_scenario(ini);
    CHECK(cfg.task == "value-map");
    CHECK(cfg.dim == 1);
    CHECK(cfg.nx == 5);
    CHECK(cfg.out_dir == "out");
    CHECK(cfg.threads == 1);
    CHECK(cfg.rng_seed == 0);
    CHECK(cfg.tol.at("tol_shoot") == 1e-10);
    CHECK(cfg.tol.at("cfl") == 0.9);
  }
  SUBCASE("unknown key cites its location") {
    Ini ini = Ini::parse_string(minimal_value_map() + "\n[task]\n", "m");
    // A second [task] block is allowed to extend the section, but a stray key is not.
    Ini bad = Ini::parse_string(minimal_value_map() + "wibble = 3\n", "m");
    CHECK_THROWS_WITH_AS(resolve_scenario(bad), doctest::Contains("unknown key 'wibble'"),
                         PreconditionError);
  }
  SUBCASE("malformed box") {
    Ini ini = Ini::parse_string(R"(
[problem]
family = classical_quadratic
datum = linear
dim = 1
a = 1
c = 0
[task]
type = value-map
t = 0.5
box_center = 0
box_half_width = -2
nx = 4
)",
                                "m");
    CHECK_THROWS_WITH_AS(resolve_scenario(ini), doctest::Contains("box_half_width"),
                         PreconditionError);
  }
  SUBCASE("tolerances validated") {
    Ini a = Ini::parse_string(minimal_value_map() + "\n[tolerances]\nnot_a_tol = 1\n", "m");
    CHECK_THROWS_WITH_AS(resolve_scenario(a), doctest::Contains("not_a_tol"),
                         PreconditionError);
    Ini b = Ini::parse_string(minimal_value_map() + "\n[tolerances]\ntol_shoot = 0\n", "m");
    CHECK_THROWS_WITH_AS(resolve_scenario(b), doctest::Contains("tol_shoot"),
                         PreconditionError);
    Ini c = Ini::parse_string(minimal_value_map() + "\n[tolerances]\ncfl = 1.5\n", "m");
    CHECK_THROWS_WITH_AS(resolve_scenario(c), doctest::Contains("cfl"), PreconditionError);
    Ini d = Ini::parse_string(minimal_value_map() + "\n[tolerances]\node_dt = 0.005\n", "m");
    ScenarioConfig cfg = resolve_scenario(d);
    CHECK(cfg.tol.at("ode_dt") == 0.005);
  }
  SUBCASE("overrides applied through set") {
    Ini ini = Ini::parse_string(minimal_value_map(), "m");
    ini.set("output", "dir", "elsewhere");
    ini.set("tolerances", "tol_conj", "1e-6");
    ScenarioConfig cfg = resolve_scenario(ini);
    CHECK(cfg.out_dir == "elsewhere");
    CHECK(cfg.tol.at("tol_conj") == 1e-6);
  }
}

TEST_CASE("problem construction follows the scenario") {
  SUBCASE("classical with linear datum") {
    Ini ini = Ini::parse_string(minimal_value_map(), "m");
    ScenarioConfig cfg = resolve_scenario(ini);
    ProblemSpec spec = build_problem(cfg);
    Vec x(1), p(1);
    x[0] = 0.3;
    p[0] = 2.0;
    CHECK(spec.H->value(0.0, x, p, 5.0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(spec.u0->value(x) == doctest::Approx(1.5 * 0.3 + 0.25).epsilon(1e-14));
  }
  SUBCASE("focusing rejects an explicit datum") {
    Ini ini = Ini::parse_string(R"(
[problem]
family = focusing
dim = 1
curvature = 2
datum = linear
a = 1
c = 0
[task]
type = value-map
t = 0.2
box_center = 0
box_half_width = 1
nx = 3
)",
                                "m");
    CHECK_THROWS_WITH_AS(resolve_scenario(ini), doctest::Contains("focusing"),
                         PreconditionError);
  }
  SUBCASE("contact discount must be positive") {
    Ini ini = Ini::parse_string(R"(
[problem]
family = contact_discounted
datum = linear
dim = 1
discount = -1
a = 1
c = 0
[task]
type = value-map
t = 0.2
box_center = 0
box_half_width = 1
nx = 3
)",
                                "m");
    CHECK_THROWS_WITH_AS(resolve_scenario(ini), doctest::Contains("discount"),
                         PreconditionError);
  }
  SUBCASE("min_linear pieces build the lower envelope") {
    Ini ini = Ini::parse_string(R"(
[problem]
family = classical_quadratic
datum = min_linear
dim = 1
piece1 = 2, 0
piece2 = 0, 0
[task]
type = oracle
box_center = 0
box_half_width = 1
horizon = 0.1
dx = 0.1
)",
                                "m");
    ScenarioConfig cfg = resolve_scenario(ini);
    ProblemSpec spec = build_problem(cfg);
    Vec xm(1), xp(1);
    xm[0] = -0.5;
    xp[0] = 0.5;
    CHECK(spec.u0->value(xm) == doctest::Approx(-1.0));  // min(2x, 0) at x=-0.5
    CHECK(spec.u0->value(xp) == doctest::Approx(0.0));
  }
}

TEST_CASE("value-map scenario writes the closed-form value reproducibly") {
  Ini ini = Ini::parse_string(minimal_value_map(), "m");
  ini.set("output", "dir", "cfg_out_a");
  ScenarioConfig cfg = resolve_scenario(ini);
  RunResult r = run_scenario(cfg);
  CHECK(r.exit_code == 0);
  REQUIRE(std::filesystem::exists("cfg_out_a/value_map.csv"));
  REQUIRE(std::filesystem::exists("cfg_out_a/manifest.json"));

  CsvTable tbl = read_csv("cfg_out_a/value_map.csv");
  const int cx = tbl.col("x1");
  const int cu = tbl.col("u");
  const int cb = tbl.col("branches");
  REQUIRE(cx >= 0);
  REQUIRE(cu >= 0);
  REQUIRE(cb >= 0);
  REQUIRE(tbl.rows.size() == 5);
  for (const auto& row : tbl.rows) {
    const double expect = 1.5 * row[cx] + 0.25 - 0.5 * 1.5 * 1.5 * 0.7;
    CHECK(row[cu] == doctest::Approx(expect).epsilon(1e-9));
    CHECK(row[cb] == 1.0);
  }

  // identical configuration and seed => byte-identical artifact
  Ini ini2 = Ini::parse_string(minimal_value_map(), "m");
  ini2.set("output", "dir", "cfg_out_b");
  run_scenario(resolve_scenario(ini2));
  CHECK(slurp("cfg_out_a/value_map.csv") == slurp("cfg_out_b/value_map.csv"));

  const std::string manifest = slurp("cfg_out_a/manifest.json");
  CHECK(manifest.find("\"family\": \"classical_quadratic\"") != std::string::npos);
  CHECK(manifest.find("\"tol_shoot\"") != std::string::npos);
  CHECK(manifest.find("\"exit_code\": 0") != std::string::npos);
}

TEST_CASE("sheet trace, oracle, and report close the loop on the drifting interface") {
  // traced interface: x = t for min(2x, 0) under the quadratic Hamiltonian
  Ini sing = Ini::parse_string(R"(
[problem]
family = classical_quadratic
datum = min_linear
dim = 1
piece1 = 2, 0
piece2 = 0, 0
[task]
type = trace-singular
t = 0.5
x0 = 0.5
horizon = 1.2
back_horizon = 0.1
branches = sheets
[output]
dir = cfg_sing
)",
                              "m");
  RunResult rs = run_scenario(resolve_scenario(sing));
  CHECK(rs.exit_code == 0);
  CsvTable curve = read_csv("cfg_sing/singular_curve.csv");
  const int ct = curve.col("t");
  const int cx = curve.col("x1");
  REQUIRE(ct >= 0);
  REQUIRE(cx >= 0);
  REQUIRE(curve.rows.size() > 50);
  for (const auto& row : curve.rows)
    CHECK(row[cx] == doctest::Approx(row[ct]).epsilon(1e-8));
  const std::string report = slurp("cfg_sing/singular_report.json");
  CHECK(report.find("\"stop\": \"horizon\"") != std::string::npos);
  CHECK(report.find("\"minimax\": true") != std::string::npos);

  Ini orc = Ini::parse_string(R"(
[problem]
family = classical_quadratic
datum = min_linear
dim = 1
piece1 = 2, 0
piece2 = 0, 0
[task]
type = oracle
box_center = 0.6
box_half_width = 1.4
horizon = 1.2
dx = 0.02
jump_tol = 0.5
[output]
dir = cfg_orc
)",
                             "m");
  RunResult ro = run_scenario(resolve_scenario(orc));
  CHECK(ro.exit_code == 0);
  CHECK(ro.stats.at("complete") == 1.0);
  CHECK(ro.stats.at("n_flagged") > 0);
  REQUIRE(std::filesystem::exists("cfg_orc/oracle_flags.csv"));

  Ini rep = Ini::parse_string(R"(
[problem]
family = classical_quadratic
datum = min_linear
dim = 1
piece1 = 2, 0
piece2 = 0, 0
[task]
type = report
curve_csv = cfg_sing/singular_curve.csv
flags_csv = cfg_orc/oracle_flags.csv
dx = 0.02
fail_above_cells = 2
t_min = 0.15
t_max = 1.1
[output]
dir = cfg_rep
)",
                             "m");
  RunResult rr = run_scenario(resolve_scenario(rep));
  CHECK(rr.exit_code == 0);
  CHECK(rr.stats.at("n_compared") > 50);
  CHECK(rr.stats.at("max_cells") <= 2.0);

  // an unreachable threshold flips the exit code
  Ini tight = Ini::parse_string(R"(
[problem]
family = classical_quadratic
datum = min_linear
dim = 1
piece1 = 2, 0
piece2 = 0, 0
[task]
type = report
curve_csv = cfg_sing/singular_curve.csv
flags_csv = cfg_orc/oracle_flags.csv
dx = 0.02
fail_above_cells = 0.001
[output]
dir = cfg_rep_tight
)",
                               "m");
  CHECK(run_scenario(resolve_scenario(tight)).exit_code == 1);
}

TEST_CASE("characteristic tasks refuse the nonsmooth envelope datum") {
  Ini ini = Ini::parse_string(R"(
[problem]
family = classical_quadratic
datum = min_linear
dim = 1
piece1 = 1, 0
piece2 = -1, 0
[task]
type = value-map
t = 0.5
box_center = 0
box_half_width = 1
nx = 3
[output]
dir = cfg_refuse
)",
                              "m");
  CHECK_THROWS_WITH_AS(run_scenario(resolve_scenario(ini)),
                       doctest::Contains("differentiable"), PreconditionError);
}
