#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hjc/problem.hpp"
#include "hjc/types.hpp"

namespace hjc {

// Flat key = value configuration grouped into [sections]; '#' and ';' open
// comments.  Keys are tracked as they are read so that anything left over
// can be rejected with its line number.
class Ini {
 public:
  static Ini parse_file(const std::string& path);
  static Ini parse_string(const std::string& text, const std::string& name = "<config>");

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback);
  std::string require_string(const std::string& section, const std::string& key);
  double get_double(const std::string& section, const std::string& key, double fallback);
  int get_int(const std::string& section, const std::string& key, int fallback);
  Vec get_vec(const std::string& section, const std::string& key, const Vec& fallback);
  Vec require_vec(const std::string& section, const std::string& key);

  // insert or replace, e.g. for command-line overrides
  void set(const std::string& section, const std::string& key, const std::string& value);
  // keys of one section in file order
  std::vector<std::string> keys(const std::string& section) const;
  // throws listing every key that was never consumed
  void require_all_used() const;

 private:
  struct Entry {
    std::string key;
    std::string value;
    int line = 0;
    mutable bool used = false;
  };
  const Entry* find(const std::string& section, const std::string& key) const;
  std::string where(const Entry& e) const;

  std::string name_ = "<config>";
  std::vector<std::pair<std::string, std::vector<Entry>>> sections_;
};

// Fully-resolved scenario: every field is populated (defaults filled in) by
// resolve_scenario, and the manifest echoes exactly these values.
struct ScenarioConfig {
  // [problem]
  std::string family;  // classical_quadratic | contact_discounted | focusing | custom_polynomial
  std::string datum;   // linear | quadratic | constant | log_cosh | min_linear | polynomial
  int dim = 1;
  double discount = 1.0;
  double curvature = 1.0;
  Vec datum_a;
  double datum_c = 0.0;
  double quad_c0 = 0.0;
  Vec quad_a;
  Mat quad_Q;
  std::vector<Vec> pieces_a;
  std::vector<double> pieces_c;
  std::vector<PolyTerm> h_terms;
  std::vector<PolynomialDatum::Term> u0_terms;

  // [task]
  std::string task;  // value-map | classify-map | trace-char | conjugate-scan |
                     // trace-singular | oracle | report
  double t = 1.0;
  double horizon = 2.0;
  double back_horizon = -1.0;  // negative: no backward leg requested
  Vec x0;
  Vec seed_z;
  Vec box_center;
  double box_half_width = 2.0;
  int nx = 50;
  double grid_dx = 0.005;
  double grid_dt = 0.0;  // 0: derived from the slope bound
  double grid_safety = 0.25;
  double jump_tol = 0.0;  // 0: kink detection off (oracle) / 10*grid_dx (report)
  int slice_stride = 0;   // 0: choose so about forty slices are exported
  std::string branches = "sheets";  // trace-singular: sheets | auto
  std::string curve_csv;
  std::string flags_csv;
  double fail_above_cells = -1.0;  // report: advisory when negative
  double t_min = 0.0;
  double t_max = 0.0;  // 0 with t_min 0: full range

  // [tolerances], defaults filled
  std::map<std::string, double> tol;

  // [output]
  std::string out_dir = "out";
  long rng_seed = 0;
  int threads = 1;
};

// Consumes the parsed file, validates everything, rejects unknown keys.
ScenarioConfig resolve_scenario(Ini& ini);
ScenarioConfig load_scenario(const std::string& path);

ProblemSpec build_problem(const ScenarioConfig& cfg);

struct RunResult {
  int exit_code = 0;                    // 0 ok, 1 invariant failure
  std::vector<std::string> files;       // everything written, manifest included
  std::map<std::string, double> stats;  // summary statistics, also in the manifest
  std::string summary;                  // short human-readable outcome
};

// Executes the task and writes all artifacts plus manifest.json under
// cfg.out_dir.  Precondition violations and numerical failures propagate as
// the usual exception types for the caller to map to exit codes.
RunResult run_scenario(const ScenarioConfig& cfg);

}  // namespace hjc
