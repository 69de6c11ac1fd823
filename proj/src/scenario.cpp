#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include "hjc/config.hpp"
#include "hjc/cutlocus.hpp"
#include "hjc/flow.hpp"
#include "hjc/grid.hpp"
#include "hjc/io.hpp"
#include "hjc/singular.hpp"
#include "hjc/value.hpp"
#include "json.hpp"

namespace hjc {

namespace {

using ordered = nlohmann::ordered_json;

std::vector<std::string> xcols(int dim, const std::string& prefix = "x") {
  std::vector<std::string> cols;
  for (int a = 1; a <= dim; ++a) cols.push_back(prefix + std::to_string(a));
  return cols;
}

std::vector<double> to_std(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

// inclusive lattice over the task box, first axis fastest
std::vector<Vec> lattice(const ScenarioConfig& cfg) {
  const Box box = Box::centered(cfg.box_center, cfg.box_half_width);
  std::vector<Vec> pts;
  if (cfg.dim == 1) {
    for (int i = 0; i < cfg.nx; ++i) {
      Vec x(1);
      x[0] = box.lo[0] + box.width(0) * i / (cfg.nx - 1);
      pts.push_back(x);
    }
  } else if (cfg.dim == 2) {
    for (int j = 0; j < cfg.nx; ++j)
      for (int i = 0; i < cfg.nx; ++i) {
        Vec x(2);
        x[0] = box.lo[0] + box.width(0) * i / (cfg.nx - 1);
        x[1] = box.lo[1] + box.width(1) * j / (cfg.nx - 1);
        pts.push_back(x);
      }
  } else {
    throw PreconditionError("run_scenario: map tasks cover one and two dimensions");
  }
  return pts;
}

ShootOptions shoot_options(const ScenarioConfig& cfg) {
  ShootOptions so;
  so.tol_shoot = cfg.tol.at("tol_shoot");
  so.dedupe_frac = cfg.tol.at("dedupe_frac");
  so.tie_frac = cfg.tol.at("tie_frac");
  so.ode.dt = cfg.tol.at("ode_dt");
  so.threads = cfg.threads;
  return so;
}

TraceOptions trace_options(const ScenarioConfig& cfg) {
  TraceOptions topts;
  topts.dt = cfg.tol.at("ode_dt");
  topts.tol_sing = cfg.tol.at("tol_sing");
  topts.tol_ri = cfg.tol.at("tol_ri");
  topts.tol_rank = cfg.tol.at("tol_rank");
  topts.tol_conj = cfg.tol.at("tol_conj");
  topts.face_tol = cfg.tol.at("face_tol");
  topts.energy.tol_kkt = cfg.tol.at("tol_kkt");
  topts.energy.tol_ri = cfg.tol.at("tol_ri");
  topts.shoot = shoot_options(cfg);
  return topts;
}

void forbid_nonsmooth(const ScenarioConfig& cfg, const std::string& task) {
  require(cfg.datum != "min_linear",
          "run_scenario: " + task +
              " integrates characteristics and needs differentiable data; the min_linear "
              "envelope serves the oracle and sheet tracing");
}

struct TaskOutput {
  int exit_code = 0;
  std::vector<std::string> files;
  std::map<std::string, double> stats;
  std::string summary;
  ordered extra;  // task-specific JSON written alongside, already on disk
};

namespace fs = std::filesystem;

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

TaskOutput run_value_map(const ScenarioConfig& cfg, const ProblemSpec& spec) {
  forbid_nonsmooth(cfg, "value-map");
  ShootOptions so = shoot_options(cfg);
  CsvTable tbl;
  tbl.columns = xcols(cfg.dim);
  tbl.columns.insert(tbl.columns.end(), {"u", "branches", "min_abs_det"});

  TaskOutput out;
  double umin = std::numeric_limits<double>::infinity();
  double umax = -umin;
  double maxk = 0;
  for (const Vec& x : lattice(cfg)) {
    ValueResult vr;
    try {
      vr = value(spec, cfg.t, x, so);
    } catch (const NumericalError& e) {
      std::string at = "(t=" + format_double(cfg.t);
      for (int a = 0; a < cfg.dim; ++a) at += ", " + format_double(x[a]);
      throw NumericalError(std::string(e.what()) + " [value-map node " + at + ")]");
    }
    double mind = std::numeric_limits<double>::infinity();
    int k = 0;
    for (const MinimizerEntry& m : vr.minimizers.entries)
      if (m.minimizing) {
        ++k;
        mind = std::min(mind, std::abs(m.det_Xz));
      }
    std::vector<double> row = to_std(x);
    row.insert(row.end(), {vr.u, static_cast<double>(k), mind});
    tbl.add(std::move(row));
    umin = std::min(umin, vr.u);
    umax = std::max(umax, vr.u);
    maxk = std::max(maxk, static_cast<double>(k));
  }
  write_csv(tbl, join(cfg.out_dir, "value_map.csv"));
  out.files.push_back("value_map.csv");
  out.stats = {{"n_points", static_cast<double>(tbl.rows.size())},
               {"u_min", umin},
               {"u_max", umax},
               {"max_branches", maxk}};
  out.summary = "value map over " + std::to_string(tbl.rows.size()) + " points";
  return out;
}

TaskOutput run_classify_map(const ScenarioConfig& cfg, const ProblemSpec& spec) {
  forbid_nonsmooth(cfg, "classify-map");
  ClassifyOptions co;
  co.shoot = shoot_options(cfg);
  co.tol_conj = cfg.tol.at("tol_conj");

  CsvTable tbl;
  tbl.columns = xcols(cfg.dim);
  tbl.columns.insert(tbl.columns.end(), {"class_code", "k", "det_margin"});
  std::map<PointClass, int> counts;
  for (const Vec& x : lattice(cfg)) {
    Classification cls = classify_point(spec, cfg.t, x, co);
    ++counts[cls.type];
    std::vector<double> row = to_std(x);
    row.insert(row.end(), {static_cast<double>(static_cast<int>(cls.type)),
                           static_cast<double>(cls.k), cls.det_margin});
    tbl.add(std::move(row));
  }
  write_csv(tbl, join(cfg.out_dir, "classify_map.csv"));

  TaskOutput out;
  out.files.push_back("classify_map.csv");
  out.stats = {{"n_points", static_cast<double>(tbl.rows.size())},
               {"n_regular", static_cast<double>(counts[PointClass::Regular])},
               {"n_irregular_only", static_cast<double>(counts[PointClass::IrregularOnly])},
               {"n_conjugate_only", static_cast<double>(counts[PointClass::ConjugateOnly])},
               {"n_irregular_and_conjugate",
                static_cast<double>(counts[PointClass::IrregularAndConjugate])},
               {"n_unknown", static_cast<double>(counts[PointClass::Unknown])}};
  out.summary = "class codes: 0=" + std::string(to_string(PointClass::Regular)) +
                ", 1=" + to_string(PointClass::IrregularOnly) +
                ", 2=" + to_string(PointClass::ConjugateOnly) +
                ", 3=" + to_string(PointClass::IrregularAndConjugate) +
                ", 4=" + to_string(PointClass::Unknown);
  return out;
}

TaskOutput run_trace_char(const ScenarioConfig& cfg, const ProblemSpec& spec) {
  forbid_nonsmooth(cfg, "trace-char");
  StepPolicy policy;
  policy.dt = cfg.tol.at("ode_dt");
  VarTrajectory vt = integrate_variational(spec, cfg.seed_z, cfg.horizon, policy);

  CsvTable tbl;
  tbl.columns = {"t"};
  for (const std::string& c : xcols(cfg.dim, "X")) tbl.columns.push_back(c);
  for (const std::string& c : xcols(cfg.dim, "P")) tbl.columns.push_back(c);
  tbl.columns.push_back("U");
  tbl.columns.push_back("det_Xz");
  for (size_t i = 0; i < vt.base.times.size(); ++i) {
    std::vector<double> row{vt.base.times[i]};
    for (double v : to_std(vt.base.X[i])) row.push_back(v);
    for (double v : to_std(vt.base.P[i])) row.push_back(v);
    row.push_back(vt.base.U[i]);
    row.push_back(vt.Xz[i].determinant());
    tbl.add(std::move(row));
  }
  write_csv(tbl, join(cfg.out_dir, "char_trajectory.csv"));

  HerglotzReport hr = herglotz_residual(spec, vt.base);
  TaskOutput out;
  out.files.push_back("char_trajectory.csv");
  out.stats = {{"n_samples", static_cast<double>(vt.base.times.size())},
               {"transport_residual", transport_identity_residual(vt)},
               {"herglotz_equation_residual", hr.equation_residual},
               {"herglotz_momentum_residual", hr.momentum_residual},
               {"lie_defect", lie_defect(spec, vt.base)},
               {"det_end", vt.Xz.back().determinant()}};
  out.summary = "characteristic arc to t=" + format_double(vt.base.t_end());
  return out;
}

TaskOutput run_conjugate_scan(const ScenarioConfig& cfg, const ProblemSpec& spec) {
  forbid_nonsmooth(cfg, "conjugate-scan");
  ConjugateScanOptions opts;
  opts.ode.dt = cfg.tol.at("ode_dt");
  opts.tol_time = cfg.tol.at("tol_time");
  opts.tol_conj = cfg.tol.at("tol_conj");

  CsvTable tbl;
  tbl.columns = xcols(cfg.dim, "z");
  for (const char* c : {"found", "t_star", "det_slope", "kernel_sigma", "next_sigma",
                        "min_abs_det"})
    tbl.columns.push_back(c);
  int n_found = 0;
  double tmin = std::numeric_limits<double>::infinity();
  double tmax = -tmin;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const Vec& z : lattice(cfg)) {
    ConjugateTimeResult r = conjugate_time(spec, z, cfg.horizon, opts);
    std::vector<double> row = to_std(z);
    if (r.found) {
      ++n_found;
      tmin = std::min(tmin, r.t_star);
      tmax = std::max(tmax, r.t_star);
      row.insert(row.end(),
                 {1.0, r.t_star, r.det_slope, r.kernel_sigma, r.next_sigma, r.min_abs_det});
    } else {
      row.insert(row.end(), {0.0, nan, nan, nan, nan, r.min_abs_det});
    }
    tbl.add(std::move(row));
  }
  write_csv(tbl, join(cfg.out_dir, "conjugate_scan.csv"));

  TaskOutput out;
  out.files.push_back("conjugate_scan.csv");
  out.stats = {{"n_seeds", static_cast<double>(tbl.rows.size())},
               {"n_found", static_cast<double>(n_found)}};
  if (n_found > 0) {
    out.stats["t_star_min"] = tmin;
    out.stats["t_star_max"] = tmax;
  }
  out.summary = std::to_string(n_found) + " of " + std::to_string(tbl.rows.size()) +
                " seeds fold before the horizon";
  return out;
}

const char* direction_name(TraceDirection d) { return to_string(d); }

TaskOutput run_trace_singular(const ScenarioConfig& cfg, const ProblemSpec& spec) {
  TraceOptions topts = trace_options(cfg);
  SingularCurve curve;
  if (cfg.branches == "auto") {
    forbid_nonsmooth(cfg, "trace-singular with branches=auto");
    curve = trace_two_branch(spec, cfg.t, cfg.x0, cfg.horizon, cfg.back_horizon, topts);
  } else {
    std::vector<std::shared_ptr<BranchModel>> models;
    for (size_t i = 0; i < cfg.pieces_a.size(); ++i) {
      if (cfg.family == "classical_quadratic")
        models.push_back(classical_linear_sheet(cfg.pieces_a[i], cfg.pieces_c[i]));
      else if (cfg.family == "contact_discounted")
        models.push_back(contact_linear_sheet(cfg.discount, cfg.pieces_a[i], cfg.pieces_c[i]));
      else
        throw PreconditionError(
            "run_scenario: sheet models exist for the classical and discounted families");
    }
    if (cfg.back_horizon >= 0.0) {
      require(models.size() == 2,
              "run_scenario: backward sheet tracing needs exactly two pieces");
      curve = trace_two_branch(spec, cfg.t, cfg.x0, models[0], models[1], cfg.horizon,
                               cfg.back_horizon, topts);
    } else {
      curve = trace_forward(spec, cfg.t, cfg.x0, models, cfg.horizon, topts);
    }
  }

  const int k = static_cast<int>(curve.active.size());
  CsvTable tbl;
  tbl.columns = {"t"};
  for (const std::string& c : xcols(cfg.dim)) tbl.columns.push_back(c);
  for (const std::string& c : xcols(cfg.dim, "v_bar")) tbl.columns.push_back(c);
  for (const std::string& c : xcols(cfg.dim, "p_bar")) tbl.columns.push_back(c);
  tbl.columns.push_back("q_bar");
  for (int i = 1; i <= k; ++i) tbl.columns.push_back("w" + std::to_string(i));
  for (const char* c : {"equality_residual", "rank_margin", "interior_margin", "exposure_slack",
                        "inactive_margin", "min_abs_det"})
    tbl.columns.push_back(c);

  double max_eq = 0.0;
  for (const SingularSample& s : curve.samples) {
    std::vector<double> row{s.t};
    for (double v : to_std(s.x)) row.push_back(v);
    for (double v : to_std(s.v_bar)) row.push_back(v);
    for (double v : to_std(s.p_bar)) row.push_back(v);
    row.push_back(s.q_bar);
    for (int i = 0; i < k; ++i)
      row.push_back(i < s.weights.size() ? s.weights[i]
                                         : std::numeric_limits<double>::quiet_NaN());
    row.insert(row.end(), {s.equality_residual, s.rank_margin, s.interior_margin,
                           s.exposure_slack, s.inactive_value_margin, s.min_abs_det});
    tbl.add(std::move(row));
    max_eq = std::max(max_eq, s.equality_residual);
  }
  write_csv(tbl, join(cfg.out_dir, "singular_curve.csv"));

  ordered rep;
  rep["direction"] = direction_name(curve.direction);
  rep["stop"] = to_string(curve.stop);
  if (curve.direction == TraceDirection::Bidirectional)
    rep["stop_backward"] = to_string(curve.stop_backward);
  rep["stop_detail"] = curve.stop_detail;
  rep["active_branches"] = curve.active;
  rep["hypotheses"] = {
      {"geometrically_independent", curve.hypotheses.geometrically_independent},
      {"rank_margin", curve.hypotheses.rank_margin},
      {"interior", curve.hypotheses.interior},
      {"interior_margin", curve.hypotheses.interior_margin},
      {"exposed_in_velocity_direction", curve.hypotheses.exposed_in_velocity_direction},
      {"exposure_slack", curve.hypotheses.exposure_slack},
      {"minimax", curve.hypotheses.minimax},
  };
  rep["n_samples"] = curve.samples.size();
  if (!curve.samples.empty()) {
    rep["t_first"] = curve.samples.front().t;
    rep["t_last"] = curve.samples.back().t;
  }
  {
    std::ofstream f(join(cfg.out_dir, "singular_report.json"), std::ios::binary);
    require(f.good(), "run_scenario: cannot write singular_report.json");
    f << rep.dump(2) << '\n';
  }

  TaskOutput out;
  out.files = {"singular_curve.csv", "singular_report.json"};
  out.stats = {{"n_samples", static_cast<double>(curve.samples.size())},
               {"max_equality_residual", max_eq}};
  if (!curve.samples.empty()) {
    out.stats["t_first"] = curve.samples.front().t;
    out.stats["t_last"] = curve.samples.back().t;
  }
  out.summary = std::string("singular trace stopped: ") + to_string(curve.stop);
  if (curve.direction == TraceDirection::Bidirectional)
    out.summary += std::string(" (backward: ") + to_string(curve.stop_backward) + ")";
  return out;
}

TaskOutput run_oracle(const ScenarioConfig& cfg, const ProblemSpec& spec) {
  const Box box = Box::centered(cfg.box_center, cfg.box_half_width);
  const Vec dx = Vec::Constant(cfg.dim, cfg.grid_dx);
  double dt = cfg.grid_dt;
  if (dt <= 0.0) dt = suggested_time_step(spec, box, dx, cfg.tol.at("cfl"), cfg.grid_safety);
  LfOptions lopts;
  lopts.cfl = cfg.tol.at("cfl");
  lopts.threads = cfg.threads;
  GridSolution sol = lf_solve(spec, box, dx, dt, cfg.horizon, lopts);

  const int n_slices = static_cast<int>(sol.slices.size());
  int stride = cfg.slice_stride;
  if (stride <= 0) stride = std::max(1, (n_slices + 40) / 41);
  CsvTable tbl;
  tbl.columns = {"t"};
  for (const std::string& c : xcols(cfg.dim)) tbl.columns.push_back(c);
  tbl.columns.push_back("u");
  std::vector<int> idx(cfg.dim, 0);
  for (int m = 0; m < n_slices; m += stride) {
    const int mm = (m + stride >= n_slices) ? n_slices - 1 : m;  // always export the last slice
    for (Eigen::Index f = 0; f < sol.nodes(); ++f) {
      if (cfg.dim == 1) {
        idx[0] = static_cast<int>(f);
      } else {
        idx[0] = static_cast<int>(f % sol.shape[0]);
        idx[1] = static_cast<int>(f / sol.shape[0]);
      }
      std::vector<double> row{sol.times[mm]};
      for (double v : to_std(sol.node(idx))) row.push_back(v);
      row.push_back(sol.slices[mm][f]);
      tbl.add(std::move(row));
    }
    if (mm == n_slices - 1) break;
  }
  write_csv(tbl, join(cfg.out_dir, "oracle_slices.csv"));

  TaskOutput out;
  out.files.push_back("oracle_slices.csv");

  int n_flagged = -1;
  if (cfg.jump_tol > 0.0) {
    auto flags = detect_singular_grid(sol, cfg.jump_tol);
    CsvTable ftbl;
    ftbl.columns = {"t"};
    for (const std::string& c : xcols(cfg.dim)) ftbl.columns.push_back(c);
    ftbl.columns.push_back("jump");
    n_flagged = 0;
    for (size_t m = 0; m < flags.size(); ++m)
      for (const FlaggedCell& cell : flags[m]) {
        std::vector<double> row{sol.times[m]};
        for (double v : to_std(cell.x)) row.push_back(v);
        row.push_back(cell.jump);
        ftbl.add(std::move(row));
        ++n_flagged;
      }
    write_csv(ftbl, join(cfg.out_dir, "oracle_flags.csv"));
    out.files.push_back("oracle_flags.csv");
  }

  ordered meta;
  meta["shape"] = sol.shape;
  meta["dx"] = to_std(sol.dx);
  meta["dt"] = sol.dt;
  meta["horizon"] = sol.horizon;
  meta["cfl"] = sol.cfl;
  meta["viscosity"] = to_std(sol.viscosity);
  meta["complete"] = sol.complete;
  meta["diagnostic"] = sol.diagnostic;
  meta["n_slices"] = n_slices;
  meta["t_last"] = sol.times.back();
  meta["slice_stride"] = stride;
  if (cfg.jump_tol > 0.0) meta["n_flagged"] = n_flagged;
  {
    std::ofstream f(join(cfg.out_dir, "oracle_meta.json"), std::ios::binary);
    require(f.good(), "run_scenario: cannot write oracle_meta.json");
    f << meta.dump(2) << '\n';
  }
  out.files.push_back("oracle_meta.json");

  out.stats = {{"n_slices", static_cast<double>(n_slices)},
               {"n_nodes", static_cast<double>(sol.nodes())},
               {"viscosity_max", sol.viscosity.maxCoeff()},
               {"complete", sol.complete ? 1.0 : 0.0}};
  if (n_flagged >= 0) out.stats["n_flagged"] = n_flagged;
  out.exit_code = sol.complete ? 0 : 1;
  out.summary = sol.complete ? "grid run reached the horizon"
                             : "grid run aborted: " + sol.diagnostic;
  return out;
}

TaskOutput run_report(const ScenarioConfig& cfg) {
  CsvTable curve = read_csv(cfg.curve_csv);
  CsvTable flags = read_csv(cfg.flags_csv);
  const int tc = curve.col("t");
  const int tf = flags.col("t");
  require(tc >= 0, "report: curve file has no 't' column");
  require(tf >= 0, "report: flags file has no 't' column");
  std::vector<int> xc, xf;
  for (int a = 1;; ++a) {
    const int ic = curve.col("x" + std::to_string(a));
    const int jf = flags.col("x" + std::to_string(a));
    if (ic < 0 || jf < 0) break;
    xc.push_back(ic);
    xf.push_back(jf);
  }
  require(!xc.empty(), "report: need matching x1.. columns in both files");

  // flag rows grouped by their slice time, in file order
  std::map<double, std::vector<const std::vector<double>*>> by_time;
  for (const auto& row : flags.rows) by_time[row[tf]].push_back(&row);
  require(!by_time.empty(), "report: the flags file lists no cells");

  const bool windowed = cfg.t_max > cfg.t_min;
  double max_cells = 0.0, sum = 0.0, max_gap = 0.0;
  int n = 0, skipped = 0;
  for (const auto& row : curve.rows) {
    const double t = row[tc];
    if (windowed && (t < cfg.t_min || t > cfg.t_max)) {
      ++skipped;
      continue;
    }
    auto it = by_time.lower_bound(t);
    if (it == by_time.end() ||
        (it != by_time.begin() && t - std::prev(it)->first < it->first - t))
      it = std::prev(it);
    max_gap = std::max(max_gap, std::abs(it->first - t));
    double best = std::numeric_limits<double>::infinity();
    for (const std::vector<double>* frow : it->second) {
      double d = 0.0;
      for (size_t a = 0; a < xc.size(); ++a)
        d = std::max(d, std::abs(row[xc[a]] - (*frow)[xf[a]]) / cfg.grid_dx);
      best = std::min(best, d);
    }
    max_cells = std::max(max_cells, best);
    sum += best;
    ++n;
  }

  ordered rep;
  rep["curve_csv"] = cfg.curve_csv;
  rep["flags_csv"] = cfg.flags_csv;
  rep["dx"] = cfg.grid_dx;
  rep["n_compared"] = n;
  rep["n_skipped"] = skipped;
  rep["max_cells"] = max_cells;
  rep["mean_cells"] = n > 0 ? sum / n : 0.0;
  rep["max_time_gap"] = max_gap;
  if (cfg.fail_above_cells >= 0.0) rep["fail_above_cells"] = cfg.fail_above_cells;
  {
    std::ofstream f(join(cfg.out_dir, "report.json"), std::ios::binary);
    require(f.good(), "run_scenario: cannot write report.json");
    f << rep.dump(2) << '\n';
  }

  TaskOutput out;
  out.files.push_back("report.json");
  out.stats = {{"n_compared", static_cast<double>(n)},
               {"n_skipped", static_cast<double>(skipped)},
               {"max_cells", max_cells},
               {"mean_cells", n > 0 ? sum / n : 0.0},
               {"max_time_gap", max_gap}};
  if (cfg.fail_above_cells >= 0.0 && (n == 0 || max_cells > cfg.fail_above_cells))
    out.exit_code = 1;
  out.summary = "interface distance: max " + format_double(max_cells) + " cells over " +
                std::to_string(n) + " samples";
  return out;
}

ordered config_echo(const ScenarioConfig& cfg) {
  ordered problem;
  problem["family"] = cfg.family;
  problem["datum"] = cfg.datum;
  problem["dim"] = cfg.dim;
  if (cfg.family == "contact_discounted") problem["discount"] = cfg.discount;
  if (cfg.family == "focusing") problem["curvature"] = cfg.curvature;
  if (cfg.datum == "linear") {
    problem["a"] = to_std(cfg.datum_a);
    problem["c"] = cfg.datum_c;
  }
  if (cfg.datum == "constant") problem["c"] = cfg.datum_c;
  if (cfg.datum == "quadratic" && cfg.family != "focusing") {
    problem["c0"] = cfg.quad_c0;
    problem["a"] = to_std(cfg.quad_a);
    std::vector<double> q;
    for (Eigen::Index i = 0; i < cfg.quad_Q.rows(); ++i)
      for (Eigen::Index j = 0; j < cfg.quad_Q.cols(); ++j) q.push_back(cfg.quad_Q(i, j));
    problem["Q"] = q;
  }
  if (cfg.datum == "min_linear") {
    ordered pieces = ordered::array();
    for (size_t i = 0; i < cfg.pieces_a.size(); ++i) {
      std::vector<double> row = to_std(cfg.pieces_a[i]);
      row.push_back(cfg.pieces_c[i]);
      pieces.push_back(row);
    }
    problem["pieces"] = pieces;
  }
  if (cfg.family == "custom_polynomial") {
    ordered hs = ordered::array();
    for (const PolyTerm& t : cfg.h_terms)
      hs.push_back({{"coef_t", t.coef_t}, {"ax", t.ax}, {"ap", t.ap}, {"au", t.au}});
    problem["h_terms"] = hs;
    ordered us = ordered::array();
    for (const auto& t : cfg.u0_terms) us.push_back({{"coef", t.coef}, {"ax", t.ax}});
    problem["u0_terms"] = us;
  }

  ordered task;
  task["type"] = cfg.task;
  if (cfg.task == "value-map" || cfg.task == "classify-map" || cfg.task == "trace-singular")
    task["t"] = cfg.t;
  if (cfg.task == "value-map" || cfg.task == "classify-map" || cfg.task == "conjugate-scan" ||
      cfg.task == "oracle") {
    task["box_center"] = to_std(cfg.box_center);
    task["box_half_width"] = cfg.box_half_width;
  }
  if (cfg.task == "value-map" || cfg.task == "classify-map" || cfg.task == "conjugate-scan")
    task["nx"] = cfg.nx;
  if (cfg.task == "trace-char") task["z"] = to_std(cfg.seed_z);
  if (cfg.task == "trace-char" || cfg.task == "conjugate-scan" ||
      cfg.task == "trace-singular" || cfg.task == "oracle")
    task["horizon"] = cfg.horizon;
  if (cfg.task == "trace-singular") {
    task["x0"] = to_std(cfg.x0);
    task["back_horizon"] = cfg.back_horizon;
    task["branches"] = cfg.branches;
  }
  if (cfg.task == "oracle") {
    task["dx"] = cfg.grid_dx;
    task["dt"] = cfg.grid_dt;
    task["safety"] = cfg.grid_safety;
    task["jump_tol"] = cfg.jump_tol;
    task["slice_stride"] = cfg.slice_stride;
  }
  if (cfg.task == "report") {
    task["curve_csv"] = cfg.curve_csv;
    task["flags_csv"] = cfg.flags_csv;
    task["dx"] = cfg.grid_dx;
    task["fail_above_cells"] = cfg.fail_above_cells;
    task["t_min"] = cfg.t_min;
    task["t_max"] = cfg.t_max;
  }

  ordered tol;
  for (const auto& [k, v] : cfg.tol) tol[k] = v;

  ordered output;
  output["dir"] = cfg.out_dir;
  output["seed"] = cfg.rng_seed;
  output["threads"] = cfg.threads;

  ordered echo;
  echo["problem"] = problem;
  echo["task"] = task;
  echo["tolerances"] = tol;
  echo["output"] = output;
  return echo;
}

}  // namespace

RunResult run_scenario(const ScenarioConfig& cfg) {
  fs::create_directories(cfg.out_dir);

  TaskOutput task;
  if (cfg.task == "report") {
    task = run_report(cfg);
  } else {
    const ProblemSpec spec = build_problem(cfg);
    if (cfg.task == "value-map")
      task = run_value_map(cfg, spec);
    else if (cfg.task == "classify-map")
      task = run_classify_map(cfg, spec);
    else if (cfg.task == "trace-char")
      task = run_trace_char(cfg, spec);
    else if (cfg.task == "conjugate-scan")
      task = run_conjugate_scan(cfg, spec);
    else if (cfg.task == "trace-singular")
      task = run_trace_singular(cfg, spec);
    else if (cfg.task == "oracle")
      task = run_oracle(cfg, spec);
    else
      throw PreconditionError("run_scenario: unknown task '" + cfg.task + "'");
  }

  RunResult result;
  result.exit_code = task.exit_code;
  result.stats = task.stats;
  result.summary = task.summary;
  result.files = task.files;
  result.files.push_back("manifest.json");

  ordered manifest;
  manifest["config"] = config_echo(cfg);
  manifest["files"] = result.files;
  ordered stats;
  for (const auto& [k, v] : result.stats) stats[k] = v;
  manifest["stats"] = stats;
  manifest["summary"] = result.summary;
  manifest["exit_code"] = result.exit_code;
  {
    std::ofstream f(join(cfg.out_dir, "manifest.json"), std::ios::binary);
    require(f.good(), "run_scenario: cannot write manifest.json");
    f << manifest.dump(2) << '\n';
  }
  return result;
}

}  // namespace hjc
