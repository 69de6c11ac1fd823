#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hjc/flow.hpp"
#include "hjc/problem.hpp"
#include "hjc/types.hpp"

namespace hjc {

struct ShootOptions {
  std::optional<Box> box;   // default: centered box sized from the datum slope
  int grid_per_dim = 15;
  int max_newton = 40;
  double tol_shoot = 1e-10;   // scaled by 1 + |x|
  double dedupe_frac = 1e-4;  // times the widest box edge
  double tie_frac = 1e-7;     // times 1 + |u|
  StepPolicy ode;
  int threads = 1;
};

struct MinimizerEntry {
  Vec seed;
  double U = 0.0;        // cost carried by the characteristic
  Vec P;                 // terminal momentum
  double residual = 0.0; // |X(t;z) - x| at convergence
  double det_Xz = 0.0;
  bool minimizing = false;
};

// All characteristics found to hit (t,x), sorted by cost ascending. Entries
// are pairwise separated by the dedupe radius; the minimizing flag marks the
// cost ties within tie_tol of the best.
struct MinimizerSet {
  double t = 0.0;
  Vec x;
  Box box;
  std::vector<MinimizerEntry> entries;
  double u = 0.0;  // min cost over entries; valid when !entries.empty()
  int n_seeds = 0;
  int n_converged = 0;
  int n_discarded = 0;
  double dedupe_radius = 0.0;
  double tie_tol = 0.0;
  std::string diagnostic;  // nonempty when the result is unusable

  int count_minimizing() const {
    int k = 0;
    for (const auto& e : entries) k += e.minimizing ? 1 : 0;
    return k;
  }
};

Box default_search_box(const ProblemSpec& spec, double t, const Vec& x);

MinimizerSet shoot_minimizers(const ProblemSpec& spec, double t, const Vec& x,
                              const ShootOptions& opts = {});

// Newton continuation of a single characteristic root from a warm start.
// Empty when the iteration diverges or fails to converge; the minimizing flag
// of the returned entry is not populated.
std::optional<MinimizerEntry> continue_root(const ProblemSpec& spec, double t, const Vec& x,
                                            const Vec& z_guess, const ShootOptions& opts = {});

struct ValueResult {
  double u = 0.0;
  MinimizerSet minimizers;
};

// min-over-characteristics value. Throws NumericalError with the shooting
// diagnostic when no characteristic reaches (t,x).
ValueResult value(const ProblemSpec& spec, double t, const Vec& x, const ShootOptions& opts = {});

// ---------------------------------------------------------------------------
// Curve-optimization route, independent of the characteristic machinery: only
// the Lagrangian and the running-cost integral are used.

struct OracleOptions {
  int nodes = 9;          // coarsest ladder rung (node count)
  int refinements = 2;    // each rung doubles the segment count
  int substeps = 6;       // cost-integral substeps per segment
  int max_iterations = 400;
  double grad_tol = 1e-8;
  double monotone_slack = 1e-10;
};

struct FundamentalSolutionResult {
  double h = 0.0;           // optimal generalized action on the finest rung
  double h_extrapolated = 0.0;
  double error_estimate = 0.0;
  bool certified = false;
  SampledCurve curve;       // optimizer on the finest rung
  std::vector<double> u;    // running cost along the optimizer
  std::vector<double> ladder;  // best action per rung, coarse to fine
  double grad_norm = 0.0;   // discrete Euler-Lagrange residual at the optimum
  int iterations = 0;
  std::string diagnostic;
};

// Least generalized action over curves from (t1,x) to (t2,y) with the cost
// state started at u_init, minimized over piecewise-linear curves with a
// nested refinement ladder and Richardson extrapolation across rungs.
FundamentalSolutionResult fundamental_solution(const ProblemSpec& spec, double t1, double t2,
                                               const Vec& x, const Vec& y, double u_init,
                                               const OracleOptions& opts = {});

struct ValueOracleResult {
  double u = 0.0;  // extrapolated value estimate
  Vec y;           // optimal initial point
  FundamentalSolutionResult detail;
};

// Value at (t,x) by direct curve optimization with a free initial endpoint
// coupled to the initial datum.
ValueOracleResult value_oracle(const ProblemSpec& spec, double t, const Vec& x,
                               const OracleOptions& opts = {});

// ---------------------------------------------------------------------------
// Dynamic-programming certificate along an arbitrary sampled curve

struct DppOptions {
  ShootOptions shoot;
  int substeps = 8;
};

struct DppCertificate {
  double t_start = 0.0, t_end = 0.0;
  double lhs = 0.0;     // value at the curve endpoint
  double u_start = 0.0; // value at the curve start (datum when t_start = 0)
  double rhs = 0.0;     // u_start propagated through the running-cost equation
  double slack = 0.0;   // rhs - lhs; nonnegative up to tolerance
  double cost = 0.0;    // rhs - u_start
};

// Evaluates the programming-principle slack along the curve's full span. The
// slack vanishes exactly on minimizers and is strictly positive otherwise.
DppCertificate dpp_certificate(const ProblemSpec& spec, const SampledCurve& curve,
                               const DppOptions& opts = {});

}  // namespace hjc
