#pragma once

#include <string>
#include <vector>

#include "hjc/problem.hpp"
#include "hjc/types.hpp"

namespace hjc {

// Monotone first-order finite-difference solver (central gradients with
// slope-scaled artificial viscosity, explicit Euler in time, value coupling
// frozen within each step) on boxes in one and two dimensions.  It shares no
// machinery with the characteristic pipeline and serves as an independent
// cross-check of values and of singular-set locations.

struct LfOptions {
  double cfl = 0.9;        // stability number the run must respect
  int threads = 1;         // cells are updated in parallel chunks
  long max_steps = 4000000;
};

struct GridSolution {
  Box box;
  std::vector<int> shape;  // nodes per axis, both endpoints included
  Vec dx;                  // effective spacing per axis
  double dt = 0.0;         // nominal step; the final step may be shorter
  double horizon = 0.0;
  double cfl = 0.9;        // bound that was enforced
  Vec viscosity;           // largest per-axis coefficient used during the run
  std::vector<double> times;            // slice times, first is 0
  std::vector<Eigen::VectorXd> slices;  // flattened values, first axis fastest
  bool complete = true;    // false when the run aborted mid-way
  std::string diagnostic;

  int dim() const { return static_cast<int>(shape.size()); }
  Eigen::Index nodes() const;
  Vec node(const std::vector<int>& idx) const;
  bool contains(double t, const Vec& x) const;
  // multilinear in space, linear in time; throws outside the covered range
  double interpolate(double t, const Vec& x) const;
  int nearest_slice(double t) const;
};

GridSolution lf_solve(const ProblemSpec& spec, const Box& box, const Vec& dx,
                      double dt, double horizon, const LfOptions& opts = {});
GridSolution lf_solve(const ProblemSpec& spec, const Box& box, double dx,
                      double dt, double horizon, const LfOptions& opts = {});

// Largest stable step estimated from the initial slice, shrunk by `safety`
// to leave room for slopes that steepen during the run.
double suggested_time_step(const ProblemSpec& spec, const Box& box,
                           const Vec& dx, double cfl = 0.9,
                           double safety = 0.5);

struct FlaggedCell {
  std::vector<int> idx;
  Vec x;
  double jump;  // largest one-sided slope difference across axes
};

// Cells whose forward and backward slopes differ by more than jump_tol on
// some axis, listed per time slice.
std::vector<std::vector<FlaggedCell>> detect_singular_grid(
    const GridSolution& sol, double jump_tol);

struct CellDistanceStats {
  double max_cells = 0.0;   // Chebyshev distance in units of dx
  double mean_cells = 0.0;
  int n = 0;
  int n_unflagged_times = 0;  // samples whose slice carried no flag at all
};

// Distance from each sample point to the nearest flagged cell of the slice
// closest in time; samples on flag-free slices make max_cells infinite.
CellDistanceStats kink_distance(const GridSolution& sol,
                                const std::vector<std::vector<FlaggedCell>>& flags,
                                const std::vector<double>& ts,
                                const std::vector<Vec>& xs);

struct CompareStats {
  double max_err = 0.0;
  double mean_err = 0.0;
  std::vector<double> per_point;  // NaN where the point fell outside the grid
  std::vector<int> excluded;
  int n_included = 0;
};

CompareStats compare(const GridSolution& sol, const std::vector<double>& ts,
                     const std::vector<Vec>& xs,
                     const std::vector<double>& values);

}  // namespace hjc
