#pragma once

#include <optional>
#include <vector>

#include "hjc/problem.hpp"
#include "hjc/types.hpp"

namespace hjc {

// Fixed-step RK4 by default; the embedded Cash-Karp 4(5) pair is available
// behind the adaptive flag for stiff custom families.
struct StepPolicy {
  double dt = 1e-2;
  bool adaptive = false;
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  double min_dt = 1e-9;
};

// Characteristic arc (X,P,U)(s) from one seed. Xdot stores the right-hand
// side H_p at each sample; schemes are one-step so samples are collocation
// points of the integrator.
struct CharTrajectory {
  Vec seed;
  std::vector<double> times;
  std::vector<Vec> X;
  std::vector<Vec> P;
  std::vector<double> U;
  std::vector<Vec> Xdot;

  int steps() const { return static_cast<int>(times.size()) - 1; }
  double t_end() const { return times.back(); }
};

// Adds the seed derivatives: X_z, P_z are n x n, U_z is a row vector. The
// transport identity U_z = P^T X_z holds along exact solutions and is the
// primary integration self-check.
struct VarTrajectory {
  CharTrajectory base;
  std::vector<Mat> Xz;
  std::vector<Mat> Pz;
  std::vector<RowVec> Uz;
};

CharTrajectory integrate_lie(const ProblemSpec& spec, const Vec& z, double t_end,
                             const StepPolicy& policy = {});
VarTrajectory integrate_variational(const ProblemSpec& spec, const Vec& z, double t_end,
                                    const StepPolicy& policy = {});

// Continues a characteristic between arbitrary times; t1 < t0 integrates
// backward. Used for time-symmetry checks and terminal-value continuation.
struct CharState {
  double t;
  Vec X;
  Vec P;
  double U;
};
CharState integrate_lie_between(const ProblemSpec& spec, const CharState& from, double t_to,
                                const StepPolicy& policy = {});

// Max over steps of |state(t_{j+1}) - two half steps from state(t_j)| / dt,
// a local defect per unit time directly comparable with tol_ode.
double lie_defect(const ProblemSpec& spec, const CharTrajectory& traj);

// Max-norm of U_z - P^T X_z over all samples.
double transport_identity_residual(const VarTrajectory& traj);

// Smallest norm of (X_z th, P_z th, U_z th) over samples and supplied unit
// directions; a zero would mean the joint variational state degenerates.
double nonvanishing_margin(const VarTrajectory& traj, const std::vector<Vec>& directions);

// Empirical bound max(|X|, |Xdot|, |P|, |U|) along the arc; callers use it to
// size search boxes and probe radii.
double trajectory_bound(const CharTrajectory& traj);

// ---------------------------------------------------------------------------
// Curves and the generalized running-cost integral

// Sampled curve on a strictly increasing time grid. With derivative samples
// present, evaluation is piecewise cubic Hermite; otherwise piecewise linear.
// Duplicated interior grid points encode derivative jumps (corners).
struct SampledCurve {
  std::vector<double> times;
  std::vector<Vec> nodes;
  std::vector<Vec> derivs;  // optional, same length as nodes when present

  bool has_derivs() const { return !derivs.empty(); }
  int segments() const { return static_cast<int>(times.size()) - 1; }
  Vec eval(double s) const;
  Vec eval_deriv(double s) const;

  static SampledCurve straight(double t0, double t1, const Vec& a, const Vec& b, int m);
};

// Solution of the state-dependent cost equation du/ds = L(s, xi, xi', u)
// along a fixed curve, with its integration defect.
struct CaratheodoryResult {
  SampledCurve curve;
  std::vector<double> u;  // one value per curve node
  double defect = 0.0;    // local defect per unit time, comparable with tol_ode

  double cost() const { return u.back() - u.front(); }
};

CaratheodoryResult caratheodory_solve(const ProblemSpec& spec, const SampledCurve& curve,
                                      double u_init, int substeps = 8);

// ---------------------------------------------------------------------------
// Euler-Lagrange diagnostics along an integrated characteristic

struct HerglotzReport {
  // max over interior samples of | d/ds L_v - (L_x + L_u L_v) |_inf, with
  // d/ds taken by five-point differentiation of the sampled L_v.
  double equation_residual = 0.0;
  // max over samples of | P - L_v(s, X, xi', U) |_inf with xi' differenced
  // from the X samples; ties the stored momentum to the curve itself.
  double momentum_residual = 0.0;

  double max_residual() const {
    return equation_residual > momentum_residual ? equation_residual : momentum_residual;
  }
};

HerglotzReport herglotz_residual(const ProblemSpec& spec, const CharTrajectory& traj);

// Cross-check of the variational solve: directional seed derivatives against
// centered differences of integrate_lie. Returns the worst absolute gap over
// (X_z d, P_z d, U_z d) at the final time for the given directions.
double variational_fd_check(const ProblemSpec& spec, const Vec& z, double t_end,
                            const std::vector<Vec>& directions, double bump,
                            const StepPolicy& policy = {});

}  // namespace hjc
