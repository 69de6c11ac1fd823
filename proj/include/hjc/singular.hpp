#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hjc/cutlocus.hpp"
#include "hjc/problem.hpp"
#include "hjc/types.hpp"
#include "hjc/value.hpp"

namespace hjc {

// ---------------------------------------------------------------------------
// Exposed faces of the superdifferential
//
// A branch gradient is the (n+1)-vector (q, p) = (time slope, space gradient)
// of one smooth sheet; the superdifferential at a singular point is the convex
// hull of these vertices.

struct FaceSelection {
  std::vector<Vec> vertices;  // (n+1)-vectors (q_i, p_i), one per branch
  std::vector<int> active;    // indices of the selected face, ascending
  Vec theta;                  // exposure direction (empty when chosen by hand)
  double slack = 0.0;  // support gap between active and inactive vertices; 0 if none inactive
};

// Face of the hull exposed in direction theta: the vertices minimizing
// <. , theta>, collected within face_tol of the minimum.
FaceSelection exposed_face(const std::vector<Vec>& vertices, const Vec& theta,
                           double face_tol = 1e-9);

// ---------------------------------------------------------------------------
// The minimal-energy element of a face

struct EnergyOptions {
  double tol_kkt = 1e-9;  // stationarity residual target
  double tol_ri = 1e-6;   // interiority margin for the flag
  int max_newton = 60;
};

struct EnergyMinimum {
  Vec weights;   // barycentric weights over the face's active vertices, sum 1
  double q_bar = 0.0;
  Vec p_bar;
  Vec v_bar;     // H_p(t, x, p_bar, u_ref)
  double energy = 0.0;         // E at the minimum; 0 at any vertex of the hull
  double kkt_residual = 0.0;
  bool interior = false;       // all weights >= tol_ri
  double interior_margin = 0.0;  // min weight
  int newton_iters = 0;
  bool fallback_used = false;
};

// Unique minimizer over the face's simplex of the strictly convex energy
//   E(lambda) = q_bar(lambda) + H(t, x, p_bar(lambda), u_ref),
// where (q_bar, p_bar) is the barycentric combination of the active vertices.
// Solved by stationarity Newton over every sub-face with KKT screening (the
// face count is tiny); a derivative-free fallback covers Newton breakdowns.
// Throws PreconditionError when the active gradients are geometrically
// dependent (difference matrix loses rank) or the face has more than 8
// vertices.
EnergyMinimum minimal_energy_element(const ProblemSpec& spec, double t, const Vec& x,
                                     const FaceSelection& face, double u_ref,
                                     const EnergyOptions& opts = {});

// ---------------------------------------------------------------------------
// Non-degeneracy of a face/minimum pair

struct NondegeneracyOptions {
  double face_tol = 1e-9;
  double tol_ri = 1e-6;
  double tol_rank = 1e-8;
};

struct NondegeneracyReport {
  bool geometrically_independent = false;
  double rank_margin = 0.0;  // smallest singular value of the gradient differences
  bool interior = false;
  double interior_margin = 0.0;
  bool exposed_in_velocity_direction = false;
  double exposure_slack = 0.0;
  bool minimax = false;  // exposed against -(1, H_p) and not a vertex

  bool forward_hypotheses() const {
    return geometrically_independent && interior && exposed_in_velocity_direction;
  }
};

// Evaluates the hypotheses of the propagation theorems: geometric independence
// of the active gradients, interiority of the minimal-energy weights, whether
// the face is exactly the one exposed by (1, v_bar) among all equal-branch
// vertices, and the minimax property (exposure against -(1, v_bar), minimum
// not at a vertex). all_vertices must list the gradients of every branch
// participating in the superdifferential at the point.
NondegeneracyReport nondegeneracy_check(const FaceSelection& face, const EnergyMinimum& em,
                                        const std::vector<Vec>& all_vertices,
                                        const NondegeneracyOptions& opts = {});

// ---------------------------------------------------------------------------
// Branch models: smooth solution sheets along a singular curve

struct BranchState {
  bool ok = false;
  double v = 0.0;  // sheet value
  double q = 0.0;  // sheet time slope, -H(t, x, p, v)
  Vec p;           // sheet gradient
  double det_Xz = 1.0;
  std::string diagnostic;

  Vec gradient_vector() const {  // the (n+1)-vector (q, p)
    Vec g(p.size() + 1);
    g[0] = q;
    g.tail(p.size()) = p;
    return g;
  }
};

class BranchModel {
 public:
  virtual ~BranchModel() = default;
  // Evaluate the sheet at (t, x); stateful implementations warm-start from the
  // previous call, so consecutive queries should stay close together.
  virtual BranchState eval(const ProblemSpec& spec, double t, const Vec& x) = 0;
  // Characteristic seed feeding the sheet, when the model tracks one.
  virtual const Vec* seed() const { return nullptr; }
  // Snapshot with an independent warm state, for tracing a second direction.
  virtual std::shared_ptr<BranchModel> fork() const = 0;
};

// Sheet given in closed form; q is derived from the equation.
std::shared_ptr<BranchModel> analytic_branch(
    std::function<double(double, const Vec&)> value,
    std::function<Vec(double, const Vec&)> gradient);

// Sheet continued by Newton from a characteristic seed (warm-started).
std::shared_ptr<BranchModel> shooting_branch(const Vec& seed, const ShootOptions& opts = {});

// Closed-form sheets of the model families, for interface fixtures:
// a.x - |a|^2 t / 2 + c, and its discounted contact analogue.
std::shared_ptr<BranchModel> classical_linear_sheet(const Vec& a, double c = 0.0);
std::shared_ptr<BranchModel> contact_linear_sheet(double discount, const Vec& a, double c = 0.0);

// ---------------------------------------------------------------------------
// Strict singular characteristics

enum class StopReason {
  Horizon,             // reached the requested time
  FaceBoundary,        // interiority or exposure margin lost, or equality broke
  RankLoss,            // active gradients became geometrically dependent
  BranchCrossing,      // a branch was lost, or a new one reached the curve
  Conjugacy,           // det X_z of an active branch fell to the threshold
  IntegrationFailure,  // step produced a non-finite state
};
const char* to_string(StopReason r);

enum class TraceDirection { Forward, Backward, Bidirectional };
const char* to_string(TraceDirection d);

struct SingularSample {
  double t = 0.0;
  Vec x;
  Vec weights;  // minimal-energy weights on the active face
  double q_bar = 0.0;
  Vec p_bar;
  Vec v_bar;
  std::vector<double> branch_values;  // all tracked branches, model order
  double equality_residual = 0.0;     // max - min over the active branches
  double inactive_value_margin = 0.0;  // min v_j - v_ref over branches off the face; +inf if none
  double exposure_slack = 0.0;  // support gap to equal-but-inactive branches; +inf if none
  double interior_margin = 0.0;
  double rank_margin = 0.0;
  double min_abs_det = 0.0;  // over active branches
};

struct SingularCurve {
  std::vector<SingularSample> samples;  // ascending in t
  TraceDirection direction = TraceDirection::Forward;
  StopReason stop = StopReason::Horizon;           // forward (or single-direction) terminus
  StopReason stop_backward = StopReason::Horizon;  // populated for bidirectional traces
  std::string stop_detail;
  std::vector<int> active;  // indices into the traced model list
  NondegeneracyReport hypotheses;

  // Positions with the singular velocity as derivative, for comparisons.
  SampledCurve path() const;
};

struct TraceOptions {
  double dt = 1e-2;  // base step of the fourth-order integrator
  EnergyOptions energy;
  double tol_sing = 1e-7;  // equality tolerance, scaled by 1 + |u|
  double tol_ri = 1e-6;
  double tol_rank = 1e-8;
  double tol_conj = 1e-7;
  double face_tol = 1e-9;
  int reval_every = 25;    // global re-shoot cadence along shooting traces
  bool revalidate = true;  // only effective when a branch exposes a seed
  ShootOptions shoot;
};

// Integrate dx/dt = v_bar(t, x) forward from a singular point, where v_bar is
// the velocity of the minimal-energy element over the face exposed by
// (1, v_bar) among the branches equal at the point. Monitors the propagation
// hypotheses each step and stops with a reason when one fails. Throws
// PreconditionError, naming the hypothesis, when they already fail at the
// start.
SingularCurve trace_forward(const ProblemSpec& spec, double t0, const Vec& x0,
                            const std::vector<std::shared_ptr<BranchModel>>& branches,
                            double horizon, const TraceOptions& opts = {});

// Backward continuation anchored at a chosen superdifferential element
// (q0, p0): verifies that (q0, p0) is the minimal-energy element of the face
// it exposes against -(1, H_p) and that it is minimax (not a vertex), then
// integrates dx/dt = v_bar down to horizon < t0. The left derivative at t0
// equals H_p(t0, x0, p0, u) by construction.
SingularCurve trace_backward(const ProblemSpec& spec, double t0, const Vec& x0,
                             const std::vector<std::shared_ptr<BranchModel>>& branches,
                             double q0, const Vec& p0, double horizon,
                             const TraceOptions& opts = {});

// The two-branch interface case: the face is the whole segment and is
// non-degenerate on its own, so the anchor element is computed automatically
// and the curve is traced in both directions (backward to horizon_bwd, then
// forward to horizon_fwd).
SingularCurve trace_two_branch(const ProblemSpec& spec, double t0, const Vec& x0,
                               const std::shared_ptr<BranchModel>& branch_a,
                               const std::shared_ptr<BranchModel>& branch_b, double horizon_fwd,
                               double horizon_bwd, const TraceOptions& opts = {});

// Same, with the two branches discovered by shooting: requires classify_point
// to report exactly two nondegenerate minimizing branches at (t0, x0).
SingularCurve trace_two_branch(const ProblemSpec& spec, double t0, const Vec& x0,
                               double horizon_fwd, double horizon_bwd,
                               const TraceOptions& opts = {});

// ---------------------------------------------------------------------------
// Enumeration of minimax anchor candidates at a singular point

struct MinimaxCandidate {
  FaceSelection face;
  EnergyMinimum em;
};

// All sub-faces (size >= 2) of the given equal-branch gradients whose
// minimal-energy element is exposed by its own -(1, v_bar) direction and is
// not a vertex. At most 2^k - k - 1 faces are examined; k <= 8 enforced.
std::vector<MinimaxCandidate> minimax_candidates(const ProblemSpec& spec, double t, const Vec& x,
                                                 const std::vector<Vec>& vertices, double u_ref,
                                                 const EnergyOptions& opts = {},
                                                 double face_tol = 1e-9);

}  // namespace hjc
