#pragma once

#include <string>
#include <vector>

#include "hjc/flow.hpp"
#include "hjc/problem.hpp"
#include "hjc/types.hpp"
#include "hjc/value.hpp"

namespace hjc {

// ---------------------------------------------------------------------------
// Pointwise classification of the solution's singular structure

enum class PointClass {
  Regular,                // one minimizing characteristic, nondegenerate
  IrregularOnly,          // several distinct minimizing characteristics
  ConjugateOnly,          // a single focal family of minimizers
  IrregularAndConjugate,  // both phenomena at once
  Unknown,                // shooting failed; see diagnostic
};

const char* to_string(PointClass c);

struct ConjugateCluster {
  Vec centroid;           // mean seed of the focal family
  int members = 0;
  double min_abs_det = 0.0;
  Vec P;                  // momentum of the member nearest the centroid
};

struct Classification {
  PointClass type = PointClass::Unknown;
  int k = 0;  // distinct minimizing branches: isolated seeds + focal families
  std::vector<MinimizerEntry> regular_branches;  // minimizing, nondegenerate
  std::vector<ConjugateCluster> clusters;        // minimizing, degenerate
  MinimizerSet set;
  double cluster_radius = 0.0;
  // Signed distance of the closest minimizing |det Xz| to the degeneracy
  // threshold; small magnitude means the verdict is tolerance-sensitive.
  double det_margin = 0.0;
  std::string diagnostic;
};

struct ClassifyOptions {
  ShootOptions shoot;
  double tol_conj = 1e-7;     // |det Xz| at or below marks a degenerate root
  double cluster_frac = 1.5;  // times the seed-grid spacing, for focal grouping
};

// Group the minimizing entries of a shooting result into isolated branches and
// focal families. Degenerate minimizers within cluster_radius of each other
// (seed distance) are one family; k counts branches plus families.
Classification classify_from_set(const MinimizerSet& set, double cluster_radius, double tol_conj);

// Shoot at (t,x) and classify. Shooting failure yields kind Unknown with the
// shooting diagnostic attached; it never throws for an empty root set.
Classification classify_point(const ProblemSpec& spec, double t, const Vec& x,
                              const ClassifyOptions& opts = {});

// ---------------------------------------------------------------------------
// Local smooth branches at a point off the focal set

struct LocalBranch {
  int index = 0;
  Vec seed;        // characteristic root feeding the branch
  double v = 0.0;  // branch value
  double q = 0.0;  // branch time derivative, -H(t,x,p,v)
  Vec p;           // branch gradient
  double det_Xz = 0.0;
};

// The smooth sheets meeting at (t,x), one per minimizing nondegenerate root.
// Requires a Regular or IrregularOnly classification (sheets do not extend
// through focal points); degenerate roots are rejected with the reason in the
// classification's diagnostic.
std::vector<LocalBranch> local_branches(const ProblemSpec& spec, double t, const Vec& x,
                                        const Classification& cls);

// ---------------------------------------------------------------------------
// Conjugate (focal) time along a single characteristic

struct ConjugateScanOptions {
  StepPolicy ode;
  double tol_time = 1e-8;  // bisection width on the located time
  double tol_conj = 1e-7;  // dip threshold for tangential zeros
};

struct ConjugateTimeResult {
  bool found = false;
  double t_star = 0.0;     // first zero of det Xz on (0, horizon]
  double det_slope = 0.0;  // d/ds det Xz at t_star (two-sided difference)
  Vec kernel;              // unit right-singular vector of Xz(t_star), least sigma
  double kernel_sigma = 0.0;
  double next_sigma = 0.0;  // second-smallest singular value (fold simplicity)
  double Uz_theta = 0.0;    // |Uz kernel|; vanishes with the transport identity
  double Pz_theta = 0.0;    // |Pz kernel|; nonzero at a regular fold
  double min_abs_det = 0.0;  // over the scan, for the not-found report
  std::string diagnostic;
};

// Scan det Xz(s;z) on (0,horizon] for its first vanishing: a sign change is
// bisected to tol_time; a dip below tol_conj without sign change is refined
// and reported as a tangential zero.
ConjugateTimeResult conjugate_time(const ProblemSpec& spec, const Vec& z, double horizon,
                                   const ConjugateScanOptions& opts = {});

// ---------------------------------------------------------------------------
// Second variation of the generalized action along a characteristic

struct AccessoryOptions {
  StepPolicy ode;
  int substeps = 8;  // quadrature substeps per direction segment
};

struct SecondVariationReport {
  double jstar = 0.0;             // value of the quadratic form
  double quadrature_error = 0.0;  // step-halving estimate
  double weight_total = 0.0;      // exp of the accumulated L_u over [0,t]
};

// Quadratic form d^2/de^2 u_{xi+e*alpha}(t) at e=0 along the minimizer base,
// with the start coupled to the datum: the exp(int L_u)-weighted initial term
// alpha(0)' D^2u0 alpha(0) plus the weighted integral of
//   a'(Lxx + 2 Lxu Lv' + Lv Luu Lv') a + 2 a'(Lxv + Lv Luv') a' + adot' Lvv adot,
// which uses the first-variation identity du/de = Lv . alpha valid along
// extremals. Trapezoid in tau per direction segment; error by step halving.
// Corners of alpha are honored one-sidedly per segment.
SecondVariationReport accessory_second_variation(const ProblemSpec& spec,
                                                 const CharTrajectory& base,
                                                 const SampledCurve& alpha,
                                                 const AccessoryOptions& opts = {});

struct AccessoryResult {
  double jstar = 0.0;    // d^2/de^2 of the final cost along xi = X + e*alpha
  double w_final = 0.0;  // first variation; 0 for directions vanishing at the end
};

// Independent route to the same quadratic form: propagates the first and
// second variation of the cost state as ODEs along the base characteristic,
// making no use of the extremal identity. Used to cross-check the weighted
// quadrature.
AccessoryResult second_variation_flow(const ProblemSpec& spec, const Vec& z, double horizon,
                                      const SampledCurve& alpha, const AccessoryOptions& opts = {});

struct WitnessOptions {
  StepPolicy ode;
  int substeps = 8;
  double smoothing = 0.25;    // half-width of the corner-smoothing probe
  double certify_tol = 1e-8;  // negativity margin for the verdict
};

struct SecondVariationWitness {
  bool constructed = false;  // false when no fold provides a kernel direction
  SampledCurve alpha;        // seed-derivative field to the break, then zero
  double jstar = 0.0;
  Vec corner;                // incoming slope of alpha at the break (outgoing is 0)
  double jstar_improved = 0.0;  // after optimal blending with a corner smoother
  bool negative = false;        // second variation certified indefinite
  double break_time = 0.0;
  std::string diagnostic;
};

// Broken variation through the fold of the characteristic from z: alpha follows
// the seed-derivative field contracted with theta up to break_time (linearly
// corrected to vanish there exactly), then stays zero. Past the break the
// corner admits a smoothing direction that drives the quadratic form strictly
// negative; the optimal blend is reported in jstar_improved.
SecondVariationWitness conjugate_witness(const ProblemSpec& spec, const Vec& z, double break_time,
                                         double horizon, const Vec& theta,
                                         const WitnessOptions& opts = {});

// Locates the fold with conjugate_time first; refuses (constructed = false)
// when no fold occurs before the horizon.
SecondVariationWitness conjugate_witness(const ProblemSpec& spec, const Vec& z, double horizon,
                                         const WitnessOptions& opts = {});

// ---------------------------------------------------------------------------
// Curvature blow-up probe along one characteristic branch

struct HessianSample {
  double t = 0.0;
  double hessian_norm = 0.0;  // Frobenius norm of Pz Xz^{-1}
  double det_Xz = 0.0;
};

// Second-derivative proxy of the branch solution at the given times; the norm
// diverges like 1/det as the conjugate time is approached.
std::vector<HessianSample> hessian_blowup_probe(const ProblemSpec& spec, const Vec& z,
                                                const std::vector<double>& times,
                                                const StepPolicy& ode = {});

// ---------------------------------------------------------------------------
// Locating a crossing of two characteristic branches on a segment

struct CrossingOptions {
  ShootOptions shoot;
  double tol_x = 1e-8;  // bisection width on the located point
};

struct CrossingResult {
  bool found = false;
  Vec x;                      // located equal-cost point on the segment
  double u = 0.0;
  double value_gap = 0.0;     // |U_a - U_b| there (should sit below tolerance)
  double momentum_gap = 0.0;  // |P_a - P_b| there (gradient jump across)
  MinimizerEntry branch_a, branch_b;
  int evals = 0;
  std::string diagnostic;
};

// Continue the minimizing branch from each endpoint of the segment [a,b] at
// time t and bisect for the cost crossing between the two. Requires distinct
// dominant branches at the endpoints; the located point carries two equal-cost
// characteristics with distinct momenta, i.e. it lies on the singular set.
CrossingResult interface_crossing(const ProblemSpec& spec, double t, const Vec& a, const Vec& b,
                                  const CrossingOptions& opts = {});

// ---------------------------------------------------------------------------
// Short-time persistence of a singular point

struct PersistenceOptions {
  ShootOptions shoot;
  int grid = 9;         // scan points per axis direction
  double tol_x = 1e-8;
  double tie_slack = 10.0;  // crossing tolerance in units of the value tie_tol
};

struct PersistenceResult {
  bool found = false;
  Vec x;                      // singular point at time t0 + eps
  double distance = 0.0;      // |x - x0|, to compare with eps*M
  double u = 0.0;
  double value_gap = 0.0;
  double momentum_gap = 0.0;
  int evals = 0;
  std::string diagnostic;
};

// Given a singular (t0,x0), searches the ball of radius eps*M at time t0+eps
// for a singular point: scans coordinate lines through x0 for a change of the
// dominant characteristic branch and refines the crossing by bisection.
// Throws PreconditionError when (t0,x0) classifies Regular.
PersistenceResult persistence_probe(const ProblemSpec& spec, double t0, const Vec& x0, double eps,
                                    double M, const PersistenceOptions& opts = {});

}  // namespace hjc
