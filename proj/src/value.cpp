#include "hjc/value.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>

#include "hjc/parallel.hpp"

namespace hjc {

Box default_search_box(const ProblemSpec& spec, double t, const Vec& x) {
  double slope = spec.u0->gradient(x).norm();
  double half = std::max(2.0, 2.0 * t * (1.0 + slope));
  return Box::centered(x, half);
}

namespace {

struct RootCandidate {
  bool converged = false;
  Vec z;
  double residual = 0.0;
  double U = 0.0;
  Vec P;
  double det_Xz = 0.0;
};

// Damped Newton on z -> X(t;z) - x with the seed-derivative matrix as
// Jacobian. Iterates past the acceptance tolerance while steps keep reducing
// the residual, so degenerate (focused) roots -- where the tolerance basin is
// much wider than the root itself -- are polished down to the noise floor
// instead of being reported anywhere inside the basin.
RootCandidate refine_seed(const ProblemSpec& spec, double t, const Vec& x, Vec z, double tol,
                          const ShootOptions& opts, double guard_radius) {
  RootCandidate out;
  const Vec center = x;
  const double floor = 1e-13 * (1.0 + x.lpNorm<Eigen::Infinity>());
  double best_res = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter <= opts.max_newton; ++iter) {
    if (!z.allFinite() || (z - center).norm() > guard_radius) break;
    VarTrajectory var = integrate_variational(spec, z, t, opts.ode);
    Vec F = var.base.X.back() - x;
    double res = F.lpNorm<Eigen::Infinity>();
    if (res < best_res) {
      best_res = res;
      out.converged = res <= tol;
      out.z = z;
      out.residual = res;
      out.U = var.base.U.back();
      out.P = var.base.P.back();
      out.det_Xz = var.Xz.back().determinant();
    }
    if (res <= floor || iter == opts.max_newton) break;
    Eigen::PartialPivLU<Mat> lu(var.Xz.back());
    Vec step = lu.solve(-F);
    if (!step.allFinite()) break;
    double cap = 2.0 * guard_radius;
    if (step.norm() > cap) step *= cap / step.norm();
    double fnorm = F.norm();
    double alpha = 1.0;
    bool accepted = false;
    for (int half = 0; half < 14; ++half) {
      Vec trial = z + alpha * step;
      if (trial.allFinite()) {
        CharTrajectory lt = integrate_lie(spec, trial, t, opts.ode);
        double tn = (lt.X.back() - x).norm();
        if (tn <= (1.0 - 1e-4 * alpha) * fnorm) {
          z = trial;
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
  }
  if (!out.converged) out = RootCandidate{};
  return out;
}

}  // namespace

MinimizerSet shoot_minimizers(const ProblemSpec& spec, double t, const Vec& x,
                              const ShootOptions& opts) {
  require(t >= 0.0, "shoot_minimizers: time must be nonnegative");
  require(x.size() == spec.dim(), "shoot_minimizers: point dimension mismatch");
  int n = spec.dim();
  MinimizerSet out;
  out.t = t;
  out.x = x;
  out.box = opts.box ? *opts.box : default_search_box(spec, t, x);
  require(out.box.dim() == n && (out.box.hi - out.box.lo).minCoeff() > 0.0,
          "shoot_minimizers: search box must have positive extent");
  out.dedupe_radius = opts.dedupe_frac * out.box.max_width();
  double tol = opts.tol_shoot * (1.0 + x.lpNorm<Eigen::Infinity>());
  double guard = 50.0 * (0.5 * out.box.max_width() + 1.0);

  int g = std::max(1, opts.grid_per_dim);
  int total = 1;
  for (int a = 0; a < n; ++a) total *= g;
  out.n_seeds = total;

  std::vector<RootCandidate> results(total);
  parallel_for(total, opts.threads, [&](int idx) {
    Vec z(n);
    int rem = idx;
    for (int a = n - 1; a >= 0; --a) {
      int i = rem % g;
      rem /= g;
      z[a] = g == 1 ? 0.5 * (out.box.lo[a] + out.box.hi[a])
                    : out.box.lo[a] + out.box.width(a) * double(i) / (g - 1);
    }
    results[idx] = refine_seed(spec, t, x, z, tol, opts, guard);
  });

  // Sequential merge in grid order keeps the result thread-count independent.
  for (const auto& cand : results) {
    if (!cand.converged) {
      ++out.n_discarded;
      continue;
    }
    ++out.n_converged;
    bool merged = false;
    for (auto& kept : out.entries) {
      if ((kept.seed - cand.z).norm() < out.dedupe_radius) {
        if (cand.residual < kept.residual) {
          kept.seed = cand.z;
          kept.U = cand.U;
          kept.P = cand.P;
          kept.residual = cand.residual;
          kept.det_Xz = cand.det_Xz;
        }
        merged = true;
        break;
      }
    }
    if (!merged) {
      MinimizerEntry e;
      e.seed = cand.z;
      e.U = cand.U;
      e.P = cand.P;
      e.residual = cand.residual;
      e.det_Xz = cand.det_Xz;
      out.entries.push_back(std::move(e));
    }
  }

  if (out.entries.empty()) {
    out.diagnostic = "no characteristic from the search box reaches the query point; "
                     "enlarge the box or shorten the horizon";
    return out;
  }

  std::stable_sort(out.entries.begin(), out.entries.end(),
                   [](const MinimizerEntry& a, const MinimizerEntry& b) {
                     if (a.U != b.U) return a.U < b.U;
                     return std::lexicographical_compare(a.seed.data(), a.seed.data() + a.seed.size(),
                                                         b.seed.data(), b.seed.data() + b.seed.size());
                   });
  out.u = out.entries.front().U;
  out.tie_tol = opts.tie_frac * (1.0 + std::abs(out.u));
  for (auto& e : out.entries) e.minimizing = e.U <= out.u + out.tie_tol;
  return out;
}

std::optional<MinimizerEntry> continue_root(const ProblemSpec& spec, double t, const Vec& x,
                                            const Vec& z_guess, const ShootOptions& opts) {
  require(t > 0.0, "continue_root: time must be positive");
  require(x.size() == spec.dim() && z_guess.size() == spec.dim(),
          "continue_root: dimension mismatch");
  double tol = opts.tol_shoot * (1.0 + x.lpNorm<Eigen::Infinity>());
  Box box = opts.box ? *opts.box : default_search_box(spec, t, x);
  double guard = 50.0 * (0.5 * box.max_width() + 1.0) + (z_guess - x).norm();
  RootCandidate cand = refine_seed(spec, t, x, z_guess, tol, opts, guard);
  if (!cand.converged) return std::nullopt;
  MinimizerEntry e;
  e.seed = cand.z;
  e.U = cand.U;
  e.P = cand.P;
  e.residual = cand.residual;
  e.det_Xz = cand.det_Xz;
  return e;
}

ValueResult value(const ProblemSpec& spec, double t, const Vec& x, const ShootOptions& opts) {
  if (t == 0.0) {
    ValueResult r;
    r.u = spec.u0->value(x);
    r.minimizers.t = 0.0;
    r.minimizers.x = x;
    r.minimizers.box = opts.box ? *opts.box : Box::centered(x, 2.0);
    MinimizerEntry e;
    e.seed = x;
    e.U = r.u;
    e.P = spec.u0->gradient(x);
    e.residual = 0.0;
    e.det_Xz = 1.0;
    e.minimizing = true;
    r.minimizers.entries.push_back(std::move(e));
    r.minimizers.u = r.u;
    r.minimizers.n_seeds = 1;
    r.minimizers.n_converged = 1;
    return r;
  }
  ValueResult r;
  r.minimizers = shoot_minimizers(spec, t, x, opts);
  if (r.minimizers.entries.empty())
    throw NumericalError("value: " + r.minimizers.diagnostic);
  r.u = r.minimizers.u;
  return r;
}

// ---------------------------------------------------------------------------
// Curve optimization

namespace {

// Discrete generalized action of a piecewise-linear curve with the cost state
// advanced by RK4 inside each segment, together with its exact gradient with
// respect to the free node coordinates (forward sensitivity through the
// stages). Node 0 is free only in the free-start variant, where the initial
// cost state is coupled to the initial datum.
class CurveCost {
 public:
  CurveCost(const ProblemSpec& spec, std::vector<double> times, Vec fixed_first, Vec fixed_last,
            bool free_start, double u_init, int substeps)
      : spec_(spec),
        times_(std::move(times)),
        first_(std::move(fixed_first)),
        last_(std::move(fixed_last)),
        free_start_(free_start),
        u_init_(u_init),
        substeps_(substeps) {}

  int n() const { return spec_.dim(); }
  int m() const { return static_cast<int>(times_.size()); }
  int free_nodes() const { return m() - 2 + (free_start_ ? 1 : 0); }
  int dim() const { return free_nodes() * n(); }
  int slot_of_node(int j) const { return free_start_ ? j : j - 1; }

  std::vector<Vec> assemble(const Vec& theta) const {
    std::vector<Vec> nodes(m());
    nodes[0] = free_start_ ? Vec(theta.segment(0, n())) : first_;
    for (int j = 1; j < m() - 1; ++j) nodes[j] = theta.segment(slot_of_node(j) * n(), n());
    nodes[m() - 1] = last_;
    return nodes;
  }

  Vec flatten(const std::vector<Vec>& nodes) const {
    Vec theta(dim());
    if (free_start_) theta.segment(0, n()) = nodes[0];
    for (int j = 1; j < m() - 1; ++j) theta.segment(slot_of_node(j) * n(), n()) = nodes[j];
    return theta;
  }

  // Returns the final cost state; fills grad with d(final)/d(theta).
  double eval(const Vec& theta, Vec* grad) const {
    std::vector<Vec> nodes = assemble(theta);
    double u = free_start_ ? spec_.u0->value(nodes[0]) : u_init_;
    Vec G = Vec::Zero(dim());
    if (free_start_ && grad) G.segment(0, n()) = spec_.u0->gradient(nodes[0]);

    for (int j = 0; j + 1 < m(); ++j) {
      const Vec& a = nodes[j];
      const Vec& b = nodes[j + 1];
      double s0 = times_[j], s1 = times_[j + 1];
      double seg = s1 - s0;
      if (seg <= 0.0) continue;
      Vec v = (b - a) / seg;
      double alpha_seg = 1.0;
      Vec ga = Vec::Zero(n()), gb = Vec::Zero(n());
      double h = seg / substeps_;
      for (int k = 0; k < substeps_; ++k) {
        double s = s0 + k * h;
        // One RK4 substep with forward sensitivities w.r.t. (u, a, b).
        double kk[4], du[4];
        Vec da[4], db[4];
        double stage_time[4] = {s, s + 0.5 * h, s + 0.5 * h, s + h};
        double stage_coef[4] = {0.0, 0.5, 0.5, 1.0};
        double ui = u;
        double dui_du = 1.0;
        Vec dui_da = Vec::Zero(n()), dui_db = Vec::Zero(n());
        for (int i = 0; i < 4; ++i) {
          if (i > 0) {
            ui = u + stage_coef[i] * h * kk[i - 1];
            dui_du = 1.0 + stage_coef[i] * h * du[i - 1];
            dui_da = stage_coef[i] * h * da[i - 1];
            dui_db = stage_coef[i] * h * db[i - 1];
          }
          double r = (stage_time[i] - s0) / seg;
          Vec xi = (1.0 - r) * a + r * b;
          LagrangianJet l = spec_.L->jet(stage_time[i], xi, v, ui, grad ? 1 : 0);
          kk[i] = l.value;
          if (grad) {
            du[i] = l.Lu * dui_du;
            da[i] = (1.0 - r) * l.Lx - l.Lv / seg + l.Lu * dui_da;
            db[i] = r * l.Lx + l.Lv / seg + l.Lu * dui_db;
          }
        }
        u += (h / 6.0) * (kk[0] + 2 * kk[1] + 2 * kk[2] + kk[3]);
        if (grad) {
          double alpha = 1.0 + (h / 6.0) * (du[0] + 2 * du[1] + 2 * du[2] + du[3]);
          Vec ga_sub = (h / 6.0) * (da[0] + 2 * da[1] + 2 * da[2] + da[3]);
          Vec gb_sub = (h / 6.0) * (db[0] + 2 * db[1] + 2 * db[2] + db[3]);
          ga = alpha * ga + ga_sub;
          gb = alpha * gb + gb_sub;
          alpha_seg *= alpha;
        }
      }
      if (grad) {
        G *= alpha_seg;
        if (j == 0) {
          if (free_start_) G.segment(0, n()) += ga;
        } else {
          G.segment(slot_of_node(j) * n(), n()) += ga;
        }
        if (j + 1 < m() - 1) G.segment(slot_of_node(j + 1) * n(), n()) += gb;
      }
    }
    if (grad) *grad = G;
    return u;
  }

  const std::vector<double>& times() const { return times_; }

 private:
  const ProblemSpec& spec_;
  std::vector<double> times_;
  Vec first_, last_;
  bool free_start_;
  double u_init_;
  int substeps_;
};

struct BfgsOutcome {
  Vec theta;
  double f = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool stalled = false;
};

BfgsOutcome bfgs_minimize(const CurveCost& cost, Vec theta, int max_iter, double grad_tol) {
  int D = static_cast<int>(theta.size());
  BfgsOutcome out;
  if (D == 0) {
    out.theta = theta;
    out.f = cost.eval(theta, nullptr);
    return out;
  }
  Mat Hinv = Mat::Identity(D, D);
  Vec g(D);
  double f = cost.eval(theta, &g);
  int it = 0;
  for (; it < max_iter; ++it) {
    if (g.lpNorm<Eigen::Infinity>() <= grad_tol) break;
    Vec d = -Hinv * g;
    double slope = g.dot(d);
    if (slope >= 0.0) {
      Hinv = Mat::Identity(D, D);
      d = -g;
      slope = -g.squaredNorm();
    }
    double step = 1.0;
    bool moved = false;
    Vec theta_new, g_new(D);
    double f_new = 0.0;
    for (int half = 0; half < 40; ++half) {
      theta_new = theta + step * d;
      f_new = cost.eval(theta_new, &g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) {
      out.stalled = g.lpNorm<Eigen::Infinity>() > grad_tol;
      break;
    }
    Vec s = theta_new - theta;
    Vec yv = g_new - g;
    double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      Mat I = Mat::Identity(D, D);
      double rho = 1.0 / sy;
      Hinv = (I - rho * s * yv.transpose()) * Hinv * (I - rho * yv * s.transpose()) +
             rho * s * s.transpose();
    }
    theta = theta_new;
    f = f_new;
    g = g_new;
  }
  out.theta = theta;
  out.f = f;
  out.grad_norm = g.lpNorm<Eigen::Infinity>();
  out.iterations = it;
  return out;
}

std::vector<double> uniform_times(double t1, double t2, int m) {
  std::vector<double> times(m);
  for (int j = 0; j < m; ++j) times[j] = t1 + (t2 - t1) * double(j) / (m - 1);
  return times;
}

// Midpoint insertion: the refined curve represents the coarse one exactly, so
// the optimal action can only decrease along the ladder.
std::vector<Vec> refine_nodes(const std::vector<Vec>& nodes) {
  std::vector<Vec> out;
  out.reserve(2 * nodes.size() - 1);
  for (size_t j = 0; j + 1 < nodes.size(); ++j) {
    out.push_back(nodes[j]);
    out.push_back(0.5 * (nodes[j] + nodes[j + 1]));
  }
  out.push_back(nodes.back());
  return out;
}

FundamentalSolutionResult run_ladder(const ProblemSpec& spec, double t1, double t2, const Vec& x,
                                     const Vec& y, bool free_start, double u_init,
                                     const OracleOptions& opts) {
  require(t2 > t1, "curve optimization: needs t2 > t1");
  require(opts.nodes >= 3, "curve optimization: ladder must start with at least 3 nodes");
  FundamentalSolutionResult res;

  // Initial guess: the straight segment from x to the fixed end.
  std::vector<Vec> nodes;
  {
    int m = opts.nodes;
    nodes.resize(m);
    for (int j = 0; j < m; ++j) {
      double r = double(j) / (m - 1);
      nodes[j] = (1.0 - r) * x + r * y;
    }
  }
  double prev_f = 0.0;
  bool monotone = true;
  BfgsOutcome last;
  std::vector<double> times;
  for (int rung = 0; rung <= opts.refinements; ++rung) {
    if (rung > 0) nodes = refine_nodes(nodes);
    int m = static_cast<int>(nodes.size());
    times = uniform_times(t1, t2, m);
    CurveCost cost(spec, times, x, y, free_start, u_init, opts.substeps);
    last = bfgs_minimize(cost, cost.flatten(nodes), opts.max_iterations, opts.grad_tol);
    nodes = cost.assemble(last.theta);
    res.ladder.push_back(last.f);
    if (rung > 0 && last.f > prev_f + opts.monotone_slack) {
      monotone = false;
      res.diagnostic = "refined rung did not improve the action; optimizer not certified";
    }
    prev_f = last.f;
    res.iterations += last.iterations;
  }

  res.curve.times = times;
  res.curve.nodes = nodes;
  res.grad_norm = last.grad_norm;
  double fine = res.ladder.back();
  res.h = fine;
  if (res.ladder.size() >= 2) {
    double coarse = res.ladder[res.ladder.size() - 2];
    res.h_extrapolated = fine + (fine - coarse) / 3.0;
    res.error_estimate = std::abs(fine - coarse) / 3.0 + 10.0 * opts.grad_tol;
  } else {
    res.h_extrapolated = fine;
    res.error_estimate = 10.0 * opts.grad_tol;
  }
  res.certified = monotone && !last.stalled && last.grad_norm <= 10.0 * opts.grad_tol;
  if (last.stalled && res.diagnostic.empty())
    res.diagnostic = "descent stagnated above the gradient tolerance";

  // Running cost along the final optimizer, for reporting.
  CaratheodoryResult cara = caratheodory_solve(
      spec, res.curve, free_start ? spec.u0->value(res.curve.nodes.front()) : u_init,
      std::max(2, opts.substeps));
  res.u = cara.u;
  return res;
}

}  // namespace

FundamentalSolutionResult fundamental_solution(const ProblemSpec& spec, double t1, double t2,
                                               const Vec& x, const Vec& y, double u_init,
                                               const OracleOptions& opts) {
  FundamentalSolutionResult res = run_ladder(spec, t1, t2, x, y, false, u_init, opts);
  // Report the action relative to the supplied start state.
  for (auto& rung : res.ladder) rung -= u_init;
  res.h -= u_init;
  res.h_extrapolated -= u_init;
  return res;
}

ValueOracleResult value_oracle(const ProblemSpec& spec, double t, const Vec& x,
                               const OracleOptions& opts) {
  // A straight initialization can sit exactly on a stationary curve that is
  // not the minimizer (e.g. at symmetry points of a multi-well datum), so the
  // free-start problem is restarted from the centered guess plus one probe in
  // each coordinate direction; the cheapest certified-or-not run wins.
  int n = spec.dim();
  double radius = std::max(1.0, t * (1.0 + spec.u0->gradient(x).norm()));
  std::vector<Vec> starts;
  starts.push_back(x);
  for (int a = 0; a < n; ++a) {
    Vec e = Vec::Zero(n);
    e[a] = radius;
    starts.push_back(x - e);
    starts.push_back(x + e);
  }
  ValueOracleResult out;
  bool have = false;
  for (const Vec& s : starts) {
    FundamentalSolutionResult run = run_ladder(spec, 0.0, t, s, x, true, 0.0, opts);
    if (!have || run.ladder.back() < out.detail.ladder.back() - 1e-12) {
      out.detail = std::move(run);
      have = true;
    }
  }
  out.u = out.detail.h_extrapolated;
  out.y = out.detail.curve.nodes.front();
  return out;
}

DppCertificate dpp_certificate(const ProblemSpec& spec, const SampledCurve& curve,
                               const DppOptions& opts) {
  require(curve.times.size() >= 2, "dpp_certificate: curve needs at least two nodes");
  DppCertificate cert;
  cert.t_start = curve.times.front();
  cert.t_end = curve.times.back();
  require(cert.t_end > cert.t_start, "dpp_certificate: curve must span positive time");
  cert.u_start = cert.t_start == 0.0 ? spec.u0->value(curve.nodes.front())
                                     : value(spec, cert.t_start, curve.nodes.front(), opts.shoot).u;
  cert.lhs = value(spec, cert.t_end, curve.nodes.back(), opts.shoot).u;
  CaratheodoryResult cara = caratheodory_solve(spec, curve, cert.u_start, opts.substeps);
  cert.rhs = cara.u.back();
  cert.cost = cert.rhs - cert.u_start;
  cert.slack = cert.rhs - cert.lhs;
  return cert;
}

}  // namespace hjc
