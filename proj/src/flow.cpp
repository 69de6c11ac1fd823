#include "hjc/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hjc {

namespace {

// Packed layouts: lie state [X P U], variational state [X P U vec(Xz) vec(Pz) Uz].
int lie_size(int n) { return 2 * n + 1; }
int var_size(int n) { return 2 * n + 1 + 2 * n * n + n; }

struct LieView {
  Vec X;
  Vec P;
  double U;
};

LieView unpack_lie(const Vec& y, int n) { return {y.segment(0, n), y.segment(n, n), y[2 * n]}; }

Vec pack_lie(const Vec& X, const Vec& P, double U) {
  int n = static_cast<int>(X.size());
  Vec y(lie_size(n));
  y.segment(0, n) = X;
  y.segment(n, n) = P;
  y[2 * n] = U;
  return y;
}

Vec lie_rhs(const ProblemSpec& spec, double s, const Vec& y) {
  int n = spec.dim();
  LieView st = unpack_lie(y, n);
  HamiltonianJet j = spec.H->jet(s, st.X, st.P, st.U, 1);
  Vec dy(lie_size(n));
  dy.segment(0, n) = j.Hp;
  dy.segment(n, n) = -j.Hx - j.Hu * st.P;
  dy[2 * n] = st.P.dot(j.Hp) - j.value;
  return dy;
}

Vec var_rhs(const ProblemSpec& spec, double s, const Vec& y) {
  int n = spec.dim();
  Vec X = y.segment(0, n), P = y.segment(n, n);
  double U = y[2 * n];
  Eigen::Map<const Mat> Xz(y.data() + 2 * n + 1, n, n);
  Eigen::Map<const Mat> Pz(y.data() + 2 * n + 1 + n * n, n, n);
  Eigen::Map<const RowVec> Uz(y.data() + 2 * n + 1 + 2 * n * n, n);

  HamiltonianJet j = spec.H->jet(s, X, P, U, 2);
  Vec dy(var_size(n));
  dy.segment(0, n) = j.Hp;
  dy.segment(n, n) = -j.Hx - j.Hu * P;
  dy[2 * n] = P.dot(j.Hp) - j.value;

  // Seed derivatives of the characteristic fields. Mixed blocks follow
  // Hpx(i,k) = d2H/dp_i dx_k; the u-column blocks act through the row Uz.
  Mat dXz = j.Hpx * Xz + j.Hpp * Pz + j.Hpu * Uz;
  RowVec dHu = j.Hxu.transpose() * Xz + j.Hpu.transpose() * Pz + j.Huu * Uz;
  Mat dPz = -j.Hxx * Xz - j.Hpx.transpose() * Pz - j.Hxu * Uz - j.Hu * Pz - P * dHu;
  // d/dz of (P . Xdot - H); the Hp^T Pz contributions cancel.
  RowVec dUz = P.transpose() * dXz - j.Hx.transpose() * Xz - j.Hu * Uz;

  Eigen::Map<Mat>(dy.data() + 2 * n + 1, n, n) = dXz;
  Eigen::Map<Mat>(dy.data() + 2 * n + 1 + n * n, n, n) = dPz;
  Eigen::Map<RowVec>(dy.data() + 2 * n + 1 + 2 * n * n, n) = dUz;
  return dy;
}

using Rhs = std::function<Vec(double, const Vec&)>;

Vec rk4_step(const Rhs& f, double s, const Vec& y, double h) {
  Vec k1 = f(s, y);
  Vec k2 = f(s + 0.5 * h, y + 0.5 * h * k1);
  Vec k3 = f(s + 0.5 * h, y + 0.5 * h * k2);
  Vec k4 = f(s + h, y + h * k3);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Cash-Karp 4(5) embedded pair; returns the 5th order result and the
// embedded error estimate.
Vec cash_karp_step(const Rhs& f, double s, const Vec& y, double h, double* err) {
  static const double a[6] = {0.0, 1.0 / 5, 3.0 / 10, 3.0 / 5, 1.0, 7.0 / 8};
  static const double b[6][5] = {
      {},
      {1.0 / 5},
      {3.0 / 40, 9.0 / 40},
      {3.0 / 10, -9.0 / 10, 6.0 / 5},
      {-11.0 / 54, 5.0 / 2, -70.0 / 27, 35.0 / 27},
      {1631.0 / 55296, 175.0 / 512, 575.0 / 13824, 44275.0 / 110592, 253.0 / 4096}};
  static const double c5[6] = {37.0 / 378, 0.0, 250.0 / 621, 125.0 / 594, 0.0, 512.0 / 1771};
  static const double c4[6] = {2825.0 / 27648, 0.0,           18575.0 / 48384,
                               13525.0 / 55296, 277.0 / 14336, 1.0 / 4};
  std::vector<Vec> k(6);
  for (int i = 0; i < 6; ++i) {
    Vec yi = y;
    for (int m = 0; m < i; ++m) yi += h * b[i][m] * k[m];
    k[i] = f(s + a[i] * h, yi);
  }
  Vec y5 = y, y4 = y;
  for (int i = 0; i < 6; ++i) {
    y5 += h * c5[i] * k[i];
    y4 += h * c4[i] * k[i];
  }
  *err = (y5 - y4).lpNorm<Eigen::Infinity>();
  return y5;
}

struct SamplePoint {
  double s;
  Vec y;
};

// Drives either scheme from s0 to s1 (possibly backward) and records every
// accepted step. Throws on non-finite state, naming the last good time.
std::vector<SamplePoint> integrate(const Rhs& f, const Vec& y0, double s0, double s1,
                                   const StepPolicy& policy, const char* what) {
  std::vector<SamplePoint> out;
  out.push_back({s0, y0});
  if (s1 == s0) return out;
  double dir = s1 > s0 ? 1.0 : -1.0;
  require(policy.dt > 0.0, "step policy: dt must be positive");
  double s = s0;
  Vec y = y0;
  double h = dir * policy.dt;
  while (dir * (s1 - s) > 1e-14 * std::max(1.0, std::abs(s1))) {
    if (dir * (s + h) > dir * s1) h = s1 - s;
    Vec ynext;
    if (!policy.adaptive) {
      ynext = rk4_step(f, s, y, h);
    } else {
      double err = 0.0;
      ynext = cash_karp_step(f, s, y, h, &err);
      double scale = policy.abs_tol + policy.rel_tol * y.lpNorm<Eigen::Infinity>();
      if (err > scale && std::abs(h) > policy.min_dt) {
        double shrink = std::max(0.2, 0.9 * std::pow(scale / err, 0.25));
        h *= shrink;
        continue;
      }
      double grow = err > 0.0 ? 0.9 * std::pow(scale / err, 0.2) : 5.0;
      double hnext = h * std::min(5.0, std::max(0.2, grow));
      s += h;
      if (!ynext.allFinite())
        throw NumericalError(std::string(what) + ": non-finite state at t=" + std::to_string(s) +
                             " (last good t=" + std::to_string(out.back().s) + ")");
      y = ynext;
      out.push_back({s, y});
      h = dir * std::min(std::abs(hnext), policy.dt * 100.0);
      continue;
    }
    s += h;
    if (!ynext.allFinite())
      throw NumericalError(std::string(what) + ": non-finite state at t=" + std::to_string(s) +
                           " (last good t=" + std::to_string(out.back().s) + ")");
    y = ynext;
    out.push_back({s, y});
    h = dir * policy.dt;
  }
  return out;
}

}  // namespace

CharTrajectory integrate_lie(const ProblemSpec& spec, const Vec& z, double t_end,
                             const StepPolicy& policy) {
  require(t_end >= 0.0, "integrate_lie: horizon must be nonnegative");
  require(z.size() == spec.dim(), "integrate_lie: seed dimension mismatch");
  int n = spec.dim();
  Vec y0 = pack_lie(z, spec.u0->gradient(z), spec.u0->value(z));
  Rhs f = [&spec](double s, const Vec& y) { return lie_rhs(spec, s, y); };
  auto samples = integrate(f, y0, 0.0, t_end, policy, "integrate_lie");
  CharTrajectory traj;
  traj.seed = z;
  traj.times.reserve(samples.size());
  for (const auto& sp : samples) {
    LieView st = unpack_lie(sp.y, n);
    traj.times.push_back(sp.s);
    traj.X.push_back(st.X);
    traj.P.push_back(st.P);
    traj.U.push_back(st.U);
    traj.Xdot.push_back(spec.H->jet(sp.s, st.X, st.P, st.U, 1).Hp);
  }
  return traj;
}

VarTrajectory integrate_variational(const ProblemSpec& spec, const Vec& z, double t_end,
                                    const StepPolicy& policy) {
  require(t_end >= 0.0, "integrate_variational: horizon must be nonnegative");
  require(z.size() == spec.dim(), "integrate_variational: seed dimension mismatch");
  int n = spec.dim();
  Vec y0(var_size(n));
  y0.segment(0, n) = z;
  y0.segment(n, n) = spec.u0->gradient(z);
  y0[2 * n] = spec.u0->value(z);
  Eigen::Map<Mat>(y0.data() + 2 * n + 1, n, n) = Mat::Identity(n, n);
  Eigen::Map<Mat>(y0.data() + 2 * n + 1 + n * n, n, n) = spec.u0->hessian(z);
  Eigen::Map<RowVec>(y0.data() + 2 * n + 1 + 2 * n * n, n) = spec.u0->gradient(z).transpose();

  Rhs f = [&spec](double s, const Vec& y) { return var_rhs(spec, s, y); };
  auto samples = integrate(f, y0, 0.0, t_end, policy, "integrate_variational");
  VarTrajectory traj;
  traj.base.seed = z;
  for (const auto& sp : samples) {
    Vec X = sp.y.segment(0, n), P = sp.y.segment(n, n);
    double U = sp.y[2 * n];
    traj.base.times.push_back(sp.s);
    traj.base.X.push_back(X);
    traj.base.P.push_back(P);
    traj.base.U.push_back(U);
    traj.base.Xdot.push_back(spec.H->jet(sp.s, X, P, U, 1).Hp);
    traj.Xz.push_back(Eigen::Map<const Mat>(sp.y.data() + 2 * n + 1, n, n));
    traj.Pz.push_back(Eigen::Map<const Mat>(sp.y.data() + 2 * n + 1 + n * n, n, n));
    traj.Uz.push_back(Eigen::Map<const RowVec>(sp.y.data() + 2 * n + 1 + 2 * n * n, n));
  }
  return traj;
}

CharState integrate_lie_between(const ProblemSpec& spec, const CharState& from, double t_to,
                                const StepPolicy& policy) {
  int n = spec.dim();
  Vec y0 = pack_lie(from.X, from.P, from.U);
  Rhs f = [&spec](double s, const Vec& y) { return lie_rhs(spec, s, y); };
  auto samples = integrate(f, y0, from.t, t_to, policy, "integrate_lie_between");
  LieView st = unpack_lie(samples.back().y, n);
  return {samples.back().s, st.X, st.P, st.U};
}

double lie_defect(const ProblemSpec& spec, const CharTrajectory& traj) {
  Rhs f = [&spec](double s, const Vec& y) { return lie_rhs(spec, s, y); };
  double worst = 0.0;
  for (int j = 0; j + 1 < static_cast<int>(traj.times.size()); ++j) {
    double h = traj.times[j + 1] - traj.times[j];
    if (h <= 0.0) continue;
    Vec y = pack_lie(traj.X[j], traj.P[j], traj.U[j]);
    Vec half = rk4_step(f, traj.times[j], y, 0.5 * h);
    Vec fine = rk4_step(f, traj.times[j] + 0.5 * h, half, 0.5 * h);
    Vec stored = pack_lie(traj.X[j + 1], traj.P[j + 1], traj.U[j + 1]);
    worst = std::max(worst, (fine - stored).lpNorm<Eigen::Infinity>() / h);
  }
  return worst;
}

double transport_identity_residual(const VarTrajectory& traj) {
  double worst = 0.0;
  for (size_t j = 0; j < traj.Uz.size(); ++j) {
    RowVec predicted = traj.base.P[j].transpose() * traj.Xz[j];
    worst = std::max(worst, (traj.Uz[j] - predicted).lpNorm<Eigen::Infinity>());
  }
  return worst;
}

double nonvanishing_margin(const VarTrajectory& traj, const std::vector<Vec>& directions) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec& d : directions) {
    for (size_t j = 0; j < traj.Xz.size(); ++j) {
      double norm2 = (traj.Xz[j] * d).squaredNorm() + (traj.Pz[j] * d).squaredNorm() +
                     std::pow(traj.Uz[j].dot(d), 2);
      best = std::min(best, std::sqrt(norm2));
    }
  }
  return best;
}

double trajectory_bound(const CharTrajectory& traj) {
  double b = 0.0;
  for (size_t j = 0; j < traj.X.size(); ++j) {
    b = std::max(b, traj.X[j].lpNorm<Eigen::Infinity>());
    b = std::max(b, traj.P[j].lpNorm<Eigen::Infinity>());
    b = std::max(b, traj.Xdot[j].lpNorm<Eigen::Infinity>());
    b = std::max(b, std::abs(traj.U[j]));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Sampled curves

namespace {

int locate_segment(const std::vector<double>& times, double s) {
  // Rightmost segment whose closed interval contains s; zero-length segments
  // from duplicated corner nodes are skipped.
  int m = static_cast<int>(times.size()) - 1;
  auto it = std::upper_bound(times.begin(), times.end(), s);
  int j = static_cast<int>(it - times.begin()) - 1;
  j = std::clamp(j, 0, m - 1);
  while (j > 0 && times[j + 1] <= times[j]) --j;
  while (j < m - 1 && times[j + 1] <= times[j]) ++j;
  return j;
}

}  // namespace

Vec SampledCurve::eval(double s) const {
  int j = locate_segment(times, s);
  double h = times[j + 1] - times[j];
  if (h <= 0.0) return nodes[j];
  double r = (s - times[j]) / h;
  if (!has_derivs()) return (1.0 - r) * nodes[j] + r * nodes[j + 1];
  double r2 = r * r, r3 = r2 * r;
  double h00 = 2 * r3 - 3 * r2 + 1, h10 = r3 - 2 * r2 + r;
  double h01 = -2 * r3 + 3 * r2, h11 = r3 - r2;
  return h00 * nodes[j] + h * h10 * derivs[j] + h01 * nodes[j + 1] + h * h11 * derivs[j + 1];
}

Vec SampledCurve::eval_deriv(double s) const {
  int j = locate_segment(times, s);
  double h = times[j + 1] - times[j];
  if (h <= 0.0) return has_derivs() ? derivs[j] : Vec(Vec::Zero(nodes[j].size()));
  double r = (s - times[j]) / h;
  if (!has_derivs()) return (nodes[j + 1] - nodes[j]) / h;
  double d00 = (6 * r * r - 6 * r) / h, d10 = 3 * r * r - 4 * r + 1;
  double d01 = (-6 * r * r + 6 * r) / h, d11 = 3 * r * r - 2 * r;
  return d00 * nodes[j] + d10 * derivs[j] + d01 * nodes[j + 1] + d11 * derivs[j + 1];
}

SampledCurve SampledCurve::straight(double t0, double t1, const Vec& a, const Vec& b, int m) {
  require(m >= 2, "straight curve needs at least two nodes");
  require(t1 > t0, "straight curve needs t1 > t0");
  SampledCurve c;
  c.times.resize(m);
  c.nodes.resize(m);
  for (int j = 0; j < m; ++j) {
    double r = double(j) / (m - 1);
    c.times[j] = t0 + r * (t1 - t0);
    c.nodes[j] = (1.0 - r) * a + r * b;
  }
  return c;
}

CaratheodoryResult caratheodory_solve(const ProblemSpec& spec, const SampledCurve& curve,
                                      double u_init, int substeps) {
  require(curve.times.size() >= 2, "caratheodory_solve: curve needs at least two nodes");
  require(curve.times.front() >= 0.0, "caratheodory_solve: curve must start at t >= 0");
  require(substeps >= 1, "caratheodory_solve: substeps must be positive");
  for (size_t j = 0; j + 1 < curve.times.size(); ++j)
    require(curve.times[j + 1] >= curve.times[j] - 1e-15,
            "caratheodory_solve: curve grid must be nondecreasing");
  for (const Vec& node : curve.nodes)
    require(node.allFinite(), "caratheodory_solve: curve nodes must be finite");

  auto advance = [&](int seg, double u_from, int nsub) {
    double s0 = curve.times[seg], s1 = curve.times[seg + 1];
    double u = u_from;
    double h = (s1 - s0) / nsub;
    for (int k = 0; k < nsub; ++k) {
      double s = s0 + k * h;
      auto f = [&](double ss, double uu) {
        // Clamp evaluation inside the segment so corner nodes pick the
        // segment-local one-sided derivative.
        double sc = std::clamp(ss, s0, s1);
        // Piecewise evaluation restricted to this segment.
        double hseg = s1 - s0;
        double r = hseg > 0 ? (sc - s0) / hseg : 0.0;
        Vec xi, dxi;
        if (!curve.has_derivs()) {
          xi = (1.0 - r) * curve.nodes[seg] + r * curve.nodes[seg + 1];
          dxi = hseg > 0 ? Vec((curve.nodes[seg + 1] - curve.nodes[seg]) / hseg)
                         : Vec(Vec::Zero(xi.size()));
        } else {
          double r2 = r * r, r3 = r2 * r;
          xi = (2 * r3 - 3 * r2 + 1) * curve.nodes[seg] + hseg * (r3 - 2 * r2 + r) * curve.derivs[seg] +
               (-2 * r3 + 3 * r2) * curve.nodes[seg + 1] + hseg * (r3 - r2) * curve.derivs[seg + 1];
          dxi = ((6 * r2 - 6 * r) / hseg) * curve.nodes[seg] + (3 * r2 - 4 * r + 1) * curve.derivs[seg] +
                ((-6 * r2 + 6 * r) / hseg) * curve.nodes[seg + 1] + (3 * r2 - 2 * r) * curve.derivs[seg + 1];
        }
        return spec.L->value(ss, xi, dxi, uu);
      };
      double k1 = f(s, u);
      double k2 = f(s + 0.5 * h, u + 0.5 * h * k1);
      double k3 = f(s + 0.5 * h, u + 0.5 * h * k2);
      double k4 = f(s + h, u + h * k3);
      u += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return u;
  };

  CaratheodoryResult res;
  res.curve = curve;
  res.u.resize(curve.times.size());
  res.u[0] = u_init;
  std::vector<double> u_coarse(curve.times.size());
  u_coarse[0] = u_init;
  for (int seg = 0; seg + 1 < static_cast<int>(curve.times.size()); ++seg) {
    if (curve.times[seg + 1] <= curve.times[seg]) {
      res.u[seg + 1] = res.u[seg];
      u_coarse[seg + 1] = u_coarse[seg];
      continue;
    }
    res.u[seg + 1] = advance(seg, res.u[seg], 2 * substeps);
    u_coarse[seg + 1] = advance(seg, u_coarse[seg], substeps);
  }
  double span = std::max(curve.times.back() - curve.times.front(), 1e-12);
  double worst = 0.0;
  for (size_t j = 0; j < res.u.size(); ++j) worst = std::max(worst, std::abs(res.u[j] - u_coarse[j]));
  res.defect = worst / span;
  return res;
}

// ---------------------------------------------------------------------------
// Herglotz diagnostics

namespace {

// First-derivative weights at s_star from the Lagrange polynomial through the
// given nodes; handles nonuniform spacing (trailing partial steps).
std::vector<double> fd_weights(const std::vector<double>& s, double s_star) {
  int m = static_cast<int>(s.size());
  std::vector<double> w(m, 0.0);
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int mm = 0; mm < m; ++mm) {
      if (mm == i) continue;
      double prod = 1.0 / (s[i] - s[mm]);
      for (int k = 0; k < m; ++k) {
        if (k == i || k == mm) continue;
        prod *= (s_star - s[k]) / (s[i] - s[k]);
      }
      acc += prod;
    }
    w[i] = acc;
  }
  return w;
}

}  // namespace

HerglotzReport herglotz_residual(const ProblemSpec& spec, const CharTrajectory& traj) {
  int m = static_cast<int>(traj.times.size());
  require(m >= 3, "herglotz_residual: trajectory too short");
  int n = spec.dim();
  HerglotzReport rep;

  // L_v sampled at the model velocity H_p, for the equation residual.
  std::vector<Vec> Lv(m), Lx(m);
  std::vector<double> Lu(m);
  for (int j = 0; j < m; ++j) {
    LagrangianJet l = spec.L->jet(traj.times[j], traj.X[j], traj.Xdot[j], traj.U[j], 1);
    Lv[j] = l.Lv;
    Lx[j] = l.Lx;
    Lu[j] = l.Lu;
  }
  int half = std::min(2, (m - 1) / 2);
  int width = 2 * half + 1;
  for (int j = half; j < m - half; ++j) {
    std::vector<double> s(width);
    for (int k = 0; k < width; ++k) s[k] = traj.times[j - half + k];
    auto w = fd_weights(s, traj.times[j]);
    Vec dLv = Vec::Zero(n);
    for (int k = 0; k < width; ++k) dLv += w[k] * Lv[j - half + k];
    Vec rhs = Lx[j] + Lu[j] * Lv[j];
    rep.equation_residual = std::max(rep.equation_residual, (dLv - rhs).lpNorm<Eigen::Infinity>());
  }

  // Momentum consistency against the curve's own finite-differenced velocity.
  for (int j = half; j < m - half; ++j) {
    std::vector<double> s(width);
    for (int k = 0; k < width; ++k) s[k] = traj.times[j - half + k];
    auto w = fd_weights(s, traj.times[j]);
    Vec xdot = Vec::Zero(n);
    for (int k = 0; k < width; ++k) xdot += w[k] * traj.X[j - half + k];
    LagrangianJet l = spec.L->jet(traj.times[j], traj.X[j], xdot, traj.U[j], 1);
    rep.momentum_residual =
        std::max(rep.momentum_residual, (traj.P[j] - l.Lv).lpNorm<Eigen::Infinity>());
  }
  return rep;
}

double variational_fd_check(const ProblemSpec& spec, const Vec& z, double t_end,
                            const std::vector<Vec>& directions, double bump,
                            const StepPolicy& policy) {
  require(bump > 0.0, "variational_fd_check: bump must be positive");
  VarTrajectory var = integrate_variational(spec, z, t_end, policy);
  double worst = 0.0;
  for (const Vec& d : directions) {
    CharTrajectory plus = integrate_lie(spec, z + bump * d, t_end, policy);
    CharTrajectory minus = integrate_lie(spec, z - bump * d, t_end, policy);
    Vec dX = (plus.X.back() - minus.X.back()) / (2 * bump);
    Vec dP = (plus.P.back() - minus.P.back()) / (2 * bump);
    double dU = (plus.U.back() - minus.U.back()) / (2 * bump);
    worst = std::max(worst, (var.Xz.back() * d - dX).lpNorm<Eigen::Infinity>());
    worst = std::max(worst, (var.Pz.back() * d - dP).lpNorm<Eigen::Infinity>());
    worst = std::max(worst, std::abs(var.Uz.back().dot(d) - dU));
  }
  return worst;
}

}  // namespace hjc
