#include "hjc/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <thread>

namespace hjc {

namespace {

struct GridGeometry {
  Box box;
  std::vector<int> shape;
  Vec dx;
  Eigen::Index total = 0;

  int dim() const { return static_cast<int>(shape.size()); }
  Eigen::Index flat(const std::vector<int>& idx) const {
    Eigen::Index f = idx[0];
    if (dim() == 2) f += static_cast<Eigen::Index>(shape[0]) * idx[1];
    return f;
  }
  void unflat(Eigen::Index f, std::vector<int>& idx) const {
    if (dim() == 1) {
      idx[0] = static_cast<int>(f);
    } else {
      idx[0] = static_cast<int>(f % shape[0]);
      idx[1] = static_cast<int>(f / shape[0]);
    }
  }
  Vec point(const std::vector<int>& idx) const {
    Vec x(dim());
    for (int a = 0; a < dim(); ++a) x[a] = box.lo[a] + idx[a] * dx[a];
    return x;
  }
};

GridGeometry make_geometry(const Box& box, const Vec& dx_req) {
  GridGeometry g;
  g.box = box;
  const int n = box.dim();
  require(n == 1 || n == 2, "lf_solve: only one- and two-dimensional boxes are supported");
  require(dx_req.size() == n, "lf_solve: spacing dimension does not match the box");
  g.shape.resize(n);
  g.dx = Vec(n);
  g.total = 1;
  for (int a = 0; a < n; ++a) {
    require(dx_req[a] > 0.0, "lf_solve: grid spacing must be positive");
    const double w = box.width(a);
    require(w > 0.0, "lf_solve: box must have positive width");
    int cells = static_cast<int>(std::lround(w / dx_req[a]));
    cells = std::max(cells, 2);
    g.shape[a] = cells + 1;
    g.dx[a] = w / cells;
    g.total *= g.shape[a];
  }
  return g;
}

// neighbor value with linear extrapolation past the boundary, so edge nodes
// see their one-sided slope and a vanishing second difference
double neighbor(const Eigen::VectorXd& u, const GridGeometry& g,
                const std::vector<int>& idx, int axis, int dir) {
  std::vector<int> j = idx;
  j[axis] += dir;
  if (j[axis] < 0 || j[axis] >= g.shape[axis]) {
    std::vector<int> inner = idx;
    inner[axis] -= dir;
    return 2.0 * u[g.flat(idx)] - u[g.flat(inner)];
  }
  return u[g.flat(j)];
}

void for_chunks(Eigen::Index total, int threads,
                const std::function<void(Eigen::Index, Eigen::Index, int)>& fn) {
  threads = std::max(1, threads);
  if (threads == 1 || total < 256) {
    fn(0, total, 0);
    return;
  }
  const Eigen::Index chunk = (total + threads - 1) / threads;
  std::vector<std::thread> pool;
  for (int c = 0; c < threads; ++c) {
    const Eigen::Index b = c * chunk;
    const Eigen::Index e = std::min(total, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e, c] { fn(b, e, c); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

Eigen::Index GridSolution::nodes() const {
  Eigen::Index n = 1;
  for (int s : shape) n *= s;
  return n;
}

Vec GridSolution::node(const std::vector<int>& idx) const {
  Vec x(dim());
  for (int a = 0; a < dim(); ++a) x[a] = box.lo[a] + idx[a] * dx[a];
  return x;
}

bool GridSolution::contains(double t, const Vec& x) const {
  if (times.empty() || x.size() != dim()) return false;
  const double eps_t = 1e-12 * (1.0 + std::abs(times.back()));
  if (t < times.front() - eps_t || t > times.back() + eps_t) return false;
  for (int a = 0; a < dim(); ++a) {
    const double eps = 1e-12 * (1.0 + box.width(a));
    if (x[a] < box.lo[a] - eps || x[a] > box.hi[a] + eps) return false;
  }
  return true;
}

int GridSolution::nearest_slice(double t) const {
  require(!times.empty(), "GridSolution: no slices");
  auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0;
  if (it == times.end()) return static_cast<int>(times.size()) - 1;
  const int hi = static_cast<int>(it - times.begin());
  return (t - times[hi - 1] <= times[hi] - t) ? hi - 1 : hi;
}

double GridSolution::interpolate(double t, const Vec& x) const {
  require(contains(t, x), "GridSolution::interpolate: point outside the covered range");
  auto it = std::upper_bound(times.begin(), times.end(), t);
  int m1 = static_cast<int>(it - times.begin());
  m1 = std::min(std::max(m1, 1), static_cast<int>(times.size()) - 1);
  const int m0 = m1 - 1;
  const double span = times[m1] - times[m0];
  const double wt = span > 0.0 ? std::min(1.0, std::max(0.0, (t - times[m0]) / span)) : 0.0;

  // per-axis cell and weight
  int cell[2] = {0, 0};
  double w[2] = {0.0, 0.0};
  for (int a = 0; a < dim(); ++a) {
    double s = (x[a] - box.lo[a]) / dx[a];
    int c = static_cast<int>(std::floor(s));
    c = std::min(std::max(c, 0), shape[a] - 2);
    cell[a] = c;
    w[a] = std::min(1.0, std::max(0.0, s - c));
  }

  auto space_interp = [&](const Eigen::VectorXd& u) {
    if (dim() == 1) {
      return (1.0 - w[0]) * u[cell[0]] + w[0] * u[cell[0] + 1];
    }
    const Eigen::Index nx = shape[0];
    const Eigen::Index f = cell[0] + nx * cell[1];
    const double u00 = u[f], u10 = u[f + 1];
    const double u01 = u[f + nx], u11 = u[f + nx + 1];
    return (1.0 - w[1]) * ((1.0 - w[0]) * u00 + w[0] * u10) +
           w[1] * ((1.0 - w[0]) * u01 + w[0] * u11);
  };

  return (1.0 - wt) * space_interp(slices[m0]) + wt * space_interp(slices[m1]);
}

double suggested_time_step(const ProblemSpec& spec, const Box& box, const Vec& dx,
                           double cfl, double safety) {
  GridGeometry g = make_geometry(box, dx);
  const int n = g.dim();
  std::vector<int> idx(n, 0);
  Vec nu = Vec::Zero(n);
  double humax = 0.0;
  for (Eigen::Index f = 0; f < g.total; ++f) {
    g.unflat(f, idx);
    const Vec x = g.point(idx);
    const Vec p = spec.u0->gradient(x);
    const double u = spec.u0->value(x);
    HamiltonianJet jet = spec.H->jet(0.0, x, p, u, 1);
    for (int a = 0; a < n; ++a) nu[a] = std::max(nu[a], std::abs(jet.Hp[a]));
    humax = std::max(humax, std::abs(jet.Hu));
  }
  double rate = humax;
  for (int a = 0; a < n; ++a) rate += nu[a] / g.dx[a];
  require(rate > 0.0, "suggested_time_step: the equation has no dynamics on this grid");
  return safety * cfl / rate;
}

GridSolution lf_solve(const ProblemSpec& spec, const Box& box, const Vec& dx,
                      double dt, double horizon, const LfOptions& opts) {
  require(spec.H != nullptr && spec.u0 != nullptr, "lf_solve: incomplete problem");
  require(dt > 0.0, "lf_solve: time step must be positive");
  require(horizon > 0.0, "lf_solve: horizon must be positive");
  GridGeometry g = make_geometry(box, dx);
  require(g.dim() == spec.dim(), "lf_solve: box dimension does not match the problem");
  const int n = g.dim();

  GridSolution sol;
  sol.box = g.box;
  sol.shape = g.shape;
  sol.dx = g.dx;
  sol.dt = dt;
  sol.horizon = horizon;
  sol.cfl = opts.cfl;
  sol.viscosity = Vec::Zero(n);

  // initial slice sampled exactly
  Eigen::VectorXd u(g.total);
  {
    std::vector<int> idx(n, 0);
    for (Eigen::Index f = 0; f < g.total; ++f) {
      g.unflat(f, idx);
      u[f] = spec.u0->value(g.point(idx));
    }
  }
  sol.times.push_back(0.0);
  sol.slices.push_back(u);

  const long n_steps = static_cast<long>(std::ceil(horizon / dt - 1e-9));
  require(n_steps <= opts.max_steps, "lf_solve: step budget exceeded; enlarge dt or max_steps");

  const int threads = std::max(1, opts.threads);
  Eigen::VectorXd hval(g.total);
  Eigen::MatrixXd d2(g.total, n);  // second difference quotients per axis
  Eigen::VectorXd next(g.total);
  std::vector<Vec> nu_part(threads, Vec::Zero(n));
  std::vector<double> hu_part(threads, 0.0);

  double t = 0.0;
  for (long m = 0; m < n_steps; ++m) {
    const double step = std::min(dt, horizon - t);

    // pass 1: jets on the frozen slice, slope bounds for the viscosity
    for (auto& v : nu_part) v.setZero();
    std::fill(hu_part.begin(), hu_part.end(), 0.0);
    for_chunks(g.total, threads, [&](Eigen::Index b, Eigen::Index e, int c) {
      std::vector<int> idx(n, 0);
      Vec p(n);
      for (Eigen::Index f = b; f < e; ++f) {
        g.unflat(f, idx);
        const Vec x = g.point(idx);
        for (int a = 0; a < n; ++a) {
          const double up = neighbor(u, g, idx, a, +1);
          const double um = neighbor(u, g, idx, a, -1);
          p[a] = (up - um) / (2.0 * g.dx[a]);
          d2(f, a) = (up - 2.0 * u[f] + um) / (g.dx[a] * g.dx[a]);
        }
        HamiltonianJet jet = spec.H->jet(t, x, p, u[f], 1);
        hval[f] = jet.value;
        for (int a = 0; a < n; ++a)
          nu_part[c][a] = std::max(nu_part[c][a], std::abs(jet.Hp[a]));
        hu_part[c] = std::max(hu_part[c], std::abs(jet.Hu));
      }
    });
    Vec nu = Vec::Zero(n);
    double humax = 0.0;
    for (int c = 0; c < threads; ++c) {
      nu = nu.cwiseMax(nu_part[c]);
      humax = std::max(humax, hu_part[c]);
    }

    double rate = humax;
    for (int a = 0; a < n; ++a) rate += nu[a] / g.dx[a];
    if (step * rate > opts.cfl) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "stability bound violated at t=%.6g: dt*rate=%.3g > %.3g",
                    t, step * rate, opts.cfl);
      if (m == 0) throw PreconditionError(std::string("lf_solve: ") + buf);
      sol.complete = false;
      sol.diagnostic = buf;
      break;
    }
    sol.viscosity = sol.viscosity.cwiseMax(nu);

    // pass 2: explicit update with per-axis viscosity nu_a * dx_a / 2
    for_chunks(g.total, threads, [&](Eigen::Index b, Eigen::Index e, int) {
      for (Eigen::Index f = b; f < e; ++f) {
        double visc = 0.0;
        for (int a = 0; a < n; ++a) visc += 0.5 * nu[a] * g.dx[a] * d2(f, a);
        next[f] = u[f] - step * (hval[f] - visc);
      }
    });

    u.swap(next);
    t += step;
    sol.times.push_back(t);
    sol.slices.push_back(u);
    if (!u.allFinite()) {
      sol.complete = false;
      sol.diagnostic = "solution left the finite range";
      break;
    }
  }

  if (sol.complete && std::abs(sol.times.back() - horizon) > 1e-9 * (1.0 + horizon)) {
    sol.complete = false;
    if (sol.diagnostic.empty()) sol.diagnostic = "run ended before the horizon";
  }
  return sol;
}

GridSolution lf_solve(const ProblemSpec& spec, const Box& box, double dx,
                      double dt, double horizon, const LfOptions& opts) {
  return lf_solve(spec, box, Vec::Constant(box.dim(), dx), dt, horizon, opts);
}

std::vector<std::vector<FlaggedCell>> detect_singular_grid(const GridSolution& sol,
                                                           double jump_tol) {
  require(!sol.slices.empty(), "detect_singular_grid: empty solution");
  require(jump_tol > 0.0, "detect_singular_grid: jump tolerance must be positive");
  GridGeometry g;
  g.box = sol.box;
  g.shape = sol.shape;
  g.dx = sol.dx;
  g.total = sol.nodes();
  const int n = g.dim();

  std::vector<std::vector<FlaggedCell>> out(sol.slices.size());
  std::vector<int> idx(n, 0);
  for (size_t m = 0; m < sol.slices.size(); ++m) {
    const Eigen::VectorXd& u = sol.slices[m];
    for (Eigen::Index f = 0; f < g.total; ++f) {
      g.unflat(f, idx);
      double jump = 0.0;
      for (int a = 0; a < n; ++a) {
        if (idx[a] == 0 || idx[a] == g.shape[a] - 1) continue;
        std::vector<int> j = idx;
        j[a] += 1;
        const double up = u[g.flat(j)];
        j[a] -= 2;
        const double um = u[g.flat(j)];
        jump = std::max(jump, std::abs(up - 2.0 * u[f] + um) / g.dx[a]);
      }
      if (jump > jump_tol) out[m].push_back({idx, g.point(idx), jump});
    }
  }
  return out;
}

CellDistanceStats kink_distance(const GridSolution& sol,
                                const std::vector<std::vector<FlaggedCell>>& flags,
                                const std::vector<double>& ts,
                                const std::vector<Vec>& xs) {
  require(ts.size() == xs.size(), "kink_distance: mismatched sample lists");
  CellDistanceStats st;
  double sum = 0.0;
  for (size_t i = 0; i < ts.size(); ++i) {
    const int m = sol.nearest_slice(ts[i]);
    if (m >= static_cast<int>(flags.size()) || flags[m].empty()) {
      ++st.n_unflagged_times;
      st.max_cells = std::numeric_limits<double>::infinity();
      continue;
    }
    double best = std::numeric_limits<double>::infinity();
    for (const FlaggedCell& c : flags[m]) {
      double d = 0.0;
      for (int a = 0; a < sol.dim(); ++a)
        d = std::max(d, std::abs(xs[i][a] - c.x[a]) / sol.dx[a]);
      best = std::min(best, d);
    }
    st.max_cells = std::max(st.max_cells, best);
    sum += best;
    ++st.n;
  }
  if (st.n > 0) st.mean_cells = sum / st.n;
  return st;
}

CompareStats compare(const GridSolution& sol, const std::vector<double>& ts,
                     const std::vector<Vec>& xs, const std::vector<double>& values) {
  require(ts.size() == xs.size() && ts.size() == values.size(),
          "compare: mismatched point and value lists");
  CompareStats st;
  st.per_point.assign(ts.size(), std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  for (size_t i = 0; i < ts.size(); ++i) {
    if (!sol.contains(ts[i], xs[i])) {
      st.excluded.push_back(static_cast<int>(i));
      continue;
    }
    const double err = std::abs(sol.interpolate(ts[i], xs[i]) - values[i]);
    st.per_point[i] = err;
    st.max_err = std::max(st.max_err, err);
    sum += err;
    ++st.n_included;
  }
  if (st.n_included > 0) st.mean_err = sum / st.n_included;
  return st;
}

}  // namespace hjc
