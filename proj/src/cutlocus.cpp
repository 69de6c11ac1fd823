#include "hjc/cutlocus.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace hjc {

const char* to_string(PointClass c) {
  switch (c) {
    case PointClass::Regular: return "regular";
    case PointClass::IrregularOnly: return "irregular";
    case PointClass::ConjugateOnly: return "conjugate";
    case PointClass::IrregularAndConjugate: return "irregular+conjugate";
    case PointClass::Unknown: return "unknown";
  }
  return "?";
}

Classification classify_from_set(const MinimizerSet& set, double cluster_radius, double tol_conj) {
  Classification out;
  out.set = set;
  out.cluster_radius = cluster_radius;
  out.det_margin = std::numeric_limits<double>::infinity();
  std::vector<const MinimizerEntry*> degen;
  for (const auto& e : set.entries) {
    if (!e.minimizing) continue;
    out.det_margin = std::min(out.det_margin, std::abs(e.det_Xz) - tol_conj);
    if (std::abs(e.det_Xz) <= tol_conj)
      degen.push_back(&e);
    else
      out.regular_branches.push_back(e);
  }
  // Single-linkage grouping of the degenerate minimizers by seed distance.
  int m = static_cast<int>(degen.size());
  std::vector<int> label(m, -1);
  int n_clusters = 0;
  for (int i = 0; i < m; ++i) {
    if (label[i] >= 0) continue;
    label[i] = n_clusters;
    std::vector<int> stack{i};
    while (!stack.empty()) {
      int a = stack.back();
      stack.pop_back();
      for (int b = 0; b < m; ++b) {
        if (label[b] >= 0) continue;
        if ((degen[a]->seed - degen[b]->seed).norm() <= cluster_radius) {
          label[b] = n_clusters;
          stack.push_back(b);
        }
      }
    }
    ++n_clusters;
  }
  for (int c = 0; c < n_clusters; ++c) {
    ConjugateCluster cl;
    cl.min_abs_det = std::numeric_limits<double>::infinity();
    Vec sum;
    for (int i = 0; i < m; ++i) {
      if (label[i] != c) continue;
      if (cl.members == 0)
        sum = degen[i]->seed;
      else
        sum += degen[i]->seed;
      ++cl.members;
      cl.min_abs_det = std::min(cl.min_abs_det, std::abs(degen[i]->det_Xz));
    }
    cl.centroid = sum / cl.members;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m; ++i) {
      if (label[i] != c) continue;
      double d = (degen[i]->seed - cl.centroid).norm();
      if (d < best) {
        best = d;
        cl.P = degen[i]->P;
      }
    }
    out.clusters.push_back(std::move(cl));
  }

  out.k = static_cast<int>(out.regular_branches.size() + out.clusters.size());
  bool focal = !out.clusters.empty();
  if (out.k <= 1)
    out.type = focal ? PointClass::ConjugateOnly : PointClass::Regular;
  else
    out.type = focal ? PointClass::IrregularAndConjugate : PointClass::IrregularOnly;
  return out;
}

Classification classify_point(const ProblemSpec& spec, double t, const Vec& x,
                              const ClassifyOptions& opts) {
  require(t > 0.0, "classify_point: time must be positive");
  MinimizerSet set = shoot_minimizers(spec, t, x, opts.shoot);
  if (set.entries.empty()) {
    Classification out;
    out.type = PointClass::Unknown;
    out.set = std::move(set);
    out.diagnostic = out.set.diagnostic.empty() ? "shooting found no characteristics"
                                                : out.set.diagnostic;
    return out;
  }
  double spacing = opts.shoot.grid_per_dim > 1
                       ? set.box.max_width() / (opts.shoot.grid_per_dim - 1)
                       : set.box.max_width();
  return classify_from_set(set, opts.cluster_frac * spacing, opts.tol_conj);
}

std::vector<LocalBranch> local_branches(const ProblemSpec& spec, double t, const Vec& x,
                                        const Classification& cls) {
  require(cls.type == PointClass::Regular || cls.type == PointClass::IrregularOnly,
          "local_branches: smooth sheets require a classification without focal families");
  std::vector<LocalBranch> out;
  out.reserve(cls.regular_branches.size());
  int idx = 0;
  for (const auto& e : cls.regular_branches) {
    LocalBranch b;
    b.index = idx++;
    b.seed = e.seed;
    b.v = e.U;
    b.p = e.P;
    b.det_Xz = e.det_Xz;
    b.q = -spec.H->jet(t, x, e.P, e.U, 0).value;
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double det_at(const ProblemSpec& spec, const Vec& z, double s, const StepPolicy& ode) {
  return integrate_variational(spec, z, s, ode).Xz.back().determinant();
}

}  // namespace

ConjugateTimeResult conjugate_time(const ProblemSpec& spec, const Vec& z, double horizon,
                                   const ConjugateScanOptions& opts) {
  require(horizon > 0.0, "conjugate_time: horizon must be positive");
  ConjugateTimeResult out;
  VarTrajectory scan = integrate_variational(spec, z, horizon, opts.ode);
  int m = static_cast<int>(scan.base.times.size());
  std::vector<double> dets(m);
  for (int i = 0; i < m; ++i) dets[i] = scan.Xz[i].determinant();
  out.min_abs_det = std::abs(dets[0]);
  for (int i = 1; i < m; ++i) out.min_abs_det = std::min(out.min_abs_det, std::abs(dets[i]));

  double t_star = -1.0;
  int crossing = -1;
  for (int i = 1; i < m; ++i) {
    if (dets[i - 1] > 0.0 && dets[i] <= 0.0) {
      crossing = i;
      break;
    }
  }
  if (crossing >= 0) {
    double lo = scan.base.times[crossing - 1], hi = scan.base.times[crossing];
    if (dets[crossing] == 0.0) {
      t_star = hi;
    } else {
      for (int it = 0; it < 80 && hi - lo > opts.tol_time; ++it) {
        double mid = 0.5 * (lo + hi);
        (det_at(spec, z, mid, opts.ode) > 0.0 ? lo : hi) = mid;
      }
      t_star = 0.5 * (lo + hi);
    }
  } else {
    // No sign change: look for a tangential dip of |det| below the threshold.
    int best = 0;
    for (int i = 1; i < m; ++i)
      if (std::abs(dets[i]) < std::abs(dets[best])) best = i;
    if (std::abs(dets[best]) <= opts.tol_conj && best > 0) {
      double lo = scan.base.times[std::max(0, best - 1)];
      double hi = scan.base.times[std::min(m - 1, best + 1)];
      const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
      double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
      double fa = std::abs(det_at(spec, z, a, opts.ode));
      double fb = std::abs(det_at(spec, z, b, opts.ode));
      while (hi - lo > opts.tol_time) {
        if (fa < fb) {
          hi = b;
          b = a;
          fb = fa;
          a = hi - phi * (hi - lo);
          fa = std::abs(det_at(spec, z, a, opts.ode));
        } else {
          lo = a;
          a = b;
          fa = fb;
          b = lo + phi * (hi - lo);
          fb = std::abs(det_at(spec, z, b, opts.ode));
        }
      }
      t_star = 0.5 * (lo + hi);
      out.diagnostic = "tangential zero: det dips without changing sign";
    } else {
      out.diagnostic = "no conjugate point before the horizon";
      return out;
    }
  }

  out.found = true;
  out.t_star = t_star;
  VarTrajectory at = integrate_variational(spec, z, t_star, opts.ode);
  const Mat& Xz = at.Xz.back();
  int n = static_cast<int>(Xz.rows());
  Eigen::JacobiSVD<Mat> svd(Xz, Eigen::ComputeFullV);
  Vec theta = svd.matrixV().col(n - 1);
  for (int i = 0; i < n; ++i) {
    if (std::abs(theta[i]) > 1e-12) {
      if (theta[i] < 0) theta = -theta;
      break;
    }
  }
  out.kernel = theta;
  out.kernel_sigma = svd.singularValues()(n - 1);
  out.next_sigma =
      n >= 2 ? svd.singularValues()(n - 2) : std::numeric_limits<double>::infinity();
  out.Uz_theta = std::abs(at.Uz.back().dot(theta));
  out.Pz_theta = (at.Pz.back() * theta).norm();
  double h = 1e-5 * std::max(1.0, t_star);
  out.det_slope =
      (det_at(spec, z, t_star + h, opts.ode) - det_at(spec, z, std::max(0.0, t_star - h), opts.ode)) /
      (2.0 * h);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Value and derivative of a curve inside one segment, using only that
// segment's endpoint data (one-sided at corners by construction).
void segment_eval(const SampledCurve& c, int j, double s, Vec* val, Vec* der) {
  double t0 = c.times[j], t1 = c.times[j + 1];
  double h = t1 - t0;
  if (h <= 0.0) {
    *val = c.nodes[j];
    *der = c.has_derivs() ? c.derivs[j] : Vec(Vec::Zero(c.nodes[j].size()));
    return;
  }
  double r = (s - t0) / h;
  if (!c.has_derivs()) {
    *val = (1.0 - r) * c.nodes[j] + r * c.nodes[j + 1];
    *der = (c.nodes[j + 1] - c.nodes[j]) / h;
    return;
  }
  double r2 = r * r, r3 = r2 * r;
  *val = (2 * r3 - 3 * r2 + 1) * c.nodes[j] + h * (r3 - 2 * r2 + r) * c.derivs[j] +
         (-2 * r3 + 3 * r2) * c.nodes[j + 1] + h * (r3 - r2) * c.derivs[j + 1];
  *der = ((6 * r2 - 6 * r) / h) * c.nodes[j] + (3 * r2 - 4 * r + 1) * c.derivs[j] +
         ((-6 * r2 + 6 * r) / h) * c.nodes[j + 1] + (3 * r2 - 2 * r) * c.derivs[j + 1];
}

// Hermite interpolants of the state, momentum, and value along one
// characteristic, for evaluating running-cost jets between the stored nodes.
struct BaseInterp {
  SampledCurve Xc, Pc, Uc;

  explicit BaseInterp(const ProblemSpec& spec, const CharTrajectory& base) {
    int m = static_cast<int>(base.times.size());
    Xc = SampledCurve{base.times, base.X, base.Xdot};
    Pc.times = base.times;
    Pc.nodes = base.P;
    Pc.derivs.resize(m);
    Uc.times = base.times;
    Uc.nodes.resize(m);
    Uc.derivs.resize(m);
    for (int i = 0; i < m; ++i) {
      HamiltonianJet j = spec.H->jet(base.times[i], base.X[i], base.P[i], base.U[i], 1);
      Pc.derivs[i] = -j.Hx - j.Hu * base.P[i];
      Uc.nodes[i] = Vec::Constant(1, base.U[i]);
      Uc.derivs[i] = Vec::Constant(1, base.P[i].dot(j.Hp) - j.value);
    }
  }

  LagrangianJet jet(const ProblemSpec& spec, double s, int order) const {
    Vec X = Xc.eval(s);
    Vec P = Pc.eval(s);
    double U = Uc.eval(s)[0];
    Vec v = spec.H->jet(s, X, P, U, 1).Hp;
    return spec.L->jet(s, X, v, U, order);
  }
};

}  // namespace

SecondVariationReport accessory_second_variation(const ProblemSpec& spec,
                                                 const CharTrajectory& base,
                                                 const SampledCurve& alpha,
                                                 const AccessoryOptions& opts) {
  require(alpha.times.size() >= 2, "accessory_second_variation: direction needs two nodes");
  require(base.times.size() >= 2, "accessory_second_variation: trajectory needs two nodes");
  require(std::abs(alpha.times.front() - base.times.front()) <= 1e-9,
          "accessory_second_variation: direction must start with the trajectory");
  require(std::abs(alpha.times.back() - base.times.back()) <= 1e-9,
          "accessory_second_variation: direction must span the trajectory");
  require(spec.L != nullptr, "accessory_second_variation: running cost required");

  BaseInterp interp(spec, base);
  const double y0 =
      alpha.nodes.front().dot(spec.u0->hessian(base.X.front()) * alpha.nodes.front());

  // exp(int_0^t L_u)-weighted trapezoid of the congealed quadratic form
  //   Q = a'(Lxx + 2 Lxu Lv' + Lv Luu Lv') a + 2 a'(Lvx' + Lv Lvu') ad + ad' Lvv ad,
  // accumulated in divided form A = int exp(-c) Q with c = int_0^s L_u so a
  // single forward pass suffices.
  Vec av, ad;
  auto quadrature = [&](int mult, double* weight_total) {
    double c = 0.0, A = 0.0;
    for (int seg = 0; seg + 1 < static_cast<int>(alpha.times.size()); ++seg) {
      double s0 = alpha.times[seg], s1 = alpha.times[seg + 1];
      if (s1 <= s0) continue;
      int steps = opts.substeps * mult;
      double h = (s1 - s0) / steps;
      double lu_prev = 0.0, q_prev = 0.0, e_prev = 0.0;
      for (int j = 0; j <= steps; ++j) {
        double s = s0 + j * h;
        segment_eval(alpha, seg, s, &av, &ad);
        LagrangianJet l = interp.jet(spec, s, 2);
        double wa = l.Lv.dot(av);
        double q = av.dot(l.Lxx * av) + 2.0 * av.dot(l.Lvx.transpose() * ad) +
                   ad.dot(l.Lvv * ad) + 2.0 * (l.Lxu.dot(av) + l.Lvu.dot(ad)) * wa +
                   l.Luu * wa * wa;
        if (j > 0) c += 0.5 * h * (lu_prev + l.Lu);
        double e = std::exp(-c);
        if (j > 0) A += 0.5 * h * (e_prev * q_prev + e * q);
        lu_prev = l.Lu;
        q_prev = q;
        e_prev = e;
      }
    }
    *weight_total = std::exp(c);
    return *weight_total * (y0 + A);
  };

  SecondVariationReport out;
  double w_coarse = 0.0, w_fine = 0.0;
  double coarse = quadrature(1, &w_coarse);
  double fine = quadrature(2, &w_fine);
  out.jstar = fine + (fine - coarse) / 3.0;
  out.quadrature_error = std::abs(fine - coarse) / 3.0;
  out.weight_total = w_fine;
  return out;
}

AccessoryResult second_variation_flow(const ProblemSpec& spec, const Vec& z, double horizon,
                                      const SampledCurve& alpha, const AccessoryOptions& opts) {
  require(horizon > 0.0, "second_variation_flow: horizon must be positive");
  require(alpha.times.size() >= 2, "second_variation_flow: direction needs two nodes");
  require(std::abs(alpha.times.front()) <= 1e-12,
          "second_variation_flow: direction must start at time 0");
  require(std::abs(alpha.times.back() - horizon) <= 1e-9,
          "second_variation_flow: direction must span the horizon");
  require(spec.L != nullptr, "second_variation_flow: running cost required");

  CharTrajectory base = integrate_lie(spec, z, horizon, opts.ode);
  BaseInterp interp(spec, base);

  // First/second variation of the cost state along xi = X + e*alpha with the
  // start coupled to the datum; (w,y) = (du/de, d^2u/de^2) at e = 0.
  const Vec x0 = base.X.front();
  double w = spec.u0->gradient(x0).dot(alpha.nodes.front());
  double y = alpha.nodes.front().dot(spec.u0->hessian(x0) * alpha.nodes.front());

  Vec av, ad;
  auto rhs = [&](int seg, double s, double w_in, double y_in, double* wd, double* yd) {
    segment_eval(alpha, seg, s, &av, &ad);
    LagrangianJet l = interp.jet(spec, s, 2);
    *wd = l.Lx.dot(av) + l.Lv.dot(ad) + l.Lu * w_in;
    *yd = av.dot(l.Lxx * av) + 2.0 * av.dot(l.Lvx.transpose() * ad) + ad.dot(l.Lvv * ad) +
          2.0 * (l.Lxu.dot(av) + l.Lvu.dot(ad)) * w_in + l.Luu * w_in * w_in + l.Lu * y_in;
  };

  for (int seg = 0; seg + 1 < static_cast<int>(alpha.times.size()); ++seg) {
    double s0 = alpha.times[seg], s1 = alpha.times[seg + 1];
    if (s1 <= s0) continue;
    double h = (s1 - s0) / opts.substeps;
    for (int k = 0; k < opts.substeps; ++k) {
      double s = s0 + k * h;
      double w1, y1, w2, y2, w3, y3, w4, y4;
      rhs(seg, s, w, y, &w1, &y1);
      rhs(seg, s + 0.5 * h, w + 0.5 * h * w1, y + 0.5 * h * y1, &w2, &y2);
      rhs(seg, s + 0.5 * h, w + 0.5 * h * w2, y + 0.5 * h * y2, &w3, &y3);
      rhs(seg, s + h, w + h * w3, y + h * y3, &w4, &y4);
      w += (h / 6.0) * (w1 + 2 * w2 + 2 * w3 + w4);
      y += (h / 6.0) * (y1 + 2 * y2 + 2 * y3 + y4);
    }
  }
  return AccessoryResult{y, w};
}

// ---------------------------------------------------------------------------

namespace {

int multiplicity_at(const SampledCurve& c, double t) {
  int count = 0;
  for (size_t i = 0; i < c.times.size(); ++i) {
    if (c.times[i] == t) ++count;
    if (c.times[i] > t) break;
  }
  if (count == 0) return 0;
  if (count >= 2) return 2;
  // A piecewise-linear curve may break its slope at any interior node.
  bool interior = t > c.times.front() && t < c.times.back();
  return (!c.has_derivs() && interior) ? 2 : 1;
}

// One-sided value/derivative at t; side < 0 takes the limit from the left.
void eval_side(const SampledCurve& c, double t, int side, Vec* val, Vec* der) {
  int m = static_cast<int>(c.times.size());
  int lo = 0;
  while (lo < m && c.times[lo] < t) ++lo;
  if (lo < m && c.times[lo] == t) {
    int hi = lo;
    while (hi + 1 < m && c.times[hi + 1] == t) ++hi;
    if (side < 0) {
      if (lo == 0) {
        segment_eval(c, 0, t, val, der);
      } else {
        segment_eval(c, lo - 1, t, val, der);
      }
    } else {
      if (hi == m - 1) {
        segment_eval(c, m - 2, t, val, der);
      } else {
        segment_eval(c, hi, t, val, der);
      }
    }
    return;
  }
  int seg = std::max(0, std::min(m - 2, lo - 1));
  segment_eval(c, seg, t, val, der);
}

// Pointwise A + cb*B on the merged grid; slope breaks of either input become
// duplicated (corner) nodes so the combination is represented exactly.
SampledCurve lincomb(const SampledCurve& A, double cb, const SampledCurve& B) {
  std::vector<double> grid;
  grid.reserve(A.times.size() + B.times.size());
  grid.insert(grid.end(), A.times.begin(), A.times.end());
  grid.insert(grid.end(), B.times.begin(), B.times.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  SampledCurve out;
  for (double t : grid) {
    int mult = std::max(multiplicity_at(A, t), multiplicity_at(B, t));
    for (int occ = 0; occ < std::max(1, mult); ++occ) {
      int side = mult == 2 ? (occ == 0 ? -1 : +1) : +1;
      Vec va, da, vb, db;
      eval_side(A, t, side, &va, &da);
      eval_side(B, t, side, &vb, &db);
      out.times.push_back(t);
      out.nodes.push_back(va + cb * vb);
      out.derivs.push_back(da + cb * db);
    }
  }
  return out;
}

}  // namespace

SecondVariationWitness conjugate_witness(const ProblemSpec& spec, const Vec& z, double break_time,
                                         double horizon, const Vec& theta,
                                         const WitnessOptions& opts) {
  require(break_time > 0.0 && break_time <= horizon + 1e-12,
          "conjugate_witness: break time must lie in (0, horizon]");
  require(theta.norm() > 0.0, "conjugate_witness: direction must be nonzero");
  SecondVariationWitness out;
  out.constructed = true;
  out.break_time = break_time;
  Vec th = theta / theta.norm();

  VarTrajectory var = integrate_variational(spec, z, break_time, opts.ode);
  int m = static_cast<int>(var.base.times.size());
  std::vector<Vec> a(m), da(m);
  for (int i = 0; i < m; ++i) {
    HamiltonianJet j =
        spec.H->jet(var.base.times[i], var.base.X[i], var.base.P[i], var.base.U[i], 2);
    a[i] = var.Xz[i] * th;
    da[i] = (j.Hpx * var.Xz[i] + j.Hpp * var.Pz[i] + j.Hpu * var.Uz[i]) * th;
  }
  // Linear correction so the variation vanishes at the break exactly.
  Vec end_val = a[m - 1];
  for (int i = 0; i < m; ++i) {
    a[i] -= (var.base.times[i] / break_time) * end_val;
    da[i] -= end_val / break_time;
  }
  out.corner = da[m - 1];

  SampledCurve alpha;
  alpha.times = var.base.times;
  alpha.nodes = a;
  alpha.derivs = da;
  alpha.nodes.back() = Vec::Zero(z.size());
  bool has_tail = horizon - break_time > 1e-10;
  if (has_tail) {
    alpha.times.push_back(break_time);
    alpha.nodes.push_back(Vec::Zero(z.size()));
    alpha.derivs.push_back(Vec::Zero(z.size()));
    alpha.times.push_back(horizon);
    alpha.nodes.push_back(Vec::Zero(z.size()));
    alpha.derivs.push_back(Vec::Zero(z.size()));
  }
  out.alpha = alpha;

  AccessoryOptions aopts;
  aopts.ode = opts.ode;
  aopts.substeps = opts.substeps;
  CharTrajectory base = integrate_lie(spec, z, horizon, opts.ode);
  out.jstar = accessory_second_variation(spec, base, alpha, aopts).jstar;
  out.jstar_improved = out.jstar;

  double corner_norm = out.corner.norm();
  if (!has_tail) {
    out.diagnostic = "witness ends at the break; extend the horizon to expose the corner";
  } else if (corner_norm <= 1e-10) {
    out.diagnostic = "no corner to smooth; witness slope is continuous";
  } else {
    double delta = std::min({opts.smoothing, break_time, horizon - break_time});
    Vec dir = out.corner / corner_norm;
    SampledCurve beta;
    auto push = [&](double t, const Vec& v) {
      if (!beta.times.empty() && t <= beta.times.back()) return;
      beta.times.push_back(t);
      beta.nodes.push_back(v);
    };
    Vec zero = Vec::Zero(z.size());
    push(0.0, zero);
    push(break_time - delta, zero);
    push(break_time, dir);
    push(break_time + delta, zero);
    push(horizon, zero);

    double jb = accessory_second_variation(spec, base, beta, aopts).jstar;
    double jp = accessory_second_variation(spec, base, lincomb(alpha, 1.0, beta), aopts).jstar;
    double jm = accessory_second_variation(spec, base, lincomb(alpha, -1.0, beta), aopts).jstar;
    double cross = 0.25 * (jp - jm);
    if (jb > opts.certify_tol) {
      out.jstar_improved = out.jstar - cross * cross / jb;
    } else {
      out.diagnostic = "smoothing direction is itself degenerate";
    }
  }
  out.negative = out.jstar_improved < -opts.certify_tol || out.jstar < -opts.certify_tol;
  return out;
}

SecondVariationWitness conjugate_witness(const ProblemSpec& spec, const Vec& z, double horizon,
                                         const WitnessOptions& opts) {
  ConjugateScanOptions scan;
  scan.ode = opts.ode;
  ConjugateTimeResult ct = conjugate_time(spec, z, horizon, scan);
  if (!ct.found) {
    SecondVariationWitness out;
    out.diagnostic = "witness construction refused: " + ct.diagnostic;
    return out;
  }
  return conjugate_witness(spec, z, ct.t_star, horizon, ct.kernel, opts);
}

// ---------------------------------------------------------------------------

std::vector<HessianSample> hessian_blowup_probe(const ProblemSpec& spec, const Vec& z,
                                                const std::vector<double>& times,
                                                const StepPolicy& ode) {
  std::vector<HessianSample> out;
  out.reserve(times.size());
  for (double t : times) {
    require(t > 0.0, "hessian_blowup_probe: times must be positive");
    VarTrajectory var = integrate_variational(spec, z, t, ode);
    const Mat& Xz = var.Xz.back();
    const Mat& Pz = var.Pz.back();
    HessianSample s;
    s.t = t;
    s.det_Xz = Xz.determinant();
    Mat hess = Xz.transpose().partialPivLu().solve(Pz.transpose()).transpose();
    s.hessian_norm = hess.norm();
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------

CrossingResult interface_crossing(const ProblemSpec& spec, double t, const Vec& a, const Vec& b,
                                  const CrossingOptions& opts) {
  require(t > 0.0, "interface_crossing: time must be positive");
  require(a.size() == b.size() && (b - a).norm() > 0.0,
          "interface_crossing: segment must be nondegenerate");
  CrossingResult out;

  MinimizerSet at_a = shoot_minimizers(spec, t, a, opts.shoot);
  MinimizerSet at_b = shoot_minimizers(spec, t, b, opts.shoot);
  if (at_a.entries.empty() || at_b.entries.empty()) {
    out.diagnostic = "shooting found no characteristics at a segment endpoint";
    return out;
  }
  Vec za = at_a.entries.front().seed;
  Vec zb = at_b.entries.front().seed;
  double seed_scale = 1.0 + std::max(za.norm(), zb.norm());

  auto probe = [&](double lam, const Vec& wa, const Vec& wb,
                   std::optional<MinimizerEntry>* ea,
                   std::optional<MinimizerEntry>* eb) {
    Vec xm = a + lam * (b - a);
    *ea = continue_root(spec, t, xm, wa, opts.shoot);
    *eb = continue_root(spec, t, xm, wb, opts.shoot);
    ++out.evals;
  };

  // The two branches must be distinct and must trade dominance across [a,b].
  std::optional<MinimizerEntry> ea, eb;
  probe(0.0, za, zb, &ea, &eb);
  if (!ea || !eb) {
    out.diagnostic = "branch continuation failed at the left endpoint";
    return out;
  }
  if ((ea->seed - eb->seed).norm() <= 1e-6 * seed_scale) {
    out.diagnostic = "only one branch is visible at the left endpoint";
    return out;
  }
  auto finalize = [&](double lam, const MinimizerEntry& ba, const MinimizerEntry& bb) {
    out.found = true;
    out.x = a + lam * (b - a);
    out.branch_a = ba;
    out.branch_b = bb;
    out.value_gap = std::abs(ba.U - bb.U);
    out.momentum_gap = (ba.P - bb.P).norm();
    out.u = std::min(ba.U, bb.U);
    return out;
  };

  auto tie_at = [&](const MinimizerEntry& p, const MinimizerEntry& q) {
    return opts.shoot.tie_frac * (1.0 + std::min(std::abs(p.U), std::abs(q.U)));
  };

  double g0 = ea->U - eb->U;
  if (std::abs(g0) <= tie_at(*ea, *eb)) return finalize(0.0, *ea, *eb);  // crossing sits at a
  std::optional<MinimizerEntry> fa, fb;
  probe(1.0, ea->seed, eb->seed, &fa, &fb);
  if (!fa || !fb) {
    out.diagnostic = "branch continuation failed at the right endpoint";
    return out;
  }
  if ((fa->seed - fb->seed).norm() <= 1e-6 * seed_scale) {
    out.diagnostic = "only one branch is visible at the right endpoint";
    return out;
  }
  double g1 = fa->U - fb->U;
  if (std::abs(g1) <= tie_at(*fa, *fb)) return finalize(1.0, *fa, *fb);  // crossing sits at b
  if ((g0 > 0.0) == (g1 > 0.0)) {
    out.diagnostic = "branch costs do not trade dominance across the segment";
    return out;
  }

  double lo = 0.0, hi = 1.0;
  Vec wa_lo = ea->seed, wb_lo = eb->seed;
  Vec wa_hi = fa->seed, wb_hi = fb->seed;
  double span = (b - a).norm();
  MinimizerEntry best_a = *ea, best_b = *eb;
  while ((hi - lo) * span > opts.tol_x) {
    double mid = 0.5 * (lo + hi);
    std::optional<MinimizerEntry> ma, mb;
    probe(mid, 0.5 * (wa_lo + wa_hi), 0.5 * (wb_lo + wb_hi), &ma, &mb);
    if (!ma || !mb) {
      out.diagnostic = "branch continuation lost during bisection";
      return out;
    }
    if ((ma->seed - mb->seed).norm() <= 1e-6 * seed_scale) {
      out.diagnostic = "branches coalesced during bisection";
      return out;
    }
    double gm = ma->U - mb->U;
    best_a = *ma;
    best_b = *mb;
    if ((gm > 0.0) == (g0 > 0.0)) {
      lo = mid;
      wa_lo = ma->seed;
      wb_lo = mb->seed;
    } else {
      hi = mid;
      wa_hi = ma->seed;
      wb_hi = mb->seed;
    }
  }

  return finalize(0.5 * (lo + hi), best_a, best_b);
}

PersistenceResult persistence_probe(const ProblemSpec& spec, double t0, const Vec& x0, double eps,
                                    double M, const PersistenceOptions& opts) {
  require(t0 > 0.0, "persistence_probe: time must be positive");
  require(eps > 0.0 && M > 0.0, "persistence_probe: step and speed bound must be positive");
  require(opts.grid >= 3, "persistence_probe: grid needs at least three points per line");
  PersistenceResult out;

  ClassifyOptions copts;
  copts.shoot = opts.shoot;
  Classification at_start = classify_point(spec, t0, x0, copts);
  if (at_start.type == PointClass::Unknown) {
    out.diagnostic = "could not classify the starting point: " + at_start.diagnostic;
    return out;
  }
  require(at_start.type != PointClass::Regular,
          "persistence_probe: starting point classifies as regular");

  const double t1 = t0 + eps;
  const double r = eps * M;
  const int n = static_cast<int>(x0.size());
  const int g = opts.grid;

  // Scan coordinate lines through x0 for a change of the dominant branch,
  // then refine the bracketing pair by equal-cost bisection.
  for (int axis = 0; axis < n; ++axis) {
    Vec e = Vec::Zero(n);
    e[axis] = 1.0;
    std::vector<Vec> pts(g);
    std::vector<Vec> seed(g);
    std::vector<bool> ok(g, false);
    for (int i = 0; i < g; ++i) {
      pts[i] = x0 + r * (2.0 * i / (g - 1) - 1.0) * e;
      MinimizerSet set = shoot_minimizers(spec, t1, pts[i], opts.shoot);
      ++out.evals;
      if (set.entries.empty()) continue;
      ok[i] = true;
      seed[i] = set.entries.front().seed;
    }
    for (int i = 0; i + 1 < g; ++i) {
      if (!ok[i] || !ok[i + 1]) continue;
      double scale = 1.0 + std::max(seed[i].norm(), seed[i + 1].norm());
      if ((seed[i] - seed[i + 1]).norm() <= 1e-4 * scale) continue;
      CrossingOptions xopts;
      xopts.shoot = opts.shoot;
      xopts.tol_x = opts.tol_x;
      CrossingResult cross = interface_crossing(spec, t1, pts[i], pts[i + 1], xopts);
      out.evals += cross.evals;
      if (!cross.found) {
        // One endpoint may carry branches the other cannot see; the reversed
        // orientation anchors the continuation at the richer endpoint.
        cross = interface_crossing(spec, t1, pts[i + 1], pts[i], xopts);
        out.evals += cross.evals;
      }
      if (!cross.found) continue;
      double tie = opts.tie_slack * opts.shoot.tie_frac * (1.0 + std::abs(cross.u));
      if (cross.value_gap > tie) continue;
      out.found = true;
      out.x = cross.x;
      out.distance = (cross.x - x0).norm();
      out.u = cross.u;
      out.value_gap = cross.value_gap;
      out.momentum_gap = cross.momentum_gap;
      return out;
    }
  }
  out.diagnostic = "no dominant-branch change inside the search ball";
  return out;
}

}  // namespace hjc
