#include "hjc/singular.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

namespace hjc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vec direction_of(double tcomp, const Vec& v) {
  Vec d(v.size() + 1);
  d[0] = tcomp;
  d.tail(v.size()) = v;
  return d;
}

std::vector<int> iota_vec(int k) {
  std::vector<int> v(k);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Smallest singular value of the columns v_i - v_last over the index subset;
// +inf for a single vertex, 0 when there are more columns than rows.
double rank_margin_of(const std::vector<Vec>& vertices, const std::vector<int>& idx) {
  const int k = static_cast<int>(idx.size());
  if (k <= 1) return kInf;
  const int m = static_cast<int>(vertices[idx[0]].size());
  if (k - 1 > m) return 0.0;
  Mat D(m, k - 1);
  for (int j = 0; j + 1 < k; ++j) D.col(j) = vertices[idx[j]] - vertices[idx[k - 1]];
  Eigen::JacobiSVD<Mat> svd(D);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

bool same_vertex_set(const std::vector<Vec>& a_list, const std::vector<int>& a_idx,
                     const std::vector<Vec>& b_list, const std::vector<int>& b_idx) {
  if (a_idx.size() != b_idx.size()) return false;
  auto close = [](const Vec& u, const Vec& v) {
    return (u - v).norm() <= 1e-9 * (1.0 + u.norm() + v.norm());
  };
  std::vector<bool> used(b_idx.size(), false);
  for (int ia : a_idx) {
    bool found = false;
    for (size_t j = 0; j < b_idx.size(); ++j) {
      if (!used[j] && close(a_list[ia], b_list[b_idx[j]])) {
        used[j] = true;
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Exposed faces

FaceSelection exposed_face(const std::vector<Vec>& vertices, const Vec& theta, double face_tol) {
  require(!vertices.empty(), "exposed_face: empty vertex list");
  const auto m = vertices[0].size();
  for (const auto& v : vertices)
    require(v.size() == m, "exposed_face: inconsistent vertex dimensions");
  require(theta.size() == m, "exposed_face: direction dimension does not match the vertices");

  FaceSelection face;
  face.vertices = vertices;
  face.theta = theta;
  std::vector<double> s(vertices.size());
  double smin = kInf;
  for (size_t i = 0; i < vertices.size(); ++i) {
    s[i] = vertices[i].dot(theta);
    smin = std::min(smin, s[i]);
  }
  double active_max = -kInf, inactive_min = kInf;
  for (size_t i = 0; i < vertices.size(); ++i) {
    if (s[i] <= smin + face_tol) {
      face.active.push_back(static_cast<int>(i));
      active_max = std::max(active_max, s[i]);
    } else {
      inactive_min = std::min(inactive_min, s[i]);
    }
  }
  face.slack = face.active.size() == vertices.size() ? 0.0 : inactive_min - active_max;
  return face;
}

// ---------------------------------------------------------------------------
// Minimal-energy element

namespace {

double eval_energy(const ProblemSpec& spec, double t, const Vec& x, const std::vector<double>& q,
                   const std::vector<Vec>& p, double u_ref, const Vec& mu) {
  Vec pbar = Vec::Zero(p[0].size());
  double qbar = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    pbar += mu[static_cast<int>(i)] * p[i];
    qbar += mu[static_cast<int>(i)] * q[i];
  }
  return qbar + spec.H->value(t, x, pbar, u_ref);
}

// Euclidean projection onto the probability simplex.
Vec simplex_project(Vec y) {
  const int k = static_cast<int>(y.size());
  std::vector<double> u(y.data(), y.data() + k);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, tau = 0.0;
  int rho = 0;
  for (int i = 0; i < k; ++i) {
    css += u[i];
    double cand = (css - 1.0) / (i + 1);
    if (u[i] - cand > 0.0) {
      rho = i + 1;
      tau = cand;
    }
  }
  (void)rho;
  for (int i = 0; i < k; ++i) y[i] = std::max(0.0, y[i] - tau);
  double sum = y.sum();
  if (sum > 0.0) y /= sum;
  return y;
}

void enumerate_compositions(int total, int parts, std::vector<int>& cur,
                            const std::function<void(const std::vector<int>&)>& emit) {
  if (parts == 1) {
    cur.push_back(total);
    emit(cur);
    cur.pop_back();
    return;
  }
  for (int c = 0; c <= total; ++c) {
    cur.push_back(c);
    enumerate_compositions(total - c, parts - 1, cur, emit);
    cur.pop_back();
  }
}

}  // namespace

EnergyMinimum minimal_energy_element(const ProblemSpec& spec, double t, const Vec& x,
                                     const FaceSelection& face, double u_ref,
                                     const EnergyOptions& opts) {
  const int n = spec.dim();
  const int k = static_cast<int>(face.active.size());
  require(k >= 1, "minimal_energy_element: empty face");
  require(k <= 8, "minimal_energy_element: more than 8 active branches");

  std::vector<double> q(k);
  std::vector<Vec> p(k);
  double vertex_scale = 0.0;
  for (int i = 0; i < k; ++i) {
    const Vec& g = face.vertices.at(static_cast<size_t>(face.active[i]));
    require(g.size() == n + 1, "minimal_energy_element: vertex dimension does not match the problem");
    q[i] = g[0];
    p[i] = g.tail(n);
    vertex_scale = std::max(vertex_scale, g.norm());
  }
  if (k >= 2) {
    double margin = rank_margin_of(face.vertices, face.active);
    require(margin > 1e-12 * (1.0 + vertex_scale),
            "minimal_energy_element: active branch gradients are geometrically dependent");
  }

  auto pbar_of = [&](const Vec& mu) {
    Vec pb = Vec::Zero(n);
    for (int i = 0; i < k; ++i) pb += mu[i] * p[i];
    return pb;
  };
  auto qbar_of = [&](const Vec& mu) {
    double qb = 0.0;
    for (int i = 0; i < k; ++i) qb += mu[i] * q[i];
    return qb;
  };

  struct Candidate {
    Vec mu;
    double energy = 0.0;
    double kkt = 0.0;
  };
  std::optional<Candidate> best;
  int total_iters = 0;
  bool fallback = false;

  // Stationarity Newton on every sub-face, screened by the multiplier signs of
  // the left-out vertices; the count is at most 2^8 - 1.
  for (int mask = 1; mask < (1 << k); ++mask) {
    std::vector<int> S;
    for (int b = 0; b < k; ++b)
      if (mask & (1 << b)) S.push_back(b);
    const int s = static_cast<int>(S.size());

    Vec mu = Vec::Zero(k);
    bool converged = false;
    if (s == 1) {
      mu[S[0]] = 1.0;
      converged = true;
    } else {
      for (int i : S) mu[i] = 1.0 / s;
      for (int iter = 0; iter < opts.max_newton; ++iter) {
        ++total_iters;
        HamiltonianJet J = spec.H->jet(t, x, pbar_of(mu), u_ref, 2);
        std::vector<double> g(s);
        double gscale = 1.0;
        for (int j = 0; j < s; ++j) {
          g[j] = q[S[j]] + J.Hp.dot(p[S[j]]);
          gscale = std::max(gscale, std::abs(g[j]));
        }
        Vec r(s - 1);
        for (int j = 0; j + 1 < s; ++j) r[j] = g[j] - g[s - 1];
        if (r.lpNorm<Eigen::Infinity>() <= opts.tol_kkt * gscale) {
          converged = true;
          break;
        }
        Mat R(s - 1, s - 1);
        for (int j = 0; j + 1 < s; ++j)
          for (int l = 0; l + 1 < s; ++l)
            R(j, l) = (p[S[j]] - p[S[s - 1]]).dot(J.Hpp * (p[S[l]] - p[S[s - 1]]));
        Eigen::FullPivLU<Mat> lu(R);
        if (!lu.isInvertible()) break;
        Vec dw = lu.solve(-r);
        if (!dw.allFinite()) break;
        double wsum = 0.0;
        for (int j = 0; j + 1 < s; ++j) {
          mu[S[j]] += dw[j];
          wsum += mu[S[j]];
        }
        mu[S[s - 1]] = 1.0 - wsum;
      }
    }
    if (!converged) continue;

    double wmin = kInf;
    for (int i : S) wmin = std::min(wmin, mu[i]);
    if (wmin < -1e-12) continue;
    for (int i : S) mu[i] = std::max(mu[i], 0.0);
    mu /= mu.sum();

    HamiltonianJet J = spec.H->jet(t, x, pbar_of(mu), u_ref, 1);
    std::vector<double> gall(k);
    double gscale = 1.0, gref = 0.0;
    for (int i = 0; i < k; ++i) {
      gall[i] = q[i] + J.Hp.dot(p[i]);
      gscale = std::max(gscale, std::abs(gall[i]));
    }
    for (int i : S) gref += mu[i] * gall[i];
    double worst_mult = 0.0, stat = 0.0;
    for (int i = 0; i < k; ++i) {
      if (mask & (1 << i))
        stat = std::max(stat, std::abs(gall[i] - gref));
      else
        worst_mult = std::min(worst_mult, gall[i] - gref);
    }
    if (worst_mult < -opts.tol_kkt * gscale) continue;
    Candidate c;
    c.mu = mu;
    c.energy = qbar_of(mu) + J.value;
    c.kkt = std::max(stat, -worst_mult);
    if (!best || c.energy < best->energy) best = c;
  }

  if (!best) {
    fallback = true;
    Candidate c;
    if (k == 2) {
      auto phi = [&](double a) {
        Vec mu(2);
        mu << a, 1.0 - a;
        return eval_energy(spec, t, x, q, p, u_ref, mu);
      };
      const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
      double lo = 0.0, hi = 1.0;
      double c1 = hi - gr * (hi - lo), c2 = lo + gr * (hi - lo);
      double f1 = phi(c1), f2 = phi(c2);
      for (int it = 0; it < 90; ++it) {
        if (f1 < f2) {
          hi = c2;
          c2 = c1;
          f2 = f1;
          c1 = hi - gr * (hi - lo);
          f1 = phi(c1);
        } else {
          lo = c1;
          c1 = c2;
          f1 = f2;
          c2 = lo + gr * (hi - lo);
          f2 = phi(c2);
        }
      }
      double a = 0.5 * (lo + hi);
      c.mu = Vec(2);
      c.mu << a, 1.0 - a;
    } else {
      const int m = 16;
      Vec bestmu = Vec::Constant(k, 1.0 / k);
      double bestE = eval_energy(spec, t, x, q, p, u_ref, bestmu);
      std::vector<int> cur;
      enumerate_compositions(m, k, cur, [&](const std::vector<int>& comp) {
        Vec mu(k);
        for (int i = 0; i < k; ++i) mu[i] = static_cast<double>(comp[i]) / m;
        double E = eval_energy(spec, t, x, q, p, u_ref, mu);
        if (E < bestE) {
          bestE = E;
          bestmu = mu;
        }
      });
      Vec mu = bestmu;
      double E = bestE;
      for (int it = 0; it < 300; ++it) {
        HamiltonianJet J = spec.H->jet(t, x, pbar_of(mu), u_ref, 1);
        Vec g(k);
        for (int i = 0; i < k; ++i) g[i] = q[i] + J.Hp.dot(p[i]);
        double eta = 1.0;
        bool moved = false;
        for (int half = 0; half < 40; ++half) {
          Vec trial = simplex_project(mu - eta * g);
          double Et = eval_energy(spec, t, x, q, p, u_ref, trial);
          if (Et < E - 1e-18) {
            mu = trial;
            E = Et;
            moved = true;
            break;
          }
          eta *= 0.5;
        }
        if (!moved) break;
      }
      c.mu = mu;
    }
    // measure the residual the fallback achieved
    HamiltonianJet J = spec.H->jet(t, x, pbar_of(c.mu), u_ref, 1);
    double gref = 0.0, gscale = 1.0;
    std::vector<double> gall(k);
    for (int i = 0; i < k; ++i) {
      gall[i] = q[i] + J.Hp.dot(p[i]);
      gscale = std::max(gscale, std::abs(gall[i]));
    }
    for (int i = 0; i < k; ++i) gref += c.mu[i] * gall[i];
    double resid = 0.0;
    for (int i = 0; i < k; ++i) {
      if (c.mu[i] > 1e-12)
        resid = std::max(resid, std::abs(gall[i] - gref));
      else
        resid = std::max(resid, std::max(0.0, gref - gall[i]));
    }
    c.kkt = resid;
    c.energy = qbar_of(c.mu) + J.value;
    best = c;
  }

  EnergyMinimum em;
  em.weights = best->mu;
  em.q_bar = qbar_of(best->mu);
  em.p_bar = pbar_of(best->mu);
  HamiltonianJet J = spec.H->jet(t, x, em.p_bar, u_ref, 1);
  em.v_bar = J.Hp;
  em.energy = em.q_bar + J.value;
  em.kkt_residual = best->kkt;
  em.interior_margin = best->mu.minCoeff();
  em.interior = em.interior_margin >= opts.tol_ri;
  em.newton_iters = total_iters;
  em.fallback_used = fallback;
  return em;
}

// ---------------------------------------------------------------------------
// Non-degeneracy report

NondegeneracyReport nondegeneracy_check(const FaceSelection& face, const EnergyMinimum& em,
                                        const std::vector<Vec>& all_vertices,
                                        const NondegeneracyOptions& opts) {
  NondegeneracyReport rep;
  const int k = static_cast<int>(face.active.size());
  rep.rank_margin = rank_margin_of(face.vertices, face.active);
  rep.geometrically_independent = rep.rank_margin > opts.tol_rank;
  if (em.weights.size() == static_cast<Eigen::Index>(k) && k >= 1) {
    rep.interior_margin = em.weights.minCoeff();
    rep.interior = rep.interior_margin >= opts.tol_ri;
  }
  if (em.v_bar.size() > 0 && !all_vertices.empty()) {
    Vec dir = direction_of(1.0, em.v_bar);
    FaceSelection fwd = exposed_face(all_vertices, dir, opts.face_tol);
    rep.exposure_slack = fwd.slack;
    rep.exposed_in_velocity_direction =
        same_vertex_set(face.vertices, face.active, all_vertices, fwd.active);
    FaceSelection bwd = exposed_face(all_vertices, -dir, opts.face_tol);
    bool not_vertex = em.weights.size() > 0 && em.weights.maxCoeff() <= 1.0 - opts.tol_ri;
    rep.minimax =
        not_vertex && same_vertex_set(face.vertices, face.active, all_vertices, bwd.active);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Branch models

namespace {

class AnalyticBranch final : public BranchModel {
 public:
  AnalyticBranch(std::function<double(double, const Vec&)> value,
                 std::function<Vec(double, const Vec&)> gradient)
      : value_(std::move(value)), gradient_(std::move(gradient)) {}

  BranchState eval(const ProblemSpec& spec, double t, const Vec& x) override {
    BranchState b;
    b.v = value_(t, x);
    b.p = gradient_(t, x);
    b.q = -spec.H->value(t, x, b.p, b.v);
    b.det_Xz = 1.0;
    b.ok = std::isfinite(b.v) && b.p.allFinite() && std::isfinite(b.q);
    if (!b.ok) b.diagnostic = "analytic sheet evaluated to a non-finite state";
    return b;
  }
  std::shared_ptr<BranchModel> fork() const override {
    return std::make_shared<AnalyticBranch>(value_, gradient_);
  }

 private:
  std::function<double(double, const Vec&)> value_;
  std::function<Vec(double, const Vec&)> gradient_;
};

class ShootingBranch final : public BranchModel {
 public:
  ShootingBranch(Vec seed, ShootOptions opts) : seed_(std::move(seed)), opts_(std::move(opts)) {}

  BranchState eval(const ProblemSpec& spec, double t, const Vec& x) override {
    BranchState b;
    auto e = continue_root(spec, t, x, seed_, opts_);
    if (!e) {
      b.diagnostic = "branch continuation lost its characteristic root";
      return b;
    }
    seed_ = e->seed;
    b.v = e->U;
    b.p = e->P;
    b.q = -spec.H->value(t, x, b.p, b.v);
    b.det_Xz = e->det_Xz;
    b.ok = true;
    return b;
  }
  const Vec* seed() const override { return &seed_; }
  std::shared_ptr<BranchModel> fork() const override {
    return std::make_shared<ShootingBranch>(seed_, opts_);
  }

 private:
  Vec seed_;
  ShootOptions opts_;
};

}  // namespace

std::shared_ptr<BranchModel> analytic_branch(std::function<double(double, const Vec&)> value,
                                             std::function<Vec(double, const Vec&)> gradient) {
  return std::make_shared<AnalyticBranch>(std::move(value), std::move(gradient));
}

std::shared_ptr<BranchModel> shooting_branch(const Vec& seed, const ShootOptions& opts) {
  return std::make_shared<ShootingBranch>(seed, opts);
}

std::shared_ptr<BranchModel> classical_linear_sheet(const Vec& a, double c) {
  const double a2 = a.squaredNorm();
  Vec acopy = a;
  return analytic_branch(
      [acopy, a2, c](double t, const Vec& x) { return acopy.dot(x) - 0.5 * a2 * t + c; },
      [acopy](double, const Vec&) { return acopy; });
}

std::shared_ptr<BranchModel> contact_linear_sheet(double discount, const Vec& a, double c) {
  require(discount > 0.0, "contact_linear_sheet: discount must be positive");
  const double a2 = a.squaredNorm();
  Vec acopy = a;
  return analytic_branch(
      [acopy, a2, c, discount](double t, const Vec& x) {
        const double e = std::exp(-discount * t);
        return e * (acopy.dot(x) + c) - a2 * e * (1.0 - e) / (2.0 * discount);
      },
      [acopy, discount](double t, const Vec&) { return Vec(std::exp(-discount * t) * acopy); });
}

// ---------------------------------------------------------------------------
// Tracing

const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::Horizon: return "horizon";
    case StopReason::FaceBoundary: return "face_boundary";
    case StopReason::RankLoss: return "rank_loss";
    case StopReason::BranchCrossing: return "branch_crossing";
    case StopReason::Conjugacy: return "conjugacy";
    case StopReason::IntegrationFailure: return "integration_failure";
  }
  return "?";
}

const char* to_string(TraceDirection d) {
  switch (d) {
    case TraceDirection::Forward: return "forward";
    case TraceDirection::Backward: return "backward";
    case TraceDirection::Bidirectional: return "bidirectional";
  }
  return "?";
}

SampledCurve SingularCurve::path() const {
  SampledCurve c;
  for (const auto& s : samples) {
    c.times.push_back(s.t);
    c.nodes.push_back(s.x);
    c.derivs.push_back(s.v_bar.size() > 0 ? s.v_bar : Vec(Vec::Zero(s.x.size())));
  }
  return c;
}

namespace {

struct MarchContext {
  const ProblemSpec* spec = nullptr;
  const std::vector<std::shared_ptr<BranchModel>>* models = nullptr;
  std::vector<int> active;     // model indices on the traced face
  std::vector<int> equal_set;  // models equal at the anchor (superset of active)
  double sigma0 = kInf;        // anchor exposure slack to equal-but-inactive branches
  const TraceOptions* opts = nullptr;
};

struct StageEval {
  bool ok = false;
  StopReason reason = StopReason::IntegrationFailure;
  std::string detail;
  Vec v;
};

StageEval stage_velocity(MarchContext& ctx, double t, const Vec& x) {
  StageEval out;
  if (!x.allFinite()) {
    out.detail = "non-finite state";
    return out;
  }
  const auto& models = *ctx.models;
  std::vector<Vec> verts;
  double u_ref = 0.0;
  for (int i : ctx.active) {
    BranchState b = models[static_cast<size_t>(i)]->eval(*ctx.spec, t, x);
    if (!b.ok) {
      out.reason = StopReason::BranchCrossing;
      out.detail = "branch " + std::to_string(i) + ": " + b.diagnostic;
      return out;
    }
    verts.push_back(b.gradient_vector());
    if (i == ctx.active.back()) u_ref = b.v;
  }
  FaceSelection face;
  face.vertices = verts;
  face.active = iota_vec(static_cast<int>(verts.size()));
  try {
    EnergyMinimum em = minimal_energy_element(*ctx.spec, t, x, face, u_ref, ctx.opts->energy);
    out.v = em.v_bar;
    out.ok = true;
  } catch (const PreconditionError& e) {
    out.reason = StopReason::RankLoss;
    out.detail = e.what();
  } catch (const std::exception& e) {
    out.reason = StopReason::IntegrationFailure;
    out.detail = e.what();
  }
  return out;
}

struct SampleEval {
  SingularSample sample;
  bool trip = false;
  bool usable = true;  // false when the sample could not even be assembled
  StopReason reason = StopReason::Horizon;
  std::string detail;
};

SampleEval node_sample(MarchContext& ctx, double t, const Vec& x) {
  SampleEval out;
  SingularSample& s = out.sample;
  s.t = t;
  s.x = x;
  const TraceOptions& opts = *ctx.opts;
  const auto& models = *ctx.models;
  const int m = static_cast<int>(models.size());

  if (!x.allFinite()) {
    out.trip = true;
    out.usable = false;
    out.reason = StopReason::IntegrationFailure;
    out.detail = "non-finite position";
    return out;
  }

  s.branch_values.assign(static_cast<size_t>(m), std::numeric_limits<double>::quiet_NaN());
  std::vector<BranchState> st(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    st[static_cast<size_t>(i)] = models[static_cast<size_t>(i)]->eval(*ctx.spec, t, x);
    if (st[static_cast<size_t>(i)].ok)
      s.branch_values[static_cast<size_t>(i)] = st[static_cast<size_t>(i)].v;
  }
  for (int i : ctx.active) {
    if (!st[static_cast<size_t>(i)].ok) {
      out.trip = true;
      out.usable = false;
      out.reason = StopReason::BranchCrossing;
      out.detail = "active branch " + std::to_string(i) + ": " + st[static_cast<size_t>(i)].diagnostic;
      return out;
    }
  }

  const double v_ref = st[static_cast<size_t>(ctx.active.back())].v;
  const double scale = 1.0 + std::abs(v_ref);
  double vmax = -kInf, vmin = kInf, min_det = kInf;
  std::vector<Vec> verts;
  for (int i : ctx.active) {
    const BranchState& b = st[static_cast<size_t>(i)];
    vmax = std::max(vmax, b.v);
    vmin = std::min(vmin, b.v);
    min_det = std::min(min_det, std::abs(b.det_Xz));
    verts.push_back(b.gradient_vector());
  }
  s.equality_residual = vmax - vmin;
  s.min_abs_det = min_det;
  s.rank_margin = rank_margin_of(verts, iota_vec(static_cast<int>(verts.size())));

  FaceSelection face;
  face.vertices = verts;
  face.active = iota_vec(static_cast<int>(verts.size()));
  try {
    EnergyMinimum em = minimal_energy_element(*ctx.spec, t, x, face, v_ref, opts.energy);
    s.weights = em.weights;
    s.q_bar = em.q_bar;
    s.p_bar = em.p_bar;
    s.v_bar = em.v_bar;
    s.interior_margin = em.interior_margin;
  } catch (const PreconditionError& e) {
    out.trip = true;
    out.reason = StopReason::RankLoss;
    out.detail = e.what();
    return out;
  } catch (const std::exception& e) {
    out.trip = true;
    out.reason = StopReason::IntegrationFailure;
    out.detail = e.what();
    return out;
  }

  // support gap to branches that were equal at the anchor but exposure-inactive
  s.exposure_slack = kInf;
  s.inactive_value_margin = kInf;
  Vec dir = direction_of(1.0, s.v_bar);
  double active_support_max = -kInf;
  for (int i : ctx.active) {
    Vec g = st[static_cast<size_t>(i)].gradient_vector();
    active_support_max = std::max(active_support_max, g.dot(dir));
  }
  auto in = [](const std::vector<int>& v, int i) {
    return std::find(v.begin(), v.end(), i) != v.end();
  };
  for (int i = 0; i < m; ++i) {
    if (in(ctx.active, i) || !st[static_cast<size_t>(i)].ok) continue;
    if (in(ctx.equal_set, i)) {
      Vec g = st[static_cast<size_t>(i)].gradient_vector();
      s.exposure_slack = std::min(s.exposure_slack, g.dot(dir) - active_support_max);
    } else {
      s.inactive_value_margin =
          std::min(s.inactive_value_margin, st[static_cast<size_t>(i)].v - v_ref);
    }
  }

  // monitors, in the order the propagation hypotheses degrade
  if (s.equality_residual > opts.tol_sing * scale) {
    out.trip = true;
    out.reason = StopReason::FaceBoundary;
    out.detail = "active branch values separated beyond tolerance";
  } else if (ctx.active.size() >= 2 && s.rank_margin <= opts.tol_rank) {
    out.trip = true;
    out.reason = StopReason::RankLoss;
    out.detail = "gradient differences lost rank";
  } else if (s.interior_margin < opts.tol_ri) {
    out.trip = true;
    out.reason = StopReason::FaceBoundary;
    out.detail = "minimal-energy weights reached the boundary of the face";
  } else if (std::isfinite(ctx.sigma0) && s.exposure_slack < 0.5 * ctx.sigma0) {
    out.trip = true;
    out.reason = StopReason::FaceBoundary;
    out.detail = "exposure slack fell below half its anchor value";
  } else if (s.inactive_value_margin <= opts.tol_sing * scale) {
    out.trip = true;
    out.reason = StopReason::BranchCrossing;
    out.detail = "an off-face branch value reached the curve";
  } else if (min_det <= opts.tol_conj) {
    out.trip = true;
    out.reason = StopReason::Conjugacy;
    out.detail = "det X_z reached the degeneracy threshold on an active branch";
  }
  return out;
}

struct MarchResult {
  std::vector<SingularSample> samples;
  StopReason stop = StopReason::Horizon;
  std::string detail;
};

MarchResult march(MarchContext& ctx, double t0, const Vec& x0, double t_end) {
  MarchResult res;
  const TraceOptions& opts = *ctx.opts;
  double t = t0;
  Vec x = x0;

  {
    SampleEval se = node_sample(ctx, t, x);
    if (se.usable) res.samples.push_back(se.sample);
    if (se.trip) {
      res.stop = se.reason;
      res.detail = se.detail;
      return res;
    }
  }
  if (std::abs(t_end - t0) <= 1e-14) return res;

  const double dirsign = t_end > t0 ? 1.0 : -1.0;
  const double hbase = opts.dt * dirsign;
  const long max_steps = static_cast<long>(std::ceil(std::abs(t_end - t0) / opts.dt)) + 4;
  bool has_seed = false;
  for (const auto& mptr : *ctx.models)
    if (mptr->seed() != nullptr) has_seed = true;

  long step = 0;
  while (dirsign * (t_end - t) > 1e-12 && step < max_steps) {
    double h = hbase;
    if (dirsign * (t + h - t_end) > 0.0) h = t_end - t;

    StageEval k1 = stage_velocity(ctx, t, x);
    if (!k1.ok) {
      res.stop = k1.reason;
      res.detail = k1.detail;
      return res;
    }
    StageEval k2 = stage_velocity(ctx, t + 0.5 * h, x + (0.5 * h) * k1.v);
    if (!k2.ok) {
      res.stop = k2.reason;
      res.detail = k2.detail;
      return res;
    }
    StageEval k3 = stage_velocity(ctx, t + 0.5 * h, x + (0.5 * h) * k2.v);
    if (!k3.ok) {
      res.stop = k3.reason;
      res.detail = k3.detail;
      return res;
    }
    StageEval k4 = stage_velocity(ctx, t + h, x + h * k3.v);
    if (!k4.ok) {
      res.stop = k4.reason;
      res.detail = k4.detail;
      return res;
    }
    x += (h / 6.0) * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v);
    t += h;
    ++step;

    SampleEval se = node_sample(ctx, t, x);
    if (se.usable) res.samples.push_back(se.sample);
    if (se.trip) {
      res.stop = se.reason;
      res.detail = se.detail;
      return res;
    }

    if (opts.revalidate && has_seed && opts.reval_every > 0 && step % opts.reval_every == 0) {
      MinimizerSet set = shoot_minimizers(*ctx.spec, t, x, opts.shoot);
      if (set.diagnostic.empty()) {
        for (const auto& e : set.entries) {
          if (!e.minimizing) continue;
          double dmin = kInf;
          for (const auto& mptr : *ctx.models)
            if (const Vec* sd = mptr->seed()) dmin = std::min(dmin, (e.seed - *sd).norm());
          if (dmin == kInf) continue;
          double radius = std::max(4.0 * set.dedupe_radius, 1e-3 * (1.0 + e.seed.norm()));
          if (dmin > radius) {
            res.stop = StopReason::BranchCrossing;
            res.detail = "revalidation found a minimizing characteristic away from the tracked branches";
            return res;
          }
        }
      }
    }
  }
  return res;
}

struct AnchorScan {
  std::vector<BranchState> states;
  std::vector<int> equal_set;  // model indices, value-tied to the minimum
  std::vector<Vec> verts;      // gradients of the equal set, same order
  double u_ref = 0.0;          // value of the last equal branch
};

AnchorScan scan_anchor(const ProblemSpec& spec, double t0, const Vec& x0,
                       const std::vector<std::shared_ptr<BranchModel>>& branches, double tol_sing,
                       const char* who) {
  AnchorScan a;
  const int m = static_cast<int>(branches.size());
  a.states.resize(static_cast<size_t>(m));
  double vmin = kInf;
  for (int i = 0; i < m; ++i) {
    a.states[static_cast<size_t>(i)] = branches[static_cast<size_t>(i)]->eval(spec, t0, x0);
    if (a.states[static_cast<size_t>(i)].ok) vmin = std::min(vmin, a.states[static_cast<size_t>(i)].v);
  }
  require(vmin < kInf, std::string(who) + ": no branch could be evaluated at the starting point");
  const double scale = 1.0 + std::abs(vmin);
  for (int i = 0; i < m; ++i) {
    const BranchState& b = a.states[static_cast<size_t>(i)];
    if (b.ok && b.v - vmin <= tol_sing * scale) {
      a.equal_set.push_back(i);
      a.verts.push_back(b.gradient_vector());
    }
  }
  require(a.equal_set.size() >= 2,
          std::string(who) +
              ": fewer than two branches are equal at the starting point (not a singular point)");
  a.u_ref = a.states[static_cast<size_t>(a.equal_set.back())].v;
  return a;
}

// Minimal energy over the whole equal face; falls back to the best independent
// sub-face when the full vertex set is geometrically dependent.
EnergyMinimum face_minimum_robust(const ProblemSpec& spec, double t, const Vec& x,
                                  const std::vector<Vec>& verts, double u_ref,
                                  const EnergyOptions& eopts) {
  FaceSelection full;
  full.vertices = verts;
  full.active = iota_vec(static_cast<int>(verts.size()));
  try {
    return minimal_energy_element(spec, t, x, full, u_ref, eopts);
  } catch (const PreconditionError&) {
    const int k = static_cast<int>(verts.size());
    std::optional<EnergyMinimum> best;
    for (int mask = 1; mask < (1 << k) - 1; ++mask) {
      FaceSelection sub;
      sub.vertices = verts;
      for (int b = 0; b < k; ++b)
        if (mask & (1 << b)) sub.active.push_back(b);
      try {
        EnergyMinimum em = minimal_energy_element(spec, t, x, sub, u_ref, eopts);
        if (!best || em.energy < best->energy) best = em;
      } catch (const PreconditionError&) {
        continue;
      }
    }
    if (!best) throw;
    return *best;
  }
}

}  // namespace

SingularCurve trace_forward(const ProblemSpec& spec, double t0, const Vec& x0,
                            const std::vector<std::shared_ptr<BranchModel>>& branches,
                            double horizon, const TraceOptions& opts) {
  require(!branches.empty(), "trace_forward: no branches supplied");
  require(x0.size() == spec.dim(), "trace_forward: dimension mismatch");
  require(horizon > t0, "trace_forward: horizon must exceed the starting time");

  AnchorScan a = scan_anchor(spec, t0, x0, branches, opts.tol_sing, "trace_forward");
  EnergyMinimum em = face_minimum_robust(spec, t0, x0, a.verts, a.u_ref, opts.energy);

  // the traced face is the one exposed by the velocity direction
  FaceSelection face = exposed_face(a.verts, direction_of(1.0, em.v_bar), opts.face_tol);
  if (face.active.size() != a.verts.size()) {
    em = minimal_energy_element(spec, t0, x0, face, a.u_ref, opts.energy);
  }
  NondegeneracyOptions nopts{opts.face_tol, opts.tol_ri, opts.tol_rank};
  NondegeneracyReport ndg = nondegeneracy_check(face, em, a.verts, nopts);
  require(ndg.geometrically_independent,
          "trace_forward: active branch gradients are geometrically dependent");
  require(ndg.interior, "trace_forward: the minimal-energy element is not interior to its face");
  require(ndg.exposed_in_velocity_direction,
          "trace_forward: the face is not the one exposed by the velocity direction");

  MarchContext ctx;
  ctx.spec = &spec;
  ctx.models = &branches;
  for (int idx : face.active) ctx.active.push_back(a.equal_set[static_cast<size_t>(idx)]);
  ctx.equal_set = a.equal_set;
  ctx.sigma0 = face.active.size() == a.verts.size() ? kInf : ndg.exposure_slack;
  ctx.opts = &opts;

  MarchResult mr = march(ctx, t0, x0, horizon);
  SingularCurve out;
  out.samples = std::move(mr.samples);
  out.direction = TraceDirection::Forward;
  out.stop = mr.stop;
  out.stop_detail = mr.detail;
  out.active = ctx.active;
  out.hypotheses = ndg;
  return out;
}

SingularCurve trace_backward(const ProblemSpec& spec, double t0, const Vec& x0,
                             const std::vector<std::shared_ptr<BranchModel>>& branches, double q0,
                             const Vec& p0, double horizon, const TraceOptions& opts) {
  require(!branches.empty(), "trace_backward: no branches supplied");
  require(x0.size() == spec.dim(), "trace_backward: dimension mismatch");
  require(p0.size() == spec.dim(), "trace_backward: momentum dimension mismatch");
  require(horizon < t0, "trace_backward: horizon must precede the starting time");

  AnchorScan a = scan_anchor(spec, t0, x0, branches, opts.tol_sing, "trace_backward");

  Vec hp = spec.H->jet(t0, x0, p0, a.u_ref, 1).Hp;
  FaceSelection face = exposed_face(a.verts, -direction_of(1.0, hp), opts.face_tol);
  EnergyMinimum em = minimal_energy_element(spec, t0, x0, face, a.u_ref, opts.energy);
  double anchor_err = std::abs(em.q_bar - q0) + (em.p_bar - p0).norm();
  require(anchor_err <= 1e-8 * (1.0 + std::abs(q0) + p0.norm()),
          "trace_backward: the chosen element is not the minimal-energy element of the face it "
          "exposes (mini-max verification failed)");
  NondegeneracyOptions nopts{opts.face_tol, opts.tol_ri, opts.tol_rank};
  NondegeneracyReport ndg = nondegeneracy_check(face, em, a.verts, nopts);
  require(ndg.geometrically_independent,
          "trace_backward: active branch gradients are geometrically dependent");
  require(ndg.interior, "trace_backward: the minimal-energy element is not interior to its face");
  require(ndg.minimax,
          "trace_backward: the chosen element is not mini-max (a vertex of the "
          "superdifferential, or its face is not exposed against the flow direction)");

  MarchContext ctx;
  ctx.spec = &spec;
  ctx.models = &branches;
  for (int idx : face.active) ctx.active.push_back(a.equal_set[static_cast<size_t>(idx)]);
  ctx.equal_set = a.equal_set;
  ctx.sigma0 = face.active.size() == a.verts.size() ? kInf : ndg.exposure_slack;
  ctx.opts = &opts;

  MarchResult mr = march(ctx, t0, x0, horizon);
  SingularCurve out;
  out.samples = std::move(mr.samples);
  std::reverse(out.samples.begin(), out.samples.end());
  out.direction = TraceDirection::Backward;
  out.stop = mr.stop;
  out.stop_detail = mr.detail;
  out.active = ctx.active;
  out.hypotheses = ndg;
  return out;
}

SingularCurve trace_two_branch(const ProblemSpec& spec, double t0, const Vec& x0,
                               const std::shared_ptr<BranchModel>& branch_a,
                               const std::shared_ptr<BranchModel>& branch_b, double horizon_fwd,
                               double horizon_bwd, const TraceOptions& opts) {
  require(branch_a != nullptr && branch_b != nullptr, "trace_two_branch: null branch");
  require(x0.size() == spec.dim(), "trace_two_branch: dimension mismatch");

  // fork before the first evaluation so each leg owns its warm state
  auto back_a = branch_a->fork();
  auto back_b = branch_b->fork();
  std::vector<std::shared_ptr<BranchModel>> fwd_models{branch_a, branch_b};
  std::vector<std::shared_ptr<BranchModel>> bwd_models{back_a, back_b};

  BranchState sa = branch_a->eval(spec, t0, x0);
  BranchState sb = branch_b->eval(spec, t0, x0);
  require(sa.ok && sb.ok, "trace_two_branch: a branch could not be evaluated at the starting point");
  const double scale = 1.0 + std::min(std::abs(sa.v), std::abs(sb.v));
  require(std::abs(sa.v - sb.v) <= opts.tol_sing * scale,
          "trace_two_branch: the two branch values differ at the starting point (not on the "
          "singular set)");

  std::vector<Vec> verts{sa.gradient_vector(), sb.gradient_vector()};
  FaceSelection face;
  face.vertices = verts;
  face.active = {0, 1};
  EnergyMinimum em = minimal_energy_element(spec, t0, x0, face, sb.v, opts.energy);
  NondegeneracyOptions nopts{opts.face_tol, opts.tol_ri, opts.tol_rank};
  NondegeneracyReport ndg = nondegeneracy_check(face, em, verts, nopts);
  require(ndg.geometrically_independent, "trace_two_branch: the two branch gradients coincide");
  require(ndg.interior,
          "trace_two_branch: the minimal-energy element sits at a vertex of the segment");

  SingularCurve out;
  out.direction = TraceDirection::Bidirectional;
  out.active = {0, 1};
  out.hypotheses = ndg;
  std::string detail;

  if (horizon_bwd < t0) {
    MarchContext ctx;
    ctx.spec = &spec;
    ctx.models = &bwd_models;
    ctx.active = {0, 1};
    ctx.equal_set = {0, 1};
    ctx.opts = &opts;
    MarchResult mr = march(ctx, t0, x0, horizon_bwd);
    out.stop_backward = mr.stop;
    if (!mr.detail.empty()) detail += "backward: " + mr.detail;
    std::reverse(mr.samples.begin(), mr.samples.end());
    out.samples = std::move(mr.samples);
  }
  if (horizon_fwd > t0) {
    MarchContext ctx;
    ctx.spec = &spec;
    ctx.models = &fwd_models;
    ctx.active = {0, 1};
    ctx.equal_set = {0, 1};
    ctx.opts = &opts;
    MarchResult mr = march(ctx, t0, x0, horizon_fwd);
    out.stop = mr.stop;
    if (!mr.detail.empty()) {
      if (!detail.empty()) detail += "; ";
      detail += "forward: " + mr.detail;
    }
    size_t skip = (!out.samples.empty() && !mr.samples.empty()) ? 1 : 0;
    out.samples.insert(out.samples.end(), mr.samples.begin() + static_cast<long>(skip),
                       mr.samples.end());
  }
  if (out.samples.empty()) {
    MarchContext ctx;
    ctx.spec = &spec;
    ctx.models = &fwd_models;
    ctx.active = {0, 1};
    ctx.equal_set = {0, 1};
    ctx.opts = &opts;
    MarchResult mr = march(ctx, t0, x0, t0);
    out.samples = std::move(mr.samples);
  }
  out.stop_detail = detail;
  return out;
}

SingularCurve trace_two_branch(const ProblemSpec& spec, double t0, const Vec& x0,
                               double horizon_fwd, double horizon_bwd, const TraceOptions& opts) {
  ClassifyOptions copts;
  copts.shoot = opts.shoot;
  copts.tol_conj = opts.tol_conj;
  Classification cls = classify_point(spec, t0, x0, copts);
  require(cls.type == PointClass::IrregularOnly,
          std::string("trace_two_branch: starting point classifies as ") + to_string(cls.type) +
              ", need two crossing nondegenerate branches");
  require(cls.k == 2, "trace_two_branch: expected exactly two branches, found " +
                          std::to_string(cls.k));
  auto lbs = local_branches(spec, t0, x0, cls);
  require(lbs.size() == 2, "trace_two_branch: branch extraction did not yield two sheets");
  return trace_two_branch(spec, t0, x0, shooting_branch(lbs[0].seed, opts.shoot),
                          shooting_branch(lbs[1].seed, opts.shoot), horizon_fwd, horizon_bwd,
                          opts);
}

// ---------------------------------------------------------------------------
// Minimax anchor enumeration

std::vector<MinimaxCandidate> minimax_candidates(const ProblemSpec& spec, double t, const Vec& x,
                                                 const std::vector<Vec>& vertices, double u_ref,
                                                 const EnergyOptions& opts, double face_tol) {
  const int k = static_cast<int>(vertices.size());
  require(k >= 2, "minimax_candidates: need at least two vertices");
  require(k <= 8, "minimax_candidates: more than 8 vertices");

  std::vector<MinimaxCandidate> out;
  for (int mask = 1; mask < (1 << k); ++mask) {
    if (__builtin_popcount(static_cast<unsigned>(mask)) < 2) continue;
    FaceSelection face;
    face.vertices = vertices;
    for (int b = 0; b < k; ++b)
      if (mask & (1 << b)) face.active.push_back(b);
    EnergyMinimum em;
    try {
      em = minimal_energy_element(spec, t, x, face, u_ref, opts);
    } catch (const PreconditionError&) {
      continue;
    }
    if (em.weights.maxCoeff() > 1.0 - opts.tol_ri) continue;  // effectively a vertex
    FaceSelection ep = exposed_face(vertices, -direction_of(1.0, em.v_bar), face_tol);
    if (!same_vertex_set(face.vertices, face.active, vertices, ep.active)) continue;
    bool dup = false;
    for (const auto& c : out) {
      if ((c.em.p_bar - em.p_bar).norm() <= 1e-10 * (1.0 + em.p_bar.norm()) &&
          std::abs(c.em.q_bar - em.q_bar) <= 1e-10 * (1.0 + std::abs(em.q_bar)))
        dup = true;
    }
    if (dup) continue;
    out.push_back(MinimaxCandidate{std::move(face), std::move(em)});
  }
  return out;
}

}  // namespace hjc
