#include "hjc/problem.hpp"

#include <Eigen/Cholesky>
#include <array>
#include <cmath>

namespace hjc {

namespace {

void size_jet(HamiltonianJet& j, int n, int order) {
  j.order = order;
  if (order >= 1) {
    j.Hp = Vec::Zero(n);
    j.Hx = Vec::Zero(n);
    j.Hu = 0.0;
  }
  if (order >= 2) {
    j.Hpp = Mat::Zero(n, n);
    j.Hpx = Mat::Zero(n, n);
    j.Hxx = Mat::Zero(n, n);
    j.Hpu = Vec::Zero(n);
    j.Hxu = Vec::Zero(n);
    j.Huu = 0.0;
  }
}

void size_jet(LagrangianJet& j, int n, int order) {
  j.order = order;
  if (order >= 1) {
    j.Lv = Vec::Zero(n);
    j.Lx = Vec::Zero(n);
    j.Lu = 0.0;
  }
  if (order >= 2) {
    j.Lvv = Mat::Zero(n, n);
    j.Lvx = Mat::Zero(n, n);
    j.Lxx = Mat::Zero(n, n);
    j.Lvu = Vec::Zero(n);
    j.Lxu = Vec::Zero(n);
    j.Luu = 0.0;
  }
}

}  // namespace

HamiltonianJet QuadraticHamiltonian::jet(double, const Vec&, const Vec& p, double u,
                                         int order) const {
  HamiltonianJet j;
  size_jet(j, n_, order);
  j.value = 0.5 * p.squaredNorm() + discount_ * u;
  if (order >= 1) {
    j.Hp = p;
    j.Hu = discount_;
  }
  if (order >= 2) j.Hpp = Mat::Identity(n_, n_);
  return j;
}

LagrangianJet QuadraticLagrangian::jet(double, const Vec&, const Vec& v, double u,
                                       int order) const {
  LagrangianJet j;
  size_jet(j, n_, order);
  j.value = 0.5 * v.squaredNorm() - discount_ * u;
  if (order >= 1) {
    j.Lv = v;
    j.Lu = -discount_;
  }
  if (order >= 2) j.Lvv = Mat::Identity(n_, n_);
  return j;
}

// ---------------------------------------------------------------------------
// Polynomial family

PolynomialHamiltonian::PolynomialHamiltonian(int n, std::vector<PolyTerm> terms)
    : n_(n), terms_(std::move(terms)) {
  for (const auto& term : terms_) {
    require(static_cast<int>(term.ax.size()) == n && static_cast<int>(term.ap.size()) == n,
            "polynomial term exponent lists must match the state dimension");
    require(!term.coef_t.empty(), "polynomial term needs at least one time coefficient");
  }
}

namespace {

double poly_eval(const std::vector<double>& c, double t) {
  double acc = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * t + *it;
  return acc;
}

// x^k and the first two derivative factors k x^(k-1), k(k-1) x^(k-2).
void power3(double x, int k, double out[3]) {
  auto ipow = [](double b, int e) {
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
  };
  out[0] = ipow(x, k);
  out[1] = k >= 1 ? k * ipow(x, k - 1) : 0.0;
  out[2] = k >= 2 ? double(k) * (k - 1) * ipow(x, k - 2) : 0.0;
}

}  // namespace

HamiltonianJet PolynomialHamiltonian::jet(double t, const Vec& x, const Vec& p, double u,
                                          int order) const {
  HamiltonianJet j;
  size_jet(j, n_, order);
  // Scratch for the per-coordinate power factors of one term.
  std::vector<std::array<double, 3>> fx(n_), fp(n_);
  for (const auto& term : terms_) {
    double c = poly_eval(term.coef_t, t);
    if (c == 0.0) continue;
    double fu[3];
    power3(u, term.au, fu);
    double prod_x = 1.0, prod_p = 1.0;
    for (int i = 0; i < n_; ++i) {
      power3(x[i], term.ax[i], fx[i].data());
      power3(p[i], term.ap[i], fp[i].data());
      prod_x *= fx[i][0];
      prod_p *= fp[i][0];
    }
    double base = c * prod_x * prod_p * fu[0];
    j.value += base;
    if (order < 1) continue;
    // First partials: replace one factor by its derivative.
    auto dx1 = [&](int i) {
      double r = c * fu[0] * prod_p;
      for (int k = 0; k < n_; ++k) r *= (k == i) ? fx[k][1] : fx[k][0];
      return r;
    };
    auto dp1 = [&](int i) {
      double r = c * fu[0] * prod_x;
      for (int k = 0; k < n_; ++k) r *= (k == i) ? fp[k][1] : fp[k][0];
      return r;
    };
    for (int i = 0; i < n_; ++i) {
      j.Hx[i] += dx1(i);
      j.Hp[i] += dp1(i);
    }
    j.Hu += c * prod_x * prod_p * fu[1];
    if (order < 2) continue;
    for (int i = 0; i < n_; ++i) {
      for (int k = 0; k < n_; ++k) {
        // d2/dp_i dp_k and d2/dx_i dx_k
        double rpp = c * fu[0] * prod_x;
        double rxx = c * fu[0] * prod_p;
        double rpx = c * fu[0];
        for (int m = 0; m < n_; ++m) {
          double gp = fp[m][0], gx = fx[m][0];
          if (i == k) {
            if (m == i) gp = fp[m][2];
          } else {
            if (m == i || m == k) gp = fp[m][1];
          }
          rpp *= gp;
          if (i == k) {
            if (m == i) gx = fx[m][2];
          } else {
            if (m == i || m == k) gx = fx[m][1];
          }
          rxx *= gx;
        }
        for (int m = 0; m < n_; ++m) {
          rpx *= (m == i) ? fp[m][1] : fp[m][0];
          rpx *= (m == k) ? fx[m][1] : fx[m][0];
        }
        j.Hpp(i, k) += rpp;
        j.Hxx(i, k) += rxx;
        j.Hpx(i, k) += rpx;
      }
      double rpu = c * prod_x * fu[1];
      double rxu = c * prod_p * fu[1];
      for (int m = 0; m < n_; ++m) {
        rpu *= (m == i) ? fp[m][1] : fp[m][0];
        rxu *= (m == i) ? fx[m][1] : fx[m][0];
      }
      j.Hpu[i] += rpu;
      j.Hxu[i] += rxu;
    }
    j.Huu += c * prod_x * prod_p * fu[2];
  }
  return j;
}

// ---------------------------------------------------------------------------
// Legendre transform

Vec LegendreLagrangian::dual_point(double t, const Vec& x, const Vec& v, double u) const {
  // Solve H_p(t,x,p,u) = v. Warm start at p = v, exact for |p|^2/2 cores.
  Vec p = v;
  for (int it = 0; it < max_iter_; ++it) {
    HamiltonianJet j = H_->jet(t, x, p, u, 2);
    Vec r = j.Hp - v;
    if (r.lpNorm<Eigen::Infinity>() <= tol_ * (1.0 + v.lpNorm<Eigen::Infinity>())) return p;
    Eigen::LLT<Mat> llt(j.Hpp);
    if (llt.info() != Eigen::Success)
      throw NumericalError("legendre transform: H_pp not positive definite at dual solve");
    Vec step = llt.solve(-r);
    // Backtrack on the residual norm; the dual problem is strongly convex so
    // plain damping is enough.
    double rn = r.norm();
    double alpha = 1.0;
    for (int half = 0; half < 30; ++half) {
      Vec cand = p + alpha * step;
      Vec rc = H_->jet(t, x, cand, u, 1).Hp - v;
      if (rc.norm() <= (1.0 - 0.25 * alpha) * rn) {
        p = cand;
        break;
      }
      alpha *= 0.5;
      if (half == 29) throw NumericalError("legendre transform: damped Newton stalled");
    }
  }
  throw NumericalError("legendre transform: dual Newton did not converge");
}

LagrangianJet LegendreLagrangian::jet(double t, const Vec& x, const Vec& v, double u,
                                      int order) const {
  int n = dim();
  Vec p = dual_point(t, x, v, u);
  HamiltonianJet h = H_->jet(t, x, p, u, 2);
  LagrangianJet j;
  size_jet(j, n, order);
  j.value = p.dot(v) - h.value;
  if (order >= 1) {
    j.Lv = p;
    j.Lx = -h.Hx;
    j.Lu = -h.Hu;
  }
  if (order >= 2) {
    Eigen::LLT<Mat> llt(h.Hpp);
    if (llt.info() != Eigen::Success)
      throw NumericalError("legendre transform: H_pp not positive definite at jet");
    Mat Hpp_inv = llt.solve(Mat::Identity(n, n));
    // Sensitivities of the dual point: dp*/dx = -Hpp^-1 Hpx, dp*/du = -Hpp^-1 Hpu.
    Mat dp_dx = -llt.solve(h.Hpx);
    Vec dp_du = -llt.solve(h.Hpu);
    j.Lvv = Hpp_inv;
    j.Lvx = dp_dx;           // row i: d(L_v)_i/dx = d(p*)_i/dx
    j.Lvu = dp_du;
    j.Lxx = -h.Hxx - h.Hpx.transpose() * dp_dx;
    j.Lxu = -h.Hxu - h.Hpx.transpose() * dp_du;
    j.Luu = -h.Huu - h.Hpu.dot(dp_du);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Initial data

double LogCoshDatum::value(const Vec& x) const {
  // -log(e^z + e^-z) evaluated stably: -(|z| + log1p(exp(-2|z|))).
  double z = x[0];
  double a = std::abs(z);
  return -(a + std::log1p(std::exp(-2.0 * a)));
}

Vec LogCoshDatum::gradient(const Vec& x) const {
  Vec g(1);
  g[0] = -std::tanh(x[0]);
  return g;
}

Mat LogCoshDatum::hessian(const Vec& x) const {
  Mat h(1, 1);
  double c = std::cosh(x[0]);
  h(0, 0) = -1.0 / (c * c);
  return h;
}

double PolynomialDatum::value(const Vec& x) const {
  double acc = 0.0;
  for (const auto& term : terms_) {
    double r = term.coef;
    for (int i = 0; i < n_; ++i) {
      double f[3];
      power3(x[i], term.ax[i], f);
      r *= f[0];
    }
    acc += r;
  }
  return acc;
}

Vec PolynomialDatum::gradient(const Vec& x) const {
  Vec g = Vec::Zero(n_);
  for (const auto& term : terms_) {
    for (int i = 0; i < n_; ++i) {
      double r = term.coef;
      for (int k = 0; k < n_; ++k) {
        double f[3];
        power3(x[k], term.ax[k], f);
        r *= (k == i) ? f[1] : f[0];
      }
      g[i] += r;
    }
  }
  return g;
}

Mat PolynomialDatum::hessian(const Vec& x) const {
  Mat h = Mat::Zero(n_, n_);
  for (const auto& term : terms_) {
    for (int i = 0; i < n_; ++i) {
      for (int k = 0; k < n_; ++k) {
        double r = term.coef;
        for (int m = 0; m < n_; ++m) {
          double f[3];
          power3(x[m], term.ax[m], f);
          if (i == k)
            r *= (m == i) ? f[2] : f[0];
          else
            r *= (m == i || m == k) ? f[1] : f[0];
        }
        h(i, k) += r;
      }
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Finite differences

namespace {

double scaled_step(double base, double magnitude) { return base * (1.0 + std::abs(magnitude)); }

}  // namespace

HamiltonianJet FiniteDifferenceHamiltonian::jet(double t, const Vec& x, const Vec& p, double u,
                                                int order) const {
  HamiltonianJet j;
  size_jet(j, n_, order);
  j.value = f_(t, x, p, u);
  if (order < 1) return j;
  auto fx = [&](const Vec& xx, const Vec& pp, double uu) { return f_(t, xx, pp, uu); };
  for (int i = 0; i < n_; ++i) {
    double hx = scaled_step(h_, x[i]);
    double hp = scaled_step(h_, p[i]);
    Vec xp = x, xm = x, pp = p, pm = p;
    xp[i] += hx;
    xm[i] -= hx;
    pp[i] += hp;
    pm[i] -= hp;
    j.Hx[i] = (fx(xp, p, u) - fx(xm, p, u)) / (2 * hx);
    j.Hp[i] = (fx(x, pp, u) - fx(x, pm, u)) / (2 * hp);
  }
  double hu = scaled_step(h_, u);
  j.Hu = (fx(x, p, u + hu) - fx(x, p, u - hu)) / (2 * hu);
  if (order < 2) return j;
  double base = f_(t, x, p, u);
  for (int i = 0; i < n_; ++i) {
    double hpi = scaled_step(h_, p[i]);
    double hxi = scaled_step(h_, x[i]);
    {
      Vec pp = p, pm = p;
      pp[i] += hpi;
      pm[i] -= hpi;
      j.Hpp(i, i) = (fx(x, pp, u) - 2 * base + fx(x, pm, u)) / (hpi * hpi);
      Vec xp = x, xm = x;
      xp[i] += hxi;
      xm[i] -= hxi;
      j.Hxx(i, i) = (fx(xp, p, u) - 2 * base + fx(xm, p, u)) / (hxi * hxi);
    }
    for (int k = 0; k < n_; ++k) {
      if (k != i) {
        double hpk = scaled_step(h_, p[k]);
        Vec ppp = p, ppm = p, pmp = p, pmm = p;
        ppp[i] += hpi;
        ppp[k] += hpk;
        ppm[i] += hpi;
        ppm[k] -= hpk;
        pmp[i] -= hpi;
        pmp[k] += hpk;
        pmm[i] -= hpi;
        pmm[k] -= hpk;
        if (k > i) {
          double v = (fx(x, ppp, u) - fx(x, ppm, u) - fx(x, pmp, u) + fx(x, pmm, u)) /
                     (4 * hpi * hpk);
          j.Hpp(i, k) = v;
          j.Hpp(k, i) = v;
        }
        double hxk = scaled_step(h_, x[k]);
        Vec xpp = x, xpm = x, xmp = x, xmm = x;
        xpp[i] += hxi;
        xpp[k] += hxk;
        xpm[i] += hxi;
        xpm[k] -= hxk;
        xmp[i] -= hxi;
        xmp[k] += hxk;
        xmm[i] -= hxi;
        xmm[k] -= hxk;
        if (k > i) {
          double v = (fx(xpp, p, u) - fx(xpm, p, u) - fx(xmp, p, u) + fx(xmm, p, u)) /
                     (4 * hxi * hxk);
          j.Hxx(i, k) = v;
          j.Hxx(k, i) = v;
        }
      }
      // Mixed p_i x_k block, full matrix.
      double hxk = scaled_step(h_, x[k]);
      Vec pp = p, pm = p, xp = x, xm = x;
      pp[i] += hpi;
      pm[i] -= hpi;
      xp[k] += hxk;
      xm[k] -= hxk;
      j.Hpx(i, k) =
          (fx(xp, pp, u) - fx(xm, pp, u) - fx(xp, pm, u) + fx(xm, pm, u)) / (4 * hpi * hxk);
    }
    double hu2 = scaled_step(h_, u);
    Vec pp = p, pm = p, xp = x, xm = x;
    pp[i] += hpi;
    pm[i] -= hpi;
    xp[i] += hxi;
    xm[i] -= hxi;
    j.Hpu[i] = (fx(x, pp, u + hu2) - fx(x, pm, u + hu2) - fx(x, pp, u - hu2) +
                fx(x, pm, u - hu2)) /
               (4 * hpi * hu2);
    j.Hxu[i] = (fx(xp, p, u + hu2) - fx(xm, p, u + hu2) - fx(xp, p, u - hu2) +
                fx(xm, p, u - hu2)) /
               (4 * hxi * hu2);
  }
  double huu = scaled_step(h_, u);
  j.Huu = (f_(t, x, p, u + huu) - 2 * base + f_(t, x, p, u - huu)) / (huu * huu);
  return j;
}

Vec FiniteDifferenceDatum::gradient(const Vec& x) const {
  Vec g(n_);
  for (int i = 0; i < n_; ++i) {
    double h = scaled_step(h_, x[i]);
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f_(xp) - f_(xm)) / (2 * h);
  }
  return g;
}

Mat FiniteDifferenceDatum::hessian(const Vec& x) const {
  Mat H(n_, n_);
  double base = f_(x);
  for (int i = 0; i < n_; ++i) {
    double hi = scaled_step(h_, x[i]);
    Vec xp = x, xm = x;
    xp[i] += hi;
    xm[i] -= hi;
    H(i, i) = (f_(xp) - 2 * base + f_(xm)) / (hi * hi);
    for (int k = i + 1; k < n_; ++k) {
      double hk = scaled_step(h_, x[k]);
      Vec a = x, b = x, c = x, d = x;
      a[i] += hi;
      a[k] += hk;
      b[i] += hi;
      b[k] -= hk;
      c[i] -= hi;
      c[k] += hk;
      d[i] -= hi;
      d[k] -= hk;
      double v = (f_(a) - f_(b) - f_(c) + f_(d)) / (4 * hi * hk);
      H(i, k) = v;
      H(k, i) = v;
    }
  }
  return H;
}

// ---------------------------------------------------------------------------
// Families

ProblemSpec make_classical_quadratic(std::shared_ptr<const InitialDatum> u0) {
  require(u0 != nullptr, "classical_quadratic: initial datum required");
  int n = u0->dim();
  ProblemSpec spec;
  spec.H = std::make_shared<QuadraticHamiltonian>(n, 0.0);
  spec.L = std::make_shared<QuadraticLagrangian>(n, 0.0);
  spec.u0 = std::move(u0);
  return spec;
}

ProblemSpec make_contact_discounted(double discount, std::shared_ptr<const InitialDatum> u0) {
  require(discount > 0.0, "contact_discounted: discount must be positive");
  require(u0 != nullptr, "contact_discounted: initial datum required");
  int n = u0->dim();
  ProblemSpec spec;
  spec.H = std::make_shared<QuadraticHamiltonian>(n, discount);
  spec.L = std::make_shared<QuadraticLagrangian>(n, discount);
  spec.u0 = std::move(u0);
  return spec;
}

ProblemSpec make_focusing(int n, double curvature) {
  require(curvature > 0.0, "focusing: curvature must be positive");
  ProblemSpec spec;
  spec.H = std::make_shared<QuadraticHamiltonian>(n, 0.0);
  spec.L = std::make_shared<QuadraticLagrangian>(n, 0.0);
  spec.u0 = std::make_shared<QuadraticDatum>(0.0, Vec::Zero(n), Mat(-curvature * Mat::Identity(n, n)));
  return spec;
}

ProblemSpec make_custom_polynomial(int n, std::vector<PolyTerm> h_terms,
                                   std::vector<PolynomialDatum::Term> u0_terms) {
  ProblemSpec spec;
  auto H = std::make_shared<PolynomialHamiltonian>(n, std::move(h_terms));
  spec.H = H;
  spec.L = std::make_shared<LegendreLagrangian>(H);
  spec.u0 = std::make_shared<PolynomialDatum>(n, std::move(u0_terms));
  return spec;
}

std::shared_ptr<const InitialDatum> linear_datum(const Vec& a, double c) {
  return std::make_shared<LinearDatum>(a, c);
}

std::shared_ptr<const InitialDatum> quadratic_datum(double c0, const Vec& a, const Mat& Q) {
  return std::make_shared<QuadraticDatum>(c0, a, Q);
}

std::shared_ptr<const InitialDatum> constant_datum(int n, double c) {
  return std::make_shared<LinearDatum>(Vec::Zero(n), c);
}

std::shared_ptr<const InitialDatum> log_cosh_datum() { return std::make_shared<LogCoshDatum>(); }

namespace {

// Lower envelope of affine functions. Nonsmooth along piece interfaces, so it
// serves the grid solver and the analytic sheet tracers, not the shooting
// pipeline; the gradient returns the slope of the attaining piece.
class MinLinearDatum final : public InitialDatum {
 public:
  MinLinearDatum(std::vector<Vec> a, std::vector<double> c)
      : a_(std::move(a)), c_(std::move(c)) {
    require(!a_.empty() && a_.size() == c_.size(),
            "min_linear_datum: need matching, nonempty slope and offset lists");
    for (const Vec& ai : a_)
      require(ai.size() == a_[0].size(), "min_linear_datum: inconsistent slope dimensions");
  }
  int dim() const override { return static_cast<int>(a_[0].size()); }
  double value(const Vec& x) const override {
    double best = a_[0].dot(x) + c_[0];
    for (size_t i = 1; i < a_.size(); ++i) best = std::min(best, a_[i].dot(x) + c_[i]);
    return best;
  }
  Vec gradient(const Vec& x) const override {
    size_t k = 0;
    double best = a_[0].dot(x) + c_[0];
    for (size_t i = 1; i < a_.size(); ++i) {
      const double v = a_[i].dot(x) + c_[i];
      if (v < best) {
        best = v;
        k = i;
      }
    }
    return a_[k];
  }
  Mat hessian(const Vec& x) const override { return Mat::Zero(x.size(), x.size()); }

 private:
  std::vector<Vec> a_;
  std::vector<double> c_;
};

}  // namespace

std::shared_ptr<const InitialDatum> min_linear_datum(std::vector<Vec> a, std::vector<double> c) {
  return std::make_shared<MinLinearDatum>(std::move(a), std::move(c));
}

ProblemSpec with_fd_derivatives(const ProblemSpec& spec) {
  ProblemSpec out = spec;
  auto H = spec.H;
  auto u0 = spec.u0;
  out.H = std::make_shared<FiniteDifferenceHamiltonian>(
      spec.dim(),
      [H](double t, const Vec& x, const Vec& p, double u) { return H->value(t, x, p, u); },
      spec.fd_step);
  out.u0 = std::make_shared<FiniteDifferenceDatum>(
      spec.dim(), [u0](const Vec& x) { return u0->value(x); }, spec.fd_step);
  out.mode = DerivativeMode::FiniteDifference;
  return out;
}

LegendreResidual legendre_residual(const ProblemSpec& spec, double t, const Vec& x, const Vec& p,
                                   double u) {
  HamiltonianJet h = spec.H->jet(t, x, p, u, 2);
  Eigen::LLT<Mat> llt(h.Hpp);
  if (llt.info() != Eigen::Success)
    throw NumericalError("legendre_residual: H_pp not positive definite at query");
  Vec v = h.Hp;
  LagrangianJet l = spec.L->jet(t, x, v, u, 1);
  LegendreResidual r;
  r.value_residual = std::abs(l.value - (p.dot(v) - h.value));
  r.gradient_residual = (l.Lv - p).lpNorm<Eigen::Infinity>();
  return r;
}

}  // namespace hjc
