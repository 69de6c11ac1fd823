#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "hjc/types.hpp"

namespace hjc {

// Derivative bundle of H(t,x,p,u) up to second order. Mixed blocks follow the
// convention Hpx(i,j) = d2H/dp_i dx_j, so dH_p/dx = Hpx as a matrix acting on
// column increments in x. Hxp is its transpose and is not stored.
struct HamiltonianJet {
  double value = 0.0;
  Vec Hp, Hx;
  double Hu = 0.0;
  Mat Hpp, Hpx, Hxx;
  Vec Hpu, Hxu;
  double Huu = 0.0;
  int order = 0;
};

// Same layout for L(t,x,v,u); Lvx(i,j) = d2L/dv_i dx_j.
struct LagrangianJet {
  double value = 0.0;
  Vec Lv, Lx;
  double Lu = 0.0;
  Mat Lvv, Lvx, Lxx;
  Vec Lvu, Lxu;
  double Luu = 0.0;
  int order = 0;
};

class Hamiltonian {
 public:
  virtual ~Hamiltonian() = default;
  virtual int dim() const = 0;
  // order in {0,1,2}; blocks above the requested order are left empty.
  virtual HamiltonianJet jet(double t, const Vec& x, const Vec& p, double u, int order) const = 0;
  double value(double t, const Vec& x, const Vec& p, double u) const {
    return jet(t, x, p, u, 0).value;
  }
};

class Lagrangian {
 public:
  virtual ~Lagrangian() = default;
  virtual int dim() const = 0;
  virtual LagrangianJet jet(double t, const Vec& x, const Vec& v, double u, int order) const = 0;
  double value(double t, const Vec& x, const Vec& v, double u) const {
    return jet(t, x, v, u, 0).value;
  }
};

class InitialDatum {
 public:
  virtual ~InitialDatum() = default;
  virtual int dim() const = 0;
  virtual double value(const Vec& x) const = 0;
  virtual Vec gradient(const Vec& x) const = 0;
  virtual Mat hessian(const Vec& x) const = 0;
};

enum class DerivativeMode { ClosedForm, FiniteDifference };

// One well-posed problem instance: dynamics H, its dual running cost L, and a
// smooth initial datum, all with the same state dimension.
struct ProblemSpec {
  std::shared_ptr<const Hamiltonian> H;
  std::shared_ptr<const Lagrangian> L;
  std::shared_ptr<const InitialDatum> u0;
  int smoothness_order = 4;
  DerivativeMode mode = DerivativeMode::ClosedForm;
  double fd_step = 1e-5;  // base step, scaled by 1+|component| per argument

  int dim() const { return H->dim(); }
};

// ---------------------------------------------------------------------------
// Concrete families

// H = |p|^2/2 + discount*u. discount = 0 gives the undiscounted quadratic.
class QuadraticHamiltonian final : public Hamiltonian {
 public:
  QuadraticHamiltonian(int n, double discount) : n_(n), discount_(discount) {}
  int dim() const override { return n_; }
  HamiltonianJet jet(double t, const Vec& x, const Vec& p, double u, int order) const override;
  double discount() const { return discount_; }

 private:
  int n_;
  double discount_;
};

// L = |v|^2/2 - discount*u, the exact dual of QuadraticHamiltonian.
class QuadraticLagrangian final : public Lagrangian {
 public:
  QuadraticLagrangian(int n, double discount) : n_(n), discount_(discount) {}
  int dim() const override { return n_; }
  LagrangianJet jet(double t, const Vec& x, const Vec& v, double u, int order) const override;

 private:
  int n_;
  double discount_;
};

// One monomial c(t) * prod x_i^ax_i * prod p_i^ap_i * u^au with polynomial
// time coefficient c(t) = sum_k coef_t[k] t^k.
struct PolyTerm {
  std::vector<double> coef_t;
  std::vector<int> ax;
  std::vector<int> ap;
  int au = 0;
};

class PolynomialHamiltonian final : public Hamiltonian {
 public:
  PolynomialHamiltonian(int n, std::vector<PolyTerm> terms);
  int dim() const override { return n_; }
  HamiltonianJet jet(double t, const Vec& x, const Vec& p, double u, int order) const override;

 private:
  int n_;
  std::vector<PolyTerm> terms_;
};

// Legendre transform of an arbitrary strictly convex-in-p Hamiltonian:
// L(t,x,v,u) = p*.v - H(t,x,p*,u) with H_p(p*) = v, solved by Newton.
// Second-order blocks come from the implicit function theorem.
class LegendreLagrangian final : public Lagrangian {
 public:
  explicit LegendreLagrangian(std::shared_ptr<const Hamiltonian> H, double tol = 1e-12,
                              int max_iter = 60)
      : H_(std::move(H)), tol_(tol), max_iter_(max_iter) {}
  int dim() const override { return H_->dim(); }
  LagrangianJet jet(double t, const Vec& x, const Vec& v, double u, int order) const override;
  // The maximizing momentum; exposed for tests.
  Vec dual_point(double t, const Vec& x, const Vec& v, double u) const;

 private:
  std::shared_ptr<const Hamiltonian> H_;
  double tol_;
  int max_iter_;
};

// ---------------------------------------------------------------------------
// Initial data

class LinearDatum final : public InitialDatum {
 public:
  explicit LinearDatum(Vec a, double c = 0.0) : a_(std::move(a)), c_(c) {}
  int dim() const override { return static_cast<int>(a_.size()); }
  double value(const Vec& x) const override { return a_.dot(x) + c_; }
  Vec gradient(const Vec&) const override { return a_; }
  Mat hessian(const Vec&) const override { return Mat::Zero(a_.size(), a_.size()); }

 private:
  Vec a_;
  double c_;
};

// u0(x) = c0 + a.x + x^T Q x / 2.
class QuadraticDatum final : public InitialDatum {
 public:
  QuadraticDatum(double c0, Vec a, Mat Q) : c0_(c0), a_(std::move(a)), Q_(std::move(Q)) {}
  int dim() const override { return static_cast<int>(a_.size()); }
  double value(const Vec& x) const override { return c0_ + a_.dot(x) + 0.5 * x.dot(Q_ * x); }
  Vec gradient(const Vec& x) const override { return a_ + Q_ * x; }
  Mat hessian(const Vec&) const override { return Q_; }

 private:
  double c0_;
  Vec a_;
  Mat Q_;
};

// Smooth concave double well u0(x) = -log(e^x + e^-x), one dimensional.
// Slopes saturate at -tanh(x), curvature -sech^2(x); focusing seed at 0.
class LogCoshDatum final : public InitialDatum {
 public:
  int dim() const override { return 1; }
  double value(const Vec& x) const override;
  Vec gradient(const Vec& x) const override;
  Mat hessian(const Vec& x) const override;
};

class PolynomialDatum final : public InitialDatum {
 public:
  struct Term {
    double coef;
    std::vector<int> ax;
  };
  PolynomialDatum(int n, std::vector<Term> terms) : n_(n), terms_(std::move(terms)) {}
  int dim() const override { return n_; }
  double value(const Vec& x) const override;
  Vec gradient(const Vec& x) const override;
  Mat hessian(const Vec& x) const override;

 private:
  int n_;
  std::vector<Term> terms_;
};

// ---------------------------------------------------------------------------
// Finite-difference fallbacks, used both as the derivative mode for custom
// value-only evaluators and as an independent cross-check on closed forms.

using ScalarField4 = std::function<double(double, const Vec&, const Vec&, double)>;

class FiniteDifferenceHamiltonian final : public Hamiltonian {
 public:
  FiniteDifferenceHamiltonian(int n, ScalarField4 f, double base_step = 1e-5)
      : n_(n), f_(std::move(f)), h_(base_step) {}
  int dim() const override { return n_; }
  HamiltonianJet jet(double t, const Vec& x, const Vec& p, double u, int order) const override;

 private:
  int n_;
  ScalarField4 f_;
  double h_;
};

class FiniteDifferenceDatum final : public InitialDatum {
 public:
  FiniteDifferenceDatum(int n, std::function<double(const Vec&)> f, double base_step = 1e-5)
      : n_(n), f_(std::move(f)), h_(base_step) {}
  int dim() const override { return n_; }
  double value(const Vec& x) const override { return f_(x); }
  Vec gradient(const Vec& x) const override;
  Mat hessian(const Vec& x) const override;

 private:
  int n_;
  std::function<double(const Vec&)> f_;
  double h_;
};

// ---------------------------------------------------------------------------
// Family constructors

ProblemSpec make_classical_quadratic(std::shared_ptr<const InitialDatum> u0);
ProblemSpec make_contact_discounted(double discount, std::shared_ptr<const InitialDatum> u0);
// H = p^2/2 with u0 = -curvature*|x|^2/2; characteristics cross at 1/curvature.
ProblemSpec make_focusing(int n, double curvature);
ProblemSpec make_custom_polynomial(int n, std::vector<PolyTerm> h_terms,
                                   std::vector<PolynomialDatum::Term> u0_terms);

std::shared_ptr<const InitialDatum> linear_datum(const Vec& a, double c = 0.0);
std::shared_ptr<const InitialDatum> quadratic_datum(double c0, const Vec& a, const Mat& Q);
std::shared_ptr<const InitialDatum> constant_datum(int n, double c);
std::shared_ptr<const InitialDatum> log_cosh_datum();
// Lower envelope min_i(a_i . x + c_i); nonsmooth, for the grid solver and
// sheet-based singular tracing rather than the shooting pipeline.
std::shared_ptr<const InitialDatum> min_linear_datum(std::vector<Vec> a, std::vector<double> c);

// Replaces all derivative information by central differences of the stored
// value evaluators; jets keep the same layout.
ProblemSpec with_fd_derivatives(const ProblemSpec& spec);

// ---------------------------------------------------------------------------
// Duality diagnostics

struct LegendreResidual {
  double value_residual = 0.0;     // |L(H_p) - (p.H_p - H)|
  double gradient_residual = 0.0;  // max-norm of L_v(H_p) - p
};

// Checks the Fenchel identity at the dual velocity v* = H_p(t,x,p,u).
// Requires H_pp positive definite at the query (checked by factorization).
LegendreResidual legendre_residual(const ProblemSpec& spec, double t, const Vec& x, const Vec& p,
                                   double u);

}  // namespace hjc
