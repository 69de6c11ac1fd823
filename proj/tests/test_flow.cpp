#include "hjc/flow.hpp"

#include <cmath>

#include "doctest.h"

using namespace hjc;

namespace {

Vec vec1(double a) {
  Vec v(1);
  v[0] = a;
  return v;
}

// Closed forms for the straight-characteristic families, derived by solving
// the characteristic system by hand; used as independent oracles.
struct ContactClosedForm {
  double lambda, a, z;
  double X(double s) const { return z + a * (1.0 - std::exp(-lambda * s)) / lambda; }
  double P(double s) const { return a * std::exp(-lambda * s); }
  double U(double s) const {
    return std::exp(-lambda * s) * (a * z + a * a * (1.0 - std::exp(-lambda * s)) / (2 * lambda));
  }
};

}  // namespace

TEST_CASE("classical linear-datum characteristics are straight lines") {
  auto spec = make_classical_quadratic(linear_datum(vec1(1.0)));
  CharTrajectory traj = integrate_lie(spec, vec1(0.0), 2.0, {});
  // Polynomial-in-time solution, so RK4 reproduces it to rounding.
  CHECK(traj.X.back()[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(traj.P.back()[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(traj.U.back() == doctest::Approx(1.0).epsilon(1e-14));
  for (size_t j = 0; j < traj.P.size(); ++j) CHECK(std::abs(traj.P[j][0] - 1.0) <= 1e-13);
}

TEST_CASE("discounted characteristics match the exponential closed form") {
  ContactClosedForm cf{1.0, 1.0, 0.0};
  auto spec = make_contact_discounted(cf.lambda, linear_datum(vec1(cf.a)));
  CharTrajectory traj = integrate_lie(spec, vec1(cf.z), 1.0, {});
  CHECK(traj.P.back()[0] == doctest::Approx(cf.P(1.0)).epsilon(1e-10));
  CHECK(traj.X.back()[0] == doctest::Approx(cf.X(1.0)).epsilon(1e-10));
  CHECK(traj.U.back() == doctest::Approx(cf.U(1.0)).epsilon(1e-10));
  CHECK(lie_defect(spec, traj) <= 1e-8);
}

TEST_CASE("partial trailing step lands exactly on the horizon") {
  ContactClosedForm cf{1.0, 1.0, 0.3};
  auto spec = make_contact_discounted(cf.lambda, linear_datum(vec1(cf.a)));
  CharTrajectory traj = integrate_lie(spec, vec1(cf.z), 0.995, {});
  CHECK(traj.times.back() == doctest::Approx(0.995).epsilon(1e-15));
  CHECK(traj.X.back()[0] == doctest::Approx(cf.X(0.995)).epsilon(1e-10));
}

TEST_CASE("measured convergence order of the default scheme is at least 3.5") {
  ContactClosedForm cf{1.0, 1.0, 0.0};
  auto spec = make_contact_discounted(cf.lambda, linear_datum(vec1(cf.a)));
  auto endpoint_error = [&](double dt) {
    StepPolicy pol;
    pol.dt = dt;
    CharTrajectory traj = integrate_lie(spec, vec1(cf.z), 1.0, pol);
    return std::abs(traj.U.back() - cf.U(1.0)) + std::abs(traj.X.back()[0] - cf.X(1.0)) +
           std::abs(traj.P.back()[0] - cf.P(1.0));
  };
  double e1 = endpoint_error(0.1), e2 = endpoint_error(0.05);
  double order = std::log2(e1 / e2);
  CHECK(order >= 3.5);
}

TEST_CASE("time symmetry: backward integration returns to the seed") {
  auto spec = make_contact_discounted(1.0, linear_datum(vec1(1.0)));
  Vec z = vec1(0.4);
  CharTrajectory traj = integrate_lie(spec, z, 1.5, {});
  CharState end{traj.times.back(), traj.X.back(), traj.P.back(), traj.U.back()};
  CharState back = integrate_lie_between(spec, end, 0.0, {});
  CHECK(std::abs(back.X[0] - z[0]) <= 1e-7);
  CHECK(std::abs(back.P[0] - spec.u0->gradient(z)[0]) <= 1e-7);
  CHECK(std::abs(back.U - spec.u0->value(z)) <= 1e-7);
}

TEST_CASE("adaptive pair reproduces the fixed-step endpoint") {
  ContactClosedForm cf{1.0, 1.0, 0.0};
  auto spec = make_contact_discounted(cf.lambda, linear_datum(vec1(cf.a)));
  StepPolicy pol;
  pol.adaptive = true;
  pol.dt = 0.05;
  CharTrajectory traj = integrate_lie(spec, vec1(cf.z), 1.0, pol);
  CHECK(traj.X.back()[0] == doctest::Approx(cf.X(1.0)).epsilon(1e-8));
  CHECK(traj.U.back() == doctest::Approx(cf.U(1.0)).epsilon(1e-8));
}

TEST_CASE("variational solve reproduces the focusing seed derivatives") {
  auto spec = make_focusing(1, 1.0);
  VarTrajectory var = integrate_variational(spec, vec1(0.5), 0.25, {});
  CHECK(var.Xz.back()(0, 0) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(var.Pz.back()(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
  // U_z(t) = -z(1-t), the transported initial slope.
  CHECK(var.Uz.back()[0] == doctest::Approx(-0.5 * 0.75).epsilon(1e-12));
}

TEST_CASE("transport identity holds along all built-in families") {
  std::vector<ProblemSpec> specs = {
      make_classical_quadratic(linear_datum(vec1(1.0))),
      make_contact_discounted(1.0, linear_datum(vec1(1.0))),
      make_focusing(1, 1.0),
      make_classical_quadratic(log_cosh_datum()),
  };
  for (const auto& spec : specs) {
    for (double z = -1.5; z <= 1.5; z += 0.75) {
      VarTrajectory var = integrate_variational(spec, vec1(z), 2.0, {});
      CHECK(transport_identity_residual(var) <= 1e-8);
    }
  }
}

TEST_CASE("variational solve agrees with bump-and-difference of the flow") {
  auto spec = make_classical_quadratic(log_cosh_datum());
  double gap = variational_fd_check(spec, vec1(0.6), 1.2, {vec1(1.0)}, 1e-5, {});
  CHECK(gap <= 1e-6);
}

TEST_CASE("joint variational state never vanishes through a conjugate time") {
  auto spec = make_focusing(1, 1.0);
  VarTrajectory var = integrate_variational(spec, vec1(0.5), 1.5, {});
  // X_z crosses zero at t=1 but P_z = -1 keeps the joint state away from 0.
  CHECK(nonvanishing_margin(var, {vec1(1.0)}) >= 0.5);
  double min_abs_xz = 1e300;
  for (const auto& m : var.Xz) min_abs_xz = std::min(min_abs_xz, std::abs(m(0, 0)));
  CHECK(min_abs_xz <= 1e-10);  // grid contains t=1 where X_z = 0
}

TEST_CASE("herglotz residual is small along genuine characteristics") {
  auto contact = make_contact_discounted(1.0, linear_datum(vec1(1.0)));
  HerglotzReport rep = herglotz_residual(contact, integrate_lie(contact, vec1(0.2), 1.0, {}));
  CHECK(rep.equation_residual <= 1e-6);
  CHECK(rep.momentum_residual <= 1e-6);

  auto dwell = make_classical_quadratic(log_cosh_datum());
  HerglotzReport rep2 = herglotz_residual(dwell, integrate_lie(dwell, vec1(0.8), 1.5, {}));
  CHECK(rep2.max_residual() <= 1e-6);
}

TEST_CASE("herglotz residual flags a corrupted momentum") {
  auto spec = make_classical_quadratic(linear_datum(vec1(1.0)));
  CharTrajectory traj = integrate_lie(spec, vec1(0.0), 1.0, {});
  for (auto& p : traj.P) p[0] += 0.1;
  HerglotzReport rep = herglotz_residual(spec, traj);
  CHECK(rep.max_residual() >= 0.05);
}

TEST_CASE("running cost along a straight probe curve") {
  auto spec = make_classical_quadratic(linear_datum(vec1(0.0)));
  SampledCurve curve = SampledCurve::straight(0.0, 1.0, vec1(0.0), vec1(1.0), 11);
  CaratheodoryResult res = caratheodory_solve(spec, curve, 0.0);
  CHECK(res.u.back() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(res.defect <= 1e-8);
}

TEST_CASE("running cost couples to the state for discounted families") {
  // du/ds = v^2/2 - u along a straight line has the closed form
  // u(s) = v^2/2 + (u0 - v^2/2) e^-s.
  auto spec = make_contact_discounted(1.0, linear_datum(vec1(0.0)));
  double v = 0.8, u0 = 0.3;
  SampledCurve curve = SampledCurve::straight(0.0, 2.0, vec1(0.0), vec1(2.0 * v), 21);
  CaratheodoryResult res = caratheodory_solve(spec, curve, u0);
  double expected = v * v / 2 + (u0 - v * v / 2) * std::exp(-2.0);
  CHECK(res.u.back() == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("corner nodes keep one-sided derivatives in the cost integral") {
  // One zig-zag tooth of unit slope: the running cost of |v|^2/2 is 1/2.
  auto spec = make_classical_quadratic(linear_datum(vec1(0.0)));
  SampledCurve curve;
  curve.times = {0.0, 0.5, 0.5, 1.0};
  curve.nodes = {vec1(0.0), vec1(0.5), vec1(0.5), vec1(0.0)};
  CaratheodoryResult res = caratheodory_solve(spec, curve, 0.0);
  CHECK(res.u.back() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("hermite curves reach integrator-level cost accuracy") {
  // Resample a curved characteristic and integrate its cost; with derivative
  // samples the reconstruction error stays near the ODE tolerance.
  ContactClosedForm cf{1.0, 1.0, 0.2};
  auto spec = make_contact_discounted(cf.lambda, linear_datum(vec1(cf.a)));
  CharTrajectory traj = integrate_lie(spec, vec1(cf.z), 1.0, {});
  SampledCurve curve;
  curve.times = traj.times;
  for (size_t j = 0; j < traj.X.size(); ++j) {
    curve.nodes.push_back(traj.X[j]);
    curve.derivs.push_back(traj.Xdot[j]);
  }
  CaratheodoryResult res = caratheodory_solve(spec, curve, traj.U.front());
  CHECK(std::abs(res.u.back() - traj.U.back()) <= 1e-9);
}

TEST_CASE("caratheodory solve validates its curve") {
  auto spec = make_classical_quadratic(linear_datum(vec1(0.0)));
  SampledCurve bad;
  bad.times = {0.0, 0.6, 0.4};
  bad.nodes = {vec1(0.0), vec1(1.0), vec1(2.0)};
  CHECK_THROWS_AS(caratheodory_solve(spec, bad, 0.0), PreconditionError);
}
