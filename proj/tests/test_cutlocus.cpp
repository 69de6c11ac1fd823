#include <cmath>
#include <memory>

#include "doctest.h"
#include "hjc/cutlocus.hpp"

using namespace hjc;

namespace {

Vec vec1(double x) {
  Vec v(1);
  v[0] = x;
  return v;
}

double double_well_root(double t) {
  double z = 1.5 * t;
  for (int i = 0; i < 80; ++i) {
    double th = std::tanh(z);
    double f = z - t * th;
    z -= f / (1.0 - t * (1.0 - th * th));
  }
  return z;
}

MinimizerEntry entry(double seed, double U, double P, double det, bool minimizing) {
  MinimizerEntry e;
  e.seed = vec1(seed);
  e.U = U;
  e.P = vec1(P);
  e.det_Xz = det;
  e.minimizing = minimizing;
  return e;
}

// Double well with a linear tilt; the exact solution is the symmetric one
// boosted by b, so the singular set is the line x = b t.
struct TiltedDoubleWell : InitialDatum {
  double b;
  explicit TiltedDoubleWell(double b) : b(b) {}
  int dim() const override { return 1; }
  double value(const Vec& x) const override {
    return -std::log(2.0 * std::cosh(x[0])) + b * x[0];
  }
  Vec gradient(const Vec& x) const override { return vec1(-std::tanh(x[0]) + b); }
  Mat hessian(const Vec& x) const override {
    double c = std::cosh(x[0]);
    Mat h(1, 1);
    h(0, 0) = -1.0 / (c * c);
    return h;
  }
};

}  // namespace

TEST_CASE("classification covers all four classes on synthetic sets") {
  MinimizerSet set;
  set.t = 1.0;
  set.x = vec1(0.0);
  set.box = Box::centered(vec1(0.0), 2.0);

  SUBCASE("one nondegenerate minimizer") {
    set.entries = {entry(0.3, -1.0, 0.3, 2.0, true), entry(1.5, 0.5, -0.1, 1.0, false)};
    Classification c = classify_from_set(set, 0.4, 1e-7);
    CHECK(c.type == PointClass::Regular);
    CHECK(c.k == 1);
    CHECK(c.regular_branches.size() == 1);
    CHECK(c.clusters.empty());
    // The non-minimizing entry does not shrink the degeneracy margin.
    CHECK(c.det_margin == doctest::Approx(2.0 - 1e-7));
  }

  SUBCASE("two nondegenerate minimizers") {
    set.entries = {entry(-1.0, -1.0, 0.5, 2.0, true), entry(1.0, -1.0, -0.5, 2.0, true)};
    Classification c = classify_from_set(set, 0.4, 1e-7);
    CHECK(c.type == PointClass::IrregularOnly);
    CHECK(c.k == 2);
  }

  SUBCASE("a focal family collapses to one branch") {
    set.entries = {entry(-0.1, 0.0, 0.0, 1e-9, true), entry(0.1, 0.0, 0.0, -1e-9, true),
                   entry(0.4, 0.0, 0.0, 1e-8, true)};
    Classification c = classify_from_set(set, 0.4, 1e-7);
    CHECK(c.type == PointClass::ConjugateOnly);
    CHECK(c.k == 1);
    REQUIRE(c.clusters.size() == 1);
    CHECK(c.clusters[0].members == 3);
    CHECK(c.clusters[0].centroid[0] == doctest::Approx(0.4 / 3.0));
    CHECK(c.det_margin < 0.0);
  }

  SUBCASE("separated focal families and an isolated branch") {
    set.entries = {entry(-1.5, 0.0, 0.2, 1e-9, true), entry(1.5, 0.0, -0.2, 1e-9, true),
                   entry(0.0, 0.0, 0.0, 0.9, true)};
    Classification c = classify_from_set(set, 0.4, 1e-7);
    CHECK(c.type == PointClass::IrregularAndConjugate);
    CHECK(c.k == 3);
    CHECK(c.clusters.size() == 2);
    CHECK(c.regular_branches.size() == 1);
  }
}

TEST_CASE("classification of the model problems") {
  SUBCASE("smooth point is regular") {
    auto spec = make_classical_quadratic(log_cosh_datum());
    Classification c = classify_point(spec, 0.5, vec1(0.4));
    CHECK(c.type == PointClass::Regular);
    CHECK(c.k == 1);
    CHECK(c.det_margin > 0.1);
  }

  SUBCASE("equal-cost pair past the fold") {
    auto spec = make_classical_quadratic(log_cosh_datum());
    Classification c = classify_point(spec, 2.0, vec1(0.0));
    CHECK(c.type == PointClass::IrregularOnly);
    CHECK(c.k == 2);
    CHECK(c.clusters.empty());
  }

  SUBCASE("first focusing point of the double well") {
    auto spec = make_classical_quadratic(log_cosh_datum());
    Classification c = classify_point(spec, 1.0, vec1(0.0));
    CHECK(c.type == PointClass::ConjugateOnly);
    CHECK(c.k == 1);
    REQUIRE(c.clusters.size() == 1);
    CHECK(std::abs(c.clusters[0].centroid[0]) <= 1e-6);
    CHECK(c.det_margin <= 0.0);
  }

  SUBCASE("total focus collapses the whole fan to one family") {
    ProblemSpec spec = make_focusing(1, 1.0);
    Classification c = classify_point(spec, 1.0, vec1(0.0));
    CHECK(c.type == PointClass::ConjugateOnly);
    CHECK(c.k == 1);
    REQUIRE(c.clusters.size() == 1);
    CHECK(c.clusters[0].members >= 10);  // the entire seed fan participates
    CHECK(std::abs(c.clusters[0].centroid[0]) <= 0.3);
  }

  SUBCASE("unreachable point reports unknown instead of throwing") {
    // At total focus every characteristic lands at the origin, so no root can
    // reach x = 0.5 and the classifier must degrade gracefully.
    ProblemSpec spec = make_focusing(1, 1.0);
    Classification c = classify_point(spec, 1.0, vec1(0.5));
    CHECK(c.type == PointClass::Unknown);
    CHECK(c.k == 0);
    CHECK(!c.diagnostic.empty());
  }
}

TEST_CASE("local branches expose the smooth sheets meeting at a point") {
  auto spec = make_classical_quadratic(log_cosh_datum());

  SUBCASE("two equal sheets across the double-well interface") {
    Classification c = classify_point(spec, 2.0, vec1(0.0));
    REQUIRE(c.type == PointClass::IrregularOnly);
    auto branches = local_branches(spec, 2.0, vec1(0.0), c);
    REQUIRE(branches.size() == 2);
    double zs = double_well_root(2.0);
    double th = std::tanh(zs);
    CHECK(branches[0].v == doctest::Approx(branches[1].v).epsilon(1e-9));
    CHECK(branches[0].p[0] + branches[1].p[0] == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(std::abs(branches[0].p[0]) == doctest::Approx(th).epsilon(1e-7));
    // Each sheet solves the equation pointwise: q = -H(t, x, p, v).
    CHECK(branches[0].q == doctest::Approx(-0.5 * th * th).epsilon(1e-7));
    CHECK(branches[1].q == doctest::Approx(branches[0].q).epsilon(1e-9));
    CHECK(branches[0].det_Xz > 0.0);
    CHECK(branches[1].det_Xz > 0.0);
  }

  SUBCASE("the minimum of continued sheets reproduces the value nearby") {
    Classification c = classify_point(spec, 2.0, vec1(0.0));
    auto branches = local_branches(spec, 2.0, vec1(0.0), c);
    REQUIRE(branches.size() == 2);
    for (double dx : {0.07, -0.13}) {
      Vec x = vec1(dx);
      double vmin = std::numeric_limits<double>::infinity();
      for (const auto& b : branches) {
        auto cont = continue_root(spec, 2.0, x, b.seed);
        REQUIRE(cont.has_value());
        vmin = std::min(vmin, cont->U);
      }
      CHECK(vmin == doctest::Approx(value(spec, 2.0, x).u).epsilon(1e-8));
    }
  }

  SUBCASE("focal classification is refused") {
    Classification c = classify_point(spec, 1.0, vec1(0.0));
    REQUIRE(c.type == PointClass::ConjugateOnly);
    CHECK_THROWS_AS(local_branches(spec, 1.0, vec1(0.0), c), PreconditionError);
  }
}

TEST_CASE("conjugate time of the focusing fan is exact") {
  ProblemSpec spec = make_focusing(1, 1.0);
  ConjugateTimeResult r = conjugate_time(spec, vec1(0.7), 2.0);
  REQUIRE(r.found);
  CHECK(r.t_star == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(r.det_slope == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(std::abs(r.kernel[0]) == doctest::Approx(1.0));
  CHECK(r.kernel_sigma <= 1e-7);
  CHECK(r.Uz_theta <= 1e-7);   // transport identity kills Uz on the kernel
  CHECK(r.Pz_theta == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("conjugate time matches the double-well closed form") {
  auto spec = make_classical_quadratic(log_cosh_datum());
  SUBCASE("center seed focuses at time one") {
    ConjugateTimeResult r = conjugate_time(spec, vec1(0.0), 3.0);
    REQUIRE(r.found);
    CHECK(r.t_star == doctest::Approx(1.0).epsilon(1e-7));
  }
  SUBCASE("off-center seed focuses at cosh^2") {
    ConjugateTimeResult r = conjugate_time(spec, vec1(0.6), 3.0);
    REQUIRE(r.found);
    CHECK(r.t_star == doctest::Approx(std::cosh(0.6) * std::cosh(0.6)).epsilon(1e-6));
  }
  SUBCASE("short horizon reports no fold") {
    ConjugateTimeResult r = conjugate_time(spec, vec1(0.0), 0.9);
    CHECK(!r.found);
    CHECK(r.min_abs_det == doctest::Approx(0.1).epsilon(1e-6));
  }
}

TEST_CASE("straight characteristics never focus") {
  auto spec = make_classical_quadratic(linear_datum(vec1(1.0)));
  ConjugateTimeResult r = conjugate_time(spec, vec1(0.2), 5.0);
  CHECK(!r.found);
  CHECK(r.min_abs_det == doctest::Approx(1.0));
}

TEST_CASE("second variation of the total focus has a closed value") {
  // With curvature one and the linear direction 1 - 2s on [0, 1/2], the
  // datum term contributes -1 and the kinetic term integrates to 2.
  ProblemSpec spec = make_focusing(1, 1.0);
  CharTrajectory base = integrate_lie(spec, vec1(0.3), 0.5);
  SampledCurve alpha;
  alpha.times = base.times;
  for (double s : base.times) {
    alpha.nodes.push_back(vec1(1.0 - 2.0 * s));
    alpha.derivs.push_back(vec1(-2.0));
  }
  SecondVariationReport r = accessory_second_variation(spec, base, alpha);
  CHECK(r.jstar == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.quadrature_error <= 1e-10);
  CHECK(r.weight_total == doctest::Approx(1.0));
  AccessoryResult f = second_variation_flow(spec, vec1(0.3), 0.5, alpha);
  CHECK(f.jstar == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("second variation is positive before the fold and flat along the kernel field") {
  auto spec = make_classical_quadratic(log_cosh_datum());
  // Smooth direction vanishing at the end, on a pre-fold arc.
  CharTrajectory base = integrate_lie(spec, vec1(0.3), 0.5);
  SampledCurve alpha;
  alpha.times = base.times;
  for (double s : base.times) {
    alpha.nodes.push_back(vec1(1.0 - (s / 0.5) * (s / 0.5)));
    alpha.derivs.push_back(vec1(-2.0 * s / (0.5 * 0.5)));
  }
  SecondVariationReport r = accessory_second_variation(spec, base, alpha);
  CHECK(r.jstar > 0.1);
  AccessoryResult f = second_variation_flow(spec, vec1(0.3), 0.5, alpha);
  CHECK(f.jstar == doctest::Approx(r.jstar).epsilon(1e-7));
  CHECK(std::abs(f.w_final) <= 1e-7);  // the arc is an extremal of the coupled problem
}

TEST_CASE("second variation agrees with a direct second difference") {
  struct Fixture {
    ProblemSpec spec;
    double z, horizon, weight;
  };
  std::vector<Fixture> fixtures;
  fixtures.push_back(
      {make_contact_discounted(1.0, linear_datum(vec1(1.0))), 0.4, 1.0, std::exp(-1.0)});
  fixtures.push_back({make_classical_quadratic(log_cosh_datum()), 0.3, 0.8, 1.0});

  for (const auto& fx : fixtures) {
    CharTrajectory base = integrate_lie(fx.spec, vec1(fx.z), fx.horizon);
    SampledCurve alpha;
    alpha.times = base.times;
    for (double s : base.times) {
      double r = s / fx.horizon;
      alpha.nodes.push_back(vec1(1.0 - r * r));
      alpha.derivs.push_back(vec1(-2.0 * r / fx.horizon));
    }
    SecondVariationReport rep = accessory_second_variation(fx.spec, base, alpha);
    CHECK(rep.weight_total == doctest::Approx(fx.weight).epsilon(1e-8));
    double flow = second_variation_flow(fx.spec, vec1(fx.z), fx.horizon, alpha).jstar;
    CHECK(rep.jstar == doctest::Approx(flow).epsilon(1e-7));

    auto perturbed_cost = [&](double eps) {
      SampledCurve xi;
      xi.times = base.times;
      for (size_t i = 0; i < base.times.size(); ++i) {
        xi.nodes.push_back(base.X[i] + eps * alpha.nodes[i]);
        xi.derivs.push_back(base.Xdot[i] + eps * alpha.derivs[i]);
      }
      return caratheodory_solve(fx.spec, xi, fx.spec.u0->value(xi.nodes.front()), 8).u.back();
    };
    auto second_diff = [&](double eps) {
      return (perturbed_cost(eps) - 2.0 * perturbed_cost(0.0) + perturbed_cost(-eps)) / (eps * eps);
    };
    double d1 = second_diff(2e-3), d2 = second_diff(1e-3);
    double fd = (4.0 * d2 - d1) / 3.0;
    CHECK(rep.jstar == doctest::Approx(fd).epsilon(2e-3));
  }
}

TEST_CASE("broken witness through the focusing fold") {
  ProblemSpec spec = make_focusing(1, 1.0);
  SecondVariationWitness w = conjugate_witness(spec, vec1(0.7), 1.0, 1.25, vec1(1.0));
  CHECK(w.constructed);
  CHECK(std::abs(w.jstar) <= 1e-8);
  CHECK(std::abs(w.corner[0]) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(w.jstar_improved == doctest::Approx(-0.125).epsilon(1e-6));
  CHECK(w.negative);
}

TEST_CASE("broken witness for the double well past its fold") {
  auto spec = make_classical_quadratic(log_cosh_datum());
  ConjugateTimeResult fold = conjugate_time(spec, vec1(0.0), 2.0);
  REQUIRE(fold.found);
  SecondVariationWitness w =
      conjugate_witness(spec, vec1(0.0), fold.t_star, 1.25, fold.kernel);
  CHECK(w.constructed);
  CHECK(std::abs(w.jstar) <= 1e-6);
  CHECK(w.jstar_improved == doctest::Approx(-0.125).epsilon(1e-3));
  CHECK(w.negative);
}

TEST_CASE("automatic witness locates its own fold") {
  ProblemSpec spec = make_focusing(1, 1.0);
  SecondVariationWitness w = conjugate_witness(spec, vec1(0.7), 1.25);
  CHECK(w.constructed);
  CHECK(w.break_time == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(w.negative);
}

TEST_CASE("witness construction is refused without a fold") {
  auto spec = make_classical_quadratic(linear_datum(vec1(1.0)));
  SecondVariationWitness w = conjugate_witness(spec, vec1(0.2), 2.0);
  CHECK(!w.constructed);
  CHECK(!w.negative);
  CHECK(w.diagnostic.find("refused") != std::string::npos);
}

TEST_CASE("witness ending at the fold is marginal, not negative") {
  ProblemSpec spec = make_focusing(1, 1.0);
  SecondVariationWitness w = conjugate_witness(spec, vec1(0.2), 1.0, 1.0, vec1(1.0));
  CHECK(w.constructed);
  CHECK(std::abs(w.jstar) <= 1e-8);
  CHECK(!w.negative);
  CHECK(!w.diagnostic.empty());
}

TEST_CASE("branch curvature blows up toward the fold") {
  ProblemSpec spec = make_focusing(1, 1.0);
  auto samples = hessian_blowup_probe(spec, vec1(0.2), {0.5, 0.9, 0.99});
  REQUIRE(samples.size() == 3);
  CHECK(samples[0].hessian_norm == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(samples[1].hessian_norm == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(samples[2].hessian_norm == doctest::Approx(100.0).epsilon(1e-5));
  CHECK(samples[2].det_Xz == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("equal-cost point located between the wells") {
  auto spec = make_classical_quadratic(log_cosh_datum());
  CrossingResult r = interface_crossing(spec, 2.0, vec1(-0.5), vec1(0.5));
  REQUIRE(r.found);
  CHECK(std::abs(r.x[0]) <= 1e-7);
  CHECK(r.value_gap <= 1e-7);
  double zs = double_well_root(2.0);
  CHECK(r.momentum_gap == doctest::Approx(2.0 * std::tanh(zs)).epsilon(1e-5));
  double u_wing = -std::log(2.0 * std::cosh(zs)) + std::tanh(zs) * std::tanh(zs);
  CHECK(r.u == doctest::Approx(u_wing).epsilon(1e-8));

  // The located point indeed carries two minimizing branches.
  Classification c = classify_point(spec, 2.0, r.x);
  CHECK(c.type == PointClass::IrregularOnly);

  // The crossing persists at a later time, staying on x = 0.
  CrossingResult later = interface_crossing(spec, 3.0, vec1(-0.5), vec1(0.5));
  REQUIRE(later.found);
  CHECK(std::abs(later.x[0]) <= 1e-7);
  CHECK(later.momentum_gap == doctest::Approx(2.0 * std::tanh(double_well_root(3.0))).epsilon(1e-5));
}

TEST_CASE("crossing search refuses a segment with a single branch") {
  auto spec = make_classical_quadratic(log_cosh_datum());
  CrossingResult r = interface_crossing(spec, 0.5, vec1(-0.5), vec1(0.5));
  CHECK(!r.found);
  CHECK(!r.diagnostic.empty());
}

TEST_CASE("singular points persist for a short time") {
  auto spec = make_classical_quadratic(log_cosh_datum());

  SUBCASE("the double-well interface survives each forward step") {
    for (double eps : {0.05, 0.1}) {
      PersistenceResult r = persistence_probe(spec, 1.2, vec1(0.0), eps, 1.0);
      REQUIRE(r.found);
      CHECK(std::abs(r.x[0]) <= 1e-7);
      CHECK(r.distance <= eps * 1.0 + 1e-9);
      CHECK(r.momentum_gap > 0.3);
      CHECK(r.value_gap <= 1e-6);
    }
  }

  SUBCASE("a focal starting point is accepted") {
    PersistenceResult r = persistence_probe(spec, 1.0, vec1(0.0), 0.1, 1.0);
    REQUIRE(r.found);
    CHECK(std::abs(r.x[0]) <= 1e-7);
  }

  SUBCASE("a regular starting point is a precondition violation") {
    CHECK_THROWS_AS(persistence_probe(spec, 0.5, vec1(0.4), 0.1, 1.0), PreconditionError);
  }
}

TEST_CASE("the persistence probe follows a drifting interface") {
  // Tilting the double well boosts the whole picture: the singular set is
  // exactly x = b t, so the located point must drift by b * eps.
  // The segment must stay inside the coexistence region of the two wings,
  // which at t = 1.5 spans |x - b t| <= 0.2 and change.
  auto spec = make_classical_quadratic(std::make_shared<TiltedDoubleWell>(0.2));
  CrossingResult at_start = interface_crossing(spec, 1.5, vec1(0.15), vec1(0.45));
  REQUIRE(at_start.found);
  CHECK(at_start.x[0] == doctest::Approx(0.3).epsilon(1e-6));

  PersistenceResult r = persistence_probe(spec, 1.5, at_start.x, 0.1, 1.3);
  REQUIRE(r.found);
  CHECK(r.x[0] == doctest::Approx(0.32).epsilon(1e-5));
  CHECK(r.distance == doctest::Approx(0.02).epsilon(1e-3));
  CHECK(r.distance <= 0.1 * 1.3);
}

TEST_CASE("interior points of a certified minimizer stay regular") {
  auto spec = make_classical_quadratic(log_cosh_datum());
  ValueResult v = value(spec, 2.0, vec1(0.3));
  Vec z = v.minimizers.entries.front().seed;
  for (double s : {0.25, 0.7, 1.2, 1.6}) {
    Vec xs = integrate_lie(spec, z, s).X.back();
    Classification c = classify_point(spec, s, xs);
    CHECK(c.type == PointClass::Regular);
  }
}

TEST_CASE("branch counts are stable under seed-grid refinement") {
  auto spec = make_classical_quadratic(log_cosh_datum());
  ClassifyOptions coarse, fine;
  fine.shoot.grid_per_dim = 2 * coarse.shoot.grid_per_dim;
  Classification a = classify_point(spec, 2.0, vec1(0.0), coarse);
  Classification b = classify_point(spec, 2.0, vec1(0.0), fine);
  CHECK(a.k == 2);
  CHECK(b.k == a.k);
}
