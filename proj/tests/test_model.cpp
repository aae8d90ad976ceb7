#include <cmath>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <gtest/gtest.h>

#include "pwscatter/model.hpp"
#include "pwscatter/orbits.hpp"

using namespace pwscatter;

namespace {

SystemModel rb(double delta = 1, double k = 1, double omega = 3, double eps = 0.0) {
  return make_rocking_block({delta, k, omega, eps});
}

// Time to cross u > 0 at level v^2/2, straight from the energy relation: 2 * int_0^u* du / |v(u)|.
double alpha_plus_oracle(double v) {
  const double c = 0.5 * v * v;
  const double us = 1 - std::sqrt(1 - 2 * c);  // c = u - u^2/2
  boost::math::quadrature::tanh_sinh<double> ts;
  // the gap c - V(u) factors as (us - u)(2 - us - u)/2; xc carries us - u near the upper end
  auto f = [&](double u, double xc) {
    const double d = xc > 0 ? xc : us - u;
    return 1.0 / std::sqrt(d * (2 - us - u));
  };
  return 2 * ts.integrate(f, 0.0, us);
}

}  // namespace

TEST(Model, EnergyExamples) {
  const auto m = rb();
  const auto e = eval_energy(m, {0, 0.48, 0, 1, 0});
  EXPECT_NEAR(e.U, 0.1152, 1e-15);
  EXPECT_NEAR(e.X, 0.5, 1e-15);
  const auto q = eval_energy(m, {0, 0, 1, 0, 0});
  EXPECT_DOUBLE_EQ(q.U, 0.0);
  EXPECT_DOUBLE_EQ(q.X, 0.5);
}

TEST(Model, BranchesAgreeOnSwitchingManifolds) {
  const auto m = rb();
  for (double v = -1; v <= 1; v += 0.125) {
    EXPECT_EQ(m.V_plus.value(0) + 0.5 * v * v, m.V_minus.value(0) + 0.5 * v * v);
    EXPECT_EQ(m.Y_plus.value(0), m.Y_minus.value(0));
  }
}

TEST(Model, DerivedConstants) {
  const auto m = rb();
  EXPECT_DOUBLE_EQ(m.d_bar, 0.5);
  EXPECT_DOUBLE_EQ(m.y_h, 1.0);
  EXPECT_DOUBLE_EQ(m.lambda_plus, 1.0);
  EXPECT_DOUBLE_EQ(m.lambda_minus, 1.0);
  EXPECT_NEAR(m.period, 2 * M_PI / 3, 1e-15);
}

TEST(Model, VectorFieldSigns) {
  const auto m = rb();
  const auto d = vector_field(m, {0.1, 0, 0.2, 0, 0}, {1, 1});
  EXPECT_DOUBLE_EQ(d[0], 0.0);
  EXPECT_NEAR(d[1], -0.9, 1e-15);
  EXPECT_DOUBLE_EQ(d[2], 0.0);
  EXPECT_NEAR(d[3], -0.8, 1e-15);
  EXPECT_DOUBLE_EQ(d[4], 1.0);

  const auto sad = vector_field(m, {1, 0, 0.5, 0, 0}, {1, 1});
  EXPECT_DOUBLE_EQ(sad[0], 0.0);
  EXPECT_DOUBLE_EQ(sad[1], 0.0);

  const auto mp = rb(1, 0, 3, 0.01);
  for (double s : {0.0, 0.3, 1.7}) {
    const auto a = vector_field(mp, {0.3, 0.1, -0.2, 0.4, s}, {1, -1});
    const auto b = vector_field(m, {0.3, 0.1, -0.2, 0.4, s}, {1, -1});
    EXPECT_NEAR(a[1] - b[1], -0.01 * std::cos(3 * s), 1e-16);
    EXPECT_NEAR(a[3] - b[3], -0.01 * std::cos(3 * s), 1e-16);
  }
}

TEST(Model, VectorFieldMatchesLinkedBlocks) {
  const double eps = 0.03, dt = 0.7, kt = 1.3, w = 2.2;
  const auto m = rb(dt, kt, w, eps);
  const double d = dt * eps, k = kt * eps;
  for (double u : {-0.4, 0.6})
    for (double x : {-0.7, 0.2}) {
      const double v = 0.3, y = -0.1, s = 0.9;
      const auto f = vector_field(m, {u, v, x, y, s}, {sign_of(u), sign_of(x)});
      const double su = u > 0 ? 1 : -1, sx = x > 0 ? 1 : -1;
      EXPECT_NEAR(f[1], u - su + k * (x - u) - d * std::cos(w * s), 1e-15);
      EXPECT_NEAR(f[3], x - sx + k * (u - x) - d * std::cos(w * s), 1e-15);
    }
}

TEST(Model, RegionMismatchRejected) {
  const auto m = rb();
  EXPECT_THROW(vector_field(m, {0.1, 0, 0.2, 0, 0}, {-1, 1}), DomainError);
  EXPECT_NO_THROW(vector_field(m, {0.0, 0.3, 0.2, 0, 0}, {-1, 1}));
}

TEST(Model, SigmaClosedForm) {
  EXPECT_EQ(rocking_block::sigma_up(0)[0], 0.0);
  EXPECT_EQ(rocking_block::sigma_up(0)[1], 1.0);
  const auto far = rocking_block::sigma_up(50);
  EXPECT_NEAR(far[0], 1.0, 1e-15);
  EXPECT_NEAR(far[1], 0.0, 1e-15);
  const auto m = rb();
  for (double xi = -30; xi <= 30; xi += 0.37) {
    const auto p = rocking_block::sigma_up(xi);
    EXPECT_NEAR(m.X(p[0], p[1]), 0.5, 1e-14) << xi;
    const auto q = rocking_block::sigma_down(xi);
    EXPECT_EQ(q[0], -p[0]);
    EXPECT_EQ(q[1], -p[1]);
  }
}

TEST(Model, AlphaPlusAgainstQuadrature) {
  for (int i = 1; i <= 9; ++i) {
    const double v = 0.1 * i;
    EXPECT_NEAR(rocking_block::alpha_plus(v) / alpha_plus_oracle(v), 1.0, 1e-10) << v;
  }
  EXPECT_NEAR(rocking_block::alpha_plus(0.48), std::log(1.48 / 0.52), 1e-15);
  EXPECT_LT(rocking_block::alpha_plus(1e-9), 1e-8);
  EXPECT_EQ(rocking_block::alpha(0.48), 2 * rocking_block::alpha_plus(0.48));
}

TEST(Model, PhiUClosedForm) {
  const double v = 0.48;
  const double ap = rocking_block::alpha_plus(v);
  const auto a = rocking_block::phi_u(0, v);
  EXPECT_EQ(a[0], 0.0);
  EXPECT_EQ(a[1], v);
  const auto b = rocking_block::phi_u(ap, v);
  EXPECT_NEAR(b[0], 0.0, 1e-15);
  EXPECT_NEAR(b[1], -v, 1e-15);
  const auto c = rocking_block::phi_u(2 * ap, v);
  EXPECT_NEAR(c[0], 0.0, 1e-15);
  EXPECT_NEAR(c[1], v, 1e-15);
  const auto m = rb();
  for (double v0 : {0.05, 0.3, 0.48, 0.9})
    for (double t = -7; t < 7; t += 0.113) {
      const auto p = rocking_block::phi_u(t, v0);
      EXPECT_NEAR(m.U(p[0], p[1]), 0.5 * v0 * v0, 1e-14);
      const auto q = rocking_block::phi_u(t + rocking_block::alpha(v0), v0);
      EXPECT_NEAR(p[0], q[0], 1e-13);
      EXPECT_NEAR(p[1], q[1], 1e-13);
    }
  EXPECT_THROW(rocking_block::phi_u(0.1, 1.0), DomainError);
  EXPECT_THROW(rocking_block::alpha_plus(1.2), DomainError);
}

TEST(Model, PhiUSolvesTheFlow) {
  // finite-difference check of (u', v') = (v, u - sgn u)
  const double v0 = 0.7, h = 1e-5;
  for (double t = 0.05; t < 4; t += 0.31) {
    const auto p = rocking_block::phi_u(t, v0);
    const auto a = rocking_block::phi_u(t + h, v0), b = rocking_block::phi_u(t - h, v0);
    if (std::abs(p[0]) < 1e-3) continue;
    EXPECT_NEAR((a[0] - b[0]) / (2 * h), p[1], 1e-8);
    EXPECT_NEAR((a[1] - b[1]) / (2 * h), p[0] - sign_of(p[0]), 1e-8);
  }
}

TEST(Model, PoissonBrackets) {
  const double d = 0.7, k = 1.3, w = 2.0;
  const auto m = rb(d, k, w, 0.01);
  const ExtendedState z{0.3, -0.2, 0.6, 0.9, 0.4};
  EXPECT_NEAR(poisson_bracket_Xh(m, z), -0.9 * (d * std::cos(w * 0.4) + k * (0.6 - 0.3)), 1e-15);
  EXPECT_NEAR(poisson_bracket_Uh(m, z), 0.2 * (d * std::cos(w * 0.4) + k * (0.3 - 0.6)), 1e-15);
  EXPECT_EQ(poisson_bracket_Xh(m, {0.3, -0.2, 0.6, 0.0, 0.4}), 0.0);
  const auto m0 = rb(1, 0, 3, 0.01);
  for (double xi : {-2.0, 0.0, 1.5}) {
    const auto sg = rocking_block::sigma_up(xi);
    const ExtendedState a{0.2, 0.4, sg[0], sg[1], 0.7}, b{0.2, 0.4, 1.0, 0.0, 0.7};
    EXPECT_EQ(poisson_bracket_Uh(m0, a) - poisson_bracket_Uh(m0, b), 0.0);
  }
}

TEST(Model, PhaseWrap) {
  EXPECT_EQ(wrap_phase(0.0, 2.0), 0.0);
  EXPECT_EQ(wrap_phase(2.0, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(wrap_phase(-0.5, 2.0), 1.5);
  EXPECT_DOUBLE_EQ(wrap_phase(5.25, 2.0), 1.25);
  EXPECT_LT(wrap_phase(-1e-300, 2.0), 2.0);
}

TEST(Model, InvalidParametersRejected) {
  EXPECT_THROW(make_rocking_block({1, 1, 0, 0.01}), DomainError);
  EXPECT_THROW(make_rocking_block({-1, 1, 3, 0.01}), DomainError);
  EXPECT_THROW(make_rocking_block({1, 1, 3, 0.01, 1.0}), DomainError);
}

// A model without closed forms must reproduce the rocking block through numerics.
TEST(Model, GenericFallbacksMatchClosedForms) {
  auto m = rb();
  auto g = m;
  g.closed = {};
  for (double v : {0.2, 0.48, 0.8}) {
    EXPECT_NEAR(alpha_plus(g, v), rocking_block::alpha_plus(v), 1e-12);
    EXPECT_NEAR(alpha_minus(g, v), rocking_block::alpha_plus(v), 1e-12);
    for (double t : {0.3, 1.1, 2.5, 3.9}) {
      const auto a = phi_u(g, t, v), b = rocking_block::phi_u(t, v);
      EXPECT_NEAR(a[0], b[0], 1e-11);
      EXPECT_NEAR(a[1], b[1], 1e-11);
    }
  }
  for (double xi : {-12.0, -3.0, -0.5, 0.7, 4.0, 15.0}) {
    const auto a = sigma_up(g, xi), b = rocking_block::sigma_up(xi);
    EXPECT_NEAR(a[0], b[0], 1e-10) << xi;
    EXPECT_NEAR(a[1], b[1], 1e-10) << xi;
    const auto c = sigma_down(g, xi);
    EXPECT_NEAR(c[0], -b[0], 1e-10);
    EXPECT_NEAR(c[1], -b[1], 1e-10);
  }
}

TEST(Model, InvertPhiU) {
  const auto m = rb();
  for (double v0 : {0.1, 0.48, 0.85})
    for (double th = 0; th < 1; th += 0.0625) {
      const auto p = phi_u(m, th * alpha(m, v0), v0);
      const auto r = invert_phi_u(m, p[0], p[1]);
      EXPECT_NEAR(r.v0, v0, 1e-13);
      const double d = std::abs(r.theta - th);
      EXPECT_LT(std::min(d, 1 - d), 1e-12) << v0 << " " << th;
    }
}

TEST(Model, UCrossingTimes) {
  const auto t = u_crossing_times(1.0, 2.5, 0.4, -3, 3);
  // phase 0.4 + t in {0, 1} + 2.5 k
  const std::vector<double> want = {-2.9, -1.9, -0.4, 0.6, 2.1};
  ASSERT_EQ(t.size(), want.size());
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t[i], want[i], 1e-14);
}
