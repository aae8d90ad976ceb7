#include <cmath>

#include <gtest/gtest.h>

#include "pwscatter/impact.hpp"
#include "pwscatter/integrator.hpp"
#include "pwscatter/orbits.hpp"

using namespace pwscatter;

namespace {

SystemModel rb(double eps = 0.0, double delta = 1, double k = 1, double omega = 3) {
  return make_rocking_block({delta, k, omega, eps});
}

StepControl tight() {
  StepControl c;
  c.rel_tol = 1e-12;
  c.abs_tol = 1e-14;
  return c;
}

// product of the closed-form flows; (x, y) taken from sigma_up at phase xi0
std::array<double, 4> product_flow(double t, double v0, double xi0) {
  const auto p = rocking_block::phi_u(t, v0);
  const auto q = rocking_block::sigma_up(xi0 + t);
  return {p[0], p[1], q[0], q[1]};
}

}  // namespace

TEST(Integrator, ZeroSpanReturnsStart) {
  const auto m = rb();
  const auto tr = integrate(m, {0.3, 0.1, 0.2, 0.1, 0.0}, 0.0, tight());
  ASSERT_EQ(tr.times.size(), 1u);
  EXPECT_EQ(tr.reason, Termination::time_reached);
  EXPECT_EQ(tr.states[0][0], 0.3);
}

TEST(Integrator, OnePeriodAtSaddle) {
  const auto m = rb();
  const double v = 0.48, a = rocking_block::alpha(v);
  const auto tr = integrate(m, {0, v, 1, 0, 0}, a, tight());
  ASSERT_EQ(tr.reason, Termination::time_reached);
  EXPECT_NEAR(tr.final_state[0], 0.0, 1e-10);
  EXPECT_NEAR(tr.final_state[1], v, 1e-10);
  EXPECT_EQ(tr.final_state[2], 1.0);
  EXPECT_EQ(tr.final_state[3], 0.0);
  ASSERT_GE(tr.events.size(), 1u);
  EXPECT_NEAR(tr.events[0].time, rocking_block::alpha_plus(v), 1e-11);
}

TEST(Integrator, MatchesProductFlowOverOnePeriod) {
  const auto m = rb();
  for (double v : {0.2, 0.48, 0.8}) {
    const double a = rocking_block::alpha(v);
    const double xi0 = -2.0;
    const auto s0 = product_flow(0, v, xi0);
    StopCondition stop;
    for (int i = 1; i <= 40; ++i) stop.output_times.push_back(a * i / 40);
    const auto tr = integrate(m, {s0[0], s0[1], s0[2], s0[3], 0}, a, tight(), stop);
    ASSERT_EQ(tr.reason, Termination::time_reached);
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
      const auto o = product_flow(tr.times[k], v, xi0);
      for (int c = 0; c < 4; ++c) EXPECT_NEAR(tr.states[k][c], o[c], 1e-9) << v << " " << tr.times[k];
    }
  }
}

TEST(Integrator, EnergyDriftOverHundredPeriods) {
  const auto m = rb();
  const double v = 0.48, a = rocking_block::alpha(v);
  StopCondition stop;
  for (int i = 1; i <= 100; ++i) stop.output_times.push_back(i * a);
  // x-part parked on the saddle; u-part keeps crossing
  const auto tr = integrate(m, {0, v, 1, 0, 0}, 100 * a, tight(), stop);
  ASSERT_EQ(tr.reason, Termination::time_reached);
  EXPECT_EQ(tr.events.size(), 200u);
  for (const auto& z : tr.states) EXPECT_LE(std::abs(m.U(z[0], z[1]) - 0.5 * v * v), 1e-10);
}

TEST(Integrator, EventOnHeteroclinic) {
  const auto m = rb();
  const auto p = rocking_block::sigma_up(-1.0);
  const auto ev = integrate_to_section(m, {0.5, 0.1, p[0], p[1], 0}, Section::x_zero, 1, tight());
  EXPECT_NEAR(ev.time, 1.0, 1e-10);
  EXPECT_NEAR(ev.state[3], 1.0, 1e-10);
  EXPECT_LE(std::abs(ev.state[2]), 1e-13);
}

TEST(Integrator, FirstSectionCrossing) {
  const auto m = rb();
  const double v = 0.48;
  const auto ev = integrate_to_section(m, {0, v, 1, 0, 0}, Section::u_minus, 1, tight());
  EXPECT_NEAR(ev.time, rocking_block::alpha_plus(v), 1e-11);
  EXPECT_NEAR(ev.state[1], -v, 1e-11);
  // starting at the turning point of the level through u = 0.1, v = 0
  const auto ev2 = integrate_to_section(m, {0.1, 0, 1, 0, 0}, Section::u_minus, 1, tight());
  const double v0 = std::sqrt(2 * m.U(0.1, 0));
  EXPECT_NEAR(ev2.time, 0.5 * rocking_block::alpha_plus(v0), 1e-11);
  EXPECT_LE(std::abs(ev2.state[0]), 1e-13);
  // on the section and moving away: next crossing, not t = 0
  const auto ev3 = integrate_to_section(m, {0, v, 1, 0, 0}, Section::u_plus, 1, tight());
  EXPECT_NEAR(ev3.time, rocking_block::alpha(v), 1e-11);
}

TEST(Integrator, ReversibilityWithEvents) {
  const auto m = rb(0.02);
  const ExtendedState z0{0.2, 0.3, -0.4, 0.6, 0.3};
  const auto fw = integrate(m, z0, 7.0, tight());
  ASSERT_EQ(fw.reason, Termination::time_reached);
  EXPECT_GT(fw.events.size(), 2u);
  ExtendedState z1{fw.final_state[0], fw.final_state[1], fw.final_state[2], fw.final_state[3], fw.final_state[4],
                   fw.final_time};
  const auto bw = integrate(m, z1, -7.0, tight());
  ASSERT_EQ(bw.reason, Termination::time_reached);
  EXPECT_EQ(bw.events.size(), fw.events.size());
  EXPECT_NEAR(bw.final_state[0], z0.u, 1e-9);
  EXPECT_NEAR(bw.final_state[1], z0.v, 1e-9);
  EXPECT_NEAR(bw.final_state[2], z0.x, 1e-9);
  EXPECT_NEAR(bw.final_state[3], z0.y, 1e-9);
}

TEST(Integrator, EventResidualAndRegionConsistency) {
  const auto m = rb(0.05);
  StopCondition stop;
  stop.record_steps = true;
  const auto tr = integrate(m, {0.1, 0.4, 0.3, -0.5, 0}, 20.0, tight(), stop);
  for (const auto& ev : tr.events) {
    const double c = ev.state[ev.manifold == 0 ? 0 : 2];
    EXPECT_LE(std::abs(c), 1e-13);
  }
  // between consecutive events every sample keeps the same sign pattern
  std::size_t e = 0;
  int su = 0, sx = 0;
  for (std::size_t k = 1; k < tr.times.size(); ++k) {
    while (e < tr.events.size() && tr.events[e].time <= tr.times[k - 1]) {
      ++e;
      su = sx = 0;
    }
    const auto& z = tr.states[k];
    if (e < tr.events.size() && tr.times[k] >= tr.events[e].time) continue;
    if (std::abs(z[0]) > 1e-12) {
      const int s = z[0] > 0 ? 1 : -1;
      if (su) {
        EXPECT_EQ(s, su);
      }
      su = s;
    }
    if (std::abs(z[2]) > 1e-12) {
      const int s = z[2] > 0 ? 1 : -1;
      if (sx) {
        EXPECT_EQ(s, sx);
      }
      sx = s;
    }
  }
}

TEST(Integrator, RKF78PairAgrees) {
  const auto m = rb(0.01);
  StepControl c = tight();
  c.method = Method::rkf78;
  const ExtendedState z0{0, 0.48, 0, 1.0, 0};
  const auto a = integrate(m, z0, 3.0, tight());
  const auto b = integrate(m, z0, 3.0, c);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(a.final_state[i], b.final_state[i], 1e-9);
}

TEST(Integrator, EscapeIsReported) {
  const auto m = rb();
  const auto tr = integrate(m, {0, 0.3, 0, 1.01, 0}, 100.0, tight());
  EXPECT_EQ(tr.reason, Termination::escape);
  EXPECT_GE(std::abs(tr.final_state[2]), 2.0);
}

TEST(Integrator, AugmentedAverage) {
  const auto m = rb();
  const double v = 0.48;
  std::vector<double> ts = {1, 2.5, 7, 13};
  const auto ra = augmented_average(m, {0, v, 1, 0, 0}, 13, ts, tight());
  ASSERT_EQ(ra.averages.size(), ts.size());
  for (double a : ra.averages) EXPECT_NEAR(a, 0.5 * v * v, 1e-11);
  const auto p = rocking_block::sigma_up(-2.0);
  const auto rb2 = augmented_average(m, {0.2, 0.1, p[0], p[1], 0}, -5, {-1, -5}, tight());
  for (double a : rb2.averages) EXPECT_NEAR(a, m.U(0.2, 0.1), 1e-11);
}

TEST(Impact, UnperturbedHalfAndFullMap) {
  const auto m = rb();
  const double v = 0.48;
  const auto w1 = half_map(m, {v, 1, 0, 0, 0}, tight());
  EXPECT_NEAR(w1.v, -v, 1e-11);
  EXPECT_EQ(w1.x, 1.0);
  EXPECT_NEAR(w1.s, rocking_block::alpha_plus(v), 1e-11);
  const auto w2 = impact_map(m, {v, -1, 0, 0.5, 0.5}, tight());
  EXPECT_NEAR(w2.v, v, 1e-10);
  EXPECT_NEAR(w2.t, 0.5 + rocking_block::alpha(v), 1e-10);
  const auto back = impact_map_inverse(m, w2, tight());
  EXPECT_NEAR(back.v, v, 1e-9);
  EXPECT_NEAR(back.t, 0.5, 1e-9);
}

TEST(Impact, ProductFlowAlongHeteroclinic) {
  const auto m = rb();
  const double v = 0.48, a = rocking_block::alpha(v), xi0 = -6.0;
  const auto q = rocking_block::sigma_up(xi0);
  const auto w = impact_map(m, {v, q[0], q[1], 0, 0}, tight());
  const auto r = rocking_block::sigma_up(xi0 + a);
  EXPECT_NEAR(w.x, r[0], 1e-10);
  EXPECT_NEAR(w.y, r[1], 1e-10);
}

TEST(Impact, OutOfDomainCarriesEvent) {
  const auto m = rb();
  const auto q = rocking_block::sigma_up(-0.2);
  try {
    half_map(m, {0.48, q[0], q[1], 0, 0}, tight());
    FAIL() << "expected out-of-domain";
  } catch (const OutOfDomain& e) {
    EXPECT_EQ(e.event.manifold, 1);
    EXPECT_NEAR(e.event.time, 0.2, 1e-10);
  }
  EXPECT_THROW(half_map(m, {1e-4, 1, 0, 0, 0}, tight()), DomainError);
}

TEST(Impact, Sequence) {
  const auto m = rb();
  const double v = 0.48, ap = rocking_block::alpha_plus(v);
  const auto seq = impact_sequence(m, {v, 1, 0, 0, 0}, 4, 0, tight());
  ASSERT_EQ(seq.entries.size(), 5u);
  const double want[] = {0, ap, 2 * ap, 3 * ap, 4 * ap};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(seq.entries[i].point.t, want[i], 1e-10);
  EXPECT_EQ(seq.forward, Truncation::max_count);

  const auto q = rocking_block::sigma_up(-3.0);
  const auto s2 = impact_sequence(m, {v, q[0], q[1], 0, 0}, 20, 0, tight());
  EXPECT_EQ(s2.forward, Truncation::x_zero);
  ASSERT_TRUE(s2.forward_stop.has_value());
  EXPECT_NEAR(s2.forward_stop->time, 3.0, 1e-10);

  // backward from the last forward point retraces the list
  const auto last = seq.entries.back().point;
  const auto s3 = impact_sequence(m, last, 0, 4, tight());
  ASSERT_EQ(s3.entries.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(s3.entries[i].point.t, seq.entries[i].point.t, 1e-9);
    EXPECT_NEAR(s3.entries[i].point.v, seq.entries[i].point.v, 1e-9);
  }
}
