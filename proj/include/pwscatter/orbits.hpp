#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/tools/roots.hpp>

#include "pwscatter/integrator.hpp"
#include "pwscatter/model.hpp"
#include "pwscatter/quadrature.hpp"

namespace pwscatter {

// Unperturbed objects of a model: closed forms when supplied, numerics otherwise.

namespace detail {

// (u, v) or (x, y) part of the unperturbed field.
struct PlanarSystem {
  static constexpr std::size_t dim = 2;
  static constexpr std::size_t n_switch = 1;
  static constexpr std::array<std::size_t, 1> switch_index = {0};
  const Potential* plus;
  const Potential* minus;

  void field(const std::array<int, 1>& sg, double, const double* z, double* dz) const {
    dz[0] = z[1];
    dz[1] = sg[0] < 0 ? -minus->d1(z[0]) : -plus->d1(z[0]);
  }
  bool escaped(const double* z) const { return !(std::abs(z[0]) < 1e6); }
  double scale(const double* z) const { return 1.0 + std::max(std::abs(z[0]), std::abs(z[1])); }
};

inline StepControl tight_control() {
  StepControl c;
  c.rel_tol = 1e-14;
  c.abs_tol = 1e-16;
  c.max_step = 0.05;
  c.min_step = 1e-15;
  return c;
}

inline Vec2 planar_flow(const Potential& plus, const Potential& minus, Vec2 z0, double t) {
  if (t == 0) return z0;
  PlanarSystem sys{&plus, &minus};
  EventIntegrator<PlanarSystem> in(sys, tight_control());
  auto res = in.run(0.0, {z0[0], z0[1]}, t, {});
  if (res.reason != Termination::time_reached) throw ConvergenceError("planar flow: " + res.message);
  return {res.final_state[0], res.final_state[1]};
}

// Turning point of the level V = c on the given side of 0.
inline double turning_point(const Potential& V, double c, int side) {
  double a = 0.0, b = 0.0, step = 1e-3;
  while (true) {
    b = a + side * step;
    if (V.value(b) >= c) break;
    if (side * V.d1(b) <= 0) throw DomainError("orbit is unbounded at this energy");
    a = b;
    step *= 1.5;
    if (std::abs(b) > 1e8) throw DomainError("no turning point found");
  }
  boost::uintmax_t iters = 200;
  auto r = boost::math::tools::toms748_solve([&](double u) { return V.value(u) - c; }, std::min(a, b),
                                             std::max(a, b), boost::math::tools::eps_tolerance<double>(52), iters);
  return 0.5 * (r.first + r.second);
}

}  // namespace detail

inline void check_level(const SystemModel& m, double v) {
  if (!(v > 0)) throw DomainError("orbit level v must be positive");
  if (v > m.v_max) throw DomainError("orbit level v exceeds v_max");
}

// Time from (0, v) to (0, -v) through u > 0 (side = +1), or from (0, -v) to (0, v) through u < 0.
inline double alpha_side(const SystemModel& m, double v, int side) {
  check_level(m, v);
  if (side > 0 && m.closed.alpha_plus) return m.closed.alpha_plus(v);
  if (side < 0 && m.closed.alpha_minus) return m.closed.alpha_minus(v);
  const Potential& V = side > 0 ? m.V_plus : m.V_minus;
  const double c = 0.5 * v * v;
  const double us = detail::turning_point(V, c, side);
  // u = us (1 - w^2) removes the square-root singularity at the turning point
  auto f = [&](double w) {
    const double u = us * (1 - w * w);
    double gap = c - V.value(u);
    if (w < 0.3) {
      // near the turning point the difference cancels; integrate V' over [u, us] instead,
      // with the width us - u = us w^2 taken exactly
      const double d = us * w * w;
      gap = d * boost::math::quadrature::gauss<double, 10>::integrate([&](double r) { return V.d1(us - d * r); },
                                                                      0.0, 1.0);
    }
    return 2 * std::abs(us) * w / std::sqrt(2 * std::max(gap, 0.0));
  };
  const std::vector<double> br = {0.0, 0.25, 0.5, 1.0};
  QuadOptions o;
  o.abs_tol = 1e-14;
  return 2 * integrate_panels(f, br, o).value;
}

inline double alpha_plus(const SystemModel& m, double v) { return alpha_side(m, v, 1); }
inline double alpha_minus(const SystemModel& m, double v) { return alpha_side(m, v, -1); }
inline double alpha(const SystemModel& m, double v) { return alpha_plus(m, std::abs(v)) + alpha_minus(m, std::abs(v)); }

// Orbit of U through (0, v0) at tau = 0.
inline Vec2 phi_u(const SystemModel& m, double tau, double v0) {
  check_level(m, v0);
  if (m.closed.phi_u) return m.closed.phi_u(tau, v0);
  const double ap = alpha_plus(m, v0), am = alpha_minus(m, v0);
  double t = wrap_phase(tau, ap + am);
  if (t <= ap) {
    // integrate from the nearer end of the half orbit
    if (t <= 0.5 * ap) return detail::planar_flow(m.V_plus, m.V_minus, {0.0, v0}, t);
    return detail::planar_flow(m.V_plus, m.V_minus, {0.0, -v0}, t - ap);
  }
  t -= ap;
  if (t <= 0.5 * am) return detail::planar_flow(m.V_plus, m.V_minus, {0.0, -v0}, t);
  return detail::planar_flow(m.V_plus, m.V_minus, {0.0, v0}, t - am);
}

inline Vec2 sigma(const SystemModel& m, Branch b, double xi) {
  if (b == Branch::up && m.closed.sigma_up) return m.closed.sigma_up(xi);
  if (b == Branch::down && m.closed.sigma_down) return m.closed.sigma_down(xi);
  // beyond |xi| = L the orbit is continued along the linearized saddle direction
  constexpr double L = 8.0;
  const double yh = b == Branch::up ? m.y_h : -m.y_h;
  const double xc = std::clamp(xi, -L, L);
  Vec2 p = detail::planar_flow(m.Y_plus, m.Y_minus, {0.0, yh}, xc);
  if (xc == xi) return p;
  const bool fwd = xi > 0;
  const double q = (fwd == (b == Branch::up)) ? m.q_plus : m.q_minus;
  const double lam = q > 0 ? m.lambda_plus : m.lambda_minus;
  const double decay = std::exp(-lam * std::abs(xi - xc));
  return {q + (p[0] - q) * decay, p[1] * decay};
}

inline Vec2 sigma_up(const SystemModel& m, double xi) { return sigma(m, Branch::up, xi); }
inline Vec2 sigma_down(const SystemModel& m, double xi) { return sigma(m, Branch::down, xi); }

// Times t in [lo, hi] at which the orbit phase a0 + t hits u = 0 (phase 0 or alpha_plus mod alpha).
inline std::vector<double> u_crossing_times(double ap, double per, double a0, double lo, double hi) {
  std::vector<double> out;
  for (double off : {0.0, ap}) {
    const double k0 = std::ceil((lo + a0 - off) / per);
    for (double k = k0;; k += 1) {
      const double t = k * per + off - a0;
      if (t > hi) break;
      if (t >= lo) out.push_back(t);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct PhaseOnOrbit {
  double theta;  // in [0, 1)
  double v0;     // level: U = v0^2 / 2
};

// Inverse of phi_u: locate (u, v) on its own energy level.
inline PhaseOnOrbit invert_phi_u(const SystemModel& m, double u, double v) {
  const double U = m.U(u, v);
  if (!(U > 0)) throw DomainError("invert_phi_u: point is not on a periodic orbit");
  const double v0 = std::sqrt(2 * U);
  check_level(m, v0);
  const double ap = alpha_plus(m, v0), am = alpha_minus(m, v0), per = ap + am;
  if (u == 0) return {v > 0 ? 0.0 : ap / per, v0};
  double lo = u > 0 ? 0.0 : ap, hi = u > 0 ? ap : per;
  auto g = [&](double tau) {
    const double vv = phi_u(m, tau, v0)[1];
    return u > 0 ? vv - v : v - vv;  // decreasing in the right half, increasing in the left
  };
  double glo = g(lo), ghi = g(hi);
  if (glo < 0) return {lo / per, v0};
  if (ghi > 0) return {wrap_phase(hi, per) / per, v0};
  boost::uintmax_t iters = 200;
  auto r = boost::math::tools::toms748_solve(g, lo, hi, glo, ghi, boost::math::tools::eps_tolerance<double>(52),
                                             iters);
  const double tau = 0.5 * (r.first + r.second);
  return {wrap_phase(tau, per) / per, v0};
}

}  // namespace pwscatter
