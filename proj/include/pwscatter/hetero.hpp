#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pwscatter/integrator.hpp"
#include "pwscatter/melnikov.hpp"
#include "pwscatter/model.hpp"
#include "pwscatter/orbits.hpp"
#include "pwscatter/parallel.hpp"
#include "pwscatter/quadrature.hpp"

namespace pwscatter {

inline constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();

enum class Shot { escape, returns, inconclusive, failed };

inline const char* to_string(Shot s) {
  switch (s) {
    case Shot::escape: return "escape";
    case Shot::returns: return "return";
    case Shot::inconclusive: return "inconclusive";
    case Shot::failed: return "failed";
  }
  return "?";
}

enum class ManifoldSide { stable, unstable };

struct ShootResult {
  Shot outcome = Shot::failed;
  Termination reason = Termination::step_failure;
  double elapsed = 0;
  State6 final_state{};
  std::string message;
};

struct HeteroOptions {
  StepControl ctrl;
  double bisect_tol = 1e-12;    // final bracket width on y
  double distance_tol = 1e-10;  // |y_u - y_s| accepted at the connection
  int candidates = 8;           // interior test points per bisection round
  int max_expansions = 4;
  double max_time = 200;        // shots longer than this are inconclusive
  double escape_radius = 2.0;
  int max_root_iterations = 60;
};

inline double branch_sign(Branch b) { return b == Branch::up ? 1.0 : -1.0; }

// Side of x = 0 a shot leaves into: forward along the stable side heads for the exit saddle.
inline int departing_side(ManifoldSide side, Branch b) {
  const int s = side == ManifoldSide::stable ? 1 : -1;
  return b == Branch::up ? s : -s;
}

// Start of a shot on x = 0 at shift zeta; the time tag is zeta so that phases stay consistent.
inline ExtendedState shooting_point(const SystemModel& m, const ReferenceCoords& c, double zeta, double y) {
  const Vec2 uv = phi_u(m, c.theta * alpha(m, c.v) + zeta, c.v);
  return {uv[0], uv[1], 0.0, y, c.s + zeta, zeta};
}

inline ShootResult classify(const SystemModel& m, const ExtendedState& z0, ManifoldSide side, Branch b,
                            const HeteroOptions& opt) {
  if (std::abs(z0.x) > 1e-12) throw DomainError("classify: start must lie on x = 0");
  const int dir = side == ManifoldSide::stable ? 1 : -1;
  StopCondition stop;
  stop.manifold = 1;
  ShootResult r;
  Trajectory tr;
  try {
    tr = integrate(m, z0, dir * opt.max_time, opt.ctrl, stop, opt.escape_radius);
  } catch (const DomainError& e) {
    r.message = e.what();
    return r;
  }
  r.reason = tr.reason;
  r.elapsed = tr.final_time - z0.time.value_or(0.0);
  r.final_state = tr.final_state;
  r.message = tr.message;
  switch (tr.reason) {
    case Termination::event_reached: r.outcome = Shot::returns; break;
    case Termination::time_reached: r.outcome = Shot::inconclusive; break;
    case Termination::step_failure: r.outcome = Shot::failed; break;
    case Termination::escape: {
      const double x = tr.final_state[2];
      const bool outward = std::abs(x) >= opt.escape_radius && sign_of(x) == departing_side(side, b);
      r.outcome = outward ? Shot::escape : Shot::failed;
      if (!outward) r.message = "left the region through u";
      break;
    }
  }
  return r;
}

struct OrdinateResult {
  double y = 0;         // midpoint of the final bracket
  double lo = 0, hi = 0;  // returning / escaping ends, as y values
  int rounds = 0;
  int shots = 0;
  int expansions = 0;
};

// Bisection shooting for the ordinate where a manifold of the saddle cylinder meets x = 0.
inline OrdinateResult locate_manifold_ordinate(const SystemModel& m, double zeta, const ReferenceCoords& c,
                                               ManifoldSide side, Branch b, const HeteroOptions& opt,
                                               const WorkerPool& pool = WorkerPool(1),
                                               std::optional<double> hint = {}, double hint_width = 0) {
  check_coords(m, c);
  if (!(opt.bisect_tol > 0)) throw DomainError("bisect_tol must be positive");
  if (opt.candidates < 1) throw DomainError("need at least one bisection candidate");
  const double sg = branch_sign(b);
  OrdinateResult res;
  // work with eta = sg * y so that small eta returns and large eta escapes
  auto shoot = [&](const std::vector<double>& etas) {
    std::vector<Shot> out(etas.size());
    pool.parallel_for(etas.size(), [&](std::size_t i) {
      out[i] = classify(m, shooting_point(m, c, zeta, sg * etas[i]), side, b, opt).outcome;
    });
    res.shots += int(etas.size());
    return out;
  };

  double lo = 0, hi = 0;
  bool ok = false;
  auto try_bracket = [&](double center, double w) {
    for (int e = 0; e <= opt.max_expansions; ++e, w *= 2) {
      const double a = center - w, z = center + w;
      if (a <= 0) break;
      const auto s = shoot({a, z});
      if (s[0] == Shot::returns && s[1] == Shot::escape) {
        lo = a;
        hi = z;
        res.expansions = e;
        return true;
      }
    }
    return false;
  };
  if (hint && hint_width > 0) ok = try_bracket(sg * *hint, hint_width);
  if (!ok) ok = try_bracket(m.y_h, std::max(m.splitting_scale * m.eps, 1e-4));
  if (!ok) throw ConvergenceError("shooting bracket not found after expansion");

  const int k = opt.candidates;
  while (hi - lo > opt.bisect_tol) {
    std::vector<double> etas(k);
    for (int i = 0; i < k; ++i) etas[i] = lo + (hi - lo) * double(i + 1) / (k + 1);
    const auto s = shoot(etas);
    int first_escape = k;
    for (int i = 0; i < k; ++i)
      if (s[i] == Shot::escape) {
        first_escape = i;
        break;
      }
    double nlo = lo;
    for (int i = 0; i < first_escape; ++i)
      if (s[i] == Shot::returns) nlo = etas[i];
    const double nhi = first_escape < k ? etas[first_escape] : hi;
    ++res.rounds;
    if (nlo == lo && nhi == hi) break;  // every candidate inconclusive: nothing more to learn
    lo = nlo;
    hi = nhi;
    if (res.rounds > 200) throw ConvergenceError("bisection did not converge");
  }
  res.lo = sg * lo;
  res.hi = sg * hi;
  res.y = sg * 0.5 * (lo + hi);
  return res;
}

struct DistanceResult {
  double delta = 0;  // X(0, y_u) - X(0, y_s)
  double raw = 0;    // y_u - y_s
  double y_s = 0, y_u = 0;
  OrdinateResult stable, unstable;
};

struct DistanceHints {
  std::optional<double> y_s, y_u;
  double width = 0;
};

inline DistanceResult real_distance(const SystemModel& m, double zeta, const ReferenceCoords& c, Branch b,
                                    const HeteroOptions& opt, const WorkerPool& pool = WorkerPool(1),
                                    const DistanceHints& hints = {}) {
  DistanceResult d;
  d.stable = locate_manifold_ordinate(m, zeta, c, ManifoldSide::stable, b, opt, pool, hints.y_s, hints.width);
  d.unstable = locate_manifold_ordinate(m, zeta, c, ManifoldSide::unstable, b, opt, pool, hints.y_u, hints.width);
  d.y_s = d.stable.y;
  d.y_u = d.unstable.y;
  d.raw = d.y_u - d.y_s;
  d.delta = 0.5 * d.raw * (d.y_u + d.y_s);
  return d;
}

struct HeteroclinicConnection {
  ReferenceCoords coords;
  Branch branch = Branch::up;
  int zero_index = 0;
  double zeta_bar = 0;
  double zeta_star = 0;
  double y_s = 0, y_u = 0;
  ExtendedState z0_star;  // on x = 0, time tag zeta_star
  ExtendedState z_star;   // pulled back to time 0
  double delta_U_first_order = nan_value;
  double avg_diff_first_order = nan_value;
  double measured_delta = nan_value;
  // diagnostics
  int root_iterations = 0;
  int shots = 0;
  double residual = 0;  // |y_u - y_s| at zeta_star
};

// Solve Delta(zeta) = 0 near a simple Melnikov zero by bracketed secant (Illinois), warm-starting
// each shooting bracket from the previous ordinates.
inline HeteroclinicConnection find_heteroclinic(const SystemModel& m, const ZeroRecord& zero, const ReferenceCoords& c,
                                                Branch b, const HeteroOptions& opt,
                                                const WorkerPool& pool = WorkerPool(1)) {
  check_coords(m, c);
  HeteroclinicConnection h;
  h.coords = c;
  h.branch = b;
  h.zero_index = zero.index;
  h.zeta_bar = zero.zeta;
  const double sg = branch_sign(b);
  if (m.eps == 0) {
    h.zeta_star = zero.zeta;
    h.y_s = h.y_u = sg * m.y_h;
  } else {
    DistanceHints hints;
    std::optional<double> last_zeta;
    auto eval = [&](double z) {
      if (last_zeta) hints.width = m.eps * m.perturbation_bound * std::abs(z - *last_zeta) + 1e-10;
      const DistanceResult d = real_distance(m, z, c, b, opt, pool, hints);
      hints.y_s = d.y_s;
      hints.y_u = d.y_u;
      last_zeta = z;
      h.shots += d.stable.shots + d.unstable.shots;
      ++h.root_iterations;
      return d;
    };
    auto done = [&](const DistanceResult& d) { return std::abs(d.raw) <= opt.distance_tol; };
    auto accept = [&](double z, const DistanceResult& d) {
      h.zeta_star = z;
      h.y_s = d.y_s;
      h.y_u = d.y_u;
    };

    double slope = zero.slope;
    if (slope == 0) throw DomainError("find_heteroclinic: zero is not simple");
    double z0 = zero.zeta;
    DistanceResult d0 = eval(z0);
    // the raw distance behaves like eps * M'(zeta_bar) (zeta - zeta_bar) / y_h
    const double raw_slope = sg * m.eps * slope / m.y_h;
    double z1 = z0 - d0.raw / raw_slope;
    if (done(d0)) {
      accept(z0, d0);
      z1 = z0;
    }
    if (!done(d0)) {
      DistanceResult d1 = eval(z1);
      // secant steps until the sign changes
      int guard = 0;
      while (!done(d1) && (d0.raw < 0) == (d1.raw < 0)) {
        if (++guard > 8) throw ConvergenceError("find_heteroclinic: no sign change of the distance near the zero");
        const double den = d1.raw - d0.raw;
        double z2 = den != 0 ? z1 - d1.raw * (z1 - z0) / den : z1 + (z1 - z0);
        if (!std::isfinite(z2) || std::abs(z2 - zero.zeta) > 0.5) z2 = z1 + 2 * (z1 - z0);
        z0 = z1;
        d0 = d1;
        z1 = z2;
        d1 = eval(z1);
      }
      if (done(d1)) {
        accept(z1, d1);
      } else {
        // Illinois on [a, c] with values of opposite sign
        double a = z0, bz = z1, fa = d0.raw, fb = d1.raw;
        DistanceResult best = std::abs(fa) < std::abs(fb) ? d0 : d1;
        double best_z = std::abs(fa) < std::abs(fb) ? a : bz;
        int side = 0;
        bool found = false;
        for (int it = 0; it < opt.max_root_iterations; ++it) {
          const double zc = (a * fb - bz * fa) / (fb - fa);
          const DistanceResult dc = eval(zc);
          if (std::abs(dc.raw) < std::abs(best.raw)) {
            best = dc;
            best_z = zc;
          }
          if (done(dc)) {
            found = true;
            break;
          }
          if ((dc.raw < 0) == (fb < 0)) {
            bz = zc;
            fb = dc.raw;
            if (side == -1) fa *= 0.5;
            side = -1;
          } else {
            a = zc;
            fa = dc.raw;
            if (side == 1) fb *= 0.5;
            side = 1;
          }
          if (std::abs(bz - a) <= 1e-15 * (1 + std::abs(a))) break;
        }
        if (!found && !done(best)) throw ConvergenceError("find_heteroclinic: distance tolerance not reached");
        accept(best_z, best);
      }
    }
  }
  h.residual = std::abs(h.y_u - h.y_s);
  const double ystar = 0.5 * (h.y_s + h.y_u);
  h.z0_star = shooting_point(m, c, h.zeta_star, ystar);
  if (h.zeta_star == 0) {
    h.z_star = h.z0_star;
  } else {
    const Trajectory tr = integrate(m, h.z0_star, -h.zeta_star, opt.ctrl, {}, opt.escape_radius);
    if (tr.reason != Termination::time_reached) throw ConvergenceError("find_heteroclinic: pull-back failed");
    h.z_star = to_extended(m, tr.final_state, 0.0);
    h.z_star.s = wrap_phase(c.s, m.period);  // s advances exactly with time
  }
  return h;
}

namespace detail {

inline Vec2 branch_asymptote(const SystemModel& m, Branch b, bool future) {
  const bool plus = (b == Branch::up) == future;
  return {plus ? m.q_plus : m.q_minus, 0.0};
}

inline double uh_along(const SystemModel& m, const Vec2& uv, const Vec2& xy, double s) {
  return poisson_bracket_Uh(m, ExtendedState{uv[0], uv[1], xy[0], xy[1], s});
}

inline std::vector<double> merged_breaks(std::vector<double> br, double lo, double hi) {
  br.push_back(lo);
  br.push_back(hi);
  std::sort(br.begin(), br.end());
  br.erase(std::unique(br.begin(), br.end()), br.end());
  std::vector<double> out;
  for (double t : br)
    if (t >= lo && t <= hi) out.push_back(t);
  return out;
}

}  // namespace detail

// First-order energy change along the connection: {U,h} on the heteroclinic minus its value with the
// x-part frozen at the saddle it is asymptotic to, over each half line.
inline double delta_U_first_order(const SystemModel& m, double zeta_bar, const ReferenceCoords& c, Branch b,
                                  double quad_tol = 1e-10) {
  check_coords(m, c);
  if (!(quad_tol > 0)) throw DomainError("quad_tol must be positive");
  const double ap = alpha_plus(m, c.v), per = alpha(m, c.v), a0 = c.theta * per;
  const double T = tail_cut(m, quad_tol) + std::abs(zeta_bar);
  const Vec2 past = detail::branch_asymptote(m, b, false), future = detail::branch_asymptote(m, b, true);
  auto g = [&](double t) {
    const Vec2 uv = phi_u(m, a0 + t, c.v);
    const double s = c.s + t;
    return detail::uh_along(m, uv, sigma(m, b, t - zeta_bar), s) - detail::uh_along(m, uv, t < 0 ? past : future, s);
  };
  std::vector<double> br = u_crossing_times(ap, per, a0, -T, T);
  br.push_back(0.0);
  br.push_back(zeta_bar);
  QuadOptions o;
  o.abs_tol = quad_tol;
  return integrate_panels(g, detail::merged_breaks(br, -T, T), o).value;
}

struct AverageFirstOrder {
  double value = nan_value;   // mean of A(T) over the tail window [(1 - window) T_max, T_max]
  double spread = nan_value;  // max - min of A(T) over the window
  double limit = nan_value;   // T -> infinity value (NaN at an exact resonance)
  double delta_U = nan_value;
  double t_max = 0;
  bool resonant = false;
  std::vector<double> window_times, window_values;
};

struct AverageOptions {
  double t_max = 200;
  double window = 0.2;    // tail fraction of [0, T_max]
  int window_points = 64;
  double quad_tol = 1e-10;
  int fourier_samples = 16;  // samples of the forcing phase for the limit
  bool with_limit = true;
  bool with_window = true;
};

inline std::vector<double> tail_window(double t_max, double window, int n) {
  if (!(t_max > 0) || !(window > 0 && window <= 1) || n < 2) throw DomainError("invalid averaging window");
  return linspace(t_max * (1 - window), t_max, n);
}

namespace detail {

// Cesaro mean of F(t) = int_0^t q(r) dr for q(r + a) = mu q(r), |mu| = 1.
template <class Q>
std::complex<double> cesaro_constant(const Q& q, double a, std::complex<double> mu, const std::vector<double>& br,
                                     double tol, bool& resonant) {
  QuadOptions o;
  o.abs_tol = tol;
  const double jr = integrate_panels([&](double r) { return q(r).real(); }, br, o).value;
  const double ji = integrate_panels([&](double r) { return q(r).imag(); }, br, o).value;
  const std::complex<double> J(jr, ji);
  if (std::abs(mu - 1.0) < 1e-12) {
    if (std::abs(J) > 1e3 * tol) resonant = true;
    const double kr = integrate_panels([&](double r) { return (a - r) * q(r).real(); }, br, o).value;
    const double ki = integrate_panels([&](double r) { return (a - r) * q(r).imag(); }, br, o).value;
    return std::complex<double>(kr, ki) / a;
  }
  if (std::abs(mu - 1.0) < 1e-9 && std::abs(J) > 1e3 * tol) resonant = true;
  return -J / (mu - 1.0);
}

}  // namespace detail

// First-order difference of the forward and backward time averages of U along the connection:
// A(T) = int_{-T}^{T} g(r) (1 - |r|/T) dr with g = {U,h} on the unperturbed heteroclinic.
inline AverageFirstOrder average_diff_first_order(const SystemModel& m, double zeta_bar, const ReferenceCoords& c,
                                                  Branch b, const AverageOptions& opt = {}) {
  check_coords(m, c);
  AverageFirstOrder r;
  r.t_max = opt.t_max;
  const double ap = alpha_plus(m, c.v), per = alpha(m, c.v), a0 = c.theta * per;
  auto g = [&](double t) { return detail::uh_along(m, phi_u(m, a0 + t, c.v), sigma(m, b, t - zeta_bar), c.s + t); };

  if (opt.with_window) {
    const std::vector<double> Ts = tail_window(opt.t_max, opt.window, opt.window_points);
    r.window_times = Ts;
    // cumulative int g and int |r| g on each half line, sampled at the window times
    std::vector<double> kinks = u_crossing_times(ap, per, a0, -opt.t_max, opt.t_max);
    kinks.push_back(zeta_bar);
    QuadOptions o;
    o.abs_tol = opt.quad_tol;
    auto half = [&](int dir, std::vector<double>& G0, std::vector<double>& G1) {
      std::vector<double> br;
      for (double t : kinks)
        if (dir * t > 0 && dir * t < opt.t_max) br.push_back(dir * t);
      for (double t : Ts) br.push_back(t);
      br.push_back(0.0);
      std::sort(br.begin(), br.end());
      br.erase(std::unique(br.begin(), br.end()), br.end());
      double c0 = 0, c1 = 0;
      std::size_t next = 0;
      G0.assign(Ts.size(), 0);
      G1.assign(Ts.size(), 0);
      QuadOptions po = o;
      for (std::size_t i = 0; i + 1 < br.size(); ++i) {
        const double a = br[i], e = br[i + 1];
        po.abs_tol = o.abs_tol * (e - a) / opt.t_max;
        const std::vector<double> pb{a, e};
        c0 += integrate_panels([&](double x) { return g(dir * x); }, pb, po).value;
        c1 += integrate_panels([&](double x) { return x * g(dir * x); }, pb, po).value;
        while (next < Ts.size() && Ts[next] == e) {
          G0[next] = c0;
          G1[next] = c1;
          ++next;
        }
      }
    };
    std::vector<double> P0, P1, N0, N1;
    half(1, P0, P1);
    half(-1, N0, N1);
    r.window_values.resize(Ts.size());
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = 0; k < Ts.size(); ++k) {
      const double A = (P0[k] + N0[k]) - (P1[k] + N1[k]) / Ts[k];
      r.window_values[k] = A;
      lo = std::min(lo, A);
      hi = std::max(hi, A);
    }
    r.value = pairwise_sum(r.window_values) / double(Ts.size());
    r.spread = hi - lo;
  }

  r.delta_U = delta_U_first_order(m, zeta_bar, c, b, opt.quad_tol);
  if (!opt.with_limit) return r;

  // T -> infinity: delta_U plus the Cesaro constants of the frozen-saddle integrands on each half line,
  // mode by mode in the forcing phase (each mode is quasi-periodic with multiplier mu per orbit period)
  const Vec2 past = detail::branch_asymptote(m, b, false), future = detail::branch_asymptote(m, b, true);
  const int N = std::max(2, opt.fourier_samples);
  const double Om = 2 * std::numbers::pi / m.period;
  std::vector<double> br = u_crossing_times(ap, per, a0, 0.0, per);
  std::vector<double> brn = u_crossing_times(ap, per, a0, -per, 0.0);
  for (double& t : brn) t = -t;
  const auto bp = detail::merged_breaks(br, 0.0, per), bn = detail::merged_breaks(brn, 0.0, per);
  std::complex<double> total = 0;
  for (int n = -N / 2 + 1; n <= N / 2; ++n) {
    // d_n(a) = (1/N) sum_j D(a, S_j) e^{-i n Om S_j}; mode contribution p_n(r) = d_n(a0 + r) e^{i n Om (s + r)}
    auto mode = [&](const Vec2& q, double r) {
      const Vec2 uv = phi_u(m, a0 + r, c.v);
      std::complex<double> acc = 0;
      for (int j = 0; j < N; ++j) {
        const double S = m.period * j / N;
        acc += detail::uh_along(m, uv, q, S) * std::polar(1.0, -n * Om * S);
      }
      return acc / double(N) * std::polar(1.0, n * Om * (c.s + r));
    };
    const std::complex<double> mu = std::polar(1.0, n * Om * per);
    total += detail::cesaro_constant([&](double r) { return mode(future, r); }, per, mu, bp, opt.quad_tol, r.resonant);
    total += detail::cesaro_constant([&](double r) { return mode(past, -r); }, per, std::conj(mu), bn, opt.quad_tol,
                                     r.resonant);
  }
  r.limit = r.resonant ? nan_value : r.delta_U + total.real();
  return r;
}

struct MeasuredAverage {
  double value = nan_value;  // forward minus backward tail-window means
  double forward = nan_value, backward = nan_value;
  double reached_forward = 0, reached_backward = 0;
  bool escaped = false;
  std::vector<double> window_times, forward_values, backward_values;
};

// Time averages of U forward and backward from z*, compared over the same tail window as
// average_diff_first_order.
inline MeasuredAverage measured_average_diff(const SystemModel& m, const HeteroclinicConnection& h, double horizon,
                                             const StepControl& ctrl, double window = 0.2, int window_points = 64) {
  MeasuredAverage r;
  r.window_times = tail_window(horizon, window, window_points);
  std::vector<double> back(r.window_times.size());
  for (std::size_t k = 0; k < back.size(); ++k) back[k] = -r.window_times[k];
  ExtendedState z = h.z_star;
  z.time = 0.0;
  const RunningAverage f = augmented_average(m, z, horizon, r.window_times, ctrl);
  const RunningAverage bk = augmented_average(m, z, -horizon, back, ctrl);
  r.reached_forward = f.reached;
  r.reached_backward = -bk.reached;
  r.forward_values = f.averages;
  r.backward_values = bk.averages;
  if (f.reason != Termination::time_reached || bk.reason != Termination::time_reached ||
      f.averages.size() != r.window_times.size() || bk.averages.size() != r.window_times.size()) {
    r.escaped = true;
    return r;
  }
  r.forward = pairwise_sum(f.averages) / double(f.averages.size());
  r.backward = pairwise_sum(bk.averages) / double(bk.averages.size());
  r.value = r.forward - r.backward;
  return r;
}

// Scattering map on reference coordinates: entry point on one saddle cylinder, exit point on the other.
struct ScatterResult {
  ReferenceCoords in, out;
  Branch branch = Branch::up;
  double zeta_bar = 0, zeta_star = 0;
  double delta_U = 0;
  HeteroclinicConnection connection;
};

inline ScatterResult scatter(const SystemModel& m, const ReferenceCoords& c, Branch b, int zero_index,
                             const HeteroOptions& opt, double zeta_max = 8.0, int zeta_points = 161,
                             double quad_tol = 1e-10, const WorkerPool& pool = WorkerPool(1)) {
  const auto prof = melnikov_profile(m, c, linspace(-1.0, zeta_max, zeta_points), quad_tol, b, pool);
  const auto zs = find_zeros(m, prof);
  const ZeroRecord* z = zero_with_index(zs, zero_index);
  if (!z) throw ConvergenceError("scatter: no Melnikov zero with the requested index");
  ScatterResult r;
  r.in = c;
  r.branch = b;
  r.zeta_bar = z->zeta;
  r.connection = find_heteroclinic(m, *z, c, b, opt, pool);
  r.zeta_star = r.connection.zeta_star;
  r.delta_U = delta_U_first_order(m, z->zeta, c, b, quad_tol);
  // the phase on the exit cylinder is read off z*; the level moves by the first-order energy change
  const PhaseOnOrbit ph = invert_phi_u(m, r.connection.z_star.u, r.connection.z_star.v);
  const double U_out = 0.5 * c.v * c.v + m.eps * r.delta_U;
  if (!(U_out > 0)) throw DomainError("scatter: exit level leaves the periodic-orbit family");
  r.out = {ph.theta, std::sqrt(2 * U_out), c.s};
  return r;
}

}  // namespace pwscatter
