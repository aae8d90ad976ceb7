#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "pwscatter/model.hpp"
#include "pwscatter/rk_tableau.hpp"

namespace pwscatter {

struct StepControl {
  double rel_tol = 1e-12;
  double abs_tol = 1e-14;
  double max_step = 0.25;
  double min_step = 1e-13;
  double initial_step = 0.0;  // 0 picks one automatically
  double event_tol = 1e-13;   // relative to the state scale
  double graze_tol = 1e-10;   // minimum normal velocity for a crossing
  Method method = Method::dop853;
  long max_steps = 5'000'000;

  void validate() const {
    if (!(rel_tol > 0) || !(abs_tol > 0) || !(event_tol > 0) || !(graze_tol > 0))
      throw DomainError("step control: tolerances must be positive");
    if (!(min_step > 0) || !(min_step < max_step)) throw DomainError("step control: need 0 < min_step < max_step");
  }
};

enum class Termination { time_reached, event_reached, escape, step_failure };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::time_reached: return "time_reached";
    case Termination::event_reached: return "event_reached";
    case Termination::escape: return "escape";
    case Termination::step_failure: return "step_failure";
  }
  return "?";
}

template <std::size_t N>
struct Event {
  double time = 0;
  std::array<double, N> state{};
  int manifold = 0;   // index of the switching coordinate
  int direction = 0;  // sign of the coordinate's velocity
};

template <std::size_t N, std::size_t K>
struct Path {
  std::vector<double> times;
  std::vector<std::array<double, N>> states;
  std::vector<Event<N>> events;
  Termination reason = Termination::time_reached;
  std::string message;
  double final_time = 0;
  std::array<double, N> final_state{};
  std::array<int, K> final_region{};
  long steps = 0;
  long rejected = 0;
};

struct StopCondition {
  int manifold = -1;   // stop at a crossing of this switching coordinate (-1: never)
  int direction = 0;   // required sign of the coordinate's velocity, 0 for either
  int count = 1;       // number of matching crossings before stopping
  bool any_manifold = false;  // stop at the first crossing of any switching coordinate
  bool record_steps = false;
  std::vector<double> output_times;  // absolute times, visited in integration order
};

// Adaptive integration of a piecewise-smooth field with exact event location.
// Sys provides dim, n_switch, switch_index, field(signs, t, z, dz), escaped(z), scale(z).
template <class Sys>
class EventIntegrator {
 public:
  static constexpr std::size_t N = Sys::dim;
  static constexpr std::size_t K = Sys::n_switch;
  using Vec = std::array<double, N>;
  using Signs = std::array<int, K>;
  using Result = Path<N, K>;

  EventIntegrator(const Sys& sys, const StepControl& ctrl) : sys_(sys), ctrl_(ctrl), rk_(ctrl.method) {
    ctrl_.validate();
  }

  // Chooses the side of each switching coordinate, using the flow direction when on a manifold.
  Signs initial_signs(double t0, const Vec& z0, double dir, std::array<bool, K>* on = nullptr) {
    Signs sg{};
    for (std::size_t j = 0; j < K; ++j) sg[j] = sign_of(z0[Sys::switch_index[j]]);
    const double sc = sys_.scale(z0.data());
    for (std::size_t j = 0; j < K; ++j) {
      const double c = z0[Sys::switch_index[j]];
      const bool at = std::abs(c) <= ctrl_.event_tol * sc;
      if (on) (*on)[j] = at;
      if (!at) continue;
      Vec dz;
      sys_.field(sg, t0, z0.data(), dz.data());
      const double vn = dir * dz[Sys::switch_index[j]];
      if (std::abs(vn) < ctrl_.graze_tol) throw DomainError("initial state sits on a fold of the switching manifold");
      sg[j] = vn > 0 ? 1 : -1;
    }
    return sg;
  }

  Result run(double t0, const Vec& z0, double t_end, const StopCondition& stop) {
    std::array<bool, K> on{};
    const double dir = t_end >= t0 ? 1.0 : -1.0;
    return run(t0, z0, t_end, stop, initial_signs(t0, z0, dir, &on));
  }

  Result run(double t0, const Vec& z0, double t_end, const StopCondition& stop, Signs sg) {
    Result res;
    const double dir = t_end >= t0 ? 1.0 : -1.0;
    double t = t0;
    Vec z = z0;
    std::array<bool, K> armed{};
    for (std::size_t j = 0; j < K; ++j) armed[j] = sg[j] * z[Sys::switch_index[j]] > 0;

    res.times.push_back(t);
    res.states.push_back(z);
    auto finish = [&](Termination why, std::string msg = {}) {
      res.reason = why;
      res.message = std::move(msg);
      res.final_time = t;
      res.final_state = z;
      res.final_region = sg;
      if (res.times.back() != t || res.states.back() != z) {
        res.times.push_back(t);
        res.states.push_back(z);
      }
      return res;
    };

    if (t_end == t0) return finish(Termination::time_reached);

    std::vector<double> outs;
    for (double to : stop.output_times)
      if ((to - t0) * dir > 0 && (to - t_end) * dir <= 0) outs.push_back(to);
    std::sort(outs.begin(), outs.end(), [dir](double a, double b) { return a * dir < b * dir; });
    std::size_t next_out = 0;

    auto f = [&](double tt, const double* zz, double* dd) { sys_.field(sg, tt, zz, dd); };
    Vec k1;
    f(t, z.data(), k1.data());

    double h = ctrl_.initial_step > 0 ? ctrl_.initial_step : initial_step(t, z, k1, dir);
    h = dir * std::min(std::abs(h), ctrl_.max_step);
    int matched = 0;
    Vec z1, k_end;

    while (true) {
      if (res.steps >= ctrl_.max_steps) return finish(Termination::step_failure, "step budget exhausted");
      double target = t_end;
      if (next_out < outs.size()) target = outs[next_out];
      const double h_free = h;
      bool lands = false;
      if ((t + h - target) * dir >= 0 || std::abs(target - t - h) < 1e-3 * std::abs(h)) {
        h = target - t;
        lands = true;
      }
      if (std::abs(h) < ctrl_.min_step && !lands)
        return finish(Termination::step_failure, "step size underflow");

      const double err = rk_.step(f, t, z, k1, h, z1, ctrl_.rel_tol, ctrl_.abs_tol);
      const bool finite = std::isfinite(err) && all_finite(z1);
      if (!finite || err > 1.0) {
        ++res.rejected;
        const double fac = finite ? std::clamp(0.9 * std::pow(err, -1.0 / 8.0), 0.2, 1.0) : 0.2;
        h *= fac;
        if (std::abs(h) < ctrl_.min_step) return finish(Termination::step_failure, "step size underflow");
        continue;
      }
      ++res.steps;
      double h_next = h * std::clamp(0.9 * std::pow(std::max(err, 1e-12), -1.0 / 8.0), 0.2, 5.0);
      if (lands) h_next = dir * std::max(std::abs(h_next), std::abs(h_free));
      h_next = dir * std::min(std::abs(h_next), ctrl_.max_step);
      f(t + h, z1.data(), k_end.data());

      // event search along the step
      int jc = -1;
      double th = 1.0;
      find_crossing(t, z, k1, h, z1, k_end, sg, armed, jc, th);
      if (jc >= 0) {
        Vec ze;
        double te;
        if (!refine(t, z, k1, h, sg, jc, th, ze, te))
          return finish(Termination::step_failure, "event refinement failed");
        Vec fe;
        f(te, ze.data(), fe.data());
        const double vn = fe[Sys::switch_index[jc]];
        if (std::abs(vn) < ctrl_.graze_tol) {
          t = te;
          z = ze;
          return finish(Termination::step_failure, "tangential crossing");
        }
        t = te;
        z = ze;
        Event<N> ev;
        ev.time = te;
        ev.state = ze;
        ev.manifold = jc;
        ev.direction = vn > 0 ? 1 : -1;
        res.events.push_back(ev);
        sg[jc] = dir * vn > 0 ? 1 : -1;
        armed[jc] = false;
        for (std::size_t j = 0; j < K; ++j)
          if (!armed[j] && sg[j] * z[Sys::switch_index[j]] > 0) armed[j] = true;
        if (stop.record_steps) {
          res.times.push_back(t);
          res.states.push_back(z);
        }
        if (sys_.escaped(z.data())) return finish(Termination::escape);
        if (stop.any_manifold ||
            (stop.manifold == jc && (stop.direction == 0 || stop.direction == ev.direction) &&
             ++matched >= stop.count))
          return finish(Termination::event_reached);
        f(t, z.data(), k1.data());
        h = h_next;
        continue;
      }

      t = lands ? target : t + h;
      z = z1;
      k1 = k_end;
      for (std::size_t j = 0; j < K; ++j)
        if (!armed[j] && sg[j] * z[Sys::switch_index[j]] > 0) armed[j] = true;
      const bool is_out = lands && next_out < outs.size() && target == outs[next_out];
      if (is_out) ++next_out;
      if (stop.record_steps || is_out) {
        res.times.push_back(t);
        res.states.push_back(z);
      }
      if (sys_.escaped(z.data())) return finish(Termination::escape);
      if (lands && target == t_end) return finish(Termination::time_reached);
      h = h_next;
    }
  }

  const StepControl& control() const { return ctrl_; }

 private:
  static bool all_finite(const Vec& z) {
    for (double c : z)
      if (!std::isfinite(c)) return false;
    return true;
  }

  double initial_step(double t, const Vec& z, const Vec& k1, double dir) {
    double d0 = 0, d1 = 0;
    for (std::size_t i = 0; i < N; ++i) {
      const double sk = ctrl_.abs_tol + ctrl_.rel_tol * std::abs(z[i]);
      d0 += (z[i] / sk) * (z[i] / sk);
      d1 += (k1[i] / sk) * (k1[i] / sk);
    }
    double h0 = (d0 < 1e-10 || d1 < 1e-10) ? 1e-6 : 0.01 * std::sqrt(d0 / d1);
    h0 = std::min(h0, ctrl_.max_step);
    Vec z1, k2;
    for (std::size_t i = 0; i < N; ++i) z1[i] = z[i] + dir * h0 * k1[i];
    Signs sg{};
    for (std::size_t j = 0; j < K; ++j) sg[j] = sign_of(z[Sys::switch_index[j]]);
    sys_.field(sg, t + dir * h0, z1.data(), k2.data());
    double d2 = 0;
    for (std::size_t i = 0; i < N; ++i) {
      const double sk = ctrl_.abs_tol + ctrl_.rel_tol * std::abs(z[i]);
      d2 += ((k2[i] - k1[i]) / sk) * ((k2[i] - k1[i]) / sk);
    }
    d2 = std::sqrt(d2) / h0;
    const double dm = std::max(std::sqrt(d1), d2);
    const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 1.0 / 8.0);
    return std::min({100 * h0, h1, ctrl_.max_step});
  }

  // Earliest sign change of an armed switching coordinate, sampled on a cubic Hermite
  // interpolant at interior points and at the step end. Reports the coordinate and the
  // step fraction of the first sample found past the manifold.
  void find_crossing(double, const Vec& z0, const Vec& f0, double h, const Vec& z1, const Vec& f1,
                     const Signs& sg, std::array<bool, K> armed, int& jc, double& th) const {
    constexpr int samples = 9;
    jc = -1;
    for (int m = 1; m <= samples; ++m) {
      const double q = double(m) / samples;
      for (std::size_t j = 0; j < K; ++j) {
        const std::size_t i = Sys::switch_index[j];
        const double c = m == samples ? z1[i] : hermite(z0[i], f0[i], z1[i], f1[i], h, q);
        const double g = sg[j] * c;
        if (!armed[j]) {
          if (g > 0) armed[j] = true;
          continue;
        }
        if (g < 0) {
          jc = int(j);
          th = q;
          return;
        }
      }
    }
  }

  static double hermite(double a, double fa, double b, double fb, double h, double q) {
    const double q1 = q - 1;
    return (1 - q) * a + q * b + q * q1 * ((1 - 2 * q) * (b - a) + q1 * h * fa + q * h * fb);
  }

  // Root of the switching coordinate along RK sub-steps from the step start: Newton in
  // the step fraction with a bisection safeguard.
  bool refine(double t, const Vec& z, const Vec& k1, double h, const Signs& sg, int jc, double th, Vec& ze,
              double& te) {
    const std::size_t i = Sys::switch_index[jc];
    const int sj = sg[jc];
    auto f = [&](double tt, const double* zz, double* dd) { sys_.field(sg, tt, zz, dd); };
    auto eval = [&](double q, Vec& out) {
      rk_.step(f, t, z, k1, q * h, out, ctrl_.rel_tol, ctrl_.abs_tol);
      return sj * out[i];
    };
    double lo = th - 1.0 / 9.0, hi = th;
    if (lo < 0) lo = 0;
    Vec zq;
    double ghi = eval(hi, zq);
    double glo = lo > 0 ? eval(lo, zq) : sj * z[i];
    // sampled bracket may be off by the interpolation error; widen towards the start
    if (!(glo >= 0)) {
      lo = 0;
      glo = sj * z[i];
    }
    if (!(ghi <= 0)) ghi = -std::numeric_limits<double>::min();
    double q = glo - ghi > 0 ? lo + (hi - lo) * glo / (glo - ghi) : 0.5 * (lo + hi);
    const double sc = sys_.scale(z.data());
    const double tight = 4 * std::numeric_limits<double>::epsilon() * sc;
    double g = 0;
    double best_q = q, best_g = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 60; ++it) {
      g = eval(q, zq);
      if (std::abs(g) < std::abs(best_g)) {
        best_g = g;
        best_q = q;
      }
      if (std::abs(g) <= tight) break;
      if (g > 0)
        lo = q;
      else
        hi = q;
      Vec fq;
      f(t + q * h, zq.data(), fq.data());
      const double dg = sj * fq[i] * h;
      double qn = dg != 0 ? q - g / dg : 0.5 * (lo + hi);
      if (!(qn > lo && qn < hi)) qn = 0.5 * (lo + hi);
      if (std::abs(qn - q) <= 2 * std::numeric_limits<double>::epsilon() * std::max(1.0, q)) {
        q = qn;
        g = eval(q, zq);
        if (std::abs(g) < std::abs(best_g)) {
          best_g = g;
          best_q = q;
        }
        break;
      }
      q = qn;
    }
    if (q != best_q) g = eval(best_q, zq);
    q = best_q;
    if (!(std::abs(best_g) <= ctrl_.event_tol * sc)) return false;
    ze = zq;
    te = t + q * h;
    return true;
  }

  const Sys& sys_;
  StepControl ctrl_;
  RkStepper<N> rk_;
};

// The coupled field in (u, v, x, y, s) plus the running integral of U as a sixth component.
struct CoupledSystem {
  static constexpr std::size_t dim = 6;
  static constexpr std::size_t n_switch = 2;
  static constexpr std::array<std::size_t, 2> switch_index = {0, 2};

  const SystemModel* model;
  double escape_radius = 2.0;

  void field(const std::array<int, 2>& sg, double, const double* z, double* dz) const {
    const SystemModel& m = *model;
    const double u = z[0], v = z[1], x = z[2], y = z[3], s = z[4];
    const double e = m.eps;
    double hu = 0, hv = 0, hx = 0, hy = 0;
    if (e != 0.0) {
      hu = m.h.h_u(u, v, x, y, s);
      hv = m.h.h_v(u, v, x, y, s);
      hx = m.h.h_x(u, v, x, y, s);
      hy = m.h.h_y(u, v, x, y, s);
    }
    const Potential& Vp = sg[0] < 0 ? m.V_minus : m.V_plus;
    const Potential& Yp = sg[1] < 0 ? m.Y_minus : m.Y_plus;
    dz[0] = v + e * hv;
    dz[1] = -Vp.d1(u) - e * hu;
    dz[2] = y + e * hy;
    dz[3] = -Yp.d1(x) - e * hx;
    dz[4] = 1.0;
    dz[5] = 0.5 * v * v + Vp.value(u);
  }
  bool escaped(const double* z) const { return std::abs(z[0]) >= escape_radius || std::abs(z[2]) >= escape_radius; }
  double scale(const double* z) const {
    return 1.0 + std::max({std::abs(z[0]), std::abs(z[1]), std::abs(z[2]), std::abs(z[3])});
  }
};

using State6 = std::array<double, 6>;
using Trajectory = Path<6, 2>;
using EventRecord = Event<6>;

inline State6 to_state6(const ExtendedState& z) { return {z.u, z.v, z.x, z.y, z.s, 0.0}; }

inline ExtendedState to_extended(const SystemModel& m, const State6& a, double t) {
  ExtendedState z{a[0], a[1], a[2], a[3], wrap_phase(a[4], m.period), t};
  return z;
}

// Integrate the coupled field from z0 over t_span (negative for backward time).
inline Trajectory integrate(const SystemModel& model, const ExtendedState& z0, double t_span,
                            const StepControl& ctrl, const StopCondition& stop = {}, double escape_radius = 2.0) {
  for (double c : {z0.u, z0.v, z0.x, z0.y, z0.s})
    if (!std::isfinite(c)) throw DomainError("integrate: non-finite initial state");
  CoupledSystem sys{&model, escape_radius};
  EventIntegrator<CoupledSystem> in(sys, ctrl);
  const double t0 = z0.time.value_or(0.0);
  return in.run(t0, to_state6(z0), t0 + t_span, stop);
}

enum class Section { u_plus, u_minus, x_zero };

// First crossing of the section strictly after the start, in the requested time direction.
inline EventRecord integrate_to_section(const SystemModel& model, const ExtendedState& z0, Section sec,
                                        int direction, const StepControl& ctrl, double max_time = 1e3,
                                        double escape_radius = 2.0) {
  StopCondition stop;
  stop.manifold = sec == Section::x_zero ? 1 : 0;
  if (sec == Section::u_plus) stop.direction = 1;
  if (sec == Section::u_minus) stop.direction = -1;
  const Trajectory tr = integrate(model, z0, direction >= 0 ? max_time : -max_time, ctrl, stop, escape_radius);
  if (tr.reason == Termination::event_reached) return tr.events.back();
  if (tr.reason == Termination::escape) throw ConvergenceError("integrate_to_section: escape before crossing");
  if (tr.reason == Termination::time_reached) throw ConvergenceError("integrate_to_section: no crossing within max time");
  throw ConvergenceError("integrate_to_section: " + tr.message);
}

struct RunningAverage {
  std::vector<double> times;     // elapsed time from the start (signed)
  std::vector<double> averages;  // (1/t) * integral of U over the elapsed interval
  Termination reason = Termination::time_reached;
  double reached = 0;            // elapsed time actually integrated
};

// (1/t) int_0^t U(phi(r; z0)) dr sampled at the given elapsed times (same sign as t_span).
inline RunningAverage augmented_average(const SystemModel& model, const ExtendedState& z0, double t_span,
                                        const std::vector<double>& sample_times, const StepControl& ctrl,
                                        double escape_radius = 2.0) {
  if (t_span == 0) throw DomainError("augmented_average: t_span must be nonzero");
  const double t0 = z0.time.value_or(0.0);
  StopCondition stop;
  for (double s : sample_times) stop.output_times.push_back(t0 + s);
  const Trajectory tr = integrate(model, z0, t_span, ctrl, stop, escape_radius);
  RunningAverage ra;
  ra.reason = tr.reason;
  ra.reached = tr.final_time - t0;
  for (std::size_t k = 1; k < tr.times.size(); ++k) {
    const double el = tr.times[k] - t0;
    if (el == 0) continue;
    const bool requested = std::find(stop.output_times.begin(), stop.output_times.end(), tr.times[k]) !=
                           stop.output_times.end();
    if (!requested) continue;
    ra.times.push_back(el);
    ra.averages.push_back(tr.states[k][5] / el);
  }
  return ra;
}

}  // namespace pwscatter
