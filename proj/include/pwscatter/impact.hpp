#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pwscatter/integrator.hpp"
#include "pwscatter/model.hpp"

namespace pwscatter {

// Point on u = 0 with u suppressed; t is the absolute time tag.
struct SectionPoint {
  double v = 0, x = 0, y = 0, s = 0;
  double t = 0;
};

// Raised when a trajectory reaches x = 0 (or escapes) before the opposite half-section.
class OutOfDomain : public DomainError {
 public:
  OutOfDomain(const std::string& what, const EventRecord& ev, Termination why)
      : DomainError(what), event(ev), reason(why) {}
  EventRecord event;
  Termination reason;
};

inline ExtendedState section_state(const SectionPoint& w) { return {0.0, w.v, w.x, w.y, w.s, w.t}; }

inline SectionPoint to_section_point(const SystemModel& m, const State6& z, double t) {
  return {z[1], z[2], z[3], wrap_phase(z[4], m.period), t};
}

inline void check_section_point(const SystemModel& m, const SectionPoint& w) {
  if (!(std::abs(w.v) >= m.v_min)) throw DomainError("section point: |v| below v_min");
  for (double c : {w.v, w.x, w.y, w.s, w.t})
    if (!std::isfinite(c)) throw DomainError("section point: non-finite coordinate");
}

struct HalfMapResult {
  SectionPoint point;
  Trajectory path;
};

// Flow from one half-section to the other (direction = -1 runs backward in time).
inline HalfMapResult half_map_traced(const SystemModel& m, const SectionPoint& w, const StepControl& ctrl,
                                     int direction = 1, double max_time = 1e3) {
  check_section_point(m, w);
  StopCondition stop;
  stop.any_manifold = true;
  stop.record_steps = true;
  Trajectory tr = integrate(m, section_state(w), direction >= 0 ? max_time : -max_time, ctrl, stop);
  if (tr.reason == Termination::event_reached && tr.events.back().manifold == 0) {
    const EventRecord& ev = tr.events.back();
    return {to_section_point(m, ev.state, ev.time), std::move(tr)};
  }
  EventRecord last;
  if (!tr.events.empty()) last = tr.events.back();
  else {
    last.time = tr.final_time;
    last.state = tr.final_state;
  }
  if (tr.reason == Termination::event_reached) throw OutOfDomain("half map: x = 0 reached first", last, tr.reason);
  if (tr.reason == Termination::escape) throw OutOfDomain("half map: escape before u = 0", last, tr.reason);
  throw ConvergenceError("half map: " + (tr.message.empty() ? std::string(to_string(tr.reason)) : tr.message));
}

inline SectionPoint half_map(const SystemModel& m, const SectionPoint& w, const StepControl& ctrl, int direction = 1) {
  return half_map_traced(m, w, ctrl, direction).point;
}

inline SectionPoint impact_map(const SystemModel& m, const SectionPoint& w, const StepControl& ctrl) {
  return half_map(m, half_map(m, w, ctrl, 1), ctrl, 1);
}

inline SectionPoint impact_map_inverse(const SystemModel& m, const SectionPoint& w, const StepControl& ctrl) {
  return half_map(m, half_map(m, w, ctrl, -1), ctrl, -1);
}

enum class Truncation { x_zero, max_count, escape, failure };

inline const char* to_string(Truncation t) {
  switch (t) {
    case Truncation::x_zero: return "x=0 reached";
    case Truncation::max_count: return "max count";
    case Truncation::escape: return "escape";
    case Truncation::failure: return "failure";
  }
  return "?";
}

struct ImpactEntry {
  int index = 0;
  SectionPoint point;
  std::string label;  // "start", "u=0+", "u=0-"
};

struct ImpactSequence {
  std::vector<ImpactEntry> entries;  // ordered by index
  Truncation forward = Truncation::max_count;
  Truncation backward = Truncation::max_count;
  // state where a truncated direction stopped (x = 0 crossing or escape)
  std::optional<EventRecord> forward_stop, backward_stop;
};

inline ImpactSequence impact_sequence(const SystemModel& m, const SectionPoint& w, int n_forward, int n_backward,
                                      const StepControl& ctrl) {
  auto label = [](double v) { return std::string(v > 0 ? "u=0+" : "u=0-"); };
  ImpactSequence seq;
  std::vector<ImpactEntry> back;
  auto walk = [&](int n, int dir, Truncation& why, std::optional<EventRecord>& stop_at,
                  std::vector<ImpactEntry>& out) {
    SectionPoint p = w;
    for (int i = 1; i <= n; ++i) {
      try {
        p = half_map(m, p, ctrl, dir);
      } catch (const OutOfDomain& e) {
        why = e.reason == Termination::escape ? Truncation::escape : Truncation::x_zero;
        stop_at = e.event;
        return;
      } catch (const std::exception&) {
        why = Truncation::failure;
        return;
      }
      out.push_back({dir * i, p, label(p.v)});
    }
    why = Truncation::max_count;
  };
  std::vector<ImpactEntry> fwd;
  walk(n_forward, 1, seq.forward, seq.forward_stop, fwd);
  walk(n_backward, -1, seq.backward, seq.backward_stop, back);
  for (auto it = back.rbegin(); it != back.rend(); ++it) seq.entries.push_back(*it);
  seq.entries.push_back({0, w, "start"});
  for (auto& e : fwd) seq.entries.push_back(e);
  return seq;
}

}  // namespace pwscatter
