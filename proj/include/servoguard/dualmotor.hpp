#pragma once

/// Efficiency-map energy model and the synchronized dual-motor system with
/// detector-driven failover.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "servoguard/dataset.hpp"
#include "servoguard/errors.hpp"
#include "servoguard/signal.hpp"

namespace servoguard::dual {

/// Loss decomposition: copper k_c tau^2, iron k_i w, windage k_w w^3, fixed k_f.
struct EfficiencyModel {
  double copper = 2.0;   ///< W/(N m)^2
  double iron = 0.01;    ///< W/(rad/s)
  double windage = 2e-6; ///< W/(rad/s)^3
  double fixed = 0.4;    ///< W

  void validate() const {
    if (!(copper > 0) || !(fixed > 0) || !(iron >= 0) || !(windage >= 0) || !std::isfinite(copper) ||
        !std::isfinite(iron) || !std::isfinite(windage) || !std::isfinite(fixed))
      throw ConfigError("efficiency model: need copper > 0, fixed > 0, iron >= 0, windage >= 0");
  }

  double copper_loss(double torque) const { return copper * torque * torque; }
  /// Speed-dependent and fixed losses, paid by every running motor regardless of load.
  double no_load_loss(double speed) const { return iron * speed + windage * speed * speed * speed + fixed; }
  double losses(double torque, double speed) const { return copper_loss(torque) + no_load_loss(speed); }
};

namespace detail {
inline void check_operating_point(double torque, double speed) {
  if (!(torque >= 0) || !std::isfinite(torque)) throw DomainError("torque must be finite and >= 0");
  if (!(speed >= 0) || !std::isfinite(speed)) throw DomainError("speed must be finite and >= 0");
}
}  // namespace detail

inline double electrical_power(const EfficiencyModel& m, double torque, double speed) {
  detail::check_operating_point(torque, speed);
  return torque * speed + m.losses(torque, speed);
}

inline double efficiency(const EfficiencyModel& m, double torque, double speed) {
  detail::check_operating_point(torque, speed);
  const double out = torque * speed;
  if (out == 0.0) return 0.0;
  return out / (out + m.losses(torque, speed));
}

/// Torque of peak efficiency at a fixed speed.
inline double peak_efficiency_torque(const EfficiencyModel& m, double speed) {
  return std::sqrt(m.no_load_loss(speed) / m.copper);
}

/// Two synchronized motors sharing `torque` equally.
inline double dual_power(const EfficiencyModel& m, double torque, double speed) {
  return 2.0 * electrical_power(m, torque / 2.0, speed);
}

/// Torque above which the equal split draws less power than one motor:
/// k_c tau^2 / 2 > no-load loss.
inline double break_even_torque(const EfficiencyModel& m, double speed) {
  return std::sqrt(2.0 * m.no_load_loss(speed) / m.copper);
}

// ---------------------------------------------------------------------------

struct DutySegment {
  double duration = 1.0;  ///< s
  double torque = 0.0;    ///< N m demanded
  double speed = 0.0;     ///< rad/s
};

struct DutyCycle {
  std::vector<DutySegment> segments;

  void validate() const {
    if (segments.empty()) throw ConfigError("duty cycle: no segments");
    for (const auto& s : segments)
      if (!(s.duration > 0) || !(s.torque >= 0) || !(s.speed >= 0) || !std::isfinite(s.duration) ||
          !std::isfinite(s.torque) || !std::isfinite(s.speed))
        throw ConfigError("duty cycle: durations must be > 0 and demands >= 0");
  }

  double total_duration() const {
    double t = 0;
    for (const auto& s : segments) t += s.duration;
    return t;
  }
};

/// Reference load profile: four constant-demand segments, 10 s in total.
inline DutyCycle reference_duty_cycle() {
  return DutyCycle{{{2.0, 0.6, 30.0}, {3.0, 1.2, 20.0}, {2.0, 1.8, 15.0}, {3.0, 0.9, 25.0}}};
}

/// Analytic energies of a fault-free run.
inline double duty_energy_single(const EfficiencyModel& m, const DutyCycle& duty) {
  double e = 0;
  for (const auto& s : duty.segments) e += s.duration * electrical_power(m, s.torque, s.speed);
  return e;
}

inline double duty_energy_dual(const EfficiencyModel& m, const DutyCycle& duty) {
  double e = 0;
  for (const auto& s : duty.segments) e += s.duration * dual_power(m, s.torque, s.speed);
  return e;
}

/// Fractional saving of dual over single mode, (E_single - E_dual) / E_single.
inline double energy_saving(const EfficiencyModel& m, const DutyCycle& duty) {
  const double single = duty_energy_single(m, duty);
  return (single - duty_energy_dual(m, duty)) / single;
}

inline constexpr double kTargetSaving = 0.03;

/// Copper coefficient that makes the fault-free dual-mode saving on `duty`
/// equal `target`, with the other coefficients of `base` held fixed. The
/// saving rises monotonically with k_c, so bisection suffices.
inline EfficiencyModel calibrate(const DutyCycle& duty, double target = kTargetSaving, EfficiencyModel base = {}) {
  duty.validate();
  if (!(target > -1 && target < 0.5)) throw ConfigError("calibrate: target saving out of range");
  auto saving_at = [&](double kc) {
    EfficiencyModel m = base;
    m.copper = kc;
    return energy_saving(m, duty);
  };
  double lo = 1e-9, hi = 1.0;
  while (saving_at(hi) < target) {
    hi *= 2;
    if (hi > 1e12) throw ConfigError("calibrate: target saving unreachable on this duty cycle");
  }
  if (saving_at(lo) > target) throw ConfigError("calibrate: target saving below the achievable minimum");
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (saving_at(mid) < target ? lo : hi) = mid;
  }
  base.copper = 0.5 * (lo + hi);
  return base;
}

/// Model calibrated to a 3% saving on the reference duty cycle.
inline EfficiencyModel calibrated_model() { return calibrate(reference_duty_cycle()); }

// ---------------------------------------------------------------------------

enum class Mode { single, dual };
enum class MotorState { healthy, overloaded, shutdown };

inline const char* to_string(Mode m) { return m == Mode::single ? "single" : "dual"; }
inline const char* to_string(MotorState s) {
  switch (s) {
  case MotorState::healthy: return "healthy";
  case MotorState::overloaded: return "overloaded";
  case MotorState::shutdown: return "shutdown";
  }
  return "?";
}

struct FaultInjection {
  double time = 0.0;      ///< s, overload onset
  std::size_t motor = 0;
};

/// Onset-to-trip time of a hop-256, (2,3) detector in the worst case.
inline double worst_case_trip_latency(std::size_t hop = kDefaultHop, std::size_t k = 2, double sample_interval = 1e-3) {
  return static_cast<double>(kWindowLength + k * hop) * sample_interval;
}

struct SimConfig {
  Mode mode = Mode::dual;
  double step = 0.01;  ///< s between ledger rows
  double trip_latency = worst_case_trip_latency();
  std::vector<FaultInjection> faults;

  void validate() const {
    if (!(step > 0) || !std::isfinite(step)) throw ConfigError("simulation: step must be > 0");
    if (!(trip_latency >= 0) || !std::isfinite(trip_latency))
      throw ConfigError("simulation: trip latency must be >= 0");
    const std::size_t motors = mode == Mode::single ? 1 : 2;
    for (const auto& f : faults) {
      if (f.motor >= motors) throw ConfigError("simulation: fault injected on a motor that does not exist");
      if (!(f.time >= 0) || !std::isfinite(f.time)) throw ConfigError("simulation: fault time must be >= 0");
    }
  }
};

struct MotorUnit {
  MotorState state = MotorState::healthy;
  double torque = 0;  ///< N m currently assigned
  double speed = 0;
  double energy = 0;      ///< J electrical
  double mechanical = 0;  ///< J delivered
  double losses = 0;      ///< J
};

/// State over one interval [t, t + dt).
struct LedgerRow {
  double t = 0;
  double dt = 0;
  std::size_t motor = 0;
  MotorState state = MotorState::healthy;
  double torque = 0;
  double speed = 0;
  double power = 0;   ///< W electrical
  double energy = 0;  ///< J cumulative at the end of the interval
};

struct StepRecord {
  double t = 0;
  double dt = 0;
  double demanded = 0;
  double delivered = 0;
  std::size_t healthy = 0;
};

enum class EventKind { overload, trip, failover, mission_failure };

inline const char* to_string(EventKind k) {
  switch (k) {
  case EventKind::overload: return "overload";
  case EventKind::trip: return "trip";
  case EventKind::failover: return "failover";
  case EventKind::mission_failure: return "mission_failure";
  }
  return "?";
}

struct Event {
  double t = 0;
  EventKind kind = EventKind::overload;
  std::size_t motor = 0;
  std::string detail;
};

struct EnergyLedger {
  Mode mode = Mode::dual;
  std::vector<MotorUnit> motors;
  std::vector<LedgerRow> rows;
  std::vector<StepRecord> steps;

  double total_energy() const {
    double e = 0;
    for (const auto& m : motors) e += m.energy;
    return e;
  }
  double total_mechanical() const {
    double e = 0;
    for (const auto& m : motors) e += m.mechanical;
    return e;
  }
  double total_losses() const {
    double e = 0;
    for (const auto& m : motors) e += m.losses;
    return e;
  }
};

struct DutyResult {
  EnergyLedger ledger;
  std::vector<Event> events;
  bool mission_failed = false;
};

namespace detail {

inline std::vector<double> breakpoints(const DutyCycle& duty, const SimConfig& cfg) {
  const double end = duty.total_duration();
  std::vector<double> t{0.0};
  const auto steps = static_cast<std::size_t>(std::ceil(end / cfg.step - 1e-9));
  for (std::size_t i = 1; i < steps; ++i) t.push_back(static_cast<double>(i) * cfg.step);
  double acc = 0;
  for (const auto& s : duty.segments) {
    acc += s.duration;
    t.push_back(acc);
  }
  for (const auto& f : cfg.faults) {
    t.push_back(f.time);
    t.push_back(f.time + cfg.trip_latency);
  }
  t.push_back(end);
  std::sort(t.begin(), t.end());
  std::vector<double> out;
  for (double x : t) {
    if (x < 0 || x > end) continue;
    if (!out.empty() && x - out.back() <= 1e-12 * std::max(1.0, end)) continue;
    out.push_back(x);
  }
  if (out.back() < end) out.push_back(end);
  return out;
}

inline const DutySegment& segment_at(const DutyCycle& duty, double t) {
  double acc = 0;
  for (const auto& s : duty.segments) {
    acc += s.duration;
    if (t < acc) return s;
  }
  return duty.segments.back();
}

}  // namespace detail

/// Piecewise-constant simulation. Demand is split equally between motors that
/// are still running (healthy or overloaded); an overloaded motor keeps its
/// share until its detector trips `trip_latency` later, then shuts down and
/// the survivors absorb its torque. Energy is integrated exactly over each
/// constant interval.
inline DutyResult simulate_duty(const EfficiencyModel& model, const DutyCycle& duty, const SimConfig& cfg) {
  model.validate();
  duty.validate();
  cfg.validate();

  DutyResult result;
  EnergyLedger& ledger = result.ledger;
  ledger.mode = cfg.mode;
  ledger.motors.resize(cfg.mode == Mode::single ? 1 : 2);

  struct Pending {
    double at;
    EventKind kind;
    std::size_t motor;
  };
  std::vector<Pending> pending;
  for (const auto& f : cfg.faults) {
    pending.push_back({f.time, EventKind::overload, f.motor});
    pending.push_back({f.time + cfg.trip_latency, EventKind::trip, f.motor});
  }
  std::stable_sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) { return a.at < b.at; });

  const std::vector<double> grid = detail::breakpoints(duty, cfg);
  const double tol = 1e-12 * std::max(1.0, duty.total_duration());
  std::size_t next_event = 0;

  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double t = grid[i];
    const double dt = grid[i + 1] - t;

    for (; next_event < pending.size() && pending[next_event].at <= t + tol; ++next_event) {
      const Pending& p = pending[next_event];
      MotorUnit& unit = ledger.motors[p.motor];
      if (p.kind == EventKind::overload && unit.state == MotorState::healthy) {
        unit.state = MotorState::overloaded;
        result.events.push_back({t, EventKind::overload, p.motor, "overload onset"});
      } else if (p.kind == EventKind::trip && unit.state == MotorState::overloaded) {
        unit.state = MotorState::shutdown;
        result.events.push_back({t, EventKind::trip, p.motor, "detector tripped, motor shut down"});
        std::size_t running = 0;
        for (const auto& m : ledger.motors) running += m.state != MotorState::shutdown ? 1 : 0;
        if (running > 0) {
          for (std::size_t j = 0; j < ledger.motors.size(); ++j)
            if (ledger.motors[j].state != MotorState::shutdown)
              result.events.push_back({t, EventKind::failover, j, "takes over the load of motor " + std::to_string(p.motor)});
        } else if (!result.mission_failed) {
          result.mission_failed = true;
          result.events.push_back({t, EventKind::mission_failure, p.motor, "no motor left running"});
        }
      }
    }

    const DutySegment& seg = detail::segment_at(duty, t);
    std::size_t running = 0, healthy = 0;
    for (const auto& m : ledger.motors) {
      running += m.state != MotorState::shutdown ? 1 : 0;
      healthy += m.state == MotorState::healthy ? 1 : 0;
    }
    StepRecord step{t, dt, seg.torque, 0.0, healthy};
    for (std::size_t j = 0; j < ledger.motors.size(); ++j) {
      MotorUnit& unit = ledger.motors[j];
      if (unit.state == MotorState::shutdown) {
        unit.torque = 0;
        unit.speed = 0;
      } else {
        unit.torque = seg.torque / static_cast<double>(running);
        unit.speed = seg.speed;
      }
      double power = 0;
      if (unit.state != MotorState::shutdown) {
        const double mech = unit.torque * unit.speed;
        const double loss = model.losses(unit.torque, unit.speed);
        power = mech + loss;
        unit.mechanical += mech * dt;
        unit.losses += loss * dt;
        unit.energy += power * dt;
        step.delivered += unit.torque;
      }
      ledger.rows.push_back({t, dt, j, unit.state, unit.torque, unit.speed, power, unit.energy});
    }
    ledger.steps.push_back(step);
  }
  return result;
}

/// `t,mode,motor,torque,speed,power,energy`
inline void write_ledger_csv(std::ostream& out, const EnergyLedger& ledger) {
  out << "t,mode,motor,torque,speed,power,energy\n";
  out.precision(9);
  for (const auto& r : ledger.rows)
    out << r.t << ',' << to_string(ledger.mode) << ',' << r.motor << ',' << r.torque << ',' << r.speed << ','
        << r.power << ',' << r.energy << '\n';
}

inline void write_events(std::ostream& out, const std::vector<Event>& events) {
  out.precision(9);
  for (const auto& e : events) out << e.t << ' ' << to_string(e.kind) << " motor=" << e.motor << ' ' << e.detail << '\n';
}

}  // namespace servoguard::dual
