#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinlab/constants.hpp"
#include "spinlab/errors.hpp"

namespace spinlab {

struct PulseEvent {
  enum class Kind { pulse, delay, sample };
  Kind kind = Kind::delay;
  double duration = 0.0;        // s
  double phase = 0.0;           // rad, pulses only
  double nominal_angle = 0.0;   // rad, pulses only
  double amplitude_error = 0.0; // fractional over-rotation, pulses only
  std::string label;

  [[nodiscard]] double actual_angle() const { return nominal_angle * (1.0 + amplitude_error); }

  static PulseEvent pulse(double angle, double phase, double width, std::string label, double amplitude_error = 0.0) {
    return {Kind::pulse, width, phase, angle, amplitude_error, std::move(label)};
  }
  static PulseEvent delay(double duration, std::string label = "tau") {
    return {Kind::delay, duration, 0.0, 0.0, 0.0, std::move(label)};
  }
  static PulseEvent sample(std::string label = "S") { return {Kind::sample, 0.0, 0.0, 0.0, 0.0, std::move(label)}; }
};

inline std::string to_string(PulseEvent::Kind k) {
  switch (k) {
  case PulseEvent::Kind::pulse: return "pulse";
  case PulseEvent::Kind::delay: return "delay";
  case PulseEvent::Kind::sample: return "sample";
  }
  return "delay";
}

// A run of events executed `repeat` times in a row.
struct SequenceBlock {
  std::vector<PulseEvent> events;
  std::uint64_t repeat = 1;

  [[nodiscard]] bool has_samples() const {
    for (const auto& e : events)
      if (e.kind == PulseEvent::Kind::sample) return true;
    return false;
  }
  [[nodiscard]] double duration() const {
    double t = 0.0;
    for (const auto& e : events) t += e.duration;
    return t;
  }
};

// The executable program is `blocks`; `cycle` keeps one bare period of the
// inner decoupling cycle for timing checks and average-Hamiltonian work.
// Repetitions are kept symbolic since CPMG trains reach 1e8 events.
struct PulseSequence {
  std::vector<PulseEvent> cycle;
  double cycle_time = 0.0;
  std::uint64_t cycles = 1;
  std::vector<SequenceBlock> blocks;
  nlohmann::json metadata = nlohmann::json::object();

  [[nodiscard]] std::uint64_t event_count() const {
    std::uint64_t n = 0;
    for (const auto& b : blocks) n += b.events.size() * b.repeat;
    return n;
  }

  [[nodiscard]] std::uint64_t pulse_count() const {
    std::uint64_t n = 0;
    for (const auto& b : blocks)
      for (const auto& e : b.events)
        if (e.kind == PulseEvent::Kind::pulse) n += b.repeat;
    return n;
  }

  [[nodiscard]] std::uint64_t sample_count() const {
    std::uint64_t n = 0;
    for (const auto& b : blocks)
      for (const auto& e : b.events)
        if (e.kind == PulseEvent::Kind::sample) n += b.repeat;
    return n;
  }

  [[nodiscard]] double total_duration() const {
    double t = 0.0;
    for (const auto& b : blocks) t += b.duration() * static_cast<double>(b.repeat);
    return t;
  }

  // Every event in execution order.
  [[nodiscard]] std::vector<PulseEvent> events(std::uint64_t limit = 10'000'000) const {
    if (event_count() > limit) throw ResourceError("sequence has too many events to flatten");
    std::vector<PulseEvent> out;
    out.reserve(event_count());
    for (const auto& b : blocks)
      for (std::uint64_t r = 0; r < b.repeat; ++r) out.insert(out.end(), b.events.begin(), b.events.end());
    return out;
  }
};

namespace detail {

inline void check_pulse_timing(double tau, double pulse_width) {
  if (!(pulse_width >= 0.0)) throw TimingError("pulse width must be nonnegative");
  if (!(tau > pulse_width)) throw TimingError("tau must exceed the pulse width");
}

// Delta-pulse windows `spacing` (in units of tau) around n pulses placed at
// centre-to-centre spacing. Finite pulses eat half a width from each side.
inline std::vector<PulseEvent> windowed_cycle(double tau, double pulse_width, const std::vector<double>& spacing,
                                              const std::vector<double>& phases, const std::string& prefix) {
  std::vector<PulseEvent> ev;
  const std::size_t n = phases.size();
  for (std::size_t i = 0; i <= n; ++i) {
    const bool edge = (i == 0 || i == n);
    const double d = spacing[i] * tau - (edge ? 0.5 : 1.0) * pulse_width;
    ev.push_back(PulseEvent::delay(d, std::to_string(static_cast<int>(spacing[i])) + "tau"));
    if (i < n) ev.push_back(PulseEvent::pulse(constants::pi / 2, phases[i], pulse_width, prefix + std::to_string(i + 1)));
  }
  return ev;
}

inline PulseSequence single_cycle(std::vector<PulseEvent> cycle, double cycle_time, nlohmann::json meta) {
  PulseSequence s;
  s.cycle = std::move(cycle);
  s.cycle_time = cycle_time;
  s.cycles = 1;
  s.blocks = {SequenceBlock{s.cycle, 1}};
  s.metadata = std::move(meta);
  return s;
}

inline double deg(double d) { return d * constants::pi / 180.0; }

} // namespace detail

// X, Y, -Y, -X with windows tau, tau, 2tau, tau, tau.
inline PulseSequence build_wahuha(double tau, double pulse_width) {
  detail::check_pulse_timing(tau, pulse_width);
  const std::vector<double> phases{detail::deg(0), detail::deg(90), detail::deg(270), detail::deg(180)};
  auto ev = detail::windowed_cycle(tau, pulse_width, {1, 1, 2, 1, 1}, phases, "W");
  return detail::single_cycle(std::move(ev), 6.0 * tau,
                              {{"builder", "wahuha"}, {"tau_s", tau}, {"pulse_width_s", pulse_width}});
}

enum class Helicity { plus, minus };

// Phase listings (deg) satisfying H0 = -(1/3) sum w (Iz +/- Ix) with the
// dipolar part cancelled; the minus listing is the y-mirror of the plus one.
inline std::array<double, 8> mrev8_phases_deg(Helicity h) {
  if (h == Helicity::plus) return {0, 270, 180, 270, 90, 0, 90, 180};
  return {0, 90, 180, 90, 270, 0, 270, 180};
}

inline PulseSequence build_mrev8(double tau, double pulse_width, Helicity helicity) {
  detail::check_pulse_timing(tau, pulse_width);
  std::vector<double> phases;
  for (double p : mrev8_phases_deg(helicity)) phases.push_back(detail::deg(p));
  auto ev = detail::windowed_cycle(tau, pulse_width, {1, 1, 2, 1, 2, 1, 2, 1, 1}, phases,
                                   helicity == Helicity::plus ? "M+" : "M-");
  return detail::single_cycle(std::move(ev), 12.0 * tau,
                              {{"builder", "mrev8"},
                               {"tau_s", tau},
                               {"pulse_width_s", pulse_width},
                               {"helicity", helicity == Helicity::plus ? "+" : "-"}});
}

inline PulseSequence build_mrev16(double tau, double pulse_width) {
  const PulseSequence a = build_mrev8(tau, pulse_width, Helicity::plus);
  const PulseSequence b = build_mrev8(tau, pulse_width, Helicity::minus);
  std::vector<PulseEvent> ev = a.cycle;
  ev.insert(ev.end(), b.cycle.begin(), b.cycle.end());
  return detail::single_cycle(std::move(ev), a.cycle_time + b.cycle_time,
                              {{"builder", "mrev16"}, {"tau_s", tau}, {"pulse_width_s", pulse_width}});
}

// Free evolution for `duration`, no pulses.
inline PulseSequence build_free(double duration) {
  if (!(duration > 0.0)) throw TimingError("free evolution needs a positive duration");
  return detail::single_cycle({PulseEvent::delay(duration, "free")}, duration,
                              {{"builder", "free"}, {"duration_s", duration}});
}

enum class SamplePosition { end, mid };

struct CpmgOptions {
  // <0 selects the inner pulse width (pi/2) and twice it (pi), i.e. the
  // same Rabi frequency as the decoupling pulses.
  double excitation_width = -1.0;
  double pi_width = -1.0;
  double pi_amplitude_error = 0.0;
  // Phase of the refocusing pulses relative to the excitation phase.
  double pi_phase_offset = constants::pi / 2;
  SamplePosition sample_position = SamplePosition::end;
  // Record every `sample_stride`-th cycle only. Must divide cycles_per_pi.
  std::uint64_t sample_stride = 1;
};

// pi/2(phi), then n_pi x [cycles_per_pi inner cycles, pi(phi + pi/2)], with a
// sample in the final free window of each inner cycle.
inline PulseSequence wrap_cpmg(const PulseSequence& inner, std::uint64_t cycles_per_pi, std::uint64_t n_pi,
                               double excitation_phase, const CpmgOptions& opt = {}) {
  if (cycles_per_pi < 1) throw TimingError("cycles_per_pi must be >= 1");
  if (n_pi < 1) throw TimingError("n_pi must be >= 1");
  if (inner.cycle.empty()) throw TimingError("inner sequence is empty");
  if (opt.sample_stride < 1 || cycles_per_pi % opt.sample_stride != 0)
    throw TimingError("sample_stride must divide cycles_per_pi");
  const double pw = inner.metadata.value("pulse_width_s", 0.0);
  const double w90 = opt.excitation_width >= 0.0 ? opt.excitation_width : pw;
  const double w180 = opt.pi_width >= 0.0 ? opt.pi_width : 2.0 * pw;

  // One sampled cycle: the final delay hosts the sample.
  std::vector<PulseEvent> sampled = inner.cycle;
  std::size_t last = sampled.size();
  while (last > 0 && sampled[last - 1].kind != PulseEvent::Kind::delay) --last;
  if (last == 0) {
    sampled.push_back(PulseEvent::sample());
  } else if (opt.sample_position == SamplePosition::end) {
    sampled.insert(sampled.begin() + static_cast<std::ptrdiff_t>(last), PulseEvent::sample());
  } else {
    PulseEvent half = sampled[last - 1];
    half.duration *= 0.5;
    sampled[last - 1] = half;
    sampled.insert(sampled.begin() + static_cast<std::ptrdiff_t>(last), half);
    sampled.insert(sampled.begin() + static_cast<std::ptrdiff_t>(last), PulseEvent::sample());
  }

  SequenceBlock unit;
  for (std::uint64_t k = 0; k + 1 < opt.sample_stride; ++k)
    unit.events.insert(unit.events.end(), inner.cycle.begin(), inner.cycle.end());
  unit.events.insert(unit.events.end(), sampled.begin(), sampled.end());
  unit.repeat = cycles_per_pi / opt.sample_stride;

  PulseSequence s;
  s.cycle = inner.cycle;
  s.cycle_time = inner.cycle_time;
  s.cycles = cycles_per_pi * n_pi;
  s.blocks.push_back({{PulseEvent::pulse(constants::pi / 2, excitation_phase, w90, "pi/2")}, 1});
  for (std::uint64_t k = 0; k < n_pi; ++k) {
    s.blocks.push_back(unit);
    s.blocks.push_back({{PulseEvent::pulse(constants::pi, excitation_phase + opt.pi_phase_offset, w180, "pi",
                                           opt.pi_amplitude_error)},
                        1});
  }
  s.metadata = {{"builder", "cpmg"},
                {"inner", inner.metadata},
                {"cycles_per_pi", cycles_per_pi},
                {"n_pi", n_pi},
                {"excitation_phase_rad", excitation_phase},
                {"pi_phase_offset_rad", opt.pi_phase_offset},
                {"pi_amplitude_error", opt.pi_amplitude_error},
                {"sample_position", opt.sample_position == SamplePosition::end ? "end" : "mid"},
                {"sample_stride", opt.sample_stride},
                {"pulse_width_s", pw}};
  return s;
}

// Runs the sequence backwards with every rotation inverted (phase + pi).
// Evolving under this with -H_sys undoes an evolution under `seq` with H_sys.
inline PulseSequence inverse_sequence(const PulseSequence& seq) {
  PulseSequence inv = seq;
  auto flip = [](std::vector<PulseEvent>& ev) {
    std::reverse(ev.begin(), ev.end());
    for (auto& e : ev)
      if (e.kind == PulseEvent::Kind::pulse) e.phase += constants::pi;
  };
  flip(inv.cycle);
  std::reverse(inv.blocks.begin(), inv.blocks.end());
  for (auto& b : inv.blocks) flip(b.events);
  inv.metadata = {{"builder", "inverse"}, {"of", seq.metadata}};
  return inv;
}

struct TimingReport {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  double duty_cycle = 0.0;
  double max_width_over_tau = 0.0;

  [[nodiscard]] bool ok() const { return errors.empty(); }
};

inline TimingReport validate_timing(const PulseSequence& seq) {
  TimingReport r;
  if (seq.cycle.empty()) r.errors.push_back("cycle has no events");
  double sum = 0.0;
  double pulse_time = 0.0;
  double max_width = 0.0;
  auto check_event = [&](const PulseEvent& e) {
    if (!(e.duration >= 0.0)) r.errors.push_back("event '" + e.label + "' has negative duration (overlap)");
    if (e.kind == PulseEvent::Kind::sample && e.duration != 0.0)
      r.errors.push_back("sample event '" + e.label + "' must have zero duration");
  };
  for (const auto& e : seq.cycle) {
    check_event(e);
    sum += e.duration;
    if (e.kind == PulseEvent::Kind::pulse) {
      pulse_time += e.duration;
      max_width = std::max(max_width, e.duration);
    }
  }
  for (const auto& b : seq.blocks)
    for (const auto& e : b.events) check_event(e);
  if (!(seq.cycle_time > 0.0))
    r.errors.push_back("cycle time must be positive");
  else if (std::abs(sum - seq.cycle_time) > 1e-14 * seq.cycle_time + 1e-300)
    r.errors.push_back("cycle durations sum to " + std::to_string(sum) + " s but declared cycle time is " +
                       std::to_string(seq.cycle_time) + " s");
  if (seq.cycle_time > 0.0) r.duty_cycle = pulse_time / seq.cycle_time;
  const nlohmann::json& meta = seq.metadata.contains("inner") ? seq.metadata.at("inner") : seq.metadata;
  const double tau = meta.value("tau_s", 0.0);
  if (tau > 0.0) {
    r.max_width_over_tau = max_width / tau;
    if (r.max_width_over_tau > 0.5)
      r.warnings.push_back("pulse width / tau = " + std::to_string(r.max_width_over_tau) +
                           " > 0.5; decoupling degrades as the ratio approaches 1");
  }
  return r;
}

inline nlohmann::json to_json(const PulseEvent& e) {
  nlohmann::json j{{"kind", to_string(e.kind)}, {"duration_s", e.duration}, {"label", e.label}};
  if (e.kind == PulseEvent::Kind::pulse) {
    j["phase_rad"] = e.phase;
    j["angle_rad"] = e.nominal_angle;
    j["amplitude_error"] = e.amplitude_error;
  }
  return j;
}

inline nlohmann::json to_json(const PulseSequence& s) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : s.blocks) {
    nlohmann::json ev = nlohmann::json::array();
    for (const auto& e : b.events) ev.push_back(to_json(e));
    blocks.push_back({{"repeat", b.repeat}, {"events", ev}});
  }
  nlohmann::json cyc = nlohmann::json::array();
  for (const auto& e : s.cycle) cyc.push_back(to_json(e));
  return {{"cycle_time_s", s.cycle_time}, {"cycles", s.cycles}, {"metadata", s.metadata},
          {"cycle", cyc},                 {"blocks", blocks}};
}

} // namespace spinlab
