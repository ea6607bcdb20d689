#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinlab/analysis.hpp"
#include "spinlab/engine.hpp"
#include "spinlab/errors.hpp"
#include "spinlab/lattice.hpp"
#include "spinlab/sequences.hpp"

#ifndef SPINLAB_VERSION
#define SPINLAB_VERSION "0.1.0"
#endif

namespace spinlab {

inline constexpr const char* tool_version = SPINLAB_VERSION;

// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

// FNV-1a over the canonical (key-sorted, compact) dump.
inline std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Reads an object, remembers which keys were consumed and rejects the rest.
class ConfigReader {
public:
  ConfigReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "/" : path_, "expected an object");
  }

  [[nodiscard]] bool has(const std::string& key) const { return j_.contains(key); }
  [[nodiscard]] std::string path(const std::string& key) const { return path_ + "/" + key; }

  const nlohmann::json& raw(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(path(key), "required key is missing");
    seen_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number()) throw ConfigError(path(key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(path(key), "must be finite");
    return d;
  }
  double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }

  double positive(const std::string& key) {
    const double d = number(key);
    if (!(d > 0.0)) throw ConfigError(path(key), "must be positive");
    return d;
  }
  double positive(const std::string& key, double fallback) { return has(key) ? positive(key) : fallback; }

  double nonnegative(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const double d = number(key);
    if (!(d >= 0.0)) throw ConfigError(path(key), "must be nonnegative");
    return d;
  }

  std::uint64_t count(const std::string& key, std::uint64_t min_value = 0) {
    const auto& v = raw(key);
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0))
      throw ConfigError(path(key), "expected a nonnegative integer");
    const auto n = v.get<std::uint64_t>();
    if (n < min_value) throw ConfigError(path(key), "must be >= " + std::to_string(min_value));
    return n;
  }
  std::uint64_t count(const std::string& key, std::uint64_t fallback, std::uint64_t min_value) {
    return has(key) ? count(key, min_value) : fallback;
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(path(key), "expected true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key, const std::vector<std::string>& allowed = {}) {
    const auto& v = raw(key);
    if (!v.is_string()) throw ConfigError(path(key), "expected a string");
    std::string s = v.get<std::string>();
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError(path(key), "'" + s + "' is not one of: " + list);
    }
    return s;
  }
  std::string text(const std::string& key, const std::string& fallback, const std::vector<std::string>& allowed) {
    return has(key) ? text(key, allowed) : fallback;
  }

  std::vector<double> numbers(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_array()) throw ConfigError(path(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(path(key) + "/" + std::to_string(i), "expected a number");
      out.push_back(v[i].get<double>());
      if (!std::isfinite(out.back())) throw ConfigError(path(key) + "/" + std::to_string(i), "must be finite");
    }
    return out;
  }

  ConfigReader child(const std::string& key) { return ConfigReader(raw(key), path(key)); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path(it.key()), "unknown key");
  }

private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

struct SequenceConfig {
  std::string builder = "mrev16"; // wahuha | mrev8+ | mrev8- | mrev16 | custom | free
  double tau_s = 10e-6;
  double pulse_width_s = 0.0;
  std::vector<double> phases_deg;     // custom
  std::vector<double> windows_tau;    // custom, phases + 1 entries
  double free_duration_s = 0.0;       // free
  std::uint64_t cycles_per_pi = 64;
  std::uint64_t n_pi = 10;
  std::uint64_t sample_stride = 1;
  double pi_phase_offset_deg = 90.0;
  double pi_amplitude_error = 0.0;
  double excitation_width_s = -1.0;
  double pi_width_s = -1.0;
  SamplePosition sample_position = SamplePosition::end;
};

struct ScanConfig {
  ScanAxis axis = ScanAxis::cycle_time;
  std::vector<double> grid; // cycle time in s, or abundance
  // cycles_per_pi at grid value v is cycles_per_pi * (v / reference)^exponent,
  // rounded to a multiple of the sample stride.
  double pi_spacing_exponent = 0.0;
  double pi_spacing_reference = 0.0;
  // cycle_time axis: stride chosen so samples are about this far apart
  double sample_interval_s = 0.0;
};

struct AhtConfig {
  std::vector<int> orders{0, 1};
  std::vector<double> cycle_times_s;
  CycleErrorReference reference = CycleErrorReference::zeroth_order;
  // explicit system, or random with n_spins
  std::optional<SpinSystem> system;
  std::size_t random_spins = 3;
  double random_offset_hz = 200.0;
  double random_coupling_hz = 200.0;
  bool dipolar_only = false;
};

struct ExperimentConfig {
  nlohmann::json source;
  std::string name;
  LatticeSpec lattice;
  std::size_t max_spins = 1;
  std::size_t min_spins = 1;
  ClusterStrategy strategy = ClusterStrategy::central_nearest;
  bool interior_origin = true;
  Vec3 field_direction = Vec3::UnitZ();
  double carrier_detuning_hz = 0.0;
  OffsetModel offsets;
  // explicit system bypasses the lattice
  std::optional<SpinSystem> system;
  SequenceConfig sequence;
  NoiseModel noise;
  double dt_noise_s = 0.0;
  double t1_s = 0.0;
  std::size_t n_realizations = 1;
  std::uint64_t base_seed = 1;
  std::optional<ScanConfig> scan;
  std::optional<AhtConfig> aht;
  std::optional<double> expected_offset_hz;
  std::size_t zero_pad = 4;
  std::string output_dir = "out";

  [[nodiscard]] std::string hash() const { return config_hash(source); }
};

namespace detail {

inline Vec3 read_vec3(ConfigReader& r, const std::string& key) {
  const auto v = r.numbers(key);
  if (v.size() != 3) throw ConfigError(r.path(key), "expected 3 components");
  const Vec3 out(v[0], v[1], v[2]);
  if (!(out.norm() > 0.0)) throw ConfigError(r.path(key), "must be nonzero");
  return out.normalized();
}

inline SpinSystem read_system(ConfigReader r) {
  const auto off = r.numbers("offsets_hz");
  if (off.empty()) throw ConfigError(r.path("offsets_hz"), "needs at least one spin");
  const auto& c = r.raw("couplings_hz");
  const std::size_t n = off.size();
  if (!c.is_array() || c.size() != n) throw ConfigError(r.path("couplings_hz"), "expected an n x n array");
  Eigen::VectorXd o(static_cast<Eigen::Index>(n));
  Eigen::MatrixXd d(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    o[static_cast<Eigen::Index>(j)] = constants::two_pi * off[j];
    if (!c[j].is_array() || c[j].size() != n)
      throw ConfigError(r.path("couplings_hz") + "/" + std::to_string(j), "expected " + std::to_string(n) + " entries");
    for (std::size_t k = 0; k < n; ++k) {
      if (!c[j][k].is_number())
        throw ConfigError(r.path("couplings_hz") + "/" + std::to_string(j) + "/" + std::to_string(k), "expected a number");
      d(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = constants::two_pi * c[j][k].get<double>();
    }
  }
  r.finish();
  try {
    SpinSystem s = SpinSystem::from_parameters(o, d);
    s.validate();
    return s;
  } catch (const DomainError& e) {
    throw ConfigError(r.path("couplings_hz"), e.what());
  }
}

inline SequenceConfig read_sequence(ConfigReader r) {
  SequenceConfig s;
  s.builder = r.text("builder", {"wahuha", "mrev8+", "mrev8-", "mrev16", "custom", "free"});
  if (s.builder == "free") {
    s.free_duration_s = r.positive("duration_us") * 1e-6;
  } else {
    s.tau_s = r.positive("tau_us") * 1e-6;
    s.pulse_width_s = r.nonnegative("pulse_width_us", 0.0) * 1e-6;
    if (!(s.pulse_width_s < s.tau_s)) throw ConfigError(r.path("pulse_width_us"), "must be shorter than tau_us");
  }
  if (s.builder == "custom") {
    s.phases_deg = r.numbers("phases_deg");
    s.windows_tau = r.numbers("windows_tau");
    if (s.phases_deg.empty()) throw ConfigError(r.path("phases_deg"), "needs at least one pulse");
    if (s.windows_tau.size() != s.phases_deg.size() + 1)
      throw ConfigError(r.path("windows_tau"), "needs one more entry than phases_deg");
    for (double w : s.windows_tau)
      if (!(w > 0.0)) throw ConfigError(r.path("windows_tau"), "entries must be positive");
  }
  s.cycles_per_pi = r.count("cycles_per_pi", 64, 1);
  s.n_pi = r.count("n_pi", 10, 1);
  s.sample_stride = r.count("sample_stride", 1, 1);
  if (s.cycles_per_pi % s.sample_stride != 0) throw ConfigError(r.path("sample_stride"), "must divide cycles_per_pi");
  s.pi_phase_offset_deg = r.number("pi_phase_offset_deg", 90.0);
  s.pi_amplitude_error = r.number("pi_amplitude_error", 0.0);
  if (!(s.pi_amplitude_error > -1.0)) throw ConfigError(r.path("pi_amplitude_error"), "must exceed -1");
  s.excitation_width_s = r.has("excitation_width_us") ? r.nonnegative("excitation_width_us", 0.0) * 1e-6 : -1.0;
  s.pi_width_s = r.has("pi_width_us") ? r.nonnegative("pi_width_us", 0.0) * 1e-6 : -1.0;
  s.sample_position = r.text("sample_position", "end", {"end", "mid"}) == "mid" ? SamplePosition::mid : SamplePosition::end;
  r.finish();
  return s;
}

inline NoiseModel read_noise(ConfigReader r, double& dt_noise_s) {
  NoiseModel m;
  const std::string kind = r.text("model", {"none", "ou", "rtn_bath"});
  if (kind == "ou") {
    m.kind = NoiseModel::Kind::ou;
    m.correlation_time_s = r.positive("correlation_time_us") * 1e-6;
    m.rms = constants::two_pi * r.nonnegative("rms_hz", 0.0);
  } else if (kind == "rtn_bath") {
    m.kind = NoiseModel::Kind::rtn_bath;
    m.n_fluctuators = r.count("n_fluctuators", 1);
    m.rate_min = r.positive("rate_min_per_s");
    m.rate_max = r.positive("rate_max_per_s");
    if (m.rate_min > m.rate_max) throw ConfigError(r.path("rate_max_per_s"), "must be >= rate_min_per_s");
    m.amplitude = constants::two_pi * r.nonnegative("amplitude_hz", 0.0);
  }
  if (m.kind != NoiseModel::Kind::none) dt_noise_s = r.positive("dt_noise_us") * 1e-6;
  r.finish();
  return m;
}

inline ScanConfig read_scan(ConfigReader r) {
  ScanConfig s;
  s.axis = r.text("axis", {"cycle_time", "abundance"}) == "abundance" ? ScanAxis::abundance : ScanAxis::cycle_time;
  const std::string key = s.axis == ScanAxis::cycle_time ? "grid_us" : "grid";
  s.grid = r.numbers(key);
  if (s.grid.size() < 3) throw ConfigError(r.path(key), "needs at least 3 points");
  for (double& v : s.grid) {
    if (!(v > 0.0)) throw ConfigError(r.path(key), "entries must be positive");
    if (s.axis == ScanAxis::cycle_time) v *= 1e-6;
    else if (v > 1.0) throw ConfigError(r.path(key), "abundances must lie in (0, 1]");
  }
  if (r.has("pi_spacing_exponent")) {
    s.pi_spacing_exponent = r.number("pi_spacing_exponent");
    const double ref = r.positive(s.axis == ScanAxis::cycle_time ? "pi_spacing_reference_us" : "pi_spacing_reference");
    s.pi_spacing_reference = s.axis == ScanAxis::cycle_time ? ref * 1e-6 : ref;
  }
  if (s.axis == ScanAxis::cycle_time && r.has("sample_interval_us")) s.sample_interval_s = r.positive("sample_interval_us") * 1e-6;
  r.finish();
  return s;
}

inline AhtConfig read_aht(ConfigReader r) {
  AhtConfig a;
  if (r.has("orders")) {
    a.orders.clear();
    for (double o : r.numbers("orders")) {
      if (o != 0.0 && o != 1.0) throw ConfigError(r.path("orders"), "orders must be 0 or 1");
      a.orders.push_back(static_cast<int>(o));
    }
  }
  if (r.has("cycle_times_us")) {
    a.cycle_times_s = r.numbers("cycle_times_us");
    for (double& v : a.cycle_times_s) {
      if (!(v > 0.0)) throw ConfigError(r.path("cycle_times_us"), "entries must be positive");
      v *= 1e-6;
    }
  }
  a.reference = r.text("reference", "zeroth_order", {"zeroth_order", "offset_referenced"}) == "offset_referenced"
                    ? CycleErrorReference::offset_referenced
                    : CycleErrorReference::zeroth_order;
  if (r.has("system")) a.system = read_system(r.child("system"));
  a.random_spins = r.count("random_spins", 3, 1);
  a.random_offset_hz = r.nonnegative("random_offset_hz", 200.0);
  a.random_coupling_hz = r.nonnegative("random_coupling_hz", 200.0);
  a.dipolar_only = r.boolean("dipolar_only", false);
  r.finish();
  return a;
}

} // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig c;
  c.source = j;
  ConfigReader r(j, "");
  c.name = r.has("name") ? r.text("name") : std::string("experiment");
  if (r.has("system")) {
    c.system = detail::read_system(r.child("system"));
  }
  if (r.has("lattice")) {
    ConfigReader l = r.child("lattice");
    c.lattice.abundance = l.number("abundance", constants::si29_natural_abundance);
    if (!(c.lattice.abundance >= 0.0 && c.lattice.abundance <= 1.0))
      throw ConfigError(l.path("abundance"), "must lie in [0, 1]");
    if (l.has("supercell")) {
      const auto sc = l.numbers("supercell");
      if (sc.size() != 3) throw ConfigError(l.path("supercell"), "expected 3 cell counts");
      for (std::size_t i = 0; i < 3; ++i) {
        if (!(sc[i] >= 1.0) || sc[i] != std::floor(sc[i]))
          throw ConfigError(l.path("supercell"), "cell counts must be integers >= 1");
        c.lattice.supercell[i] = static_cast<int>(sc[i]);
      }
    }
    c.lattice.lattice_constant_nm = l.positive("lattice_constant_nm", constants::si_lattice_constant_nm);
    l.finish();
  }
  if (r.has("cluster")) {
    ConfigReader cl = r.child("cluster");
    c.max_spins = cl.count("max_spins", 1, 1);
    c.min_spins = cl.count("min_spins", 1, 1);
    if (c.min_spins > c.max_spins) throw ConfigError(cl.path("min_spins"), "must not exceed max_spins");
    if (cl.has("strategy")) {
      c.strategy = cluster_strategy_from_string(cl.text("strategy", {"central_nearest", "strongest_coupled"}));
    }
    c.interior_origin = cl.boolean("interior_origin", true);
    if (cl.has("field_direction")) c.field_direction = detail::read_vec3(cl, "field_direction");
    cl.finish();
  }
  if (r.has("offsets")) {
    ConfigReader o = r.child("offsets");
    c.carrier_detuning_hz = o.number("carrier_detuning_hz", 0.0);
    const std::string kind = o.text("inhomogeneity", "none", {"none", "uniform", "gaussian"});
    c.offsets.kind = kind == "uniform" ? OffsetModel::Kind::uniform
                     : kind == "gaussian" ? OffsetModel::Kind::gaussian
                                          : OffsetModel::Kind::none;
    c.offsets.width_hz = c.offsets.kind == OffsetModel::Kind::none ? 0.0 : o.nonnegative("width_hz", 0.0);
    o.finish();
  }
  c.sequence = detail::read_sequence(r.child("sequence"));
  if (r.has("noise")) c.noise = detail::read_noise(r.child("noise"), c.dt_noise_s);
  c.t1_s = r.nonnegative("t1_s", 0.0);
  c.n_realizations = r.count("n_realizations", 1, 1);
  if (r.has("seeds")) {
    ConfigReader s = r.child("seeds");
    c.base_seed = s.count("base");
    s.finish();
  }
  if (r.has("scan")) c.scan = detail::read_scan(r.child("scan"));
  if (r.has("aht")) c.aht = detail::read_aht(r.child("aht"));
  if (r.has("analysis")) {
    ConfigReader a = r.child("analysis");
    if (a.has("expected_offset_hz")) {
      c.expected_offset_hz = a.number("expected_offset_hz");
      if (*c.expected_offset_hz == 0.0) throw ConfigError(a.path("expected_offset_hz"), "must be nonzero");
    }
    c.zero_pad = a.count("zero_pad", 4, 1);
    a.finish();
  }
  if (r.has("output_dir")) c.output_dir = r.text("output_dir");
  r.finish();
  if (c.system && c.scan && c.scan->axis == ScanAxis::abundance)
    throw ConfigError("/scan/axis", "an abundance scan needs a lattice, not an explicit system");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("/", "cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("/", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

// The decoupling cycle of the config at tau (cycle time fixed by the builder).
inline PulseSequence build_inner_sequence(const SequenceConfig& s) {
  if (s.builder == "wahuha") return build_wahuha(s.tau_s, s.pulse_width_s);
  if (s.builder == "mrev8+") return build_mrev8(s.tau_s, s.pulse_width_s, Helicity::plus);
  if (s.builder == "mrev8-") return build_mrev8(s.tau_s, s.pulse_width_s, Helicity::minus);
  if (s.builder == "mrev16") return build_mrev16(s.tau_s, s.pulse_width_s);
  if (s.builder == "free") return build_free(s.free_duration_s);
  std::vector<double> phases;
  for (double p : s.phases_deg) phases.push_back(detail::deg(p));
  double total = 0.0;
  for (double w : s.windows_tau) total += w;
  auto ev = detail::windowed_cycle(s.tau_s, s.pulse_width_s, s.windows_tau, phases, "C");
  return detail::single_cycle(std::move(ev), total * s.tau_s,
                              {{"builder", "custom"}, {"tau_s", s.tau_s}, {"pulse_width_s", s.pulse_width_s}});
}

// Cycle time in units of tau for the builder.
inline double cycle_in_tau(const SequenceConfig& s) {
  if (s.builder == "wahuha") return 6.0;
  if (s.builder == "mrev8+" || s.builder == "mrev8-") return 12.0;
  if (s.builder == "mrev16") return 24.0;
  if (s.builder == "custom") {
    double t = 0.0;
    for (double w : s.windows_tau) t += w;
    return t;
  }
  return 1.0;
}

// Ratio of the precession frequency of a resonance offset under the cycle
// to the bare offset.
inline double offset_scaling(const SequenceConfig& s) {
  if (s.builder == "mrev8+" || s.builder == "mrev8-") return std::sqrt(2.0) / 3.0;
  if (s.builder == "mrev16") return 1.0 / 3.0;
  if (s.builder == "wahuha") return 1.0 / std::sqrt(3.0);
  return 1.0;
}

inline double expected_offset_hz(const ExperimentConfig& c) {
  if (c.expected_offset_hz) return *c.expected_offset_hz;
  return c.carrier_detuning_hz * offset_scaling(c.sequence);
}

inline PulseSequence build_sequence(const SequenceConfig& s) {
  const PulseSequence inner = build_inner_sequence(s);
  CpmgOptions o;
  o.excitation_width = s.excitation_width_s;
  o.pi_width = s.pi_width_s;
  o.pi_amplitude_error = s.pi_amplitude_error;
  o.pi_phase_offset = detail::deg(s.pi_phase_offset_deg);
  o.sample_position = s.sample_position;
  o.sample_stride = s.sample_stride;
  return wrap_cpmg(inner, s.cycles_per_pi, s.n_pi, 0.0, o);
}

// Config with the scan axis set to `value`.
inline ExperimentConfig at_scan_value(const ExperimentConfig& c, double value) {
  if (!c.scan) throw DomainError("config has no scan section");
  ExperimentConfig out = c;
  const ScanConfig& s = *c.scan;
  if (s.axis == ScanAxis::cycle_time) {
    out.sequence.tau_s = value / cycle_in_tau(c.sequence);
  } else {
    out.lattice.abundance = value;
  }
  double cycles = static_cast<double>(c.sequence.cycles_per_pi);
  if (s.pi_spacing_reference > 0.0) cycles *= std::pow(value / s.pi_spacing_reference, s.pi_spacing_exponent);
  std::uint64_t stride = c.sequence.sample_stride;
  if (s.sample_interval_s > 0.0) {
    const double tc = out.sequence.tau_s * cycle_in_tau(out.sequence);
    stride = static_cast<std::uint64_t>(std::max(1.0, std::round(s.sample_interval_s / tc)));
  }
  const auto units = static_cast<std::uint64_t>(std::max(1.0, std::round(cycles / static_cast<double>(stride))));
  out.sequence.sample_stride = stride;
  out.sequence.cycles_per_pi = units * stride;
  return out;
}

inline ExperimentParams make_params(const ExperimentConfig& c) {
  ExperimentParams p;
  p.lattice = c.lattice;
  p.max_spins = c.max_spins;
  p.min_spins = c.min_spins;
  p.strategy = c.strategy;
  p.interior_origin = c.interior_origin;
  p.field_direction = c.field_direction;
  p.carrier_detuning_hz = c.carrier_detuning_hz;
  p.offsets = c.offsets;
  p.sequence = build_sequence(c.sequence);
  p.noise = c.noise;
  p.dt_noise = c.dt_noise_s;
  p.t1_s = c.t1_s;
  p.system = c.system;
  return p;
}

} // namespace spinlab
