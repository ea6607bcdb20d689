#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "spinlab/aht.hpp"
#include "spinlab/analysis.hpp"
#include "spinlab/config.hpp"
#include "spinlab/engine.hpp"
#include "spinlab/io.hpp"
#include "spinlab/random.hpp"

namespace spinlab::cli {

enum ExitCode : int { ok = 0, config_error = 2, numerical_error = 3 };

struct Options {
  std::string config_path;
  std::optional<std::string> out_dir;
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> input; // analyze
  bool verbose = false;
  std::ostream* log = &std::cerr;
  std::ostream* report = &std::cout;
};

struct Context {
  ExperimentConfig config;
  Stamp stamp;
  std::filesystem::path out;
};

// Loads the config, applies the seed override (which is hashed with it) and
// resolves the output directory.
inline Context prepare(const Options& o) {
  std::ifstream in(o.config_path);
  if (!in) throw ConfigError("/", "cannot open config file '" + o.config_path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("/", std::string("invalid JSON: ") + e.what());
  }
  if (o.seed_override) {
    if (!j.is_object()) throw ConfigError("/", "expected an object");
    j["seeds"] = {{"base", *o.seed_override}};
  }
  Context c;
  c.config = parse_config(j);
  c.stamp.config_hash = c.config.hash();
  c.out = o.out_dir ? std::filesystem::path(*o.out_dir) : std::filesystem::path(c.config.output_dir);
  if (o.workers < 1) throw ConfigError("--workers", "must be >= 1");
  return c;
}

inline void log(const Options& o, const std::string& msg) {
  if (o.verbose) *o.log << msg << "\n";
}

inline nlohmann::json sidecar(const Context& c) { return {{"config", c.config.source}, {"name", c.config.name}}; }

inline nlohmann::json analysis_json(const DecayAnalysis& a, double expected_hz) {
  nlohmann::json j = to_json(a);
  j["expected_offset_hz"] = expected_hz;
  j["windowing"] = "echoes above 3x the median absolute deviation of the last quarter";
  if (a.fit) {
    try {
      const auto fom = figures_of_merit(constants::carrier_frequency_hz, a.fit->value("T2"));
      j["figures_of_merit"] = {{"f0_hz", constants::carrier_frequency_hz}, {"q", fom.q}};
    } catch (const DomainError&) {
    }
  }
  return j;
}

inline int cmd_simulate(const Options& o) {
  const Context c = prepare(o);
  const ExperimentParams p = make_params(c.config);
  const TimingReport timing = validate_timing(p.sequence);
  if (!timing.errors.empty()) throw TimingError(timing.errors.front());
  for (const auto& w : timing.warnings) *o.log << "warning: " << w << "\n";
  log(o, "simulate: " + std::to_string(c.config.n_realizations) + " realization(s)");

  DisorderOptions dopt;
  dopt.workers = o.workers;
  dopt.retain_trains = false;
  const DisorderResult dr = disorder_average(p, c.config.n_realizations, c.config.base_seed, dopt);

  write_text(c.out / "echo_train.csv", echo_train_csv(dr.mean, c.stamp));
  nlohmann::json side = sidecar(c);
  side["provenance"] = dr.mean.provenance;
  side["columns"] = {"time_s", "re", "im", "segment_index"};
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& r : dr.realizations)
    if (!r.ok) failures.push_back({{"index", r.index}, {"seed", r.seed}, {"error", r.error}});
  side["failed_realizations"] = failures;
  write_json(c.out / "echo_train.json", side, c.stamp);
  write_json(c.out / "sequence.json", to_json(p.sequence), c.stamp);
  for (const auto& r : dr.realizations)
    if (r.ok) {
      write_json(c.out / "spin_system.json", to_json(r.system), c.stamp);
      break;
    }

  const double expected = expected_offset_hz(c.config);
  if (expected != 0.0) {
    const DecayAnalysis a = analyze_decay(dr.mean, expected, c.config.zero_pad);
    write_text(c.out / "echoes.csv", echoes_csv(a, c.stamp));
    write_json(c.out / "analysis.json", analysis_json(a, expected), c.stamp);
  } else {
    write_json(c.out / "analysis.json", {{"skipped", "expected side-peak offset is zero"}}, c.stamp);
  }
  return ok;
}

inline ScanPoint scan_point(const ExperimentConfig& cfg, double value) {
  const ExperimentConfig at = at_scan_value(cfg, value);
  ScanPoint pt;
  pt.params = make_params(at);
  pt.n_realizations = at.n_realizations;
  pt.base_seed = at.base_seed;
  pt.expected_offset_hz = expected_offset_hz(at);
  pt.zero_pad = at.zero_pad;
  return pt;
}

inline std::filesystem::path point_path(const std::filesystem::path& out, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof(name), "point_%03zu.json", index);
  return out / "points" / name;
}

inline int cmd_scan(const Options& o) {
  const Context c = prepare(o);
  if (!c.config.scan) throw ConfigError("/scan", "required key is missing");
  std::vector<double> grid = c.config.scan->grid;
  std::sort(grid.begin(), grid.end());
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (grid[i] == grid[i - 1]) throw ConfigError("/scan", "grid values must be distinct");
  // every point must build before any work starts
  for (double v : grid) {
    const ScanPoint pt = scan_point(c.config, v);
    const TimingReport timing = validate_timing(pt.params.sequence);
    if (!timing.errors.empty()) throw TimingError(timing.errors.front());
  }
  auto index_of = [&](double v) {
    return static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), v) - grid.begin());
  };

  ScanOptions sopt;
  sopt.workers = o.workers;
  sopt.lookup = [&](double v) -> std::optional<ScanRow> {
    const auto path = point_path(c.out, index_of(v));
    if (!std::filesystem::exists(path)) return std::nullopt;
    try {
      const nlohmann::json j = read_json(path);
      if (j.at("stamp").at("config_hash") != c.stamp.config_hash) return std::nullopt;
      ScanRow r = scan_row_from_json(j.at("row"));
      if (r.axis_value != v) return std::nullopt;
      log(o, "scan: reusing " + path.string());
      return r;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  };
  sopt.on_row = [&](const ScanRow& r) {
    log(o, "scan: " + format_double(r.axis_value) + " -> T2 = " + format_double(r.t2) + (r.error.empty() ? "" : " (" + r.error + ")"));
    write_json(point_path(c.out, index_of(r.axis_value)), {{"row", to_json(r)}}, c.stamp);
  };
  const ScanTable t = run_scan(c.config.scan->axis, grid, [&](double v) { return scan_point(c.config, v); }, sopt);

  write_text(c.out / "scan.csv", scan_csv(t, c.stamp));
  nlohmann::json side = sidecar(c);
  side["axis"] = to_string(t.axis);
  side["fit_weighting"] = "unweighted";
  if (t.power_law) side["power_law"] = to_json(*t.power_law);
  if (t.rate_vs_p)
    side["rate_vs_abundance"] = {{"slope_per_s", t.rate_vs_p->slope},
                                 {"slope_sigma_per_s", t.rate_vs_p->slope_sigma},
                                 {"intercept_per_s", t.rate_vs_p->intercept},
                                 {"intercept_sigma_per_s", t.rate_vs_p->intercept_sigma}};
  std::size_t failed = 0;
  for (const auto& r : t.rows) failed += r.error.empty() ? 0 : 1;
  side["failed_points"] = failed;
  write_json(c.out / "scan.json", side, c.stamp);
  return ok;
}

inline SpinSystem random_system(std::size_t n, double offset_hz, double coupling_hz, std::uint64_t seed) {
  Rng rng(stream_seed(seed, Stream::offsets));
  Eigen::VectorXd w(static_cast<Eigen::Index>(n));
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = constants::two_pi * offset_hz * (2.0 * rng.uniform() - 1.0);
  for (Eigen::Index j = 0; j < w.size(); ++j)
    for (Eigen::Index k = j + 1; k < w.size(); ++k) d(j, k) = d(k, j) = constants::two_pi * coupling_hz * (2.0 * rng.uniform() - 1.0);
  return SpinSystem::from_parameters(w, d);
}

inline int cmd_aht(const Options& o) {
  const Context c = prepare(o);
  const AhtConfig a = c.config.aht.value_or(AhtConfig{});
  SpinSystem sys = a.system ? *a.system
                   : c.config.system ? *c.config.system
                                     : random_system(a.random_spins, a.random_offset_hz, a.random_coupling_hz, c.config.base_seed);
  if (a.dipolar_only) sys = without_offsets(sys);

  SequenceConfig delta = c.config.sequence;
  delta.pulse_width_s = 0.0;
  const PulseSequence seq = build_inner_sequence(delta);

  std::ostream& rep = *o.report;
  std::string csv = c.stamp.csv_comment() + "order,full_norm,offset_norm,dipolar_norm,cross_norm\n";
  nlohmann::json reports = nlohmann::json::array();
  rep << "sequence " << c.config.sequence.builder << ", " << sys.n_spins << " spin(s)\n";
  for (int order : a.orders) {
    const DecouplingReport r = verify_decoupling(seq, sys, order);
    csv += std::to_string(order) + "," + format_double(r.full_norm) + "," + format_double(r.offset_norm) + "," +
           format_double(r.dipolar_norm) + "," + format_double(r.cross_norm) + "\n";
    reports.push_back({{"order", order}, {"full_norm", r.full_norm}, {"offset_norm", r.offset_norm},
                       {"dipolar_norm", r.dipolar_norm}, {"cross_norm", r.cross_norm}});
    rep << "order " << order << ": full " << r.full_norm << "  offset " << r.offset_norm << "  dipolar "
        << r.dipolar_norm << "  cross " << r.cross_norm << "\n";
  }
  // reference: the bare dipolar Hamiltonian
  const double bare = system_hamiltonian(without_offsets(sys)).matrix().norm();
  rep << "bare dipolar norm " << bare << "\n";
  write_text(c.out / "aht_report.csv", csv);

  nlohmann::json side = sidecar(c);
  side["system"] = to_json(sys);
  side["reports"] = reports;
  side["bare_dipolar_norm"] = bare;
  if (!a.cycle_times_s.empty()) {
    if (c.config.sequence.builder == "free") throw ConfigError("/aht/cycle_times_us", "needs a pulse sequence builder");
    const double n_tau = cycle_in_tau(c.config.sequence);
    auto family = [&](double tc) {
      SequenceConfig s = c.config.sequence;
      s.tau_s = tc / n_tau;
      return build_inner_sequence(s);
    };
    const CycleErrorScaling sc = cycle_error_scaling(family, sys, a.cycle_times_s, a.reference);
    std::string ce = c.stamp.csv_comment() + "cycle_time_s,error\n";
    for (const auto& p : sc.points) ce += format_double(p.cycle_time) + "," + format_double(p.error) + "\n";
    write_text(c.out / "cycle_error.csv", ce);
    side["cycle_error"] = {{"reference", a.reference == CycleErrorReference::zeroth_order ? "zeroth_order" : "offset_referenced"},
                           {"slope", std::isfinite(sc.slope) ? nlohmann::json(sc.slope) : nlohmann::json()},
                           {"slope_sigma", std::isfinite(sc.slope_sigma) ? nlohmann::json(sc.slope_sigma) : nlohmann::json()},
                           {"exact", sc.exact}};
    if (sc.exact)
      rep << "cycle error below 1e-12 at every cycle time\n";
    else
      rep << "cycle error slope " << sc.slope << " +/- " << sc.slope_sigma << "\n";
  }
  write_json(c.out / "aht.json", side, c.stamp);
  return ok;
}

inline int cmd_analyze(const Options& o) {
  const Context c = prepare(o);
  const std::filesystem::path input = o.input ? std::filesystem::path(*o.input) : c.out / "echo_train.csv";
  const EchoTrain t = read_echo_train_csv(input);
  const double expected = expected_offset_hz(c.config);
  if (expected == 0.0) throw ConfigError("/analysis/expected_offset_hz", "side-peak offset is zero; set it explicitly");
  const DecayAnalysis a = analyze_decay(t, expected, c.config.zero_pad);
  write_text(c.out / "echoes.csv", echoes_csv(a, c.stamp));
  nlohmann::json j = analysis_json(a, expected);
  j["input"] = input.string();
  write_json(c.out / "analysis.json", j, c.stamp);
  return ok;
}

// Runs a subcommand and maps errors to exit codes.
inline int run(const std::string& command, const Options& o) {
  try {
    if (command == "simulate") return cmd_simulate(o);
    if (command == "scan") return cmd_scan(o);
    if (command == "aht") return cmd_aht(o);
    if (command == "analyze") return cmd_analyze(o);
    *o.log << "error: unknown command '" << command << "'\n";
    return config_error;
  } catch (const ConfigError& e) {
    *o.log << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const TimingError& e) {
    *o.log << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const std::exception& e) {
    *o.log << "error: " << e.what() << "\n";
    return numerical_error;
  }
}

} // namespace spinlab::cli
