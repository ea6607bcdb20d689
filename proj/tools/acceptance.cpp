#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "spinlab/aht.hpp"
#include "spinlab/cli.hpp"

using namespace spinlab;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::filesystem::path config_dir;
std::size_t workers = 1;

ExperimentConfig bundled(const std::string& name) { return load_config((config_dir / (name + ".json")).string()); }

ScanTable scan(const std::string& name) {
  const ExperimentConfig cfg = bundled(name);
  ScanOptions o;
  o.workers = workers;
  o.on_row = [](const ScanRow& r) {
    std::fprintf(stderr, "  %g -> T2 %g s%s\n", r.axis_value, r.t2, r.error.empty() ? "" : (" (" + r.error + ")").c_str());
  };
  return run_scan(cfg.scan->axis, cfg.scan->grid, [&](double v) { return cli::scan_point(cfg, v); }, o);
}

// -sum_j w_j (a Iz_j + b Ix_j)
CMat offset_operator(const SpinSystem& s, double a, double b) {
  const auto dim = static_cast<Eigen::Index>(std::size_t{1} << s.n_spins);
  CMat m = CMat::Zero(dim, dim);
  for (std::size_t j = 0; j < s.n_spins; ++j)
    m -= s.offsets[static_cast<Eigen::Index>(j)] *
         (a * spin_component_matrix(s.n_spins, j, Axis::z) + b * spin_component_matrix(s.n_spins, j, Axis::x));
  return m;
}

Verdict aht_identities() {
  double worst = 0.0, worst_dip = 0.0;
  int systems = 0;
  for (std::size_t n = 1; n <= 3; ++n)
    for (std::uint64_t seed = 0; seed < 10; ++seed, ++systems) {
      const SpinSystem sys = cli::random_system(n, 500.0, 500.0, 1000 * n + seed);
      const double tau = 5e-6;
      const CMat plus = average_hamiltonian(build_mrev8(tau, 0, Helicity::plus), sys, 0).matrix();
      const CMat minus = average_hamiltonian(build_mrev8(tau, 0, Helicity::minus), sys, 0).matrix();
      const CMat m16 = average_hamiltonian(build_mrev16(tau, 0), sys, 0).matrix();
      worst = std::max({worst, (plus - offset_operator(sys, 1.0 / 3, 1.0 / 3)).norm(),
                        (minus - offset_operator(sys, 1.0 / 3, -1.0 / 3)).norm(),
                        (m16 - offset_operator(sys, 1.0 / 3, 0.0)).norm()});
      for (const PulseSequence& s : {build_mrev8(tau, 0, Helicity::plus), build_mrev8(tau, 0, Helicity::minus), build_mrev16(tau, 0)})
        worst_dip = std::max(worst_dip, verify_decoupling(s, sys, 0).dipolar_norm);
    }
  return {worst <= 1e-10 && worst_dip <= 1e-10,
          fmt("%d systems, max identity residual %.2e, max dipolar residual %.2e (limit 1e-10)", systems, worst, worst_dip)};
}

Verdict fig2_exponent() {
  const ScanTable t = scan("fig2_desk");
  if (!t.power_law) return {false, "power-law fit failed"};
  const double k = t.power_law->value("exponent");
  return {k >= -2.3 && k <= -1.7, fmt("exponent %.4f +/- %.4f (band [-2.3, -1.7])", k, t.power_law->sigma("exponent"))};
}

Verdict cycle_error_slopes() {
  const ExperimentConfig cfg = bundled("aht_checks");
  const AhtConfig& a = *cfg.aht;
  const SpinSystem sys = cli::random_system(a.random_spins, a.random_offset_hz, a.random_coupling_hz, cfg.base_seed);
  auto mrev16 = [](double tc) { return build_mrev16(tc / 24.0, 0); };
  auto wahuha = [](double tc) { return build_wahuha(tc / 6.0, 0); };
  const CycleErrorScaling m = cycle_error_scaling(mrev16, sys, a.cycle_times_s);
  const CycleErrorScaling mo = cycle_error_scaling(mrev16, sys, a.cycle_times_s, CycleErrorReference::offset_referenced);
  const CycleErrorScaling w = cycle_error_scaling(wahuha, without_offsets(sys), a.cycle_times_s);
  const bool ok_m = m.slope >= 2.7 && m.slope <= 3.3;
  const bool ok_w = w.slope >= 1.7 && w.slope <= 2.3;
  return {ok_m && ok_w, fmt("MREV-16 mixed slope %.3f (band [2.7, 3.3]); WAHUHA dipolar-only slope %.3f (band [1.7, 2.3]); "
                            "MREV-16 offset-referenced slope %.3f (info)",
                            m.slope, w.slope, mo.slope)};
}

Verdict abundance_intercept() {
  const ScanTable t = scan("abundance_desk");
  if (!t.rate_vs_p) return {false, "regression failed"};
  const LinearRegression& r = *t.rate_vs_p;
  const double z = std::abs(r.intercept) / r.intercept_sigma;
  return {z <= 2.0, fmt("intercept %.3e +/- %.3e 1/s (%.2f sigma, limit 2); slope %.3e +/- %.3e 1/s", r.intercept,
                        r.intercept_sigma, z, r.slope, r.slope_sigma)};
}

Verdict fig3_flatness() {
  const ScanTable t = scan("fig3_desk");
  double lo = 1e300, hi = 0.0;
  for (const auto& r : t.rows) {
    if (!r.error.empty() || !(r.t2 > 0.0)) return {false, fmt("scan point %g failed: %s", r.axis_value, r.error.c_str())};
    lo = std::min(lo, r.t2);
    hi = std::max(hi, r.t2);
  }
  const double spread = hi / lo - 1.0;

  std::vector<double> tt, y;
  for (int i = 0; i <= 80; ++i) {
    tt.push_back(0.5 * i);
    y.push_back(0.55 * std::exp(-tt.back() / 1.6) + 0.45 * std::exp(-tt.back() / 9.8));
  }
  const FitResult f = fit_double_exponential(tt, y);
  const double ea = std::abs(f.value("Ta") / 1.6 - 1.0), eb = std::abs(f.value("Tb") / 9.8 - 1.0);
  return {spread < 0.2 && ea < 0.01 && eb < 0.01,
          fmt("T2 %.3f..%.3f s, spread %.1f%% (limit 20%%); double-exp Ta %.4f Tb %.4f (rel err %.1e, %.1e; limit 1e-2)", lo,
              hi, 100 * spread, f.value("Ta"), f.value("Tb"), ea, eb)};
}

Verdict cpmg_phase() {
  const SpinSystem s = SpinSystem::from_parameters(Eigen::VectorXd::Constant(1, constants::two_pi * 120.0), Eigen::MatrixXd::Zero(1, 1));
  const HermitianOperator h = system_hamiltonian(s);
  auto amplitude = [&](double offset) {
    CpmgOptions o;
    o.pi_amplitude_error = 0.01;
    o.pi_phase_offset = offset;
    const PulseSequence seq = wrap_cpmg(build_mrev16(10e-6, 0), 1, 50, 0.0, o);
    return std::abs(measure_transverse(evolve(thermal_state(1), seq, h).final_state));
  };
  const double good = amplitude(constants::pi / 2), bad = amplitude(0.0);
  const double ratio = (1.0 - bad) / (1.0 - good);
  return {good >= 0.99 && ratio >= 10.0,
          fmt("amplitude after 50 pi: phi+pi/2 %.5f (limit 0.99), phi %.5f; loss ratio %.0f (limit 10)", good, bad, ratio)};
}

double train_diff(const EchoTrain& a, const EchoTrain& b) {
  if (a.size() != b.size()) return 1e300;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

Verdict hygiene() {
  const SpinSystem sys = SpinSystem::from_parameters(constants::two_pi * Eigen::Vector3d(90.0, -40.0, 10.0),
                                                     constants::two_pi * (Eigen::Matrix3d() << 0, 300, 60, 300, 0, 150, 60, 150, 0).finished());
  const HermitianOperator h = system_hamiltonian(sys);

  const PulseSequence long_seq = wrap_cpmg(build_mrev16(6e-6, 1e-6), 157, 4, 0.0);
  const CMat rho0 = thermal_state(3).matrix();
  const EvolveResult r = evolve(thermal_state(3), long_seq, h);
  Eigen::SelfAdjointEigenSolver<CMat> e0(rho0), e1(r.final_state.matrix());
  const double unitarity = (e0.eigenvalues() - e1.eigenvalues()).norm();

  CpmgOptions co;
  co.pi_amplitude_error = 0.02;
  const PulseSequence seq = wrap_cpmg(build_mrev16(8e-6, 1.5e-6), 50, 4, 0.2, co);
  EvolveOptions eo;
  eo.noise.kind = NoiseModel::Kind::rtn_bath;
  eo.noise.n_fluctuators = 4;
  eo.noise.rate_min = 1;
  eo.noise.rate_max = 300;
  eo.noise.amplitude = constants::two_pi * 5.0;
  eo.noise.seed = 12;
  eo.dt_noise = 1.1e-3;
  const EchoTrain cached = evolve(thermal_state(3), seq, h, eo).train;
  eo.cache = false;
  const double cache_diff = train_diff(cached, evolve(thermal_state(3), seq, h, eo).train);

  ExperimentParams p;
  p.lattice.abundance = 0.2;
  p.lattice.supercell = {3, 3, 3};
  p.max_spins = 3;
  p.min_spins = 2;
  p.carrier_detuning_hz = 100.0;
  p.sequence = wrap_cpmg(build_mrev16(10e-6, 0), 10, 2, 0.0);
  DisorderOptions one, many;
  many.workers = 3;
  const DisorderResult d1 = disorder_average(p, 6, 42, one);
  const DisorderResult d2 = disorder_average(p, 6, 42, one);
  const DisorderResult d3 = disorder_average(p, 6, 42, many);
  const bool deterministic = d1.mean.values == d2.mean.values && d1.mean.values == d3.mean.values && d1.variance == d3.variance;

  // a decaying single-spin train, then amplitude x10 and time x5
  ExperimentParams q;
  q.system = SpinSystem::from_parameters(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Zero(1, 1));
  q.carrier_detuning_hz = 120.0;
  q.sequence = wrap_cpmg(build_mrev16(10e-6, 0), 256, 6, 0.0);
  q.noise.kind = NoiseModel::Kind::ou;
  q.noise.correlation_time_s = 2e-3;
  q.noise.rms = constants::two_pi * 30.0;
  q.dt_noise = 1e-3;
  const EchoTrain base = disorder_average(q, 3, 4).mean;
  const double f = 120.0 / 3.0;
  const DecayAnalysis a0 = analyze_decay(base, f);
  EchoTrain scaled = base;
  scaled.scale(10.0);
  for (auto& t : scaled.times) t *= 5.0;
  const DecayAnalysis a1 = analyze_decay(scaled, f / 5.0);
  double scale_err = 1e300;
  if (a0.fit && a1.fit) scale_err = std::abs(a1.fit->value("T2") / (5.0 * a0.fit->value("T2")) - 1.0);

  const bool pass = unitarity <= 1e-10 && cache_diff <= 1e-10 && deterministic && scale_err <= 1e-6;
  return {pass, fmt("unitarity %.1e over %llu pulses; cached vs naive %.1e; deterministic %s; scale invariance rel err %.1e "
                    "(limits 1e-10, 1e-10, 1e-6)",
                    unitarity, static_cast<unsigned long long>(long_seq.pulse_count()), cache_diff,
                    deterministic ? "yes" : "no", scale_err)};
}

Verdict quality_factor() {
  const double q = figures_of_merit(60e6, 25.0).q;
  return {q >= 1e9 && q < 1e10, fmt("Q = %.3e (order 1e9 expected)", q)};
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  int only = 0;
  std::string dir = std::string(SPINLAB_SOURCE_DIR) + "/configs";
  workers = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--criterion", only, "Run one criterion (1-8); default all")->check(CLI::Range(0, 8));
  app.add_option("--configs", dir, "Directory holding the bundled configs");
  app.add_option("--workers", workers, "Worker threads for disorder averages")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  config_dir = dir;

  const std::vector<Verdict (*)()> checks{aht_identities, fig2_exponent, cycle_error_slopes, abundance_intercept,
                                          fig3_flatness,  cpmg_phase,    hygiene,            quality_factor};
  bool all = true;
  for (int i = 1; i <= 8; ++i) {
    if (only != 0 && i != only) continue;
    Verdict v;
    try {
      v = checks[static_cast<std::size_t>(i - 1)]();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %d: %s %s\n", i, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
    all = all && v.pass;
  }
  return all ? 0 : 1;
}
