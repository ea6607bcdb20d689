#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "spinlab/errors.hpp"
#include "spinlab/lattice.hpp"
#include "spinlab/random.hpp"
#include "spinlab/sequences.hpp"
#include "spinlab/spinops.hpp"

namespace spinlab {

struct NoiseModel {
  enum class Kind { none, ou, rtn_bath };
  Kind kind = Kind::none;
  // ou
  double correlation_time_s = 0.0;
  double rms = 0.0; // rad/s
  // rtn_bath: each fluctuator flips at a rate drawn log-uniformly in
  // [rate_min, rate_max] and contributes +/- amplitude.
  std::size_t n_fluctuators = 0;
  double rate_min = 0.0; // s^-1
  double rate_max = 0.0; // s^-1
  double amplitude = 0.0; // rad/s
  std::uint64_t seed = 0;

  void validate() const {
    switch (kind) {
    case Kind::none: return;
    case Kind::ou:
      if (!(correlation_time_s > 0.0)) throw DomainError("ou noise needs a positive correlation time");
      if (!(rms >= 0.0)) throw DomainError("ou noise rms must be nonnegative");
      return;
    case Kind::rtn_bath:
      if (n_fluctuators < 1) throw DomainError("rtn_bath needs at least one fluctuator");
      if (!(rate_min > 0.0 && rate_max > 0.0)) throw DomainError("rtn_bath rates must be positive");
      if (!(rate_min <= rate_max)) throw DomainError("rtn_bath rate band must be ordered");
      if (!(amplitude >= 0.0)) throw DomainError("rtn_bath amplitude must be nonnegative");
      return;
    }
  }

  // Fastest correlation time of the process.
  [[nodiscard]] double shortest_timescale() const {
    if (kind == Kind::ou) return correlation_time_s;
    if (kind == Kind::rtn_bath) return 1.0 / (2.0 * rate_max);
    return 0.0;
  }
};

inline std::string to_string(NoiseModel::Kind k) {
  switch (k) {
  case NoiseModel::Kind::none: return "none";
  case NoiseModel::Kind::ou: return "ou";
  case NoiseModel::Kind::rtn_bath: return "rtn_bath";
  }
  return "none";
}

inline nlohmann::json to_json(const NoiseModel& m) {
  nlohmann::json j{{"kind", to_string(m.kind)}, {"seed", m.seed}};
  if (m.kind == NoiseModel::Kind::ou) {
    j["correlation_time_s"] = m.correlation_time_s;
    j["rms_rad_s"] = m.rms;
  } else if (m.kind == NoiseModel::Kind::rtn_bath) {
    j["n_fluctuators"] = m.n_fluctuators;
    j["rate_min_per_s"] = m.rate_min;
    j["rate_max_per_s"] = m.rate_max;
    j["amplitude_rad_s"] = m.amplitude;
  }
  return j;
}

// Per-spin offset noise advanced on a fixed grid of width dt. Each spin has
// its own independent process. Both kinds are sampled exactly on the grid:
// telegraph flips with probability (1 - exp(-2 g dt)) / 2 per step, OU as
// its exact AR(1) discretization.
class NoiseProcess {
public:
  NoiseProcess(const NoiseModel& model, std::size_t n_spins, double dt) : model_(model), dt_(dt) {
    model.validate();
    if (model.kind == NoiseModel::Kind::none) throw DomainError("NoiseProcess needs an active noise model");
    if (!(dt > 0.0)) throw DomainError("noise grid step must be positive");
    values_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_spins));
    for (std::size_t j = 0; j < n_spins; ++j) {
      Spin s{Rng(stream_seed(model.seed + 0x1000 * j, Stream::noise)), {}, {}, 0.0};
      if (model.kind == NoiseModel::Kind::rtn_bath) {
        const double l0 = std::log(model.rate_min);
        const double l1 = std::log(model.rate_max);
        for (std::size_t f = 0; f < model.n_fluctuators; ++f) {
          const double rate = std::exp(s.rng.uniform(l0, l1));
          s.flip_probability.push_back(0.5 * (1.0 - std::exp(-2.0 * rate * dt)));
          s.state.push_back(s.rng.bernoulli(0.5) ? 1 : -1);
        }
      } else {
        s.x = model.rms * s.rng.normal();
      }
      spins_.push_back(std::move(s));
    }
    decay_ = model.kind == NoiseModel::Kind::ou ? std::exp(-dt / model.correlation_time_s) : 0.0;
    refresh();
  }

  [[nodiscard]] const Eigen::VectorXd& values() const { return values_; }
  [[nodiscard]] std::uint64_t step_index() const { return step_; }
  [[nodiscard]] double dt() const { return dt_; }

  void step() {
    for (auto& s : spins_) {
      if (model_.kind == NoiseModel::Kind::rtn_bath) {
        for (std::size_t f = 0; f < s.state.size(); ++f)
          if (s.rng.uniform() < s.flip_probability[f]) s.state[f] = -s.state[f];
      } else {
        s.x = decay_ * s.x + model_.rms * std::sqrt(1.0 - decay_ * decay_) * s.rng.normal();
      }
    }
    ++step_;
    refresh();
  }

private:
  struct Spin {
    Rng rng;
    std::vector<double> flip_probability;
    std::vector<int> state;
    double x;
  };

  void refresh() {
    for (std::size_t j = 0; j < spins_.size(); ++j) {
      double v = spins_[j].x;
      if (model_.kind == NoiseModel::Kind::rtn_bath) {
        v = 0.0;
        for (int s : spins_[j].state) v += model_.amplitude * s;
      }
      values_[static_cast<Eigen::Index>(j)] = v;
    }
  }

  NoiseModel model_;
  double dt_;
  double decay_ = 0.0;
  std::vector<Spin> spins_;
  Eigen::VectorXd values_;
  std::uint64_t step_ = 0;
};

// Rows are grid steps, columns spins; row k holds the offsets during
// [k dt, (k + 1) dt).
inline Eigen::MatrixXd sample_noise_path(const NoiseModel& model, std::size_t n_spins, double duration, double dt) {
  if (model.kind == NoiseModel::Kind::none) throw DomainError("sample_noise_path needs an active noise model");
  if (!(duration > 0.0)) throw DomainError("noise path duration must be positive");
  const auto steps = static_cast<Eigen::Index>(std::max<double>(1.0, std::ceil(duration / dt - 1e-9)));
  NoiseProcess p(model, n_spins, dt);
  Eigen::MatrixXd out(steps, static_cast<Eigen::Index>(n_spins));
  for (Eigen::Index k = 0; k < steps; ++k) {
    out.row(k) = p.values().transpose();
    p.step();
  }
  return out;
}

struct EchoTrain {
  std::vector<double> times;
  std::vector<cplx> values;
  std::vector<int> segment; // per sample; increments at each refocusing block
  nlohmann::json provenance = nlohmann::json::object();

  [[nodiscard]] std::size_t size() const { return times.size(); }
  [[nodiscard]] int segment_count() const { return segment.empty() ? 0 : segment.back() + 1; }

  // [begin, end) sample indices of segment s
  [[nodiscard]] std::pair<std::size_t, std::size_t> segment_range(int s) const {
    const auto lo = std::lower_bound(segment.begin(), segment.end(), s);
    const auto hi = std::upper_bound(segment.begin(), segment.end(), s);
    return {static_cast<std::size_t>(lo - segment.begin()), static_cast<std::size_t>(hi - segment.begin())};
  }

  // Start indices of every segment after the first.
  [[nodiscard]] std::vector<std::size_t> segment_boundaries() const {
    std::vector<std::size_t> b;
    for (std::size_t i = 1; i < segment.size(); ++i)
      if (segment[i] != segment[i - 1]) b.push_back(i);
    return b;
  }

  void scale(double c) {
    for (auto& v : values) v *= c;
  }
};

struct EvolveOptions {
  NoiseModel noise;
  double dt_noise = 0.0;
  // false: exponentiate every event of every repetition (reference path)
  bool cache = true;
  // Optional uniform T1-like damping of recorded samples; 0 disables.
  double t1_s = 0.0;
  std::uint64_t resync_interval = 1024;
};

struct EvolveResult {
  EchoTrain train;
  DeviationState final_state;
  double final_time = 0.0;
};

namespace detail {

class Evolver {
public:
  Evolver(const CMat& h, std::size_t n_spins, const EvolveOptions& opt)
      : h_(h), n_(n_spins), opt_(opt), ix_(total_spin_matrix(n_spins, Axis::x)),
        iy_(total_spin_matrix(n_spins, Axis::y)), iplus_(raising_matrix(n_spins)) {
    set_hamiltonian(h_);
    for (std::size_t j = 0; j < n_; ++j) iz_diag_.push_back(spin_component_matrix(n_, j, Axis::z).diagonal().real());
  }

  EvolveResult run(const DeviationState& state, const PulseSequence& seq) {
    rho_ = state.matrix();
    t_ = 0.0;
    segment_ = 0;
    seg_has_samples_ = false;
    if (opt_.noise.kind != NoiseModel::Kind::none) {
      if (!(opt_.dt_noise > 0.0)) throw DomainError("dt_noise must be positive when noise is active");
      noise_.emplace(opt_.noise, n_, opt_.dt_noise);
      set_hamiltonian(noisy_h());
    }
    for (const auto& b : seq.blocks) {
      if (!b.has_samples() && seg_has_samples_) {
        ++segment_;
        seg_has_samples_ = false;
      }
      if (b.repeat == 0) continue;
      if (noise_)
        noisy_block(b);
      else if (!opt_.cache)
        naive_block(b);
      else if (!b.has_samples())
        plain_block(b);
      else
        sampled_block(b);
      if (!rho_.allFinite()) throw NumericalError("state became non-finite during evolution");
    }
    EvolveResult r;
    r.train = std::move(train_);
    r.final_state = DeviationState(rho_);
    r.final_time = t_;
    return r;
  }

private:
  using Key = std::tuple<int, double, double, double>;

  void set_hamiltonian(const CMat& h) {
    cur_h_ = h;
    Eigen::SelfAdjointEigenSolver<CMat> es(h);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of H failed");
    evec_ = es.eigenvectors();
    eval_ = es.eigenvalues();
    cache_.clear();
  }

  CMat noisy_h() const {
    CMat h = h_;
    const Eigen::VectorXd& d = noise_->values();
    for (std::size_t j = 0; j < n_; ++j) h.diagonal() -= (d[static_cast<Eigen::Index>(j)] * iz_diag_[j]).cast<cplx>();
    return h;
  }

  CMat free_propagator(double t) const {
    CVec ph(eval_.size());
    for (Eigen::Index i = 0; i < eval_.size(); ++i) ph[i] = std::polar(1.0, -eval_[i] * t);
    return evec_ * ph.asDiagonal() * evec_.adjoint();
  }

  // Propagator of a window of length `t` inside event e (t = e.duration
  // unless the window is split by the noise grid).
  CMat window_propagator(const PulseEvent& e, double t) const {
    if (e.kind == PulseEvent::Kind::sample) return CMat::Identity(rho_.rows(), rho_.cols());
    if (e.kind == PulseEvent::Kind::delay) return free_propagator(t);
    if (e.duration == 0.0) return rotation_matrix(n_, e.actual_angle(), e.phase);
    const double rabi = e.actual_angle() / e.duration;
    const CMat h = cur_h_ + rabi * (std::cos(e.phase) * ix_ + std::sin(e.phase) * iy_);
    return propagator(h, t);
  }

  const CMat& event_propagator(const PulseEvent& e) {
    const Key k{static_cast<int>(e.kind), e.duration, e.phase, e.actual_angle()};
    auto it = cache_.find(k);
    if (it == cache_.end()) it = cache_.emplace(k, window_propagator(e, e.duration)).first;
    return it->second;
  }

  void record(double t, cplx v) {
    if (opt_.t1_s > 0.0) v *= std::exp(-t / opt_.t1_s);
    train_.times.push_back(t);
    train_.values.push_back(v);
    train_.segment.push_back(segment_);
    seg_has_samples_ = true;
  }

  cplx measure() const { return transverse_magnetization(rho_, n_); }

  void apply(const CMat& u) { rho_ = u * rho_ * u.adjoint(); }

  void naive_block(const SequenceBlock& b) {
    for (std::uint64_t r = 0; r < b.repeat; ++r)
      for (const auto& e : b.events) {
        if (e.kind == PulseEvent::Kind::sample) {
          record(t_, measure());
          continue;
        }
        apply(window_propagator(e, e.duration));
        t_ += e.duration;
      }
  }

  CMat product(const std::vector<PulseEvent>& ev, std::size_t from, std::size_t to) {
    CMat u = CMat::Identity(rho_.rows(), rho_.cols());
    for (std::size_t i = from; i < to; ++i)
      if (ev[i].kind != PulseEvent::Kind::sample) u = event_propagator(ev[i]) * u;
    return u;
  }

  struct Diagonalized {
    CMat v;
    Eigen::VectorXd theta; // eigenphases
  };

  static Diagonalized diagonalize_unitary(const CMat& u) {
    Eigen::ComplexSchur<CMat> cs(u);
    if (cs.info() != Eigen::Success) throw NumericalError("Schur decomposition failed");
    const CMat& t = cs.matrixT();
    Diagonalized d{cs.matrixU(), Eigen::VectorXd(t.rows())};
    for (Eigen::Index i = 0; i < t.rows(); ++i) d.theta[i] = std::arg(t(i, i));
    return d;
  }

  // rho' o exp(i r (theta_a - theta_b)) in the eigenbasis
  static CMat phased(const CMat& rho_eig, const Eigen::VectorXd& theta, double r) {
    CMat m = rho_eig;
    for (Eigen::Index a = 0; a < m.rows(); ++a)
      for (Eigen::Index b = 0; b < m.cols(); ++b) m(a, b) *= std::polar(1.0, r * (theta[a] - theta[b]));
    return m;
  }

  void plain_block(const SequenceBlock& b) {
    const CMat u = product(b.events, 0, b.events.size());
    if (b.repeat == 1) {
      apply(u);
    } else {
      const Diagonalized d = diagonalize_unitary(u);
      rho_ = d.v * phased(d.v.adjoint() * rho_ * d.v, d.theta, static_cast<double>(b.repeat)) * d.v.adjoint();
    }
    t_ += b.duration() * static_cast<double>(b.repeat);
  }

  void sampled_block(const SequenceBlock& b) {
    // Split at samples: part_0 S part_1 S ... part_k
    std::vector<std::size_t> cuts;
    for (std::size_t i = 0; i < b.events.size(); ++i)
      if (b.events[i].kind == PulseEvent::Kind::sample) cuts.push_back(i);
    std::vector<CMat> obs; // Q_i^dagger I+ Q_i
    std::vector<double> offs;
    CMat q = CMat::Identity(rho_.rows(), rho_.cols());
    std::size_t from = 0;
    double tt = 0.0;
    for (std::size_t c : cuts) {
      q = product(b.events, from, c) * q;
      for (std::size_t i = from; i < c; ++i) tt += b.events[i].duration;
      obs.push_back(q.adjoint() * iplus_ * q);
      offs.push_back(tt);
      from = c;
    }
    const CMat u = product(b.events, from, b.events.size()) * q;
    const double unit = b.duration();

    if (b.repeat < 4) {
      for (std::uint64_t r = 0; r < b.repeat; ++r) {
        for (std::size_t i = 0; i < obs.size(); ++i) record(t_ + offs[i], (rho_.cwiseProduct(obs[i].transpose())).sum());
        apply(u);
        t_ += unit;
      }
      return;
    }

    const Diagonalized d = diagonalize_unitary(u);
    const CMat rho_eig = d.v.adjoint() * rho_ * d.v;
    std::vector<CMat> obs_t;
    for (const auto& o : obs) obs_t.push_back((d.v.adjoint() * o * d.v).transpose());
    const Eigen::Index dim = rho_eig.rows();
    CMat step(dim, dim);
    for (Eigen::Index a = 0; a < dim; ++a)
      for (Eigen::Index c = 0; c < dim; ++c) step(a, c) = std::polar(1.0, d.theta[a] - d.theta[c]);
    CMat m = rho_eig;
    const double t0 = t_;
    for (std::uint64_t r = 0; r < b.repeat; ++r) {
      if (r > 0) {
        if (r % opt_.resync_interval == 0)
          m = phased(rho_eig, d.theta, static_cast<double>(r));
        else
          m = m.cwiseProduct(step);
      }
      const double tr = t0 + static_cast<double>(r) * unit;
      for (std::size_t i = 0; i < obs_t.size(); ++i) record(tr + offs[i], m.cwiseProduct(obs_t[i]).sum());
    }
    rho_ = d.v * phased(rho_eig, d.theta, static_cast<double>(b.repeat)) * d.v.adjoint();
    t_ = t0 + unit * static_cast<double>(b.repeat);
  }

  // Noise active: the Hamiltonian is piecewise constant on the noise grid.
  // A repetition lying inside one grid step reuses that step's unit
  // propagators; otherwise its windows are split at grid boundaries.
  void noisy_block(const SequenceBlock& b) {
    const double dt = noise_->dt();
    const double unit = b.duration();
    std::uint64_t cached_step = UINT64_MAX;
    std::vector<CMat> parts; // propagator of events between samples
    std::vector<double> part_len;
    for (std::uint64_t r = 0; r < b.repeat; ++r) {
      const double grid_end = static_cast<double>(noise_->step_index() + 1) * dt;
      if (opt_.cache && t_ + unit < grid_end) {
        if (cached_step != noise_->step_index()) {
          parts.clear();
          part_len.clear();
          std::size_t from = 0;
          for (std::size_t i = 0; i <= b.events.size(); ++i)
            if (i == b.events.size() || b.events[i].kind == PulseEvent::Kind::sample) {
              parts.push_back(product(b.events, from, i));
              double len = 0.0;
              for (std::size_t k = from; k < i; ++k) len += b.events[k].duration;
              part_len.push_back(len);
              from = i + 1;
            }
          cached_step = noise_->step_index();
        }
        for (std::size_t p = 0; p < parts.size(); ++p) {
          apply(parts[p]);
          t_ += part_len[p];
          if (p + 1 < parts.size()) record(t_, measure());
        }
        continue;
      }
      for (const auto& e : b.events) {
        if (e.kind == PulseEvent::Kind::sample) {
          record(t_, measure());
          continue;
        }
        if (e.duration == 0.0) {
          apply(window_propagator(e, 0.0));
          continue;
        }
        double left = e.duration;
        while (left > 0.0) {
          const double edge = static_cast<double>(noise_->step_index() + 1) * dt;
          const double w = std::min(left, edge - t_);
          if (w > 0.0) {
            apply(window_propagator(e, w));
            t_ += w;
            left -= w;
          }
          if (t_ >= edge * (1.0 - 1e-15)) advance_noise();
        }
      }
      cached_step = UINT64_MAX;
    }
  }

  void advance_noise() {
    noise_->step();
    set_hamiltonian(noisy_h());
  }

  CMat h_;
  std::size_t n_;
  EvolveOptions opt_;
  CMat ix_, iy_, iplus_;
  std::vector<Eigen::VectorXd> iz_diag_;
  CMat cur_h_, evec_;
  Eigen::VectorXd eval_;
  std::map<Key, CMat> cache_;
  std::optional<NoiseProcess> noise_;
  CMat rho_;
  double t_ = 0.0;
  int segment_ = 0;
  bool seg_has_samples_ = false;
  EchoTrain train_;
};

} // namespace detail

inline EvolveResult evolve(const DeviationState& state, const PulseSequence& seq, const HermitianOperator& h_sys,
                           const EvolveOptions& opt = {}) {
  if (state.dim() != h_sys.dim()) throw DomainError("state and Hamiltonian dimensions differ");
  if (!h_sys.matrix().allFinite() || !state.matrix().allFinite()) throw NumericalError("non-finite input matrix");
  if (opt.noise.kind != NoiseModel::Kind::none) {
    opt.noise.validate();
    if (!(opt.dt_noise > 0.0)) throw DomainError("dt_noise must be positive when noise is active");
  }
  if (opt.resync_interval < 1) throw DomainError("resync_interval must be >= 1");
  detail::Evolver ev(h_sys.matrix(), h_sys.n_spins(), opt);
  EvolveResult r = ev.run(state, seq);
  r.train.provenance = {{"sequence", seq.metadata}, {"noise", to_json(opt.noise)}, {"dt_noise_s", opt.dt_noise},
                        {"n_spins", h_sys.n_spins()}};
  return r;
}

// Samples Tr(rho(t) I+) at t = 0, dt, ..., with no RF.
inline EchoTrain free_induction(const DeviationState& state, const HermitianOperator& h_sys, double duration,
                                double sample_dt, const EvolveOptions& opt = {}) {
  if (!(sample_dt > 0.0)) throw DomainError("sample_dt must be positive");
  if (!(duration >= sample_dt)) throw DomainError("duration must cover at least one sample interval");
  PulseSequence seq;
  seq.cycle = {PulseEvent::delay(sample_dt, "dt")};
  seq.cycle_time = sample_dt;
  const auto n = static_cast<std::uint64_t>(std::floor(duration / sample_dt * (1.0 + 1e-12)));
  seq.cycles = n;
  seq.blocks = {SequenceBlock{{PulseEvent::sample()}, 1},
                SequenceBlock{{PulseEvent::delay(sample_dt, "dt"), PulseEvent::sample()}, n}};
  seq.metadata = {{"builder", "free_induction"}, {"duration_s", duration}, {"sample_dt_s", sample_dt}};
  return evolve(state, seq, h_sys, opt).train;
}

// Everything that defines one disorder realization apart from its seed.
struct ExperimentParams {
  LatticeSpec lattice;
  std::size_t max_spins = 3;
  ClusterStrategy strategy = ClusterStrategy::central_nearest;
  bool interior_origin = true;
  Vec3 field_direction = Vec3::UnitZ();
  double gamma = constants::gamma_si29;
  double carrier_detuning_hz = 0.0;
  OffsetModel offsets;
  PulseSequence sequence;
  NoiseModel noise;
  double dt_noise = 0.0;
  double t1_s = 0.0;
  // Realizations whose cluster has fewer spins are recorded as failures.
  std::size_t min_spins = 1;
  // Fixed system used instead of the lattice; the offset model still applies.
  std::optional<SpinSystem> system;
};

struct Realization {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  SpinSystem system;
  EchoTrain train;
};

// The realization with seed `seed`: lattice, cluster origin, offsets and
// noise all draw from independent streams of that seed.
inline Realization run_realization(const ExperimentParams& p, std::uint64_t seed, std::size_t index = 0) {
  Realization r;
  r.index = index;
  r.seed = seed;
  try {
    if (p.system) {
      r.system = *p.system;
      Rng rng(stream_seed(seed, Stream::offsets));
      for (Eigen::Index j = 0; j < r.system.offsets.size(); ++j) {
        double delta_hz = 0.0;
        if (p.offsets.kind == OffsetModel::Kind::uniform) delta_hz = p.offsets.width_hz * (rng.uniform() - 0.5);
        if (p.offsets.kind == OffsetModel::Kind::gaussian) delta_hz = p.offsets.width_hz * rng.normal();
        r.system.offsets[j] += constants::two_pi * (p.carrier_detuning_hz + delta_hz);
      }
    } else {
    LatticeSpec spec = p.lattice;
    spec.seed = seed;
    const SiteSet sites = generate_sites(spec);
    ClusterOptions co;
    co.strategy = p.strategy;
    co.field_direction = p.field_direction;
    co.gamma = p.gamma;
    co.seed = seed;
    co.interior_origin = p.interior_origin;
    const SpinConfiguration cfg = select_cluster(sites, p.max_spins, co);
    if (cfg.positions_nm.size() < std::max<std::size_t>(1, p.min_spins))
      throw DomainError("cluster has " + std::to_string(cfg.positions_nm.size()) + " spins, fewer than required");
    OffsetModel om = p.offsets;
    om.seed = seed;
    r.system = build_spin_system(cfg, p.carrier_detuning_hz, om, p.gamma);
    }
    EvolveOptions eo;
    eo.noise = p.noise;
    eo.noise.seed = seed;
    eo.dt_noise = p.dt_noise;
    eo.t1_s = p.t1_s;
    r.train = evolve(thermal_state(r.system.n_spins), p.sequence, system_hamiltonian(r.system), eo).train;
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

struct DisorderResult {
  EchoTrain mean;
  // Per-sample variance of the realization signals, |z - mean|^2 averaged.
  std::vector<double> variance;
  std::vector<Realization> realizations;
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
};

struct DisorderOptions {
  std::size_t workers = 1;
  bool retain_trains = true;
};

// Realization k uses seed base_seed + k. Realizations run in chunks of
// `workers`; each chunk is merged in index order before the next starts, so
// the mean does not depend on the worker count and at most one chunk of
// trains is held in memory.
inline DisorderResult disorder_average(const ExperimentParams& p, std::size_t n_realizations, std::uint64_t base_seed,
                                       const DisorderOptions& opt = {}) {
  if (n_realizations < 1) throw DomainError("n_realizations must be >= 1");
  const std::size_t nw = std::max<std::size_t>(1, std::min(opt.workers, n_realizations));

  DisorderResult out;
  std::vector<cplx> sum;
  std::vector<double> sum_sq;
  auto merge = [&](Realization& r) {
    if (!r.ok) {
      ++out.n_failed;
      out.realizations.push_back(std::move(r));
      return;
    }
    if (out.n_ok == 0) {
      out.mean.times = r.train.times;
      out.mean.segment = r.train.segment;
      out.mean.provenance = r.train.provenance;
      sum.assign(r.train.size(), cplx(0.0));
      sum_sq.assign(r.train.size(), 0.0);
    } else if (r.train.size() != sum.size()) {
      r.ok = false;
      r.error = "train length differs from the first realization";
      ++out.n_failed;
      out.realizations.push_back(std::move(r));
      return;
    }
    for (std::size_t i = 0; i < sum.size(); ++i) {
      sum[i] += r.train.values[i];
      sum_sq[i] += std::norm(r.train.values[i]);
    }
    ++out.n_ok;
    if (!opt.retain_trains) r.train = EchoTrain{};
    out.realizations.push_back(std::move(r));
  };

  std::vector<Realization> slots(nw);
  for (std::size_t first = 0; first < n_realizations; first += nw) {
    const std::size_t count = std::min(nw, n_realizations - first);
    if (count == 1) {
      slots[0] = run_realization(p, base_seed + first, first);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < count; ++w)
        pool.emplace_back([&, w] { slots[w] = run_realization(p, base_seed + first + w, first + w); });
      for (auto& t : pool) t.join();
    }
    for (std::size_t w = 0; w < count; ++w) merge(slots[w]);
  }
  if (out.n_ok == 0) throw NumericalError("all " + std::to_string(n_realizations) + " realizations failed");
  const double m = static_cast<double>(out.n_ok);
  out.mean.values.resize(sum.size());
  out.variance.resize(sum.size());
  for (std::size_t i = 0; i < sum.size(); ++i) {
    out.mean.values[i] = sum[i] / m;
    out.variance[i] = std::max(0.0, sum_sq[i] / m - std::norm(out.mean.values[i]));
  }
  out.mean.provenance["n_realizations"] = n_realizations;
  out.mean.provenance["n_ok"] = out.n_ok;
  out.mean.provenance["n_failed"] = out.n_failed;
  out.mean.provenance["base_seed"] = base_seed;
  return out;
}

} // namespace spinlab
