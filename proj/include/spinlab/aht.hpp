#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "spinlab/errors.hpp"
#include "spinlab/lattice.hpp"
#include "spinlab/sequences.hpp"
#include "spinlab/spinops.hpp"

namespace spinlab {

struct TogglingFrame {
  struct Window {
    double duration = 0.0;
    CMat frame;   // P_k, product of all preceding pulse rotations
    CMat toggled; // P_k^dagger H P_k
  };
  std::vector<Window> windows;
  double cycle_time = 0.0;
  std::size_t n_spins = 0;
};

// Net rotation angle of the single-spin product of all pulses of one cycle.
inline double residual_rotation_angle(const std::vector<PulseEvent>& cycle) {
  CMat p = CMat::Identity(2, 2);
  for (const auto& e : cycle)
    if (e.kind == PulseEvent::Kind::pulse) p = rotation_matrix(1, e.actual_angle(), e.phase) * p;
  // p = e^{i a} (cos(theta/2) 1 - i sin(theta/2) n.sigma)
  const cplx half_trace = p.trace() / 2.0;
  const double s = (p - half_trace * CMat::Identity(2, 2)).norm() / std::sqrt(2.0);
  return 2.0 * std::atan2(s, std::abs(half_trace));
}

inline TogglingFrame toggling_frame(const PulseSequence& seq, const HermitianOperator& h_sys,
                                    double cyclic_tol = 1e-9) {
  for (const auto& e : seq.cycle)
    if (e.kind == PulseEvent::Kind::pulse && e.duration != 0.0)
      throw DomainError("toggling_frame supports delta pulses only");
  const double residual = residual_rotation_angle(seq.cycle);
  if (residual > cyclic_tol)
    throw DomainError("sequence is not cyclic: residual rotation angle " + std::to_string(residual) + " rad");
  TogglingFrame f;
  f.n_spins = h_sys.n_spins();
  const CMat& h = h_sys.matrix();
  CMat p = CMat::Identity(h.rows(), h.cols());
  for (const auto& e : seq.cycle) {
    if (e.kind == PulseEvent::Kind::pulse) {
      p = rotation_matrix(f.n_spins, e.actual_angle(), e.phase) * p;
    } else if (e.kind == PulseEvent::Kind::delay && e.duration > 0.0) {
      f.windows.push_back({e.duration, p, p.adjoint() * h * p});
      f.cycle_time += e.duration;
    }
  }
  return f;
}

// order 0: sum_k t_k H_k / T
// order 1: -i / (2T) sum_{k > l} t_k t_l [H_k, H_l]
inline HermitianOperator magnus_term(const TogglingFrame& f, int order) {
  if (f.windows.empty()) throw DomainError("toggling frame has no windows");
  const Eigen::Index dim = f.windows.front().toggled.rows();
  CMat m = CMat::Zero(dim, dim);
  if (order == 0) {
    for (const auto& w : f.windows) m += w.duration * w.toggled;
    m /= f.cycle_time;
  } else if (order == 1) {
    CMat prefix = CMat::Zero(dim, dim); // sum_{l < k} t_l H_l
    for (const auto& w : f.windows) {
      m += w.duration * commutator(w.toggled, prefix);
      prefix += w.duration * w.toggled;
    }
    m *= cplx(0.0, -0.5 / f.cycle_time);
  } else {
    throw DomainError("magnus_term supports orders 0 and 1");
  }
  // remove rounding-level anti-Hermitian residue
  return HermitianOperator(0.5 * (m + m.adjoint()));
}

inline HermitianOperator average_hamiltonian(const PulseSequence& seq, const SpinSystem& sys, int order) {
  return magnus_term(toggling_frame(seq, system_hamiltonian(sys)), order);
}

struct DecouplingReport {
  int order = 0;
  double full_norm = 0.0;
  double offset_norm = 0.0;  // sys with couplings zeroed
  double dipolar_norm = 0.0; // sys with offsets zeroed
  double cross_norm = 0.0;   // full - offset - dipolar
};

inline SpinSystem without_couplings(const SpinSystem& s) {
  SpinSystem o = s;
  o.couplings.setZero();
  return o;
}

inline SpinSystem without_offsets(const SpinSystem& s) {
  SpinSystem o = s;
  o.offsets.setZero();
  return o;
}

inline DecouplingReport verify_decoupling(const PulseSequence& seq, const SpinSystem& sys, int order) {
  const CMat full = average_hamiltonian(seq, sys, order).matrix();
  const CMat off = average_hamiltonian(seq, without_couplings(sys), order).matrix();
  const CMat dip = average_hamiltonian(seq, without_offsets(sys), order).matrix();
  DecouplingReport r;
  r.order = order;
  r.full_norm = full.norm();
  r.offset_norm = off.norm();
  r.dipolar_norm = dip.norm();
  r.cross_norm = (full - off - dip).norm();
  return r;
}

// Exact one-cycle propagator, finite pulses included.
inline CMat cycle_propagator(const PulseSequence& seq, const HermitianOperator& h_sys) {
  const std::size_t n = h_sys.n_spins();
  const CMat& h = h_sys.matrix();
  const CMat ix = total_spin_matrix(n, Axis::x);
  const CMat iy = total_spin_matrix(n, Axis::y);
  CMat u = CMat::Identity(h.rows(), h.cols());
  for (const auto& e : seq.cycle) {
    if (e.kind == PulseEvent::Kind::sample) continue;
    if (e.kind == PulseEvent::Kind::delay) {
      u = propagator(h, e.duration) * u;
    } else if (e.duration == 0.0) {
      u = rotation_matrix(n, e.actual_angle(), e.phase) * u;
    } else {
      const double rabi = e.actual_angle() / e.duration;
      u = propagator(h + rabi * (std::cos(e.phase) * ix + std::sin(e.phase) * iy), e.duration) * u;
    }
  }
  return u;
}

enum class CycleErrorReference {
  // ||U(w, d) - exp(-i H0 tc)||
  zeroth_order,
  // ||U(w, d) - U(w, 0) exp(-i H0_dip tc)||: the part of the cycle error
  // caused by the couplings, with the pure-offset evolution as reference.
  offset_referenced,
};

struct CycleErrorPoint {
  double cycle_time = 0.0;
  double error = 0.0;
};

struct CycleErrorScaling {
  std::vector<CycleErrorPoint> points;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double slope_sigma = std::numeric_limits<double>::quiet_NaN();
  bool exact = false; // every error below 1e-12
};

// Least-squares slope of log(y) on log(x) with its standard error.
inline std::pair<double, double> loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw DomainError("loglog_slope needs at least two paired points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) throw DomainError("loglog_slope needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(y[i]) - my);
  }
  if (!(sxx > 0.0)) throw DomainError("loglog_slope: degenerate abscissa");
  const double b = sxy / sxx;
  double sse = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::log(y[i]) - (my + b * (std::log(x[i]) - mx));
    sse += r * r;
  }
  const double sigma = n > 2 ? std::sqrt(sse / static_cast<double>(n - 2) / sxx) : 0.0;
  return {b, sigma};
}

inline CycleErrorScaling cycle_error_scaling(const std::function<PulseSequence(double)>& family,
                                             const SpinSystem& sys, const std::vector<double>& cycle_times,
                                             CycleErrorReference ref = CycleErrorReference::zeroth_order) {
  if (cycle_times.size() < 4) throw DomainError("cycle_error_scaling needs at least 4 cycle times");
  const auto [lo, hi] = std::minmax_element(cycle_times.begin(), cycle_times.end());
  if (!(*lo > 0.0) || *hi / *lo < 10.0 * (1.0 - 1e-12))
    throw DomainError("cycle times must be positive and span at least one decade");
  const HermitianOperator h = system_hamiltonian(sys);
  const HermitianOperator h_off = system_hamiltonian(without_couplings(sys));
  CycleErrorScaling out;
  std::vector<double> xs, ys;
  for (double tc : cycle_times) {
    const PulseSequence seq = family(tc);
    const CMat u = cycle_propagator(seq, h);
    double err = 0.0;
    if (ref == CycleErrorReference::zeroth_order) {
      const CMat h0 = magnus_term(toggling_frame(seq, h), 0).matrix();
      err = (u - propagator(h0, seq.cycle_time)).norm();
    } else {
      const CMat h0_dip = magnus_term(toggling_frame(seq, system_hamiltonian(without_offsets(sys))), 0).matrix();
      err = (u - cycle_propagator(seq, h_off) * propagator(h0_dip, seq.cycle_time)).norm();
    }
    out.points.push_back({seq.cycle_time, err});
    if (err > 1e-12) {
      xs.push_back(seq.cycle_time);
      ys.push_back(err);
    }
  }
  out.exact = xs.empty();
  if (xs.size() >= 2) std::tie(out.slope, out.slope_sigma) = loglog_slope(xs, ys);
  return out;
}

} // namespace spinlab
