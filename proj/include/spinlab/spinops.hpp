#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "spinlab/errors.hpp"
#include "spinlab/lattice.hpp"

namespace spinlab {

using cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

inline constexpr std::size_t default_spin_cap = 14;

enum class Axis { x, y, z };

inline void check_spin_cap(std::size_t n_spins, std::size_t cap = default_spin_cap) {
  if (n_spins > cap) {
    const double bytes = std::ldexp(16.0, static_cast<int>(2 * n_spins));
    throw ResourceError("n_spins = " + std::to_string(n_spins) + " exceeds the cap of " + std::to_string(cap) +
                        "; one dense 2^N x 2^N complex matrix would need " + std::to_string(bytes / 1e9) + " GB");
  }
}

inline bool is_hermitian(const CMat& m, double rel_tol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(m.norm(), 1.0);
  return (m - m.adjoint()).norm() <= rel_tol * scale;
}

// Dense Hermitian matrix on the 2^N product space. Basis state index bits
// run from spin 0 in the most significant position (I_0 ⊗ I_1 ⊗ ...), a zero
// bit meaning m = +1/2.
class HermitianOperator {
public:
  HermitianOperator() = default;
  explicit HermitianOperator(CMat m) : m_(std::move(m)) {
    const auto d = static_cast<std::size_t>(m_.rows());
    if (d == 0 || (d & (d - 1)) != 0 || m_.cols() != m_.rows())
      throw DomainError("operator dimension must be a power of two");
    if (!m_.allFinite()) throw NumericalError("operator has non-finite entries");
    if (!is_hermitian(m_)) throw DomainError("operator is not Hermitian");
  }

  [[nodiscard]] const CMat& matrix() const { return m_; }
  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(m_.rows()); }
  [[nodiscard]] std::size_t n_spins() const {
    std::size_t n = 0;
    while ((std::size_t{1} << n) < dim()) ++n;
    return n;
  }

  HermitianOperator operator+(const HermitianOperator& o) const { return HermitianOperator(m_ + o.m_); }
  HermitianOperator operator-(const HermitianOperator& o) const { return HermitianOperator(m_ - o.m_); }
  HermitianOperator operator*(double s) const { return HermitianOperator(m_ * s); }

private:
  CMat m_;
};

// Traceless Hermitian deviation density matrix.
class DeviationState {
public:
  DeviationState() = default;
  explicit DeviationState(CMat m) : m_(std::move(m)) {
    if (!m_.allFinite()) throw NumericalError("state has non-finite entries");
    if (!is_hermitian(m_, 1e-10)) throw DomainError("state is not Hermitian");
    if (std::abs(m_.trace()) > 1e-12 * std::max(1.0, m_.norm())) throw DomainError("deviation state must be traceless");
  }

  [[nodiscard]] const CMat& matrix() const { return m_; }
  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(m_.rows()); }

  // U rho U^dagger
  [[nodiscard]] DeviationState conjugated(const CMat& u) const {
    DeviationState s;
    s.m_ = u * m_ * u.adjoint();
    return s;
  }

private:
  CMat m_;
};

namespace detail {

inline std::size_t bit_of(std::size_t n_spins, std::size_t j) { return std::size_t{1} << (n_spins - 1 - j); }

inline double m_value(std::size_t state, std::size_t bit) { return (state & bit) ? -0.5 : 0.5; }

} // namespace detail

inline CMat spin_component_matrix(std::size_t n_spins, std::size_t j, Axis axis) {
  const std::size_t dim = std::size_t{1} << n_spins;
  const std::size_t bit = detail::bit_of(n_spins, j);
  CMat m = CMat::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t a = 0; a < dim; ++a) {
    const auto ia = static_cast<Eigen::Index>(a);
    const auto ib = static_cast<Eigen::Index>(a ^ bit);
    switch (axis) {
    case Axis::z: m(ia, ia) = detail::m_value(a, bit); break;
    case Axis::x: m(ia, ib) = 0.5; break;
    // <up|Iy|down> = -i/2
    case Axis::y: m(ia, ib) = (a & bit) ? cplx(0.0, 0.5) : cplx(0.0, -0.5); break;
    }
  }
  return m;
}

inline HermitianOperator spin_component(std::size_t n_spins, std::size_t j, Axis axis,
                                        std::size_t cap = default_spin_cap) {
  check_spin_cap(n_spins, cap);
  if (n_spins < 1 || j >= n_spins) throw DomainError("spin index out of range");
  return HermitianOperator(spin_component_matrix(n_spins, j, axis));
}

inline CMat total_spin_matrix(std::size_t n_spins, Axis axis) {
  const auto dim = static_cast<Eigen::Index>(std::size_t{1} << n_spins);
  CMat m = CMat::Zero(dim, dim);
  for (std::size_t j = 0; j < n_spins; ++j) m += spin_component_matrix(n_spins, j, axis);
  return m;
}

// Sum_j I+_j
inline CMat raising_matrix(std::size_t n_spins) {
  return total_spin_matrix(n_spins, Axis::x) + cplx(0.0, 1.0) * total_spin_matrix(n_spins, Axis::y);
}

// H = -sum_j w_j Iz_j - sum_{j<k} d_jk [I_j.I_k - 3 Iz_j Iz_k]
//   = -sum_j w_j Iz_j + sum_{j<k} d_jk [2 Iz_j Iz_k - (I+_j I-_k + I-_j I+_k)/2]
inline CMat system_hamiltonian_matrix(const SpinSystem& sys) {
  const std::size_t n = sys.n_spins;
  const std::size_t dim = std::size_t{1} << n;
  CMat h = CMat::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t a = 0; a < dim; ++a) {
    double diag = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t bj = detail::bit_of(n, j);
      const double mj = detail::m_value(a, bj);
      diag -= sys.offsets[static_cast<Eigen::Index>(j)] * mj;
      for (std::size_t k = j + 1; k < n; ++k) {
        const std::size_t bk = detail::bit_of(n, k);
        const double d = sys.couplings(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
        diag += 2.0 * d * mj * detail::m_value(a, bk);
        // flip-flop connects antiparallel pairs only
        if (((a & bj) != 0) != ((a & bk) != 0))
          h(static_cast<Eigen::Index>(a ^ bj ^ bk), static_cast<Eigen::Index>(a)) -= 0.5 * d;
      }
    }
    h(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)) += diag;
  }
  return h;
}

inline HermitianOperator system_hamiltonian(const SpinSystem& sys, std::size_t cap = default_spin_cap) {
  sys.validate();
  check_spin_cap(sys.n_spins, cap);
  return HermitianOperator(system_hamiltonian_matrix(sys));
}

// Generator of the global rotation exp(-i theta (cos(phi) Ix + sin(phi) Iy))
// when applied for a time theta / rabi.
inline CMat rf_hamiltonian_matrix(std::size_t n_spins, double rabi, double phase) {
  return rabi * (std::cos(phase) * total_spin_matrix(n_spins, Axis::x) +
                 std::sin(phase) * total_spin_matrix(n_spins, Axis::y));
}

inline HermitianOperator rf_hamiltonian(std::size_t n_spins, double rabi, double phase,
                                        std::size_t cap = default_spin_cap) {
  check_spin_cap(n_spins, cap);
  if (!(rabi >= 0.0)) throw DomainError("Rabi frequency must be nonnegative");
  return HermitianOperator(rf_hamiltonian_matrix(n_spins, rabi, phase));
}

// Exact global rotation, built as a Kronecker power of the 2x2 rotation.
inline CMat rotation_matrix(std::size_t n_spins, double angle, double phase) {
  const double c = std::cos(0.5 * angle);
  const double s = std::sin(0.5 * angle);
  Eigen::Matrix2cd r;
  // cos(a/2) 1 - i sin(a/2) (cos(phi) sx + sin(phi) sy)
  r << c, cplx(0.0, -s) * std::polar(1.0, -phase), cplx(0.0, -s) * std::polar(1.0, phase), c;
  CMat u = CMat::Identity(1, 1);
  for (std::size_t j = 0; j < n_spins; ++j) {
    CMat next(u.rows() * 2, u.cols() * 2);
    for (Eigen::Index a = 0; a < u.rows(); ++a)
      for (Eigen::Index b = 0; b < u.cols(); ++b) next.block<2, 2>(2 * a, 2 * b) = u(a, b) * r;
    u = std::move(next);
  }
  return u;
}

// exp(-i H t) for Hermitian H.
inline CMat propagator(const CMat& h, double t) {
  Eigen::SelfAdjointEigenSolver<CMat> es(h);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  const Eigen::VectorXd& ev = es.eigenvalues();
  CVec phases(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) phases[i] = std::polar(1.0, -ev[i] * t);
  return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

// rho = 4/(N 2^N) sum_j Iz_j, so an ideal pi/2 pulse yields |Tr(rho sum I+)| = 1.
inline DeviationState thermal_state(std::size_t n_spins, std::size_t cap = default_spin_cap) {
  check_spin_cap(n_spins, cap);
  if (n_spins < 1) throw DomainError("thermal_state needs at least one spin");
  const double c = 4.0 / (static_cast<double>(n_spins) * std::ldexp(1.0, static_cast<int>(n_spins)));
  return DeviationState(c * total_spin_matrix(n_spins, Axis::z));
}

// Tr(rho sum_j I+_j). Only the entries rho(b, a) with a = b with one spin
// raised contribute, so this avoids forming I+.
inline cplx transverse_magnetization(const CMat& rho, std::size_t n_spins) {
  const std::size_t dim = std::size_t{1} << n_spins;
  cplx acc = 0.0;
  for (std::size_t j = 0; j < n_spins; ++j) {
    const std::size_t bit = detail::bit_of(n_spins, j);
    // (I+)_{up, down} = 1, i.e. row without bit, column with bit
    for (std::size_t a = 0; a < dim; ++a)
      if (a & bit) acc += rho(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a ^ bit));
  }
  return acc;
}

inline cplx measure_transverse(const DeviationState& state) {
  std::size_t n = 0;
  while ((std::size_t{1} << n) < state.dim()) ++n;
  return transverse_magnetization(state.matrix(), n);
}

inline CMat commutator(const CMat& a, const CMat& b) { return a * b - b * a; }

} // namespace spinlab
