#include <gtest/gtest.h>

#include "spinlab/spinops.hpp"

using namespace spinlab;

namespace {

const cplx I(0.0, 1.0);

CMat kron(const CMat& a, const CMat& b) {
  CMat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Single-spin operator embedded by explicit tensor products, spin 0 leftmost.
CMat embed(const CMat& op, std::size_t n, std::size_t j) {
  CMat out = CMat::Identity(1, 1);
  for (std::size_t k = 0; k < n; ++k) out = kron(out, k == j ? op : CMat(CMat::Identity(2, 2)));
  return out;
}

CMat pauli(char c) {
  CMat m(2, 2);
  if (c == 'x') m << 0, 1, 1, 0;
  if (c == 'y') m << 0, -I, I, 0;
  if (c == 'z') m << 1, 0, 0, -1;
  return 0.5 * m;
}

SpinSystem random_system(std::size_t n, unsigned seed) {
  Rng rng(seed);
  Eigen::VectorXd w(static_cast<Eigen::Index>(n));
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = rng.uniform(-1000, 1000);
  for (Eigen::Index j = 0; j < w.size(); ++j)
    for (Eigen::Index k = j + 1; k < w.size(); ++k) d(j, k) = d(k, j) = rng.uniform(-500, 500);
  return SpinSystem::from_parameters(w, d);
}

} // namespace

TEST(SpinOps, ComponentsMatchTensorProducts) {
  for (std::size_t n = 1; n <= 4; ++n)
    for (std::size_t j = 0; j < n; ++j) {
      EXPECT_LT((spin_component_matrix(n, j, Axis::x) - embed(pauli('x'), n, j)).norm(), 1e-15);
      EXPECT_LT((spin_component_matrix(n, j, Axis::y) - embed(pauli('y'), n, j)).norm(), 1e-15);
      EXPECT_LT((spin_component_matrix(n, j, Axis::z) - embed(pauli('z'), n, j)).norm(), 1e-15);
    }
}

TEST(SpinOps, AngularMomentumAlgebra) {
  const std::size_t n = 3;
  for (std::size_t j = 0; j < n; ++j) {
    const CMat x = spin_component_matrix(n, j, Axis::x);
    const CMat y = spin_component_matrix(n, j, Axis::y);
    const CMat z = spin_component_matrix(n, j, Axis::z);
    EXPECT_LT((commutator(x, y) - I * z).norm(), 1e-14);
    EXPECT_LT((commutator(y, z) - I * x).norm(), 1e-14);
    EXPECT_LT((x * x + y * y + z * z - 0.75 * CMat::Identity(8, 8)).norm(), 1e-14);
    for (std::size_t k = 0; k < n; ++k)
      if (k != j) EXPECT_LT(commutator(x, spin_component_matrix(n, k, Axis::y)).norm(), 1e-15);
  }
}

TEST(SpinOps, HamiltonianMatchesTensorConstruction) {
  for (std::size_t n = 1; n <= 4; ++n) {
    const SpinSystem sys = random_system(n, 11 + static_cast<unsigned>(n));
    const auto dim = static_cast<Eigen::Index>(1u << n);
    CMat h = CMat::Zero(dim, dim);
    for (std::size_t j = 0; j < n; ++j) h -= sys.offsets[static_cast<Eigen::Index>(j)] * embed(pauli('z'), n, j);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = j + 1; k < n; ++k) {
        CMat dot = CMat::Zero(dim, dim);
        for (char c : {'x', 'y', 'z'}) dot += embed(pauli(c), n, j) * embed(pauli(c), n, k);
        const CMat zz = embed(pauli('z'), n, j) * embed(pauli('z'), n, k);
        h -= sys.couplings(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) * (dot - 3.0 * zz);
      }
    EXPECT_LT((system_hamiltonian(sys).matrix() - h).norm(), 1e-10 * h.norm()) << "n = " << n;
  }
}

TEST(SpinOps, SecularHamiltonianConservesTotalIz) {
  const SpinSystem sys = random_system(4, 3);
  EXPECT_LT(commutator(system_hamiltonian(sys).matrix(), total_spin_matrix(4, Axis::z)).norm(), 1e-10);
}

TEST(SpinOps, RotationMatchesRfPropagator) {
  for (double phase : {0.0, 0.7, constants::pi / 2, 4.0}) {
    const double angle = 1.3;
    const double rabi = 2.0e5;
    const CMat u = propagator(rf_hamiltonian(3, rabi, phase).matrix(), angle / rabi);
    EXPECT_LT((rotation_matrix(3, angle, phase) - u).norm(), 1e-12);
  }
}

TEST(SpinOps, PropagatorIsUnitaryAndComposes) {
  const CMat h = system_hamiltonian(random_system(3, 5)).matrix();
  const CMat u = propagator(h, 1e-3);
  EXPECT_LT((u.adjoint() * u - CMat::Identity(8, 8)).norm(), 1e-13);
  EXPECT_LT((propagator(h, 2e-3) - u * u).norm(), 1e-12);
}

TEST(SpinOps, ThermalStateGivesUnitSignalAfterPiOver2) {
  for (std::size_t n = 1; n <= 5; ++n) {
    const DeviationState rho = thermal_state(n);
    EXPECT_NEAR(std::abs(rho.matrix().trace()), 0.0, 1e-15);
    const DeviationState after = rho.conjugated(rotation_matrix(n, constants::pi / 2, 0.0));
    EXPECT_NEAR(std::abs(measure_transverse(after)), 1.0, 1e-13);
    // x pulse turns z into -y: Tr(-c Iy I+) is -i
    EXPECT_NEAR(measure_transverse(after).imag(), -1.0, 1e-13);
  }
}

TEST(SpinOps, TransverseMagnetizationIsTraceWithRaising) {
  const CMat h = system_hamiltonian(random_system(3, 8)).matrix();
  const DeviationState rho = thermal_state(3).conjugated(rotation_matrix(3, 0.9, 0.4)).conjugated(propagator(h, 3e-3));
  const cplx direct = (rho.matrix() * raising_matrix(3)).trace();
  EXPECT_LT(std::abs(measure_transverse(rho) - direct), 1e-14);
}

TEST(SpinOps, SpinCapRaisesResourceError) {
  EXPECT_THROW(thermal_state(15), ResourceError);
  EXPECT_THROW(spin_component(6, 0, Axis::x, 5), ResourceError);
  EXPECT_NO_THROW(check_spin_cap(14));
}

TEST(SpinOps, OperatorValidation) {
  EXPECT_THROW(HermitianOperator(CMat::Identity(3, 3)), DomainError);
  CMat m = CMat::Zero(2, 2);
  m(0, 1) = 1.0;
  EXPECT_THROW(HermitianOperator{m}, DomainError);
  EXPECT_THROW(DeviationState(CMat::Identity(2, 2)), DomainError);
  EXPECT_THROW(spin_component(2, 2, Axis::x), DomainError);
}
