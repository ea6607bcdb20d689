#include <gtest/gtest.h>

#include <cmath>

#include "spinlab/lattice.hpp"

using namespace spinlab;

namespace {

double min_distance(const std::vector<Vec3>& p) {
  double best = INFINITY;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j) best = std::min(best, (p[i] - p[j]).norm());
  return best;
}

// d / 2pi in Hz from h (gamma/2pi)^2, evaluated without hbar or rad/s.
double coupling_hz_oracle(double r_nm, double cos_theta) {
  const double h = 6.62607015e-34;
  const double g = 8.465e6; // Hz/T
  const double r = r_nm * 1e-9;
  return 1.00000000055e-7 * h * g * g / (r * r * r) * (1.0 - 3.0 * cos_theta * cos_theta) / 2.0;
}

} // namespace

TEST(Lattice, FullOccupationHasEightSitesPerCell) {
  LatticeSpec s;
  s.abundance = 1.0;
  s.supercell = {2, 3, 1};
  EXPECT_EQ(generate_sites(s).size(), 8u * 6u);
}

TEST(Lattice, NearestNeighbourDistanceIsQuarterBodyDiagonal) {
  LatticeSpec s;
  s.abundance = 1.0;
  s.supercell = {2, 2, 2};
  const SiteSet sites = generate_sites(s);
  EXPECT_NEAR(min_distance(sites.positions_nm), s.lattice_constant_nm * std::sqrt(3.0) / 4.0, 1e-12);
}

TEST(Lattice, OccupationFractionMatchesAbundance) {
  LatticeSpec s;
  s.abundance = 0.3;
  s.supercell = {8, 8, 8};
  s.seed = 17;
  const double n = 8.0 * 512.0;
  const double got = static_cast<double>(generate_sites(s).size());
  EXPECT_NEAR(got / n, 0.3, 4.0 * std::sqrt(0.3 * 0.7 / n));
}

TEST(Lattice, SameSeedSameSites) {
  LatticeSpec s;
  s.abundance = 0.2;
  s.supercell = {3, 3, 3};
  s.seed = 5;
  const auto a = generate_sites(s);
  const auto b = generate_sites(s);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.positions_nm[i], b.positions_nm[i]);
  s.seed = 6;
  const auto c = generate_sites(s);
  bool differs = c.size() != a.size();
  for (std::size_t i = 0; !differs && i < a.size(); ++i) differs = a.positions_nm[i] != c.positions_nm[i];
  EXPECT_TRUE(differs);
}

TEST(Lattice, InvalidSpecRejected) {
  LatticeSpec s;
  s.abundance = 1.5;
  EXPECT_THROW(generate_sites(s), DomainError);
  s.abundance = 0.1;
  s.supercell = {0, 1, 1};
  EXPECT_THROW(generate_sites(s), DomainError);
}

TEST(Coupling, MatchesHertzOracle) {
  const Vec3 z = Vec3::UnitZ();
  for (double r : {0.2352, 0.384, 1.1}) {
    for (const Vec3& dir : {Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(1, 1, 1).normalized(), Vec3(0.3, -0.2, 0.9).normalized()}) {
      const double d = dipolar_coupling(r * dir, Vec3::Zero(), z);
      const double want = constants::two_pi * coupling_hz_oracle(r, dir.z());
      // hbar is tabulated to 10 digits, h is exact
      EXPECT_NEAR(d, want, 1e-8 * std::abs(want) + 1e-9);
    }
  }
}

TEST(Coupling, AngularAndDistanceDependence) {
  const Vec3 z = Vec3::UnitZ();
  const double par = dipolar_coupling(Vec3(0, 0, 0.5), Vec3::Zero(), z);
  const double perp = dipolar_coupling(Vec3(0.5, 0, 0), Vec3::Zero(), z);
  EXPECT_NEAR(perp, -0.5 * par, 1e-12 * std::abs(par));
  const double far = dipolar_coupling(Vec3(0, 0, 1.0), Vec3::Zero(), z);
  EXPECT_NEAR(far, par / 8.0, 1e-12 * std::abs(par));
  // symmetric in the pair
  EXPECT_EQ(dipolar_coupling(Vec3(0.1, 0.2, 0.3), Vec3(-0.4, 0, 0.1), z),
            dipolar_coupling(Vec3(-0.4, 0, 0.1), Vec3(0.1, 0.2, 0.3), z));
}

TEST(Coupling, BondsAlong111VanishForFieldAlong001) {
  const double a = constants::si_lattice_constant_nm;
  const double d = dipolar_coupling(Vec3(a / 4, a / 4, a / 4), Vec3::Zero(), Vec3::UnitZ());
  const double scale = std::abs(dipolar_coupling(Vec3(0, 0, a / 4 * std::sqrt(3.0)), Vec3::Zero(), Vec3::UnitZ()));
  EXPECT_LT(std::abs(d), 1e-14 * scale);
}

TEST(Coupling, CoincidentPositionsRejected) {
  EXPECT_THROW(dipolar_coupling(Vec3(1, 2, 3), Vec3(1, 2, 3), Vec3::UnitZ()), DomainError);
}

TEST(Cluster, CentralNearestOrdersByDistance) {
  LatticeSpec s;
  s.abundance = 0.3;
  s.supercell = {4, 4, 4};
  s.seed = 3;
  const SiteSet sites = generate_sites(s);
  ClusterOptions o;
  o.seed = 9;
  const SpinConfiguration c = select_cluster(sites, 6, o);
  ASSERT_EQ(c.positions_nm.size(), 6u);
  ASSERT_TRUE(c.origin_site_index.has_value());
  EXPECT_EQ(c.positions_nm[0], sites.positions_nm[*c.origin_site_index]);
  for (std::size_t i = 2; i < c.positions_nm.size(); ++i)
    EXPECT_LE((c.positions_nm[i - 1] - c.positions_nm[0]).norm(), (c.positions_nm[i] - c.positions_nm[0]).norm());
  // nothing outside the cluster is closer than its farthest member
  const double r_max = (c.positions_nm.back() - c.positions_nm[0]).norm();
  std::size_t closer = 0;
  for (const Vec3& p : sites.positions_nm)
    if ((p - c.positions_nm[0]).norm() < r_max - 1e-12) ++closer;
  EXPECT_LE(closer, 5u); // origin plus at most four inner members
}

TEST(Cluster, StrongestCoupledOrdersByCouplingMagnitude) {
  LatticeSpec s;
  s.abundance = 0.2;
  s.supercell = {4, 4, 4};
  s.seed = 4;
  const SiteSet sites = generate_sites(s);
  ClusterOptions o;
  o.strategy = ClusterStrategy::strongest_coupled;
  o.origin = 0;
  const SpinConfiguration c = select_cluster(sites, 5, o);
  ASSERT_EQ(c.positions_nm.size(), 5u);
  for (std::size_t i = 2; i < c.positions_nm.size(); ++i)
    EXPECT_GE(std::abs(dipolar_coupling(c.positions_nm[i - 1], c.positions_nm[0], Vec3::UnitZ())),
              std::abs(dipolar_coupling(c.positions_nm[i], c.positions_nm[0], Vec3::UnitZ())));
}

TEST(Cluster, UndersizedIsFlagged) {
  LatticeSpec s;
  s.abundance = 1.0;
  const SiteSet sites = generate_sites(s);
  const SpinConfiguration c = select_cluster(sites, 20);
  EXPECT_EQ(c.positions_nm.size(), 8u);
  EXPECT_TRUE(c.metadata.undersized);
  EXPECT_THROW(select_cluster(sites, 0), DomainError);
  s.abundance = 0.0;
  EXPECT_TRUE(select_cluster(generate_sites(s), 3).metadata.undersized);
}

TEST(SpinSystemBuild, OffsetsAndCouplings) {
  SpinConfiguration c;
  c.positions_nm = {Vec3(0, 0, 0), Vec3(0, 0, 0.3), Vec3(0.4, 0, 0)};
  const SpinSystem sys = build_spin_system(c, 120.0);
  ASSERT_EQ(sys.n_spins, 3u);
  for (Eigen::Index j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(sys.offsets[j], constants::two_pi * 120.0);
  EXPECT_NEAR(sys.couplings(0, 1), constants::two_pi * coupling_hz_oracle(0.3, 1.0), 1e-8 * std::abs(sys.couplings(0, 1)));
  EXPECT_NEAR(sys.couplings(2, 0), constants::two_pi * coupling_hz_oracle(0.4, 0.0), 1e-8 * std::abs(sys.couplings(2, 0)));
  EXPECT_EQ(sys.couplings(1, 2), sys.couplings(2, 1));
  EXPECT_EQ(sys.couplings(1, 1), 0.0);
}

TEST(SpinSystemBuild, GaussianInhomogeneityHasRequestedWidth) {
  SpinConfiguration c;
  for (int i = 0; i < 1500; ++i) c.positions_nm.push_back(Vec3(i, 0, 0));
  OffsetModel om{OffsetModel::Kind::gaussian, 25.0, 8};
  const SpinSystem sys = build_spin_system(c, 0.0, om);
  const Eigen::VectorXd hz = sys.offsets / constants::two_pi;
  const double mean = hz.mean();
  const double sd = std::sqrt((hz.array() - mean).square().sum() / (hz.size() - 1));
  EXPECT_NEAR(mean, 0.0, 4.0 * 25.0 / std::sqrt(1500.0));
  EXPECT_NEAR(sd, 25.0, 0.08 * 25.0);
}

TEST(SpinSystemBuild, JsonRoundTrip) {
  SpinConfiguration c;
  c.positions_nm = {Vec3(0, 0, 0), Vec3(0.1, 0.2, 0.3)};
  const SpinSystem a = build_spin_system(c, 33.0);
  const SpinSystem b = spin_system_from_json(nlohmann::json::parse(to_json(a).dump()));
  EXPECT_EQ(a.offsets, b.offsets);
  EXPECT_EQ(a.couplings, b.couplings);
  EXPECT_EQ(a.positions_nm[1], b.positions_nm[1]);
}

TEST(SpinSystemBuild, RejectsAsymmetricCouplings) {
  Eigen::MatrixXd d(2, 2);
  d << 0, 1, 2, 0;
  EXPECT_THROW(SpinSystem::from_parameters(Eigen::VectorXd::Zero(2), d), DomainError);
}
