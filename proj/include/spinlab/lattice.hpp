#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "spinlab/constants.hpp"
#include "spinlab/errors.hpp"
#include "spinlab/random.hpp"

namespace spinlab {

using Vec3 = Eigen::Vector3d;

struct LatticeSpec {
  double abundance = constants::si29_natural_abundance;
  std::array<int, 3> supercell{1, 1, 1};
  double lattice_constant_nm = constants::si_lattice_constant_nm;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(abundance >= 0.0 && abundance <= 1.0))
      throw DomainError("abundance must lie in [0, 1], got " + std::to_string(abundance));
    for (int c : supercell)
      if (c < 1) throw DomainError("supercell counts must be >= 1");
    if (!(lattice_constant_nm > 0.0)) throw DomainError("lattice constant must be positive");
  }

  [[nodiscard]] std::size_t cell_count() const {
    return static_cast<std::size_t>(supercell[0]) * supercell[1] * supercell[2];
  }
};

// Occupied lattice positions of one realization.
struct SiteSet {
  LatticeSpec spec;
  std::vector<Vec3> positions_nm;

  [[nodiscard]] bool empty() const { return positions_nm.empty(); }
  [[nodiscard]] std::size_t size() const { return positions_nm.size(); }
  [[nodiscard]] Vec3 box_center_nm() const {
    return 0.5 * spec.lattice_constant_nm *
           Vec3(spec.supercell[0], spec.supercell[1], spec.supercell[2]);
  }
};

// Fractional coordinates of the 8 diamond-cubic basis sites.
inline const std::array<Vec3, 8>& diamond_basis() {
  static const std::array<Vec3, 8> basis{
      Vec3(0.00, 0.00, 0.00), Vec3(0.00, 0.50, 0.50), Vec3(0.50, 0.00, 0.50), Vec3(0.50, 0.50, 0.00),
      Vec3(0.25, 0.25, 0.25), Vec3(0.25, 0.75, 0.75), Vec3(0.75, 0.25, 0.75), Vec3(0.75, 0.75, 0.25)};
  return basis;
}

// Every basis site of every conventional cell is occupied independently with
// probability `abundance`. Visiting order is fixed, so output depends only on
// (spec, seed).
inline SiteSet generate_sites(const LatticeSpec& spec) {
  spec.validate();
  SiteSet out;
  out.spec = spec;
  Rng rng(stream_seed(spec.seed, Stream::lattice));
  const double a = spec.lattice_constant_nm;
  for (int i = 0; i < spec.supercell[0]; ++i)
    for (int j = 0; j < spec.supercell[1]; ++j)
      for (int k = 0; k < spec.supercell[2]; ++k)
        for (const Vec3& b : diamond_basis())
          if (rng.bernoulli(spec.abundance)) out.positions_nm.push_back(a * (Vec3(i, j, k) + b));
  return out;
}

/// Secular dipolar coupling between two spin-1/2 nuclei, in rad/s:
///
///   d = (mu0/4pi) hbar gamma^2 (1 - 3 cos^2 theta) / (2 r^3),
///
/// where theta is the angle between r_j - r_k and the static field.
/// Positions are in nm, gamma in rad s^-1 T^-1.
inline double dipolar_coupling(const Vec3& r_j, const Vec3& r_k, const Vec3& field_direction,
                               double gamma = constants::gamma_si29) {
  const Vec3 diff = r_j - r_k;
  const double r_nm = diff.norm();
  if (!(r_nm > 0.0)) throw DomainError("dipolar_coupling: coincident spin positions");
  const double cos_theta = diff.dot(field_direction) / r_nm;
  const double r_m = r_nm * 1e-9;
  return constants::mu0_over_4pi * constants::hbar * gamma * gamma * (1.0 - 3.0 * cos_theta * cos_theta) /
         (2.0 * r_m * r_m * r_m);
}

enum class ClusterStrategy { central_nearest, strongest_coupled };

inline std::string to_string(ClusterStrategy s) {
  return s == ClusterStrategy::central_nearest ? "central_nearest" : "strongest_coupled";
}

inline ClusterStrategy cluster_strategy_from_string(const std::string& s) {
  if (s == "central_nearest") return ClusterStrategy::central_nearest;
  if (s == "strongest_coupled") return ClusterStrategy::strongest_coupled;
  throw DomainError("unknown cluster strategy '" + s + "'");
}

struct ClusterMetadata {
  ClusterStrategy strategy = ClusterStrategy::central_nearest;
  std::size_t requested = 0;
  bool undersized = false; // fewer occupied sites than requested
  std::uint64_t seed = 0;
};

struct SpinConfiguration {
  std::vector<Vec3> positions_nm;
  Vec3 field_direction = Vec3::UnitZ();
  std::optional<std::size_t> origin_site_index; // index into the source SiteSet
  ClusterMetadata metadata;

  void validate() const {
    if (std::abs(field_direction.norm() - 1.0) > 1e-12)
      throw DomainError("field_direction must be a unit vector");
    for (std::size_t a = 0; a < positions_nm.size(); ++a)
      for (std::size_t b = a + 1; b < positions_nm.size(); ++b)
        if ((positions_nm[a] - positions_nm[b]).norm() == 0.0)
          throw DomainError("spin configuration has coincident positions");
  }
};

struct ClusterOptions {
  ClusterStrategy strategy = ClusterStrategy::central_nearest;
  Vec3 field_direction = Vec3::UnitZ();
  double gamma = constants::gamma_si29;
  std::uint64_t seed = 0;
  // Fixes the origin site instead of drawing it.
  std::optional<std::size_t> origin;
  // Draw the origin only among sites in the central half of the supercell
  // (each coordinate within a quarter box of the center), when any exist.
  bool interior_origin = true;
};

// Truncates the bulk realization to at most `max_spins` spins around an
// origin site. The origin is always the first spin of the result.
inline SpinConfiguration select_cluster(const SiteSet& sites, std::size_t max_spins,
                                        const ClusterOptions& opts = {}) {
  if (max_spins < 1) throw DomainError("select_cluster: max_spins must be >= 1");
  SpinConfiguration cfg;
  cfg.field_direction = opts.field_direction;
  cfg.metadata.strategy = opts.strategy;
  cfg.metadata.requested = max_spins;
  cfg.metadata.seed = opts.seed;
  if (sites.empty()) {
    cfg.metadata.undersized = true;
    return cfg;
  }

  std::size_t origin = 0;
  if (opts.origin) {
    if (*opts.origin >= sites.size()) throw DomainError("select_cluster: origin index out of range");
    origin = *opts.origin;
  } else {
    std::vector<std::size_t> candidates;
    if (opts.interior_origin) {
      const Vec3 c = sites.box_center_nm();
      const double a = sites.spec.lattice_constant_nm;
      for (std::size_t i = 0; i < sites.size(); ++i) {
        const Vec3 d = (sites.positions_nm[i] - c).cwiseAbs();
        if (d.x() <= 0.25 * a * sites.spec.supercell[0] && d.y() <= 0.25 * a * sites.spec.supercell[1] &&
            d.z() <= 0.25 * a * sites.spec.supercell[2])
          candidates.push_back(i);
      }
    }
    if (candidates.empty()) {
      candidates.resize(sites.size());
      std::iota(candidates.begin(), candidates.end(), std::size_t{0});
    }
    Rng rng(stream_seed(opts.seed, Stream::cluster));
    origin = candidates[rng.index(candidates.size())];
  }

  const Vec3& r0 = sites.positions_nm[origin];
  std::vector<std::size_t> order;
  order.reserve(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i)
    if (i != origin) order.push_back(i);

  // Rank: smaller key first; ties resolved by site index for determinism.
  std::vector<double> key(sites.size(), 0.0);
  for (std::size_t i : order) {
    if (opts.strategy == ClusterStrategy::central_nearest)
      key[i] = (sites.positions_nm[i] - r0).norm();
    else
      key[i] = -std::abs(dipolar_coupling(sites.positions_nm[i], r0, opts.field_direction, opts.gamma));
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });

  cfg.origin_site_index = origin;
  cfg.positions_nm.push_back(r0);
  for (std::size_t i = 0; i < order.size() && cfg.positions_nm.size() < max_spins; ++i)
    cfg.positions_nm.push_back(sites.positions_nm[order[i]]);
  cfg.metadata.undersized = cfg.positions_nm.size() < max_spins;
  return cfg;
}

struct OffsetModel {
  enum class Kind { none, uniform, gaussian };
  Kind kind = Kind::none;
  // gaussian: standard deviation; uniform: full width. Both in Hz.
  double width_hz = 0.0;
  std::uint64_t seed = 0;
};

inline std::string to_string(OffsetModel::Kind k) {
  switch (k) {
  case OffsetModel::Kind::none: return "none";
  case OffsetModel::Kind::uniform: return "uniform";
  case OffsetModel::Kind::gaussian: return "gaussian";
  }
  return "none";
}

struct SpinSystem {
  std::size_t n_spins = 0;
  Eigen::VectorXd offsets;   // rad/s
  Eigen::MatrixXd couplings; // rad/s, symmetric, zero diagonal
  std::vector<Vec3> positions_nm;
  nlohmann::json provenance = nlohmann::json::object();

  void validate() const {
    if (n_spins < 1) throw DomainError("spin system needs at least one spin");
    if (static_cast<std::size_t>(offsets.size()) != n_spins ||
        static_cast<std::size_t>(couplings.rows()) != n_spins ||
        static_cast<std::size_t>(couplings.cols()) != n_spins)
      throw DomainError("spin system dimensions disagree");
    for (std::size_t j = 0; j < n_spins; ++j) {
      if (couplings(j, j) != 0.0) throw DomainError("coupling matrix must have zero diagonal");
      for (std::size_t k = j + 1; k < n_spins; ++k)
        if (couplings(j, k) != couplings(k, j)) throw DomainError("coupling matrix must be symmetric");
    }
    if (!offsets.allFinite() || !couplings.allFinite()) throw NumericalError("spin system has non-finite entries");
  }

  // Direct construction from explicit parameters (tests, hand-built systems).
  static SpinSystem from_parameters(Eigen::VectorXd offsets_rad_s, Eigen::MatrixXd couplings_rad_s) {
    SpinSystem s;
    s.n_spins = static_cast<std::size_t>(offsets_rad_s.size());
    s.offsets = std::move(offsets_rad_s);
    s.couplings = std::move(couplings_rad_s);
    s.validate();
    return s;
  }
};

// omega_j = 2 pi detuning + delta_j, delta_j from the offset model;
// couplings filled pairwise from geometry.
inline SpinSystem build_spin_system(const SpinConfiguration& config, double carrier_detuning_hz,
                                    const OffsetModel& inhomogeneity = {},
                                    double gamma = constants::gamma_si29) {
  config.validate();
  const std::size_t n = config.positions_nm.size();
  if (n < 1) throw DomainError("build_spin_system: empty configuration");
  SpinSystem sys;
  sys.n_spins = n;
  sys.positions_nm = config.positions_nm;
  sys.offsets = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), constants::two_pi * carrier_detuning_hz);
  Rng rng(stream_seed(inhomogeneity.seed, Stream::offsets));
  for (std::size_t j = 0; j < n; ++j) {
    double delta_hz = 0.0;
    switch (inhomogeneity.kind) {
    case OffsetModel::Kind::none: break;
    case OffsetModel::Kind::uniform: delta_hz = inhomogeneity.width_hz * (rng.uniform() - 0.5); break;
    case OffsetModel::Kind::gaussian: delta_hz = inhomogeneity.width_hz * rng.normal(); break;
    }
    sys.offsets[static_cast<Eigen::Index>(j)] += constants::two_pi * delta_hz;
  }
  sys.couplings = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = j + 1; k < n; ++k) {
      const double d = dipolar_coupling(config.positions_nm[j], config.positions_nm[k], config.field_direction, gamma);
      sys.couplings(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = d;
      sys.couplings(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = d;
    }
  sys.provenance = {
      {"carrier_detuning_hz", carrier_detuning_hz},
      {"gamma_rad_per_s_per_t", gamma},
      {"field_direction", {config.field_direction.x(), config.field_direction.y(), config.field_direction.z()}},
      {"offset_model", {{"kind", to_string(inhomogeneity.kind)}, {"width_hz", inhomogeneity.width_hz},
                        {"seed", inhomogeneity.seed}}},
      {"cluster", {{"strategy", to_string(config.metadata.strategy)}, {"requested", config.metadata.requested},
                   {"undersized", config.metadata.undersized}, {"seed", config.metadata.seed}}}};
  if (config.origin_site_index) sys.provenance["cluster"]["origin_site_index"] = *config.origin_site_index;
  return sys;
}

inline nlohmann::json to_json(const LatticeSpec& spec) {
  return {{"abundance", spec.abundance},
          {"supercell", {spec.supercell[0], spec.supercell[1], spec.supercell[2]}},
          {"lattice_constant_nm", spec.lattice_constant_nm},
          {"seed", spec.seed}};
}

inline nlohmann::json to_json(const SpinSystem& sys) {
  nlohmann::json j;
  j["n_spins"] = sys.n_spins;
  nlohmann::json pos = nlohmann::json::array();
  for (const Vec3& p : sys.positions_nm) pos.push_back({p.x(), p.y(), p.z()});
  j["positions_nm"] = pos;
  j["offsets_rad_s"] = std::vector<double>(sys.offsets.data(), sys.offsets.data() + sys.offsets.size());
  nlohmann::json c = nlohmann::json::array();
  for (Eigen::Index r = 0; r < sys.couplings.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(sys.couplings.cols()));
    for (Eigen::Index k = 0; k < sys.couplings.cols(); ++k) row[static_cast<std::size_t>(k)] = sys.couplings(r, k);
    c.push_back(row);
  }
  j["couplings_rad_s"] = c;
  j["provenance"] = sys.provenance;
  return j;
}

inline SpinSystem spin_system_from_json(const nlohmann::json& j) {
  const auto offs = j.at("offsets_rad_s").get<std::vector<double>>();
  const std::size_t n = offs.size();
  Eigen::VectorXd o(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) o[static_cast<Eigen::Index>(i)] = offs[i];
  Eigen::MatrixXd c(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const auto& rows = j.at("couplings_rad_s");
  if (rows.size() != n) throw DomainError("coupling matrix size does not match offsets");
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = rows.at(r).get<std::vector<double>>();
    if (row.size() != n) throw DomainError("coupling matrix is not square");
    for (std::size_t k = 0; k < n; ++k) c(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = row[k];
  }
  SpinSystem s = SpinSystem::from_parameters(std::move(o), std::move(c));
  if (j.contains("positions_nm"))
    for (const auto& p : j.at("positions_nm")) s.positions_nm.emplace_back(p.at(0), p.at(1), p.at(2));
  if (j.contains("provenance")) s.provenance = j.at("provenance");
  return s;
}

} // namespace spinlab
