#pragma once

#include <numbers>

namespace spinlab::constants {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

// CODATA 2018
inline constexpr double hbar = 1.054571817e-34;        // J s
inline constexpr double mu0_over_4pi = 1.00000000055e-7; // T m / A

// 29Si gyromagnetic ratio, gamma / 2pi = -8.465 MHz/T.
inline constexpr double gamma_si29 = -8.465e6 * two_pi; // rad s^-1 T^-1

// Conventional cubic cell of silicon.
inline constexpr double si_lattice_constant_nm = 0.5431;

// Natural abundance of 29Si.
inline constexpr double si29_natural_abundance = 0.047;

// Spectrometer carrier used for figure-of-merit arithmetic.
inline constexpr double carrier_frequency_hz = 59.575e6;

} // namespace spinlab::constants
