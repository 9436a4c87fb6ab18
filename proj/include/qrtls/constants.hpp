// constants.hpp: physical constants (CODATA 2018, exact SI where defined) and unit conversions

#pragma once

#include <numbers>

namespace qrtls::constants {

inline constexpr double pi = std::numbers::pi;

inline constexpr double planck_h = 6.62607015e-34;           // J s
inline constexpr double hbar = planck_h / (2.0 * pi);        // J s
inline constexpr double elementary_charge = 1.602176634e-19; // C
inline constexpr double flux_quantum = planck_h / (2.0 * elementary_charge);
inline constexpr double angstrom = 1e-10;                    // m

}  // namespace qrtls::constants

namespace qrtls::units {

// Hamiltonians are stored in rad/us; time is in us. Everything public is GHz / MHz.
inline constexpr double rad_per_us_per_ghz = 2.0 * constants::pi * 1000.0;
inline constexpr double rad_per_us_per_mhz = 2.0 * constants::pi;

constexpr double ghz_to_angular(double f_ghz) { return f_ghz * rad_per_us_per_ghz; }
constexpr double mhz_to_angular(double f_mhz) { return f_mhz * rad_per_us_per_mhz; }
constexpr double angular_to_ghz(double w) { return w / rad_per_us_per_ghz; }
constexpr double angular_to_mhz(double w) { return w / rad_per_us_per_mhz; }

}  // namespace qrtls::units
