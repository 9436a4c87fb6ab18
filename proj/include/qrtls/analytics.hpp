// analytics.hpp: closed-form relations for the qubit / resonator / TLS system
//
// These are the fast oracles that eigensolver and master-equation results are
// checked against. Formulas that are only valid in a perturbative regime return
// their regime warnings alongside the value instead of logging them.

#pragma once

#include "qrtls/model.hpp"

#include <string>
#include <vector>

namespace qrtls::analytics {

struct Estimate {
    double value;
    std::vector<std::string> warnings;
};

// h f_q(phi) = sqrt(8 E_C E_J(phi)) - E_C with
// E_J(phi) = E_J,max sqrt(cos^2(pi phi) + d^2 sin^2(pi phi)).
// E_J,max is fixed by f_q(0) = f_q_max. Throws ParameterError outside the
// transmon regime (E_J(phi) <= E_C).
double qubit_freq_vs_flux(const QubitParams& p, double phi);
double josephson_energy(const QubitParams& p, double phi);  // GHz

// chi = -g_qr^2 / delta (MHz). Throws on delta == 0.
Estimate dispersive_shift(double g_qr_mhz, double delta_mhz);

// g_eff = g_qr g_x / delta (MHz). Throws on delta == 0.
Estimate effective_coupling(double g_qr_mhz, double g_x_mhz, double delta_mhz);

// Gamma = Gamma1_TLS/2 + Gamma2_TLS + Gamma1_q/2 + Gamma2_q   [1/us]
double gamma_sum(const DecoherenceParams& rates);

enum class TimeUnit { Microsecond, Nanosecond };

// How the TLS-limited T1 formula T1^-1 = 4 pi g^k Gamma / (Gamma^2 + delta^2) + Gamma1_q
// is evaluated. The expression is not dimensionally consistent for k = 1, so the
// result depends on these choices; none is singled out as correct.
struct T1Convention {
    int coupling_power{1};       // k
    bool coupling_angular{false};
    bool gamma_angular{false};
    bool delta_angular{false};
    TimeUnit unit{TimeUnit::Microsecond};

    std::string describe() const;
};

// T1 in us
double t1_estimate(double g_x_mhz, const DecoherenceParams& rates, double delta_mhz,
                   const T1Convention& convention = {});

struct ConventionOutcome {
    T1Convention convention;
    double t1_low_detuning_us;   // delta = 1 GHz
    double t1_high_detuning_us;  // delta = 2 GHz
    bool reproduces_range;       // both ends within 10 % of 1.0 and 3.7 us
};

// Evaluates every convention at g_x = 22 MHz, Gamma1_TLS = Gamma2_TLS = 10/us,
// Gamma1_q = 1/25 us and the given Gamma2_q.
std::vector<ConventionOutcome> t1_convention_study(double gamma2_q = 0.02);

// V_rms = sqrt(hbar omega_q / 2 C_tot)   [V]
double zero_point_voltage(double f_q_ghz, double c_tot_ff);
// |F| = V_rms / t   [V/m]
double zero_point_field(double f_q_ghz, double c_tot_ff, double barrier_nm);

// h g_x = p_bar |F|   -> p_bar in e*Angstrom
double dipole_from_coupling(double g_x_mhz, double f_q_ghz, double c_tot_ff, double barrier_nm);
double coupling_from_dipole(double p_bar_eA, double f_q_ghz, double c_tot_ff, double barrier_nm);

// E_c = e^2 / (2 C_tot h), GHz <-> fF
double charging_energy_from_capacitance(double c_tot_ff);
double capacitance_from_charging_energy(double e_c_ghz);

// Piezo voltages where f_TLS = f_res: V0 -+ sqrt(f_res^2 - delta0^2) / gamma.
// Empty when f_res < delta0, a single entry at tangency.
std::vector<double> readout_failure_locator(const SystemParams& p);

struct DerivedQuantities {
    double f_q_ghz;
    double delta_qr_mhz;  // f_q - f_res
    double chi_mhz;
    double g_eff_mhz;
    double gamma_sum;      // 1/us
    double delta_qt_mhz;   // f_q - f_TLS at piezo_v
    double t1_est_us;
    double c_tot_ff;
    double p_bar_eA;
    double v_rms;          // V
    double field;          // V/m
    std::vector<double> failure_voltages;
    std::vector<std::string> warnings;
};

DerivedQuantities derived_quantities(const SystemParams& p, const T1Convention& convention = {});

}  // namespace qrtls::analytics
