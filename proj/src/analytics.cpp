#include "qrtls/analytics.hpp"

#include "qrtls/constants.hpp"

#include <cmath>
#include <sstream>

namespace qrtls::analytics {

namespace c = qrtls::constants;

namespace {

constexpr double regime_ratio = 5.0;

void warn_if_not_perturbative(Estimate& e, double delta, double g, const char* what) {
    if (std::abs(delta) < regime_ratio * std::abs(g)) {
        std::ostringstream os;
        os << what << ": |delta| / g = " << std::abs(delta) / std::abs(g)
           << " < " << regime_ratio << ", perturbative formula unreliable";
        e.warnings.push_back(os.str());
    }
}

}  // namespace

double josephson_energy(const QubitParams& p, double phi) {
    const double ej_max = std::pow(p.f_q_max + p.E_c, 2) / (8.0 * p.E_c);
    const double s = std::sin(c::pi * phi);
    const double co = std::cos(c::pi * phi);
    return ej_max * std::sqrt(co * co + p.d * p.d * s * s);
}

double qubit_freq_vs_flux(const QubitParams& p, double phi) {
    const double ej = josephson_energy(p, phi);
    if (ej <= p.E_c) {
        std::ostringstream os;
        os << "qubit_freq_vs_flux: E_J(" << phi << ") = " << ej
           << " GHz is not above E_C; outside the transmon regime";
        throw ParameterError(os.str());
    }
    return std::sqrt(8.0 * p.E_c * ej) - p.E_c;
}

Estimate dispersive_shift(double g_qr_mhz, double delta_mhz) {
    if (delta_mhz == 0.0) {
        throw std::invalid_argument("dispersive_shift: zero detuning, dispersive regime invalid");
    }
    Estimate e{-g_qr_mhz * g_qr_mhz / delta_mhz, {}};
    if (g_qr_mhz != 0.0) warn_if_not_perturbative(e, delta_mhz, g_qr_mhz, "dispersive_shift");
    return e;
}

Estimate effective_coupling(double g_qr_mhz, double g_x_mhz, double delta_mhz) {
    if (delta_mhz == 0.0) {
        throw std::invalid_argument("effective_coupling: zero detuning");
    }
    Estimate e{g_qr_mhz * g_x_mhz / delta_mhz, {}};
    if (g_qr_mhz != 0.0) warn_if_not_perturbative(e, delta_mhz, g_qr_mhz, "effective_coupling");
    if (g_x_mhz != 0.0) warn_if_not_perturbative(e, delta_mhz, g_x_mhz, "effective_coupling");
    return e;
}

double gamma_sum(const DecoherenceParams& r) {
    return 0.5 * r.gamma1_tls + r.gamma2_tls + 0.5 * r.gamma1_q + r.gamma2_q;
}

std::string T1Convention::describe() const {
    std::ostringstream os;
    os << "g^" << coupling_power << (coupling_angular ? "(angular)" : "(cyclic)")
       << " Gamma" << (gamma_angular ? "(angular)" : "(plain)") << " delta"
       << (delta_angular ? "(angular)" : "(cyclic)") << " unit="
       << (unit == TimeUnit::Microsecond ? "us" : "ns");
    return os.str();
}

double t1_estimate(double g_x_mhz, const DecoherenceParams& rates, double delta_mhz,
                   const T1Convention& conv) {
    // rates and frequencies in 1/unit
    const double per_unit = conv.unit == TimeUnit::Microsecond ? 1.0 : 1e-3;
    const double two_pi = 2.0 * c::pi;
    const double g = g_x_mhz * per_unit * (conv.coupling_angular ? two_pi : 1.0);
    const double gam = gamma_sum(rates) * per_unit * (conv.gamma_angular ? two_pi : 1.0);
    const double del = delta_mhz * per_unit * (conv.delta_angular ? two_pi : 1.0);
    const double tls_rate = 4.0 * c::pi * std::pow(g, conv.coupling_power) * gam /
                            (gam * gam + del * del);
    return 1.0 / (tls_rate / per_unit + rates.gamma1_q);
}

std::vector<ConventionOutcome> t1_convention_study(double gamma2_q) {
    DecoherenceParams r;
    r.gamma1_tls = 10.0;
    r.gamma2_tls = 10.0;
    r.gamma1_q = 1.0 / 25.0;
    r.gamma2_q = gamma2_q;
    std::vector<ConventionOutcome> out;
    for (int power : {1, 2}) {
        for (bool ga : {false, true}) {
            for (bool gma : {false, true}) {
                for (bool da : {false, true}) {
                    for (TimeUnit u : {TimeUnit::Microsecond, TimeUnit::Nanosecond}) {
                        const T1Convention conv{power, ga, gma, da, u};
                        const double lo = t1_estimate(22.0, r, 1000.0, conv);
                        const double hi = t1_estimate(22.0, r, 2000.0, conv);
                        const bool ok = std::abs(lo - 1.0) <= 0.1 && std::abs(hi - 3.7) <= 0.37;
                        out.push_back({conv, lo, hi, ok});
                    }
                }
            }
        }
    }
    return out;
}

double zero_point_voltage(double f_q_ghz, double c_tot_ff) {
    const double omega = 2.0 * c::pi * f_q_ghz * 1e9;
    return std::sqrt(c::hbar * omega / (2.0 * c_tot_ff * 1e-15));
}

double zero_point_field(double f_q_ghz, double c_tot_ff, double barrier_nm) {
    return zero_point_voltage(f_q_ghz, c_tot_ff) / (barrier_nm * 1e-9);
}

double dipole_from_coupling(double g_x_mhz, double f_q_ghz, double c_tot_ff, double barrier_nm) {
    if (!(g_x_mhz > 0.0 && f_q_ghz > 0.0 && c_tot_ff > 0.0 && barrier_nm > 0.0)) {
        throw std::invalid_argument("dipole_from_coupling: all inputs must be > 0");
    }
    const double energy = c::planck_h * g_x_mhz * 1e6;  // J
    const double p = energy / zero_point_field(f_q_ghz, c_tot_ff, barrier_nm);  // C m
    return p / (c::elementary_charge * c::angstrom);
}

double coupling_from_dipole(double p_bar_eA, double f_q_ghz, double c_tot_ff, double barrier_nm) {
    if (!(p_bar_eA > 0.0 && f_q_ghz > 0.0 && c_tot_ff > 0.0 && barrier_nm > 0.0)) {
        throw std::invalid_argument("coupling_from_dipole: all inputs must be > 0");
    }
    const double p = p_bar_eA * c::elementary_charge * c::angstrom;
    return p * zero_point_field(f_q_ghz, c_tot_ff, barrier_nm) / c::planck_h * 1e-6;
}

double charging_energy_from_capacitance(double c_tot_ff) {
    if (!(c_tot_ff > 0.0)) throw std::invalid_argument("C_tot must be > 0");
    const double e = c::elementary_charge;
    return e * e / (2.0 * c_tot_ff * 1e-15 * c::planck_h) * 1e-9;
}

double capacitance_from_charging_energy(double e_c_ghz) {
    if (!(e_c_ghz > 0.0)) throw std::invalid_argument("E_c must be > 0");
    const double e = c::elementary_charge;
    return e * e / (2.0 * e_c_ghz * 1e9 * c::planck_h) * 1e15;
}

std::vector<double> readout_failure_locator(const SystemParams& p) {
    const double f = p.resonator.f_res;
    const double d0 = p.tls.delta0;
    if (f < d0) return {};
    const double dv = std::sqrt(f * f - d0 * d0) / (1e-3 * p.tls.gamma);
    if (dv == 0.0) return {p.tls.V0};
    return {p.tls.V0 - dv, p.tls.V0 + dv};
}

DerivedQuantities derived_quantities(const SystemParams& p, const T1Convention& convention) {
    DerivedQuantities q{};
    q.f_q_ghz = p.qubit_frequency();
    q.delta_qr_mhz = 1e3 * (q.f_q_ghz - p.resonator.f_res);
    q.delta_qt_mhz = 1e3 * (q.f_q_ghz - p.tls_frequency());

    const Estimate chi = dispersive_shift(p.resonator.g_qr, q.delta_qr_mhz);
    const Estimate geff = effective_coupling(p.resonator.g_qr, p.tls.g_x, q.delta_qr_mhz);
    q.chi_mhz = chi.value;
    q.g_eff_mhz = geff.value;
    q.warnings = chi.warnings;
    q.warnings.insert(q.warnings.end(), geff.warnings.begin(), geff.warnings.end());

    q.gamma_sum = gamma_sum(p.decoherence);
    q.t1_est_us = t1_estimate(p.tls.g_x, p.decoherence, q.delta_qt_mhz, convention);
    q.c_tot_ff = p.qubit.C_tot ? *p.qubit.C_tot : capacitance_from_charging_energy(p.qubit.E_c);
    q.v_rms = zero_point_voltage(q.f_q_ghz, q.c_tot_ff);
    q.field = zero_point_field(q.f_q_ghz, q.c_tot_ff, p.tls.barrier_t);
    q.p_bar_eA = p.tls.g_x > 0.0
                     ? dipole_from_coupling(p.tls.g_x, q.f_q_ghz, q.c_tot_ff, p.tls.barrier_t)
                     : 0.0;
    q.failure_voltages = readout_failure_locator(p);
    return q;
}

}  // namespace qrtls::analytics
