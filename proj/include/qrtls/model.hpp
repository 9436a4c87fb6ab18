// model.hpp: qubit / resonator / TLS parameters and Hamiltonian assembly
//
// Tensor ordering is fixed: qubit (slowest index) x resonator x TLS (fastest).
// Every composite operator is built through CompositeSpace::embed.
//
// Public units: frequencies in GHz (f_*, E_c, delta0) or MHz (couplings, drive),
// strain coupling gamma in MHz per piezo volt, rates in 1/us.
// Operators returned from this module are in rad/us (see units.hpp).

#pragma once

#include "qrtls/operators.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qrtls {

class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct QubitParams {
    double f_q_max{7.32};       // GHz
    double E_c{0.228};          // GHz, E_c / h
    double d{0.67};             // junction asymmetry
    int n_levels{6};
    std::optional<double> f_q;  // GHz, operating-point override; otherwise derived from flux
    std::optional<double> C_tot;  // fF
    std::optional<double> I_c;    // uA, metadata only
    std::optional<double> A_JJ;   // um^2, metadata only

    double anharmonicity() const noexcept { return -E_c; }
};

struct ResonatorParams {
    double f_res{6.625};  // GHz
    double g_qr{34.0};    // MHz
    int n_levels{6};
};

struct TlsParams {
    double delta0{5.838};  // GHz
    double gamma{212.0};   // MHz per piezo volt
    double V0{40.2};       // V, symmetry point
    double g_x{21.7};      // MHz
    double g_z{0.0};       // MHz
    std::optional<double> p_bar;  // e*Angstrom, derived
    double barrier_t{2.0};        // nm
};

struct DecoherenceParams {
    double gamma1_q{0.04};
    double gamma2_q{0.04};
    double gamma1_tls{10.0};
    double gamma2_tls{10.0};
    double kappa_res{1.0};
};

struct SystemParams {
    QubitParams qubit;
    ResonatorParams resonator;
    TlsParams tls;
    DecoherenceParams decoherence;
    double flux{0.0};     // Phi / Phi_0
    double piezo_v{0.0};  // V

    // Throws ParameterError naming the first violated invariant.
    void validate() const;
    Index dim() const noexcept {
        return static_cast<Index>(qubit.n_levels) * resonator.n_levels * 2;
    }
    double qubit_frequency() const;  // GHz
    double tls_frequency() const;    // GHz, at piezo_v
};

// Parameters at the values reported for the studied device.
SystemParams reference_params();

// ------------------------------------------------------------------ space

enum class Factor { Qubit = 0, Resonator = 1, Tls = 2 };

struct BareState {
    int q;
    int r;
    int t;
    friend bool operator==(const BareState&, const BareState&) = default;
};

class CompositeSpace {
public:
    CompositeSpace(int n_qubit, int n_res, int n_tls = 2);
    explicit CompositeSpace(const SystemParams& p)
        : CompositeSpace(p.qubit.n_levels, p.resonator.n_levels, 2) {}

    int levels(Factor f) const noexcept { return dims_[static_cast<int>(f)]; }
    Index dim() const noexcept { return static_cast<Index>(dims_[0]) * dims_[1] * dims_[2]; }

    // Lift a single-factor operator to the full space.
    Operator embed(Factor f, const Operator& op) const;
    Operator identity() const { return Operator::identity(dim()); }
    Operator destroy(Factor f) const { return embed(f, ladder_destroy(levels(f))); }
    Operator number(Factor f) const { return embed(f, number_operator(levels(f))); }
    Operator excitation_number() const;

    Index index_of(const BareState& s) const;
    BareState state_of(Index idx) const;
    // e.g. "q1r0t1"
    std::string label(Index idx) const;
    static std::string label(const BareState& s);
    static BareState parse_label(const std::string& label);

private:
    int dims_[3];
};

// ------------------------------------------------------------------ Hamiltonians

// Duffing ladder: E_n = f_q n + (alpha/2) n (n - 1); alpha = -E_c.
Operator qubit_hamiltonian(const QubitParams& p, double f_q_ghz);
Operator resonator_hamiltonian(const ResonatorParams& p);
Operator tls_hamiltonian(double f_tls_ghz);

// f_TLS = sqrt(delta0^2 + (gamma (V - V0))^2), GHz
double tls_frequency(const TlsParams& p, double piezo_v);

enum class CouplingForm {
    Full,  // (a + a^dag)(b + b^dag)
    Rwa    // a b^dag + a^dag b; required for the rotating frame
};

Operator full_hamiltonian(const SystemParams& p, CouplingForm form = CouplingForm::Full);

// Coupling term Omega (q + q^dag) / 2 and the drive frequency. In the lab frame the
// time-dependent term is 2 cos(omega t) * op; in the rotating frame it is op itself.
struct DriveTerm {
    Operator op;            // rad/us
    double omega;           // rad/us
    double amplitude_mhz;
    double frequency_ghz;
};

DriveTerm drive_hamiltonian(const CompositeSpace& space, double amplitude_mhz,
                            double frequency_ghz);
// q + q^dag on the composite space (unit amplitude)
Operator qubit_drive_operator(const CompositeSpace& space);

struct Collapse {
    Operator op;  // unweighted; the Lindblad term uses sqrt(rate) * op
    double rate;  // 1/us
    std::string name;
};

struct CollapseSet {
    std::vector<Collapse> ops;
    std::vector<std::string> warnings;
};

// Lowering operators at Gamma_1 and number operators at 2 Gamma_phi, with
// Gamma_phi = Gamma_2 - Gamma_1 / 2 clamped at zero (warning emitted).
CollapseSet collapse_operators(const SystemParams& p);

// Pure dephasing rate, clamped at zero. Sets *clamped when clamping happened.
double pure_dephasing(double gamma1, double gamma2, bool* clamped = nullptr);

// ------------------------------------------------------------------ convergence

struct TruncationDrift {
    int n_eigenvalues;
    double max_drift_mhz;  // lowest n_eigenvalues: base vs doubled qubit/resonator levels
};

TruncationDrift truncation_drift(const SystemParams& p, int n_eigenvalues);

}  // namespace qrtls
