#include "qrtls/model.hpp"

#include "qrtls/analytics.hpp"
#include "qrtls/constants.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <regex>
#include <sstream>

namespace qrtls {

using units::ghz_to_angular;
using units::mhz_to_angular;

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw ParameterError(msg);
}

}  // namespace

void SystemParams::validate() const {
    require(qubit.f_q_max > 0.0, "f_q_max must be > 0");
    require(qubit.E_c > 0.0, "E_c must be > 0");
    require(qubit.d >= 0.0 && qubit.d <= 1.0, "d must lie in [0, 1]");
    require(qubit.n_levels >= 2, "n_qubit must be >= 2");
    if (qubit.f_q) require(*qubit.f_q > 0.0, "f_q must be > 0");
    if (qubit.C_tot) {
        require(*qubit.C_tot > 0.0, "C_tot must be > 0");
        const double implied = analytics::charging_energy_from_capacitance(*qubit.C_tot);
        require(std::abs(implied - qubit.E_c) <= 1e-3 * qubit.E_c,
                "C_tot and E_c disagree (C_tot implies E_c = " + std::to_string(implied) +
                    " GHz)");
    }
    require(resonator.f_res > 0.0, "f_res must be > 0");
    require(resonator.g_qr >= 0.0, "g_qr must be >= 0");
    require(resonator.n_levels >= 2, "n_res must be >= 2");
    require(tls.delta0 > 0.0, "delta0 must be > 0");
    require(tls.barrier_t > 0.0, "barrier_t must be > 0");
    const auto& dc = decoherence;
    require(dc.gamma1_q >= 0.0 && dc.gamma2_q >= 0.0 && dc.gamma1_tls >= 0.0 &&
                dc.gamma2_tls >= 0.0 && dc.kappa_res >= 0.0,
            "decoherence rates must be >= 0");
}

double SystemParams::qubit_frequency() const {
    if (qubit.f_q) return *qubit.f_q;
    if (flux == 0.0) return qubit.f_q_max;
    return analytics::qubit_freq_vs_flux(qubit, flux);
}

double SystemParams::tls_frequency() const {
    return qrtls::tls_frequency(tls, piezo_v);
}

SystemParams reference_params() {
    return SystemParams{};
}

// ------------------------------------------------------------------ space

CompositeSpace::CompositeSpace(int n_qubit, int n_res, int n_tls) : dims_{n_qubit, n_res, n_tls} {
    if (n_qubit < 2 || n_res < 2 || n_tls < 2) {
        throw DimensionError("CompositeSpace: every factor needs at least 2 levels");
    }
}

Operator CompositeSpace::embed(Factor f, const Operator& op) const {
    if (op.dim() != levels(f)) {
        throw DimensionError("CompositeSpace::embed: operator dimension does not match factor");
    }
    const Operator iq = Operator::identity(dims_[0]);
    const Operator ir = Operator::identity(dims_[1]);
    const Operator it = Operator::identity(dims_[2]);
    switch (f) {
        case Factor::Qubit: return tensor({op, ir, it});
        case Factor::Resonator: return tensor({iq, op, it});
        case Factor::Tls: return tensor({iq, ir, op});
    }
    throw std::logic_error("CompositeSpace::embed: unknown factor");
}

Operator CompositeSpace::excitation_number() const {
    return number(Factor::Qubit) + number(Factor::Resonator) + number(Factor::Tls);
}

Index CompositeSpace::index_of(const BareState& s) const {
    if (s.q < 0 || s.q >= dims_[0] || s.r < 0 || s.r >= dims_[1] || s.t < 0 || s.t >= dims_[2]) {
        throw DimensionError("CompositeSpace::index_of: bare state outside truncation");
    }
    return (static_cast<Index>(s.q) * dims_[1] + s.r) * dims_[2] + s.t;
}

BareState CompositeSpace::state_of(Index idx) const {
    if (idx < 0 || idx >= dim()) {
        throw DimensionError("CompositeSpace::state_of: index out of range");
    }
    const int t = static_cast<int>(idx % dims_[2]);
    const int r = static_cast<int>((idx / dims_[2]) % dims_[1]);
    const int q = static_cast<int>(idx / (static_cast<Index>(dims_[2]) * dims_[1]));
    return {q, r, t};
}

std::string CompositeSpace::label(Index idx) const {
    return label(state_of(idx));
}

std::string CompositeSpace::label(const BareState& s) {
    std::ostringstream os;
    os << 'q' << s.q << 'r' << s.r << 't' << s.t;
    return os.str();
}

BareState CompositeSpace::parse_label(const std::string& label) {
    static const std::regex re(R"(q(\d+)r(\d+)t(\d+))");
    std::smatch m;
    if (!std::regex_match(label, m, re)) {
        throw std::invalid_argument("parse_label: malformed bare-state label '" + label + "'");
    }
    return {std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3])};
}

// ------------------------------------------------------------------ Hamiltonians

Operator qubit_hamiltonian(const QubitParams& p, double f_q_ghz) {
    if (!(f_q_ghz > 0.0)) throw ParameterError("qubit_hamiltonian: f_q must be > 0");
    const double w = ghz_to_angular(f_q_ghz);
    const double alpha = ghz_to_angular(p.anharmonicity());
    std::vector<double> e(static_cast<std::size_t>(p.n_levels));
    for (int n = 0; n < p.n_levels; ++n) {
        e[static_cast<std::size_t>(n)] = w * n + 0.5 * alpha * n * (n - 1);
    }
    return Operator::diagonal(e);
}

Operator resonator_hamiltonian(const ResonatorParams& p) {
    return ghz_to_angular(p.f_res) * number_operator(p.n_levels);
}

Operator tls_hamiltonian(double f_tls_ghz) {
    return ghz_to_angular(f_tls_ghz) * number_operator(2);
}

double tls_frequency(const TlsParams& p, double piezo_v) {
    const double eps = 1e-3 * p.gamma * (piezo_v - p.V0);  // GHz
    return std::hypot(p.delta0, eps);
}

namespace {

Operator exchange(const CompositeSpace& s, Factor a, Factor b, CouplingForm form) {
    const Operator da = s.destroy(a);
    const Operator db = s.destroy(b);
    if (form == CouplingForm::Full) {
        return (da + da.adjoint()) * (db + db.adjoint());
    }
    return da * db.adjoint() + da.adjoint() * db;
}

}  // namespace

Operator full_hamiltonian(const SystemParams& p, CouplingForm form) {
    p.validate();
    const CompositeSpace s(p);
    const Operator hq = qubit_hamiltonian(p.qubit, p.qubit_frequency());
    Operator h = s.embed(Factor::Qubit, hq);
    h += s.embed(Factor::Resonator, resonator_hamiltonian(p.resonator));
    h += s.embed(Factor::Tls, tls_hamiltonian(p.tls_frequency()));
    if (p.resonator.g_qr != 0.0) {
        h += mhz_to_angular(p.resonator.g_qr) * exchange(s, Factor::Qubit, Factor::Resonator, form);
    }
    if (p.tls.g_x != 0.0) {
        h += mhz_to_angular(p.tls.g_x) * exchange(s, Factor::Qubit, Factor::Tls, form);
    }
    if (p.tls.g_z != 0.0) {
        h += mhz_to_angular(p.tls.g_z) * (s.number(Factor::Qubit) * s.number(Factor::Tls));
    }
    // remove rounding asymmetry from the products above
    return Operator(0.5 * (h.mat() + h.mat().adjoint()));
}

Operator qubit_drive_operator(const CompositeSpace& space) {
    const Operator q = space.destroy(Factor::Qubit);
    return q + q.adjoint();
}

DriveTerm drive_hamiltonian(const CompositeSpace& space, double amplitude_mhz,
                            double frequency_ghz) {
    if (amplitude_mhz < 0.0) throw ParameterError("drive amplitude must be >= 0");
    return DriveTerm{0.5 * mhz_to_angular(amplitude_mhz) * qubit_drive_operator(space),
                     ghz_to_angular(frequency_ghz), amplitude_mhz, frequency_ghz};
}

double pure_dephasing(double gamma1, double gamma2, bool* clamped) {
    const double g = gamma2 - 0.5 * gamma1;
    if (clamped) *clamped = g < 0.0;
    return std::max(0.0, g);
}

CollapseSet collapse_operators(const SystemParams& p) {
    const CompositeSpace s(p);
    const auto& dc = p.decoherence;
    CollapseSet out;

    auto add_pair = [&](Factor f, double g1, double g2, const std::string& name) {
        if (g1 > 0.0) out.ops.push_back({s.destroy(f), g1, name + "_relax"});
        bool clamped = false;
        const double gphi = pure_dephasing(g1, g2, &clamped);
        if (clamped) {
            const std::string w = name + ": Gamma_2 < Gamma_1/2, pure dephasing clamped to 0";
            spdlog::warn("{}", w);
            out.warnings.push_back(w);
        }
        if (gphi > 0.0) out.ops.push_back({s.number(f), 2.0 * gphi, name + "_dephase"});
    };

    add_pair(Factor::Qubit, dc.gamma1_q, dc.gamma2_q, "qubit");
    if (dc.kappa_res > 0.0) {
        out.ops.push_back({s.destroy(Factor::Resonator), dc.kappa_res, "resonator_relax"});
    }
    add_pair(Factor::Tls, dc.gamma1_tls, dc.gamma2_tls, "tls");
    return out;
}

TruncationDrift truncation_drift(const SystemParams& p, int n_eigenvalues) {
    SystemParams big = p;
    big.qubit.n_levels *= 2;
    big.resonator.n_levels *= 2;
    const Eigen::VectorXd e0 = eigh(full_hamiltonian(p)).values;
    const Eigen::VectorXd e1 = eigh(full_hamiltonian(big)).values;
    const int n = std::min<int>(n_eigenvalues, static_cast<int>(e0.size()));
    double drift = 0.0;
    for (int k = 0; k < n; ++k) {
        drift = std::max(drift, std::abs((e1(k) - e1(0)) - (e0(k) - e0(0))));
    }
    return {n, units::angular_to_mhz(drift)};
}

}  // namespace qrtls
