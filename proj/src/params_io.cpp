#include "qrtls/params_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace qrtls {

namespace {

struct Accessor {
    ParamKey key;
    std::function<double(const SystemParams&)> get;
    std::function<void(SystemParams&, double)> set;
    std::function<bool(const SystemParams&)> present;
};

template <class M>
Accessor plain(ParamKey key, M member) {
    return {key, [member](const SystemParams& p) { return static_cast<double>(member(p)); },
            [member, key](SystemParams& p, double v) {
                using T = std::remove_reference_t<decltype(member(p))>;
                if constexpr (std::is_same_v<T, int>) {
                    if (v != std::floor(v)) {
                        throw ConfigError(std::string(key.name) + " must be an integer");
                    }
                    member(p) = static_cast<int>(v);
                } else {
                    member(p) = v;
                }
            },
            [](const SystemParams&) { return true; }};
}

template <class M>
Accessor opt(ParamKey key, M member) {
    return {key,
            [member, key](const SystemParams& p) {
                const auto& o = member(const_cast<SystemParams&>(p));
                if (!o) throw ConfigError(std::string(key.name) + " is not set");
                return *o;
            },
            [member](SystemParams& p, double v) { member(p) = v; },
            [member](const SystemParams& p) {
                return member(const_cast<SystemParams&>(p)).has_value();
            }};
}

const std::vector<Accessor>& registry() {
    static const std::vector<Accessor> r = {
        plain({"f_q_max", "GHz", "maximum qubit frequency", false},
              [](auto& p) -> auto& { return p.qubit.f_q_max; }),
        plain({"E_c", "GHz", "qubit charging energy E_c/h (alpha_q = -E_c)", false},
              [](auto& p) -> auto& { return p.qubit.E_c; }),
        plain({"d", "", "junction asymmetry", false},
              [](auto& p) -> auto& { return p.qubit.d; }),
        plain({"n_qubit", "", "qubit truncation", false},
              [](auto& p) -> auto& { return p.qubit.n_levels; }),
        opt({"f_q", "GHz", "qubit operating frequency (overrides flux)", true},
            [](auto& p) -> auto& { return p.qubit.f_q; }),
        opt({"C_tot", "fF", "total qubit capacitance", true},
            [](auto& p) -> auto& { return p.qubit.C_tot; }),
        opt({"I_c", "uA", "total critical current", true},
            [](auto& p) -> auto& { return p.qubit.I_c; }),
        opt({"A_JJ", "um^2", "junction area", true},
            [](auto& p) -> auto& { return p.qubit.A_JJ; }),
        plain({"f_res", "GHz", "resonator frequency", false},
              [](auto& p) -> auto& { return p.resonator.f_res; }),
        plain({"g_qr", "MHz", "resonator-qubit coupling", false},
              [](auto& p) -> auto& { return p.resonator.g_qr; }),
        plain({"n_res", "", "resonator truncation", false},
              [](auto& p) -> auto& { return p.resonator.n_levels; }),
        plain({"delta0", "GHz", "TLS gap energy delta0/h", false},
              [](auto& p) -> auto& { return p.tls.delta0; }),
        plain({"gamma", "MHz/V", "TLS strain coupling per piezo volt", false},
              [](auto& p) -> auto& { return p.tls.gamma; }),
        plain({"V0", "V", "piezo voltage of the TLS symmetry point", false},
              [](auto& p) -> auto& { return p.tls.V0; }),
        plain({"g_x", "MHz", "transversal TLS-qubit coupling", false},
              [](auto& p) -> auto& { return p.tls.g_x; }),
        plain({"g_z", "MHz", "longitudinal TLS-qubit coupling", false},
              [](auto& p) -> auto& { return p.tls.g_z; }),
        opt({"p_bar", "e*Angstrom", "TLS dipole moment component", true},
            [](auto& p) -> auto& { return p.tls.p_bar; }),
        plain({"barrier_t", "nm", "tunnel barrier thickness", false},
              [](auto& p) -> auto& { return p.tls.barrier_t; }),
        plain({"gamma1_q", "1/us", "qubit relaxation rate", false},
              [](auto& p) -> auto& { return p.decoherence.gamma1_q; }),
        plain({"gamma2_q", "1/us", "qubit dephasing rate", false},
              [](auto& p) -> auto& { return p.decoherence.gamma2_q; }),
        plain({"gamma1_tls", "1/us", "TLS relaxation rate", false},
              [](auto& p) -> auto& { return p.decoherence.gamma1_tls; }),
        plain({"gamma2_tls", "1/us", "TLS dephasing rate", false},
              [](auto& p) -> auto& { return p.decoherence.gamma2_tls; }),
        plain({"kappa_res", "1/us", "resonator decay rate", false},
              [](auto& p) -> auto& { return p.decoherence.kappa_res; }),
        plain({"flux", "Phi_0", "qubit flux bias", false},
              [](auto& p) -> auto& { return p.flux; }),
        plain({"piezo_v", "V", "piezo voltage", false},
              [](auto& p) -> auto& { return p.piezo_v; }),
    };
    return r;
}

const Accessor& find(std::string_view name) {
    for (const auto& a : registry()) {
        if (a.key.name == name) return a;
    }
    throw ConfigError("unknown parameter key '" + std::string(name) + "'");
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<ParamKey>& param_keys() {
    static const std::vector<ParamKey> keys = [] {
        std::vector<ParamKey> k;
        for (const auto& a : registry()) k.push_back(a.key);
        return k;
    }();
    return keys;
}

bool is_param_key(std::string_view name) {
    for (const auto& a : registry()) {
        if (a.key.name == name) return true;
    }
    return false;
}

double get_param(const SystemParams& p, std::string_view name) {
    return find(name).get(p);
}

void set_param(SystemParams& p, std::string_view name, double value) {
    find(name).set(p, value);
}

bool has_param(const SystemParams& p, std::string_view name) {
    return find(name).present(p);
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

SystemParams parse_params(std::string_view text, const std::string& source) {
    SystemParams p;
    std::vector<std::string> unknown;
    std::vector<std::string> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line =
            text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(source + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + std::string(line) + "'");
        }
        const std::string key(trim(line.substr(0, eq)));
        const std::string val(trim(line.substr(eq + 1)));
        if (!is_param_key(key)) {
            unknown.push_back(key);
            continue;
        }
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": key '" + key +
                              "' given more than once");
        }
        seen.push_back(key);
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), v);
        if (ec != std::errc{} || ptr != val.data() + val.size()) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": key '" + key +
                              "' has non-numeric value '" + val + "'");
        }
        set_param(p, key, v);
    }
    if (!unknown.empty()) {
        std::string msg = source + ": unknown parameter key(s):";
        for (const auto& k : unknown) msg += " '" + k + "'";
        throw ConfigError(msg);
    }
    try {
        p.validate();
    } catch (const ParameterError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return p;
}

SystemParams read_params_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open parameter file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_params(ss.str(), path.string());
}

std::string format_params(const SystemParams& p, std::string_view header_comment) {
    std::ostringstream os;
    if (!header_comment.empty()) {
        std::string_view rest = header_comment;
        while (!rest.empty()) {
            const auto nl = rest.find('\n');
            os << "# " << rest.substr(0, nl) << '\n';
            if (nl == std::string_view::npos) break;
            rest = rest.substr(nl + 1);
        }
    }
    for (const auto& a : registry()) {
        if (!a.present(p)) continue;
        os << a.key.name << " = " << format_double(a.get(p));
        os << "  # " << a.key.description;
        if (!a.key.unit.empty()) os << " [" << a.key.unit << "]";
        os << '\n';
    }
    return os.str();
}

void write_params_file(const std::filesystem::path& path, const SystemParams& p,
                       std::string_view header_comment) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write parameter file '" + path.string() + "'");
    out << format_params(p, header_comment);
}

}  // namespace qrtls
