// cli.cpp: subcommand wiring for the qrtls tool

#include "qrtls/cli.hpp"

#include "qrtls/analytics.hpp"
#include "qrtls/dynamics.hpp"
#include "qrtls/fitting.hpp"
#include "qrtls/io.hpp"
#include "qrtls/parallel.hpp"
#include "qrtls/params_io.hpp"
#include "qrtls/spectrum.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

namespace qrtls::cli {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& text, const std::string& what) {
    const std::string t = trim(text);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) {
        throw ConfigError(what + ": malformed number '" + text + "'");
    }
    return v;
}

int to_int(const std::string& text, const std::string& what) {
    const std::string t = trim(text);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
        throw ConfigError(what + ": malformed integer '" + text + "'");
    }
    return v;
}

std::pair<double, double> parse_range(const std::string& text, const std::string& option) {
    const auto parts = split(text, ':');
    if (parts.size() != 2) throw ConfigError(option + ": expected lo:hi, got '" + text + "'");
    const double lo = to_double(parts[0], option);
    const double hi = to_double(parts[1], option);
    if (!(lo < hi)) throw ConfigError(option + ": lo must be below hi");
    return {lo, hi};
}

// ------------------------------------------------------------------ shared options

struct Common {
    std::string params_file;
    std::vector<std::string> sets;
    int workers{std::max(1, static_cast<int>(std::thread::hardware_concurrency()))};
    bool quiet{false};
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--params", c.params_file, "parameter file (default: reference device)");
    sub->add_option("--set", c.sets, "override one parameter, key=value (repeatable)");
    sub->add_option("--workers", c.workers, "worker threads")
        ->envname("QRTLS_WORKERS")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--quiet", c.quiet, "only log errors");
}

SystemParams load_params(const Common& c) {
    SystemParams p = c.params_file.empty() ? reference_params() : read_params_file(c.params_file);
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set: expected key=value, got '" + s + "'");
        const std::string key = trim(s.substr(0, eq));
        if (!is_param_key(key)) throw ConfigError("--set: unknown parameter key '" + key + "'");
        set_param(p, key, to_double(s.substr(eq + 1), "--set " + key));
    }
    try {
        p.validate();
    } catch (const ParameterError& e) {
        throw ConfigError(std::string("invalid parameters: ") + e.what());
    }
    return p;
}

// Effective value of every option of the subcommand, in registration order.
Metadata config_echo(const CLI::App& app, const CLI::App& sub) {
    Metadata md;
    md.emplace_back("artifact_version", artifact_version);
    md.emplace_back("command", sub.get_name());
    auto add = [&md](const CLI::Option* o) {
        const std::string name = o->get_single_name();
        if (name == "help" || name == "version") return;
        std::string value;
        if (o->get_expected_max() == 0) {
            value = o->count() > 0 ? "true" : "false";
        } else if (o->count() > 0) {
            const auto& res = o->results();
            for (std::size_t i = 0; i < res.size(); ++i) value += (i ? ";" : "") + res[i];
        } else {
            value = o->get_default_str();
            if (value == "{}") value.clear();
        }
        md.emplace_back("config." + name, value);
    };
    for (const CLI::Option* o : app.get_options()) add(o);
    for (const CLI::Option* o : sub.get_options()) add(o);
    return md;
}

Metadata concat(Metadata a, const Metadata& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

// "-" is the supplied stream; anything else a file that must open.
class Output {
public:
    Output(const std::string& path, const std::string& option, std::ostream& fallback) {
        if (path == "-") {
            os_ = &fallback;
        } else {
            file_.open(path, std::ios::binary);
            if (!file_) throw ConfigError(option + ": cannot write '" + path + "'");
            os_ = &file_;
        }
    }
    std::ostream& stream() { return *os_; }
    void finish() {
        os_->flush();
        if (!*os_) throw std::runtime_error("write failed");
    }

private:
    std::ofstream file_;
    std::ostream* os_{nullptr};
};

void require_writable(const std::string& path, const std::string& option) {
    std::ofstream probe(path, std::ios::binary | std::ios::app);
    if (!probe) throw ConfigError(option + ": cannot write '" + path + "'");
}

void set_log_level(bool quiet) {
    static std::once_flag once;
    std::call_once(once, [] { spdlog::set_default_logger(spdlog::stderr_color_mt("qrtls")); });
    spdlog::set_level(quiet ? spdlog::level::err : spdlog::level::info);
}

// ------------------------------------------------------------------ spectrum

struct SpectrumOpts {
    std::string sweep_kind{"piezo"};
    std::string sweep{"0:80:161"};
    std::string window{"6.5:7.5"};
    int max_photons{3};
    double threshold{1e-3};
    bool all_pairs{false};
    std::string out{"-"};
    std::string peaks;
};

void add_spectrum(CLI::App* sub, SpectrumOpts& o) {
    sub->add_option("--sweep-kind", o.sweep_kind, "piezo | flux | qubit")
        ->check(CLI::IsMember({"piezo", "flux", "qubit"}));
    sub->add_option("--sweep", o.sweep, "sweep axis start:stop:points (V, flux quanta or GHz)");
    sub->add_option("--window", o.window, "frequency window lo:hi (GHz)");
    sub->add_option("--max-photons", o.max_photons, "highest photon number")->check(CLI::Range(1, 6));
    sub->add_option("--threshold", o.threshold, "relative weight below which lines are dropped")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_flag("--all-pairs", o.all_pairs, "include transitions out of excited states");
    sub->add_option("-o,--out", o.out, "catalog CSV (- for stdout)");
    sub->add_option("--peaks", o.peaks, "also write the surviving lines as a peaks CSV");
}

SweepKind sweep_kind_of(const std::string& s) {
    if (s == "qubit") return SweepKind::QubitFrequency;
    return parse_sweep_kind(s);
}

int run_spectrum(const Common& c, const SpectrumOpts& o, const Metadata& echo, std::ostream& out) {
    const SystemParams p = load_params(c);
    const auto axis = parse_axis(o.sweep, "--sweep").values();
    const auto [lo, hi] = parse_range(o.window, "--window");
    const SweepKind kind = sweep_kind_of(o.sweep_kind);
    CatalogOptions co;
    co.max_photons = o.max_photons;
    co.ground_only = !o.all_pairs;
    co.f_min_ghz = lo;
    co.f_max_ghz = hi;

    Output cat_out(o.out, "--out", out);
    std::optional<Output> peak_out;
    if (!o.peaks.empty()) peak_out.emplace(o.peaks, "--peaks", out);

    auto cats = sweep_transitions(p, kind, axis, co, c.workers);
    for (auto& cat : cats) apply_weight_threshold(cat, o.threshold);
    Metadata md = concat(echo, params_metadata(p));
    md.emplace_back("artifact", "transition_catalog");
    md.emplace_back("sweep_kind", sweep_name(kind));
    write_catalog_csv(cat_out.stream(), cats, md);
    cat_out.finish();

    if (peak_out) {
        const auto peaks = synthesize_peaks(p, kind, axis, co, o.threshold, c.workers);
        md.back() = {"sweep_kind", sweep_name(kind)};
        md[md.size() - 2] = {"artifact", "synthetic_peaks"};
        write_peaks_csv(peak_out->stream(), peaks, md);
        peak_out->finish();
    }
    return kOk;
}

// ------------------------------------------------------------------ drive-sim

struct DriveOpts {
    std::string sweep{"35:45:11"};
    std::string freq{"6.55:6.70:11"};
    double amplitude{0.0};
    double target_fwhm{0.0};
    std::string frame{"rotating"};
    std::string method{"evolve"};
    std::string stepper{"auto"};
    double t_max{20.0};
    double window{2.0};
    double epsilon{1e-3};
    double rtol{1e-8};
    double atol{1e-10};
    long max_steps{50'000'000};
    std::string out{"-"};
    std::string binary;
    std::string png;
    int png_scale{4};
    std::string peaks;
    double prominence{0.1};
    int smoothing{1};
};

void add_drive(CLI::App* sub, DriveOpts& o) {
    sub->add_option("--sweep", o.sweep, "piezo axis start:stop:points (V)");
    sub->add_option("--freq", o.freq, "drive frequency axis start:stop:points (GHz)");
    auto* amp = sub->add_option("--amplitude", o.amplitude, "drive amplitude (MHz)")
                    ->check(CLI::PositiveNumber);
    sub->add_option("--target-fwhm", o.target_fwhm,
                    "calibrate the amplitude to this bare-qubit linewidth (MHz)")
        ->check(CLI::PositiveNumber)
        ->excludes(amp);
    sub->add_option("--frame", o.frame, "rotating | lab")->check(CLI::IsMember({"rotating", "lab"}));
    sub->add_option("--method", o.method, "evolve | direct")->check(CLI::IsMember({"evolve", "direct"}));
    sub->add_option("--stepper", o.stepper, "auto | rk45 | propagator")
        ->check(CLI::IsMember({"auto", "rk45", "propagator"}));
    sub->add_option("--t-max", o.t_max, "steady-state time limit (us)")->check(CLI::PositiveNumber);
    sub->add_option("--window", o.window, "steady-state window (us)")->check(CLI::PositiveNumber);
    sub->add_option("--epsilon", o.epsilon, "relative change bound over the window")
        ->check(CLI::PositiveNumber);
    sub->add_option("--rtol", o.rtol, "integrator relative tolerance")->check(CLI::PositiveNumber);
    sub->add_option("--atol", o.atol, "integrator absolute tolerance")->check(CLI::PositiveNumber);
    sub->add_option("--max-steps", o.max_steps, "step budget per cell")->check(CLI::PositiveNumber);
    sub->add_option("-o,--out", o.out, "grid CSV (- for stdout)");
    sub->add_option("--binary", o.binary, "also write the float64 binary grid");
    sub->add_option("--png", o.png, "also write a heatmap");
    sub->add_option("--png-scale", o.png_scale, "heatmap pixels per cell")->check(CLI::Range(1, 64));
    sub->add_option("--peaks", o.peaks, "also write extracted peaks CSV");
    sub->add_option("--prominence", o.prominence, "peak prominence relative to the row maximum")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_option("--smoothing", o.smoothing, "moving-average width in bins")->check(CLI::Range(1, 99));
}

int run_drive(const Common& c, const DriveOpts& o, const Metadata& echo, std::ostream& out,
              std::ostream& err) {
    const SystemParams p = load_params(c);
    const auto sweep = parse_axis(o.sweep, "--sweep").values();
    const auto freq = parse_axis(o.freq, "--freq").values();
    if (freq.front() <= 0.0) throw ConfigError("--freq: frequencies must be positive");
    if (!(o.amplitude > 0.0) && !(o.target_fwhm > 0.0)) {
        throw ConfigError("--amplitude: a drive amplitude (MHz) or --target-fwhm is required");
    }

    GridOptions g;
    g.frame = parse_frame(o.frame);
    g.method = o.method == "direct" ? SteadyStateMethod::Direct : SteadyStateMethod::Evolve;
    if (g.method == SteadyStateMethod::Direct && g.frame != Frame::Rotating) {
        throw ConfigError("--method: direct needs --frame rotating");
    }
    g.integrator.stepper = parse_stepper(o.stepper);
    if (g.integrator.stepper == Stepper::Propagator && g.frame == Frame::Lab) {
        throw ConfigError("--stepper: propagator needs --frame rotating");
    }
    g.integrator.rtol = o.rtol;
    g.integrator.atol = o.atol;
    g.integrator.max_steps = o.max_steps;
    g.criterion.t_max = o.t_max;
    g.criterion.window = o.window;
    g.criterion.epsilon = o.epsilon;
    if (o.window > o.t_max) throw ConfigError("--window: must not exceed --t-max");
    g.workers = c.workers;
    const std::size_t rows = sweep.size();
    if (!c.quiet) {
        g.on_row_done = [&err, rows](std::size_t row, std::size_t done) {
            err << "row " << row << " done (" << done << "/" << rows << ")\n" << std::flush;
        };
    }

    Output grid_out(o.out, "--out", out);
    std::optional<Output> peak_out;
    if (!o.peaks.empty()) peak_out.emplace(o.peaks, "--peaks", out);
    if (!o.binary.empty()) require_writable(o.binary, "--binary");
    if (!o.png.empty()) require_writable(o.png, "--png");

    const double amplitude = o.target_fwhm > 0.0 ? calibrate_amplitude(p, o.target_fwhm) : o.amplitude;
    auto grid = spectroscopy_grid(p, sweep, freq, amplitude, g);
    grid.metadata = concat(echo, grid.metadata);
    if (o.target_fwhm > 0.0) grid.metadata.emplace_back("calibrated_for_fwhm_mhz", format_double(o.target_fwhm));

    write_grid_csv(grid_out.stream(), grid);
    grid_out.finish();
    if (!o.binary.empty()) write_grid_binary(o.binary, grid);
    if (!o.png.empty()) write_grid_png(o.png, grid, o.png_scale);
    if (peak_out) {
        PeakOptions po;
        po.rel_prominence = o.prominence;
        po.smoothing_width = o.smoothing;
        Metadata md = grid.metadata;
        md.emplace_back("peaks.rel_prominence", format_double(o.prominence));
        md.emplace_back("peaks.smoothing_width", std::to_string(o.smoothing));
        write_peaks_csv(peak_out->stream(), extract_peaks(grid, po), md);
        peak_out->finish();
    }

    const Index nan = grid.nan_count();
    if (nan == grid.values.size()) {
        spdlog::error("drive-sim: every cell failed");
        return kNumericalFailure;
    }
    if (nan > 0) {
        spdlog::warn("drive-sim: {} of {} cells are NaN", nan, grid.values.size());
        return kPartialGrid;
    }
    return kOk;
}

// ------------------------------------------------------------------ fit

struct FitOpts {
    std::string peaks;
    std::vector<std::string> free;
    std::string seed_params;
    std::string sweep_kind{"piezo"};
    int max_photons{3};
    double threshold{1e-3};
    double margin{0.05};
    bool amplitude_weights{false};
    int starts{1};
    std::uint64_t rng_seed{12345};
    int simplex_iter{400};
    int lm_iter{60};
    std::string out{"fit"};
};

void add_fit(CLI::App* sub, FitOpts& o) {
    sub->add_option("--peaks", o.peaks, "observed peaks CSV")->required();
    sub->add_option("--free", o.free, "free parameter name:lo:hi (repeatable)")->required();
    sub->add_option("--seed-params", o.seed_params,
                    "starting point (default: the fixed parameters)");
    sub->add_option("--sweep-kind", o.sweep_kind, "piezo | flux | qubit")
        ->check(CLI::IsMember({"piezo", "flux", "qubit"}));
    sub->add_option("--max-photons", o.max_photons, "highest photon number")->check(CLI::Range(1, 6));
    sub->add_option("--threshold", o.threshold, "relative catalog weight floor")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--margin", o.margin, "catalog window margin (GHz)")->check(CLI::NonNegativeNumber);
    sub->add_flag("--amplitude-weights", o.amplitude_weights, "weight residuals by peak amplitude");
    sub->add_option("--starts", o.starts, "multi-start count")->check(CLI::Range(1, 1000));
    sub->add_option("--seed", o.rng_seed, "RNG seed for extra starts");
    sub->add_option("--simplex-iter", o.simplex_iter, "Nelder-Mead iteration cap")->check(CLI::Range(0, 100000));
    sub->add_option("--lm-iter", o.lm_iter, "Levenberg-Marquardt iteration cap")->check(CLI::Range(0, 100000));
    sub->add_option("-o,--out", o.out, "report prefix");
}

int run_fit(const Common& c, const FitOpts& o, const Metadata& echo, std::ostream& out) {
    FitProblem problem;
    problem.fixed = load_params(c);
    SystemParams seed = problem.fixed;
    if (!o.seed_params.empty()) {
        Common sc = c;
        sc.params_file = o.seed_params;
        seed = load_params(sc);
    }
    {
        std::ifstream is(o.peaks);
        if (!is) throw ConfigError("--peaks: cannot open '" + o.peaks + "'");
        try {
            problem.observations = read_peaks_csv(is);
        } catch (const std::runtime_error& e) {
            throw ConfigError("--peaks: " + std::string(e.what()));
        }
    }
    for (const auto& f : o.free) {
        const auto parts = split(f, ':');
        if (parts.size() != 3) throw ConfigError("--free: expected name:lo:hi, got '" + f + "'");
        const std::string name = trim(parts[0]);
        if (!is_param_key(name)) throw ConfigError("--free: unknown parameter key '" + name + "'");
        problem.free_params.push_back(
            {name, to_double(parts[1], "--free " + name), to_double(parts[2], "--free " + name)});
    }
    problem.sweep = sweep_kind_of(o.sweep_kind);
    problem.max_photons = o.max_photons;
    problem.weight_threshold = o.threshold;
    problem.window_margin_ghz = o.margin;
    problem.amplitude_weights = o.amplitude_weights;
    try {
        problem.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    for (const auto& b : problem.free_params) {
        const double s = get_param(seed, b.name);
        if (s < b.lo || s > b.hi) {
            throw ConfigError("--free " + b.name + ": seed value " + format_double(s) + " is outside the bounds");
        }
    }
    require_writable(o.out + ".txt", "--out");

    FitStrategy strategy;
    strategy.starts = o.starts;
    strategy.rng_seed = o.rng_seed;
    strategy.simplex_max_iter = o.simplex_iter;
    strategy.lm_max_iter = o.lm_iter;
    strategy.workers = c.workers;
    const FitResult r = fit(problem, seed, strategy);
    write_fit_report(o.out, problem, r, echo);
    write_fit_summary(out, problem, r);
    if (!r.converged) {
        spdlog::error("fit did not converge: {}", r.message);
        return kNumericalFailure;
    }
    return kOk;
}

// ------------------------------------------------------------------ analytics

struct AnalyticsOpts {
    std::string csv;
    bool t1_study{false};
    std::string curves;
    std::vector<double> detunings{300.0, 400.0, 500.0, 600.0};
    std::string gz{"0:20:11"};
};

void add_analytics(CLI::App* sub, AnalyticsOpts& o) {
    sub->add_option("--csv", o.csv, "also write key,value,unit CSV");
    sub->add_flag("--t1-study", o.t1_study, "print the T1 unit-convention study");
    sub->add_option("--curves", o.curves,
                    "write <prefix>_geff.csv (cross-resonance law) and <prefix>_gz.csv (two-photon shift)");
    sub->add_option("--detunings", o.detunings, "qubit-resonator detunings for the g_eff curve (MHz)");
    sub->add_option("--gz", o.gz, "g_z axis start:stop:points (MHz) for the shift curve");
}

struct Row {
    std::string key;
    double value;
    std::string unit;
};

std::string display(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

int run_analytics(const Common& c, const AnalyticsOpts& o, const Metadata& echo, std::ostream& out) {
    const SystemParams p = load_params(c);
    std::optional<Output> csv;
    if (!o.csv.empty()) csv.emplace(o.csv, "--csv", out);
    const auto d = analytics::derived_quantities(p);

    std::vector<Row> rows{
        {"f_q", d.f_q_ghz, "GHz"},
        {"delta_qr", d.delta_qr_mhz, "MHz"},
        {"chi", d.chi_mhz, "MHz"},
        {"g_eff", d.g_eff_mhz, "MHz"},
        {"gamma_sum", d.gamma_sum, "1/us"},
        {"delta_qt", d.delta_qt_mhz, "MHz"},
        {"t1_est", d.t1_est_us, "us"},
        {"C_tot", d.c_tot_ff, "fF"},
        {"E_c_from_C_tot", 1e3 * analytics::charging_energy_from_capacitance(d.c_tot_ff), "MHz"},
        {"p_bar", d.p_bar_eA, "e*A"},
        {"V_rms", d.v_rms, "V"},
        {"field", d.field, "V/m"},
    };
    for (std::size_t i = 0; i < d.failure_voltages.size(); ++i) {
        rows.push_back({"failure_v" + std::to_string(i), d.failure_voltages[i], "V"});
    }
    std::size_t w = 0;
    for (const auto& r : rows) w = std::max(w, r.key.size());
    for (const auto& r : rows) {
        out << std::left << std::setw(static_cast<int>(w) + 2) << r.key << std::right << std::setw(14)
            << display(r.value) << "  " << r.unit << "\n";
    }
    out << "t1 convention: " << analytics::T1Convention{}.describe() << "\n";
    for (const auto& wmsg : d.warnings) out << "warning: " << wmsg << "\n";

    if (o.t1_study) {
        out << "\nT1 convention study (target 1.0 us at 1 GHz, 3.7 us at 2 GHz)\n";
        for (const auto& s : analytics::t1_convention_study(p.decoherence.gamma2_q)) {
            out << std::left << std::setw(60) << s.convention.describe() << std::right << std::setw(12)
                << display(s.t1_low_detuning_us) << std::setw(12) << display(s.t1_high_detuning_us)
                << (s.reproduces_range ? "  reproduces" : "") << "\n";
        }
    }

    if (csv) {
        auto& os = csv->stream();
        Metadata md = concat(echo, params_metadata(p));
        md.emplace_back("artifact", "derived_quantities");
        md.emplace_back("t1_convention", analytics::T1Convention{}.describe());
        for (const auto& [k, v] : md) os << "# " << k << "=" << v << "\n";
        os << "key,value,unit\n";
        for (const auto& r : rows) os << r.key << "," << format_double(r.value) << "," << r.unit << "\n";
        csv->finish();
    }

    if (!o.curves.empty()) {
        Output geff_out(o.curves + "_geff.csv", "--curves", out);
        Output gz_out(o.curves + "_gz.csv", "--curves", out);
        std::vector<SystemParams> sets;
        for (double delta : o.detunings) {
            if (!(delta > 0.0)) throw ConfigError("--detunings: values must be positive");
            SystemParams q = p;
            q.qubit.f_q = p.resonator.f_res + 1e-3 * delta;
            sets.push_back(q);
        }
        const auto geff = geff_vs_detuning(sets, {}, c.workers);
        Metadata md = concat(echo, params_metadata(p));
        md.emplace_back("artifact", "geff_vs_detuning");
        auto& gs = geff_out.stream();
        for (const auto& [k, v] : md) gs << "# " << k << "=" << v << "\n";
        gs << "detuning_mhz,geff_mhz,analytic_mhz,location_v\n";
        for (const auto& r : geff) {
            gs << format_double(r.detuning_mhz) << "," << format_double(r.geff_mhz) << ","
               << format_double(r.analytic_mhz) << "," << format_double(r.location_v) << "\n";
        }
        geff_out.finish();

        const auto shifts = two_photon_shift_vs_gz(p, parse_axis(o.gz, "--gz").values());
        md.back() = {"artifact", "two_photon_shift_vs_gz"};
        auto& zs = gz_out.stream();
        for (const auto& [k, v] : md) zs << "# " << k << "=" << v << "\n";
        zs << "g_z_mhz,freq_ghz,shift_mhz\n";
        for (const auto& s : shifts) {
            zs << format_double(s.g_z_mhz) << "," << format_double(s.freq_ghz) << ","
               << format_double(s.shift_mhz) << "\n";
        }
        gz_out.finish();
    }
    return kOk;
}

// ------------------------------------------------------------------ locate-failure

int run_locate(const Common& c, std::ostream& out) {
    const SystemParams p = load_params(c);
    const auto v = analytics::readout_failure_locator(p);
    out << "V0 = " << display(p.tls.V0) << " V, f_res = " << display(p.resonator.f_res) << " GHz\n";
    if (v.empty()) {
        out << "no crossing: f_res is below delta0\n";
        return kOk;
    }
    for (double x : v) {
        out << "failure at V = " << std::fixed << std::setprecision(4) << x << " V  (V - V0 = " << std::showpos
            << x - p.tls.V0 << std::noshowpos << " V)\n"
            << std::defaultfloat;
    }
    return kOk;
}

// ------------------------------------------------------------------ bench

struct BenchOpts {
    std::string dims{"2,2,2;4,4,2;6,6,2"};
    int cells{4};
    double duration{0.02};
    std::vector<int> workers;
    std::string out{"-"};
};

void add_bench(CLI::App* sub, BenchOpts& o) {
    sub->add_option("--dims", o.dims, "qubit,resonator,tls levels; separated by ';'");
    sub->add_option("--cells", o.cells, "cells per measurement")->check(CLI::Range(1, 100000));
    sub->add_option("--duration", o.duration, "simulated time per cell (us)")->check(CLI::PositiveNumber);
    sub->add_option("--worker-counts", o.workers, "worker counts to time (default: 1 and all threads)")
        ->check(CLI::PositiveNumber);
    sub->add_option("-o,--out", o.out, "JSON-lines report (- for stdout)");
}

struct BenchRun {
    double seconds;
    std::vector<double> values;
    double mean_steps;
};

int run_bench(const Common& c, const BenchOpts& o, const Metadata& echo, std::ostream& out) {
    using ojson = nlohmann::ordered_json;
    SystemParams base = load_params(c);
    std::vector<std::array<int, 3>> dims;
    for (const auto& item : split(o.dims, ';')) {
        const auto parts = split(item, ',');
        if (parts.size() != 3) throw ConfigError("--dims: expected q,r,t, got '" + item + "'");
        std::array<int, 3> d{to_int(parts[0], "--dims"), to_int(parts[1], "--dims"), to_int(parts[2], "--dims")};
        if (d[2] != 2) throw ConfigError("--dims: the TLS has exactly 2 levels");
        if (d[0] < 2 || d[1] < 1) throw ConfigError("--dims: need at least 2 qubit and 1 resonator levels");
        dims.push_back(d);
    }
    const int hw = std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
    std::vector<int> counts = o.workers;
    if (counts.empty()) {
        counts.push_back(1);
        if (hw > 1) counts.push_back(hw);
    }
    Output report(o.out, "--out", out);
    auto& os = report.stream();

    ojson head{{"record", "config"}, {"hardware_threads", hw}};
    ojson cfg = ojson::object();
    for (const auto& [k, v] : echo) cfg[k] = v;
    head["config"] = cfg;
    os << head.dump() << "\n";

    std::vector<std::pair<double, double>> cost;  // (D, seconds per cell) at counts.front()
    for (const auto& d : dims) {
        SystemParams p = base;
        p.qubit.n_levels = d[0];
        p.resonator.n_levels = d[1];
        p.piezo_v = p.tls.V0 + 5.0;
        p.validate();
        const double fq = p.qubit_frequency();
        const auto freqs = linspace(fq - 0.01, fq + 0.01, std::max(2, o.cells));
        IntegratorOptions integ;
        integ.stepper = Stepper::RungeKutta;

        auto timed = [&](int workers) {
            const auto t0 = std::chrono::steady_clock::now();
            const auto res = parallel_map(static_cast<std::size_t>(o.cells), workers, [&](std::size_t i) {
                auto spec = driven_spec(p, 1.0, freqs[i], Frame::Rotating, integ);
                spec.t_max = o.duration;
                const auto r = evolve(spec, DensityMatrix::basis(p.dim(), 0));
                return std::pair{r.observables.back()[0], static_cast<double>(r.diagnostics.steps)};
            });
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            BenchRun b{secs, {}, 0.0};
            for (const auto& [v, s] : res) {
                b.values.push_back(v);
                b.mean_steps += s / static_cast<double>(res.size());
            }
            return b;
        };

        std::vector<BenchRun> runs;
        for (int w : counts) {
            runs.push_back(timed(w));
            const auto& b = runs.back();
            const double dim = static_cast<double>(p.dim());
            os << ojson{{"record", "cells"},
                        {"dims", d},
                        {"dim", p.dim()},
                        {"workers", w},
                        {"cells", o.cells},
                        {"duration_us", o.duration},
                        {"stepper", "rk45"},
                        {"seconds", b.seconds},
                        {"cells_per_second", o.cells / b.seconds},
                        {"seconds_per_simulated_us", b.seconds / (o.cells * o.duration) * std::min(w, o.cells)},
                        {"mean_steps_per_cell", b.mean_steps}}
                      .dump()
               << "\n";
            if (w == counts.front()) cost.emplace_back(dim, b.seconds / o.cells * std::min(w, o.cells));
        }
        for (std::size_t i = 1; i < counts.size(); ++i) {
            const int w = counts[i];
            const double s = runs.front().seconds / runs[i].seconds * counts.front();
            os << ojson{{"record", "speedup"}, {"dims", d}, {"workers", w}, {"speedup", s},
                        {"target", 0.6 * w}, {"met", s >= 0.6 * w}, {"within_hardware", w <= hw}}
                      .dump()
               << "\n";
        }
        if (counts.size() == 1) {
            os << ojson{{"record", "speedup"}, {"dims", d}, {"workers", counts.front()},
                        {"speedup", nullptr}, {"note", "one worker count timed; scaling not measured"}}
                      .dump()
               << "\n";
        }
        // Repeat of the first configuration plus every worker count must agree bit for bit.
        runs.push_back(timed(counts.front()));
        double diff = 0.0;
        for (const auto& r : runs) {
            for (std::size_t i = 0; i < r.values.size(); ++i) {
                diff = std::max(diff, std::abs(r.values[i] - runs.front().values[i]));
            }
        }
        os << ojson{{"record", "determinism"}, {"dims", d}, {"runs", runs.size()},
                    {"max_abs_diff", diff}, {"identical", diff == 0.0}}
                  .dump()
           << "\n";
    }

    if (cost.size() >= 2) {
        // Least-squares slope of log(cost) against log(D).
        double mx = 0, my = 0;
        for (const auto& [x, y] : cost) {
            mx += std::log(x);
            my += std::log(y);
        }
        mx /= cost.size();
        my /= cost.size();
        double sxy = 0, sxx = 0;
        for (const auto& [x, y] : cost) {
            sxy += (std::log(x) - mx) * (std::log(y) - my);
            sxx += (std::log(x) - mx) * (std::log(x) - mx);
        }
        ojson pts = ojson::array();
        for (const auto& [x, y] : cost) pts.push_back({x, y});
        const auto& [dmax, cmax] = cost.back();
        os << ojson{{"record", "scaling"},
                    {"exponent", sxy / sxx},
                    {"points", pts},
                    {"largest_dim", dmax},
                    {"projected_seconds_per_20us_cell", cmax / o.duration * 20.0}}
                  .dump()
           << "\n";
    }
    report.finish();
    return kOk;
}

}  // namespace

std::vector<double> AxisSpec::values() const { return linspace(start, stop, points); }

AxisSpec parse_axis(const std::string& text, const std::string& option) {
    const auto parts = split(text, ':');
    if (parts.size() != 3) throw ConfigError(option + ": expected start:stop:points, got '" + text + "'");
    AxisSpec a{to_double(parts[0], option), to_double(parts[1], option), to_int(parts[2], option)};
    if (a.points < 2) throw ConfigError(option + ": need at least 2 points");
    if (a.start == a.stop) throw ConfigError(option + ": start and stop coincide");
    return a;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Spectroscopy of a transmon coupled to a readout resonator and a strain-tuned TLS", "qrtls"};
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "TOML/INI file with option values; flags take precedence");
    app.set_version_flag("--version", artifact_version);
    app.require_subcommand(1);

    Common common;
    SpectrumOpts so;
    DriveOpts dop;
    FitOpts fo;
    AnalyticsOpts ao;
    BenchOpts bo;

    auto* spectrum = app.add_subcommand("spectrum", "transition catalog over a sweep");
    add_common(spectrum, common);
    add_spectrum(spectrum, so);
    auto* drive = app.add_subcommand("drive-sim", "driven steady-state spectroscopy grid");
    add_common(drive, common);
    add_drive(drive, dop);
    auto* fitc = app.add_subcommand("fit", "fit model transitions to observed peaks");
    add_common(fitc, common);
    add_fit(fitc, fo);
    auto* an = app.add_subcommand("analytics", "closed-form derived quantities");
    add_common(an, common);
    add_analytics(an, ao);
    auto* bench = app.add_subcommand("bench", "drive-sim throughput, scaling and determinism");
    add_common(bench, common);
    add_bench(bench, bo);
    auto* locate = app.add_subcommand("locate-failure", "piezo voltages where the TLS meets the resonator");
    add_common(locate, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    set_log_level(common.quiet);
    CLI::App* sub = app.get_subcommands().front();
    try {
        const Metadata echo = config_echo(app, *sub);
        if (sub == spectrum) return run_spectrum(common, so, echo, out);
        if (sub == drive) return run_drive(common, dop, echo, out, err);
        if (sub == fitc) return run_fit(common, fo, echo, out);
        if (sub == an) return run_analytics(common, ao, echo, out);
        if (sub == bench) return run_bench(common, bo, echo, out);
        return run_locate(common, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kNumericalFailure;
    }
}

}  // namespace qrtls::cli
