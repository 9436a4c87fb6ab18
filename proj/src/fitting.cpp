// fitting.cpp: peak extraction, residuals, simplex + Levenberg-Marquardt fits

#include "qrtls/fitting.hpp"

#include "qrtls/analytics.hpp"
#include "qrtls/parallel.hpp"
#include "qrtls/params_io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace qrtls {

namespace {

constexpr double nan_v = std::numeric_limits<double>::quiet_NaN();

std::vector<double> smooth(const std::vector<double>& y, int width) {
    if (width <= 1) return y;
    const int h = width / 2;
    const int n = static_cast<int>(y.size());
    std::vector<double> out(y.size(), nan_v);
    for (int i = 0; i < n; ++i) {
        if (std::isnan(y[static_cast<std::size_t>(i)])) continue;
        double s = 0.0;
        int c = 0;
        for (int j = std::max(0, i - h); j <= std::min(n - 1, i + h); ++j) {
            const double v = y[static_cast<std::size_t>(j)];
            if (!std::isnan(v)) {
                s += v;
                ++c;
            }
        }
        out[static_cast<std::size_t>(i)] = s / c;
    }
    return out;
}

// Vertex of the parabola through three points.
std::pair<double, double> parabola_vertex(double x0, double y0, double x1, double y1, double x2,
                                          double y2) {
    const double d01 = (y1 - y0) / (x1 - x0);
    const double d12 = (y2 - y1) / (x2 - x1);
    const double a = (d12 - d01) / (x2 - x0);
    if (!(a < 0.0)) return {x1, y1};
    const double b = d01 - a * (x0 + x1);
    const double xv = std::clamp(-b / (2.0 * a), x0, x2);
    const double yv = y1 + (xv - x1) * (d01 + a * (xv - x0));
    return {xv, yv};
}

std::vector<PeakObservation> row_peaks(double sweep, const std::vector<double>& f,
                                       const std::vector<double>& raw, const PeakOptions& opts) {
    const auto y = smooth(raw, opts.smoothing_width);
    const std::size_t n = y.size();
    double ymax = -std::numeric_limits<double>::infinity();
    for (double v : y) {
        if (!std::isnan(v)) ymax = std::max(ymax, v);
    }
    std::vector<PeakObservation> out;
    if (!std::isfinite(ymax) || n < 3) return out;
    const double min_prom = opts.rel_prominence * std::abs(ymax);

    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double yi = y[i];
        if (std::isnan(yi) || std::isnan(y[i - 1]) || std::isnan(y[i + 1])) continue;
        if (!(yi > y[i - 1] && yi >= y[i + 1])) continue;
        // plateau: only its left edge counts
        std::size_t r_end = i;
        while (r_end + 1 < n && y[r_end + 1] == yi) ++r_end;
        if (r_end + 1 < n && !std::isnan(y[r_end + 1]) && y[r_end + 1] > yi) continue;

        // topographic prominence; NaN bounds a search like an edge
        double left_min = yi;
        for (std::size_t j = i; j-- > 0;) {
            if (std::isnan(y[j]) || y[j] > yi) break;
            left_min = std::min(left_min, y[j]);
        }
        double right_min = yi;
        for (std::size_t j = r_end + 1; j < n; ++j) {
            if (std::isnan(y[j]) || y[j] > yi) break;
            right_min = std::min(right_min, y[j]);
        }
        const double prom = yi - std::max(left_min, right_min);
        if (!(prom > 0.0) || prom < min_prom) continue;

        PeakObservation p;
        p.sweep_value = sweep;
        const auto [fc, yc] = parabola_vertex(f[i - 1], y[i - 1], f[i], yi, f[i + 1], y[i + 1]);
        p.freq_ghz = fc;
        p.amplitude = yc;

        const double half = yc - 0.5 * prom;
        double lo = nan_v, hi = nan_v;
        for (std::size_t j = i; j-- > 0;) {
            if (std::isnan(y[j])) break;
            if (y[j] < half) {
                lo = f[j] + (half - y[j]) * (f[j + 1] - f[j]) / (y[j + 1] - y[j]);
                break;
            }
        }
        for (std::size_t j = r_end + 1; j < n; ++j) {
            if (std::isnan(y[j])) break;
            if (y[j] < half) {
                hi = f[j - 1] + (y[j - 1] - half) * (f[j] - f[j - 1]) / (y[j - 1] - y[j]);
                break;
            }
        }
        double fwhm_ghz;
        if (!std::isnan(lo) && !std::isnan(hi)) {
            fwhm_ghz = hi - lo;
        } else if (!std::isnan(lo)) {
            fwhm_ghz = 2.0 * (fc - lo);
        } else if (!std::isnan(hi)) {
            fwhm_ghz = 2.0 * (hi - fc);
        } else {
            fwhm_ghz = f[i + 1] - f[i - 1];
        }
        p.fwhm_mhz = std::max(1e3 * fwhm_ghz, 1e-9);
        out.push_back(p);
    }
    return out;
}

void write_metadata(std::ostream& os, const Metadata& md) {
    for (const auto& [k, v] : md) os << "# " << k << '=' << v << '\n';
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double to_double(const std::string& s, const char* what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        if (s == "nan") return nan_v;
        throw std::runtime_error(std::string("peaks CSV: bad ") + what + " '" + s + "'");
    }
}

}  // namespace

std::vector<PeakObservation> extract_peaks(const SpectroscopyGrid& grid, const PeakOptions& opts) {
    if (!(opts.rel_prominence >= 0.0)) throw std::invalid_argument("extract_peaks: prominence must be >= 0");
    if (opts.smoothing_width < 1) throw std::invalid_argument("extract_peaks: smoothing width must be >= 1");
    if (static_cast<std::size_t>(grid.cols()) != grid.freq.size() ||
        static_cast<std::size_t>(grid.rows()) != grid.sweep.size()) {
        throw DimensionError("extract_peaks: grid axes do not match its values");
    }
    std::vector<PeakObservation> out;
    for (Index r = 0; r < grid.rows(); ++r) {
        std::vector<double> row(grid.freq.size());
        bool any = false;
        for (Index c = 0; c < grid.cols(); ++c) {
            row[static_cast<std::size_t>(c)] = grid.values(r, c);
            any = any || !std::isnan(grid.values(r, c));
        }
        if (!any) {
            spdlog::warn("extract_peaks: sweep value {} has no finite cells; skipped",
                         grid.sweep[static_cast<std::size_t>(r)]);
            continue;
        }
        auto peaks = row_peaks(grid.sweep[static_cast<std::size_t>(r)], grid.freq, row, opts);
        out.insert(out.end(), peaks.begin(), peaks.end());
    }
    return out;
}

void write_peaks_csv(std::ostream& os, const std::vector<PeakObservation>& peaks,
                     const Metadata& metadata) {
    write_metadata(os, metadata);
    os << "sweep_value,freq_GHz,amplitude,fwhm_MHz,n_photons,weight\n";
    for (const auto& p : peaks) {
        os << format_double(p.sweep_value) << ',' << format_double(p.freq_ghz) << ','
           << format_double(p.amplitude) << ',' << format_double(p.fwhm_mhz) << ','
           << (p.n_photons ? std::to_string(*p.n_photons) : std::string{}) << ','
           << format_double(p.weight) << '\n';
    }
}

std::vector<PeakObservation> read_peaks_csv(std::istream& is, Metadata* metadata) {
    std::vector<PeakObservation> out;
    std::string line;
    bool header = false;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (metadata) {
                const auto body = line.substr(line.find_first_not_of("# "));
                const auto eq = body.find('=');
                if (eq != std::string::npos) metadata->emplace_back(body.substr(0, eq), body.substr(eq + 1));
            }
            continue;
        }
        if (!header) {
            if (line.rfind("sweep_value,", 0) != 0) throw std::runtime_error("peaks CSV: missing header row");
            header = true;
            continue;
        }
        const auto cells = split_csv(line);
        if (cells.size() != 6) throw std::runtime_error("peaks CSV: expected 6 columns in '" + line + "'");
        PeakObservation p;
        p.sweep_value = to_double(cells[0], "sweep_value");
        p.freq_ghz = to_double(cells[1], "freq_GHz");
        p.amplitude = to_double(cells[2], "amplitude");
        p.fwhm_mhz = to_double(cells[3], "fwhm_MHz");
        if (!cells[4].empty()) p.n_photons = static_cast<int>(to_double(cells[4], "n_photons"));
        p.weight = to_double(cells[5], "weight");
        out.push_back(p);
    }
    return out;
}

// ------------------------------------------------------------------ problem

void FitProblem::validate() const {
    if (observations.empty()) throw std::invalid_argument("FitProblem: no observations");
    if (free_params.empty()) throw std::invalid_argument("FitProblem: no free parameters");
    std::set<std::string> seen;
    for (const auto& b : free_params) {
        if (!is_param_key(b.name)) throw ConfigError("FitProblem: unknown parameter '" + b.name + "'");
        if (b.name == "n_qubit" || b.name == "n_res") {
            throw ConfigError("FitProblem: truncation '" + b.name + "' cannot be fitted");
        }
        if (!seen.insert(b.name).second) throw ConfigError("FitProblem: duplicate parameter '" + b.name + "'");
        if (!std::isfinite(b.lo) || !std::isfinite(b.hi) || !(b.lo < b.hi)) {
            throw ConfigError("FitProblem: bounds of '" + b.name + "' must be finite with lo < hi");
        }
    }
    for (const auto& o : observations) {
        if (!(o.weight >= 0.0) || !std::isfinite(o.freq_ghz) || !std::isfinite(o.sweep_value)) {
            throw std::invalid_argument("FitProblem: observation with non-finite value or negative weight");
        }
        if (o.n_photons && (*o.n_photons < 1 || *o.n_photons > max_photons)) {
            throw std::invalid_argument("FitProblem: assigned photon number outside 1..max_photons");
        }
    }
    if (max_photons < 1) throw std::invalid_argument("FitProblem: max_photons must be >= 1");
}

double Residuals::loss() const {
    return (weights.array() * mhz.array().square()).sum();
}

SystemParams apply_free(const FitProblem& problem, const Eigen::VectorXd& x) {
    if (static_cast<std::size_t>(x.size()) != problem.free_params.size()) {
        throw DimensionError("apply_free: value count does not match free parameters");
    }
    SystemParams p = problem.fixed;
    for (std::size_t i = 0; i < problem.free_params.size(); ++i) {
        set_param(p, problem.free_params[i].name, x(static_cast<Index>(i)));
    }
    return p;
}

Eigen::VectorXd free_values(const FitProblem& problem, const SystemParams& p) {
    Eigen::VectorXd x(static_cast<Index>(problem.free_params.size()));
    for (std::size_t i = 0; i < problem.free_params.size(); ++i) {
        x(static_cast<Index>(i)) = get_param(p, problem.free_params[i].name);
    }
    return x;
}

std::vector<PeakObservation> synthesize_peaks(const SystemParams& p, SweepKind kind,
                                              const std::vector<double>& sweep,
                                              const CatalogOptions& opts, double weight_threshold,
                                              int workers) {
    auto catalogs = sweep_transitions(p, kind, sweep, opts, workers);
    std::vector<PeakObservation> out;
    for (auto& c : catalogs) {
        apply_weight_threshold(c, weight_threshold);
        for (const auto& t : c.transitions) {
            if (t.from_idx != 0) continue;
            PeakObservation o;
            o.sweep_value = c.sweep_value;
            o.freq_ghz = t.freq_ghz;
            o.amplitude = t.weight;
            o.n_photons = t.n_photons;
            out.push_back(o);
        }
    }
    return out;
}

Residuals model_residuals(const FitProblem& problem, const SystemParams& params, int workers) {
    const auto& obs = problem.observations;
    std::vector<double> sweeps;
    double fmin = std::numeric_limits<double>::infinity(), fmax = -fmin;
    for (const auto& o : obs) {
        sweeps.push_back(o.sweep_value);
        fmin = std::min(fmin, o.freq_ghz);
        fmax = std::max(fmax, o.freq_ghz);
    }
    std::sort(sweeps.begin(), sweeps.end());
    sweeps.erase(std::unique(sweeps.begin(), sweeps.end()), sweeps.end());

    CatalogOptions copts;
    copts.max_photons = problem.max_photons;
    copts.ground_only = true;
    copts.f_min_ghz = fmin - problem.window_margin_ghz;
    copts.f_max_ghz = fmax + problem.window_margin_ghz;
    auto catalogs = sweep_transitions(params, problem.sweep, sweeps, copts, workers);
    for (auto& c : catalogs) apply_weight_threshold(c, problem.weight_threshold);

    Residuals r;
    const auto m = static_cast<Index>(obs.size());
    r.mhz.resize(m);
    r.weights.resize(m);
    r.unmatched.assign(obs.size(), false);
    for (Index i = 0; i < m; ++i) {
        const auto& o = obs[static_cast<std::size_t>(i)];
        r.weights(i) = problem.amplitude_weights ? o.weight * std::abs(o.amplitude) : o.weight;
        const auto k = static_cast<std::size_t>(
            std::lower_bound(sweeps.begin(), sweeps.end(), o.sweep_value) - sweeps.begin());
        const Transition* best = nullptr;
        for (const auto& t : catalogs[k].transitions) {
            if (o.n_photons && t.n_photons != *o.n_photons) continue;
            // strict comparison keeps the first (lowest-frequency) candidate on ties
            if (!best || std::abs(t.freq_ghz - o.freq_ghz) < std::abs(best->freq_ghz - o.freq_ghz)) best = &t;
        }
        if (best) {
            r.mhz(i) = 1e3 * (o.freq_ghz - best->freq_ghz);
        } else {
            r.mhz(i) = unmatched_residual_mhz;
            r.unmatched[static_cast<std::size_t>(i)] = true;
        }
    }
    return r;
}

// ------------------------------------------------------------------ optimiser

namespace {

class Objective {
public:
    Objective(const FitProblem& pb, int workers) : pb_(pb), workers_(workers) {
        const auto k = static_cast<Index>(pb.free_params.size());
        lo_.resize(k);
        span_.resize(k);
        for (Index i = 0; i < k; ++i) {
            lo_(i) = pb.free_params[static_cast<std::size_t>(i)].lo;
            span_(i) = pb.free_params[static_cast<std::size_t>(i)].hi - lo_(i);
        }
        for (const auto& o : pb.observations) {
            const double w = pb.amplitude_weights ? o.weight * std::abs(o.amplitude) : o.weight;
            sqrt_w_.push_back(std::sqrt(w));
        }
    }

    Eigen::VectorXd to_x(const Eigen::VectorXd& u) const { return lo_ + span_.cwiseProduct(u); }
    Eigen::VectorXd to_u(const Eigen::VectorXd& x) const {
        return (x - lo_).cwiseQuotient(span_);
    }
    const Eigen::VectorXd& span() const { return span_; }

    // Weighted residual vector at normalised coordinates u (clamped to the box).
    Eigen::VectorXd residual(const Eigen::VectorXd& u) {
        ++evaluations;
        const Eigen::VectorXd x = to_x(u.cwiseMax(0.0).cwiseMin(1.0));
        Eigen::VectorXd r(static_cast<Index>(sqrt_w_.size()));
        try {
            const auto res = model_residuals(pb_, apply_free(pb_, x), workers_);
            for (Index i = 0; i < r.size(); ++i) r(i) = sqrt_w_[static_cast<std::size_t>(i)] * res.mhz(i);
        } catch (const std::exception& e) {
            spdlog::debug("fit: model evaluation failed ({}); treating as unmatched", e.what());
            for (Index i = 0; i < r.size(); ++i) {
                r(i) = sqrt_w_[static_cast<std::size_t>(i)] * unmatched_residual_mhz;
            }
        }
        return r;
    }
    double loss(const Eigen::VectorXd& u) { return residual(u).squaredNorm(); }

    long evaluations{0};

private:
    const FitProblem& pb_;
    int workers_;
    Eigen::VectorXd lo_, span_;
    std::vector<double> sqrt_w_;
};

Eigen::VectorXd clamp01(const Eigen::VectorXd& u) { return u.cwiseMax(0.0).cwiseMin(1.0); }

struct RunOutcome {
    Eigen::VectorXd u;
    double loss{0.0};
    std::vector<double> trace;
    bool converged{false};
    long evaluations{0};
    std::string message;
};

RunOutcome run_single(const FitProblem& pb, const Eigen::VectorXd& u0, const FitStrategy& st,
                      int workers) {
    Objective obj(pb, workers);
    const Index k = u0.size();
    RunOutcome out;

    // ---- Nelder-Mead in the unit box
    std::vector<Eigen::VectorXd> s(static_cast<std::size_t>(k + 1), clamp01(u0));
    for (Index i = 0; i < k; ++i) {
        auto& v = s[static_cast<std::size_t>(i + 1)];
        v(i) += v(i) + 0.05 <= 1.0 ? 0.05 : -0.05;
    }
    std::vector<double> f(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) f[i] = obj.loss(s[i]);

    std::vector<std::size_t> order(s.size());
    bool nm_converged = false;
    for (int it = 0; it < st.simplex_max_iter; ++it) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return f[a] < f[b]; });
        std::vector<Eigen::VectorXd> s2;
        std::vector<double> f2;
        for (auto o : order) {
            s2.push_back(s[o]);
            f2.push_back(f[o]);
        }
        s = std::move(s2);
        f = std::move(f2);
        out.trace.push_back(f.front());

        double diam = 0.0;
        for (std::size_t i = 1; i < s.size(); ++i) diam = std::max(diam, (s[i] - s[0]).cwiseAbs().maxCoeff());
        if (f.back() - f.front() <= st.simplex_ftol * std::abs(f.front()) + 1e-300 || diam < 1e-10) {
            nm_converged = true;
            break;
        }
        Eigen::VectorXd c = Eigen::VectorXd::Zero(k);
        for (Index i = 0; i < k; ++i) c += s[static_cast<std::size_t>(i)];
        c /= static_cast<double>(k);
        const auto& worst = s.back();
        const Eigen::VectorXd xr = clamp01(c + (c - worst));
        const double fr = obj.loss(xr);
        if (fr < f.front()) {
            const Eigen::VectorXd xe = clamp01(c + 2.0 * (c - worst));
            const double fe = obj.loss(xe);
            if (fe < fr) {
                s.back() = xe;
                f.back() = fe;
            } else {
                s.back() = xr;
                f.back() = fr;
            }
        } else if (fr < f[f.size() - 2]) {
            s.back() = xr;
            f.back() = fr;
        } else {
            const bool outside = fr < f.back();
            const Eigen::VectorXd xc = outside ? Eigen::VectorXd(c + 0.5 * (xr - c))
                                               : Eigen::VectorXd(c + 0.5 * (worst - c));
            const double fc = obj.loss(xc);
            if (fc < std::min(fr, f.back())) {
                s.back() = xc;
                f.back() = fc;
            } else {
                for (std::size_t i = 1; i < s.size(); ++i) {
                    s[i] = s[0] + 0.5 * (s[i] - s[0]);
                    f[i] = obj.loss(s[i]);
                }
            }
        }
    }
    std::size_t ib = static_cast<std::size_t>(std::min_element(f.begin(), f.end()) - f.begin());
    Eigen::VectorXd u = s[ib];
    double fu = f[ib];
    if (out.trace.empty() || fu < out.trace.back()) out.trace.push_back(fu);

    // ---- Levenberg-Marquardt polish
    Eigen::VectorXd r = obj.residual(u);
    double lambda = 1e-3;
    bool lm_converged = false;
    for (int it = 0; it < st.lm_max_iter; ++it) {
        const Index m = r.size();
        Eigen::MatrixXd j(m, k);
        for (Index c = 0; c < k; ++c) {
            const double h = u(c) + 1e-6 <= 1.0 ? 1e-6 : -1e-6;
            Eigen::VectorXd up = u;
            up(c) += h;
            j.col(c) = (obj.residual(up) - r) / h;
        }
        const Eigen::MatrixXd jtj = j.transpose() * j;
        const Eigen::VectorXd g = j.transpose() * r;
        bool accepted = false;
        while (lambda < 1e12) {
            Eigen::MatrixXd a = jtj;
            for (Index c = 0; c < k; ++c) a(c, c) += lambda * std::max(jtj(c, c), 1e-12);
            const Eigen::VectorXd step = a.ldlt().solve(-g);
            const Eigen::VectorXd un = clamp01(u + step);
            const Eigen::VectorXd rn = obj.residual(un);
            const double fn = rn.squaredNorm();
            if (fn < fu) {
                const double gain = fu - fn;
                const double moved = (un - u).cwiseAbs().maxCoeff();
                u = un;
                r = rn;
                fu = fn;
                lambda = std::max(lambda / 3.0, 1e-12);
                out.trace.push_back(fu);
                accepted = true;
                if (gain <= 1e-12 * fu + 1e-300 || moved < 1e-12) lm_converged = true;
                break;
            }
            lambda *= 4.0;
        }
        if (!accepted || lm_converged) {
            lm_converged = true;  // no descent direction left at this curvature
            break;
        }
    }
    out.u = u;
    out.loss = fu;
    out.evaluations = obj.evaluations;
    out.converged = nm_converged && lm_converged;
    if (!nm_converged) out.message = "simplex iteration cap reached";
    else if (!lm_converged) out.message = "least-squares iteration cap reached";
    else out.message = "converged";
    return out;
}

}  // namespace

FitResult fit(const FitProblem& problem, const SystemParams& seed, const FitStrategy& st) {
    problem.validate();
    if (st.starts < 1) throw std::invalid_argument("fit: starts must be >= 1");
    Objective base(problem, 1);
    const Eigen::VectorXd x0 = free_values(problem, seed);
    const Eigen::VectorXd u0 = base.to_u(x0);
    for (Index i = 0; i < u0.size(); ++i) {
        if (u0(i) < 0.0 || u0(i) > 1.0) {
            throw std::invalid_argument("fit: seed value of '" + problem.free_params[static_cast<std::size_t>(i)].name +
                                        "' outside its bounds");
        }
    }
    std::vector<Eigen::VectorXd> seeds{u0};
    std::mt19937_64 rng(st.rng_seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int s = 1; s < st.starts; ++s) {
        Eigen::VectorXd u(u0.size());
        for (Index i = 0; i < u.size(); ++i) u(i) = uni(rng);
        seeds.push_back(u);
    }
    const int workers = st.workers > 0 ? st.workers : default_worker_count();
    const int inner = st.starts > 1 ? 1 : workers;
    const auto runs = parallel_map(seeds.size(), st.starts > 1 ? workers : 1, [&](std::size_t i) {
        return run_single(problem, seeds[i], st, inner);
    });

    std::size_t best = 0;
    long evals = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        evals += runs[i].evaluations;
        if (runs[i].loss < runs[best].loss) best = i;
    }
    const auto& run = runs[best];

    FitResult res;
    for (const auto& b : problem.free_params) res.names.push_back(b.name);
    res.x = base.to_x(run.u);
    res.best = apply_free(problem, res.x);
    res.residuals = model_residuals(problem, res.best, workers);
    res.loss = res.residuals.loss();
    const double wsum = res.residuals.weights.sum();
    res.residual_rms_mhz = wsum > 0.0 ? std::sqrt(res.loss / wsum) : 0.0;
    res.trace = run.trace;
    res.converged = run.converged;
    res.evaluations = evals;
    res.message = run.message;

    // 1-sigma from s^2 (J^T J)^-1 in physical units
    const Index k = res.x.size();
    const Index m = res.residuals.mhz.size();
    res.sigma = Eigen::VectorXd::Constant(k, nan_v);
    if (m > k) {
        Objective obj(problem, workers);
        const Eigen::VectorXd r0 = obj.residual(run.u);
        Eigen::MatrixXd j(m, k);
        for (Index c = 0; c < k; ++c) {
            const double h = run.u(c) + 1e-6 <= 1.0 ? 1e-6 : -1e-6;
            Eigen::VectorXd up = run.u;
            up(c) += h;
            j.col(c) = (obj.residual(up) - r0) / (h * obj.span()(c));
        }
        res.evaluations += obj.evaluations;
        const Eigen::MatrixXd jtj = j.transpose() * j;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jtj);
        const double emax = es.eigenvalues().maxCoeff();
        if (emax > 0.0 && es.eigenvalues().minCoeff() > 1e-14 * emax) {
            const double s2 = r0.squaredNorm() / static_cast<double>(m - k);
            const Eigen::MatrixXd cov = s2 * jtj.inverse();
            res.sigma = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
        } else {
            res.message += "; curvature singular, uncertainties undetermined";
        }
    }
    return res;
}

// ------------------------------------------------------------------ report

void write_fit_summary(std::ostream& os, const FitProblem& problem, const FitResult& r) {
    os << "fit: " << (r.converged ? "converged" : "NOT converged") << " (" << r.message << ")\n";
    os << "observations: " << problem.observations.size() << ", evaluations: " << r.evaluations << '\n';
    os << "loss: " << format_double(r.loss) << " MHz^2, residual rms: " << format_double(r.residual_rms_mhz)
       << " MHz\n";
    std::size_t unmatched = 0;
    for (bool u : r.residuals.unmatched) unmatched += u ? 1 : 0;
    if (unmatched) os << "unmatched observations: " << unmatched << '\n';
    os << std::left << std::setw(12) << "parameter" << std::setw(26) << "value" << std::setw(26)
       << "sigma" << "bounds\n";
    for (std::size_t i = 0; i < r.names.size(); ++i) {
        const auto& b = problem.free_params[i];
        os << std::left << std::setw(12) << r.names[i] << std::setw(26)
           << format_double(r.x(static_cast<Index>(i))) << std::setw(26)
           << format_double(r.sigma(static_cast<Index>(i))) << '[' << format_double(b.lo) << ", "
           << format_double(b.hi) << "]\n";
    }
}

void write_residuals_csv(std::ostream& os, const FitProblem& problem, const FitResult& r) {
    os << "sweep_value,freq_GHz,n_photons,weight,residual_MHz,unmatched\n";
    for (std::size_t i = 0; i < problem.observations.size(); ++i) {
        const auto& o = problem.observations[i];
        os << format_double(o.sweep_value) << ',' << format_double(o.freq_ghz) << ','
           << (o.n_photons ? std::to_string(*o.n_photons) : std::string{}) << ','
           << format_double(r.residuals.weights(static_cast<Index>(i))) << ','
           << format_double(r.residuals.mhz(static_cast<Index>(i))) << ','
           << (r.residuals.unmatched[i] ? 1 : 0) << '\n';
    }
}

void write_fit_report(const std::filesystem::path& prefix, const FitProblem& problem,
                      const FitResult& r, const Metadata& header) {
    auto open = [](const std::filesystem::path& p) {
        std::ofstream f(p);
        if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
        return f;
    };
    std::string head;
    for (const auto& [k, v] : header) head += k + '=' + v + '\n';
    const std::string base = prefix.string();
    {
        auto f = open(base + ".txt");
        for (const auto& [k, v] : header) f << "# " << k << '=' << v << '\n';
        write_fit_summary(f, problem, r);
    }
    {
        auto f = open(base + "_residuals.csv");
        for (const auto& [k, v] : header) f << "# " << k << '=' << v << '\n';
        write_residuals_csv(f, problem, r);
    }
    write_params_file(base + ".params", r.best,
                      head + "best-fit parameters; residual rms " + format_double(r.residual_rms_mhz) + " MHz");
}

// ------------------------------------------------------------------ g_z detectability

GzDetection gz_detection_experiment(const SystemParams& truth, const GzExperiment& e) {
    if (e.realizations < 1 || e.sweep_points < 3 || !(e.noise_fwhm_mhz > 0.0) || !(e.half_span_v > 0.0)) {
        throw std::invalid_argument(
            "gz_detection_experiment: need realizations >= 1, sweep_points >= 3, positive noise and span");
    }
    SystemParams p = truth;
    p.tls.g_z = 0.0;
    const double vr = qubit_tls_resonance_voltage(p);
    p.tls.g_z = e.g_z_mhz;
    const double fq = p.qubit_frequency();
    CatalogOptions copts;
    copts.max_photons = 2;
    copts.f_min_ghz = fq - 0.08;
    copts.f_max_ghz = fq + 0.08;
    const auto clean = synthesize_peaks(p, SweepKind::Piezo,
                                        linspace(vr - e.half_span_v, vr + e.half_span_v, e.sweep_points),
                                        copts, 1e-3, e.workers);

    FitProblem pb;
    pb.fixed = p;
    pb.max_photons = 2;
    const double v0 = truth.tls.V0, gx = truth.tls.g_x;
    pb.free_params = {{"g_z", -10.0, 15.0}, {"g_x", 0.7 * gx, 1.4 * gx}, {"V0", v0 - 0.4, v0 + 0.4}};
    SystemParams seed = p;
    seed.tls.g_z = 0.0;
    seed.tls.g_x = 0.92 * gx;
    seed.tls.V0 = v0 + 0.05;
    FitStrategy strategy;
    strategy.workers = e.workers;

    // FWHM = 2 sqrt(2 ln 2) sigma
    std::normal_distribution<double> noise(0.0, 1e-3 * e.noise_fwhm_mhz / (2.0 * std::sqrt(2.0 * std::log(2.0))));
    std::mt19937_64 rng(e.rng_seed);
    GzDetection out;
    int hits = 0;
    for (int k = 0; k < e.realizations; ++k) {
        pb.observations = clean;
        for (auto& o : pb.observations) o.freq_ghz += noise(rng);
        const auto r = fit(pb, seed, strategy);
        GzRealization run{r.x(0), r.sigma(0), false, r.converged};
        run.detected = std::isfinite(run.sigma_mhz) && std::abs(run.g_z_mhz) > 2.0 * run.sigma_mhz;
        hits += run.detected ? 1 : 0;
        out.runs.push_back(run);
    }
    out.detection_fraction = static_cast<double>(hits) / e.realizations;
    return out;
}

// ------------------------------------------------------------------ g_eff vs detuning

std::vector<GeffRow> geff_vs_detuning(const std::vector<SystemParams>& sets, const GeffOptions& opts,
                                      int workers) {
    if (sets.size() < 2) throw std::invalid_argument("geff_vs_detuning: need at least two detunings");
    if (opts.points < 5 || !(opts.half_window_v > 0.0)) {
        throw std::invalid_argument("geff_vs_detuning: need >= 5 points and a positive window");
    }
    std::vector<GeffRow> out;
    for (const auto& p : sets) {
        const double delta = 1e3 * (p.qubit_frequency() - p.resonator.f_res);
        const auto loc = analytics::readout_failure_locator(p);
        if (loc.empty()) {
            throw NoCrossingError("geff_vs_detuning: TLS never reaches the resonator frequency");
        }
        const double vc = loc.back();
        CatalogOptions copts;
        copts.max_photons = 1;
        copts.f_min_ghz = p.resonator.f_res - 0.2;
        copts.f_max_ghz = p.resonator.f_res + 0.2;
        const auto cats = sweep_transitions(p, SweepKind::Piezo,
                                            linspace(vc - opts.half_window_v, vc + opts.half_window_v, opts.points),
                                            copts, workers);
        const auto ac = anticrossing_gap(cats, {"q0r1t0", "q0r0t1", 1});
        out.push_back({delta, 0.5 * ac.gap_mhz,
                       analytics::effective_coupling(p.resonator.g_qr, p.tls.g_x, delta).value, ac.location});
    }
    return out;
}

}  // namespace qrtls
