#include "qrtls/spectrum.hpp"

#include "qrtls/constants.hpp"
#include "qrtls/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace qrtls {

Index dominant_bare_index(const Eigen::VectorXcd& v) {
    Index best = 0;
    double best_p = std::norm(v(0));
    for (Index k = 1; k < v.size(); ++k) {
        const double pk = std::norm(v(k));
        if (pk > best_p + 1e-12) {
            best = k;
            best_p = pk;
        }
    }
    return best;
}

TransitionCatalog transition_catalog(const Operator& hamiltonian, const Operator& drive_op,
                                     const CompositeSpace& space, const CatalogOptions& opts,
                                     double sweep_value) {
    if (opts.max_photons < 1) {
        throw std::invalid_argument("transition_catalog: max_photons must be >= 1");
    }
    if (hamiltonian.dim() != space.dim() || drive_op.dim() != space.dim()) {
        throw DimensionError("transition_catalog: operator dimension does not match the space");
    }
    const EigenSystem es = eigh(hamiltonian);
    const Index n = es.values.size();
    const Eigen::MatrixXd d = (es.vectors.adjoint() * drive_op.mat() * es.vectors).cwiseAbs();

    std::vector<std::string> labels(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k) {
        labels[static_cast<std::size_t>(k)] = space.label(dominant_bare_index(es.vectors.col(k)));
    }

    TransitionCatalog cat;
    cat.sweep_value = sweep_value;
    const Index i_end = opts.ground_only ? 1 : n;
    for (Index i = 0; i < i_end; ++i) {
        // w(l) = strongest chain weight i -> l using m photons
        Eigen::VectorXd w = d.col(i);
        w(i) = 0.0;
        for (int m = 1; m <= opts.max_photons; ++m) {
            if (m > 1) {
                Eigen::VectorXd next = Eigen::VectorXd::Zero(n);
                for (Index j = 0; j < n; ++j) {
                    double best = 0.0;
                    for (Index l = 0; l < n; ++l) {
                        if (l == j) continue;
                        best = std::max(best, d(j, l) * w(l));
                    }
                    next(j) = best;
                }
                w = std::move(next);
            }
            for (Index j = i + 1; j < n; ++j) {
                const double f = units::angular_to_ghz(es.values(j) - es.values(i)) / m;
                if (!(f > 0.0) || f < opts.f_min_ghz || f > opts.f_max_ghz) continue;
                cat.transitions.push_back({i, j, f, m, w(j), labels[static_cast<std::size_t>(i)],
                                           labels[static_cast<std::size_t>(j)]});
            }
        }
    }
    std::stable_sort(cat.transitions.begin(), cat.transitions.end(),
                     [](const Transition& a, const Transition& b) {
                         if (a.freq_ghz != b.freq_ghz) return a.freq_ghz < b.freq_ghz;
                         if (a.n_photons != b.n_photons) return a.n_photons < b.n_photons;
                         if (a.from_idx != b.from_idx) return a.from_idx < b.from_idx;
                         return a.to_idx < b.to_idx;
                     });
    return cat;
}

const char* sweep_name(SweepKind k) {
    switch (k) {
        case SweepKind::Piezo: return "piezo_v";
        case SweepKind::Flux: return "flux";
        case SweepKind::QubitFrequency: return "f_q";
    }
    return "?";
}

SweepKind parse_sweep_kind(const std::string& name) {
    if (name == "piezo_v" || name == "piezo") return SweepKind::Piezo;
    if (name == "flux") return SweepKind::Flux;
    if (name == "f_q") return SweepKind::QubitFrequency;
    throw std::invalid_argument("unknown sweep axis '" + name + "' (piezo_v, flux, f_q)");
}

SystemParams at_sweep(const SystemParams& p, SweepKind kind, double value) {
    SystemParams q = p;
    switch (kind) {
        case SweepKind::Piezo: q.piezo_v = value; break;
        case SweepKind::Flux:
            q.flux = value;
            q.qubit.f_q.reset();
            break;
        case SweepKind::QubitFrequency: q.qubit.f_q = value; break;
    }
    return q;
}

std::vector<double> linspace(double start, double stop, int points) {
    if (points < 1) throw std::invalid_argument("linspace: points must be >= 1");
    std::vector<double> v(static_cast<std::size_t>(points));
    if (points == 1) {
        v[0] = start;
        return v;
    }
    for (int k = 0; k < points; ++k) {
        v[static_cast<std::size_t>(k)] = start + (stop - start) * k / (points - 1);
    }
    return v;
}

std::vector<TransitionCatalog> sweep_transitions(const SystemParams& p, SweepKind kind,
                                                 const std::vector<double>& values,
                                                 const CatalogOptions& opts, int workers) {
    for (std::size_t k = 1; k < values.size(); ++k) {
        if (!(values[k] > values[k - 1])) {
            throw std::invalid_argument("sweep_transitions: sweep grid must be increasing");
        }
    }
    const CompositeSpace space(p);
    const Operator drive = qubit_drive_operator(space);
    return parallel_map(values.size(), workers, [&](std::size_t k) {
        const SystemParams q = at_sweep(p, kind, values[k]);
        return transition_catalog(full_hamiltonian(q), drive, space, opts, values[k]);
    });
}

void apply_weight_threshold(TransitionCatalog& catalog, double rel) {
    double strongest = 0.0;
    for (const auto& t : catalog.transitions) {
        if (t.n_photons == 1) strongest = std::max(strongest, t.weight);
    }
    const double cut = rel * strongest;
    std::erase_if(catalog.transitions, [cut](const Transition& t) { return t.weight < cut; });
}

// ------------------------------------------------------------------ dispersive shift

DispersiveShift extract_dispersive_shift(const SystemParams& p) {
    const CompositeSpace space(p);
    const EigenSystem es = eigh(full_hamiltonian(p));
    auto energy = [&](const BareState& b) {
        const Index target = space.index_of(b);
        Index found = -1;
        for (Index k = 0; k < es.values.size(); ++k) {
            if (dominant_bare_index(es.vectors.col(k)) != target) continue;
            if (found >= 0) {
                throw std::runtime_error("extract_dispersive_shift: two eigenstates dominated by " +
                                         CompositeSpace::label(b) + "; not dispersive");
            }
            found = k;
        }
        if (found < 0) {
            throw std::runtime_error("extract_dispersive_shift: no eigenstate dominated by " +
                                     CompositeSpace::label(b));
        }
        return units::angular_to_ghz(es.values(found));
    };
    const double f0 = energy({0, 1, 0}) - energy({0, 0, 0});
    const double f1 = energy({1, 1, 0}) - energy({1, 0, 0});
    return {1e3 * (f0 - p.resonator.f_res), 1e3 * (f1 - f0)};
}

// ------------------------------------------------------------------ line traces

LineFit trace_line(const std::vector<TransitionCatalog>& catalogs, const std::string& to_label,
                   int n_photons, double lo, double hi) {
    std::vector<double> xs, ys;
    for (const auto& cat : catalogs) {
        if (cat.sweep_value < lo || cat.sweep_value > hi) continue;
        for (const auto& t : cat.transitions) {
            if (t.from_idx == 0 && t.n_photons == n_photons && t.to_label == to_label) {
                xs.push_back(cat.sweep_value);
                ys.push_back(t.freq_ghz);
                break;
            }
        }
    }
    if (xs.size() < 2) {
        throw std::runtime_error("trace_line: fewer than two points carry " + to_label + " (" +
                                 std::to_string(n_photons) + " photons)");
    }
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx == 0.0) throw std::runtime_error("trace_line: all points at one sweep value");
    LineFit f{sxy / sxx, 0.0, static_cast<int>(xs.size()), 0.0};
    f.intercept = my - f.slope * mx;
    double ss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - (f.intercept + f.slope * xs[i]);
        ss += r * r;
    }
    f.rms_mhz = 1e3 * std::sqrt(ss / n);
    return f;
}

std::pair<double, double> intersect(const LineFit& a, const LineFit& b) {
    if (a.slope == b.slope) throw std::runtime_error("intersect: parallel lines");
    const double x = (b.intercept - a.intercept) / (a.slope - b.slope);
    return {x, a.intercept + a.slope * x};
}

// ------------------------------------------------------------------ branches

BranchTracks track_branches(const SystemParams& p, SweepKind kind,
                            const std::vector<double>& values, int workers) {
    const auto systems = parallel_map(values.size(), workers, [&](std::size_t k) {
        return eigh(full_hamiltonian(at_sweep(p, kind, values[k])));
    });
    BranchTracks out;
    out.sweep = values;
    if (systems.empty()) return out;
    const Index n = systems.front().values.size();
    out.energies_ghz.resize(static_cast<Index>(values.size()), n);

    // perm[b] = eigen index carrying branch b at the current point
    std::vector<Index> perm(static_cast<std::size_t>(n));
    for (Index b = 0; b < n; ++b) perm[static_cast<std::size_t>(b)] = b;
    for (Index b = 0; b < n; ++b) {
        out.energies_ghz(0, b) = units::angular_to_ghz(systems[0].values(b));
    }
    for (std::size_t s = 1; s < systems.size(); ++s) {
        const Eigen::MatrixXd overlap =
            (systems[s - 1].vectors.adjoint() * systems[s].vectors).cwiseAbs2();
        // greedy: largest remaining overlap first
        std::vector<std::tuple<double, Index, Index>> entries;
        entries.reserve(static_cast<std::size_t>(n * n));
        for (Index i = 0; i < n; ++i) {
            for (Index j = 0; j < n; ++j) entries.emplace_back(overlap(i, j), i, j);
        }
        std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            return std::get<0>(a) > std::get<0>(b);
        });
        std::vector<Index> match(static_cast<std::size_t>(n), -1);
        std::vector<bool> used(static_cast<std::size_t>(n), false);
        Index assigned = 0;
        for (const auto& [ov, i, j] : entries) {
            if (match[static_cast<std::size_t>(i)] >= 0 || used[static_cast<std::size_t>(j)]) {
                continue;
            }
            match[static_cast<std::size_t>(i)] = j;
            used[static_cast<std::size_t>(j)] = true;
            if (++assigned == n) break;
        }
        for (Index b = 0; b < n; ++b) {
            perm[static_cast<std::size_t>(b)] =
                match[static_cast<std::size_t>(perm[static_cast<std::size_t>(b)])];
            out.energies_ghz(static_cast<Index>(s), b) =
                units::angular_to_ghz(systems[s].values(perm[static_cast<std::size_t>(b)]));
        }
    }
    return out;
}

double max_jump_ratio(const BranchTracks& tracks, double floor_ghz) {
    const Index rows = tracks.energies_ghz.rows();
    double worst = 0.0;
    for (Index b = 0; b < tracks.energies_ghz.cols(); ++b) {
        for (Index k = 1; k + 1 < rows; ++k) {
            const double d = std::abs(tracks.energies_ghz(k, b) - tracks.energies_ghz(k - 1, b));
            double ref = floor_ghz;
            if (k >= 2) {
                ref = std::max(ref, std::abs(tracks.energies_ghz(k - 1, b) -
                                             tracks.energies_ghz(k - 2, b)));
            }
            ref = std::max(ref,
                           std::abs(tracks.energies_ghz(k + 1, b) - tracks.energies_ghz(k, b)));
            worst = std::max(worst, d / ref);
        }
    }
    return worst;
}

// ------------------------------------------------------------------ anti-crossings

Anticrossing anticrossing_gap(const std::vector<TransitionCatalog>& catalogs,
                              const BranchSelector& sel) {
    std::vector<double> xs;
    std::vector<double> split;  // GHz of energy
    for (const auto& cat : catalogs) {
        std::vector<double> f;
        for (const auto& t : cat.transitions) {
            if (t.from_idx != 0 || t.n_photons != sel.n_photons) continue;
            if (t.to_label == sel.label_a || t.to_label == sel.label_b) f.push_back(t.freq_ghz);
        }
        if (f.size() != 2) continue;
        xs.push_back(cat.sweep_value);
        split.push_back(std::abs(f[1] - f[0]) * sel.n_photons);
    }
    if (xs.size() < 3) {
        throw NoCrossingError("anticrossing_gap: fewer than three sweep points carry both branches");
    }
    const auto it = std::min_element(split.begin(), split.end());
    const std::size_t k = static_cast<std::size_t>(it - split.begin());
    if (k == 0 || k + 1 == split.size()) {
        throw NoCrossingError("anticrossing_gap: splitting minimum on the sweep boundary at " +
                              std::to_string(xs[k]) + "; sweep does not bracket the crossing");
    }
    // parabola through (x, s^2) at k-1, k, k+1
    const double x0 = xs[k - 1], x1 = xs[k], x2 = xs[k + 1];
    const double y0 = split[k - 1] * split[k - 1];
    const double y1 = split[k] * split[k];
    const double y2 = split[k + 1] * split[k + 1];
    const double d01 = (y1 - y0) / (x1 - x0);
    const double d12 = (y2 - y1) / (x2 - x1);
    const double a = (d12 - d01) / (x2 - x0);
    double gap2 = y1;
    double loc = x1;
    if (a > 0.0) {
        const double b = d01 - a * (x0 + x1);
        loc = -b / (2.0 * a);
        const double c = y1 - a * x1 * x1 - b * x1;
        gap2 = std::min(y1, std::max(0.0, c - b * b / (4.0 * a)));
    }
    const double gap_mhz = 1e3 * std::sqrt(gap2);
    return {gap_mhz, loc, gap_mhz < 1e-6};
}

// ------------------------------------------------------------------ longitudinal coupling

double qubit_tls_resonance_voltage(const SystemParams& p) {
    const double fq = p.qubit_frequency();
    if (fq < p.tls.delta0) {
        throw std::invalid_argument("qubit frequency below the TLS gap; no resonance point");
    }
    return p.tls.V0 + std::sqrt(fq * fq - p.tls.delta0 * p.tls.delta0) / (1e-3 * p.tls.gamma);
}

std::vector<GzShift> two_photon_shift_vs_gz(const SystemParams& p,
                                            const std::vector<double>& gz_mhz) {
    SystemParams base = p;
    base.piezo_v = qubit_tls_resonance_voltage(p);
    const CompositeSpace space(base);
    const Operator drive = qubit_drive_operator(space);
    const std::string target = CompositeSpace::label(BareState{1, 0, 1});
    CatalogOptions opts;
    opts.max_photons = 2;
    opts.ground_only = true;

    auto line = [&](double gz) {
        SystemParams q = base;
        q.tls.g_z = gz;
        const auto cat = transition_catalog(full_hamiltonian(q), drive, space, opts);
        for (const auto& t : cat.transitions) {
            if (t.n_photons == 2 && t.to_label == target) return t.freq_ghz;
        }
        throw std::runtime_error("two_photon_shift_vs_gz: no two-photon line to " + target);
    };
    const double ref = line(0.0);
    std::vector<GzShift> out;
    out.reserve(gz_mhz.size());
    for (double gz : gz_mhz) {
        const double f = line(gz);
        out.push_back({gz, f, 1e3 * (f - ref)});
    }
    return out;
}

}  // namespace qrtls
