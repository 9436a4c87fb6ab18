// spectrum.hpp: eigenvalue spectroscopy of the undriven system
//
// A transition between eigenstates i < j appears at (E_j - E_i) / n for every photon
// number n up to max_photons. Weights are visibility proxies only: the single-photon
// weight is |<j|q + q^dag|i>|, and the n-photon weight is the strongest chain of
// single-photon elements through intermediate eigenstates.

#pragma once

#include "qrtls/model.hpp"

#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qrtls {

struct Transition {
    Index from_idx;
    Index to_idx;
    double freq_ghz;
    int n_photons;
    double weight;
    std::string from_label;  // dominant bare state, e.g. "q0r0t0"
    std::string to_label;
};

struct TransitionCatalog {
    double sweep_value{0.0};
    std::vector<Transition> transitions;  // sorted by freq_ghz
};

struct CatalogOptions {
    int max_photons{3};
    bool ground_only{true};
    double f_min_ghz{0.0};
    double f_max_ghz{std::numeric_limits<double>::infinity()};
};

TransitionCatalog transition_catalog(const Operator& hamiltonian, const Operator& drive_op,
                                     const CompositeSpace& space, const CatalogOptions& opts,
                                     double sweep_value = 0.0);

// Dominant bare-basis index of an eigenvector; ties go to the lower bare index.
Index dominant_bare_index(const Eigen::VectorXcd& v);

enum class SweepKind { Piezo, Flux, QubitFrequency };

const char* sweep_name(SweepKind k);
SweepKind parse_sweep_kind(const std::string& name);

// Copy of p moved to the given sweep coordinate.
SystemParams at_sweep(const SystemParams& p, SweepKind kind, double value);

std::vector<double> linspace(double start, double stop, int points);

// One catalog per sweep value, evaluated on up to `workers` threads, returned in sweep order.
std::vector<TransitionCatalog> sweep_transitions(const SystemParams& p, SweepKind kind,
                                                 const std::vector<double>& values,
                                                 const CatalogOptions& opts, int workers = 1);

// Drop transitions weaker than rel * (strongest single-photon weight in the catalog).
void apply_weight_threshold(TransitionCatalog& catalog, double rel);

// ------------------------------------------------------------------ dispersive shift

struct DispersiveShift {
    double chi_mhz;         // dressed resonator (qubit in |0>) minus bare f_res
    double chi_qubit_mhz;   // resonator frequency with qubit in |1> minus with qubit in |0>
};

// From the eigenstates dominated by q0r0t0, q0r1t0, q1r0t0 and q1r1t0.
DispersiveShift extract_dispersive_shift(const SystemParams& p);

// ------------------------------------------------------------------ line traces

struct LineFit {
    double slope;      // GHz per sweep unit
    double intercept;  // GHz at sweep = 0
    int points;
    double rms_mhz;    // residual of the straight-line fit
};

// Least-squares line through the ground-state transitions to `to_label` with the given
// photon number, over sweep values in [lo, hi]. Throws std::runtime_error when fewer
// than two points carry the line.
LineFit trace_line(const std::vector<TransitionCatalog>& catalogs, const std::string& to_label,
                   int n_photons, double lo, double hi);

// Intersection of two fitted lines: {sweep, freq}. Throws on parallel lines.
std::pair<double, double> intersect(const LineFit& a, const LineFit& b);

// ------------------------------------------------------------------ branches

struct BranchTracks {
    std::vector<double> sweep;
    Eigen::MatrixXd energies_ghz;  // rows: sweep points, cols: branches
};

// Eigenvalues followed across the sweep by greedy maximal eigenvector overlap.
BranchTracks track_branches(const SystemParams& p, SweepKind kind,
                            const std::vector<double>& values, int workers = 1);

// Largest ratio of a step |dE_k| to the neighbouring steps max(|dE_k-1|, |dE_k+1|) over
// all branches; values near 1 mean smooth branches, large values mean label swaps.
double max_jump_ratio(const BranchTracks& tracks, double floor_ghz = 1e-9);

// ------------------------------------------------------------------ anti-crossings

class NoCrossingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BranchSelector {
    std::string label_a;  // e.g. "q1r0t0"
    std::string label_b;  // e.g. "q0r0t1"
    int n_photons{1};
};

struct Anticrossing {
    double gap_mhz;   // minimal splitting (twice the coupling)
    double location;  // sweep coordinate of the minimum
    bool degenerate;  // gap below solver resolution
};

// Minimal splitting between the two ground-state transitions whose final states carry
// the selected labels. The squared splitting is fitted by a parabola through the three
// points around the sampled minimum. Throws NoCrossingError if the minimum sits on the
// sweep boundary or fewer than three points carry both branches.
Anticrossing anticrossing_gap(const std::vector<TransitionCatalog>& catalogs,
                              const BranchSelector& selector);

// ------------------------------------------------------------------ longitudinal coupling

struct GzShift {
    double g_z_mhz;
    double freq_ghz;   // two-photon line to the q1r0t1-like state
    double shift_mhz;  // relative to g_z = 0
};

// Piezo voltage (upper branch) where f_TLS equals the qubit frequency.
double qubit_tls_resonance_voltage(const SystemParams& p);

// Two-photon line at the centre of the qubit-TLS anti-crossing versus g_z.
std::vector<GzShift> two_photon_shift_vs_gz(const SystemParams& p,
                                            const std::vector<double>& gz_mhz);

}  // namespace qrtls
