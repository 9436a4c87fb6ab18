// fitting.hpp: peak extraction and least-squares fits of transition positions
//
// The loss is sum_i w_i r_i^2 with r_i = observed - nearest model transition (MHz).
// Free parameters are addressed by their parameter-file key and optimised in
// coordinates normalised to their bounds.

#pragma once

#include "qrtls/io.hpp"
#include "qrtls/spectrum.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace qrtls {

struct PeakObservation {
    double sweep_value{0.0};
    double freq_ghz{0.0};
    double amplitude{1.0};
    double fwhm_mhz{1.0};
    std::optional<int> n_photons;
    double weight{1.0};
};

struct PeakOptions {
    double rel_prominence{0.1};  // relative to the row maximum
    int smoothing_width{1};      // centred moving average, bins (1 = none)
};

// Local maxima per sweep value (grid row), with parabolic sub-bin centres and FWHM
// from half-prominence crossings. NaN cells are never part of a peak.
std::vector<PeakObservation> extract_peaks(const SpectroscopyGrid& grid, const PeakOptions& opts = {});

void write_peaks_csv(std::ostream& os, const std::vector<PeakObservation>& peaks,
                     const Metadata& metadata = {});
std::vector<PeakObservation> read_peaks_csv(std::istream& is, Metadata* metadata = nullptr);

// Noiseless observations from the model: every ground-state transition that survives
// the weight threshold becomes a peak with its photon number assigned and the catalog
// weight as amplitude.
std::vector<PeakObservation> synthesize_peaks(const SystemParams& p, SweepKind kind,
                                              const std::vector<double>& sweep,
                                              const CatalogOptions& opts, double weight_threshold,
                                              int workers = 1);

struct ParamBound {
    std::string name;  // parameter-file key
    double lo;
    double hi;
};

struct FitProblem {
    std::vector<PeakObservation> observations;
    std::vector<ParamBound> free_params;
    SystemParams fixed;  // supplies every parameter not listed as free
    SweepKind sweep{SweepKind::Piezo};
    int max_photons{3};
    double weight_threshold{1e-3};    // relative catalog weight below which lines are ignored
    double window_margin_ghz{0.05};   // catalog window around the observed frequencies
    bool amplitude_weights{false};    // w_i = amplitude_i * weight_i instead of weight_i

    void validate() const;
};

// Residual assigned when no candidate transition exists (MHz).
inline constexpr double unmatched_residual_mhz = 1e3;

struct Residuals {
    Eigen::VectorXd mhz;         // observed - model
    Eigen::VectorXd weights;
    std::vector<bool> unmatched;
    double loss() const;         // sum w r^2
};

SystemParams apply_free(const FitProblem& problem, const Eigen::VectorXd& x);
Eigen::VectorXd free_values(const FitProblem& problem, const SystemParams& p);

Residuals model_residuals(const FitProblem& problem, const SystemParams& params, int workers = 1);

struct FitStrategy {
    int simplex_max_iter{400};
    double simplex_ftol{1e-10};
    int lm_max_iter{60};
    int starts{1};                // > 1 adds bound-uniform seeds
    std::uint64_t rng_seed{12345};
    int workers{1};
};

struct FitResult {
    SystemParams best;
    std::vector<std::string> names;
    Eigen::VectorXd x;
    Eigen::VectorXd sigma;  // 1-sigma from the Gauss-Newton curvature; NaN if undetermined
    double loss{0.0};
    double residual_rms_mhz{0.0};  // sqrt(loss / sum w)
    Residuals residuals;
    std::vector<double> trace;  // best loss after each accepted iteration
    bool converged{false};
    long evaluations{0};
    std::string message;
};

FitResult fit(const FitProblem& problem, const SystemParams& seed, const FitStrategy& strategy = {});

void write_fit_summary(std::ostream& os, const FitProblem& problem, const FitResult& r);
void write_residuals_csv(std::ostream& os, const FitProblem& problem, const FitResult& r);
// <prefix>.txt, <prefix>_residuals.csv and <prefix>.params, each headed by `header`
// as "# key=value" lines.
void write_fit_report(const std::filesystem::path& prefix, const FitProblem& problem,
                      const FitResult& r, const Metadata& header = {});

// Longitudinal-coupling detectability: noisy synthetic spectra around the qubit-TLS
// anti-crossing (both 1-photon branches and the 2-photon line, which moves by g_z / 2)
// are fitted with {g_z, g_x, V0} free. A realization detects g_z when |g_z| > 2 sigma.
struct GzExperiment {
    double g_z_mhz{6.0};
    double noise_fwhm_mhz{3.0};  // Gaussian frequency noise, given as FWHM
    int sweep_points{7};
    double half_span_v{0.3};     // around the qubit-TLS resonance voltage
    int realizations{10};
    std::uint64_t rng_seed{1};
    int workers{1};
};

struct GzRealization {
    double g_z_mhz;
    double sigma_mhz;
    bool detected;
    bool converged;
};

struct GzDetection {
    std::vector<GzRealization> runs;
    double detection_fraction{0.0};
};

GzDetection gz_detection_experiment(const SystemParams& truth, const GzExperiment& e);

struct GeffRow {
    double detuning_mhz;     // f_q - f_res
    double geff_mhz;         // half the resonator-TLS splitting
    double analytic_mhz;     // g_qr g_x / delta
    double location_v;
};

struct GeffOptions {
    double half_window_v{0.15};
    int points{61};
};

// Resonator-TLS anti-crossing at the upper readout-failure voltage of each parameter set.
std::vector<GeffRow> geff_vs_detuning(const std::vector<SystemParams>& sets,
                                      const GeffOptions& opts = {}, int workers = 1);

}  // namespace qrtls
