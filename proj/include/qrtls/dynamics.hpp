// dynamics.hpp: Lindblad master-equation evolution, steady states, driven spectroscopy
//
//   d rho / dt = -i [H(t), rho] + sum_k ( L_k rho L_k^dag - 1/2 { L_k^dag L_k, rho } )
//
// with H in rad/us and time in us. Integration uses an adaptive Dormand-Prince 5(4)
// scheme on the density matrix. Operators stay dense at the interface; the engine
// compiles them to sparse form once per run since every model operator is a
// ladder-type matrix with O(dim) non-zeros.
//
// Rotating-frame problems are time independent, and for small dimensions the exact
// propagator exp(L dt) on the dim^2 Liouvillian is far cheaper than resolving the
// GHz-scale detunings that remain in that frame with an explicit scheme.

#pragma once

#include "qrtls/io.hpp"
#include "qrtls/model.hpp"

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qrtls {

class StiffProblemError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Frame {
    Lab,      // H0 + 2 cos(omega t) * drive.op, full couplings
    Rotating  // H0 - omega N + drive.op, RWA couplings
};

const char* frame_name(Frame f);
Frame parse_frame(const std::string& name);

enum class Stepper {
    Auto,        // Propagator when the generator is time independent and dim <= 24
    RungeKutta,  // adaptive Dormand-Prince 5(4)
    Propagator   // exact exp(L dt) on the dense Liouvillian; time-independent only
};

const char* stepper_name(Stepper s);
Stepper parse_stepper(const std::string& name);

struct IntegratorOptions {
    Stepper stepper{Stepper::Auto};
    double rtol{1e-8};
    double atol{1e-10};
    double dt_initial{0.0};  // 0: chosen from the generator norm
    double dt_max{0.0};      // 0: unlimited
    double dt_min{1e-13};    // below this the run fails as stiff
    long max_steps{50'000'000};
};

struct EvolutionSpec {
    Operator H0;  // rad/us
    std::optional<DriveTerm> drive;
    Frame frame{Frame::Lab};
    std::optional<Operator> frame_generator;  // required for Frame::Rotating
    std::vector<Collapse> collapses;
    double t_max{1.0};  // us
    IntegratorOptions integrator;
    std::vector<Operator> observables;
};

struct EvolutionDiagnostics {
    long steps{0};
    long rejected{0};
    long rhs_evaluations{0};
    double trace_drift_per_us{0.0};   // max |Tr rho(t) - Tr rho0| / t over outputs
    double min_eigenvalue{1.0};       // over outputs
    double max_hermiticity_fix{0.0};  // largest symmetrisation correction applied
};

struct EvolutionResult {
    std::vector<double> times;
    std::vector<std::vector<double>> observables;  // [time][observable]
    std::vector<DensityMatrix> states;             // filled when keep_states
    DensityMatrix final_state;
    EvolutionDiagnostics diagnostics;
};

// Stateful integrator; advance_to may be called repeatedly with increasing times.
class LindbladIntegrator {
public:
    LindbladIntegrator(const EvolutionSpec& spec, const DensityMatrix& rho0);
    ~LindbladIntegrator();
    LindbladIntegrator(LindbladIntegrator&&) noexcept;
    LindbladIntegrator& operator=(LindbladIntegrator&&) noexcept;

    void advance_to(double t);
    double time() const;
    const Eigen::MatrixXcd& state() const;
    const EvolutionDiagnostics& diagnostics() const;
    // Refresh trace / positivity monitors at the current time.
    void monitor();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Evolves to each requested output time (default: t_max only).
EvolutionResult evolve(const EvolutionSpec& spec, const DensityMatrix& rho0,
                       const std::vector<double>& output_times = {}, bool keep_states = false);

struct SteadyStateCriterion {
    double window{2.0};    // us
    double epsilon{1e-3};  // relative change bound over the trailing window
    double t_max{20.0};    // us
    double abs_floor{1e-6};
    int samples_per_window{8};
};

struct SteadyStateResult {
    std::vector<double> values;  // observables at the stopping time
    bool converged{false};
    double t_reached{0.0};
    EvolutionDiagnostics diagnostics;
};

// Integrates until every observable changed by less than epsilon * max(|v|, abs_floor)
// across the trailing window, or until criterion.t_max (converged = false).
// spec.t_max is ignored.
SteadyStateResult steady_state_response(const EvolutionSpec& spec,
                                        const SteadyStateCriterion& criterion,
                                        const DensityMatrix& rho0);

// Null vector of the (time-independent) Liouvillian with unit trace, by dense LU on the
// dim^2 x dim^2 superoperator. Independent of the time integrator.
DensityMatrix steady_state_direct(const Operator& hamiltonian, const std::vector<Collapse>& ops);

// ------------------------------------------------------------------ driven system helpers

// 1 - P(qubit in |0>)
Operator qubit_excitation_operator(const CompositeSpace& space);

// Spec for the full system driven through the qubit at (amplitude, frequency).
EvolutionSpec driven_spec(const SystemParams& p, double amplitude_mhz, double frequency_ghz,
                          Frame frame, const IntegratorOptions& integrator = {});

// Lowest eigenvector of the undriven lab-frame Hamiltonian.
DensityMatrix ground_state(const SystemParams& p);

enum class SteadyStateMethod { Evolve, Direct };

struct GridOptions {
    Frame frame{Frame::Rotating};
    SteadyStateMethod method{SteadyStateMethod::Evolve};
    SteadyStateCriterion criterion{};
    IntegratorOptions integrator{};
    int workers{1};
    // Called once per completed sweep row (row index, rows done), serialized.
    std::function<void(std::size_t, std::size_t)> on_row_done;
};

struct CellResult {
    double value{0.0};  // NaN on failure
    bool converged{false};
    double t_reached{0.0};
    EvolutionDiagnostics diagnostics;
    std::string error;
};

// Steady-state qubit excitation of one (piezo voltage, drive frequency) cell.
CellResult spectroscopy_cell(const SystemParams& p, double piezo_v, double freq_ghz,
                             double amplitude_mhz, const GridOptions& opts);

// Rows: piezo voltages, columns: drive frequencies (GHz). Cells are independent and
// evaluated on opts.workers threads; failed cells become NaN and are logged.
SpectroscopyGrid spectroscopy_grid(const SystemParams& p, const std::vector<double>& piezo_v,
                                   const std::vector<double>& freq_ghz, double amplitude_mhz,
                                   const GridOptions& opts);

struct StarkPoint {
    double amplitude_mhz;
    double center_ghz;   // NaN when extraction failed
    double shift_mhz;    // center - prediction
    bool ok;
    std::string message;
};

struct StarkOptions {
    double half_window_mhz{5.0};
    int scan_points{41};
    double center_tol_mhz{1e-4};
    GridOptions grid{.method = SteadyStateMethod::Direct, .on_row_done = {}};
};

// Line centre of the steady-state excitation near `prediction_ghz` for each amplitude,
// by a coarse scan followed by golden-section refinement.
std::vector<StarkPoint> ac_stark_probe(const SystemParams& p,
                                       const std::vector<double>& amplitudes_mhz,
                                       double prediction_ghz, const StarkOptions& opts = {});

// FWHM (MHz) of the steady-state 0->1 line of the bare qubit (qubit levels only).
double qubit_line_fwhm(const SystemParams& p, double amplitude_mhz, int qubit_levels = 3);

// Drive amplitude whose simulated 0->1 FWHM equals target_fwhm_mhz. Throws if the
// target is below the unbroadened linewidth.
double calibrate_amplitude(const SystemParams& p, double target_fwhm_mhz, int qubit_levels = 3);

}  // namespace qrtls
