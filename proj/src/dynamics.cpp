// dynamics.cpp: Lindblad integration, steady states, driven spectroscopy

#include "qrtls/dynamics.hpp"

#include "qrtls/constants.hpp"
#include "qrtls/parallel.hpp"
#include "qrtls/spectrum.hpp"

#include <Eigen/Sparse>
#include <unsupported/Eigen/MatrixFunctions>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

namespace qrtls {

using namespace units;

namespace {

using SpMat = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;
constexpr cplx I1{0.0, 1.0};

SpMat to_sparse(const Eigen::MatrixXcd& m) {
    std::vector<Eigen::Triplet<cplx>> trip;
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (m(i, j) != cplx(0.0, 0.0)) trip.emplace_back(i, j, m(i, j));
        }
    }
    SpMat s(m.rows(), m.cols());
    s.setFromTriplets(trip.begin(), trip.end());
    return s;
}

// Tr(A rho)
double trace_product(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& rho) {
    return a.cwiseProduct(rho.transpose()).sum().real();
}

double min_eig(const Eigen::MatrixXcd& rho) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

// Column-stacked superoperator: vec(A rho B) = (B^T kron A) vec(rho), rho_ij -> i + j d.
Eigen::MatrixXcd dense_liouvillian(const Eigen::MatrixXcd& h, const std::vector<Collapse>& ops) {
    const Index d = h.rows();
    const Index n = d * d;
    Eigen::MatrixXcd heff = h;
    for (const auto& c : ops) heff -= 0.5 * I1 * c.rate * (c.op.mat().adjoint() * c.op.mat());
    Eigen::MatrixXcd s = Eigen::MatrixXcd::Zero(n, n);
    for (Index j = 0; j < d; ++j) {
        for (Index i = 0; i < d; ++i) {
            for (Index k = 0; k < d; ++k) {
                s(i + j * d, k + j * d) += -I1 * heff(i, k);            // -i Heff rho
                s(j + i * d, j + k * d) += I1 * std::conj(heff(i, k));  // +i rho Heff^dag
            }
        }
    }
    for (const auto& c : ops) {
        if (c.rate == 0.0) continue;
        const auto& l = c.op.mat();
        std::vector<std::pair<Index, Index>> nz;
        for (Index i = 0; i < d; ++i) {
            for (Index k = 0; k < d; ++k) {
                if (l(i, k) != cplx(0.0, 0.0)) nz.emplace_back(i, k);
            }
        }
        for (auto [i, k] : nz) {
            for (auto [j, m] : nz) {
                s(i + j * d, k + m * d) += c.rate * l(i, k) * std::conj(l(j, m));
            }
        }
    }
    return s;
}

constexpr Index kAutoPropagatorMaxDim = 24;

void check_spec(const EvolutionSpec& spec, Index dim) {
    const Index d = spec.H0.dim();
    if (d == 0) throw DimensionError("evolve: empty Hamiltonian");
    if (d != dim) throw DimensionError("evolve: state and Hamiltonian dimensions differ");
    if (!is_hermitian(spec.H0, 1e-9 * std::max(1.0, spec.H0.norm()))) {
        throw HermiticityError("evolve: H0 is not Hermitian", hermiticity_defect(spec.H0));
    }
    for (const auto& c : spec.collapses) {
        if (c.op.dim() != d) throw DimensionError("evolve: collapse operator '" + c.name + "' has wrong dimension");
        if (!(c.rate >= 0.0) || !std::isfinite(c.rate)) {
            throw std::invalid_argument("evolve: collapse rate must be finite and >= 0 ('" + c.name + "')");
        }
    }
    for (const auto& o : spec.observables) {
        if (o.dim() != d) throw DimensionError("evolve: observable has wrong dimension");
    }
    if (spec.drive) {
        if (spec.drive->op.dim() != d) throw DimensionError("evolve: drive operator has wrong dimension");
        if (spec.frame == Frame::Rotating) {
            if (!spec.frame_generator) {
                throw std::invalid_argument("evolve: rotating frame needs a frame generator");
            }
            const auto& n = *spec.frame_generator;
            if (n.dim() != d) throw DimensionError("evolve: frame generator has wrong dimension");
            const double c = commutator(spec.H0, n).norm();
            if (c > 1e-9 * std::max(1.0, spec.H0.norm())) {
                throw std::invalid_argument(
                    "evolve: H0 does not conserve the frame generator; the rotating frame "
                    "needs RWA couplings");
            }
        }
    }
    const auto& io = spec.integrator;
    if (!(io.rtol > 0.0) || !(io.atol > 0.0)) throw std::invalid_argument("evolve: tolerances must be > 0");
}

// Dormand-Prince 5(4) tableau
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace

const char* frame_name(Frame f) {
    return f == Frame::Lab ? "lab" : "rotating";
}

Frame parse_frame(const std::string& name) {
    if (name == "lab") return Frame::Lab;
    if (name == "rotating" || name == "rwa") return Frame::Rotating;
    throw std::invalid_argument("unknown frame '" + name + "' (expected lab or rotating)");
}

const char* stepper_name(Stepper st) {
    switch (st) {
        case Stepper::RungeKutta: return "rk45";
        case Stepper::Propagator: return "propagator";
        case Stepper::Auto: break;
    }
    return "auto";
}

Stepper parse_stepper(const std::string& name) {
    if (name == "auto") return Stepper::Auto;
    if (name == "rk45") return Stepper::RungeKutta;
    if (name == "propagator") return Stepper::Propagator;
    throw std::invalid_argument("unknown stepper '" + name + "' (expected auto, rk45 or propagator)");
}

// ------------------------------------------------------------------ integrator

struct LindbladIntegrator::Impl {
    SpMat heff;   // H - i/2 sum L^dag L (+ rotating-frame terms)
    SpMat drive;  // lab frame only
    bool lab_drive{false};
    double omega{0.0};
    std::vector<SpMat> jumps;
    std::vector<SpMat> jumps_adj;
    IntegratorOptions opts;
    bool use_propagator{false};
    Eigen::MatrixXcd liou, prop;  // propagator mode
    double prop_dt{-1.0};

    Eigen::MatrixXcd rho, k1, k2, k3, k4, k5, k6, k7, y, x, tmp;
    double t{0.0};
    double h{0.0};
    double trace0{1.0};
    bool fsal_valid{false};
    EvolutionDiagnostics diag;

    void rhs(double time, const Eigen::MatrixXcd& state, Eigen::MatrixXcd& out) {
        ++diag.rhs_evaluations;
        x.noalias() = heff * state;
        if (lab_drive) {
            tmp.noalias() = drive * state;
            x += (2.0 * std::cos(omega * time)) * tmp;
        }
        out.noalias() = -I1 * x;
        out.noalias() += I1 * x.adjoint();
        for (std::size_t k = 0; k < jumps.size(); ++k) {
            tmp.noalias() = jumps[k] * state;
            out.noalias() += tmp * jumps_adj[k];
        }
    }

    double error_norm(const Eigen::MatrixXcd& err, const Eigen::MatrixXcd& y0,
                      const Eigen::MatrixXcd& y1) const {
        double acc = 0.0;
        const Index n = err.size();
        for (Index i = 0; i < n; ++i) {
            const double sc = opts.atol + opts.rtol * std::max(std::abs(y0(i)), std::abs(y1(i)));
            const double r = std::abs(err(i)) / sc;
            acc += r * r;
        }
        return std::sqrt(acc / static_cast<double>(n));
    }

    void initial_step() {
        rhs(t, rho, k1);
        fsal_valid = true;
        if (opts.dt_initial > 0.0) {
            h = opts.dt_initial;
            return;
        }
        const double fn = k1.norm();
        h = fn > 0.0 ? 0.01 * rho.norm() / fn : 1e-3;
        h = std::clamp(h, 1e-9, 1e-2);
    }

    void propagate_to(double target) {
        const double dt = target - t;
        if (dt <= 1e-14 * std::max(1.0, std::abs(target))) return;
        if (std::abs(dt - prop_dt) > 1e-13 * dt) {
            prop = (liou * dt).exp();
            prop_dt = dt;
        }
        const Index d = rho.rows();
        Eigen::Map<Eigen::VectorXcd> out(y.data(), d * d);
        out.noalias() = prop * Eigen::Map<const Eigen::VectorXcd>(rho.data(), d * d);
        tmp = 0.5 * (y - y.adjoint());
        diag.max_hermiticity_fix = std::max(diag.max_hermiticity_fix, tmp.cwiseAbs().maxCoeff());
        rho = 0.5 * (y + y.adjoint());
        t = target;
        ++diag.steps;
    }

    void step_to(double target) {
        if (use_propagator) {
            propagate_to(target);
            return;
        }
        const double eps_t = 1e-14 * std::max(1.0, std::abs(target));
        while (target - t > eps_t) {
            if (diag.steps + diag.rejected >= opts.max_steps) {
                throw StiffProblemError("evolve: step budget exhausted at t = " + std::to_string(t) + " us");
            }
            if (!fsal_valid) {
                rhs(t, rho, k1);
                fsal_valid = true;
            }
            double hmax = target - t;
            if (opts.dt_max > 0.0) hmax = std::min(hmax, opts.dt_max);
            const bool clipped = h >= hmax;
            const double hs = clipped ? hmax : h;

            y = rho + hs * a21 * k1;
            rhs(t + c2 * hs, y, k2);
            y = rho + hs * (a31 * k1 + a32 * k2);
            rhs(t + c3 * hs, y, k3);
            y = rho + hs * (a41 * k1 + a42 * k2 + a43 * k3);
            rhs(t + c4 * hs, y, k4);
            y = rho + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
            rhs(t + c5 * hs, y, k5);
            y = rho + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
            rhs(t + hs, y, k6);
            y = rho + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
            rhs(t + hs, y, k7);
            tmp = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

            const double err = error_norm(tmp, rho, y);
            if (!std::isfinite(err)) {
                throw StiffProblemError("evolve: non-finite state at t = " + std::to_string(t) + " us");
            }
            if (err <= 1.0) {
                t += hs;
                ++diag.steps;
                // Restore exact Hermiticity lost to round-off.
                tmp = 0.5 * (y - y.adjoint());
                const double fix = tmp.cwiseAbs().maxCoeff();
                diag.max_hermiticity_fix = std::max(diag.max_hermiticity_fix, fix);
                if (fix > 1e-10) spdlog::debug("evolve: hermiticity correction {:.3e} at t = {}", fix, t);
                rho = 0.5 * (y + y.adjoint());
                if (fix > 0.0) {
                    fsal_valid = false;
                } else {
                    std::swap(k1, k7);
                }
                const double fac =
                    err > 0.0 ? std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0) : 5.0;
                const double hn = hs * fac;
                h = clipped ? std::max(h, hn) : hn;
            } else {
                ++diag.rejected;
                h = hs * std::clamp(0.9 * std::pow(err, -0.2), 0.2, 1.0);
                if (h < opts.dt_min) {
                    std::ostringstream os;
                    os << "evolve: step size " << h << " us below minimum at t = " << t
                       << " us (problem too stiff for the explicit integrator)";
                    throw StiffProblemError(os.str());
                }
            }
        }
    }
};

LindbladIntegrator::LindbladIntegrator(const EvolutionSpec& spec, const DensityMatrix& rho0)
    : impl_(std::make_unique<Impl>()) {
    check_spec(spec, rho0.dim());
    auto& m = *impl_;
    m.opts = spec.integrator;
    const Index d = spec.H0.dim();

    Eigen::MatrixXcd heff = spec.H0.mat();
    if (spec.drive) {
        if (spec.frame == Frame::Rotating) {
            heff += spec.drive->op.mat() - spec.drive->omega * spec.frame_generator->mat();
        } else {
            m.lab_drive = true;
            m.omega = spec.drive->omega;
            m.drive = to_sparse(spec.drive->op.mat());
        }
    }
    switch (m.opts.stepper) {
        case Stepper::Auto: m.use_propagator = !m.lab_drive && d <= kAutoPropagatorMaxDim; break;
        case Stepper::RungeKutta: m.use_propagator = false; break;
        case Stepper::Propagator:
            if (m.lab_drive) throw std::invalid_argument("evolve: the propagator stepper needs a time-independent generator");
            m.use_propagator = true;
            break;
    }
    if (m.use_propagator) {
        m.liou = dense_liouvillian(heff, spec.collapses);
        m.rho = rho0.mat();
        m.trace0 = rho0.trace();
        m.y.resize(d, d);
        m.tmp.resize(d, d);
        m.diag.min_eigenvalue = min_eig(m.rho);
        return;
    }
    for (const auto& c : spec.collapses) {
        if (c.rate == 0.0) continue;
        const Eigen::MatrixXcd l = std::sqrt(c.rate) * c.op.mat();
        heff -= 0.5 * I1 * (l.adjoint() * l);
        m.jumps.push_back(to_sparse(l));
        m.jumps_adj.push_back(to_sparse(l.adjoint()));
    }
    m.heff = to_sparse(heff);
    m.rho = rho0.mat();
    m.trace0 = rho0.trace();
    for (auto* k : {&m.k1, &m.k2, &m.k3, &m.k4, &m.k5, &m.k6, &m.k7, &m.y, &m.x, &m.tmp}) {
        k->resize(d, d);
    }
    m.initial_step();
    m.diag.min_eigenvalue = min_eig(m.rho);
}

LindbladIntegrator::~LindbladIntegrator() = default;
LindbladIntegrator::LindbladIntegrator(LindbladIntegrator&&) noexcept = default;
LindbladIntegrator& LindbladIntegrator::operator=(LindbladIntegrator&&) noexcept = default;

void LindbladIntegrator::advance_to(double t) {
    if (t < impl_->t) throw std::invalid_argument("LindbladIntegrator::advance_to: time must not decrease");
    impl_->step_to(t);
}

double LindbladIntegrator::time() const { return impl_->t; }
const Eigen::MatrixXcd& LindbladIntegrator::state() const { return impl_->rho; }
const EvolutionDiagnostics& LindbladIntegrator::diagnostics() const { return impl_->diag; }

void LindbladIntegrator::monitor() {
    auto& m = *impl_;
    if (m.t > 0.0) {
        const double drift = std::abs(m.rho.trace().real() - m.trace0) / m.t;
        m.diag.trace_drift_per_us = std::max(m.diag.trace_drift_per_us, drift);
    }
    m.diag.min_eigenvalue = std::min(m.diag.min_eigenvalue, min_eig(m.rho));
}

EvolutionResult evolve(const EvolutionSpec& spec, const DensityMatrix& rho0,
                       const std::vector<double>& output_times, bool keep_states) {
    std::vector<double> times = output_times.empty() ? std::vector<double>{spec.t_max} : output_times;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!(times[i] >= 0.0) || !std::isfinite(times[i]) || (i > 0 && times[i] < times[i - 1])) {
            throw std::invalid_argument("evolve: output times must be finite, >= 0 and non-decreasing");
        }
    }
    LindbladIntegrator integ(spec, rho0);
    EvolutionResult res;
    for (double t : times) {
        integ.advance_to(t);
        integ.monitor();
        res.times.push_back(t);
        std::vector<double> vals;
        vals.reserve(spec.observables.size());
        for (const auto& o : spec.observables) vals.push_back(trace_product(o.mat(), integ.state()));
        res.observables.push_back(std::move(vals));
        if (keep_states) res.states.push_back(DensityMatrix::unchecked(integ.state()));
    }
    res.final_state = DensityMatrix::unchecked(integ.state());
    res.diagnostics = integ.diagnostics();
    return res;
}

SteadyStateResult steady_state_response(const EvolutionSpec& spec,
                                        const SteadyStateCriterion& c,
                                        const DensityMatrix& rho0) {
    if (!(c.window > 0.0) || !(c.t_max >= c.window) || !(c.epsilon > 0.0) || c.samples_per_window < 2) {
        throw std::invalid_argument(
            "steady_state_response: need window > 0, t_max >= window, epsilon > 0, "
            "samples_per_window >= 2");
    }
    if (spec.observables.empty()) {
        throw std::invalid_argument("steady_state_response: no observables to monitor");
    }
    LindbladIntegrator integ(spec, rho0);
    const double dt = c.window / c.samples_per_window;
    std::deque<std::pair<double, std::vector<double>>> hist;
    auto sample = [&] {
        std::vector<double> v;
        for (const auto& o : spec.observables) v.push_back(trace_product(o.mat(), integ.state()));
        return v;
    };
    hist.emplace_back(0.0, sample());

    SteadyStateResult out;
    for (int k = 1;; ++k) {
        const double t = std::min(c.t_max, k * dt);
        integ.advance_to(t);
        integ.monitor();
        hist.emplace_back(t, sample());
        while (hist.front().first < t - c.window - 1e-9) hist.pop_front();

        if (t >= c.window - 1e-12) {
            const auto& now = hist.back().second;
            bool steady = true;
            for (const auto& [ts, v] : hist) {
                for (std::size_t i = 0; i < v.size() && steady; ++i) {
                    const double tol = c.epsilon * std::max(std::abs(now[i]), c.abs_floor);
                    if (std::abs(v[i] - now[i]) > tol) steady = false;
                }
            }
            if (steady) {
                out.converged = true;
                break;
            }
        }
        if (t >= c.t_max) break;
    }
    out.values = hist.back().second;
    out.t_reached = integ.time();
    out.diagnostics = integ.diagnostics();
    return out;
}

DensityMatrix steady_state_direct(const Operator& hamiltonian, const std::vector<Collapse>& ops) {
    const Index d = hamiltonian.dim();
    if (d == 0) throw DimensionError("steady_state_direct: empty Hamiltonian");
    if (d > 48) {
        throw std::invalid_argument("steady_state_direct: dimension " + std::to_string(d) +
                                    " too large for a dense Liouvillian; use time evolution");
    }
    const Index n = d * d;
    for (const auto& c : ops) {
        if (c.op.dim() != d) throw DimensionError("steady_state_direct: collapse dimension mismatch");
    }
    Eigen::MatrixXcd s = dense_liouvillian(hamiltonian.mat(), ops);
    // Replace the rho_00 equation by the trace condition.
    s.row(0).setZero();
    for (Index k = 0; k < d; ++k) s(0, k + k * d) = 1.0;
    Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(n);
    rhs(0) = 1.0;
    const Eigen::VectorXcd v = s.partialPivLu().solve(rhs);
    if (!v.allFinite()) throw std::runtime_error("steady_state_direct: singular Liouvillian");

    Eigen::MatrixXcd rho = Eigen::Map<const Eigen::MatrixXcd>(v.data(), d, d);
    rho = 0.5 * (rho + rho.adjoint());
    rho /= rho.trace().real();
    const auto chk = DensityMatrix::validate(rho);
    if (!chk.ok) {
        std::ostringstream os;
        os << "steady_state_direct: solution is not a valid state (min eigenvalue " << chk.min_eigenvalue
           << "); the steady state may not be unique";
        throw std::runtime_error(os.str());
    }
    return DensityMatrix(std::move(rho));
}

// ------------------------------------------------------------------ driven system helpers

Operator qubit_excitation_operator(const CompositeSpace& space) {
    return space.identity() - space.embed(Factor::Qubit, projector(space.levels(Factor::Qubit), 0));
}

EvolutionSpec driven_spec(const SystemParams& p, double amplitude_mhz, double frequency_ghz,
                          Frame frame, const IntegratorOptions& integrator) {
    const CompositeSpace space(p);
    EvolutionSpec spec;
    spec.H0 = full_hamiltonian(p, frame == Frame::Rotating ? CouplingForm::Rwa : CouplingForm::Full);
    spec.drive = drive_hamiltonian(space, amplitude_mhz, frequency_ghz);
    spec.frame = frame;
    if (frame == Frame::Rotating) spec.frame_generator = space.excitation_number();
    spec.collapses = collapse_operators(p).ops;
    spec.integrator = integrator;
    spec.observables = {qubit_excitation_operator(space)};
    return spec;
}

DensityMatrix ground_state(const SystemParams& p) {
    const auto es = eigh(full_hamiltonian(p, CouplingForm::Full));
    return DensityMatrix::pure(es.vectors.col(0));
}

namespace {

// Time-independent rotating-frame generator H0 - omega N + drive.
Operator rotating_hamiltonian(const EvolutionSpec& spec) {
    return spec.H0 + spec.drive->op - spec.drive->omega * *spec.frame_generator;
}

}  // namespace

CellResult spectroscopy_cell(const SystemParams& p, double piezo_v, double freq_ghz,
                             double amplitude_mhz, const GridOptions& opts) {
    CellResult out;
    try {
        SystemParams q = p;
        q.piezo_v = piezo_v;
        const auto spec = driven_spec(q, amplitude_mhz, freq_ghz, opts.frame, opts.integrator);
        if (opts.method == SteadyStateMethod::Direct) {
            if (opts.frame != Frame::Rotating) {
                throw std::invalid_argument("direct steady state needs the rotating frame");
            }
            const auto rho = steady_state_direct(rotating_hamiltonian(spec), spec.collapses);
            out.value = trace_product(spec.observables[0].mat(), rho.mat());
            out.converged = true;
        } else {
            const DensityMatrix rho0 = opts.frame == Frame::Rotating
                                           ? DensityMatrix::basis(q.dim(), 0)
                                           : ground_state(q);
            const auto ss = steady_state_response(spec, opts.criterion, rho0);
            out.value = ss.values[0];
            out.converged = ss.converged;
            out.t_reached = ss.t_reached;
            out.diagnostics = ss.diagnostics;
        }
    } catch (const std::exception& e) {
        out.value = std::numeric_limits<double>::quiet_NaN();
        out.error = e.what();
        spdlog::warn("spectroscopy cell (V = {}, f = {} GHz) failed: {}", piezo_v, freq_ghz, e.what());
    }
    return out;
}

SpectroscopyGrid spectroscopy_grid(const SystemParams& p, const std::vector<double>& piezo_v,
                                   const std::vector<double>& freq_ghz, double amplitude_mhz,
                                   const GridOptions& opts) {
    if (piezo_v.empty() || freq_ghz.empty()) {
        throw std::invalid_argument("spectroscopy_grid: empty sweep or frequency axis");
    }
    for (double v : piezo_v) {
        if (!std::isfinite(v)) throw std::invalid_argument("spectroscopy_grid: non-finite piezo voltage");
    }
    for (double f : freq_ghz) {
        if (!(f > 0.0) || !std::isfinite(f)) throw std::invalid_argument("spectroscopy_grid: frequencies must be > 0");
    }
    p.validate();

    const std::size_t rows = piezo_v.size();
    const std::size_t cols = freq_ghz.size();
    std::vector<std::size_t> row_left(rows, cols);
    std::size_t rows_done = 0;
    const int workers = opts.workers > 0 ? opts.workers : default_worker_count();

    auto cells = parallel_map(
        rows * cols, workers,
        [&](std::size_t k) {
            return spectroscopy_cell(p, piezo_v[k / cols], freq_ghz[k % cols], amplitude_mhz, opts);
        },
        [&](std::size_t k) {
            if (--row_left[k / cols] == 0) {
                ++rows_done;
                if (opts.on_row_done) opts.on_row_done(k / cols, rows_done);
            }
        });

    SpectroscopyGrid g;
    g.sweep_name = "piezo_v";
    g.sweep = piezo_v;
    g.freq = freq_ghz;
    g.values.resize(static_cast<Index>(rows), static_cast<Index>(cols));
    std::size_t converged = 0, failed = 0;
    double max_t = 0.0, max_drift = 0.0, min_ev = 1.0;
    for (std::size_t k = 0; k < cells.size(); ++k) {
        const auto& c = cells[k];
        g.values(static_cast<Index>(k / cols), static_cast<Index>(k % cols)) = c.value;
        if (!c.error.empty()) {
            ++failed;
            continue;
        }
        if (c.converged) ++converged;
        max_t = std::max(max_t, c.t_reached);
        max_drift = std::max(max_drift, c.diagnostics.trace_drift_per_us);
        min_ev = std::min(min_ev, c.diagnostics.min_eigenvalue);
    }
    if (converged + failed < cells.size()) {
        spdlog::warn("spectroscopy_grid: {} of {} cells did not meet the steady-state criterion by t_max",
                     cells.size() - converged - failed, cells.size());
    }

    g.metadata = params_metadata(p);
    auto put = [&](const std::string& k, const std::string& v) { g.metadata.emplace_back(k, v); };
    auto num = [](double x) {
        std::ostringstream os;
        os.precision(17);
        os << x;
        return os.str();
    };
    put("artifact", "spectroscopy_grid");
    put("observable", "1 - P(qubit in |0>)");
    put("amplitude_mhz", num(amplitude_mhz));
    put("frame", frame_name(opts.frame));
    put("method", opts.method == SteadyStateMethod::Direct ? "direct" : "evolve");
    put("criterion.window_us", num(opts.criterion.window));
    put("criterion.epsilon", num(opts.criterion.epsilon));
    put("criterion.t_max_us", num(opts.criterion.t_max));
    put("integrator.stepper", stepper_name(opts.integrator.stepper));
    put("integrator.rtol", num(opts.integrator.rtol));
    put("integrator.atol", num(opts.integrator.atol));
    put("cells", std::to_string(cells.size()));
    put("cells_converged", std::to_string(converged));
    put("cells_failed", std::to_string(failed));
    put("max_t_reached_us", num(max_t));
    put("max_trace_drift_per_us", num(max_drift));
    put("min_eigenvalue", num(min_ev));
    return g;
}

// ------------------------------------------------------------------ AC Stark probe

namespace {

constexpr double golden = 0.6180339887498949;

// Maximum of a unimodal f on [a, b].
template <class F>
double golden_max(F&& f, double a, double b, double tol) {
    double x1 = b - golden * (b - a);
    double x2 = a + golden * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > tol) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + golden * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - golden * (b - a);
            f1 = f(x1);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace

std::vector<StarkPoint> ac_stark_probe(const SystemParams& p,
                                       const std::vector<double>& amplitudes_mhz,
                                       double prediction_ghz, const StarkOptions& opts) {
    if (opts.scan_points < 3) throw std::invalid_argument("ac_stark_probe: need at least 3 scan points");
    if (!(opts.half_window_mhz > 0.0)) throw std::invalid_argument("ac_stark_probe: window must be > 0");
    std::vector<StarkPoint> out;
    for (double a : amplitudes_mhz) {
        StarkPoint sp{a, std::numeric_limits<double>::quiet_NaN(),
                      std::numeric_limits<double>::quiet_NaN(), false, {}};
        if (a == 0.0) {
            sp.center_ghz = prediction_ghz;
            sp.shift_mhz = 0.0;
            sp.ok = true;
            sp.message = "zero amplitude: eigenvalue prediction";
            out.push_back(sp);
            continue;
        }
        auto response = [&](double f) {
            return spectroscopy_cell(p, p.piezo_v, f, a, opts.grid).value;
        };
        const auto scan = linspace(prediction_ghz - 1e-3 * opts.half_window_mhz,
                                   prediction_ghz + 1e-3 * opts.half_window_mhz, opts.scan_points);
        std::vector<double> vals(scan.size());
        const int workers = opts.grid.workers > 0 ? opts.grid.workers : default_worker_count();
        vals = parallel_map(scan.size(), workers, [&](std::size_t i) { return response(scan[i]); });

        std::size_t best = scan.size();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            if (std::isfinite(vals[i]) && (best == scan.size() || vals[i] > vals[best])) best = i;
        }
        if (best == scan.size()) {
            sp.message = "no finite response in the scan window";
        } else if (best == 0 || best + 1 == scan.size()) {
            sp.message = "response maximum on the scan boundary; widen the window";
        } else {
            const double c = golden_max([&](double f) {
                const double v = response(f);
                return std::isfinite(v) ? v : -1.0;
            }, scan[best - 1], scan[best + 1], 1e-3 * opts.center_tol_mhz);
            sp.center_ghz = c;
            sp.shift_mhz = 1e3 * (c - prediction_ghz);
            sp.ok = true;
        }
        if (!sp.ok) spdlog::warn("ac_stark_probe: amplitude {} MHz: {}", a, sp.message);
        out.push_back(sp);
    }
    return out;
}

// ------------------------------------------------------------------ amplitude calibration

namespace {

struct QubitOnly {
    Operator h;     // lab frame, rad/us
    Operator n;
    Operator x;     // q + q^dag
    std::vector<Collapse> ops;
    Operator excited;
};

QubitOnly qubit_only(const SystemParams& p, int levels) {
    if (levels < 2) throw ParameterError("qubit_line_fwhm: need at least 2 qubit levels");
    QubitParams qp = p.qubit;
    qp.n_levels = levels;
    QubitOnly m;
    m.h = qubit_hamiltonian(qp, p.qubit_frequency());
    m.n = number_operator(levels);
    const Operator a = ladder_destroy(levels);
    m.x = a + a.adjoint();
    const auto& dc = p.decoherence;
    if (dc.gamma1_q > 0.0) m.ops.push_back({a, dc.gamma1_q, "qubit_relax"});
    const double gphi = pure_dephasing(dc.gamma1_q, dc.gamma2_q);
    if (gphi > 0.0) m.ops.push_back({m.n, 2.0 * gphi, "qubit_dephase"});
    m.excited = Operator::identity(levels) - projector(levels, 0);
    return m;
}

double qubit_only_response(const QubitOnly& m, double amplitude_mhz, double freq_ghz) {
    const Operator h = m.h - ghz_to_angular(freq_ghz) * m.n + 0.5 * mhz_to_angular(amplitude_mhz) * m.x;
    return trace_product(m.excited.mat(), steady_state_direct(h, m.ops).mat());
}

// Root of g on [a, b] given a sign change.
template <class G>
double bisect(G&& g, double a, double b) {
    double ga = g(a);
    for (int i = 0; i < 200 && std::abs(b - a) > 1e-13 * std::max(1.0, std::abs(a)); ++i) {
        const double m = 0.5 * (a + b);
        const double gm = g(m);
        if ((gm > 0.0) == (ga > 0.0)) {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    return 0.5 * (a + b);
}

}  // namespace

double qubit_line_fwhm(const SystemParams& p, double amplitude_mhz, int qubit_levels) {
    if (!(amplitude_mhz > 0.0)) throw ParameterError("qubit_line_fwhm: amplitude must be > 0");
    const auto m = qubit_only(p, qubit_levels);
    const double fq = p.qubit_frequency();
    const double g2 = p.decoherence.gamma2_q;
    const double cap = qubit_levels > 2 ? 0.3 * std::abs(p.qubit.anharmonicity()) : 1.0;  // GHz
    double w = std::min(cap, 1e-3 * std::max(10.0 * g2 / constants::pi, 4.0 * amplitude_mhz));

    auto r = [&](double f) { return qubit_only_response(m, amplitude_mhz, f); };
    for (;;) {
        const auto scan = linspace(fq - w, fq + w, 201);
        std::size_t best = 0;
        std::vector<double> v(scan.size());
        for (std::size_t i = 0; i < scan.size(); ++i) {
            v[i] = r(scan[i]);
            if (v[i] > v[best]) best = i;
        }
        const bool interior = best > 0 && best + 1 < scan.size();
        if (interior) {
            const double f0 = golden_max(r, scan[best - 1], scan[best + 1], 1e-12);
            const double half = 0.5 * r(f0);
            if (v.front() < half && v.back() < half) {
                auto g = [&](double f) { return r(f) - half; };
                const double lo = bisect(g, scan.front(), f0);
                const double hi = bisect(g, f0, scan.back());
                return 1e3 * (hi - lo);
            }
        }
        if (w >= cap) {
            throw std::runtime_error("qubit_line_fwhm: line wider than the search window");
        }
        w = std::min(cap, 2.0 * w);
    }
}

double calibrate_amplitude(const SystemParams& p, double target_fwhm_mhz, int qubit_levels) {
    const double floor_mhz = p.decoherence.gamma2_q / constants::pi;
    if (!(target_fwhm_mhz > floor_mhz)) {
        std::ostringstream os;
        os << "calibrate_amplitude: target FWHM " << target_fwhm_mhz
           << " MHz is not above the unbroadened linewidth " << floor_mhz << " MHz";
        throw ParameterError(os.str());
    }
    double lo = 0.0, hi = 1.0;
    while (qubit_line_fwhm(p, hi, qubit_levels) < target_fwhm_mhz) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e4) throw std::runtime_error("calibrate_amplitude: no amplitude below 10 GHz reaches the target");
    }
    while (hi - lo > 1e-9 * hi) {
        const double mid = 0.5 * (lo + hi);
        if (qubit_line_fwhm(p, mid, qubit_levels) < target_fwhm_mhz) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace qrtls
