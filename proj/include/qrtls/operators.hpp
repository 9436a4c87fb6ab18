// operators.hpp: dense complex operators on truncated bosonic / spin spaces
//
// Operators are small (the production composite space is 6 x 6 x 2 = 72), so
// everything is stored densely in Eigen matrices.

#pragma once

#include <Eigen/Dense>

#include <complex>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qrtls {

using cplx = std::complex<double>;
using Index = Eigen::Index;

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class HermiticityError : public std::invalid_argument {
public:
    HermiticityError(const std::string& what, double violation)
        : std::invalid_argument(what), violation_(violation) {}
    double violation() const noexcept { return violation_; }

private:
    double violation_;
};

// Square complex matrix. Immutable through its public interface.
class Operator {
public:
    Operator() = default;
    explicit Operator(Eigen::MatrixXcd m);

    static Operator identity(Index dim);
    static Operator zero(Index dim);
    static Operator diagonal(std::span<const double> entries);

    Index dim() const noexcept { return m_.rows(); }
    const Eigen::MatrixXcd& mat() const noexcept { return m_; }
    cplx operator()(Index row, Index col) const { return m_(row, col); }

    Operator adjoint() const { return Operator(m_.adjoint()); }
    double norm() const { return m_.norm(); }

    Operator& operator+=(const Operator& rhs);
    Operator& operator-=(const Operator& rhs);
    Operator& operator*=(cplx s);

    friend Operator operator+(Operator a, const Operator& b) { return a += b; }
    friend Operator operator-(Operator a, const Operator& b) { return a -= b; }
    friend Operator operator*(const Operator& a, const Operator& b);
    friend Operator operator*(Operator a, cplx s) { return a *= s; }
    friend Operator operator*(cplx s, Operator a) { return a *= s; }
    friend Operator operator*(Operator a, double s) { return a *= cplx(s, 0.0); }
    friend Operator operator*(double s, Operator a) { return a *= cplx(s, 0.0); }

private:
    Eigen::MatrixXcd m_;
};

Operator commutator(const Operator& a, const Operator& b);

// Truncated annihilation operator: a[i, i+1] = sqrt(i+1).
Operator ladder_destroy(int n_levels);
Operator ladder_create(int n_levels);
Operator number_operator(int n_levels);
// |k><k| on an n-level space
Operator projector(int n_levels, int k);

// Kronecker product in list order (first factor is the slowest index).
Operator tensor(std::span<const Operator> ops);
Operator tensor(std::initializer_list<Operator> ops);

// max |A - A^dagger| elementwise
double hermiticity_defect(const Operator& op);
bool is_hermitian(const Operator& op, double tol);

struct EigenSystem {
    Eigen::VectorXd values;   // ascending
    Eigen::MatrixXcd vectors; // orthonormal columns
};

// Hermitian eigendecomposition. Rejects inputs whose anti-Hermitian part exceeds
// hermitian_rel_tol * max(1, ||A||).
EigenSystem eigh(const Operator& op, double hermitian_rel_tol = 1e-9);

using StateVector = Eigen::VectorXcd;

StateVector basis_state(Index dim, Index k);
StateVector normalized(const StateVector& psi);

class DensityMatrix {
public:
    DensityMatrix() = default;
    // Throws std::invalid_argument unless the matrix is a valid state (see validate()).
    explicit DensityMatrix(Eigen::MatrixXcd rho);

    static DensityMatrix pure(const StateVector& psi);
    static DensityMatrix basis(Index dim, Index k);
    static DensityMatrix maximally_mixed(Index dim);
    // Skips validation. Used by the integrator for intermediate states.
    static DensityMatrix unchecked(Eigen::MatrixXcd rho);

    Index dim() const noexcept { return rho_.rows(); }
    const Eigen::MatrixXcd& mat() const noexcept { return rho_; }
    double trace() const { return rho_.trace().real(); }
    double min_eigenvalue() const;

    struct Check {
        double hermiticity;
        double trace_error;
        double min_eigenvalue;
        bool ok;
    };
    static Check validate(const Eigen::MatrixXcd& rho);

private:
    struct NoCheck {};
    DensityMatrix(Eigen::MatrixXcd rho, NoCheck) : rho_(std::move(rho)) {}
    Eigen::MatrixXcd rho_;
};

// <psi|A|psi> / Tr(rho A). Throws if the imaginary residue exceeds 1e-10 (relative).
double expect(const Operator& op, const StateVector& psi);
double expect(const Operator& op, const DensityMatrix& rho);

}  // namespace qrtls
