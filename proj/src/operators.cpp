#include "qrtls/operators.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qrtls {

namespace {

void require_same_dim(const Operator& a, const Operator& b, const char* where) {
    if (a.dim() != b.dim()) {
        std::ostringstream os;
        os << where << ": dimension mismatch (" << a.dim() << " vs " << b.dim() << ")";
        throw DimensionError(os.str());
    }
}

void require_levels(int n_levels, const char* where) {
    if (n_levels < 2) {
        throw DimensionError(std::string(where) + ": n_levels must be >= 2, got " +
                             std::to_string(n_levels));
    }
}

}  // namespace

Operator::Operator(Eigen::MatrixXcd m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) {
        throw DimensionError("Operator: matrix must be square");
    }
    if (m_.rows() == 0) {
        throw DimensionError("Operator: dimension must be positive");
    }
}

Operator Operator::identity(Index dim) {
    return Operator(Eigen::MatrixXcd::Identity(dim, dim));
}

Operator Operator::zero(Index dim) {
    return Operator(Eigen::MatrixXcd::Zero(dim, dim));
}

Operator Operator::diagonal(std::span<const double> entries) {
    Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(static_cast<Index>(entries.size()),
                                                static_cast<Index>(entries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        m(static_cast<Index>(i), static_cast<Index>(i)) = entries[i];
    }
    return Operator(std::move(m));
}

Operator& Operator::operator+=(const Operator& rhs) {
    require_same_dim(*this, rhs, "Operator::operator+=");
    m_ += rhs.m_;
    return *this;
}

Operator& Operator::operator-=(const Operator& rhs) {
    require_same_dim(*this, rhs, "Operator::operator-=");
    m_ -= rhs.m_;
    return *this;
}

Operator& Operator::operator*=(cplx s) {
    m_ *= s;
    return *this;
}

Operator operator*(const Operator& a, const Operator& b) {
    require_same_dim(a, b, "Operator::operator*");
    return Operator(a.m_ * b.m_);
}

Operator commutator(const Operator& a, const Operator& b) {
    return a * b - b * a;
}

Operator ladder_destroy(int n_levels) {
    require_levels(n_levels, "ladder_destroy");
    Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(n_levels, n_levels);
    for (int i = 0; i + 1 < n_levels; ++i) {
        a(i, i + 1) = std::sqrt(static_cast<double>(i + 1));
    }
    return Operator(std::move(a));
}

Operator ladder_create(int n_levels) {
    return ladder_destroy(n_levels).adjoint();
}

Operator number_operator(int n_levels) {
    require_levels(n_levels, "number_operator");
    std::vector<double> n(static_cast<std::size_t>(n_levels));
    for (int i = 0; i < n_levels; ++i) n[static_cast<std::size_t>(i)] = i;
    return Operator::diagonal(n);
}

Operator projector(int n_levels, int k) {
    require_levels(n_levels, "projector");
    if (k < 0 || k >= n_levels) {
        throw DimensionError("projector: level index out of range");
    }
    Eigen::MatrixXcd p = Eigen::MatrixXcd::Zero(n_levels, n_levels);
    p(k, k) = 1.0;
    return Operator(std::move(p));
}

Operator tensor(std::span<const Operator> ops) {
    if (ops.empty()) {
        throw DimensionError("tensor: operator list is empty");
    }
    Eigen::MatrixXcd acc = ops.front().mat();
    for (std::size_t k = 1; k < ops.size(); ++k) {
        const Eigen::MatrixXcd& b = ops[k].mat();
        Eigen::MatrixXcd next(acc.rows() * b.rows(), acc.cols() * b.cols());
        for (Index i = 0; i < acc.rows(); ++i) {
            for (Index j = 0; j < acc.cols(); ++j) {
                next.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = acc(i, j) * b;
            }
        }
        acc = std::move(next);
    }
    return Operator(std::move(acc));
}

Operator tensor(std::initializer_list<Operator> ops) {
    return tensor(std::span<const Operator>(ops.begin(), ops.size()));
}

double hermiticity_defect(const Operator& op) {
    return (op.mat() - op.mat().adjoint()).cwiseAbs().maxCoeff();
}

bool is_hermitian(const Operator& op, double tol) {
    return hermiticity_defect(op) <= tol;
}

EigenSystem eigh(const Operator& op, double hermitian_rel_tol) {
    const double defect = hermiticity_defect(op);
    const double scale = std::max(1.0, op.norm());
    if (defect > hermitian_rel_tol * scale) {
        std::ostringstream os;
        os << "eigh: operator is not Hermitian (max |A - A^dagger| = " << defect
           << ", allowed " << hermitian_rel_tol * scale << ")";
        throw HermiticityError(os.str(), defect);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(op.mat());
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("eigh: eigendecomposition failed to converge");
    }
    return {solver.eigenvalues(), solver.eigenvectors()};
}

StateVector basis_state(Index dim, Index k) {
    if (k < 0 || k >= dim) {
        throw DimensionError("basis_state: index out of range");
    }
    StateVector v = StateVector::Zero(dim);
    v(k) = 1.0;
    return v;
}

StateVector normalized(const StateVector& psi) {
    const double n = psi.norm();
    if (n == 0.0) {
        throw std::invalid_argument("normalized: zero vector");
    }
    return psi / n;
}

DensityMatrix::DensityMatrix(Eigen::MatrixXcd rho) : rho_(std::move(rho)) {
    if (rho_.rows() != rho_.cols() || rho_.rows() == 0) {
        throw DimensionError("DensityMatrix: matrix must be square and non-empty");
    }
    const Check c = validate(rho_);
    if (!c.ok) {
        std::ostringstream os;
        os << "DensityMatrix: invalid state (hermiticity " << c.hermiticity << ", trace error "
           << c.trace_error << ", min eigenvalue " << c.min_eigenvalue << ")";
        throw std::invalid_argument(os.str());
    }
}

DensityMatrix DensityMatrix::pure(const StateVector& psi) {
    const StateVector v = normalized(psi);
    return DensityMatrix(v * v.adjoint(), NoCheck{});
}

DensityMatrix DensityMatrix::basis(Index dim, Index k) {
    return pure(basis_state(dim, k));
}

DensityMatrix DensityMatrix::maximally_mixed(Index dim) {
    return DensityMatrix(Eigen::MatrixXcd::Identity(dim, dim) / static_cast<double>(dim),
                         NoCheck{});
}

DensityMatrix DensityMatrix::unchecked(Eigen::MatrixXcd rho) {
    return DensityMatrix(std::move(rho), NoCheck{});
}

double DensityMatrix::min_eigenvalue() const {
    const Eigen::MatrixXcd h = 0.5 * (rho_ + rho_.adjoint());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(h, Eigen::EigenvaluesOnly);
    return solver.eigenvalues()(0);
}

DensityMatrix::Check DensityMatrix::validate(const Eigen::MatrixXcd& rho) {
    Check c{};
    c.hermiticity = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
    c.trace_error = std::abs(rho.trace() - cplx(1.0, 0.0));
    const Eigen::MatrixXcd h = 0.5 * (rho + rho.adjoint());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(h, Eigen::EigenvaluesOnly);
    c.min_eigenvalue = solver.eigenvalues()(0);
    c.ok = c.hermiticity <= 1e-10 && c.trace_error <= 1e-9 && c.min_eigenvalue >= -1e-10;
    return c;
}

namespace {

double checked_real(cplx v, double scale, const char* where) {
    if (std::abs(v.imag()) > 1e-10 * std::max(1.0, scale)) {
        std::ostringstream os;
        os << where << ": expectation value has imaginary part " << v.imag()
           << " (operator not Hermitian?)";
        throw std::invalid_argument(os.str());
    }
    return v.real();
}

}  // namespace

double expect(const Operator& op, const StateVector& psi) {
    if (op.dim() != psi.size()) {
        throw DimensionError("expect: operator and state dimensions differ");
    }
    const cplx v = psi.dot(op.mat() * psi);  // conjugates psi
    return checked_real(v, op.norm(), "expect");
}

double expect(const Operator& op, const DensityMatrix& rho) {
    if (op.dim() != rho.dim()) {
        throw DimensionError("expect: operator and density-matrix dimensions differ");
    }
    // Tr(rho A) = sum_ij rho_ij A_ji
    const cplx v = (rho.mat().transpose().array() * op.mat().array()).sum();
    return checked_real(v, op.norm(), "expect");
}

}  // namespace qrtls
