#include "qrtls/operators.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace qrtls;
using qrtls::testing::random_hermitian;
using qrtls::testing::random_int;
using qrtls::testing::random_matrix;
using qrtls::testing::random_state;

TEST(Ladder, CommutatorIsIdentityExceptTruncationEdge) {
    for (int n = 2; n <= 9; ++n) {
        const Operator a = ladder_destroy(n);
        const Eigen::MatrixXcd c = commutator(a, a.adjoint()).mat();
        for (int i = 0; i < n; ++i) {
            const double expected = i + 1 < n ? 1.0 : -(n - 1.0);
            EXPECT_NEAR(c(i, i).real(), expected, 1e-12) << "n=" << n << " i=" << i;
        }
        EXPECT_NEAR((c - Eigen::MatrixXcd(c.diagonal().asDiagonal())).norm(), 0.0, 1e-12);
    }
}

TEST(Ladder, NumberOperatorIsCreateTimesDestroy) {
    const Operator a = ladder_destroy(6);
    EXPECT_NEAR((ladder_create(6) * a - number_operator(6)).norm(), 0.0, 1e-12);
    EXPECT_NEAR(a(2, 3).real(), std::sqrt(3.0), 1e-15);
}

TEST(Ladder, RejectsSingleLevel) {
    EXPECT_THROW(ladder_destroy(1), DimensionError);
    EXPECT_THROW(number_operator(0), DimensionError);
    EXPECT_THROW(projector(3, 3), DimensionError);
}

TEST(Operator, RejectsNonSquareAndMismatchedSums) {
    EXPECT_THROW(Operator(Eigen::MatrixXcd::Zero(2, 3)), DimensionError);
    EXPECT_THROW(Operator(Eigen::MatrixXcd()), DimensionError);
    EXPECT_THROW(Operator::identity(2) + Operator::identity(3), DimensionError);
    EXPECT_THROW(Operator::identity(2) * Operator::identity(3), DimensionError);
}

TEST(Tensor, MixedProductProperty) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = random_int(rng, 2, 4);
        const Index m = random_int(rng, 2, 3);
        const Operator a(random_matrix(rng, n)), b(random_matrix(rng, m));
        const Operator c(random_matrix(rng, n)), d(random_matrix(rng, m));
        const Operator lhs = tensor({a, b}) * tensor({c, d});
        const Operator rhs = tensor({a * c, b * d});
        EXPECT_NEAR((lhs - rhs).norm(), 0.0, 1e-10 * (1.0 + lhs.norm()));
    }
}

TEST(Tensor, FirstFactorIsSlowestIndex) {
    const Operator t = tensor({projector(3, 1), projector(2, 0), projector(2, 1)});
    EXPECT_EQ(t.dim(), 12);
    // |1,0,1> -> (1*2 + 0)*2 + 1 = 5
    EXPECT_EQ(t(5, 5), cplx(1.0, 0.0));
    EXPECT_NEAR(t.mat().trace().real(), 1.0, 0.0);
    EXPECT_THROW(tensor(std::span<const Operator>{}), DimensionError);
}

TEST(Eigh, ReconstructsRandomHermitianMatrices) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        const Index n = random_int(rng, 1, 12);
        const Operator h = random_hermitian(rng, n);
        const EigenSystem es = eigh(h);
        const Eigen::MatrixXcd back = es.vectors * es.values.cast<cplx>().asDiagonal() * es.vectors.adjoint();
        EXPECT_NEAR((back - h.mat()).norm(), 0.0, 1e-10 * (1.0 + h.norm()));
        EXPECT_NEAR((es.vectors.adjoint() * es.vectors - Eigen::MatrixXcd::Identity(n, n)).norm(), 0.0, 1e-10);
        for (Index i = 1; i < n; ++i) EXPECT_LE(es.values(i - 1), es.values(i));
    }
}

TEST(Eigh, RejectsNonHermitianWithMagnitude) {
    Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(2, 2);
    m(0, 1) = 0.5;
    try {
        eigh(Operator(m));
        FAIL() << "expected HermiticityError";
    } catch (const HermiticityError& e) {
        EXPECT_NEAR(e.violation(), 0.5, 1e-15);
        EXPECT_NE(std::string(e.what()).find("0.5"), std::string::npos);
    }
}

TEST(DensityMatrix, ValidationRejectsInvalidStates) {
    Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(2, 2);
    rho(0, 0) = 0.7;
    EXPECT_THROW(DensityMatrix{rho}, std::invalid_argument);  // trace
    rho(1, 1) = 0.3;
    EXPECT_NO_THROW(DensityMatrix{rho});
    rho(0, 0) = 1.2;
    rho(1, 1) = -0.2;
    EXPECT_THROW(DensityMatrix{rho}, std::invalid_argument);  // negative eigenvalue
    rho(0, 0) = 0.5;
    rho(1, 1) = 0.5;
    rho(0, 1) = 0.1;
    EXPECT_THROW(DensityMatrix{rho}, std::invalid_argument);  // not Hermitian
}

TEST(DensityMatrix, RandomStatesAreValid) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto rho = random_state(rng, random_int(rng, 1, 10));
        EXPECT_NEAR(rho.trace(), 1.0, 1e-12);
        EXPECT_GE(rho.min_eigenvalue(), -1e-12);
    }
}

TEST(Expect, PureAndMixedAgree) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const Index n = random_int(rng, 2, 8);
        const Operator h = random_hermitian(rng, n);
        const StateVector psi = normalized(random_matrix(rng, n).col(0));
        EXPECT_NEAR(expect(h, psi), expect(h, DensityMatrix::pure(psi)), 1e-10 * (1.0 + h.norm()));
    }
    EXPECT_NEAR(expect(number_operator(5), basis_state(5, 3)), 3.0, 1e-15);
    EXPECT_NEAR(expect(number_operator(4), DensityMatrix::maximally_mixed(4)), 1.5, 1e-15);
}

TEST(Expect, NonHermitianObservableThrows) {
    EXPECT_THROW(expect(Operator(cplx(0.0, 1.0) * Eigen::MatrixXcd::Identity(2, 2)), basis_state(2, 0)),
                 std::invalid_argument);
    EXPECT_THROW(expect(number_operator(3), basis_state(4, 0)), DimensionError);
}
