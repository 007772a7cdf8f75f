#include "tel/factorizations.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <limits>

using namespace tel;
using tel::testing::orthonormality_residual;
using tel::testing::random_matrix;

namespace {

Matrix diag3() {
    Matrix m = Matrix::Zero(3, 3);
    m(0, 0) = 3;
    m(1, 1) = 2;
    m(2, 2) = 1;
    return m;
}

void check_svd_invariants(const SvdResult& s) {
    CHECK(orthonormality_residual(s.u) <= 1e-10);
    CHECK(orthonormality_residual(s.v) <= 1e-10);
    for (Eigen::Index i = 0; i < s.singular_values.size(); ++i) {
        CHECK(s.singular_values(i) >= 0.0);
        if (i > 0) CHECK(s.singular_values(i) <= s.singular_values(i - 1));
    }
    for (Eigen::Index j = 0; j < s.u.cols(); ++j) {
        Eigen::Index arg = 0;
        for (Eigen::Index i = 1; i < s.u.rows(); ++i) {
            if (std::abs(s.u(i, j)) > std::abs(s.u(arg, j))) arg = i;
        }
        CHECK(s.u(arg, j) >= 0.0);
    }
}

} // namespace

TEST_CASE("thin svd of simple matrices") {
    const SvdResult eye = thin_svd(Matrix::Identity(3, 3));
    CHECK(eye.singular_values == Vector::Ones(3));
    CHECK((eye.reconstruct() - Matrix::Identity(3, 3)).norm() <= 1e-15);

    const SvdResult d = thin_svd(diag3());
    CHECK(d.singular_values(0) == doctest::Approx(3));
    CHECK(d.singular_values(1) == doctest::Approx(2));
    CHECK(d.singular_values(2) == doctest::Approx(1));

    Matrix swap(2, 2);
    swap << 0, 1, 1, 0;
    const SvdResult s = thin_svd(swap);
    CHECK(s.singular_values(0) == doctest::Approx(1));
    CHECK(s.singular_values(1) == doctest::Approx(1));
    CHECK((s.reconstruct() - swap).norm() <= 1e-12);
    check_svd_invariants(s);
}

TEST_CASE("thin svd rejects empty and non-finite input") {
    CHECK_THROWS_AS(thin_svd(Matrix(0, 3)), std::invalid_argument);
    Matrix bad = Matrix::Ones(2, 2);
    bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(thin_svd(bad), std::domain_error);
    bad(1, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(thin_svd(bad), std::domain_error);
}

TEST_CASE("thin svd reconstructs random matrices and is deterministic") {
    Rng rng(41);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t r = 1 + rng.below(64), c = 1 + rng.below(64);
        const Matrix m = random_matrix(rng, r, c);
        const SvdResult s = thin_svd(m);
        CHECK(s.rank() == std::min(r, c));
        CHECK((m - s.reconstruct()).norm() <= 1e-9 * m.norm());
        check_svd_invariants(s);
        const SvdResult again = thin_svd(m);
        CHECK(again.u == s.u);
        CHECK(again.v == s.v);
        CHECK(again.singular_values == s.singular_values);
    }
}

TEST_CASE("truncated svd") {
    Rng rng(43);
    const Matrix u = random_matrix(rng, 5, 1), v = random_matrix(rng, 4, 1);
    const Matrix rank1 = u * v.transpose();
    CHECK((truncated_svd(rank1, 1).reconstruct() - rank1).norm() <= 1e-10 * rank1.norm());

    const SvdResult t = truncated_svd(diag3(), 2);
    CHECK(t.rank() == 2);
    CHECK((diag3() - t.reconstruct()).norm() == doctest::Approx(1.0).epsilon(1e-12));

    const Matrix m = random_matrix(rng, 4, 6);
    const SvdResult big = truncated_svd(m, 10);
    const SvdResult full = thin_svd(m);
    CHECK(big.rank() == 4);
    CHECK(big.u == full.u);
    CHECK(big.singular_values == full.singular_values);

    CHECK_THROWS_AS(truncated_svd(m, 0), std::invalid_argument);
}

TEST_CASE("truncated residual equals the discarded spectrum") {
    Rng rng(47);
    for (int trial = 0; trial < 30; ++trial) {
        const Matrix m = random_matrix(rng, 2 + rng.below(20), 2 + rng.below(20));
        const SvdResult full = thin_svd(m);
        const std::size_t r = 1 + rng.below(full.rank());
        double tail = 0.0;
        for (Eigen::Index i = static_cast<Eigen::Index>(r); i < full.singular_values.size(); ++i) {
            tail += full.singular_values(i) * full.singular_values(i);
        }
        const double residual = (m - truncated_svd(m, r).reconstruct()).squaredNorm();
        CHECK(std::abs(residual - tail) <= 1e-8 * std::max(tail, 1e-12 * m.squaredNorm()));
    }
}

TEST_CASE("truncated svd beats random factorizations of the same rank") {
    Rng rng(53);
    const Matrix m = random_matrix(rng, 12, 9);
    for (std::size_t r = 1; r <= 4; ++r) {
        const double best = (m - truncated_svd(m, r).reconstruct()).norm();
        for (int trial = 0; trial < 100; ++trial) {
            const Matrix b = random_matrix(rng, 12, r);
            // Best C for this B is the least squares fit, which only favors the random candidate.
            const Matrix c = b.colPivHouseholderQr().solve(m);
            CHECK(best <= (m - b * c).norm() + 1e-12);
        }
    }
}

TEST_CASE("pca recovers the direction of collinear data") {
    Matrix data(6, 2);
    for (int i = 0; i < 6; ++i) {
        const double t = i - 2.5;
        data(i, 0) = 3.0 * t;
        data(i, 1) = -4.0 * t;
    }
    const PcaModel model = pca_fit(data, 1);
    Vector dir(2);
    dir << 0.6, -0.8;
    CHECK(std::abs(model.components.col(0).dot(dir)) >= 1 - 1e-10);
}

TEST_CASE("pca at full dimension is a rotation") {
    Rng rng(59);
    const Matrix data = random_matrix(rng, 10, 4);
    const PcaModel model = pca_fit(data, 8);
    CHECK(model.dim() == 4);
    CHECK(orthonormality_residual(model.components) <= 1e-10);
    const Matrix z = pca_transform(model, data);
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 10; ++j) {
            CHECK(std::abs((z.row(i) - z.row(j)).norm() - (data.row(i) - data.row(j)).norm()) <= 1e-10);
        }
    }
}

TEST_CASE("pca centering") {
    const Matrix constant = Matrix::Constant(5, 3, 2.5);
    const Matrix z = pca_transform(pca_fit(constant, 1), constant);
    CHECK(z.cwiseAbs().maxCoeff() == 0.0);

    Rng rng(61);
    const Matrix data = random_matrix(rng, 20, 6);
    const PcaModel model = pca_fit(data, 3);
    CHECK(pca_transform(model, model.mean.transpose()).norm() == 0.0);
    const Matrix t = pca_transform(model, data);
    CHECK(t.colwise().mean().cwiseAbs().maxCoeff() <= 1e-10);

    const Matrix shifted = model.mean.transpose() + model.components.col(0).transpose();
    const Matrix one = pca_transform(model, shifted);
    CHECK(one(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(one(0, 1)) <= 1e-12);
    CHECK(std::abs(one(0, 2)) <= 1e-12);
}

TEST_CASE("pca argument checks") {
    CHECK_THROWS_AS(pca_fit(Matrix::Ones(1, 3), 1), std::invalid_argument);
    CHECK_THROWS_AS(pca_fit(Matrix::Ones(3, 3), 0), std::invalid_argument);
    const PcaModel model = pca_fit(Matrix::Identity(3, 3), 2);
    CHECK_THROWS_AS(pca_transform(model, Matrix::Ones(2, 4)), std::invalid_argument);
}
