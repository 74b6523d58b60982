#include "../oracles.hpp"

#include "school/losses.hpp"
#include "school/verify.hpp"

#include <doctest.h>

#include <cmath>

using namespace school;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
    return m;
}

Matrix random_stochastic(Index n, Rng& rng) {
    Matrix s = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j)
            if (j != i && rng.uniform() < 0.3) s(i, j) = rng.uniform();
        if (s.row(i).sum() == 0.0) s(i, (i + 1) % n) = 1.0;
        s.row(i) /= s.row(i).sum();
    }
    return s;
}

std::vector<int> random_hard(Index n, int c, Rng& rng) {
    std::vector<int> h(static_cast<std::size_t>(n));
    for (auto& v : h) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
    return h;
}

}  // namespace

TEST_CASE("spectral loss examples") {
    SUBCASE("identical rows") {
        Rng rng(1);
        const Matrix s = random_stochastic(5, rng);
        const Matrix y = Matrix::Constant(5, 2, 0.7);
        CHECK(spectral_loss(AffinityMatrix::from_dense(s), y, 1.0).smoothness == 0.0);
    }
    SUBCASE("two nodes") {
        Matrix s(2, 2);
        s << 0, 1, 1, 0;
        Matrix y(2, 2);
        y << 1, 0, 0, 1;
        for (double gamma : {0.0, 0.5, 2.0}) {
            const SpectralLoss l = spectral_loss(AffinityMatrix::from_dense(s), y, gamma);
            CHECK(l.smoothness == doctest::Approx(1.0));
            CHECK(l.entropy == doctest::Approx(std::log(2.0)));
            CHECK(l.value == doctest::Approx(1.0 - gamma * std::log(2.0)));
        }
    }
    SUBCASE("uniform column means") {
        const Matrix y = Matrix::Constant(6, 3, 1.0 / 3.0);
        CHECK(spectral_loss(AffinityMatrix::from_dense(Matrix::Identity(6, 6)), y, 1.0).entropy ==
              doctest::Approx(std::log(3.0)));
    }
}

TEST_CASE("spectral loss matches direct summation and the trace form") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const Index n = 2 + static_cast<Index>(rng.below(63));
        const Index c = 1 + static_cast<Index>(rng.below(4));
        const Matrix s = random_stochastic(n, rng);
        const Matrix y = random_matrix(n, c, rng, -0.5, 1.5);
        const AffinityMatrix a = AffinityMatrix::from_dense(s);
        const SpectralLoss l = spectral_loss(a, y, 0.7);
        const double ref = oracle::smoothness(s, y);
        CHECK(l.smoothness >= 0.0);
        CHECK(std::abs(l.smoothness - ref) < 1e-9);
        CHECK(std::abs(spectral_trace(laplacian(a), y) - ref) < 1e-9);
        CHECK(std::abs(l.entropy - oracle::entropy_of_means(y)) < 1e-12);
    }
}

TEST_CASE("entropy clamp zeroes the gradient of clamped columns") {
    Matrix y(4, 2);
    y << 1, -1, 1, 1, 1, -1, 1, 1;  // column 1 has mean 0
    Matrix s = Matrix::Zero(4, 4);
    for (Index i = 0; i < 4; ++i) s(i, (i + 1) % 4) = 1.0;
    const SpectralLoss a = spectral_loss(AffinityMatrix::from_dense(s), y, 1.0);
    const SpectralLoss b = spectral_loss(AffinityMatrix::from_dense(s), y, 0.0);
    CHECK((a.grad_y.col(1) - b.grad_y.col(1)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(std::isfinite(a.value));
}

TEST_CASE("node consistency examples") {
    CHECK(node_consistency(Matrix::Zero(3, 2), Matrix::Zero(3, 2), 1.5).value == doctest::Approx(1.5 * std::log(4.0)));
    Rng rng(3);
    const Matrix q = random_matrix(4, 3, rng);
    CHECK(node_consistency(q, q, 1.0).alignment == 0.0);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix a = random_matrix(3, 2, rng);
        const Matrix b = random_matrix(3, 2, rng);
        CHECK(std::abs(node_consistency(a, b, 0.8).value - oracle::node_consistency(a, b, 0.8)) < 1e-9);
    }
    CHECK_THROWS_AS(node_consistency(Matrix::Zero(3, 2), Matrix::Zero(3, 3), 1.0), DimensionError);
}

TEST_CASE("node consistency is stable for large Gram entries") {
    const Matrix q = Matrix::Constant(400, 4, 3.0);
    const NodeConsistency l = node_consistency(q, q, 1.0);
    CHECK(std::isfinite(l.value));
    CHECK(l.value == doctest::Approx(2.0 * 400 * 9.0 + std::log(16.0)));
}

TEST_CASE("cluster pooling") {
    Matrix q(2, 2);
    q << 1, 0, 0, 1;
    const std::vector<int> both{0, 0};
    const ClusterPool p = cluster_pool(q, both, 2);
    CHECK(p.centroids.row(0).isApprox(RowVector::Constant(2, 0.5)));
    CHECK(p.centroids.row(1).isZero());
    CHECK(p.empty == std::vector<int>{1});

    Rng rng(4);
    const Matrix big = random_matrix(10, 3, rng);
    const ClusterPool all = cluster_pool(big, std::vector<int>(10, 0), 1);
    CHECK((all.centroids.row(0) - big.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);

    for (int trial = 0; trial < 20; ++trial) {
        const Matrix x = random_matrix(15, 4, rng);
        const auto hard = random_hard(15, 4, rng);
        CHECK((cluster_pool(x, hard, 4).centroids - oracle::group_means(x, hard, 4)).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK_THROWS(cluster_pool(q, std::vector<int>{0, 2}, 2));
}

TEST_CASE("cluster consistency") {
    Rng rng(5);
    const Matrix c = random_matrix(3, 2, rng);
    const std::vector<int> hard{2, 0, 1, 2};
    Matrix qt(4, 2);
    for (Index i = 0; i < 4; ++i) qt.row(i) = c.row(hard[static_cast<std::size_t>(i)]);
    CHECK(cluster_consistency(qt, c, hard).value == 0.0);

    Matrix one(1, 2);
    one << 1, 0;
    CHECK(cluster_consistency(one, Matrix::Zero(1, 2), std::vector<int>{0}).value == doctest::Approx(1.0));

    for (int trial = 0; trial < 20; ++trial) {
        const Matrix x = random_matrix(12, 3, rng);
        const Matrix cent = random_matrix(4, 3, rng);
        const auto h = random_hard(12, 4, rng);
        const double v = cluster_consistency(x, cent, h).value;
        CHECK(v >= 0.0);
        CHECK(std::abs(v - oracle::cluster_consistency(x, cent, h)) < 1e-9);
    }
    CHECK_THROWS(cluster_consistency(one, Matrix::Zero(1, 2), std::vector<int>{1}));
}

TEST_CASE("loss gradients against central differences") {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const Index n = 8;
        const Matrix s = random_stochastic(n, rng);
        const AffinityMatrix a = AffinityMatrix::from_dense(s);
        const Matrix y = random_matrix(n, 3, rng, 0.2, 1.0);
        auto sp = [&](const Matrix& m) { return spectral_loss(a, m, 0.6).value; };
        CHECK(finite_difference_check(sp, y, spectral_loss(a, y, 0.6).grad_y) < 1e-6);

        const Matrix q = random_matrix(n, 3, rng);
        const Matrix qt = random_matrix(n, 3, rng);
        const NodeConsistency nc = node_consistency(q, qt, 0.9);
        CHECK(finite_difference_check([&](const Matrix& m) { return node_consistency(m, qt, 0.9).value; }, q, nc.grad_q) <
              1e-6);
        CHECK(finite_difference_check([&](const Matrix& m) { return node_consistency(q, m, 0.9).value; }, qt,
                                      nc.grad_q_tilde) < 1e-6);

        const auto hard = random_hard(n, 3, rng);
        const Matrix cent = random_matrix(3, 3, rng);
        const ClusterConsistency cc = cluster_consistency(qt, cent, hard);
        CHECK(finite_difference_check([&](const Matrix& m) { return cluster_consistency(m, cent, hard).value; }, qt,
                                      cc.grad_q_tilde) < 1e-6);
        CHECK(finite_difference_check([&](const Matrix& m) { return cluster_consistency(qt, m, hard).value; }, cent,
                                      cc.grad_centroids) < 1e-6);

        // centroids as a function of Q through the pooling average
        const ClusterPool pool = cluster_pool(q, hard, 3);
        const ClusterConsistency via = cluster_consistency(qt, pool.centroids, hard);
        const Matrix grad_q = cluster_pool_backward(pool, hard, via.grad_centroids);
        auto through_pool = [&](const Matrix& m) {
            return cluster_consistency(qt, cluster_pool(m, hard, 3).centroids, hard).value;
        };
        CHECK(finite_difference_check(through_pool, q, grad_q) < 1e-6);
    }
}

TEST_CASE("total objective") {
    CHECK(total_objective(1.5, 7.0, 9.0, 0.0, 0.0) == 1.5);
    CHECK(total_objective(1.0, 2.0, 3.0, 0.5, 2.0) == doctest::Approx(8.0));
    const double base = total_objective(1.0, 2.0, 3.0, 0.5, 2.0) - total_objective(1.0, 0.0, 3.0, 0.5, 2.0);
    const double doubled = total_objective(1.0, 2.0, 3.0, 1.0, 2.0) - total_objective(1.0, 0.0, 3.0, 1.0, 2.0);
    CHECK(doubled == 2.0 * base);
}
