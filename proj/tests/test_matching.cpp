#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bivlgm/matching.hpp"
#include "bivlgm/suites.hpp"
#include "oracles.hpp"

using namespace bivlgm;

TEST(Affinity, OrthonormalIdenticalNodesGiveIdentity) {
    const Matrix x = Matrix::identity(3);
    EXPECT_EQ(affinity(x, x, AffinityParams::identity(3)), Matrix::identity(3));
}

TEST(Affinity, OrthogonalPairIsZero) {
    EXPECT_EQ(affinity(Matrix{{1, 0}}, Matrix{{0, 1}}, AffinityParams::identity(2)), (Matrix{{0}}));
}

TEST(Affinity, ZeroBilinearGivesZero) {
    Rng rng(2);
    EXPECT_EQ(affinity(rng.normal_matrix(3, 2), rng.normal_matrix(4, 2), AffinityParams{Matrix(2, 2)}), Matrix(3, 4));
}

TEST(PositiveNormalize, ConstantInputMapsToOnes) {
    EXPECT_EQ(positive_normalize(Matrix(2, 3, 4.2)), Matrix(2, 3, 1.0));
}

TEST(PositiveNormalize, UnitVarianceTwoEntryCase) {
    const Matrix p = positive_normalize(Matrix{{1, -1}});
    EXPECT_NEAR(p(0, 0), std::numbers::e, 1e-12);
    EXPECT_NEAR(p(0, 1), 1.0 / std::numbers::e, 1e-12);
}

TEST(PositiveNormalize, StrictlyPositive) {
    Rng rng(8);
    for (int t = 0; t < 20; ++t) {
        const Matrix p = positive_normalize(rng.normal_matrix(4, 4, 30.0));
        for (double v : p.data()) EXPECT_GT(v, 0.0);
    }
}

TEST(Sinkhorn, UniformStaysUniform) {
    const auto c = sinkhorn(Matrix(2, 2, 1.0), SinkhornConfig::forward_only());
    for (double v : c.values.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Sinkhorn, DoublyStochasticInputIsFixedPoint) {
    const Matrix k{{0.9, 0.1}, {0.1, 0.9}};
    const auto c = sinkhorn(k, SinkhornConfig::forward_only());
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(c.values[i], k[i], 1e-15);
}

TEST(Sinkhorn, TwoByTwoMatchesBruteForceLimit) {
    const auto limit = oracle::sinkhorn_sweeps({{2, 1}, {1, 1}}, 100000);
    const auto c = sinkhorn(Matrix{{2, 1}, {1, 1}}, SinkhornConfig::forward_only());
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(c.values(i, j), limit[i][j], 1e-6);
    // The balanced matrix is [[a, 1-a], [1-a, a]] with a^2 / (1-a)^2 = 2.
    EXPECT_NEAR(c.values(0, 0), std::sqrt(2.0) / (1.0 + std::sqrt(2.0)), 1e-6);
}

TEST(Sinkhorn, RandomMatricesBecomeDoublyStochastic) {
    const auto r = sinkhorn_bench(42, 100, 2, 16, SinkhornConfig::forward_only());
    EXPECT_EQ(r.converged, r.trials);
    EXPECT_LT(r.worst_deviation, 1e-6);
}

TEST(Sinkhorn, RejectsNonPositiveEntries) {
    EXPECT_THROW(sinkhorn(Matrix{{1, 0}, {1, 1}}, SinkhornConfig::forward_only()), std::invalid_argument);
}

TEST(Sinkhorn, UnrolledTapeVersionMatchesSweeps) {
    Rng rng(5);
    const Matrix k = rng.uniform_matrix(3, 3, 0.1, 2.0);
    oracle::Grid g(3, std::vector<double>(3));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) g[i][j] = k(i, j);
    const auto want = oracle::sinkhorn_sweeps(g, 10);
    Tape t;
    const Matrix got = sinkhorn(t.constant(k), 10).value();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(got(i, j), want[i][j], 1e-14);
}

TEST(Ais, SingleNodeIsCertain) {
    Rng rng(1);
    const Graph a{Matrix{{0.3, 0.1}}, Matrix{{1}}}, b{Matrix{{-2.0, 4.0}}, Matrix{{1}}};
    const auto c = ais(a, b, GcnParams::init(2, rng), AffinityParams::init(2, rng), SinkhornConfig::forward_only());
    EXPECT_EQ(c.values, (Matrix{{1.0}}));
}

TEST(Ais, SelfMatchIsIdentityForSeparatedNodes) {
    const Matrix x{{3, 0, 0}, {0, 3, 0}, {0, 0, 3}, {-3, 0, 0}};
    const Graph g{x, Matrix(4, 4, 0.25)};
    const auto c = ais(g, g, GcnParams::zero(3), AffinityParams::identity(3), SinkhornConfig::forward_only());
    const auto arg = row_argmax(c.values);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(arg[i], i);
}

TEST(Ais, PermutedCopyIsRecovered) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto trial = permutation_trial(seed, 8, 16, 0.0);
        EXPECT_EQ(trial.recovered, trial.permutation) << "seed " << seed;
    }
}
