#include <gtest/gtest.h>

#include <cmath>

#include "bivlgm/gcn.hpp"
#include "bivlgm/graph.hpp"
#include "oracles.hpp"

using namespace bivlgm;

TEST(EdgeGenerator, SingleNodeIsSelfLoop) {
    Rng rng(1);
    const auto p = EdgeGeneratorParams::init(3, rng);
    EXPECT_EQ(generate_edges(Matrix{{0.3, -2.0, 5.0}}, p), (Matrix{{1.0}}));
}

TEST(EdgeGenerator, IdenticalRowsGiveUniformRows) {
    Rng rng(2);
    const auto p = EdgeGeneratorParams::init(2, rng);
    const Matrix e = generate_edges(Matrix{{0.4, 0.9}, {0.4, 0.9}}, p);
    for (double v : e.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(EdgeGenerator, HandEvaluatedTwoNodeCase) {
    const EdgeGeneratorParams p{Matrix::identity(2), Matrix::identity(2)};
    const Matrix e = generate_edges(Matrix{{1, 0}, {0, 1}}, p);
    const double d = 1.0 / std::sqrt(2.0);
    const auto want = oracle::row_softmax({{d, 0.0}, {0.0, d}});
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(e(i, j), want[i][j], 1e-15);
}

TEST(EdgeGenerator, MatchesIndependentRecomputation) {
    Rng rng(7);
    const auto p = EdgeGeneratorParams::init(4, rng, 3);
    const Matrix x = rng.normal_matrix(3, 4);
    const auto to_grid = [](const Matrix& m) {
        oracle::Grid g(m.rows(), std::vector<double>(m.cols()));
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
        return g;
    };
    const auto q = oracle::matmul(to_grid(x), to_grid(p.query));
    const auto k = oracle::matmul(to_grid(x), to_grid(p.key));
    oracle::Grid logits(3, std::vector<double>(3, 0.0));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            for (std::size_t c = 0; c < 3; ++c) logits[i][j] += q[i][c] * k[j][c];
            logits[i][j] /= std::sqrt(3.0);
        }
    const auto want = oracle::row_softmax(logits);
    const Graph g = build_graph(x, p);
    EXPECT_EQ(g.nodes, x);
    for (std::size_t i = 0; i < 3; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_NEAR(g.adjacency(i, j), want[i][j], 1e-14);
            EXPECT_GT(g.adjacency(i, j), 0.0);
            row += g.adjacency(i, j);
        }
        EXPECT_NEAR(row, 1.0, 1e-9);
    }
}

TEST(EdgeGenerator, RejectsWidthMismatch) {
    Rng rng(1);
    EXPECT_THROW(generate_edges(Matrix(2, 5), EdgeGeneratorParams::init(3, rng)), ShapeError);
}

TEST(Gcn, ZeroWeightIsResidualPassthrough) {
    Rng rng(4);
    const Matrix x = rng.normal_matrix(4, 3);
    const Graph g{x, Matrix(4, 4, 0.25)};
    EXPECT_EQ(gcn_embed(g, GcnParams::zero(3)), x);
}

TEST(Gcn, SingleNodeHandEvaluation) {
    EXPECT_EQ(gcn_embed(Graph{Matrix{{1, 2}}, Matrix{{1}}}, GcnParams{Matrix::identity(2)}), (Matrix{{2, 4}}));
}

TEST(Gcn, ReluKillsNegativePreActivation) {
    EXPECT_EQ(gcn_embed(Graph{Matrix{{-1, -1}}, Matrix{{1}}}, GcnParams{Matrix::identity(2)}), (Matrix{{-1, -1}}));
}
