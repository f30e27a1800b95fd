#pragma once

#include <cstddef>

#include "bivlgm/autodiff.hpp"
#include "bivlgm/matrix.hpp"
#include "bivlgm/rng.hpp"

namespace bivlgm {

/// Node features (N x D) with a row-stochastic soft adjacency (N x N).
struct Graph {
    Matrix nodes;
    Matrix adjacency;
};

/// The same graph living on a tape.
struct GraphVar {
    Var nodes;
    Var adjacency;
};

/// Query/key projections of the soft-edge generator. Edges are a single-head
/// attention map: row_softmax((X Wq)(X Wk)^T / sqrt(d)).
struct EdgeGeneratorParams {
    Matrix query;  // D x d
    Matrix key;    // D x d

    std::size_t input_width() const { return query.rows(); }
    std::size_t projection_width() const { return query.cols(); }

    /// Uniform fan-in init on [-1/sqrt(D), 1/sqrt(D)]. `d` of 0 means d = D.
    static EdgeGeneratorParams init(std::size_t dim, Rng& rng, std::size_t d = 0);

    struct Vars {
        Var query;
        Var key;
    };
    Vars bind(Tape& tape, bool trainable) const;

    template <typename F>
    void for_each(F&& f) {
        f("query", query);
        f("key", key);
    }
};

Var generate_edges(Var features, const EdgeGeneratorParams::Vars& params);
GraphVar build_graph(Var features, const EdgeGeneratorParams::Vars& params);

Matrix generate_edges(const Matrix& features, const EdgeGeneratorParams& params);
Graph build_graph(const Matrix& features, const EdgeGeneratorParams& params);

}  // namespace bivlgm
