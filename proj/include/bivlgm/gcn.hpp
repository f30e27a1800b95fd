#pragma once

#include "bivlgm/autodiff.hpp"
#include "bivlgm/graph.hpp"
#include "bivlgm/rng.hpp"

namespace bivlgm {

/// One graph-convolution layer with an additive residual:
///   X' = ReLU(A X W) + X
struct GcnParams {
    Matrix weight;  // D x D

    static GcnParams init(std::size_t dim, Rng& rng);
    static GcnParams zero(std::size_t dim) { return {Matrix(dim, dim)}; }

    Var bind(Tape& tape, bool trainable) const {
        return trainable ? tape.variable(weight) : tape.constant(weight);
    }

    template <typename F>
    void for_each(F&& f) {
        f("weight", weight);
    }
};

Var gcn_embed(const GraphVar& graph, Var weight);
Matrix gcn_embed(const Graph& graph, const GcnParams& params);

}  // namespace bivlgm
