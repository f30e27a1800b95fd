#pragma once

// Soft correspondence between two graphs: bilinear affinity, positivity
// normalization and Sinkhorn balancing (the AIS predictor).

#include <cstddef>
#include <vector>

#include "bivlgm/autodiff.hpp"
#include "bivlgm/gcn.hpp"
#include "bivlgm/graph.hpp"
#include "bivlgm/rng.hpp"

namespace bivlgm {

struct AffinityParams {
    Matrix bilinear;  // D x D

    static AffinityParams identity(std::size_t dim) { return {Matrix::identity(dim)}; }
    static AffinityParams init(std::size_t dim, Rng& rng);

    Var bind(Tape& tape, bool trainable) const {
        return trainable ? tape.variable(bilinear) : tape.constant(bilinear);
    }

    template <typename F>
    void for_each(F&& f) {
        f("bilinear", bilinear);
    }
};

struct SinkhornConfig {
    std::size_t max_iterations = 100;
    double tolerance = 1e-6;

    /// Fixed unrolled iterations for the tape.
    static SinkhornConfig differentiable() { return {10, 1e-6}; }
    static SinkhornConfig forward_only() { return {100, 1e-6}; }

    void validate() const;
};

/// Soft N x M matching. For square inputs rows and columns sum to one within
/// the Sinkhorn tolerance.
struct CorrespondenceMatrix {
    Matrix values;
    std::size_t iterations = 0;
    double deviation = 0.0;
    /// Doubly-stochastic deviation after each full row+column sweep.
    std::vector<double> deviation_trace;
};

/// S = A M B^T
Matrix affinity(const Matrix& a_nodes, const Matrix& b_nodes, const AffinityParams& params);
Var affinity(Var a_nodes, Var b_nodes, Var bilinear);

/// z-score over all entries (population variance, floored at 1e-12), then exp.
Matrix positive_normalize(const Matrix& s);
Var positive_normalize(Var s);

/// Alternating row/column normalization until the deviation falls below the
/// tolerance or the iteration budget is spent.
CorrespondenceMatrix sinkhorn(const Matrix& k, const SinkhornConfig& config);

/// Exactly `iterations` unrolled row/column sweeps on the tape.
Var sinkhorn(Var k, std::size_t iterations);

/// Forward-only AIS: sinkhorn(positive_normalize(affinity(gcn(a), gcn(b)))).
CorrespondenceMatrix ais(const Graph& graph_a, const Graph& graph_b, const GcnParams& gcn,
                         const AffinityParams& aff, const SinkhornConfig& config);

/// Differentiable AIS with config.max_iterations unrolled sweeps.
Var ais(const GraphVar& graph_a, const GraphVar& graph_b, Var gcn_weight, Var bilinear,
        const SinkhornConfig& config);

/// Index of the largest entry in each row.
std::vector<std::size_t> row_argmax(const Matrix& m);

}  // namespace bivlgm
