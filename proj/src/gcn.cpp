#include "bivlgm/gcn.hpp"

#include <cmath>

namespace bivlgm {

GcnParams GcnParams::init(std::size_t dim, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    return {rng.uniform_matrix(dim, dim, -bound, bound)};
}

Var gcn_embed(const GraphVar& graph, Var weight) {
    const Matrix& x = graph.nodes.value();
    const Matrix& a = graph.adjacency.value();
    const Matrix& w = weight.value();
    if (a.rows() != x.rows() || a.cols() != x.rows()) {
        throw ShapeError("gcn_embed: adjacency " + a.shape_string() + " does not match nodes " +
                         x.shape_string());
    }
    if (w.rows() != x.cols() || w.cols() != x.cols()) {
        throw ShapeError("gcn_embed: weight " + w.shape_string() + " does not match node width of " +
                         x.shape_string());
    }
    return add(relu(matmul(matmul(graph.adjacency, graph.nodes), weight)), graph.nodes);
}

Matrix gcn_embed(const Graph& graph, const GcnParams& params) {
    Tape tape;
    GraphVar g{tape.constant(graph.nodes), tape.constant(graph.adjacency)};
    return gcn_embed(g, params.bind(tape, false)).value();
}

}  // namespace bivlgm
