#include "bivlgm/graph.hpp"

#include <cmath>

namespace bivlgm {

EdgeGeneratorParams EdgeGeneratorParams::init(std::size_t dim, Rng& rng, std::size_t d) {
    if (d == 0) d = dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    EdgeGeneratorParams p{rng.uniform_matrix(dim, d, -bound, bound),
                          rng.uniform_matrix(dim, d, -bound, bound)};
    return p;
}

EdgeGeneratorParams::Vars EdgeGeneratorParams::bind(Tape& tape, bool trainable) const {
    if (trainable) return {tape.variable(query), tape.variable(key)};
    return {tape.constant(query), tape.constant(key)};
}

namespace {

void check_params(const Matrix& features, const Matrix& query, const Matrix& key) {
    if (!query.same_shape(key)) {
        throw ShapeError("edge generator: query " + query.shape_string() + " and key " +
                         key.shape_string() + " differ");
    }
    if (features.cols() != query.rows()) {
        throw ShapeError("edge generator: features " + features.shape_string() +
                         " incompatible with projection " + query.shape_string());
    }
}

}  // namespace

Var generate_edges(Var features, const EdgeGeneratorParams::Vars& params) {
    check_params(features.value(), params.query.value(), params.key.value());
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params.query.cols()));
    Var q = matmul(features, params.query);
    Var k = matmul(features, params.key);
    return row_softmax(scale(matmul(q, transpose(k)), inv_sqrt_d));
}

GraphVar build_graph(Var features, const EdgeGeneratorParams::Vars& params) {
    return {features, generate_edges(features, params)};
}

Matrix generate_edges(const Matrix& features, const EdgeGeneratorParams& params) {
    Tape tape;
    return generate_edges(tape.constant(features), params.bind(tape, false)).value();
}

Graph build_graph(const Matrix& features, const EdgeGeneratorParams& params) {
    return {features, generate_edges(features, params)};
}

}  // namespace bivlgm
